"""Restartable band-oriented ingest workflow.

Sources are planned into *bands*: contiguous south-to-north strips within a
zone (12 km of northing for the UTM theme, the same ground height in
latitude rows for the degree-grid theme).  One job covers one band.  Jobs
run through a fixed state machine::

    queued -> cutting -> cut -> loading -> loaded -> cleaned
    any active state -> failed -> queued        (up to 3 attempts)

Three roles drive it: cutters slice band sources into staged tile files,
loaders batch-insert a band into the store (and stamp the gazetteer),
cleanup deletes staged files.  Every transition is appended to a journal
and fsync'd before the next phase may depend on it, so a process killed at
any instant restarts from the last durable state.  Combined with the
store's idempotent batch insert, every band reaches the store exactly
once no matter how many times the run is interrupted.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .gazetteer import Gazetteer
from .grid import format_gridid
from .pyramid import (
    Cut,
    PyramidLevel,
    cut_key,
    cut_spin2,
    cut_usgs,
    encode_cut,
    load_source,
)
from .raster import Theme, UtmAnchor
from .records import ImageMetaRecord, OriginalMetadataRecord, TileRecord
from .store import TileStore
from . import tilecrypt

BAND_NORTHING_M = 12_000.0
BAND_LAT_DEG = 10.0 / 96.0      # ten cut rows
MAX_ATTEMPTS = 3

STATES = ("queued", "cutting", "cut", "loading", "loaded", "cleaned", "failed")
_ACTIVE_REVERT = {"cutting": "queued", "loading": "cut"}


class CrashSimulated(RuntimeError):
    """Raised by a fault hook to emulate the process dying mid-run."""


class PlanError(ValueError):
    pass


@dataclass
class Job:
    job_id: str
    theme: Theme
    zone: int | None
    band_index: int
    sources: list[dict]            # {path, sidecar_path, source_id, anchor...}
    state: str = "queued"
    attempts: int = 0
    history: list = field(default_factory=list)   # (state, ts) transitions

    @property
    def order_key(self) -> tuple:
        return (self.theme.value, self.zone or 0, self.band_index)


@dataclass
class Band:
    band_id: str
    theme: Theme
    zone: int | None
    band_index: int
    lo: float                      # northing meters or latitude degrees
    hi: float
    job_ids: list[str] = field(default_factory=list)


@dataclass
class LoadStats:
    bytes_cut: int = 0
    bytes_loaded: int = 0
    cut_seconds: float = 0.0
    load_seconds: float = 0.0
    jobs_cleaned: int = 0
    jobs_failed: int = 0

    @property
    def cut_mbps(self) -> float:
        return self.bytes_cut / 1e6 / self.cut_seconds if self.cut_seconds else 0.0

    @property
    def load_mbps(self) -> float:
        return self.bytes_loaded / 1e6 / self.load_seconds if self.load_seconds else 0.0


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

def _band_of(meta: dict) -> tuple[Theme, int | None, int, float, float]:
    theme = Theme(meta["theme"])
    anchor = meta["anchor"]
    if theme is Theme.USGS:
        zone = int(anchor["zone"])
        if not 1 <= zone <= 60:
            raise PlanError(f"zone {zone} outside 1..60")
        northing = float(anchor["northing"])
        if northing < 0:
            raise PlanError(f"northing {northing} south of the equator")
        idx = int(math.floor(northing / BAND_NORTHING_M))
        return theme, zone, idx, idx * BAND_NORTHING_M, (idx + 1) * BAND_NORTHING_M
    lat = float(anchor["lat"])
    if not -90.0 <= lat <= 90.0:
        raise PlanError(f"latitude {lat} out of range")
    idx = int(math.floor((lat + 90.0) / BAND_LAT_DEG))
    return theme, None, idx, idx * BAND_LAT_DEG - 90.0, (idx + 1) * BAND_LAT_DEG - 90.0


def plan(manifest: list[dict] | str | Path, run_dir: str | Path) -> dict:
    """Assign each manifest source to a band and persist the plan.

    ``manifest`` is a list of {path, sidecar_path} or a path to a JSON
    file holding one.  Sources whose sidecars place them outside every
    zone are excluded and reported, not fatal.  Re-planning an identical
    manifest writes an identical plan.
    """
    if isinstance(manifest, (str, Path)):
        manifest = json.loads(Path(manifest).read_text())
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    bands: dict[tuple, Band] = {}
    jobs: dict[tuple, list[dict]] = {}
    excluded: list[dict] = []
    for entry in sorted(manifest, key=lambda e: str(e["sidecar_path"])):
        sidecar = json.loads(Path(entry["sidecar_path"]).read_text())
        try:
            theme, zone, idx, lo, hi = _band_of(sidecar)
        except PlanError as exc:
            excluded.append({"entry": entry, "reason": str(exc)})
            continue
        key = (theme.value, zone or 0, idx)
        if key not in bands:
            bid = (f"u{zone:02d}-b{idx:05d}" if theme is Theme.USGS else f"s-b{idx:05d}")
            bands[key] = Band(band_id=bid, theme=theme, zone=zone, band_index=idx,
                              lo=lo, hi=hi)
        jobs.setdefault(key, []).append(
            {"path": str(entry["path"]), "sidecar_path": str(entry["sidecar_path"]),
             "source_id": sidecar["source_id"]}
        )
        bands[key].job_ids = [bands[key].band_id]

    plan_doc = {
        "bands": [
            {
                "band_id": b.band_id, "theme": b.theme.value, "zone": b.zone,
                "band_index": b.band_index, "lo": b.lo, "hi": b.hi,
                "sources": jobs[key],
            }
            for key, b in sorted(bands.items())
        ],
        "excluded": excluded,
    }
    (run_dir / "plan.json").write_text(json.dumps(plan_doc, indent=2, sort_keys=True))
    return plan_doc


# ---------------------------------------------------------------------------
# journal
# ---------------------------------------------------------------------------

class Journal:
    """Append-only transition log; fsync per line."""

    def __init__(self, path: Path, fault=None):
        self.path = path
        self.fault = fault or (lambda point: None)
        self._lock = threading.Lock()

    def append(self, job_id: str, state: str, attempts: int) -> None:
        line = json.dumps(
            {"job": job_id, "state": state, "attempts": attempts,
             "ts": time.time()},
            sort_keys=True,
        )
        with self._lock:
            self.fault("journal:before")
            with open(self.path, "a") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self.fault("journal:after")

    def replay(self) -> dict[str, tuple[str, int]]:
        """Last durable (state, attempts) per job."""
        out: dict[str, tuple[str, int]] = {}
        if not self.path.exists():
            return out
        for line in self.path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break  # torn tail
            out[rec["job"]] = (rec["state"], rec["attempts"])
        return out


# ---------------------------------------------------------------------------
# workflow
# ---------------------------------------------------------------------------

class Workflow:
    """One ingest run over a planned directory, resumable after a crash."""

    def __init__(self, run_dir: str | Path, store: TileStore,
                 gazetteer: Gazetteer | None = None, fault=None):
        self.run_dir = Path(run_dir)
        self.store = store
        self.gazetteer = gazetteer
        self.fault = fault or (lambda point: None)
        self.journal = Journal(self.run_dir / "journal.log", fault=self.fault)
        self.staging = self.run_dir / "staging"
        self.staging.mkdir(parents=True, exist_ok=True)

        doc = json.loads((self.run_dir / "plan.json").read_text())
        self.jobs: dict[str, Job] = {}
        for band in doc["bands"]:
            theme = Theme(band["theme"])
            job = Job(
                job_id=band["band_id"], theme=theme, zone=band["zone"],
                band_index=band["band_index"], sources=band["sources"],
            )
            self.jobs[job.job_id] = job
        self._recover()

        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self._crashed: CrashSimulated | None = None
        self.stats = LoadStats()

    def _recover(self) -> None:
        for job_id, (state, attempts) in self.journal.replay().items():
            job = self.jobs.get(job_id)
            if job is None:
                continue
            job.attempts = attempts
            job.state = _ACTIVE_REVERT.get(state, state)
            if job.state == "failed" and job.attempts < MAX_ATTEMPTS:
                job.state = "queued"

    # -- state transitions ----------------------------------------------------

    def _transition(self, job: Job, state: str) -> None:
        self.journal.append(job.job_id, state, job.attempts)
        with self._lock:
            job.state = state
            job.history.append((state, time.time()))
            self._wake.notify_all()

    def _fail(self, job: Job) -> None:
        job.attempts += 1
        self.journal.append(job.job_id, "failed", job.attempts)
        with self._lock:
            job.state = "failed" if job.attempts >= MAX_ATTEMPTS else "queued"
            self._wake.notify_all()

    # -- cutter role ------------------------------------------------------------

    def _stage_dir(self, job: Job) -> Path:
        return self.staging / job.job_id

    def _cut_job(self, job: Job) -> None:
        sources = [load_source(s["path"], s["sidecar_path"]) for s in job.sources]
        if job.theme is Theme.USGS:
            # a band is exactly ten cut rows, so every cut belongs to one band
            lo, hi = job.band_index * BAND_NORTHING_M, (job.band_index + 1) * BAND_NORTHING_M
            cuts = [
                c for c in cut_usgs(sources, job.zone)
                if lo <= c.grid_id.northing_index * 1200.0 < hi
            ]
        else:
            lo = job.band_index * BAND_LAT_DEG - 90.0
            cuts = cut_spin2(sources, lat_band=(lo, lo + BAND_LAT_DEG))
        out = self._stage_dir(job)
        out.mkdir(parents=True, exist_ok=True)
        staged_meta = []
        for cut in cuts:
            gid = format_gridid(cut.grid_id)
            tiles_meta = []
            for t in encode_cut(cut):
                fname = f"{gid}_{t.level.value}_{t.sub_row}_{t.sub_col}.jpg"
                (out / fname).write_bytes(t.blob)
                self.stats.bytes_cut += len(t.blob)
                tiles_meta.append({
                    "level": t.level.value, "row": t.sub_row, "col": t.sub_col,
                    "file": fname, "encrypted": t.encrypted, "key_id": t.key_id,
                })
            meta = {
                "gridid": gid, "theme": cut.theme.value,
                "acquired": cut.acquired.isoformat(), "tiles": tiles_meta,
                "sources": sorted(s["source_id"] for s in job.sources),
            }
            if cut.theme is Theme.SPIN2:
                key = cut_key(cut)
                meta["key_hex"] = key.hex()
                meta["key_id"] = tilecrypt.key_id(key)
            path = out / f"{gid}_meta.json"
            path.write_text(json.dumps(meta, sort_keys=True))
            staged_meta.append(meta)
            self.fault("stage:cut")
        (out / "MANIFEST.json").write_text(
            json.dumps({"cuts": [m["gridid"] for m in staged_meta]}, sort_keys=True)
        )

    # -- loader role --------------------------------------------------------------

    def _load_job(self, job: Job) -> None:
        from .grid import parse_gridid

        out = self._stage_dir(job)
        manifest = json.loads((out / "MANIFEST.json").read_text())
        tiles: list[TileRecord] = []
        metas: list[ImageMetaRecord] = []
        registrations = []
        for gid in manifest["cuts"]:
            meta = json.loads((out / f"{gid}_meta.json").read_text())
            grid = parse_gridid(gid)
            theme = Theme(meta["theme"])
            acquired = dt.date.fromisoformat(meta["acquired"])
            for t in meta["tiles"]:
                blob = (out / t["file"]).read_bytes()
                tiles.append(TileRecord(
                    theme=theme, grid=grid, level=PyramidLevel(t["level"]),
                    sub_row=t["row"], sub_col=t["col"], blob=blob,
                    acquired=acquired, encrypted=t["encrypted"], key_id=t["key_id"],
                ))
                self.stats.bytes_loaded += len(blob)
            place = (
                self.gazetteer.nearest_place(theme, grid) if self.gazetteer else None
            )
            metas.append(ImageMetaRecord(
                theme=theme, grid=grid, acquired=acquired,
                source="+".join(meta["sources"]),
                key_id=meta.get("key_id"), key_hex=meta.get("key_hex"),
                center_place_name=place,
            ))
            registrations.append((theme, grid, acquired))

        originals = []
        for s in sorted(job.sources, key=lambda s: s["source_id"]):
            sidecar = json.loads(Path(s["sidecar_path"]).read_text())
            originals.append(OriginalMetadataRecord(
                source_id=s["source_id"], img_source=job.theme,
                image_type="JPEG", instrument=sidecar.get("instrument", ""),
                acquired_date=dt.date.fromisoformat(sidecar["acquired_date"]),
                resolution_m=float(sidecar["pixel_scale_m"]),
                width=int(sidecar["width"]), height=int(sidecar["height"]),
                attributes={k: v for k, v in sidecar.items()
                            if k not in ("anchor",)},
            ))

        self.fault("store:before-put")
        self.store.put_tiles(tiles, metas, originals)
        self.fault("store:after-put")
        if self.gazetteer is not None:
            for theme, grid, acquired in registrations:
                self.gazetteer.register_image(theme, grid, acquired)
        self.fault("store:after-register")

    def _cleanup_job(self, job: Job) -> None:
        out = self._stage_dir(job)
        if out.exists():
            for p in sorted(out.iterdir()):
                p.unlink()
            out.rmdir()
        self.fault("cleanup:done")

    # -- scheduling -----------------------------------------------------------------

    def _ordered_jobs(self) -> list[Job]:
        return sorted(self.jobs.values(), key=lambda j: j.order_key)

    def _claim(self, want_state: str, mark: str, in_order: bool) -> Job | None:
        """Take the next job in band order whose state is ``want_state``."""
        with self._lock:
            if self._crashed:
                return None
            for job in self._ordered_jobs():
                if job.state == want_state:
                    break
                if in_order and job.state not in ("cleaned", "failed") and (
                    STATES.index(job.state) < STATES.index(want_state)
                ):
                    return None  # an earlier band is not there yet: wait
            else:
                return None
            job.state = mark  # claimed; the journal line lands outside the lock
        if mark != want_state:
            self.journal.append(job.job_id, mark, job.attempts)
        with self._lock:
            job.history.append((mark, time.time()))
        return job

    def _all_terminal(self) -> bool:
        return all(j.state in ("cleaned", "failed") for j in self.jobs.values())

    def _worker(self, role: str, want: str, mark: str, done: str, fn, in_order: bool):
        while True:
            with self._lock:
                if self._crashed or self._all_terminal():
                    self._wake.notify_all()
                    return
            job = self._claim(want, mark, in_order)
            if job is None:
                with self._lock:
                    if self._crashed or self._all_terminal():
                        self._wake.notify_all()
                        return
                    self._wake.wait(timeout=0.05)
                continue
            t0 = time.time()
            try:
                fn(job)
            except CrashSimulated as exc:
                with self._lock:
                    self._crashed = exc
                    self._wake.notify_all()
                return
            except Exception:
                time.sleep(0.01 * (2 ** job.attempts))
                try:
                    self._fail(job)
                except CrashSimulated as exc:
                    with self._lock:
                        self._crashed = exc
                        self._wake.notify_all()
                    return
                continue
            elapsed = time.time() - t0
            if role == "cutter":
                self.stats.cut_seconds += elapsed
            elif role == "loader":
                self.stats.load_seconds += elapsed
            try:
                self._transition(job, done)
            except CrashSimulated as exc:
                with self._lock:
                    self._crashed = exc
                    self._wake.notify_all()
                return

    def run(self, cutters: int = 1, loaders: int = 1) -> LoadStats:
        """Drive every job to cleaned (or failed); resumable after a crash."""
        strict = loaders == 1
        threads = []
        for i in range(cutters):
            threads.append(threading.Thread(
                target=self._worker,
                args=("cutter", "queued", "cutting", "cut", self._cut_job, False),
                name=f"cutter-{i}", daemon=True))
        for i in range(loaders):
            threads.append(threading.Thread(
                target=self._worker,
                args=("loader", "cut", "loading", "loaded", self._load_job, strict),
                name=f"loader-{i}", daemon=True))
        threads.append(threading.Thread(
            target=self._worker,
            args=("cleanup", "loaded", "loaded", "cleaned", self._cleanup_job, False),
            name="cleanup", daemon=True))
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if self._crashed:
            raise self._crashed
        self.stats.jobs_cleaned = sum(1 for j in self.jobs.values() if j.state == "cleaned")
        self.stats.jobs_failed = sum(1 for j in self.jobs.values() if j.state == "failed")
        return self.stats

    def progress(self) -> dict:
        """Per-band state counts plus informational throughput."""
        with self._lock:
            counts: dict[str, int] = {s: 0 for s in STATES}
            per_band = {}
            for job in self._ordered_jobs():
                counts[job.state] += 1
                per_band[job.job_id] = job.state
            return {
                "states": counts,
                "bands": per_band,
                "total_jobs": len(self.jobs),
                "cut_mbps": round(self.stats.cut_mbps, 3),
                "load_mbps": round(self.stats.load_mbps, 3),
            }


def progress_from_dir(run_dir: str | Path) -> dict:
    """Observe a run directory without owning the workflow (admin endpoint)."""
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "plan.json").read_text())
    states = {band["band_id"]: "queued" for band in doc["bands"]}
    journal = Journal(run_dir / "journal.log")
    for job_id, (state, attempts) in journal.replay().items():
        if job_id not in states:
            continue
        state = _ACTIVE_REVERT.get(state, state)
        if state == "failed" and attempts < MAX_ATTEMPTS:
            state = "queued"
        states[job_id] = state
    counts: dict[str, int] = {s: 0 for s in STATES}
    for s in states.values():
        counts[s] += 1
    return {"states": counts, "bands": states, "total_jobs": len(states)}
