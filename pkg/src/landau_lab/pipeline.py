"""Run directories, manifests and the staged pipeline.

A run lives in ``<root>/<run_id>/`` where ``run_id`` hashes the canonical
config JSON together with the package version.  Stages write into their own
subdirectory and never touch another stage's files:

    prep/      initial.bin (+ .json), ledger.json
    simulate/  snap_XXXXXX.bin (+ .json), index.json, steps.csv, events.json
    diagnose/  diagnostics.csv
    degiorgi/  report.json
    singular/  report.json, intervals_q<q>.csv

``manifest.json`` records the sha256 of every output; a stage whose outputs
are all present with matching checksums is skipped on resume.  Wall-clock
times go into the manifest only, so diagnostics are reproducible byte for
byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time as _time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import degiorgi as dg
from . import functionals as fn
from . import singular as sg
from .evolution import RunConfig, compute_record, simulate
from .grid import DistributionField, read_snapshot, write_snapshot
from .initial_data import make_initial, prepare
from .series import DiagnosticsSeries, format_value

__all__ = [
    "STAGES",
    "StageFailure",
    "RunManifest",
    "run_id_for",
    "output_root",
    "run_pipeline",
    "load_manifest",
    "load_series",
    "export_plot_data",
    "verify_run",
    "singular_stage",
]

STAGES = ("prep", "simulate", "diagnose", "degiorgi", "detect-singular")


class StageFailure(RuntimeError):
    def __init__(self, stage: str, last_good: str | None, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}; last good artifact: {last_good or 'none'}")
        self.stage = stage
        self.last_good = last_good
        self.cause = cause


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def run_id_for(config: RunConfig) -> str:
    payload = _canonical({"config": config.to_dict(), "version": __version__})
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def output_root(root=None) -> Path:
    return Path(root if root is not None else os.environ.get("LANDAU_LAB_OUT", "runs"))


@dataclass
class RunManifest:
    run_id: str
    version: str
    config: dict
    seed: int
    stages: dict = field(default_factory=dict)
    snapshots: dict = field(default_factory=dict)
    diagnostics: str | None = None
    created: float = 0.0
    wall_seconds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls.from_dict(json.loads(text))

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)

    def outputs(self, stage: str) -> dict:
        return self.stages.get(stage, {}).get("outputs", {})

    def stage_intact(self, directory: Path, stage: str) -> bool:
        info = self.stages.get(stage)
        if not info or info.get("status") != "done":
            return False
        return all((directory / rel).is_file() and _sha256(directory / rel) == digest
                   for rel, digest in info["outputs"].items())

    def check_files(self, directory: Path) -> list[str]:
        """Return the outputs whose file is missing or whose checksum differs."""
        bad = []
        for stage, info in self.stages.items():
            for rel, digest in info.get("outputs", {}).items():
                p = directory / rel
                if not p.is_file() or _sha256(p) != digest:
                    bad.append(rel)
        return bad


def load_manifest(path) -> tuple[RunManifest, Path]:
    """Accept a manifest file or a run directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return RunManifest.from_json(path.read_text()), path.parent


def _save(manifest: RunManifest, directory: Path) -> None:
    (directory / "manifest.json").write_text(manifest.to_json())


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# Stages


def _stage_prep(config: RunConfig, directory: Path, manifest: RunManifest) -> list[Path]:
    base = make_initial(config.initial, config.grid)
    n = config.mollification_index
    out = directory / "prep"
    if n is None:
        f0, ledger = base, {"n": None, "entries": [], "all_hold": True}
    else:
        prepared = prepare(base, n)
        f0, ledger = prepared.floored, prepared.ledger_dict()
    ledger["mass"] = fn.mass(f0)
    ledger["H_plus_1"] = fn.truncated_entropy(f0, 1.0)
    snap = write_snapshot(out / "initial.bin", f0, manifest.run_id)
    return [snap, snap.with_suffix(".json"), _write_json(out / "ledger.json", ledger)]


def _stage_simulate(config: RunConfig, directory: Path, manifest: RunManifest) -> list[Path]:
    f0 = read_snapshot(directory / "prep" / "initial.bin")
    result = simulate(config, f0)
    out = directory / "simulate"
    written, index = [], []
    for rec, snap in zip(result.records, result.snapshots):
        p = write_snapshot(out / f"snap_{rec.step:06d}.bin", snap, manifest.run_id)
        written += [p, p.with_suffix(".json")]
        index.append({
            "step": rec.step,
            "time": rec.time,
            "file": str(p.relative_to(directory)),
            "overflow_integral": {format_value(k): v for k, v in rec.overflow_integral.items()},
            "clipped_total": rec.clipped_total,
        })
    manifest.snapshots = {format_value(e["time"]): e["file"] for e in index}
    written.append(_write_json(out / "index.json", index))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "time", "dt", "bound", "mass", "entropy", "clipped"])
    for s in result.steps:
        w.writerow([s.step] + [format_value(x) for x in (s.time, s.dt, s.bound, s.mass, s.entropy, s.clipped)])
    (out / "steps.csv").write_text(buf.getvalue())
    written.append(out / "steps.csv")
    written.append(_write_json(out / "events.json", result.events))
    return written


def _diagnostics_from_snapshots(config: RunConfig, directory: Path) -> DiagnosticsSeries:
    index = json.loads((directory / "simulate" / "index.json").read_text())
    records = []
    for e in index:
        f = read_snapshot(directory / e["file"])
        integrals = {float(k): v for k, v in e["overflow_integral"].items()}
        records.append(compute_record(f, config, e["step"], integrals, e["clipped_total"]))
    return DiagnosticsSeries.from_records(records)


def _stage_diagnose(config: RunConfig, directory: Path, manifest: RunManifest) -> list[Path]:
    series = _diagnostics_from_snapshots(config, directory)
    path = series.write_csv(directory / "diagnose" / "diagnostics.csv")
    manifest.diagnostics = str(path.relative_to(directory))
    return [path]


def load_series(directory: Path) -> DiagnosticsSeries:
    return DiagnosticsSeries.read_csv(Path(directory) / "diagnose" / "diagnostics.csv")


def _stage_degiorgi(config: RunConfig, directory: Path, manifest: RunManifest) -> list[Path]:
    series = load_series(directory)
    report = {}
    for q in config.qs:
        entry = dg.degiorgi_report(series, q, max(config.degiorgi_levels, 1))
        if dg.Q_IMPROVED[0] < q < dg.Q_IMPROVED[1]:
            entry["improved"] = dg.improved_dg_criterion(series, q, dg.eta1_upper(q), tuple(config.eps_exponents))
        report[repr(float(q))] = entry
    return [_write_json(directory / "degiorgi" / "report.json", report)]


def _budget(directory: Path) -> float:
    ledger = json.loads((directory / "prep" / "ledger.json").read_text())
    return ledger["H_plus_1"] + 4.0 * ledger["mass"]


def singular_stage(series: DiagnosticsSeries, q: float, eta1: float, j_range, budget: float) -> sg.SingularReport:
    source = sg.LevelDissipation.from_series(series, q)
    flags = sg.flag_candidates(source, q, eta1, tuple(j_range))
    return sg.build_report(flags, q, eta1, budget=budget)


def _stage_singular(config: RunConfig, directory: Path, manifest: RunManifest) -> list[Path]:
    series = load_series(directory)
    out = directory / "singular"
    written, report = [], {}
    budget = _budget(directory)
    for q in config.qs:
        if not dg.Q_IMPROVED[0] < q < dg.Q_IMPROVED[1]:
            report[repr(float(q))] = {"skipped": "q outside (4/3, 2)"}
            continue
        rep = singular_stage(series, q, dg.eta1_upper(q), config.eps_exponents, budget)
        report[repr(float(q))] = rep.to_dict()
        p = out / f"intervals_q{repr(float(q))}.csv"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(rep.intervals_csv())
        written.append(p)
    written.append(_write_json(out / "report.json", report))
    return written


_RUNNERS = {
    "prep": _stage_prep,
    "simulate": _stage_simulate,
    "diagnose": _stage_diagnose,
    "degiorgi": _stage_degiorgi,
    "detect-singular": _stage_singular,
}


def _new_manifest(config: RunConfig) -> RunManifest:
    return RunManifest(
        run_id=run_id_for(config),
        version=__version__,
        config=config.to_dict(),
        seed=config.seed,
        created=_time.time(),
    )


def run_pipeline(config, root=None, until: str = "detect-singular", force: bool = False) -> tuple[RunManifest, Path]:
    """Run the stages up to ``until``, resuming from any intact earlier stage.

    ``config`` is a RunConfig, a dict or a path to a JSON config.  A failing
    stage is recorded in the manifest and raised as ``StageFailure``; the
    outputs of earlier stages stay in place.
    """
    if isinstance(config, (str, Path)):
        config = RunConfig.load(config)
    elif isinstance(config, dict):
        config = RunConfig.from_dict(config)
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}; stages: {', '.join(STAGES)}")
    run_id = run_id_for(config)
    directory = output_root(root) / run_id
    directory.mkdir(parents=True, exist_ok=True)
    mpath = directory / "manifest.json"
    manifest = RunManifest.from_json(mpath.read_text()) if mpath.is_file() else _new_manifest(config)
    last_good = None
    rerun = force
    for stage in STAGES[: STAGES.index(until) + 1]:
        if not rerun and manifest.stage_intact(directory, stage):
            last_good = stage
            continue
        started = _time.perf_counter()
        try:
            written = _RUNNERS[stage](config, directory, manifest)
        except Exception as exc:
            manifest.stages[stage] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}", "outputs": {}}
            _save(manifest, directory)
            raise StageFailure(stage, last_good, exc) from exc
        manifest.stages[stage] = {
            "status": "done",
            "outputs": {str(Path(p).relative_to(directory)): _sha256(p) for p in written},
        }
        manifest.wall_seconds[stage] = _time.perf_counter() - started
        _save(manifest, directory)
        last_good = stage
        rerun = True  # later stages depend on what was just rewritten
    return manifest, directory


def verify_run(manifest_path) -> dict:
    """Replay prep, simulate and diagnose in a scratch root and byte-compare diagnostics."""
    manifest, directory = load_manifest(manifest_path)
    recorded = directory / (manifest.diagnostics or "diagnose/diagnostics.csv")
    if not recorded.is_file():
        raise FileNotFoundError(f"{recorded}: run has no diagnostics to verify")
    with tempfile.TemporaryDirectory() as scratch:
        _, replay_dir = run_pipeline(manifest.run_config(), scratch, until="diagnose")
        replay = (replay_dir / "diagnose" / "diagnostics.csv").read_bytes()
    original = recorded.read_bytes()
    return {
        "run_id": manifest.run_id,
        "identical": original == replay,
        "recorded_sha256": hashlib.sha256(original).hexdigest(),
        "replay_sha256": hashlib.sha256(replay).hexdigest(),
        "checksum_mismatches": manifest.check_files(directory),
    }


# Export


def _quantities(series: DiagnosticsSeries, qs) -> list[str]:
    keys = [c for c in series.columns if c not in ("time", "step")]
    return keys + [f"Ak:{repr(float(q))}" for q in qs]


def export_plot_data(manifest_path, quantity: str) -> str:
    """Two-column CSV ``time,<quantity>``.

    ``Ak:<q>`` lists the De Giorgi energies with ``A_k`` placed at the start
    of its window ``t^k`` (run time).
    """
    manifest, directory = load_manifest(manifest_path)
    series = load_series(directory)
    config = manifest.run_config()
    if quantity.startswith("Ak:"):
        try:
            q = float(quantity[3:])
        except ValueError:
            q = math.nan
        if not any(abs(q - qq) <= 1e-9 * qq for qq in config.qs):
            raise KeyError(f"unknown quantity {quantity!r}; available: {', '.join(_quantities(series, config.qs))}")
        K = max(config.degiorgi_levels, 1)
        scale = float(series.times[-1])
        times = [dg.t_level(k) * scale for k in range(K + 1)]
        values = dg.energies(series, q, K).tolist()
    else:
        if quantity in ("time", "step") or not series.has(quantity):
            raise KeyError(f"unknown quantity {quantity!r}; available: {', '.join(_quantities(series, config.qs))}")
        times, values = series.times.tolist(), series.column(quantity).tolist()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", quantity])
    for t, v in zip(times, values):
        w.writerow([format_value(t), format_value(v)])
    return buf.getvalue()


def first_snapshot(directory: Path) -> DistributionField:
    return read_snapshot(Path(directory) / "prep" / "initial.bin")
