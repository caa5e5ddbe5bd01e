import csv
import io
import json
import time
import warnings

import numpy as np
import pytest

from landau_lab import cli
from landau_lab.evolution import RunConfig
from landau_lab.grid import DistributionField, GridSpec, read_snapshot, write_snapshot
from landau_lab.operator import KernelSpec, ResolutionWarning
from landau_lab.pipeline import (
    STAGES,
    RunManifest,
    StageFailure,
    export_plot_data,
    load_manifest,
    run_pipeline,
    verify_run,
)

from conftest import gaussian


def minimal_config(**kw):
    base = dict(
        grid=GridSpec(8.0, 16),
        kernel=KernelSpec(4),
        horizon=0.05,
        qs=(1.5, 1.6),
        initial={"type": "maxwellian", "mass": 30.0},
        degiorgi_levels=3,
        eps_exponents=(0, 3),
        dt=0.005,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        manifest, directory = run_pipeline(minimal_config(), root)
    return manifest, directory, time.perf_counter() - start


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("LANDAU_LAB_OUT", str(tmp_path / "runs"))
    return tmp_path / "runs"


def csv_rows(text):
    return list(csv.reader(io.StringIO(text)))


def test_minimal_run_completes_quickly_with_every_stage(finished):
    manifest, directory, seconds = finished
    assert seconds < 60.0
    assert all(manifest.stages[s]["status"] == "done" for s in STAGES)
    for rel in ("prep/initial.bin", "prep/ledger.json", "simulate/index.json", "diagnose/diagnostics.csv",
                "degiorgi/report.json", "singular/report.json", "singular/intervals_q1.6.csv"):
        assert (directory / rel).is_file(), rel
    assert manifest.check_files(directory) == []
    assert manifest.snapshots


def test_manifest_round_trip(finished):
    manifest, directory, _ = finished
    assert RunManifest.from_json(manifest.to_json()) == manifest
    loaded, where = load_manifest(directory)
    assert loaded == manifest and where == directory
    assert loaded.run_config() == minimal_config()


def test_resume_skips_intact_stages(finished):
    manifest, directory, _ = finished
    before = (directory / "diagnose" / "diagnostics.csv").stat().st_mtime_ns
    again, _ = run_pipeline(minimal_config(), directory.parent)
    assert (directory / "diagnose" / "diagnostics.csv").stat().st_mtime_ns == before
    assert again.stages == manifest.stages


def test_verify_is_byte_identical(finished):
    _, directory, _ = finished
    result = verify_run(directory / "manifest.json")
    assert result["identical"] and result["recorded_sha256"] == result["replay_sha256"]
    assert result["checksum_mismatches"] == []


def test_tampered_output_is_reported(tmp_path):
    manifest, directory = run_pipeline(minimal_config(horizon=0.01), tmp_path, until="diagnose")
    path = directory / "diagnose" / "diagnostics.csv"
    path.write_text(path.read_text().replace("0", "1", 1))
    result = verify_run(directory)
    assert not result["identical"]
    assert result["checksum_mismatches"] == ["diagnose/diagnostics.csv"]


def test_failing_stage_keeps_earlier_outputs(tmp_path, monkeypatch):
    import landau_lab.pipeline as pipeline

    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setitem(pipeline._RUNNERS, "diagnose", broken)
    with pytest.raises(StageFailure) as exc:
        run_pipeline(minimal_config(horizon=0.01), tmp_path)
    assert exc.value.stage == "diagnose" and exc.value.last_good == "simulate"
    manifest, directory = load_manifest(next(tmp_path.iterdir()))
    assert manifest.stages["diagnose"]["status"] == "failed"
    assert manifest.stage_intact(directory, "simulate")


def test_kappa_below_one_rejected_by_cli(tmp_path, capsys):
    cfg = minimal_config().to_dict()
    cfg["kappas"] = [0.5, 2.0]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["simulate", "--config", str(path)]) == 2
    assert "kappa = 0.5 < 1" in capsys.readouterr().err


def test_export_entropy_nonincreasing(finished):
    _, directory, _ = finished
    rows = csv_rows(export_plot_data(directory, "entropy"))
    assert rows[0] == ["time", "entropy"]
    H = np.array([float(r[1]) for r in rows[1:]])
    assert len(H) == 11 and np.all(np.diff(H) <= 1e-8 * abs(H[0]))


def test_export_unknown_quantity_lists_keys(finished):
    _, directory, _ = finished
    with pytest.raises(KeyError) as exc:
        export_plot_data(directory, "foo")
    assert "available:" in exc.value.args[0] and "entropy" in exc.value.args[0] and "Ak:1.5" in exc.value.args[0]


def test_export_levels_and_energies(finished):
    _, directory, _ = finished
    rows = csv_rows(export_plot_data(directory, "levelset:1.5:2"))
    assert rows[0] == ["time", "levelset:1.5:2"]
    ak = csv_rows(export_plot_data(directory, "Ak:1.5"))
    assert len(ak) == 1 + 4
    A = [float(r[1]) for r in ak[1:]]
    assert all(a >= b for a, b in zip(A, A[1:]))


def test_h_plus_one_is_zero_for_a_run_below_one(tmp_path):
    # mass 1 Maxwellian peaks at (2 pi)^{-3/2} < 1
    cfg = minimal_config(initial={"type": "maxwellian", "mass": 1.0}, horizon=0.02)
    _, directory = run_pipeline(cfg, tmp_path, until="diagnose")
    rows = csv_rows(export_plot_data(directory, "H_plus:1"))
    assert all(float(r[1]) == 0.0 for r in rows[1:])


def test_cli_pipeline_verify_degiorgi_and_singular(out_root, capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(minimal_config(horizon=0.02).to_dict()))
    assert cli.main(["pipeline", "--config", str(cfg)]) == 0
    manifest = capsys.readouterr().out.strip().splitlines()[-1]
    assert manifest.startswith(str(out_root))
    assert cli.main(["pipeline", "--run", manifest, "--verify"]) == 0
    assert json.loads(capsys.readouterr().out)["identical"] is True
    assert cli.main(["degiorgi", "--run", manifest, "--q", "1.5"]) == 0
    report = json.loads(capsys.readouterr().out)["1.5"]
    assert len(report["sequence"]["energies"]) == 4 and "improved" in report
    intervals = tmp_path / "iv.csv"
    assert cli.main(["detect-singular", "--run", manifest, "--q", "1.6", "--eta1", "1e-3",
                     "--intervals", str(intervals)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["disjoint"] and rep["covers"] and intervals.is_file()
    assert cli.main(["export", "--run", manifest, "nope"]) == 2
    assert cli.main(["report", "--run", manifest]) == 0
    pngs = capsys.readouterr().out.split()
    assert pngs and all(p.endswith(".png") for p in pngs)


def test_cli_seed_override_gives_new_run(out_root, capsys, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(minimal_config(horizon=0.01).to_dict()))
    assert cli.main(["prep", "--config", str(cfg)]) == 0
    a = capsys.readouterr().out.strip()
    assert cli.main(["prep", "--config", str(cfg), "--seed", "5"]) == 0
    b = capsys.readouterr().out.strip()
    assert a != b
    assert load_manifest(b)[0].seed == 5


def test_cli_diagnose_snapshot(tmp_path, capsys):
    g = GridSpec(6.0, 16)
    snap = write_snapshot(tmp_path / "s.bin", DistributionField(g, gaussian(g, 30.0)))
    assert cli.main(["diagnose", "--snapshot", str(snap), "--q", "1.5,1.6", "--kappa", "1,2,4"]) == 0
    out = json.loads(capsys.readouterr().out)
    for key in ("mass", "energy", "entropy", "fisher", "H_plus:2", "levelset:1.6:4", "mu_mass:1.5:1",
                "holder_slack:1.5:2"):
        assert key in out
    assert out["mass"] == pytest.approx(30.0, rel=1e-6)
    assert "D_psi" not in out
    assert min(v for k, v in out.items() if k.startswith("holder_slack")) >= -1e-8


def test_cli_prep_input(tmp_path, capsys):
    g = GridSpec(6.0, 16)
    snap = write_snapshot(tmp_path / "s.bin", DistributionField(g, gaussian(g, 5.0)))
    assert cli.main(["prep", "--input", str(snap), "--n", "3", "-o", str(tmp_path / "p.bin")]) == 0
    ledger = json.loads(capsys.readouterr().out)
    assert ledger["n"] == 3 and ledger["all_hold"]
    assert read_snapshot(tmp_path / "p.bin").grid == g


def test_cli_verify_lemmas_and_scale_check(finished, capsys):
    _, directory, _ = finished
    assert cli.main(["verify-lemmas", "--samples", "20000", "--seed", "3", "--run", str(directory)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert "scalar_lemmas" in out and set(out["holder_chain"]) == {"1.4", "1.5", "1.6"}
    assert cli.main(["scale-check", "--run", str(directory), "--levels", "1", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["1"]["mass_rel_error"] < 1e-12
