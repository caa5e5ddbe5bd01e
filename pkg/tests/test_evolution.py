import json
import math

import numpy as np
import pytest

import landau_lab.evolution as evolution
from landau_lab.evolution import ConfigError, RunConfig, SimulationAborted, StepRejected, stability_bound, step
from landau_lab.grid import GridSpec
from landau_lab.initial_data import prepare
from landau_lab.operator import KernelSpec, RhsForm

from conftest import field_of, gaussian


def config(grid, kernel=None, **kw):
    base = dict(grid=grid, kernel=kernel or KernelSpec(4), horizon=0.1, dpsi=False, degiorgi_levels=2, eps_exponents=(0, 2))
    base.update(kw)
    return RunConfig(**base)


def bimodal(g, floor=1e-3):
    return gaussian(g, 1.0, 0.5, (1.0, 0, 0)) + gaussian(g, 0.6, 0.4, (-1.0, 0.5, 0)) + floor * gaussian(g, 1.0, 2.0)


def test_config_validation_collects_every_problem():
    g = GridSpec(4.0, 8)
    with pytest.raises(ConfigError) as exc:
        RunConfig(grid=g, kernel=KernelSpec(4), safety=1.5, horizon=0.0, kappas=(0.5, 2.0), qs=(1.1,))
    text = str(exc.value)
    for piece in ("safety", "horizon", "kappa = 0.5 < 1", "q = 1.1"):
        assert piece in text
    assert len(exc.value.problems) == 4


def test_config_json_round_trip(tmp_path):
    g = GridSpec(6.0, 16)
    cfg = config(g, form=RhsForm.CONSERVATIVE, kappas=(1, 3), qs=(1.4, 1.6), dt=1e-3, seed=7)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.load(path) == cfg
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**cfg.to_dict(), "bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"kernel": {}})


def test_step_rejects_dt_above_bound():
    g = GridSpec(6.0, 16)
    cfg = config(g)
    f = field_of(g, bimodal(g))
    bound = stability_bound(f, cfg)
    assert 0 < bound < math.inf
    with pytest.raises(StepRejected) as exc:
        step(f, 2.0 * bound, cfg)
    assert exc.value.bound == pytest.approx(bound)
    step(f, bound, cfg)


def test_zero_field_stays_zero():
    g = GridSpec(4.0, 8)
    cfg = config(g)
    f = field_of(g, np.zeros(g.shape))
    new, clipped = step(f, stability_bound(f, cfg), cfg)
    assert np.all(new.values == 0.0) and clipped == 0.0
    assert stability_bound(f, config(g, KernelSpec(), collision=True, form=RhsForm.CONSERVATIVE)) == math.inf


def test_equilibrium_deviation_per_unit_time_decreases():
    devs = []
    for N in (16, 32, 64):
        g = GridSpec(8.0, N)
        cfg = config(g, KernelSpec(), form=RhsForm.CONSERVATIVE)
        G = field_of(g, gaussian(g))
        dt = stability_bound(G, cfg)
        new, _ = step(G, dt, cfg)
        devs.append(np.max(np.abs(new.values - G.values)) / (dt * np.max(G.values)))
    assert devs[0] > devs[1] > devs[2]
    assert np.polyfit(np.log([16, 32, 64]), np.log(devs), 1)[0] <= -1.8


def test_conservative_run_keeps_mass_and_logs_no_events():
    g = GridSpec(6.0, 16)
    cfg = config(g, form=RhsForm.CONSERVATIVE, horizon=0.2, stride=5)
    res = evolution.simulate(cfg, field_of(g, bimodal(g)))
    m = np.array([s.mass for s in res.steps])
    assert np.max(np.abs(m - m[0])) <= 1e-12 * m[0]
    assert not res.events_of("mass_drift")


def test_regularized_run_entropy_nonincreasing_and_energy_law():
    g = GridSpec(8.0, 32)
    n = 4
    cfg = config(g, KernelSpec(n), horizon=0.2, stride=4)
    f0 = field_of(g, gaussian(g, 1.0, 1.0, (0.7, 0, 0)) + gaussian(g, 0.6, 0.8, (-0.8, 0.4, 0)))
    res = evolution.simulate(cfg, f0)
    H = np.array([s.entropy for s in res.steps])
    assert np.all(np.diff(H) <= 1e-8 * abs(H[0]))
    rec0, rec = res.records[0], res.records[-1]
    expected = rec0.energy + 6.0 / n * (rec.time - rec0.time) * rec0.mass
    assert rec.energy == pytest.approx(expected, rel=1e-3)
    assert not res.events


def test_violations_are_logged_not_fatal():
    g = GridSpec(8.0, 16)
    cfg = config(g, horizon=0.05, energy_tol=1e-16, stride=1)
    res = evolution.simulate(cfg, field_of(g, bimodal(g)))
    assert res.final.time == pytest.approx(0.05)
    assert res.events_of("energy_law")
    ev = res.events_of("energy_law")[0]
    assert {"kind", "time", "step", "value", "tolerance"} <= set(ev)


def test_nan_aborts_with_last_good_snapshot():
    g = GridSpec(4.0, 8)
    vals = bimodal(g)
    vals[3, 3, 3] = np.nan
    with pytest.raises(SimulationAborted) as exc:
        evolution.simulate(config(g), field_of(g, vals))
    assert exc.value.last_good.time == 0.0
    assert exc.value.result.records


def test_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        evolution.simulate(config(GridSpec(4.0, 8)), field_of(GridSpec(4.0, 16), np.ones((16, 16, 16))))


def test_identical_runs_are_bit_identical():
    g = GridSpec(6.0, 16)
    cfg = config(g, horizon=0.05, stride=2, qs=(1.5, 1.6))
    f0 = field_of(g, bimodal(g))
    a = evolution.simulate(cfg, f0)
    b = evolution.simulate(cfg, f0)
    assert a.columns() == b.columns()
    assert a.table().tobytes() == b.table().tobytes()
    assert np.array_equal(a.final.values, b.final.values)


def test_maxwellian_run_truncated_slacks():
    g = GridSpec(8.0, 16)
    res = evolution.simulate(config(g, horizon=0.5, stride=2), field_of(g, gaussian(g)))
    slacks = evolution.truncated_entropy_slacks(res)
    assert set(slacks) == {1.0, 2.0, 4.0}
    assert min(slacks.values()) >= -1e-6


def test_peaked_run_truncated_slacks():
    g = GridSpec(8.0, 32)
    res = evolution.simulate(config(g, horizon=0.05, stride=2), prepare(field_of(g, gaussian(g, 30.0)), 4))
    assert min(evolution.truncated_entropy_slacks(res).values()) >= -1e-6
    assert not res.events_of("truncated_entropy")


def _peak_run(N, dt):
    g = GridSpec(8.0, N)
    cfg = config(g, KernelSpec(), form=RhsForm.NONCONSERVATIVE, horizon=0.2, dt=dt, stride=5)
    res = evolution.simulate(cfg, field_of(g, gaussian(g, 10.0)))
    return np.array([r.f_max for r in res.records]), res


def test_high_maxwellian_peak_stationary_under_refinement():
    # 10 G is an equilibrium: the peak drift is discretization error and must shrink with h
    drift = []
    for N in (32, 48):
        peaks, _ = _peak_run(N, 0.01)
        drift.append(abs(peaks[-1] - peaks[0]) / peaks[0])
    assert drift[1] < drift[0] / 2
    coarse, _ = _peak_run(32, 0.01)
    fine, _ = _peak_run(32, 0.005)
    assert abs(coarse[-1] - fine[-1]) / coarse[-1] <= 1e-4


@pytest.mark.xfail(strict=True, reason="10 G is a Maxwellian equilibrium; the discrete peak drifts up by O(h^3) instead")
def test_high_maxwellian_peak_decreases():
    peaks, _ = _peak_run(32, 0.01)
    assert np.all(np.diff(peaks) <= 0)


def test_dt_halving_converges_at_second_order():
    g = GridSpec(8.0, 32)
    n = 4
    f0 = field_of(g, gaussian(g, 1.0, 1.0, (0.7, 0, 0)) + gaussian(g, 0.6, 0.8, (-0.8, 0.4, 0)))
    bound = stability_bound(f0, config(g, KernelSpec(n)))
    finals = []
    for dt in (bound / 2, bound / 4, bound / 8):
        res = evolution.simulate(config(g, KernelSpec(n), horizon=0.2, dt=dt, stride=1000), f0)
        assert res.final.time == pytest.approx(0.2, abs=1e-14)
        finals.append(res.records[-1].row())
    # mass and energy are pinned by their conservation laws, and clipping bookkeeping
    # (clipped total, the far-tail minimum) is not a smooth function of dt
    skip = {"time", "step", "mass", "energy", "clipped_total", "min"}
    checked = set()
    for key, first in finals[0].items():
        if key in skip or not math.isfinite(first):
            continue
        d1 = abs(first - finals[1][key])
        d2 = abs(finals[1][key] - finals[2][key])
        if d1 == 0.0:
            continue
        checked.add(key)
        assert d1 / d2 >= 3.0, key
    assert {"entropy", "fisher", "max"} <= checked
