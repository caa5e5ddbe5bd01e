"""Explicit time integration of the regularized equation with running diagnostics.

The stepper is RK2 (midpoint) with a diffusion-limited step.  Negative
values are clipped after each full step and the clipped mass is taken
back proportionally from the positive nodes, so the total is unchanged.
The midpoint stage is clipped without redistribution: it only feeds a
flux-form right-hand side, which conserves whatever it is given.

Every step logs entropy, mass and the overflow masses ``int (f - kappa)_+``
needed for the time integral in the truncated-entropy check.  Full
diagnostics are computed every ``stride`` steps on immutable snapshots.
"""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import functionals as fn
from .grid import DistributionField, GridSpec
from .degiorgi import kappa_level
from .initial_data import PreparedInitialData
from .operator import KernelSpec, NumericalFailure, RhsForm, kernel_operator, rhs

__all__ = [
    "ConfigError",
    "StepRejected",
    "SimulationAborted",
    "RunConfig",
    "level_key",
    "diagnostic_levels",
    "DiagnosticsRecord",
    "StepLog",
    "RunResult",
    "stability_bound",
    "step",
    "compute_record",
    "simulate",
]

Q_MIN, Q_MAX = 6.0 / 5.0, 2.0


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid run config: " + "; ".join(problems))
        self.problems = list(problems)


class StepRejected(ValueError):
    def __init__(self, dt: float, bound: float):
        super().__init__(f"dt = {dt:.6g} exceeds the stability bound {bound:.6g}")
        self.dt = dt
        self.bound = bound


class SimulationAborted(RuntimeError):
    """Raised on a non-finite state; ``last_good`` is the most recent finite field."""

    def __init__(self, message: str, last_good: DistributionField, result: "RunResult"):
        super().__init__(message)
        self.last_good = last_good
        self.result = result


@dataclass(frozen=True)
class RunConfig:
    grid: GridSpec
    kernel: KernelSpec
    form: RhsForm = RhsForm.REGULARIZED
    horizon: float = 0.1
    safety: float = 0.5
    stride: int = 1
    kappas: tuple[float, ...] = (1.0, 2.0, 4.0)
    qs: tuple[float, ...] = (1.5,)
    output_dir: str = "runs/default"
    initial: dict = field(default_factory=lambda: {"type": "maxwellian"})
    prep_n: int | None = None
    dt: float | None = None
    collision: bool = True
    measure: str = "ball"
    dpsi: bool = True
    degiorgi_levels: int = 6
    eps_exponents: tuple[int, int] = (0, 6)
    seed: int = 0
    mass_tol: float = 1e-10
    energy_tol: float = 1e-3
    entropy_tol: float = 1e-8
    truncated_tol: float = 1e-6

    def __post_init__(self) -> None:
        object.__setattr__(self, "form", RhsForm(self.form))
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        object.__setattr__(self, "qs", tuple(float(q) for q in self.qs))
        object.__setattr__(self, "eps_exponents", tuple(int(j) for j in self.eps_exponents))
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def validate(self) -> list[str]:
        problems = []
        if not 0.0 < self.safety < 1.0:
            problems.append(f"safety factor must lie in (0, 1), got {self.safety}")
        if not self.horizon > 0:
            problems.append(f"horizon must be positive, got {self.horizon}")
        if int(self.stride) != self.stride or self.stride < 1:
            problems.append(f"stride must be a positive integer, got {self.stride}")
        if not self.kappas:
            problems.append("kappa list is empty")
        problems += [f"kappa = {k} < 1" for k in self.kappas if not k >= 1.0]
        if not self.qs:
            problems.append("q list is empty")
        problems += [f"q = {q} outside (6/5, 2)" for q in self.qs if not Q_MIN < q < Q_MAX]
        if self.dt is not None and not self.dt > 0:
            problems.append(f"dt must be positive, got {self.dt}")
        if self.prep_n is not None and (int(self.prep_n) != self.prep_n or self.prep_n < 1):
            problems.append(f"prep_n must be a positive integer, got {self.prep_n}")
        if self.measure not in ("ball", "shell"):
            problems.append(f"measure must be 'ball' or 'shell', got {self.measure!r}")
        if self.degiorgi_levels < 0:
            problems.append("degiorgi_levels must be nonnegative")
        if self.eps_exponents[0] > self.eps_exponents[1]:
            problems.append("eps_exponents must be an increasing pair")
        return problems

    @property
    def mollification_index(self) -> int | None:
        if self.prep_n is not None:
            return int(self.prep_n)
        return int(self.kernel.n) if self.kernel.finite else None

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "kernel": self.kernel.to_dict(),
            "form": self.form.value,
            "T": self.horizon,
            "sigma": self.safety,
            "stride": self.stride,
            "kappas": list(self.kappas),
            "qs": list(self.qs),
            "output_dir": self.output_dir,
            "initial": self.initial,
            "prep_n": self.prep_n,
            "dt": self.dt,
            "collision": self.collision,
            "measure": self.measure,
            "dpsi": self.dpsi,
            "degiorgi_levels": self.degiorgi_levels,
            "eps_exponents": list(self.eps_exponents),
            "seed": self.seed,
            "tolerances": {
                "mass": self.mass_tol,
                "energy": self.energy_tol,
                "entropy": self.entropy_tol,
                "truncated": self.truncated_tol,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {
            "grid", "kernel", "form", "T", "sigma", "stride", "kappas", "qs", "output_dir", "initial",
            "prep_n", "dt", "collision", "measure", "dpsi", "degiorgi_levels", "eps_exponents", "seed",
            "tolerances",
        }
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        if "grid" not in data:
            raise ConfigError(["missing key 'grid'"])
        tol = data.get("tolerances", {})
        kwargs = {
            "grid": GridSpec.from_dict(data["grid"]),
            "kernel": KernelSpec.from_dict(data.get("kernel", {})),
        }
        renames = {"T": "horizon", "sigma": "safety"}
        for key in ("form", "T", "sigma", "stride", "kappas", "qs", "output_dir", "initial", "prep_n", "dt",
                    "collision", "measure", "dpsi", "degiorgi_levels", "eps_exponents", "seed"):
            if key in data:
                kwargs[renames.get(key, key)] = data[key]
        for key in ("mass", "energy", "entropy", "truncated"):
            if key in tol:
                kwargs[f"{key}_tol"] = float(tol[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def level_key(q: float, kappa: float) -> str:
    return f"{q:.12g}:{kappa:.12g}"


def diagnostic_levels(config: RunConfig, q: float) -> tuple[float, ...]:
    """Levels tracked for exponent ``q``: the user list, the De Giorgi ladder and the dyadic eps ladder."""
    calc = fn.TruncationCalc(q)
    levels = {1.0, *config.kappas}
    levels.update(kappa_level(q, k) for k in range(config.degiorgi_levels + 1))
    j0, j1 = config.eps_exponents
    levels.update(2.0 ** (j * calc.gamma) for j in range(j0, j1 + 1))
    return tuple(sorted(levels))


@dataclass(frozen=True)
class DiagnosticsRecord:
    time: float
    step: int
    mass: float
    energy: float
    entropy: float
    h_plus: dict
    overflow: dict
    overflow_integral: dict
    fisher: float
    d_psi: float | None
    diffusion_dissipation: float
    levelset: dict
    mu_mass: dict
    mu_grad: dict
    f_min: float
    f_max: float
    clipped_total: float

    def row(self) -> dict:
        out = {
            "time": self.time,
            "step": self.step,
            "mass": self.mass,
            "energy": self.energy,
            "entropy": self.entropy,
            "fisher": self.fisher,
            "D_psi": math.nan if self.d_psi is None else self.d_psi,
            "diffusion_dissipation": self.diffusion_dissipation,
            "min": self.f_min,
            "max": self.f_max,
            "clipped_total": self.clipped_total,
        }
        for k, v in self.h_plus.items():
            out[f"H_plus:{k:.12g}"] = v
        for k, v in self.overflow.items():
            out[f"overflow:{k:.12g}"] = v
        for k, v in self.overflow_integral.items():
            out[f"overflow_integral:{k:.12g}"] = v
        for name, table in (("levelset", self.levelset), ("mu_mass", self.mu_mass), ("mu_grad", self.mu_grad)):
            for key, v in table.items():
                out[f"{name}:{key}"] = v
        return out


@dataclass(frozen=True)
class StepLog:
    step: int
    time: float
    dt: float
    bound: float
    mass: float
    entropy: float
    clipped: float


@dataclass
class RunResult:
    config: RunConfig
    records: list[DiagnosticsRecord] = field(default_factory=list)
    steps: list[StepLog] = field(default_factory=list)
    snapshots: list[DistributionField] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    initial: PreparedInitialData | None = None
    wall_seconds: float = 0.0

    @property
    def final(self) -> DistributionField:
        return self.snapshots[-1]

    def columns(self) -> list[str]:
        return list(self.records[0].row()) if self.records else []

    def table(self) -> np.ndarray:
        cols = self.columns()
        return np.array([[r.row()[c] for c in cols] for r in self.records], dtype=np.float64)

    def events_of(self, kind: str) -> list[dict]:
        return [e for e in self.events if e["kind"] == kind]


def _diffusion_matrix_max(f: DistributionField, config: RunConfig) -> float:
    A = kernel_operator(f.grid, config.kernel).matrix(f.values) if config.collision else None
    lam = 0.0 if A is None else float(np.max(A.max_eigenvalue()))
    if config.form is RhsForm.REGULARIZED and config.kernel.finite:
        lam += config.kernel.viscosity
    return lam


def stability_bound(f: DistributionField, config: RunConfig) -> float:
    """Largest admissible step ``sigma h^2 / (6 lambda_max)``; ``inf`` when nothing diffuses."""
    lam = _diffusion_matrix_max(f, config)
    if lam <= 0:
        return math.inf
    return config.safety * f.grid.spacing**2 / (6.0 * lam)


def _rhs(f: DistributionField, config: RunConfig) -> np.ndarray:
    return rhs(f, config.form, config.kernel, collision=config.collision, measure=config.measure)


def _clip(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Zero the negatives and rescale the positives to keep the node sum; returns the clipped amount."""
    neg = values < 0
    if not neg.any():
        return values, 0.0
    clipped = -float(np.sum(values[neg]))
    total = float(np.sum(values))
    pos = np.where(neg, 0.0, values)
    s = float(np.sum(pos))
    if s > 0 and total > 0:
        pos *= total / s
    return pos, clipped


def step(
    f: DistributionField, dt: float, config: RunConfig, bound: float | None = None
) -> tuple[DistributionField, float]:
    """One RK2 midpoint step.  Returns the new field and the clipped mass ``h^3 sum (negative part)``."""
    if bound is None:
        bound = stability_bound(f, config)
    if dt > bound * (1.0 + 1e-12):
        raise StepRejected(dt, bound)
    k1 = _rhs(f, config)
    half = f.with_values(np.maximum(f.values + 0.5 * dt * k1, 0.0), f.time + 0.5 * dt)
    k2 = _rhs(half, config)
    new, clipped = _clip(f.values + dt * k2)
    return f.with_values(new, f.time + dt), clipped * f.grid.cell_volume


def compute_record(
    f: DistributionField,
    config: RunConfig,
    step_index: int = 0,
    overflow_integral: dict | None = None,
    clipped_total: float = 0.0,
) -> DiagnosticsRecord:
    """Full diagnostics of one snapshot."""
    levelset, mu_mass, mu_grad = {}, {}, {}
    for q in config.qs:
        for kappa in diagnostic_levels(config, q):
            key = level_key(q, kappa)
            levelset[key] = fn.level_set_dissipation(f, q, kappa)
            mu_mass[key] = fn.mu_level_mass(f, q, kappa)
            mu_grad[key] = fn.mu_level_dissipation(f, q, kappa)
    d_psi = None
    if config.dpsi and config.collision and config.form is not RhsForm.NONCONSERVATIVE:
        d_psi = fn.dissipation_Dpsi(f, config.kernel, method="fft").value
    return DiagnosticsRecord(
        time=f.time,
        step=step_index,
        mass=fn.mass(f),
        energy=fn.energy(f),
        entropy=fn.entropy(f),
        h_plus={k: fn.truncated_entropy(f, k) for k in config.kappas},
        overflow={k: fn.overflow_mass(f, k) for k in config.kappas},
        overflow_integral=dict(overflow_integral or {k: 0.0 for k in config.kappas}),
        fisher=fn.weighted_fisher(f),
        d_psi=d_psi,
        diffusion_dissipation=fn.diffusion_dissipation(f),
        levelset=levelset,
        mu_mass=mu_mass,
        mu_grad=mu_grad,
        f_min=float(np.min(f.values)),
        f_max=float(np.max(f.values)),
        clipped_total=clipped_total,
    )


def _conservative(config: RunConfig) -> bool:
    return config.form is not RhsForm.NONCONSERVATIVE


def _monotone_entropy(config: RunConfig) -> bool:
    return config.form in (RhsForm.REGULARIZED, RhsForm.WEAK_SYMMETRIC)


def _energy_law(config: RunConfig) -> bool:
    """Energy grows as ``E0 + 6 t M / n`` for the regularized form (collisions conserve energy)."""
    return config.form is RhsForm.REGULARIZED or (not config.collision and _conservative(config))


def _check_records(result: RunResult, h0_scale: float) -> None:
    cfg = result.config
    recs = result.records
    m0, e0 = recs[0].mass, recs[0].energy
    rec = recs[-1]
    if _conservative(cfg) and abs(rec.mass - m0) > cfg.mass_tol * max(abs(m0), 1e-300):
        result.events.append(
            {"kind": "mass_drift", "time": rec.time, "step": rec.step, "value": rec.mass - m0, "tolerance": cfg.mass_tol}
        )
    if _energy_law(cfg):
        nu = cfg.kernel.viscosity if (cfg.form is RhsForm.REGULARIZED and cfg.kernel.finite) else 0.0
        expected = e0 + 6.0 * nu * (rec.time - recs[0].time) * m0
        rel = abs(rec.energy - expected) / max(abs(expected), 1e-300)
        if rel > cfg.energy_tol:
            result.events.append(
                {"kind": "energy_law", "time": rec.time, "step": rec.step, "value": rel, "tolerance": cfg.energy_tol}
            )
    for kappa in cfg.kappas:
        hp = rec.h_plus[kappa]
        ii = rec.overflow_integral[kappa]
        worst = max(
            hp - r.h_plus[kappa] - kappa * (ii - r.overflow_integral[kappa]) for r in recs[:-1]
        ) if len(recs) > 1 else -math.inf
        if worst > cfg.truncated_tol:
            result.events.append(
                {"kind": "truncated_entropy", "time": rec.time, "step": rec.step, "kappa": kappa,
                 "value": worst, "tolerance": cfg.truncated_tol}
            )


def truncated_entropy_slacks(result: RunResult) -> dict:
    """Minimum over sampled pairs ``t1 < t2`` of ``kappa int int (f-kappa)_+ - (H_+(t2) - H_+(t1))`` per kappa."""
    out = {}
    recs = result.records
    for kappa in result.config.kappas:
        hp = np.array([r.h_plus[kappa] for r in recs])
        ii = np.array([r.overflow_integral[kappa] for r in recs])
        if len(recs) < 2:
            out[kappa] = math.inf
            continue
        slack = kappa * (ii[None, :] - ii[:, None]) - (hp[None, :] - hp[:, None])
        upper = np.triu_indices(len(recs), 1)
        out[kappa] = float(np.min(slack[upper]))
    return out


__all__.append("truncated_entropy_slacks")


def simulate(
    config: RunConfig,
    initial: PreparedInitialData | DistributionField,
    max_steps: int | None = None,
) -> RunResult:
    """Advance to ``config.horizon`` and collect diagnostics every ``stride`` steps and at the end."""
    started = _time.perf_counter()
    if isinstance(initial, PreparedInitialData):
        prepared, f = initial, initial.floored
    else:
        prepared, f = None, initial
    if f.grid != config.grid:
        raise ValueError(f"initial data grid {f.grid} does not match config grid {config.grid}")
    result = RunResult(config=config, initial=prepared)
    integrals = {k: 0.0 for k in config.kappas}
    overflow = {k: fn.overflow_mass(f, k) for k in config.kappas}
    clipped_total = 0.0
    h0 = fn.entropy(f)
    h_scale = max(abs(h0), 1e-300)
    prev_h = h0
    result.records.append(compute_record(f, config, 0, integrals, 0.0))
    result.snapshots.append(f)
    result.steps.append(StepLog(0, f.time, 0.0, math.inf, fn.mass(f), h0, 0.0))
    t_end = f.time + config.horizon
    k = 0
    while f.time < t_end * (1.0 - 1e-14) - 1e-300:
        if max_steps is not None and k >= max_steps:
            break
        bound = stability_bound(f, config)
        dt = min(config.dt if config.dt is not None else bound, t_end - f.time)
        if config.dt is None and not math.isfinite(dt):
            dt = t_end - f.time
        try:
            new, clipped = step(f, dt, config, bound)
        except NumericalFailure as exc:
            result.wall_seconds = _time.perf_counter() - started
            raise SimulationAborted(f"{exc} at t = {f.time:.6g}", f, result) from exc
        k += 1
        if abs(t_end - new.time) <= 1e-12 * max(1.0, abs(t_end)):
            new = new.with_values(new.values, t_end)
        new_overflow = {kk: fn.overflow_mass(new, kk) for kk in config.kappas}
        for kk in config.kappas:
            integrals[kk] += 0.5 * dt * (overflow[kk] + new_overflow[kk])
        overflow = new_overflow
        clipped_total += clipped
        h = fn.entropy(new)
        result.steps.append(StepLog(k, new.time, dt, bound, fn.mass(new), h, clipped))
        if _monotone_entropy(config) and h - prev_h > config.entropy_tol * h_scale:
            result.events.append(
                {"kind": "entropy_increase", "time": new.time, "step": k, "value": h - prev_h,
                 "tolerance": config.entropy_tol * h_scale}
            )
        prev_h = h
        f = new
        if k % config.stride == 0 or f.time >= t_end:
            result.records.append(compute_record(f, config, k, integrals, clipped_total))
            result.snapshots.append(f)
            _check_records(result, h_scale)
    if result.records[-1].step != k:
        result.records.append(compute_record(f, config, k, integrals, clipped_total))
        result.snapshots.append(f)
        _check_records(result, h_scale)
    result.wall_seconds = _time.perf_counter() - started
    return result
