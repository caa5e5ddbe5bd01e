"""Scalar functionals of a distribution field and the scalar calculus behind them.

Level masks are closed (``f >= kappa``) everywhere.  Gradients are the
grid's centered stencil; the log-gradient form is used wherever an exact
discrete cancellation is needed (entropy production, Maxwellian kernels).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from functools import cache

import numpy as np
from scipy import optimize

from .grid import MATRIX_COMPONENTS, DistributionField, gradient, integrate, laplacian, log_gradient, sqrt_gradient
from .operator import KernelSpec, kernel_operator, kernel_samples

__all__ = [
    "TruncationCalc",
    "SmallLevelWarning",
    "h_plus",
    "mu",
    "ch_constant",
    "c_iota",
    "c_q_iota",
    "mass",
    "energy",
    "entropy",
    "truncated_entropy",
    "overflow_mass",
    "level_set_dissipation",
    "mu_level",
    "mu_level_mass",
    "mu_level_dissipation",
    "weighted_fisher",
    "diffusion_dissipation",
    "DissipationEstimate",
    "dissipation_Dpsi",
    "HolderReport",
    "holder_chain_check",
    "scalar_lemma_suite",
    "snapshot_functionals",
]


class SmallLevelWarning(UserWarning):
    """Truncation level below 1, outside the regime where suitable-solution inequalities are stated."""


@dataclass(frozen=True)
class TruncationCalc:
    """Exponents attached to a Lebesgue exponent ``q``.

    ``p_prime = 2/q`` and its conjugate ``p = 2/(2-q)`` drive the Hölder step,
    ``q_star = 3q/(3-q)`` is the Sobolev exponent and ``gamma = (5q-6)/(2q-2)``
    the scaling exponent.
    """

    q: float
    kappa: float = 1.0

    def __post_init__(self) -> None:
        if not 1.0 < self.q < 2.0:
            raise ValueError(f"q must lie in (1, 2), got {self.q}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")

    @property
    def p_prime(self) -> float:
        return 2.0 / self.q

    @property
    def p(self) -> float:
        return 2.0 / (2.0 - self.q)

    @property
    def q_star(self) -> float:
        return 3.0 * self.q / (3.0 - self.q)

    @property
    def gamma(self) -> float:
        return (5.0 * self.q - 6.0) / (2.0 * self.q - 2.0)

    @property
    def hausdorff_exponent(self) -> float:
        """``q/(5q-6)``, defined for ``q > 6/5``."""
        return self.q / (5.0 * self.q - 6.0)


def h_plus(z):
    """``z (ln z)_+ - (z-1)_+``: zero on ``[0, 1]``, ``z ln z - z + 1`` above."""
    z = np.asarray(z, dtype=np.float64)
    safe = np.where(z > 1.0, z, 1.0)
    out = np.where(z > 1.0, safe * np.log(safe) - safe + 1.0, 0.0)
    return out if out.ndim else float(out)


def mu(r):
    """``min(r, r^2)``."""
    r = np.asarray(r, dtype=np.float64)
    out = np.minimum(r, r * r)
    return out if out.ndim else float(out)


def _ratio_lower(r: float) -> float:
    return float(h_plus(r) / mu(r - 1.0))


def _ratio_upper(r: float, iota: float) -> float:
    return float(h_plus(r) / (r - 1.0) ** (1.0 + iota))


def _golden_refine(fun, samples: np.ndarray) -> tuple[float, float]:
    values = np.array([fun(r) for r in samples])
    i = int(np.argmin(values))
    lo = samples[max(i - 1, 0)]
    hi = samples[min(i + 1, len(samples) - 1)]
    res = optimize.minimize_scalar(fun, bracket=(lo, samples[i], hi), method="golden", tol=1e-12)
    if res.fun < values[i]:
        return float(res.x), float(res.fun)
    return float(samples[i]), float(values[i])


@cache
def ch_constant() -> float:
    """Best ``c`` with ``c mu((r-1)_+) <= h_+(r)``; the infimum sits at the kink ``r = 2``."""
    samples = 1.0 + np.geomspace(1e-4, 99.0, 4001)
    return _golden_refine(_ratio_lower, samples)[1]


@cache
def c_iota(iota: float) -> float:
    """``sup_{r>1} h_+(r) / (r-1)^{1+iota}`` for ``0 < iota < 1``."""
    if not 0.0 < iota < 1.0:
        raise ValueError(f"iota must lie in (0, 1), got {iota}")
    samples = 1.0 + np.geomspace(1e-4, 1e6, 6001)
    return -_golden_refine(lambda r: -_ratio_upper(r, iota), samples)[1]


def c_q_iota(q: float, iota: float) -> float:
    """``2^{(1+iota)(iota+q-1)} C_iota``."""
    return 2.0 ** ((1.0 + iota) * (iota + q - 1.0)) * c_iota(iota)


def _vals(f) -> np.ndarray:
    return f.values if isinstance(f, DistributionField) else np.asarray(f, dtype=np.float64)


def mass(f: DistributionField) -> float:
    return integrate(f.grid, f)


def energy(f: DistributionField) -> float:
    """Second moment ``int |v|^2 f``."""
    return integrate(f.grid, f, f.grid.speed_squared)


def entropy(f: DistributionField) -> float:
    """Boltzmann entropy ``int f ln f`` with ``0 ln 0 = 0``."""
    v = f.values
    pos = v > 0
    return float(np.sum(v[pos] * np.log(v[pos])) * f.grid.cell_volume)


def _check_level(kappa: float) -> None:
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if kappa < 1.0:
        warnings.warn(f"kappa = {kappa} < 1", SmallLevelWarning, stacklevel=3)


def truncated_entropy(f: DistributionField, kappa: float) -> float:
    """``H_+(f | kappa) = int kappa h_+(f / kappa)``."""
    _check_level(kappa)
    return float(np.sum(kappa * h_plus(f.values / kappa)) * f.grid.cell_volume)


def overflow_mass(f: DistributionField, kappa: float) -> float:
    """``int (f - kappa)_+``."""
    return float(np.sum(np.maximum(f.values - kappa, 0.0)) * f.grid.cell_volume)


def _lq_gradient(grid, field: np.ndarray, q: float, mask=None) -> float:
    g = gradient(grid, field)
    norm = np.sqrt(np.sum(g * g, axis=0))
    if mask is not None:
        norm = np.where(mask, norm, 0.0)
    return float(np.sum(norm**q) * grid.cell_volume)


def level_set_dissipation(f: DistributionField, q: float, kappa: float) -> float:
    """``(int |1{f >= kappa} grad f^{1/q}|^q)^{2/q}``."""
    if not 1.0 < q < 2.0:
        raise ValueError(f"q must lie in (1, 2), got {q}")
    mask = f.values >= kappa
    if not mask.any():
        return 0.0
    return _lq_gradient(f.grid, f.values ** (1.0 / q), q, mask) ** (2.0 / q)


def mu_level(f, q: float, kappa: float) -> np.ndarray:
    """Level-set function ``mu((f^{1/q} - kappa^{1/q})_+)``."""
    return mu(np.maximum(_vals(f) ** (1.0 / q) - kappa ** (1.0 / q), 0.0))


def mu_level_mass(f: DistributionField, q: float, kappa: float) -> float:
    """``int mu((f^{1/q} - kappa^{1/q})_+)^q``."""
    return float(np.sum(mu_level(f, q, kappa) ** q) * f.grid.cell_volume)


def mu_level_dissipation(f: DistributionField, q: float, kappa: float) -> float:
    """``(int |grad mu((f^{1/q} - kappa^{1/q})_+)|^q)^{2/q}``."""
    level = mu_level(f, q, kappa)
    if not np.any(level > 0):
        return 0.0
    return _lq_gradient(f.grid, level, q) ** (2.0 / q)


def weighted_fisher(f: DistributionField, truncated_at: float | None = None, floor: float = 1e-30) -> float:
    """``int |grad sqrt f|^2 (1+|v|)^{-3}``, optionally restricted to ``f >= kappa``."""
    g = sqrt_gradient(f.grid, f, floor)
    dens = np.sum(g * g, axis=0) * (1.0 + np.sqrt(f.grid.speed_squared)) ** -3
    if truncated_at is not None:
        dens = np.where(f.values >= truncated_at, dens, 0.0)
    return float(np.sum(dens) * f.grid.cell_volume)


def diffusion_dissipation(f: DistributionField, floor: float = 1e-300) -> float:
    """``-int log f lap f``, the entropy a unit-coefficient Laplacian dissipates.

    Taken with the grid Laplacian itself, so it matches the discrete entropy
    production of the viscous term exactly; ``int grad log f . grad f`` in the continuum.
    """
    logf = np.log(np.maximum(f.values, floor))
    return float(-np.sum(logf * laplacian(f.grid, f.values)) * f.grid.cell_volume)


@dataclass(frozen=True)
class DissipationEstimate:
    value: float
    stderr: float = 0.0
    method: str = "fft"
    samples: int = 0


def _pair_quadratic(grid, comps: np.ndarray, dx: np.ndarray) -> np.ndarray:
    out = np.zeros(dx.shape[1:])
    for c, (i, j) in enumerate(MATRIX_COMPONENTS):
        out = out + (1.0 if i == j else 2.0) * comps[c] * dx[i] * dx[j]
    return out


DIRECT_SIZE_CAP = 16


def dissipation_Dpsi(
    f: DistributionField,
    kernel: KernelSpec,
    method: str = "fft",
    samples: int = 100_000,
    seed: int = 0,
) -> DissipationEstimate:
    """Entropy production ``D_psi(f) = 2 iint psi |Pi (grad_v - grad_w) sqrt(f(v) f(w))|^2``.

    With ``X = grad log f`` the integrand is ``(1/2) f(v) f(w) (X(v)-X(w))^T a_n (X(v)-X(w))``,
    evaluated on the same sampled kernel as the collision operator, so the
    result equals the discrete entropy production of the weak-symmetric form.

    ``method``: ``"fft"`` (convolution identity), ``"direct"`` (pair sum,
    ``N <= 16``) or ``"montecarlo"`` (pairs drawn from ``f (x) f / mass^2``).
    """
    grid = f.grid
    vals = f.values
    x = log_gradient(grid, vals)
    h3 = grid.cell_volume
    if method == "fft":
        op = kernel_operator(grid, kernel)
        flux = vals * (op.matrix(vals).apply(x) - op.apply(vals * x))
        return DissipationEstimate(float(np.sum(flux * x) * h3), 0.0, "fft")
    _, comps = kernel_samples(grid, kernel)
    n = grid.points
    if method == "direct":
        if n > DIRECT_SIZE_CAP:
            raise ValueError(f"direct pair summation is capped at N <= {DIRECT_SIZE_CAP}, got N = {n}")
        ar = np.arange(n)
        partial = np.zeros(grid.shape)
        for a, b, c in np.ndindex(*grid.shape):
            if vals[a, b, c] == 0.0:
                continue
            idx = np.ix_((a - ar) % n, (b - ar) % n, (c - ar) % n)
            local = comps[:, idx[0], idx[1], idx[2]]
            dx = x[:, a, b, c][:, None, None, None] - x
            partial[a, b, c] = vals[a, b, c] * np.sum(vals * _pair_quadratic(grid, local, dx))
        return DissipationEstimate(float(0.5 * np.sum(partial) * h3 * h3), 0.0, "direct")
    if method == "montecarlo":
        total = vals.sum()
        if total <= 0:
            return DissipationEstimate(0.0, 0.0, "montecarlo", samples)
        rng = np.random.default_rng(seed)
        p = (vals / total).ravel()
        iv = rng.choice(p.size, size=samples, p=p)
        iw = rng.choice(p.size, size=samples, p=p)
        v_idx = np.unravel_index(iv, grid.shape)
        w_idx = np.unravel_index(iw, grid.shape)
        off = tuple((v_idx[a] - w_idx[a]) % n for a in range(3))
        local = comps[:, off[0], off[1], off[2]]
        dx = x[:, v_idx[0], v_idx[1], v_idx[2]] - x[:, w_idx[0], w_idx[1], w_idx[2]]
        integrand = 0.5 * _pair_quadratic(grid, local, dx)
        m = total * h3
        return DissipationEstimate(
            float(m * m * integrand.mean()),
            float(m * m * integrand.std(ddof=1) / math.sqrt(samples)),
            "montecarlo",
            samples,
        )
    raise ValueError(f"unknown method {method!r}; expected fft, direct or montecarlo")


@dataclass(frozen=True)
class HolderReport:
    """Both sides of the Hölder step for ``int |grad (f^{1/q} - kappa^{1/q})_+|^q``.

    ``lhs_chain`` is ``(2/q)^q int f^{1-q/2} |grad sqrt f|^q 1{f >= kappa}``,
    the chain-rule form that the Hölder inequality bounds; ``lhs_direct``
    differentiates ``f^{1/q}`` with the grid stencil.  ``slack = rhs - lhs_chain``.
    """

    q: float
    kappa: float
    lhs_direct: float
    lhs_chain: float
    rhs: float
    slack: float
    slack_direct: float

    def to_dict(self) -> dict:
        return asdict(self)


def holder_chain_check(f: DistributionField, q: float, kappa: float, floor: float = 1e-30) -> HolderReport:
    calc = TruncationCalc(q, kappa)
    grid = f.grid
    vals = f.values
    mask = vals >= kappa
    h3 = grid.cell_volume
    weight = 1.0 + grid.speed_squared
    lhs_direct = _lq_gradient(grid, vals ** (1.0 / q), q, mask) if mask.any() else 0.0
    g = sqrt_gradient(grid, vals, floor)
    grad2 = np.where(mask, np.sum(g * g, axis=0), 0.0)
    coef = (2.0 / q) ** q
    lhs_chain = coef * float(np.sum(np.where(mask, vals, 0.0) ** (1.0 / calc.p) * grad2 ** (q / 2.0)) * h3)
    moment = float(np.sum(weight ** (1.5 * calc.p / calc.p_prime) * vals) * h3)
    fisher = float(np.sum(grad2 * weight**-1.5) * h3)
    rhs = coef * moment ** (1.0 / calc.p) * fisher ** (1.0 / calc.p_prime)
    return HolderReport(q, kappa, lhs_direct, lhs_chain, rhs, rhs - lhs_chain, rhs - lhs_direct)


def scalar_lemma_suite(seed: int = 0, samples: int = 1_000_000) -> dict:
    """Random-sample checks of the pointwise lemmas; returns violation counts per lemma."""
    rng = np.random.default_rng(seed)
    c_h = ch_constant()
    c23 = c_iota(2.0 / 3.0)
    rtol = 1e-12
    r = rng.uniform(0.0, 1e3, samples)
    hp = h_plus(r)
    lower = c_h * mu(np.maximum(r - 1.0, 0.0))
    upper = c23 * np.maximum(r - 1.0, 0.0) ** (5.0 / 3.0)
    out = {}

    def record(name, excess):
        excess = np.asarray(excess)
        out[name] = {"violations": int(np.sum(excess > 0)), "max_excess": float(np.max(excess, initial=-np.inf))}

    record("mu_h_lower", lower - hp - rtol * (1.0 + hp))
    record("mu_h_upper", hp - upper - rtol * (1.0 + upper))

    qs = rng.uniform(1.0, 4.0, samples)
    rr = rng.uniform(0.0, 5.0, samples)
    lhs, rhs = mu(rr**qs), mu(rr) ** qs
    record("mu_power", np.abs(lhs - rhs) - 8 * np.finfo(float).eps * np.maximum(np.abs(lhs), np.abs(rhs)))

    f = rng.uniform(0.0, 50.0, samples)
    left = np.maximum(f - 1.0, 0.0)
    middle = 2.0 * mu(np.maximum(f - 0.5, 0.0))
    record("overshoot_mu", left - middle)
    right = h_plus(2.0 * f) / c_h
    record("overshoot_h", middle - right - rtol * (1.0 + right))

    rq = rng.uniform(0.0, 20.0, samples)
    kap = rng.uniform(1.0, 2.0, samples)
    qq = rng.uniform(1.0, 2.0, samples)
    s = np.maximum(rq ** (1.0 / qq) - kap ** (1.0 / qq), 0.0)
    bound = 2.0 ** (qq - 1.0) * (mu(s) ** qq + 2.0 * kap * (rq > kap))
    record("level_convexity", np.maximum(rq - kap, 0.0) - bound - rtol * (1.0 + bound))
    out["constants"] = {"c_h": c_h, "C_2/3": c23}
    return out


def snapshot_functionals(
    f: DistributionField, qs=(1.5,), kappas=(1.0, 2.0, 4.0), kernel: KernelSpec | None = None
) -> dict:
    """Every functional of one snapshot, keyed like the diagnostics columns.

    ``D_psi`` (fft route) is included only when a ``kernel`` is given.
    """
    out = {
        "time": f.time,
        "mass": mass(f),
        "energy": energy(f),
        "entropy": entropy(f),
        "fisher": weighted_fisher(f),
        "diffusion_dissipation": diffusion_dissipation(f),
        "min": float(f.values.min()),
        "max": float(f.values.max()),
    }
    if kernel is not None:
        out["D_psi"] = dissipation_Dpsi(f, kernel).value
    for k in kappas:
        out[f"H_plus:{k:.12g}"] = truncated_entropy(f, k)
        out[f"overflow:{k:.12g}"] = overflow_mass(f, k)
        out[f"fisher_truncated:{k:.12g}"] = weighted_fisher(f, truncated_at=k)
    for q in qs:
        for k in kappas:
            key = f"{q:.12g}:{k:.12g}"
            out[f"levelset:{key}"] = level_set_dissipation(f, q, k)
            out[f"mu_mass:{key}"] = mu_level_mass(f, q, k)
            out[f"mu_grad:{key}"] = mu_level_dissipation(f, q, k)
            out[f"holder_slack:{key}"] = holder_chain_check(f, q, k).slack
    return out
