"""De Giorgi iteration machinery: levels, level-set energies, recurrences,
smallness thresholds and the invariant scaling.

Run time ``t`` is mapped to the unit window by ``u = t / time_scale``
(``time_scale`` defaults to the last recorded time, so a run ends at
``u = 1``).  Every window integral is the trapezoid rule on the recorded
samples, with the window ends inserted by linear interpolation.

Two closed forms are offered in both the printed and the derived version:

* The equality recurrence ``A_{k+1} = M Lambda^k A_k^beta`` is solved by
  ``M^{-a} Lambda^{-a^2} Lambda^{-k a} (M^a Lambda^{a^2} A_0)^{beta^k}``
  with ``a = 1/(beta-1)``; the printed bound carries ``Lambda^{+k a}`` and
  therefore dominates the exact solution only for ``Lambda >= 1``.
* The threshold ``eta_0`` that actually makes ``A_0`` fall below
  ``M^{-a} Lambda^{-a^2}`` is ``c_h / (16 (1 + c_h)) M^{-a} Lambda^{-a^2}``;
  its powers of two differ from the printed constant.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy import special

from .functionals import TruncationCalc, c_q_iota, ch_constant, mu, h_plus
from .grid import DistributionField, GridSpec
from .series import DiagnosticsSeries

__all__ = [
    "Q_DG",
    "Q_IMPROVED",
    "beta_exponent",
    "lambda_constant",
    "gamma_exponent",
    "t_level",
    "kappa_level",
    "DeGiorgiSequence",
    "levels",
    "sobolev_constant",
    "recurrence_M",
    "recurrence_threshold",
    "log_recurrence_threshold",
    "log_recurrence_bound",
    "recurrence_closed_form",
    "recurrence_exact",
    "iterate_recurrence",
    "eta0",
    "log_eta0",
    "eta0_from_threshold",
    "D_constant",
    "eta1_upper",
    "eta1_final_condition",
    "two_level_bound",
    "worst_sequence",
    "WindowError",
    "unit_times",
    "window_integral",
    "window_max",
    "energy_Ak",
    "energies",
    "degiorgi_report",
    "ScalingTransform",
    "rescale_field",
    "rescale_series",
    "transform_negligible",
    "improved_dg_criterion",
]

Q_DG = (6.0 / 5.0, 2.0)
Q_IMPROVED = (4.0 / 3.0, 2.0)


def _check_q(q, interval=Q_DG) -> None:
    if not interval[0] < q < interval[1]:
        raise ValueError(f"q = {q} outside ({interval[0]:.6g}, {interval[1]:.6g})")


# Closed forms written to accept Fractions as well as floats.


def beta_exponent(q):
    """``8/3 - 2/q``."""
    return Fraction(8, 3) - 2 / q if isinstance(q, Fraction) else 8.0 / 3.0 - 2.0 / q


def lambda_constant(q: float) -> float:
    """``2 * 4^{5q/3}``."""
    return 2.0 * 4.0 ** (5.0 * q / 3.0)


def gamma_exponent(q):
    """``(5q - 6)/(2q - 2)``."""
    return (5 * q - 6) / (2 * q - 2)


def t_level(k: int) -> float:
    """``1/2 - 2^{-k}/4``."""
    return 0.5 - 0.25 * 2.0**-k


def kappa_level(q: float, k: int) -> float:
    """``(1 + (2^{1/q} - 1)(1 - 2^{-k}))^q``."""
    return (1.0 + (2.0 ** (1.0 / q) - 1.0) * (1.0 - 2.0**-k)) ** q


def sobolev_constant(q: float, dim: int = 3) -> float:
    """Sharp constant of ``||u||_{q*} <= C ||grad u||_q`` in ``R^dim`` for ``1 < q < dim`` (Talenti)."""
    if not 1.0 < q < dim:
        raise ValueError(f"q must lie in (1, {dim}), got {q}")
    n = float(dim)
    ratio = special.gamma(1.0 + n / 2.0) * special.gamma(n) / (
        special.gamma(n / q) * special.gamma(1.0 + n - n / q)
    )
    return math.pi**-0.5 * n ** (-1.0 / q) * ((q - 1.0) / (n - q)) ** (1.0 - 1.0 / q) * ratio ** (1.0 / n)


def recurrence_M(q: float, c_e: float = 1.0) -> float:
    """``2^{5+10q} 3 (C(q,2/3) + 2^{q+1}) C_S^2 (2/c_h)^{5/3-2/q} 4/C_E``."""
    c_h = ch_constant()
    cs = sobolev_constant(q)
    return (
        2.0 ** (5.0 + 10.0 * q) * 3.0 * (c_q_iota(q, 2.0 / 3.0) + 2.0 ** (q + 1.0)) * cs**2
        * (2.0 / c_h) ** (5.0 / 3.0 - 2.0 / q) * 4.0 / c_e
    )


def _log_threshold(M: float, lam: float, beta: float) -> float:
    a = 1.0 / (beta - 1.0)
    return -a * math.log(M) - a * a * math.log(lam)


def recurrence_threshold(M: float, lam: float, beta: float) -> float:
    """``M^{-1/(beta-1)} Lambda^{-1/(beta-1)^2}``; below it the recurrence collapses to 0."""
    return math.exp(_log_threshold(M, lam, beta))


def log_recurrence_threshold(M: float, lam: float, beta: float) -> float:
    """Log of :func:`recurrence_threshold`, finite where the threshold underflows (``beta`` near 1)."""
    _check_recurrence(M, lam, beta, 0.0)
    return _log_threshold(M, lam, beta)


def _check_recurrence(M, lam, beta, A0) -> None:
    if not (M > 0 and lam > 0):
        raise ValueError("M and Lambda must be positive")
    if not beta > 1:
        raise ValueError(f"beta must exceed 1, got {beta}")
    if A0 < 0:
        raise ValueError("A_0 must be nonnegative")


def _log_closed(M, lam, beta, log_A0, k, sign) -> float:
    if log_A0 == -math.inf:
        return -math.inf
    a = 1.0 / (beta - 1.0)
    log_base = log_A0 - _log_threshold(M, lam, beta)
    with np.errstate(over="ignore"):
        return _log_threshold(M, lam, beta) + sign * k * a * math.log(lam) + log_base * float(np.power(beta, k))


def _closed(M, lam, beta, A0, k, sign) -> float:
    _check_recurrence(M, lam, beta, A0)
    if A0 == 0:
        return 0.0
    log_val = _log_closed(M, lam, beta, math.log(A0), k, sign)
    if log_val > 709.0:
        return math.inf
    return math.exp(log_val) if log_val > -745.0 else 0.0


def log_recurrence_bound(M: float, lam: float, beta: float, log_A0: float, k: int, exact: bool = False) -> float:
    """Log of the printed bound (or, with ``exact``, of the exact solution) from ``log A_0``."""
    _check_recurrence(M, lam, beta, 0.0)
    return _log_closed(M, lam, beta, log_A0, k, -1.0 if exact else 1.0)


def recurrence_closed_form(M: float, lam: float, beta: float, A0: float, k: int) -> float:
    """Printed bound ``M^{-a} Lambda^{-a^2} Lambda^{k a} (M^a Lambda^{a^2} A_0)^{beta^k}``; ``inf`` on overflow."""
    return _closed(M, lam, beta, A0, k, +1.0)


def recurrence_exact(M: float, lam: float, beta: float, A0: float, k: int) -> float:
    """Exact solution of ``A_{k+1} = M Lambda^k A_k^beta`` (exponent ``-k a`` on Lambda)."""
    return _closed(M, lam, beta, A0, k, -1.0)


def iterate_recurrence(
    M: float, lam: float, beta: float, A0: float, K: int, log_A0: float | None = None
) -> np.ndarray:
    """``log A_k`` for ``k = 0..K`` of the equality recurrence, iterated in log space.

    ``log_A0`` replaces ``A0`` when the start is below the double range.
    Entries are ``-inf`` once ``A_0 = 0`` and saturate at ``+inf`` after overflow.
    """
    _check_recurrence(M, lam, beta, A0)
    out = np.empty(K + 1)
    if log_A0 is not None:
        out[0] = log_A0
    else:
        out[0] = math.log(A0) if A0 > 0 else -math.inf
    lm, ll = math.log(M), math.log(lam)
    for k in range(K):
        prev = out[k]
        out[k + 1] = prev if not math.isfinite(prev) else lm + k * ll + beta * prev
        if out[k + 1] > 1e300:
            out[k + 1 :] = math.inf
            break
    return out


def _a(q: float) -> float:
    return 1.0 / (beta_exponent(q) - 1.0)


def log_eta0(q: float, c_e: float = 1.0) -> float:
    """Natural log of :func:`eta0`; stays finite where ``eta0`` underflows near ``q = 6/5``."""
    _check_q(q)
    c_h = ch_constant()
    a = _a(q)
    inner = c_e / (3.0 * (c_q_iota(q, 2.0 / 3.0) + 2.0 ** (q + 1.0)) * sobolev_constant(q) ** 2)
    log2 = -5.0 - (7.0 + 12.0 * q) * a - 4.0 * a * a
    return math.log(c_h**2 / (1.0 + c_h)) + a * math.log(inner) + log2 * math.log(2.0)


def eta0(q: float, c_e: float = 1.0) -> float:
    """Threshold as printed: ``c_h^2/(1+c_h) (C_E/(3(C+2^{q+1})C_S^2))^a 2^{-5-(7+12q)a-4a^2}``."""
    return math.exp(log_eta0(q, c_e))


def eta0_from_threshold(q: float, c_e: float = 1.0) -> float:
    """Threshold implied by ``A_0 <= 16(1 + 1/c_h) int H_+`` and the recurrence threshold.

    Equals ``c_h^2/(1+c_h) (C_E/(3(C+2^{q+1})C_S^2))^a 2^{-5-(7+10q)a-(1+10q/3)a^2}``.
    """
    _check_q(q)
    c_h = ch_constant()
    thr = recurrence_threshold(recurrence_M(q, c_e), lambda_constant(q), beta_exponent(q))
    return c_h / (16.0 * (1.0 + c_h)) * thr


def D_constant(q: float, iota: float = 2.0 / 3.0) -> float:
    """The two-level iteration constant ``D(q, iota)`` as printed."""
    _check_q(q, Q_IMPROVED)
    c_h = ch_constant()
    g = gamma_exponent(q)
    cs = sobolev_constant(q)
    m = float(mu(2.0 ** (g / q) - 1.0))
    first = (
        2.0 ** (4.0 * q + iota) * cs ** (q * (1.0 + iota)) / m ** (q * q * (1.0 + iota) / 3.0 - q * iota)
        + 2.0 ** (4.0 * q) * cs**q / m ** (q * q / 3.0)
    )
    second = 2.0 ** (g + 3.0 + 4.0 * q) * cs**q / m ** (q + q * q / 3.0)
    return (4.0 * c_q_iota(q, iota) + 2.0 ** (q + 3.0)) / c_h * max(first, second)


def eta1_upper(q: float) -> float:
    """Admissibility bound ``(2 D(q, 2/3))^{-2/q}``."""
    return (2.0 * D_constant(q)) ** (-2.0 / q)


def eta1_final_condition(q: float, c_e: float = 1.0, eta1: float | None = None) -> dict:
    """Final smallness condition on ``eta_1`` against ``eta_0``.

    ``corrected`` is ``(eta_0 / (2^{gamma+3} C D))^{2/q}``, which is what makes
    ``2^{gamma+3} C D eta_1^{q/2} < eta_0``; ``printed`` multiplies instead of
    dividing.  Both are given for the printed and the derived ``eta_0``.
    """
    g = gamma_exponent(q)
    factor = 2.0 ** (g + 3.0) * c_q_iota(q, 2.0 / 3.0) * D_constant(q)
    out = {"q": q, "C_E": c_e, "eta1_upper": eta1_upper(q), "factor": factor}
    for name, e0 in (("printed_eta0", eta0(q, c_e)), ("derived_eta0", eta0_from_threshold(q, c_e))):
        out[name] = {
            "eta0": e0,
            "corrected": (e0 / factor) ** (2.0 / q),
            "printed": e0 ** (2.0 / q) * factor ** (2.0 / q),
        }
    out["admissible"] = min(out["eta1_upper"], out["printed_eta0"]["corrected"], out["derived_eta0"]["corrected"])
    if eta1 is not None:
        out["eta1"] = eta1
        out["satisfies_upper"] = bool(0 < eta1 < out["eta1_upper"])
        out["satisfies_final"] = bool(eta1 < out["printed_eta0"]["corrected"])
    return out


def _check_two_level(rho, alpha, M) -> None:
    if not 0.0 < rho < 0.5:
        raise ValueError(f"rho must lie in (0, 1/2), got {rho}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not M >= 1.0:
        raise ValueError(f"M must be >= 1, got {M}")


def two_level_bound(rho: float, alpha: float, M: float, n: int) -> float:
    """``max(2 rho, (2 rho)^{(1 - alpha^n)/(1 - alpha)} M^{alpha^n})``, bounding ``X_{2n}`` and ``X_{2n+1}``."""
    _check_two_level(rho, alpha, M)
    an = alpha**n
    return max(2.0 * rho, (2.0 * rho) ** ((1.0 - an) / (1.0 - alpha)) * M**an)


def worst_sequence(rho: float, alpha: float, X0: float, X1: float, length: int) -> np.ndarray:
    """``X_0..X_{length-1}`` of ``X_{n+1} = rho (max(1,X_n)^alpha + max(1,X_{n-1})^alpha)``."""
    if not 0.0 < rho < 0.5 or not 0.0 < alpha < 1.0:
        raise ValueError("need 0 < rho < 1/2 and 0 < alpha < 1")
    x = np.empty(max(length, 2))
    x[0], x[1] = X0, X1
    for n in range(1, len(x) - 1):
        x[n + 1] = rho * (max(1.0, x[n]) ** alpha + max(1.0, x[n - 1]) ** alpha)
    return x[:length]


# Series windows


class WindowError(ValueError):
    """The diagnostics series does not cover the requested time window."""


def unit_times(series: DiagnosticsSeries, time_scale: float | None = None) -> np.ndarray:
    t = series.times
    scale = float(t[-1]) if time_scale is None else float(time_scale)
    if not scale > 0:
        raise WindowError(f"time scale must be positive, got {scale}")
    return t / scale


def _clip_window(u: np.ndarray, y: np.ndarray, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    slack = 1e-12 * max(1.0, abs(b))
    if a < u[0] - slack or b > u[-1] + slack:
        raise WindowError(f"window [{a:.6g}, {b:.6g}] not covered by samples on [{u[0]:.6g}, {u[-1]:.6g}]")
    a, b = max(a, u[0]), min(b, u[-1])
    inside = (u > a) & (u < b)
    uu = np.concatenate(([a], u[inside], [b]))
    yy = np.concatenate(([np.interp(a, u, y)], y[inside], [np.interp(b, u, y)]))
    return uu, yy


def window_integral(u: np.ndarray, y: np.ndarray, a: float, b: float) -> float:
    """Trapezoid integral over ``[a, b]`` of the piecewise-linear interpolant of ``(u, y)``."""
    if b <= a:
        return 0.0
    uu, yy = _clip_window(u, y, a, b)
    return float(np.sum(0.5 * (yy[1:] + yy[:-1]) * np.diff(uu)))


def window_max(u: np.ndarray, y: np.ndarray, a: float, b: float) -> float:
    uu, yy = _clip_window(u, y, a, b)
    return float(np.max(yy))


def energy_Ak(
    series: DiagnosticsSeries, q: float, k: int, c_e: float = 1.0, time_scale: float | None = None
) -> float:
    """``A_k = sup_{t >= t^k} (c_h/2) int (f_k^+)^q + (C_E/4) int_{t^k}^1 (int |grad f_k^+|^q)^{2/q}``."""
    u = unit_times(series, time_scale)
    kappa = kappa_level(q, k)
    mass = series.level("mu_mass", q, kappa)
    grad = series.level("mu_grad", q, kappa)
    tk = t_level(k)
    return 0.5 * ch_constant() * window_max(u, mass, tk, 1.0) + 0.25 * c_e * window_integral(u, grad, tk, 1.0)


def energies(series: DiagnosticsSeries, q: float, K: int, c_e: float = 1.0, time_scale: float | None = None):
    return np.array([energy_Ak(series, q, k, c_e, time_scale) for k in range(K + 1)])


@dataclass
class DeGiorgiSequence:
    q: float
    K: int
    t_levels: list[float]
    kappa_levels: list[float]
    beta: float
    Lambda: float
    M: float
    threshold: float
    c_e: float = 1.0
    energies: list[float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def levels(q: float, K: int, c_e: float = 1.0) -> DeGiorgiSequence:
    _check_q(q)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    M = recurrence_M(q, c_e)
    lam = lambda_constant(q)
    beta = beta_exponent(q)
    return DeGiorgiSequence(
        q=q,
        K=K,
        t_levels=[t_level(k) for k in range(K + 1)],
        kappa_levels=[kappa_level(q, k) for k in range(K + 1)],
        beta=beta,
        Lambda=lam,
        M=M,
        threshold=recurrence_threshold(M, lam, beta),
        c_e=c_e,
    )


def degiorgi_report(
    series: DiagnosticsSeries, q: float, K: int, c_e: float = 1.0, time_scale: float | None = None
) -> dict:
    """Sequence, measured ``A_k`` and the threshold decisions for one run."""
    seq = levels(q, K, c_e)
    seq.energies = energies(series, q, K, c_e, time_scale).tolist()
    u = unit_times(series, time_scale)
    hp_half = series.column("H_plus:1") if series.has("H_plus:1") else None
    report = {"sequence": seq.to_dict(), "time_scale": float(series.times[-1] if time_scale is None else time_scale)}
    report["A0_below_threshold"] = bool(seq.energies[0] < seq.threshold)
    report["eta0_printed"] = eta0(q, c_e)
    report["eta0_derived"] = eta0_from_threshold(q, c_e)
    if hp_half is not None and u[0] <= 0.125:
        report["int_H_plus_1_over_[1/8,1]"] = window_integral(u, hp_half, 0.125, 1.0)
    if q > Q_IMPROVED[0]:
        report["eta1"] = eta1_final_condition(q, c_e)
    return report


# Scaling


@dataclass(frozen=True)
class ScalingTransform:
    """``f_n(t, v) = eps^gamma f(1 + eps^gamma (t - 1), eps v)`` with ``eps = 2^{-n}``."""

    n: int
    q: float

    @property
    def epsilon(self) -> float:
        return 2.0**-self.n

    @property
    def gamma(self) -> float:
        return TruncationCalc(self.q).gamma

    @property
    def time_factor(self) -> float:
        return self.epsilon**self.gamma

    def source_time(self, t):
        """Original time ``T = 1 + eps^gamma (t - 1)`` feeding rescaled time ``t``."""
        return 1.0 + self.time_factor * (np.asarray(t, dtype=np.float64) - 1.0)

    def target_time(self, T):
        return 1.0 + (np.asarray(T, dtype=np.float64) - 1.0) / self.time_factor

    def compose(self, other: "ScalingTransform") -> "ScalingTransform":
        if other.q != self.q:
            raise ValueError("cannot compose transforms with different q")
        return ScalingTransform(self.n + other.n, self.q)


def _trilinear(field_: DistributionField, points: np.ndarray) -> np.ndarray:
    """Periodic trilinear interpolation at ``points`` of shape ``(3, ...)``."""
    g = field_.grid
    pos = (points + g.half_width) / g.spacing
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    out = np.zeros(points.shape[1:])
    vals = field_.values
    N = g.points
    for dx in (0, 1):
        wx = frac[0] if dx else 1.0 - frac[0]
        ix = (base[0] + dx) % N
        for dy in (0, 1):
            wy = frac[1] if dy else 1.0 - frac[1]
            iy = (base[1] + dy) % N
            for dz in (0, 1):
                wz = frac[2] if dz else 1.0 - frac[2]
                iz = (base[2] + dz) % N
                out += wx * wy * wz * vals[ix, iy, iz]
    return out


def rescale_field(
    field_: DistributionField, n: int, q: float, target: GridSpec | None = None
) -> DistributionField:
    """Spatial part of the scaling at the snapshot's own time.

    Without ``target`` the result lives on the dilated grid ``(L/eps, N)``,
    whose nodes are exactly ``v = V/eps``: an exact relabeling.  With a
    target grid the field is trilinearly interpolated at ``eps v``; points
    outside the source box read the periodic image.
    """
    tr = ScalingTransform(n, q)
    eps = tr.epsilon
    src = field_.grid
    time = float(tr.target_time(field_.time))
    if target is None:
        grid = GridSpec(src.half_width / eps, src.points, src.order)
        return DistributionField(grid, tr.time_factor * field_.values, time)
    pts = eps * np.stack(target.coordinates)
    return DistributionField(target, tr.time_factor * _trilinear(field_, pts), time)


def rescale_series(
    snapshots: list[DistributionField],
    n: int,
    q: float,
    times=None,
    target: GridSpec | None = None,
) -> list[DistributionField]:
    """Rescale a snapshot series; with ``times`` the source is interpolated linearly in time.

    ``n = 0`` without ``times`` or ``target`` returns the snapshots unchanged.
    """
    if not snapshots:
        return []
    if n == 0 and times is None and target is None:
        return list(snapshots)
    tr = ScalingTransform(n, q)
    if times is None:
        return [rescale_field(s, n, q, target) for s in snapshots]
    src_t = np.array([s.time for s in snapshots])
    out = []
    for t in np.atleast_1d(times):
        T = float(tr.source_time(t))
        if T < src_t[0] - 1e-12 or T > src_t[-1] + 1e-12:
            raise WindowError(f"time {t:.6g} maps to {T:.6g}, outside [{src_t[0]:.6g}, {src_t[-1]:.6g}]")
        i = int(np.clip(np.searchsorted(src_t, T) - 1, 0, len(src_t) - 2)) if len(src_t) > 1 else 0
        if len(src_t) == 1:
            vals = snapshots[0].values
        else:
            w = (T - src_t[i]) / (src_t[i + 1] - src_t[i])
            vals = (1.0 - w) * snapshots[i].values + w * snapshots[i + 1].values
        src = DistributionField(snapshots[0].grid, vals, T)
        out.append(rescale_field(src, n, q, target))
    return out


def transform_negligible(intervals, n: int, q: float) -> list[tuple[float, float]]:
    """``N_n = {t : 1 + eps^gamma (t - 1) in N}`` for ``N`` a union of intervals."""
    tr = ScalingTransform(n, q)
    return [(float(tr.target_time(a)), float(tr.target_time(b))) for a, b in intervals]


def improved_dg_criterion(
    series: DiagnosticsSeries,
    q: float,
    eta1: float,
    j_range: tuple[int, int] = (0, 6),
    end: float = 1.0,
    time_scale: float | None = None,
) -> dict:
    """``V_j = eps^{gamma-3} int_{end-eps^gamma}^{end} D(t, eps^{-gamma}) dt`` on ``eps = 2^{-j}``.

    ``D(t, kappa)`` is the recorded level-set dissipation.  Scales whose
    window leaves the recorded interval are skipped.  The limsup is
    estimated by the max over the later half of the usable scales.
    """
    _check_q(q, Q_IMPROVED)
    g = gamma_exponent(q)
    u = unit_times(series, time_scale)
    values = {}
    for j in range(j_range[0], j_range[1] + 1):
        eps = 2.0**-j
        width = eps**g
        if end - width < u[0] - 1e-12 or end > u[-1] + 1e-12:
            continue
        D = series.level("levelset", q, eps**-g)
        values[j] = eps ** (g - 3.0) * window_integral(u, D, end - width, end)
    js = sorted(values)
    tail = js[len(js) // 2 :]
    limsup = max((values[j] for j in tail), default=0.0)
    return {
        "q": q,
        "eta1": eta1,
        "end": end,
        "values": {str(j): values[j] for j in js},
        "tail": tail,
        "limsup": limsup,
        "passes": bool(limsup < eta1),
    }


def scaled_identities(field_: DistributionField, n: int, q: float, kappa: float = 1.0, target: GridSpec | None = None) -> dict:
    """Mass and truncated-entropy scaling identities for one field; returns relative errors."""
    tr = ScalingTransform(n, q)
    out_field = rescale_field(field_, n, q, target)
    fac = tr.epsilon ** (tr.gamma - 3.0)
    m_src = float(np.sum(field_.values) * field_.grid.cell_volume)
    m_dst = float(np.sum(out_field.values) * out_field.grid.cell_volume)
    h_src = float(np.sum(kappa * h_plus(field_.values / kappa)) * field_.grid.cell_volume)
    k2 = tr.time_factor * kappa
    h_dst = float(np.sum(k2 * h_plus(out_field.values / k2)) * out_field.grid.cell_volume)
    rel = lambda a, b: abs(a - b) / max(abs(b), 1e-300)
    return {
        "n": n,
        "q": q,
        "kappa": kappa,
        "mass": m_dst,
        "mass_expected": fac * m_src,
        "mass_rel_error": rel(m_dst, fac * m_src),
        "h_plus": h_dst,
        "h_plus_expected": fac * h_src,
        "h_plus_rel_error": rel(h_dst, fac * h_src) if h_src > 0 else abs(h_dst),
    }


__all__.append("scaled_identities")
