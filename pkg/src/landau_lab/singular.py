"""Candidate singular times, Vitali selection and dimension estimates.

For a time ``tau`` and a dyadic scale ``eps = 2^{-j}`` the window value is

    V_j(tau) = eps^{gamma-3} int_{tau-eps^gamma}^{tau} D(t, eps^{-gamma}) dt,

with ``D(t, kappa) = (int |grad (f^{1/q} - kappa^{1/q})_+|^q)^{2/q}``.  ``tau`` is
flagged when the max of ``V_j`` over the finer half of the usable scales
reaches ``eta1`` (the improved criterion fails), and ``eps(tau)`` is the
coarsest scale with ``V_j >= eta1/2``.  Since ``D(t, kappa) <= D(t, 1)`` for
``kappa >= 1``, the level-1 column gives a cheap upper bound used to skip
times that cannot fail.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .degiorgi import Q_IMPROVED, gamma_exponent
from .functionals import TruncationCalc
from .series import DiagnosticsSeries

__all__ = [
    "Flag",
    "SingularReport",
    "LevelDissipation",
    "flag_candidates",
    "vitali_select",
    "s_content",
    "dimension_bound",
    "box_counting_dimension",
    "covering_number",
    "dyadic_patch",
    "cantor_flags",
    "build_report",
    "DEFAULT_S_GRID",
    "exponent_map",
]

DEFAULT_S_GRID = tuple(np.round(np.linspace(0.0, 3.0, 61), 12))


def exponent_map(q):
    """``s(q) = q/(5q-6)`` on the closed range ``[4/3, 2]``; exact for Fractions."""
    if not Q_IMPROVED[0] - 1e-12 <= q <= Q_IMPROVED[1]:
        raise ValueError(f"q = {q} outside [4/3, 2]")
    return q / (5 * q - 6)


@dataclass(frozen=True)
class Flag:
    time: float
    epsilon: float
    radius: float
    value: float = math.nan


class LevelDissipation:
    """Window integrals of ``D(t, kappa)`` from cumulative integrals on a time grid.

    ``cumulative(kappa)`` must return ``int_{t_0}^{t_i} D(s, kappa) ds`` at the
    sample times; window ends between samples are linearly interpolated.
    """

    def __init__(self, times, cumulative):
        self.times = np.asarray(times, dtype=np.float64)
        if self.times.ndim != 1 or len(self.times) < 2:
            raise ValueError("need at least two sample times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        self._cumulative = cumulative
        self._cache: dict[float, np.ndarray] = {}

    @classmethod
    def from_series(cls, series: DiagnosticsSeries, q: float, time_scale: float = 1.0) -> "LevelDissipation":
        t = series.times / time_scale

        def cumulative(kappa):
            d = series.level("levelset", q, kappa)
            return np.concatenate(([0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(t))))

        src = cls(t, cumulative)
        src.has_level = lambda kappa: series.has(f"levelset:{q!r}:{kappa!r}")
        return src

    @classmethod
    def from_antiderivative(cls, times, antiderivative) -> "LevelDissipation":
        """``antiderivative(t, kappa)`` is any primitive of ``D(., kappa)`` in ``t``."""
        times = np.asarray(times, dtype=np.float64)
        return cls(times, lambda kappa: antiderivative(times, kappa) - antiderivative(times[:1], kappa)[0])

    def has_level(self, kappa: float) -> bool:
        return True

    def _cum(self, kappa: float) -> np.ndarray:
        key = float(kappa)
        if key not in self._cache:
            self._cache[key] = np.asarray(self._cumulative(key), dtype=np.float64)
        return self._cache[key]

    def integral(self, kappa: float, a: float, b: float) -> float:
        c = self._cum(kappa)
        return float(np.interp(b, self.times, c) - np.interp(a, self.times, c))


def _usable_scales(source, tau, t0, resolution, gamma, j_range):
    out = []
    for j in range(j_range[0], j_range[1] + 1):
        width = 2.0 ** (-j * gamma)
        if width < resolution:
            break
        if tau - width >= t0 - 1e-12 and source.has_level(2.0 ** (j * gamma)):
            out.append(j)
    return out


def flag_candidates(
    source: LevelDissipation,
    q: float,
    eta1: float,
    j_range: tuple[int, int] = (0, 12),
    prune: bool = True,
) -> list[Flag]:
    """Flag sample times whose improved-criterion limsup reaches ``eta1``."""
    if not Q_IMPROVED[0] < q < Q_IMPROVED[1]:
        raise ValueError(f"q = {q} outside (4/3, 2)")
    if not eta1 > 0:
        raise ValueError(f"eta1 must be positive, got {eta1}")
    times = source.times
    if len(times) == 0:
        raise ValueError("empty series")
    g = gamma_exponent(q)
    resolution = float(np.min(np.diff(times)))
    can_prune = prune and source.has_level(1.0)
    flags = []
    for tau in times:
        js = _usable_scales(source, tau, times[0], resolution, g, j_range)
        if not js:
            continue
        tail = js[len(js) // 2 :]
        scale = {j: 2.0 ** (-j * (g - 3.0)) for j in js}
        width = {j: 2.0 ** (-j * g) for j in js}
        if can_prune:
            upper = max(scale[j] * source.integral(1.0, tau - width[j], tau) for j in tail)
            if upper < eta1:
                continue
        values = {j: scale[j] * source.integral(2.0 ** (j * g), tau - width[j], tau) for j in js}
        limsup = max(values[j] for j in tail)
        if limsup < eta1:
            continue
        coarse = [j for j in js if values[j] >= 0.5 * eta1]
        j_star = min(coarse)
        eps = 2.0**-j_star
        flags.append(Flag(float(tau), eps, eps**g, float(limsup)))
    return flags


@dataclass
class SingularReport:
    q: float
    eta1: float
    flags: list[Flag]
    selected: list[int]
    s_grid: tuple[float, ...] = DEFAULT_S_GRID
    contents: list[float] = field(default_factory=list)
    box_dimension: float = 0.0
    box_scales: list[float] = field(default_factory=list)
    box_counts: list[int] = field(default_factory=list)
    budget: float | None = None
    dimension_bound: float = 0.0
    window: int = 0

    @property
    def s_analytic(self) -> float:
        return TruncationCalc(self.q).hausdorff_exponent

    def selected_flags(self) -> list[Flag]:
        return [self.flags[i] for i in self.selected]

    def dilated(self) -> list[tuple[float, float]]:
        return [(f.time - 5.0 * f.radius, f.time + 5.0 * f.radius) for f in self.selected_flags()]

    def disjoint(self) -> bool:
        sel = self.selected_flags()
        for a in range(len(sel)):
            for b in range(a + 1, len(sel)):
                if abs(sel[a].time - sel[b].time) < sel[a].radius + sel[b].radius:
                    return False
        return True

    def covers(self) -> bool:
        dil = self.dilated()
        return all(any(lo <= f.time <= hi for lo, hi in dil) for f in self.flags)

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "eta1": self.eta1,
            "s_analytic": self.s_analytic,
            "flags": [asdict(f) for f in self.flags],
            "selected": list(self.selected),
            "dilated": [list(iv) for iv in self.dilated()],
            "disjoint": self.disjoint(),
            "covers": self.covers(),
            "s_grid": list(self.s_grid),
            "contents": list(self.contents),
            "box_dimension": self.box_dimension,
            "box_scales": list(self.box_scales),
            "box_counts": list(self.box_counts),
            "budget": self.budget,
            "dimension_bound": self.dimension_bound,
        }

    def intervals_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "epsilon", "radius", "selected", "dilated_lo", "dilated_hi"])
        chosen = set(self.selected)
        for i, f in enumerate(self.flags):
            w.writerow([format(f.time, ".17g"), format(f.epsilon, ".17g"), format(f.radius, ".17g"), int(i in chosen),
                        format(f.time - 5 * f.radius, ".17g"), format(f.time + 5 * f.radius, ".17g")])
        return buf.getvalue()


def vitali_select(flags: list[Flag]) -> list[int]:
    """Greedy largest-radius-first selection of pairwise disjoint ``(tau - r, tau + r)``."""
    order = sorted(range(len(flags)), key=lambda i: (-flags[i].radius, flags[i].time, i))
    chosen: list[int] = []
    for i in order:
        fi = flags[i]
        if all(abs(fi.time - flags[j].time) >= fi.radius + flags[j].radius for j in chosen):
            chosen.append(i)
    return sorted(chosen, key=lambda i: (flags[i].time, i))


def s_content(report: SingularReport, s: float) -> float:
    """``sum (10 r_j)^s`` over the selected intervals (diameters of the 5x dilations)."""
    return float(sum((10.0 * f.radius) ** s for f in report.selected_flags()))


def dimension_bound(report: SingularReport, budget: float) -> float:
    """Smallest probe exponent whose content is within ``budget``; 0 for an empty report."""
    if not report.selected:
        return 0.0
    for s in report.s_grid:
        if s_content(report, s) <= budget:
            return float(s)
    return math.inf


def _union(intervals):
    merged = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return merged


def covering_number(merged, delta: float) -> int:
    """Fewest closed intervals of length ``delta`` covering a sorted disjoint union.

    Greedy placement from the left is optimal in one dimension.
    """
    count, edge = 0, -math.inf
    for lo, hi in merged:
        if hi <= edge:
            continue
        start = max(lo, edge)
        k = max(1, math.ceil((hi - start) / delta - 1e-12))
        count += k
        edge = start + k * delta
    return count


def box_counting_dimension(intervals, octaves: int = 6, first: int = 2):
    """Least-squares slope of ``log N(delta)`` against ``log 1/delta``.

    ``N`` is the minimal number of ``delta``-intervals covering the union and
    ``delta = span 2^{-k}`` for ``k = first .. first + octaves - 1``.  A fixed
    mesh anchored at the left end aliases against self-similar sets whose
    ratio is not a power of two, which the minimal cover avoids.
    Returns ``(dimension, deltas, counts)``.
    """
    merged = _union(intervals)
    if not merged:
        return 0.0, [], []
    span = merged[-1][1] - merged[0][0]
    if span <= 0:
        return 0.0, [], []
    deltas = [span * 2.0**-k for k in range(first, first + octaves)]
    counts = [covering_number(merged, d) for d in deltas]
    x = np.log(1.0 / np.array(deltas))
    y = np.log(np.array(counts, dtype=np.float64))
    slope = float(np.polyfit(x, y, 1)[0])
    return slope, deltas, counts


def build_report(
    flags: list[Flag],
    q: float,
    eta1: float,
    budget: float | None = None,
    s_grid=DEFAULT_S_GRID,
    octaves: int = 6,
    window: int = 0,
) -> SingularReport:
    report = SingularReport(q=q, eta1=eta1, flags=list(flags), selected=vitali_select(flags), s_grid=tuple(s_grid))
    report.contents = [s_content(report, s) for s in report.s_grid]
    dim, deltas, counts = box_counting_dimension(report.dilated(), octaves)
    report.box_dimension, report.box_scales, report.box_counts = dim, deltas, counts
    report.budget = budget
    report.window = window
    report.dimension_bound = dimension_bound(report, budget) if budget is not None else 0.0
    return report


def dyadic_patch(reports: dict[int, SingularReport], budget: float | None = None, octaves: int = 6) -> SingularReport:
    """Map window ``m`` reports from ``[1, 2]`` to ``[2^{-m}, 2^{1-m}]`` and merge them."""
    if not reports:
        raise ValueError("no reports to patch")
    grids = {tuple(r.s_grid) for r in reports.values()}
    if len(grids) != 1:
        raise ValueError("reports use different probe exponent grids")
    s_grid = grids.pop()
    first = next(iter(reports.values()))
    flags = []
    contents = np.zeros(len(s_grid))
    for m in sorted(reports):
        r = reports[m]
        if r.q != first.q:
            raise ValueError("reports use different q")
        fac = 2.0**-m
        for f in r.selected_flags():
            flags.append(Flag(fac * f.time, f.epsilon, fac * f.radius, f.value))
        contents += np.array(r.contents) * fac ** np.array(s_grid)
    merged = SingularReport(q=first.q, eta1=first.eta1, flags=flags, selected=list(range(len(flags))), s_grid=s_grid)
    merged.contents = contents.tolist()
    dim, deltas, counts = box_counting_dimension(merged.dilated(), octaves)
    merged.box_dimension, merged.box_scales, merged.box_counts = dim, deltas, counts
    merged.budget = budget
    merged.dimension_bound = dimension_bound(merged, budget) if budget is not None else 0.0
    return merged


def cantor_flags(depth: int = 8, start: float = 1.0, length: float = 1.0) -> list[Flag]:
    """Middle-thirds Cantor intervals at ``depth`` as flags centred on each interval."""
    intervals = [(start, start + length)]
    for _ in range(depth):
        nxt = []
        for a, b in intervals:
            third = (b - a) / 3.0
            nxt += [(a, a + third), (b - third, b)]
        intervals = nxt
    return [Flag(0.5 * (a + b), math.nan, 0.5 * (b - a) / 5.0) for a, b in intervals]
