"""Truncated, mollified and Gaussian-floored initial data.

``prepare(f_in, n)`` builds

    f^n     = zeta_n * (xi_n f_in)
    f~^n    = f^n + (1/n) exp(-|v|^2/2)

with ``xi_n(v) = xi(v/n)`` and ``zeta_n(z) = n^3 xi(n z)/||xi||_1``, where
``xi`` is a smooth radial bump equal to 1 on the unit ball and 0 outside
radius 2, and checks the comparison inequalities this construction is
meant to satisfy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .grid import DistributionField, GridSpec, integrate, read_snapshot, smooth_step

__all__ = [
    "smooth_bump",
    "cutoff",
    "mollifier",
    "mollify",
    "gaussian_floor",
    "LedgerEntry",
    "PreparedInitialData",
    "prepare",
    "maxwellian",
    "make_initial",
]


def smooth_bump(radius_inner: float, radius_outer: float):
    """Radial bump: 1 for ``r <= radius_inner``, 0 for ``r >= radius_outer``, monotone between.

    Returns a function of the radius (scalar or array).
    """
    if not 0 < radius_inner < radius_outer:
        raise ValueError(f"need 0 < radius_inner < radius_outer, got {radius_inner}, {radius_outer}")
    width = radius_outer - radius_inner

    def bump(r):
        return 1.0 - smooth_step((np.asarray(r, dtype=np.float64) - radius_inner) / width)

    return bump


_XI = smooth_bump(1.0, 2.0)


def cutoff(grid: GridSpec, n: int) -> np.ndarray:
    """``xi_n(v) = xi(v/n)`` sampled at the nodes."""
    return _XI(np.sqrt(grid.speed_squared) / n)


def mollifier(grid: GridSpec, n: int) -> np.ndarray:
    """``zeta_n`` on minimum-image offsets, normalized to unit discrete mass.

    When the support radius ``2/n`` is below the spacing only the origin
    survives and the mollifier is the discrete delta.
    """
    zx, zy, zz = grid.offsets
    kern = _XI(n * np.sqrt(zx * zx + zy * zy + zz * zz))
    return kern / (kern.sum() * grid.cell_volume)


def mollify(grid: GridSpec, values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Circular convolution ``kernel * values`` on the grid.

    Output below the FFT round-off level ``1e-14 * max|values|`` is set to 0:
    that noise is rough on the grid scale and poisons ``grad log f`` in the
    tails, where the Gaussian floor should be the only contribution.
    """
    out = np.fft.irfftn(np.fft.rfftn(kernel) * np.fft.rfftn(values), s=grid.shape, axes=(0, 1, 2))
    out *= grid.cell_volume
    noise = 1e-14 * float(np.max(np.abs(values), initial=0.0)) * float(np.sum(np.abs(kernel)) * grid.cell_volume)
    return np.where(out > noise, out, 0.0)


def gaussian_floor(grid: GridSpec, n: int) -> np.ndarray:
    return np.exp(-0.5 * grid.speed_squared) / n


@dataclass(frozen=True)
class LedgerEntry:
    name: str
    lhs: float
    rhs: float
    slack: float
    holds: bool
    note: str = ""


@dataclass(frozen=True, eq=False)
class PreparedInitialData:
    n: int
    base: DistributionField
    mollified: DistributionField
    floored: DistributionField
    ledger: tuple[LedgerEntry, ...] = field(default_factory=tuple)
    energy_constant: float = 0.0
    mollifier_second_moment: float = 0.0

    @property
    def all_hold(self) -> bool:
        return all(e.holds for e in self.ledger)

    def ledger_dict(self) -> dict:
        return {
            "n": self.n,
            "energy_constant": self.energy_constant,
            "mollifier_second_moment": self.mollifier_second_moment,
            "all_hold": self.all_hold,
            "entries": [asdict(e) for e in self.ledger],
        }


def _plus_log_moment(grid: GridSpec, values: np.ndarray, log_of: np.ndarray | None = None) -> float:
    """``int values (ln log_of)_+`` with ``log_of`` defaulting to ``values``."""
    target = values if log_of is None else log_of
    lp = np.where(target > 1.0, np.log(np.where(target > 1.0, target, 1.0)), 0.0)
    return float(np.sum(values * lp) * grid.cell_volume)


def _entry(name: str, lhs: float, rhs: float, tol: float, note: str = "") -> LedgerEntry:
    slack = rhs - lhs
    return LedgerEntry(name, lhs, rhs, slack, bool(slack >= -tol * max(1.0, abs(rhs))), note)


def prepare(f_in: DistributionField, n: int, tol: float = 1e-12) -> PreparedInitialData:
    """Truncate, mollify and floor ``f_in`` at index ``n`` and record the comparison ledger.

    A zero field is accepted; it yields ``f^n = 0`` and the bare floor.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    grid = f_in.grid
    base = f_in.values
    if not np.all(np.isfinite(base)):
        raise ValueError("initial field contains non-finite values")
    if np.any(base < 0):
        bad = tuple(int(i) for i in np.argwhere(base < 0)[0])
        raise ValueError(f"initial field is negative at node {bad}")

    zeta = mollifier(grid, n)
    mollified = mollify(grid, cutoff(grid, n) * base, zeta)
    floor = gaussian_floor(grid, n)
    floored = mollified + floor

    v2 = grid.speed_squared
    zx, zy, zz = grid.offsets
    m2_zeta = float(np.sum(zeta * (zx * zx + zy * zy + zz * zz)) * grid.cell_volume)

    m_in = integrate(grid, base)
    e_in = integrate(grid, base, v2)
    s_in = _plus_log_moment(grid, base)
    m_n = integrate(grid, mollified)
    e_n = integrate(grid, mollified, v2)
    s_n = _plus_log_moment(grid, mollified)
    m_floor = integrate(grid, floor)
    e_floor = integrate(grid, floor, v2)

    energy_constant = n * n * max(0.0, e_n - 2.0 * e_in) / m_in if m_in > 0 else 0.0

    ln_sum = np.where(floored > 1.0, np.log(np.where(floored > 1.0, floored, 1.0)), 0.0)
    ln_a = np.where(mollified > 1.0, np.log(np.where(mollified > 1.0, mollified, 1.0)), 0.0)
    pointwise = float(np.min(ln_a + floor - ln_sum))

    combined_lhs = m_n + m_floor + e_n + e_floor + _plus_log_moment(grid, floored)
    combined_rhs = (
        m_in + 2.0 * e_in + s_in
        + (2.0 * m2_zeta + 2.0 / n) * m_in
        + (1.0 + 1.0 / n) * m_floor
        + e_floor
    )
    log_sum_lhs = _plus_log_moment(grid, mollified, floored)
    log_sum_rhs = s_n + float(np.sum(mollified * floor) * grid.cell_volume)

    ledger = (
        _entry("mass_nonincrease", m_n, m_in, tol),
        _entry(
            "energy_bound",
            e_n,
            2.0 * e_in + 2.0 * m2_zeta * m_in,
            tol,
            f"O(1/n^2) term = 2 * second moment of the mollifier = {2.0 * m2_zeta:.6g}",
        ),
        _entry("entropy_plus_nonincrease", s_n, s_in, tol),
        LedgerEntry(
            "log_sum",
            log_sum_lhs,
            log_sum_rhs,
            log_sum_rhs - log_sum_lhs,
            bool(pointwise >= -tol) and log_sum_rhs - log_sum_lhs >= -tol * max(1.0, log_sum_rhs),
            f"min over nodes of (ln a)_+ + b - (ln(a+b))_+ = {pointwise:.6g}",
        ),
        _entry("combined_bound", combined_lhs, combined_rhs, tol),
    )
    return PreparedInitialData(
        n=n,
        base=f_in,
        mollified=DistributionField(grid, mollified, f_in.time),
        floored=DistributionField(grid, floored, f_in.time),
        ledger=ledger,
        energy_constant=energy_constant,
        mollifier_second_moment=m2_zeta,
    )


def maxwellian(grid: GridSpec, mass: float = 1.0, temperature: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    vx, vy, vz = grid.coordinates
    c = np.asarray(center, dtype=np.float64)
    r2 = (vx - c[0]) ** 2 + (vy - c[1]) ** 2 + (vz - c[2]) ** 2
    return mass * np.exp(-0.5 * r2 / temperature) / (2.0 * math.pi * temperature) ** 1.5


def make_initial(spec: dict, grid: GridSpec) -> DistributionField:
    """Build an initial field from a JSON-style description.

    Types: ``maxwellian`` (mass, temperature, center), ``bimodal`` (mass,
    temperature, separation along v_x), ``bump`` (amplitude, radius, width),
    ``snapshot`` (path).
    """
    kind = spec.get("type", "maxwellian")
    if kind == "maxwellian":
        vals = maxwellian(grid, spec.get("mass", 1.0), spec.get("temperature", 1.0), spec.get("center", (0, 0, 0)))
    elif kind == "bimodal":
        s = 0.5 * spec.get("separation", 3.0)
        m = 0.5 * spec.get("mass", 1.0)
        t = spec.get("temperature", 0.5)
        vals = maxwellian(grid, m, t, (s, 0, 0)) + maxwellian(grid, m, t, (-s, 0, 0))
    elif kind == "bump":
        r = spec.get("radius", 1.0)
        bump = smooth_bump(r, r + spec.get("width", 0.5))
        vals = spec.get("amplitude", 1.0) * bump(np.sqrt(grid.speed_squared))
    elif kind == "snapshot":
        field_ = read_snapshot(Path(spec["path"]))
        if field_.grid.points != grid.points or field_.grid.half_width != grid.half_width:
            raise ValueError(f"snapshot grid {field_.grid} does not match run grid {grid}")
        vals = field_.values
    else:
        raise ValueError(f"unknown initial data type {kind!r}")
    return DistributionField(grid, vals)
