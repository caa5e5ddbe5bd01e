"""Periodic Cartesian velocity grid and the finite-difference calculus on it.

Nodes sit at ``v_i = -L + i h`` with ``h = 2L/N`` along each axis, so the
origin is the node ``N/2``.  Every derivative uses one antisymmetric
centered stencil, which makes the discrete divergence the exact negative
adjoint of the discrete gradient: summation by parts holds to round-off
and mass is conserved by any flux-form update.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "GridSpec",
    "DistributionField",
    "MatrixField",
    "MATRIX_COMPONENTS",
    "integrate",
    "smooth_step",
    "seam_mask",
    "derivative",
    "gradient",
    "divergence",
    "laplacian",
    "second_derivative",
    "hessian",
    "sqrt_gradient",
    "log_gradient",
    "write_snapshot",
    "read_snapshot",
]

# Upper-triangular storage order for symmetric 3x3 matrix fields.
MATRIX_COMPONENTS: tuple[tuple[int, int], ...] = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

_STENCILS = {
    2: ((1, 0.5),),
    4: ((1, 2.0 / 3.0), (2, -1.0 / 12.0)),
}

# compact second derivative (center weight, then (shift, weight) pairs applied symmetrically)
_SECOND = {
    2: (-2.0, ((1, 1.0),)),
    4: (-2.5, ((1, 4.0 / 3.0), (2, -1.0 / 12.0))),
}


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the cube ``[-L, L)^3``.

    Parameters
    ----------
    half_width : float
        Box half-width ``L``.
    points : int
        Nodes per axis ``N``; must be even and at least 4.
    order : int
        Accuracy order of the centered stencil (2 or 4).
    """

    half_width: float
    points: int
    order: int = 4

    def __post_init__(self) -> None:
        if not (self.half_width > 0 and np.isfinite(self.half_width)):
            raise ValueError(f"half_width must be positive and finite, got {self.half_width}")
        if int(self.points) != self.points or self.points < 4 or self.points % 2:
            raise ValueError(f"points must be an even integer >= 4, got {self.points}")
        if self.order not in _STENCILS:
            raise ValueError(f"order must be one of {sorted(_STENCILS)}, got {self.order}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.points

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.points,) * 3

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** 3

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.points)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.axis, self.axis, self.axis, indexing="ij"))

    @cached_property
    def speed_squared(self) -> np.ndarray:
        vx, vy, vz = self.coordinates
        return vx * vx + vy * vy + vz * vz

    @cached_property
    def offset_axis(self) -> np.ndarray:
        """Minimum-image offsets ``j h`` in FFT order; the Nyquist offset is ``-L``."""
        return np.fft.fftfreq(self.points) * self.points * self.spacing

    @cached_property
    def offsets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = self.offset_axis
        return tuple(np.meshgrid(a, a, a, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.spacing)
        return tuple(np.meshgrid(k, k, k, indexing="ij"))

    def to_dict(self) -> dict:
        return {"L": self.half_width, "N": self.points, "order": self.order}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(float(data["L"]), int(data["N"]), int(data.get("order", 4)))


@dataclass(frozen=True, eq=False)
class DistributionField:
    """Nonnegative density sampled on a grid.  Values are read-only."""

    grid: GridSpec
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if np.any(values < 0):
            bad = tuple(int(i) for i in np.argwhere(values < 0)[0])
            raise ValueError(f"distribution is negative at node {bad}: {values[bad]:.3g}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray, time: float | None = None) -> "DistributionField":
        return DistributionField(self.grid, values, self.time if time is None else time)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Symmetric 3x3 matrix per node, stored as six components (xx, xy, xz, yy, yz, zz)."""

    grid: GridSpec
    components: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        comps = np.asarray(self.components, dtype=np.float64)
        if comps.shape != (6,) + self.grid.shape:
            raise ValueError(f"expected components of shape (6, *grid), got {comps.shape}")
        object.__setattr__(self, "components", comps)

    def entry(self, i: int, j: int) -> np.ndarray:
        i, j = min(i, j), max(i, j)
        return self.components[MATRIX_COMPONENTS.index((i, j))]

    def full(self) -> np.ndarray:
        """Return a ``(N, N, N, 3, 3)`` array."""
        out = np.empty(self.grid.shape + (3, 3))
        for c, (i, j) in enumerate(MATRIX_COMPONENTS):
            out[..., i, j] = self.components[c]
            out[..., j, i] = self.components[c]
        return out

    def trace(self) -> np.ndarray:
        return self.components[0] + self.components[3] + self.components[5]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.full())

    def max_eigenvalue(self) -> np.ndarray:
        """Largest eigenvalue per node by the trigonometric closed form for symmetric 3x3."""
        a11, a12, a13, a22, a23, a33 = self.components
        q = (a11 + a22 + a33) / 3.0
        p1 = a12 * a12 + a13 * a13 + a23 * a23
        d1, d2, d3 = a11 - q, a22 - q, a33 - q
        p = np.sqrt((d1 * d1 + d2 * d2 + d3 * d3 + 2.0 * p1) / 6.0)
        safe = np.where(p > 0, p, 1.0)
        det = d1 * (d2 * d3 - a23 * a23) - a12 * (a12 * d3 - a23 * a13) + a13 * (a12 * a23 - d2 * a13)
        r = np.clip(det / (2.0 * safe**3), -1.0, 1.0)
        return np.where(p > 0, q + 2.0 * safe * np.cos(np.arccos(r) / 3.0), q)

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Matrix-vector product with a ``(3, N, N, N)`` vector field."""
        return np.stack([sum(self.entry(i, j) * vec[j] for j in range(3)) for i in range(3)])


def smooth_step(x):
    """C-infinity transition from 0 (x <= 0) to 1 (x >= 1) built from exp(-1/x)."""
    x = np.asarray(x, dtype=np.float64)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    y = 1.0 - x
    b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
    return a / (a + b)


def seam_mask(grid: GridSpec) -> np.ndarray:
    """Smooth weight that is 1 in the interior and 0 within stencil reach of the periodic seam.

    Nodes with ``|v_i| >= L - reach*h`` see wrapped neighbours, so any
    stencil applied to a non-periodic profile (``log f`` of a Gaussian) is
    wrong there.  The ramp has width ``max(L/8, h)``.
    """
    reach = len(_STENCILS[grid.order])
    edge = grid.half_width - reach * grid.spacing
    width = max(grid.half_width / 8.0, grid.spacing)
    s = smooth_step((edge - np.abs(grid.axis)) / width)
    return s[:, None, None] * s[None, :, None] * s[None, None, :]


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, DistributionField) else np.asarray(f, dtype=np.float64)


def integrate(grid: GridSpec, f, weight=None) -> float:
    """Trapezoid (periodic) quadrature ``h^3 sum weight * f``."""
    vals = _values(f)
    if weight is not None:
        vals = vals * weight
    return float(np.sum(vals) * grid.cell_volume)


def derivative(grid: GridSpec, f, axis: int) -> np.ndarray:
    vals = _values(f)
    h = grid.spacing
    out = np.zeros_like(vals)
    for shift, coef in _STENCILS[grid.order]:
        out += coef * (np.roll(vals, -shift, axis) - np.roll(vals, shift, axis))
    return out / h


def gradient(grid: GridSpec, f) -> np.ndarray:
    """Centered periodic gradient, shape ``(3, N, N, N)``."""
    return np.stack([derivative(grid, f, a) for a in range(3)])


def divergence(grid: GridSpec, vec: np.ndarray) -> np.ndarray:
    return derivative(grid, vec[0], 0) + derivative(grid, vec[1], 1) + derivative(grid, vec[2], 2)


def second_derivative(grid: GridSpec, f, axis: int) -> np.ndarray:
    """Compact centered second derivative along one axis.

    Composing the first-derivative stencil with itself reaches twice as far,
    and in steep tails the far nodes, being closer to the bulk, dominate and
    drive the result negative.  The compact form is symmetric and exact on
    quadratics.
    """
    vals = _values(f)
    center, pairs = _SECOND[grid.order]
    out = center * vals
    for shift, coef in pairs:
        out = out + coef * (np.roll(vals, -shift, axis) + np.roll(vals, shift, axis))
    return out / grid.spacing**2


def laplacian(grid: GridSpec, f) -> np.ndarray:
    return second_derivative(grid, f, 0) + second_derivative(grid, f, 1) + second_derivative(grid, f, 2)


def hessian(grid: GridSpec, f) -> MatrixField:
    """Compact stencil on the diagonal, composed first derivatives off it."""
    g = gradient(grid, f)
    comps = np.stack(
        [second_derivative(grid, f, i) if i == j else derivative(grid, g[j], i) for i, j in MATRIX_COMPONENTS]
    )
    return MatrixField(grid, comps)


def sqrt_gradient(grid: GridSpec, f, floor: float = 1e-30) -> np.ndarray:
    """Gradient of ``sqrt(max(f, floor))``."""
    return gradient(grid, np.sqrt(np.maximum(_values(f), floor)))


def log_gradient(grid: GridSpec, f, floor: float = 1e-300) -> np.ndarray:
    """Gradient of ``log(max(f, floor))``; exact for Gaussians since the stencil differentiates quadratics exactly."""
    return gradient(grid, np.log(np.maximum(_values(f), floor)))


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_snapshot(path, field_: DistributionField, run_id: str = "") -> Path:
    """Write raw little-endian float64 values (last axis fastest) plus a JSON sidecar."""
    path = Path(path)
    if path.suffix != ".bin":
        path = path.with_suffix(".bin")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(field_.values, dtype="<f8").tobytes())
    meta = {
        "L": field_.grid.half_width,
        "N": field_.grid.points,
        "order": field_.grid.order,
        "time": field_.time,
        "run_id": run_id,
    }
    _sidecar(path).write_text(json.dumps(meta, sort_keys=True))
    return path


def read_snapshot(path) -> DistributionField:
    path = Path(path)
    if path.suffix != ".bin":
        path = path.with_suffix(".bin")
    meta = json.loads(_sidecar(path).read_text())
    grid = GridSpec(float(meta["L"]), int(meta["N"]), int(meta.get("order", 4)))
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    if raw.size != grid.points**3:
        raise ValueError(f"{path}: expected {grid.points**3} values, found {raw.size}")
    return DistributionField(grid, raw.reshape(grid.shape), float(meta["time"]))
