"""Coulomb and truncated Landau kernels, the convolution ``A[f] = a * f`` and
the collision right-hand sides.

The truncated kernel is ``a_n(z) = psi_n(|z|) Pi(z)`` with
``psi_n(r) = c min(1/r, n)`` and ``c = 1/(8 pi)`` by default (``c = 1``
with ``normalized=False``).  ``n = inf`` gives the raw Coulomb kernel
``c Pi(z)/|z|``.

Kernels are sampled on minimum-image offsets of the periodic grid, so
every convolution is circulant: translation equivariance is exact and
the discrete derivatives commute with ``a *``.  On the Nyquist planes
``z_i = -L`` the sign of ``z_i`` is ambiguous, so off-diagonal entries
involving that axis are set to the average of both images, which is 0.
This keeps the sampled kernel even and the collision operator symmetric.

``div div a_n`` is not the shell measure one might read off from the
outer formula for ``div a_n``: inside the ball ``|z| < 1/n`` the kernel is
``c n Pi(z)`` and ``div Pi(z) = -2 z/|z|^2``, so

    div div a_n = -8 pi c * nu_n,   nu_n(z) = n / (4 pi |z|^2) 1{|z| < 1/n},

a probability density.  ``depletion_average`` applies ``nu_n`` (or the
unit shell at radius ``1/n`` when asked for) and the nonconservative form
uses it for the ``8 pi f^2`` reaction term.
"""

from __future__ import annotations

import enum
import hashlib
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.integrate import cumulative_trapezoid

from .grid import (
    MATRIX_COMPONENTS,
    DistributionField,
    GridSpec,
    MatrixField,
    divergence,
    gradient,
    hessian,
    laplacian,
    log_gradient,
    seam_mask,
)

__all__ = [
    "KernelSpec",
    "RhsForm",
    "NumericalFailure",
    "ResolutionWarning",
    "projection_matrix",
    "kernel_samples",
    "KernelOperator",
    "kernel_operator",
    "convolve_A",
    "depletion_average",
    "divdiv_kernel_pairing",
    "sphere_points",
    "rhs",
    "RadialGrid",
    "inverse_laplacian_radial",
    "radial_laplacian",
    "isotropic_rhs",
    "isotropic_mass_budget",
]


class ResolutionWarning(UserWarning):
    """The truncation radius ``1/n`` is below the grid spacing."""


class NumericalFailure(FloatingPointError):
    """A right-hand side produced a non-finite value."""

    def __init__(self, message: str, node: tuple[int, int, int] | None = None, value: float | None = None):
        super().__init__(message)
        self.node = node
        self.value = value


@dataclass(frozen=True)
class KernelSpec:
    """Truncation index ``n`` (``math.inf`` for raw Coulomb) and the ``1/(8 pi)`` normalization flag."""

    n: float = math.inf
    normalized: bool = True

    def __post_init__(self) -> None:
        n = float(self.n)
        if not (n > 0):
            raise ValueError(f"truncation index must be positive, got {self.n}")
        if math.isfinite(n) and n != int(n):
            raise ValueError(f"finite truncation index must be an integer, got {self.n}")
        object.__setattr__(self, "n", n)

    @property
    def factor(self) -> float:
        return 1.0 / (8.0 * math.pi) if self.normalized else 1.0

    @property
    def finite(self) -> bool:
        return math.isfinite(self.n)

    @property
    def viscosity(self) -> float:
        """Coefficient ``1/n`` of the regularizing Laplacian."""
        return 1.0 / self.n if self.finite else 0.0

    def psi(self, r):
        r = np.asarray(r, dtype=np.float64)
        with np.errstate(divide="ignore"):
            inv = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), np.inf)
        return self.factor * np.minimum(inv, self.n)

    def to_dict(self) -> dict:
        return {"n": "inf" if not self.finite else int(self.n), "normalized": self.normalized}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        n = data.get("n", "inf")
        n = math.inf if n in ("inf", "infinity", None) else float(n)
        return cls(n, bool(data.get("normalized", True)))


class RhsForm(str, enum.Enum):
    """Discretizations of the collision operator.

    WEAK_SYMMETRIC
        The pair form ``div int a(v-w) f(v) f(w) (grad log f(v) - grad log f(w)) dw``;
        its discrete entropy production is a nonnegative quadratic form and
        discrete Maxwellians are exact equilibria.  Not suited to explicit
        time stepping: where ``log f`` drops by several units per cell the
        flux couples nodes whose values differ by orders of magnitude and
        small departures from a Gaussian tail grow without bound.
    CONSERVATIVE
        ``div(A grad f - f div A)``, i.e. the pair form with ``f grad log f``
        replaced by ``grad f``.  Conserves mass, momentum and energy exactly
        (``a(z) z = 0`` node by node) and is linear in ``f`` for frozen ``A``.
    NONCONSERVATIVE
        ``trace(A hess f) + 8 pi c f (nu_n * f)``.
    REGULARIZED
        CONSERVATIVE with the truncated kernel plus ``(1/n) lap f``.
    """

    WEAK_SYMMETRIC = "weak-symmetric"
    CONSERVATIVE = "conservative"
    NONCONSERVATIVE = "nonconservative"
    REGULARIZED = "regularized"


def projection_matrix(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z)
    if norm == 0:
        raise ValueError("projection onto the orthogonal complement of z = 0 is undefined")
    u = z / norm
    return np.eye(3) - np.outer(u, u)


@lru_cache(maxsize=64)
def _origin_psi_average(h: float, n: float, factor: float, nodes: int = 256) -> float:
    """Cell average of ``psi_n`` over ``[-h/2, h/2]^3``.

    The cube splits into six pyramids with apex at the origin; in pyramid
    coordinates the radial integral is done in closed form, leaving a smooth
    face integral handled by Gauss-Legendre.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    y, z = np.meshgrid(x, x, indexing="ij")
    rho = np.sqrt(1.0 + y * y + z * z)
    weights = np.outer(w, w)
    if math.isinf(n):
        g = 1.0 / (h * rho)
    else:
        t_star = 2.0 / (n * h * rho)
        inner = n * np.minimum(t_star, 1.0) ** 3 / 3.0
        outer = np.where(t_star < 1.0, (1.0 - t_star**2) / (h * rho), 0.0)
        g = inner + outer
    return float(0.75 * factor * np.sum(weights * g))


@lru_cache(maxsize=16)
def kernel_samples(grid: GridSpec, kernel: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """``psi_n`` and the six entries of ``a_n`` on minimum-image offsets (FFT order).

    The origin value is the cell average; ``a_n(0)`` is ``(2/3) psi_avg I``
    by cubic symmetry, so ``trace a_n = 2 psi_n`` holds at every offset.
    """
    zx, zy, zz = grid.offsets
    z = (zx, zy, zz)
    r = np.sqrt(zx * zx + zy * zy + zz * zz)
    safe = np.where(r > 0, r, 1.0)
    psi = kernel.psi(safe)
    psi[0, 0, 0] = _origin_psi_average(grid.spacing, kernel.n, kernel.factor)
    nyquist = [np.isclose(np.abs(zi), grid.half_width) for zi in z]
    comps = np.empty((6,) + grid.shape)
    for c, (i, j) in enumerate(MATRIX_COMPONENTS):
        entry = psi * ((1.0 if i == j else 0.0) - z[i] * z[j] / safe**2)
        if i != j:
            entry[nyquist[i] | nyquist[j]] = 0.0
            entry[0, 0, 0] = 0.0
        else:
            entry[0, 0, 0] = 2.0 / 3.0 * psi[0, 0, 0]
        comps[c] = entry
    return psi, comps


class KernelOperator:
    """Precomputed kernel spectra for one ``(GridSpec, KernelSpec)`` pair."""

    def __init__(self, grid: GridSpec, kernel: KernelSpec):
        self.grid = grid
        self.kernel = kernel
        psi, comps = kernel_samples(grid, kernel)
        self.psi_hat = np.fft.rfftn(psi).real
        self.comp_hat = np.stack([np.fft.rfftn(c).real for c in comps])
        self._last_matrix: tuple[bytes, MatrixField] | None = None
        if kernel.finite and kernel.n * grid.spacing > 1.0:
            warnings.warn(
                f"truncation radius 1/n = {1 / kernel.n:.4g} is below the grid spacing h = {grid.spacing:.4g}",
                ResolutionWarning,
                stacklevel=3,
            )

    def _inverse(self, spectrum: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(spectrum, s=self.grid.shape, axes=(0, 1, 2)) * self.grid.cell_volume

    def psi_convolve(self, values: np.ndarray) -> np.ndarray:
        return self._inverse(self.psi_hat * np.fft.rfftn(values))

    def matrix(self, values: np.ndarray) -> MatrixField:
        # the stepper asks for A[f] twice per step (stability bound, first stage)
        key = hashlib.blake2b(np.ascontiguousarray(values, dtype=np.float64).tobytes(), digest_size=16).digest()
        if self._last_matrix is not None and self._last_matrix[0] == key:
            return self._last_matrix[1]
        fh = np.fft.rfftn(values)
        out = MatrixField(self.grid, np.stack([self._inverse(k * fh) for k in self.comp_hat]))
        out.components.setflags(write=False)
        self._last_matrix = (key, out)
        return out

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """``(a * vec)_i = sum_j a_ij * vec_j`` for a ``(3, N, N, N)`` field."""
        vh = [np.fft.rfftn(v) for v in vec]
        out = []
        for i in range(3):
            acc = 0
            for j in range(3):
                c = MATRIX_COMPONENTS.index((min(i, j), max(i, j)))
                acc = acc + self.comp_hat[c] * vh[j]
            out.append(self._inverse(acc))
        return np.stack(out)


@lru_cache(maxsize=16)
def kernel_operator(grid: GridSpec, kernel: KernelSpec) -> KernelOperator:
    return KernelOperator(grid, kernel)


def convolve_A(f: DistributionField, kernel: KernelSpec) -> MatrixField:
    """Diffusion matrix ``A[f] = a_n * f``; symmetric PSD for ``f >= 0``."""
    return kernel_operator(f.grid, kernel).matrix(f.values)


def sphere_points(count: int = 302) -> np.ndarray:
    """Equal-weight Fibonacci lattice on the unit sphere, shape ``(count, 3)``."""
    i = np.arange(count) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / count)
    azimuth = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack(
        [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)], axis=1
    )


def _deposit(grid: GridSpec, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Trilinear deposition of weighted offsets onto the periodic offset grid."""
    h, n = grid.spacing, grid.points
    out = np.zeros(grid.shape)
    s = points / h
    base = np.floor(s).astype(int)
    frac = s - base
    for corner in range(8):
        bits = [(corner >> a) & 1 for a in range(3)]
        wgt = weights.copy()
        for a in range(3):
            wgt = wgt * (frac[:, a] if bits[a] else 1.0 - frac[:, a])
        idx = tuple((base[:, a] + bits[a]) % n for a in range(3))
        np.add.at(out, idx, wgt)
    return out


@lru_cache(maxsize=32)
def _depletion_spectrum(grid: GridSpec, n: float, measure: str, realization: str) -> np.ndarray:
    radius = 1.0 / n
    if realization == "deposit":
        # nonnegative stencil, but O(h^2) smoothing of the sphere (1-2% at one cell per radius)
        directions = sphere_points(302)
        if measure == "shell":
            pts = radius * directions
            wts = np.full(len(directions), 1.0 / len(directions))
        else:
            x, w = np.polynomial.legendre.leggauss(8)
            radii = 0.5 * radius * (x + 1.0)
            pts = (radii[:, None, None] * directions[None]).reshape(-1, 3)
            wts = np.outer(0.5 * w, np.full(len(directions), 1.0 / len(directions))).ravel()
        stencil = _deposit(grid, pts, wts)
        stencil /= stencil.sum()
        return np.fft.rfftn(stencil).real
    # exact Fourier multiplier of the measure, valid at any resolution
    k = 2.0 * np.pi * np.fft.fftfreq(grid.points, d=grid.spacing)
    kr = 2.0 * np.pi * np.fft.rfftfreq(grid.points, d=grid.spacing)
    kx, ky, kz = np.meshgrid(k, k, kr, indexing="ij")
    x = np.sqrt(kx * kx + ky * ky + kz * kz) * radius
    safe = np.where(x > 0, x, 1.0)
    if measure == "shell":
        mult = np.sin(safe) / safe
    else:
        mult = special.sici(safe)[0] / safe
    return np.where(x > 0, mult, 1.0)


def depletion_average(
    grid: GridSpec, values: np.ndarray, n: float, measure: str = "ball", realization: str = "spectral"
) -> np.ndarray:
    """``nu_n * g`` for the unit measure ``nu_n`` (``"ball"`` or ``"shell"``); identity for ``n = inf``.

    ``realization="spectral"`` multiplies by the exact transform of the measure;
    ``"deposit"`` spreads a 302-direction sphere rule trilinearly onto the grid.
    """
    if measure not in ("ball", "shell"):
        raise ValueError(f"measure must be 'ball' or 'shell', got {measure!r}")
    if realization not in ("spectral", "deposit"):
        raise ValueError(f"realization must be 'spectral' or 'deposit', got {realization!r}")
    if math.isinf(n):
        return np.array(values, dtype=np.float64)
    spec = _depletion_spectrum(grid, float(n), measure, realization)
    return np.fft.irfftn(spec * np.fft.rfftn(values), s=grid.shape, axes=(0, 1, 2))


def divdiv_kernel_pairing(
    f: DistributionField, g: DistributionField, n: float, measure: str = "ball", realization: str = "spectral"
) -> float:
    """``iint nu_n(v - w) f(v) g(w) dv dw``, where ``div div a_n = -8 pi c nu_n``.

    ``nu_n`` has unit mass, so constants pair to ``c^2 Vol``.  A
    ``ResolutionWarning`` is raised when the radius ``1/n`` is below one cell.
    """
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    if math.isfinite(n) and n * grid.spacing > 1.0:
        warnings.warn(
            f"sphere of radius {1 / n:.4g} below the grid spacing h = {grid.spacing:.4g}",
            ResolutionWarning,
            stacklevel=2,
        )
    avg = depletion_average(grid, g.values, n, measure, realization)
    return float(np.sum(f.values * avg) * grid.cell_volume)


def _check_finite(out: np.ndarray, label: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        node = tuple(int(b) for b in bad)
        raise NumericalFailure(f"{label}: non-finite value at node {node}", node, float(out[node]))
    return out


def collision_flux(f: DistributionField, kernel: KernelSpec, form: RhsForm) -> np.ndarray:
    """Flux ``F`` with ``rhs = div F`` for the divergence forms."""
    op = kernel_operator(f.grid, kernel)
    vals = f.values
    if form is RhsForm.WEAK_SYMMETRIC:
        # Collide the masked density g = m f: log f is not periodic, so its
        # gradient is wrong next to the seam, and g keeps it out of every
        # product.  The pair form in g still conserves mass and energy,
        # dissipates entropy exactly and is stationary on Maxwellians.
        g = seam_mask(f.grid) * vals
        x = log_gradient(f.grid, vals)
        return g * (op.matrix(g).apply(x) - op.apply(g * x))
    if form in (RhsForm.CONSERVATIVE, RhsForm.REGULARIZED):
        A = op.matrix(vals)
        g = gradient(f.grid, vals)
        return A.apply(g) - vals * op.apply(g)
    raise ValueError(f"{form} has no flux representation")


def rhs(
    f: DistributionField,
    form: RhsForm | str,
    kernel: KernelSpec,
    collision: bool = True,
    measure: str = "ball",
) -> np.ndarray:
    """Time derivative of ``f`` under the chosen discretization.

    ``collision=False`` keeps only the ``(1/n) lap f`` part of the regularized form.
    """
    form = RhsForm(form)
    grid = f.grid
    if np.any(f.values < 0):
        raise ValueError("rhs requires a nonnegative field")
    _check_finite(f.values, "input")
    if form is RhsForm.NONCONSERVATIVE:
        A = kernel_operator(grid, kernel).matrix(f.values)
        H = hessian(grid, f.values)
        out = sum(
            (1.0 if i == j else 2.0) * A.components[c] * H.components[c]
            for c, (i, j) in enumerate(MATRIX_COMPONENTS)
        )
        reaction = depletion_average(grid, f.values, kernel.n, measure)
        out = out + 8.0 * math.pi * kernel.factor * f.values * reaction
        return _check_finite(out, form.value)
    out = np.zeros(grid.shape)
    if collision:
        out = divergence(grid, collision_flux(f, kernel, form))
    if form is RhsForm.REGULARIZED and kernel.finite:
        out = out + kernel.viscosity * laplacian(grid, f.values)
    return _check_finite(out, form.value)


# ---------------------------------------------------------------------------
# Isotropic model  u_t = ((-lap)^{-1} u) lap u + alpha u^2  on radial profiles


@dataclass(frozen=True)
class RadialGrid:
    """Nodes ``r_i = i dr`` for ``i = 0..M`` on ``[0, R]``."""

    radius: float
    intervals: int

    def __post_init__(self) -> None:
        if self.radius <= 0 or self.intervals < 4:
            raise ValueError("radial grid needs R > 0 and at least 4 intervals")

    @property
    def step(self) -> float:
        return self.radius / self.intervals

    @property
    def nodes(self) -> np.ndarray:
        return self.step * np.arange(self.intervals + 1)

    def integrate(self, values: np.ndarray) -> float:
        """``int 4 pi r^2 u dr`` by the trapezoid rule."""
        r = self.nodes
        return float(np.trapezoid(4.0 * np.pi * r * r * values, r))


def _radial_input(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0):
        raise ValueError("isotropic model requires u >= 0")
    return u


def inverse_laplacian_radial(grid: RadialGrid, u) -> np.ndarray:
    """Newtonian potential of a radial density: ``phi(r) = (1/r) int_0^r s^2 u + int_r^R s u``."""
    u = _radial_input(u)
    r = grid.nodes
    inner = cumulative_trapezoid(r * r * u, r, initial=0.0)
    outer_total = np.trapezoid(r * u, r)
    outer = outer_total - cumulative_trapezoid(r * u, r, initial=0.0)
    phi = np.empty_like(u)
    phi[1:] = inner[1:] / r[1:] + outer[1:]
    phi[0] = outer_total
    return phi


def radial_laplacian(grid: RadialGrid, u) -> np.ndarray:
    """``u'' + (2/r) u'`` in flux form; symmetric at the origin, zero flux at ``R``."""
    u = np.asarray(u, dtype=np.float64)
    r, dr = grid.nodes, grid.step
    ext = np.concatenate([u, u[-2:-1]])
    out = np.empty_like(u)
    out[0] = 6.0 * (u[1] - u[0]) / dr**2
    rp = r[1:] + 0.5 * dr
    rm = r[1:] - 0.5 * dr
    out[1:] = (rp**2 * (ext[2:] - ext[1:-1]) - rm**2 * (ext[1:-1] - ext[:-2])) / (r[1:] ** 2 * dr**2)
    return out


def isotropic_rhs(grid: RadialGrid, u, alpha: float) -> np.ndarray:
    u = _radial_input(u)
    return inverse_laplacian_radial(grid, u) * radial_laplacian(grid, u) + alpha * u * u


def isotropic_mass_budget(grid: RadialGrid, u, alpha: float) -> dict:
    """Split ``d/dt int u`` into reaction ``alpha int u^2``, the ``-int u^2`` coming from
    ``lap phi = -u``, and the outer boundary flux ``4 pi R^2 (phi u' - u phi')``."""
    u = _radial_input(u)
    phi = inverse_laplacian_radial(grid, u)
    dr = grid.step
    du = (u[-1] - u[-2]) / dr
    dphi = (phi[-1] - phi[-2]) / dr
    R = grid.radius
    return {
        "total": grid.integrate(isotropic_rhs(grid, u, alpha)),
        "reaction": alpha * grid.integrate(u * u),
        "absorption": -grid.integrate(u * u),
        "boundary_flux": 4.0 * np.pi * R * R * (phi[-1] * du - u[-1] * dphi),
    }
