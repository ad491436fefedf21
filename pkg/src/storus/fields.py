"""Sampled fields and spectral calculus on the periodic unit torus.

The domain is [0, 1]^d with d = 1 or 2, discretized on a uniform grid of
n points per axis (n a power of two).  Everything downstream, from
mollification to the energy accounting, is built on the operators here.

Transform convention
--------------------
``to_spectral`` returns Fourier coefficients

    c(k) = (1/n^d) sum_x f(x) exp(-2 pi i k . x),

indexed by integer wavevectors in FFT order, so that

    f(x) = sum_k c(k) exp(2 pi i k . x)

and the discrete Parseval identity

    sum_x |f(x)|^2 * spacing^d = sum_k |c(k)|^2

holds to round-off.  A real mode cos(2 pi k . x) therefore carries the
coefficient 1/2 at +k and -k, matching the function-space normalization.

First derivatives multiply by 2 pi i k with the Nyquist mode zeroed, the
standard choice that keeps derivatives of real fields real and the
operator skew-adjoint.  The Laplacian is defined as the composition
divergence(gradient(.)) so the identity between the two is exact by
construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as _fft

__all__ = [
    "TorusGrid",
    "RealField",
    "SpectralRep",
    "to_spectral",
    "to_physical",
    "gradient",
    "divergence",
    "laplacian",
    "leray_project",
    "integrate",
    "inner",
    "l2_norm",
    "nonlinear_term",
    "dealias_field",
    "random_divergence_free",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on [0, 1]^dim.

    Attributes:
        dim: spatial dimension, 1 or 2.
        n: points per axis; a power of two, at least 8.
    """

    dim: int
    n: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    def axis_coordinates(self) -> np.ndarray:
        """Grid coordinates along one axis: 0, h, 2h, ..., 1 - h."""
        return np.arange(self.n) / self.n

    def coordinates(self) -> list[np.ndarray]:
        """Meshed coordinate arrays, one per axis, each of shape ``self.shape``."""
        x = self.axis_coordinates()
        if self.dim == 1:
            return [x]
        g = np.meshgrid(x, x, indexing="ij")
        return [g[0], g[1]]


@lru_cache(maxsize=None)
def _wavevectors(dim: int, n: int) -> tuple[np.ndarray, ...]:
    """Integer wavevector arrays meshed over the spectral grid."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    if dim == 1:
        return (k,)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return (kx, ky)


@lru_cache(maxsize=None)
def _derivative_factors(dim: int, n: int) -> tuple[np.ndarray, ...]:
    """Spectral first-derivative multipliers 2*pi*i*k, Nyquist zeroed."""
    out = []
    for k in _wavevectors(dim, n):
        f = 2j * np.pi * k
        f = np.where(np.abs(k) == n // 2, 0.0, f)
        out.append(f)
    return tuple(out)


@lru_cache(maxsize=None)
def _dealias_mask(dim: int, n: int) -> np.ndarray:
    """Two-thirds rule mask: keep |k_axis| <= floor(n/3) on every axis."""
    cut = n // 3
    mask = np.ones((n,) * dim, dtype=bool)
    for k in _wavevectors(dim, n):
        mask &= np.abs(k) <= cut
    return mask


@lru_cache(maxsize=None)
def _projection_tensors(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(effective k arrays stacked, |k|^2 with zero modes guarded to 1).

    The projector must agree with the derivative convention, so the
    Nyquist component of each wavevector is zeroed here as well; then
    leray_project(gradient(p)) and divergence(leray_project(u)) vanish
    identically, not just on band-limited fields.
    """
    ks = np.stack([np.where(np.abs(k) == n // 2, 0.0, k) for k in _wavevectors(dim, n)])
    k2 = np.sum(ks * ks, axis=0)
    k2_safe = np.where(k2 == 0, 1.0, k2)
    return ks, k2_safe


@dataclass(frozen=True)
class RealField:
    """Real-valued field sampled on a torus grid.

    ``samples`` has shape (components, n) in one dimension or
    (components, n, n) in two, axis order (component, x1, x2), C order.
    A scalar field uses components == 1.
    """

    grid: TorusGrid
    samples: np.ndarray

    def __post_init__(self) -> None:
        expect = self.grid.shape
        if self.samples.ndim != 1 + self.grid.dim or self.samples.shape[1:] != expect:
            raise ValueError(
                f"samples shape {self.samples.shape} does not match grid {expect}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be finite")

    @property
    def components(self) -> int:
        return self.samples.shape[0]

    @staticmethod
    def scalar(grid: TorusGrid, values: np.ndarray) -> "RealField":
        return RealField(grid, np.asarray(values, dtype=float)[None, ...])

    @staticmethod
    def vector(grid: TorusGrid, *component_values: np.ndarray) -> "RealField":
        return RealField(grid, np.stack([np.asarray(v, dtype=float) for v in component_values]))

    @staticmethod
    def zero(grid: TorusGrid, components: int = 1) -> "RealField":
        return RealField(grid, np.zeros((components,) + grid.shape))

    def component(self, index: int) -> np.ndarray:
        return self.samples[index]

    def __add__(self, other: "RealField") -> "RealField":
        _check_same_layout(self, other)
        return RealField(self.grid, self.samples + other.samples)

    def __sub__(self, other: "RealField") -> "RealField":
        _check_same_layout(self, other)
        return RealField(self.grid, self.samples - other.samples)

    def __mul__(self, factor: float) -> "RealField":
        return RealField(self.grid, self.samples * float(factor))

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpectralRep:
    """Fourier coefficients of a real field, in FFT wavevector order.

    Coefficients of a real field obey c(-k) = conj(c(k)); ``to_physical``
    assumes that symmetry and discards the round-off imaginary residue.
    """

    grid: TorusGrid
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        expect = self.grid.shape
        if (
            self.coefficients.ndim != 1 + self.grid.dim
            or self.coefficients.shape[1:] != expect
        ):
            raise ValueError(
                f"coefficient shape {self.coefficients.shape} does not match grid {expect}"
            )

    @property
    def components(self) -> int:
        return self.coefficients.shape[0]


def _check_same_layout(a: RealField, b: RealField) -> None:
    if a.grid != b.grid or a.samples.shape != b.samples.shape:
        raise ValueError("fields live on different grids or component counts")


def _spatial_axes(grid: TorusGrid) -> tuple[int, ...]:
    return tuple(range(1, 1 + grid.dim))


def to_spectral(field: RealField) -> SpectralRep:
    """Forward transform; see the module docstring for the normalization."""
    axes = _spatial_axes(field.grid)
    coeff = _fft.fftn(field.samples, axes=axes) / field.grid.n**field.grid.dim
    return SpectralRep(field.grid, coeff)


def to_physical(rep: SpectralRep) -> RealField:
    """Inverse transform back to samples, real part taken."""
    axes = _spatial_axes(rep.grid)
    samples = _fft.ifftn(rep.coefficients, axes=axes) * rep.grid.n**rep.grid.dim
    return RealField(rep.grid, np.ascontiguousarray(samples.real))


def _fft_raw(grid: TorusGrid, samples: np.ndarray) -> np.ndarray:
    return _fft.fftn(samples, axes=tuple(range(samples.ndim - grid.dim, samples.ndim)))


def _ifft_raw(grid: TorusGrid, coeff: np.ndarray) -> np.ndarray:
    out = _fft.ifftn(coeff, axes=tuple(range(coeff.ndim - grid.dim, coeff.ndim)))
    return np.ascontiguousarray(out.real)


def gradient(field: RealField) -> RealField:
    """Spectral gradient of a scalar field, returned as a dim-component field."""
    if field.components != 1:
        raise ValueError("gradient expects a scalar field")
    grid = field.grid
    fh = _fft_raw(grid, field.samples[0])
    factors = _derivative_factors(grid.dim, grid.n)
    comps = [_ifft_raw(grid, fac * fh) for fac in factors]
    return RealField(grid, np.stack(comps))


def divergence(field: RealField) -> RealField:
    """Spectral divergence of a dim-component vector field."""
    grid = field.grid
    if field.components != grid.dim:
        raise ValueError(f"divergence expects {grid.dim} components, got {field.components}")
    factors = _derivative_factors(grid.dim, grid.n)
    acc = np.zeros(grid.shape, dtype=complex)
    for c in range(grid.dim):
        acc += factors[c] * _fft_raw(grid, field.samples[c])
    return RealField.scalar(grid, _ifft_raw(grid, acc))


def laplacian(field: RealField) -> RealField:
    """divergence(gradient(.)) applied componentwise, as one multiplier."""
    grid = field.grid
    factors = _derivative_factors(grid.dim, grid.n)
    mult = sum(f * f for f in factors)
    fh = _fft_raw(grid, field.samples)
    return RealField(grid, _ifft_raw(grid, mult * fh))


def leray_project(field: RealField) -> RealField:
    """Remove the gradient part: u_hat(k) <- (I - k k^T / |k|^2) u_hat(k), k != 0.

    The zero mode passes through unchanged.  The projector is idempotent,
    self adjoint and non-expansive in the discrete L2 inner product, and
    its output has spectral divergence at round-off level.
    """
    grid = field.grid
    if field.components != grid.dim:
        raise ValueError(f"projection expects {grid.dim} components, got {field.components}")
    fh = _fft_raw(grid, field.samples)
    ks, k2_safe = _projection_tensors(grid.dim, grid.n)
    dot = np.sum(ks * fh, axis=0) / k2_safe
    out = fh - ks * dot[None, ...]
    return RealField(grid, _ifft_raw(grid, out))


def integrate(field: RealField) -> float:
    """Integral over the torus (measure 1): the mean of the samples.

    This is the periodic trapezoidal rule, exact for trigonometric
    polynomials below the Nyquist frequency.
    """
    if field.components != 1:
        raise ValueError("integrate expects a scalar field")
    return float(field.samples.mean())


def inner(a: RealField, b: RealField) -> float:
    """Discrete L2 inner product, components contracted pointwise."""
    _check_same_layout(a, b)
    return float(np.mean(np.sum(a.samples * b.samples, axis=0)))


def l2_norm(field: RealField) -> float:
    return float(np.sqrt(np.mean(np.sum(field.samples**2, axis=0))))


def dealias_field(field: RealField) -> RealField:
    """Truncate by the two-thirds rule (drop |k_axis| > floor(n/3))."""
    grid = field.grid
    mask = _dealias_mask(grid.dim, grid.n)
    fh = _fft_raw(grid, field.samples)
    return RealField(grid, _ifft_raw(grid, fh * mask))


def nonlinear_term(field: RealField, dealias: bool = True) -> RealField:
    """Projected advection flux P[div(v (x) v)] of a velocity field.

    Products are formed in physical space.  With ``dealias`` the inputs
    are truncated by the two-thirds rule before multiplication and the
    divergence is truncated again afterwards, which removes aliasing from
    every retained mode; the discrete pairing <v, P div(v (x) v)> then
    vanishes to round-off for divergence-free v, mirroring the energy
    neutrality of transport.
    """
    grid = field.grid
    if field.components != grid.dim:
        raise ValueError(f"velocity must have {grid.dim} components, got {field.components}")
    mask = _dealias_mask(grid.dim, grid.n) if dealias else None
    vh = _fft_raw(grid, field.samples)
    if mask is not None:
        vh = vh * mask
    w = _ifft_raw(grid, vh)
    factors = _derivative_factors(grid.dim, grid.n)
    ks, k2_safe = _projection_tensors(grid.dim, grid.n)
    flux_hat = np.empty((grid.dim,) + grid.shape, dtype=complex)
    for i in range(grid.dim):
        acc = np.zeros(grid.shape, dtype=complex)
        for j in range(grid.dim):
            acc += factors[j] * _fft_raw(grid, w[i] * w[j])
        flux_hat[i] = acc * mask if mask is not None else acc
    dot = np.sum(ks * flux_hat, axis=0) / k2_safe
    flux_hat -= ks * dot[None, ...]
    return RealField(grid, _ifft_raw(grid, flux_hat))


def random_divergence_free(
    grid: TorusGrid, rng: np.random.Generator, max_wavenumber: int | None = None
) -> RealField:
    """Gaussian random velocity, band-limited and Leray projected, unit L2 norm."""
    if max_wavenumber is None:
        max_wavenumber = grid.n // 3
    raw = rng.standard_normal((grid.dim,) + grid.shape)
    fh = _fft_raw(grid, raw)
    for k in _wavevectors(grid.dim, grid.n):
        fh = np.where(np.abs(k)[None, ...] <= max_wavenumber, fh, 0.0)
    band = RealField(grid, _ifft_raw(grid, fh))
    proj = leray_project(band)
    norm = l2_norm(proj)
    if norm == 0.0:
        raise ValueError("degenerate random draw")
    return proj * (1.0 / norm)
