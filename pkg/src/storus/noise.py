"""Truncated cylindrical Wiener forcing and admissibility checks.

A forcing realization is a finite family of independent scalar Brownian
increments, one per basis mode, pushed through a state-dependent
diffusion operator.  The operator for mode j is

    G_j(x, state) = w_j * a_j(x) * sigma(state)(x)   componentwise,

with mode weights w_j = amplitude * j^(-decay), a bounded spatial shape
a_j, and a saturation profile sigma that vanishes at the zero state and
has slope at most one.  Under those conditions the weights are square
summable (decay > 1/2) and the noise is admissible; the verifier probes
each requirement numerically instead of trusting the construction.

Randomness is organized as counter-based streams addressed by
(seed, path index, step index).  Identical coordinates always reproduce
identical draws, across processes and platforms, which the simulators
rely on for replay and for coupling runs to common noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fields import RealField, TorusGrid, integrate

__all__ = [
    "stream",
    "WienerIncrements",
    "sample_increments",
    "nested_increment_table",
    "NoiseBasis",
    "harmonic_weighted_norm",
    "DiffusionFamily",
    "apply_diffusion",
    "ito_correction",
    "GrowthReport",
    "verify_growth_conditions",
]

_HOMOGENEOUS_PROFILES = ("tanh", "tanh_steep")
_INHOMOGENEOUS_PROFILES = ("momentum_tanh", "density_momentum_tanh")


def stream(seed: int, path_index: int = 0, step_index: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, path, step) coordinate.

    Streams at distinct coordinates are independent by the spawn-key
    construction and bit-reproducible for fixed coordinates.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(path_index, step_index))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class WienerIncrements:
    """Gaussian increments over one time step: values[j] ~ N(0, dt), iid."""

    dt: float
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.dt < 0.0:
            raise ValueError("dt must be nonnegative")
        if self.values.ndim != 1:
            raise ValueError("values must be a flat vector, one entry per mode")


def sample_increments(n_modes: int, dt: float, rng: np.random.Generator) -> WienerIncrements:
    """Draw one increment vector; dt = 0 yields exact zeros."""
    if n_modes < 1:
        raise ValueError("need at least one mode")
    if dt < 0.0:
        raise ValueError("dt must be nonnegative")
    values = rng.standard_normal(n_modes) * np.sqrt(dt)
    return WienerIncrements(dt=dt, values=values)


def nested_increment_table(
    seed: int, path_index: int, n_modes: int, dt_fine: float, n_fine: int, coarsening: int = 1
) -> np.ndarray:
    """Increment rows for a path at a coarsened resolution of one Brownian motion.

    The underlying motion is sampled once at (dt_fine, n_fine); rows for a
    coarser grid are sums of consecutive fine increments, so runs at
    different step sizes share the same noise realization.  ``coarsening``
    must divide ``n_fine``.
    """
    if n_fine % coarsening != 0:
        raise ValueError("coarsening must divide the fine step count")
    fine = np.empty((n_fine, n_modes))
    for step in range(n_fine):
        fine[step] = sample_increments(n_modes, dt_fine, stream(seed, path_index, step)).values
    if coarsening == 1:
        return fine
    return fine.reshape(n_fine // coarsening, coarsening, n_modes).sum(axis=1)


def _half_space_wavevectors(dim: int, count: int, n: int) -> list[tuple[int, ...]]:
    """First ``count`` wavevectors with k != 0, one per +-k pair.

    Ordered by |k|^2 then lexicographically; the representative has its
    first nonzero component positive.  Components must stay below the
    Nyquist frequency of the grid.
    """
    out: list[tuple[int, ...]] = []
    radius = 1
    while len(out) < count:
        candidates = []
        if dim == 1:
            rng_range = range(1, radius + 1)
            candidates = [(k,) for k in rng_range if k * k <= radius * radius]
        else:
            for k1 in range(0, radius + 1):
                for k2 in range(-radius, radius + 1):
                    if k1 == 0 and k2 <= 0:
                        continue
                    if k1 * k1 + k2 * k2 <= radius * radius:
                        candidates.append((k1, k2))
        candidates.sort(key=lambda k: (sum(c * c for c in k),) + k)
        if len(candidates) >= count:
            out = candidates[:count]
            break
        radius += 1
    for k in out:
        if max(abs(c) for c in k) >= n // 2:
            raise ValueError(f"wavevector {k} is not resolvable on an n = {n} grid")
    return out


@dataclass(frozen=True)
class NoiseBasis:
    """Real orthonormal Fourier modes on the torus.

    Mode 1 is the constant function.  Subsequent modes come in pairs
    sqrt(2) cos(2 pi k . x), sqrt(2) sin(2 pi k . x) for wavevectors k
    enumerated over a half space sorted by |k|^2 then lexicographically,
    so the enumeration is unambiguous and documented by construction.
    Orthonormality holds exactly in the discrete inner product because
    distinct sub-Nyquist Fourier modes are exactly orthogonal under the
    uniform-grid quadrature.
    """

    grid: TorusGrid
    n_modes: int

    def __post_init__(self) -> None:
        if self.n_modes < 1:
            raise ValueError("need at least one mode")

    @property
    def fields(self) -> np.ndarray:
        return _basis_fields(self.grid.dim, self.grid.n, self.n_modes)

    def mode(self, j: int) -> np.ndarray:
        """Samples of basis mode j (1-based)."""
        if not 1 <= j <= self.n_modes:
            raise ValueError(f"mode index {j} outside 1..{self.n_modes}")
        return self.fields[j - 1]

    def gram_matrix(self) -> np.ndarray:
        f = self.fields.reshape(self.n_modes, -1)
        return f @ f.T / f.shape[1]


@lru_cache(maxsize=32)
def _basis_fields(dim: int, n: int, n_modes: int) -> np.ndarray:
    grid = TorusGrid(dim, n)
    coords = grid.coordinates()
    fields = np.empty((n_modes,) + grid.shape)
    fields[0] = 1.0
    if n_modes == 1:
        return fields
    n_pairs = (n_modes - 1 + 1) // 2
    wavevectors = _half_space_wavevectors(dim, n_pairs, n)
    index = 1
    for k in wavevectors:
        phase = np.zeros(grid.shape)
        for axis, comp in enumerate(k):
            if comp != 0:
                phase = phase + comp * coords[axis]
        phase = 2.0 * np.pi * phase
        fields[index] = np.sqrt(2.0) * np.cos(phase)
        index += 1
        if index == n_modes:
            break
        fields[index] = np.sqrt(2.0) * np.sin(phase)
        index += 1
        if index == n_modes:
            break
    return fields


def harmonic_weighted_norm(coefficients: np.ndarray) -> float:
    """sqrt(sum_j c_j^2 / j^2) with j counted from 1.

    The weighting makes the norm finite for any bounded coefficient
    sequence, which is what lets a forcing with infinitely many active
    modes live in a fixed state space.
    """
    c = np.asarray(coefficients, dtype=float)
    if c.ndim != 1:
        raise ValueError("expected a flat coefficient vector")
    j = np.arange(1, c.size + 1, dtype=float)
    return float(np.sqrt(np.sum((c / j) ** 2)))


@dataclass(frozen=True)
class DiffusionFamily:
    """State-dependent diffusion operators G_j, one per forcing mode.

    kind selects the state signature: "homogeneous" operators act on a
    velocity field; "inhomogeneous" operators act on a (density,
    momentum) pair.  shape "uniform" uses a_j = 1 for every mode while
    "basis" uses the j-th orthonormal Fourier mode, bounded by sqrt(2).
    """

    kind: str = "homogeneous"
    amplitude: float = 0.25
    decay: float = 1.0
    n_modes: int = 16
    shape: str = "uniform"
    profile: str = "tanh"

    def __post_init__(self) -> None:
        if self.kind not in ("homogeneous", "inhomogeneous"):
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.amplitude < 0.0:
            raise ValueError("amplitude must be nonnegative")
        if self.n_modes < 1:
            raise ValueError("need at least one mode")
        if self.shape not in ("uniform", "basis"):
            raise ValueError(f"unknown shape {self.shape!r}")
        allowed = _HOMOGENEOUS_PROFILES if self.kind == "homogeneous" else _INHOMOGENEOUS_PROFILES
        if self.profile not in allowed:
            raise ValueError(
                f"profile {self.profile!r} not valid for kind {self.kind!r}; "
                f"choose from {allowed}"
            )

    def weights(self) -> np.ndarray:
        j = np.arange(1, self.n_modes + 1, dtype=float)
        return self.amplitude * j ** (-self.decay)

    def shape_bound(self) -> float:
        return 1.0 if self.shape == "uniform" else float(np.sqrt(2.0))

    def mode_bounds(self) -> np.ndarray:
        """Declared Lipschitz bound per mode: weight times shape supremum."""
        return self.weights() * self.shape_bound()

    def profile_slope(self) -> float:
        """Design slope of the saturation profile at the origin."""
        return 2.0 if self.profile == "tanh_steep" else 1.0

    def tail_bound(self, n_modes: int | None = None) -> float:
        """Upper bound on sum_{j > J} w_j^2 by the integral test; inf if divergent."""
        j_cut = self.n_modes if n_modes is None else n_modes
        if self.decay <= 0.5:
            return float("inf")
        return self.amplitude**2 * j_cut ** (1.0 - 2.0 * self.decay) / (2.0 * self.decay - 1.0)

    def shape_field(self, j: int, grid: TorusGrid) -> np.ndarray:
        if self.shape == "uniform":
            return np.ones(grid.shape)
        return NoiseBasis(grid, self.n_modes).mode(j)


def _saturation(family: DiffusionFamily, state) -> np.ndarray:
    """Profile output with the same component layout as the driven equation."""
    if family.kind == "homogeneous":
        v = state
        if not isinstance(v, RealField):
            raise ValueError("homogeneous diffusion expects a velocity RealField")
        if family.profile == "tanh":
            return np.tanh(v.samples)
        return np.tanh(2.0 * v.samples)
    rho, momentum = state
    if rho.components != 1:
        raise ValueError("density must be scalar")
    if family.profile == "momentum_tanh":
        return np.tanh(momentum.samples)
    d = momentum.components
    return 0.5 * np.tanh(momentum.samples) + 0.5 * np.tanh(rho.samples) / np.sqrt(d)


def _state_grid(family: DiffusionFamily, state) -> TorusGrid:
    return state.grid if family.kind == "homogeneous" else state[0].grid


def apply_diffusion(family: DiffusionFamily, state, j: int) -> RealField:
    """Evaluate G_j at the given state; j is 1-based and must not exceed n_modes."""
    if not 1 <= j <= family.n_modes:
        raise ValueError(f"mode index {j} outside 1..{family.n_modes}")
    grid = _state_grid(family, state)
    sat = _saturation(family, state)
    w = family.weights()[j - 1]
    return RealField(grid, w * family.shape_field(j, grid) * sat)


def ito_correction(family: DiffusionFamily, state, n_modes: int | None = None) -> float:
    """Energy injection rate sum_j ||G_j(state)||^2, density-weighted if applicable.

    For the inhomogeneous kind each mode contributes
    integral |G_j|^2 / (2 rho) dx and the density must be strictly
    positive.
    """
    j_max = family.n_modes if n_modes is None else n_modes
    if not 1 <= j_max <= family.n_modes:
        raise ValueError(f"mode count {j_max} outside 1..{family.n_modes}")
    if family.kind == "inhomogeneous":
        rho = state[0]
        if float(np.min(rho.samples)) <= 0.0:
            raise ValueError("density must be strictly positive for the weighted rate")
    total = 0.0
    for j in range(1, j_max + 1):
        g = apply_diffusion(family, state, j)
        sq = np.sum(g.samples**2, axis=0)
        if family.kind == "inhomogeneous":
            sq = sq / (2.0 * state[0].samples[0])
        total += float(np.mean(sq))
    return total


@dataclass(frozen=True)
class GrowthReport:
    """Outcome of the admissibility probes, one entry per failed condition."""

    passed: bool
    failures: tuple[str, ...]
    fitted_decay: float
    tail_bound: float
    worst_lipschitz_ratio: float
    zero_state_residual: float

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "failures": list(self.failures),
            "fitted_decay": self.fitted_decay,
            "tail_bound": self.tail_bound,
            "worst_lipschitz_ratio": self.worst_lipschitz_ratio,
            "zero_state_residual": self.zero_state_residual,
        }


def _zero_state(family: DiffusionFamily, grid: TorusGrid):
    if family.kind == "homogeneous":
        return RealField.zero(grid, grid.dim)
    return (RealField.zero(grid, 1), RealField.zero(grid, grid.dim))


def _probe_states(family: DiffusionFamily, grid: TorusGrid, rng: np.random.Generator, scale: float):
    if family.kind == "homogeneous":
        return RealField(grid, scale * rng.standard_normal((grid.dim,) + grid.shape))
    rho = RealField(grid, np.abs(scale * rng.standard_normal((1,) + grid.shape)) + 0.1)
    m = RealField(grid, scale * rng.standard_normal((grid.dim,) + grid.shape))
    return (rho, m)


def _state_gap(family: DiffusionFamily, a, b) -> float:
    """Max-norm distance between probe states, matching the Lipschitz condition."""
    if family.kind == "homogeneous":
        return float(np.max(np.abs(a.samples - b.samples)))
    drho = np.max(np.abs(a[0].samples - b[0].samples))
    dm = np.max(np.sqrt(np.sum((a[1].samples - b[1].samples) ** 2, axis=0)))
    return float(max(drho, dm))


def verify_growth_conditions(
    family: DiffusionFamily,
    grid: TorusGrid | None = None,
    n_probes: int = 4,
    seed: int = 0,
) -> GrowthReport:
    """Numerically probe the admissibility conditions of a diffusion family.

    Three checks: the operators vanish at the zero state; the mode weights
    decay fast enough to be square summable (fitted decay above 1/2, with
    the integral-test tail bound reported); and finite differences between
    probe states never exceed the declared per-mode Lipschitz bound.
    """
    if grid is None:
        grid = TorusGrid(2, 32)
    failures: list[str] = []

    zero = _zero_state(family, grid)
    zero_residual = 0.0
    for j in range(1, family.n_modes + 1):
        zero_residual = max(zero_residual, float(np.max(np.abs(apply_diffusion(family, zero, j).samples))))
    if zero_residual > 1e-12:
        failures.append("zero_state")

    weights = family.weights()
    positive = weights > 0.0
    if family.amplitude == 0.0:
        fitted_decay = float("inf")
    elif np.count_nonzero(positive) >= 2:
        j = np.arange(1, family.n_modes + 1, dtype=float)
        fitted_decay = float(-np.polyfit(np.log(j[positive]), np.log(weights[positive]), 1)[0])
    else:
        fitted_decay = float("inf")
    if not fitted_decay > 0.5:
        failures.append("square_summability")

    rng = np.random.default_rng(seed)
    bounds = family.mode_bounds()
    worst = 0.0
    for scale in (0.01, 0.3, 1.0, 3.0):
        for _ in range(n_probes):
            a = _probe_states(family, grid, rng, scale)
            b = _probe_states(family, grid, rng, scale)
            gap = _state_gap(family, a, b)
            if gap == 0.0:
                continue
            for j in (1, family.n_modes):
                diff = apply_diffusion(family, a, j).samples - apply_diffusion(family, b, j).samples
                ratio = float(np.max(np.abs(diff))) / gap
                if bounds[j - 1] > 0.0:
                    worst = max(worst, ratio / bounds[j - 1])
    if worst > 1.0 + 1e-9:
        failures.append("lipschitz_bound")

    return GrowthReport(
        passed=not failures,
        failures=tuple(failures),
        fitted_decay=fitted_decay,
        tail_bound=family.tail_bound(),
        worst_lipschitz_ratio=worst,
        zero_state_residual=zero_residual,
    )
