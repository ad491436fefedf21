"""Variable-density incompressible flow with stochastic momentum forcing.

The state carries a strictly positive density, a divergence-free
velocity, the momentum (their pointwise product), and the pressure that
enforces the constraint.  Density is transported in conservative form,
so total mass is a discrete invariant; momentum takes an explicit
Euler-Maruyama step and is then projected by solving the
variable-coefficient elliptic problem

    div((1/rho) grad p) = div(m*/rho) / dt

with a preconditioned conjugate-gradient iteration whose preconditioner
is the exact constant-coefficient spectral inverse.  For constant
density the preconditioner is exact, the solve converges in one
iteration, and the update reduces to the homogeneous projected step.

Density lower bounds are monitored, not repaired: a dip below the
configured floor flags the path, a dip below half the floor truncates
it.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .fields import (
    RealField,
    SpectralRep,
    TorusGrid,
    _derivative_factors,
    dealias_field,
    divergence,
    gradient,
    integrate,
    leray_project,
    to_physical,
    to_spectral,
)
from .noise import DiffusionFamily, apply_diffusion, sample_increments, stream

__all__ = [
    "ConvergenceError",
    "InhomoConfig",
    "InhomoPath",
    "classify_density",
    "density_step",
    "momentum_flux_divergence",
    "pressure_solve",
    "run_inhomo",
]


class ConvergenceError(RuntimeError):
    """Raised when the pressure iteration exhausts its cap.

    Carries the last relative residual so callers can report it.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class InhomoConfig:
    """Parameters of a variable-density run.

    rho_floor is the certified lower density bound: initial data must
    respect it, and the run records a warning the first time any step
    dips below it and truncates below half of it.
    """

    grid: TorusGrid
    dt: float
    n_steps: int
    family: DiffusionFamily | None = None
    seed: int = 0
    rho_floor: float = 0.5
    dealias: bool = True
    solver_tol: float = 1e-9
    solver_cap: int = 500
    cfl_number: float = 0.25
    blow_up_factor: float = 1e3

    def __post_init__(self) -> None:
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError("time step must be positive and finite")
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        if self.family is not None and self.family.kind != "inhomogeneous":
            raise ValueError("density-coupled stepping takes an inhomogeneous family")
        if self.rho_floor <= 0:
            raise ValueError("rho_floor must be positive")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")
        if self.solver_cap < 1:
            raise ValueError("solver_cap must be at least 1")
        if self.cfl_number <= 0:
            raise ValueError("cfl_number must be positive")
        if self.blow_up_factor <= 1:
            raise ValueError("blow_up_factor must exceed 1")


@dataclass
class InhomoPath:
    """Record of one variable-density run, stored step by step.

    pressures[n] is the pressure computed while stepping from state n
    to state n+1, so it has one row fewer than the state arrays.  The
    mass series tracks the density integral at every stored state.
    """

    config: InhomoConfig
    path_index: int
    times: np.ndarray
    densities: np.ndarray
    velocities: np.ndarray
    momenta: np.ndarray
    pressures: np.ndarray
    increments: np.ndarray | None
    mass_series: np.ndarray
    blown_up: bool = False
    truncated_at: int | None = None
    floor_warnings: tuple[int, ...] = dataclass_field(default=())
    cfl_warnings: tuple[int, ...] = dataclass_field(default=())

    @property
    def steps_taken(self) -> int:
        return len(self.times) - 1

    def density_at(self, step: int) -> RealField:
        return RealField.scalar(self.config.grid, self.densities[step])

    def velocity_at(self, step: int) -> RealField:
        return RealField(self.config.grid, self.velocities[step])

    def momentum_at(self, step: int) -> RealField:
        return RealField(self.config.grid, self.momenta[step])


def classify_density(samples: np.ndarray, floor: float) -> str:
    """Grade a density snapshot against the certified lower bound."""
    low = float(np.min(samples))
    if low < 0.5 * floor:
        return "truncate"
    if low < floor:
        return "warn"
    return "ok"


def density_step(
    rho: RealField, velocity: RealField, dt: float, dealias: bool = True
) -> RealField:
    """Conservative transport update rho - dt * div(rho v).

    The divergence is spectral, so its mean vanishes identically and
    total mass is conserved to round-off regardless of the velocity.
    """
    if rho.components != 1:
        raise ValueError("density must be a scalar field")
    flux = RealField(rho.grid, rho.samples[0] * velocity.samples)
    if dealias:
        flux = dealias_field(flux)
    return RealField.scalar(rho.grid, rho.samples[0] - dt * divergence(flux).samples[0])


def momentum_flux_divergence(
    momentum: RealField, velocity: RealField, dealias: bool = True
) -> RealField:
    """div(m v) row by row: component i of the result is div(m_i v)."""
    grid = momentum.grid
    rows = []
    for i in range(momentum.components):
        row = RealField(grid, momentum.samples[i] * velocity.samples)
        if dealias:
            row = dealias_field(row)
        rows.append(divergence(row).samples[0])
    return RealField(grid, np.stack(rows))


def _weighted_divergence_operator(rho_inverse: np.ndarray):
    """Return p -> div(rho_inverse * grad p) acting on raw samples."""

    def apply(grid: TorusGrid, p_samples: np.ndarray) -> np.ndarray:
        grad = gradient(RealField.scalar(grid, p_samples))
        weighted = RealField(grid, rho_inverse * grad.samples)
        return divergence(weighted).samples[0]

    return apply


def _spectral_inverse_laplacian(grid: TorusGrid, samples: np.ndarray, scale: float):
    """Solve -scale * laplacian(z) = samples with zero-mean z, spectrally."""
    factors = _derivative_factors(grid.dim, grid.n)
    k2 = np.zeros(grid.shape)
    for axis_factors in factors:
        k2 = k2 + axis_factors.imag**2
    coeffs = to_spectral(RealField.scalar(grid, samples)).coefficients[0]
    out = np.zeros_like(coeffs)
    mask = k2 > 0
    out[mask] = coeffs[mask] / (scale * k2[mask])
    return to_physical(SpectralRep(grid, out[np.newaxis])).samples[0]


def pressure_solve(
    rho: RealField,
    rhs: RealField,
    *,
    tol: float = 1e-8,
    max_iterations: int = 500,
    initial_guess: RealField | None = None,
) -> RealField:
    """Solve div((1/rho) grad p) = rhs for zero-mean p.

    Preconditioned conjugate gradients on the (negated) operator, with
    the constant-coefficient spectral inverse as preconditioner; for
    constant rho the preconditioner is the exact inverse and the
    iteration converges immediately.  Convergence is declared when the
    relative residual drops to tol; exhausting the cap raises
    ConvergenceError carrying the final residual.
    """
    grid = rho.grid
    if rho.components != 1 or rhs.components != 1:
        raise ValueError("density and right-hand side must be scalar fields")
    low = float(np.min(rho.samples))
    if low <= 0:
        raise ValueError("density must be strictly positive")

    b = -(rhs.samples[0] - rhs.samples[0].mean())
    b_norm = float(np.sqrt(np.sum(b * b)))
    if b_norm == 0.0:
        return RealField.scalar(grid, np.zeros(grid.shape))

    rho_inverse = 1.0 / rho.samples[0]
    beta_bar = float(rho_inverse.mean())
    operator = _weighted_divergence_operator(rho_inverse)

    def apply_negated(p_samples: np.ndarray) -> np.ndarray:
        return -operator(grid, p_samples)

    def precondition(r_samples: np.ndarray) -> np.ndarray:
        z = _spectral_inverse_laplacian(grid, r_samples, beta_bar)
        return z - z.mean()

    if initial_guess is not None:
        p = initial_guess.samples[0] - initial_guess.samples[0].mean()
    else:
        p = np.zeros(grid.shape)

    r = b - apply_negated(p)
    z = precondition(r)
    d = z
    rz = float(np.sum(r * z))
    residual = float(np.sqrt(np.sum(r * r))) / b_norm
    for _ in range(max_iterations):
        if residual <= tol:
            return RealField.scalar(grid, p - p.mean())
        ad = apply_negated(d)
        dad = float(np.sum(d * ad))
        if dad <= 0:
            break
        alpha = rz / dad
        p = p + alpha * d
        r = r - alpha * ad
        residual = float(np.sqrt(np.sum(r * r))) / b_norm
        z = precondition(r)
        rz_next = float(np.sum(r * z))
        d = z + (rz_next / rz) * d
        rz = rz_next
    if residual <= tol:
        return RealField.scalar(grid, p - p.mean())
    raise ConvergenceError(
        f"pressure iteration stalled at relative residual {residual:.3e} "
        f"after {max_iterations} iterations (tol {tol:.1e})",
        residual,
    )


def run_inhomo(
    config: InhomoConfig,
    initial_rho: RealField,
    initial_v: RealField,
    *,
    path_index: int = 0,
    increments: np.ndarray | None = None,
) -> InhomoPath:
    """Advance one variable-density path from the given initial state.

    The initial velocity is projected once (the constraint at time zero
    is plain incompressibility); momentum starts as rho * v.  Noise
    increments are recorded exactly as drawn so the path can be
    replayed bit for bit, and a supplied table substitutes for internal
    sampling just as in the homogeneous driver.
    """
    grid = config.grid
    if initial_rho.grid != grid or initial_v.grid != grid:
        raise ValueError("initial state lives on a different grid")
    if initial_rho.components != 1:
        raise ValueError("density must be a scalar field")
    if initial_v.components != grid.dim:
        raise ValueError("velocity must have one component per dimension")
    if float(np.min(initial_rho.samples)) < config.rho_floor:
        raise ValueError("initial density dips below rho_floor")
    family = config.family
    if increments is not None:
        if family is None:
            raise ValueError("increment table supplied without a diffusion family")
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (config.n_steps, family.n_modes):
            raise ValueError(
                "increment table must have shape (n_steps, n_modes) = "
                f"({config.n_steps}, {family.n_modes})"
            )

    rho = RealField.scalar(grid, initial_rho.samples[0])
    v = leray_project(initial_v)
    m = RealField(grid, rho.samples[0] * v.samples)

    spacing = grid.spacing
    v0_max = float(np.max(np.abs(v.samples)))
    if v0_max > 0 and config.dt > config.cfl_number * spacing / v0_max:
        raise ValueError(
            "time step violates the CFL bound "
            f"{config.cfl_number} * spacing / max|v| = "
            f"{config.cfl_number * spacing / v0_max:.3e}"
        )
    reference_scale = v0_max if v0_max > 0 else 1.0

    densities = [rho.samples[0]]
    velocities = [v.samples]
    momenta = [m.samples]
    pressures: list[np.ndarray] = []
    masses = [integrate(rho)]
    taken_increments: list[np.ndarray] = []
    floor_warnings: list[int] = []
    cfl_warnings: list[int] = []
    blown_up = False
    truncated_at: int | None = None
    previous_p: RealField | None = None

    for k in range(config.n_steps):
        vmax = float(np.max(np.abs(v.samples)))
        if k > 0 and vmax > 0 and config.dt > config.cfl_number * spacing / vmax:
            cfl_warnings.append(k)

        rho_next = density_step(rho, v, config.dt, config.dealias)
        grade = classify_density(rho_next.samples, config.rho_floor)

        star = m.samples - config.dt * momentum_flux_divergence(
            m, v, config.dealias
        ).samples
        if family is not None:
            if increments is not None:
                row = increments[k]
            else:
                row = sample_increments(
                    family.n_modes, config.dt, stream(config.seed, path_index, k)
                ).values
            for j in range(1, family.n_modes + 1):
                star = star + apply_diffusion(family, (rho, m), j).samples * row[j - 1]
            taken_increments.append(np.array(row, dtype=float))

        if not np.all(np.isfinite(star)) or grade == "truncate":
            blown_up = not np.all(np.isfinite(star))
            truncated_at = k
            if grade == "truncate":
                floor_warnings.append(k + 1)
            break

        rhs = divergence(
            RealField(grid, star / rho_next.samples[0])
        ) * (1.0 / config.dt)
        p = pressure_solve(
            rho_next,
            rhs,
            tol=config.solver_tol,
            max_iterations=config.solver_cap,
            initial_guess=previous_p,
        )
        previous_p = p
        m_next = star - config.dt * gradient(p).samples
        v_next = m_next / rho_next.samples[0]

        if grade == "warn":
            floor_warnings.append(k + 1)

        rho = rho_next
        v = RealField(grid, v_next)
        m = RealField(grid, m_next)
        densities.append(rho.samples[0])
        velocities.append(v.samples)
        momenta.append(m.samples)
        pressures.append(p.samples[0])
        masses.append(integrate(rho))

        if float(np.max(np.abs(v.samples))) > config.blow_up_factor * reference_scale:
            blown_up = True
            truncated_at = k + 1
            break

    steps_stored = len(densities)
    increments_array = (
        np.array(taken_increments[: steps_stored - 1])
        if (family is not None and taken_increments)
        else None
    )
    return InhomoPath(
        config=config,
        path_index=path_index,
        times=np.arange(steps_stored, dtype=float) * config.dt,
        densities=np.array(densities),
        velocities=np.array(velocities),
        momenta=np.array(momenta),
        pressures=np.array(pressures) if pressures else np.zeros((0,) + grid.shape),
        increments=increments_array,
        mass_series=np.array(masses),
        blown_up=blown_up,
        truncated_at=truncated_at,
        floor_warnings=tuple(floor_warnings),
        cfl_warnings=tuple(cfl_warnings),
    )
