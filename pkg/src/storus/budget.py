"""Energy accounting along paths and mollification commutator diagnostics.

The homogeneous ledger splits each step's energy change through the
exact pointwise identity |v + d|^2 = |v|^2 + 2 v.d + |d|^2, with the
update d decomposed into drift and applied (projected) noise.  The
named terms use strictly left-endpoint quadrature; everything quadratic
in the update that the continuum identity lacks is collected in the
discrete remainder, so the residual isolates the drift's energy
pairing, which the spatial discretization makes vanish.

The weighted budget evaluates the four-term space-time balance for the
variable-density system against analytic test functions: a compactly
supported bump in time and a bump (or the constant one) on the torus.

The commutator tools measure how far a pointwise nonlinearity fails to
commute with mollification, paired against the gradient of a mollified
test field, and fit the decay rate of that failure in the smoothing
scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .euler import SimPath, drift
from .fields import RealField, TorusGrid, divergence, gradient, leray_project
from .inhomo import InhomoPath
from .mollifier import mollify
from .noise import DiffusionFamily, _saturation

__all__ = [
    "CommutatorScan",
    "EnergyLedger",
    "MartingaleReport",
    "ProofTermScan",
    "RateFit",
    "TestFunctionPair",
    "WeightedBudget",
    "commutator_norm",
    "commutator_scan",
    "homogeneous_budget",
    "inhomo_budget",
    "martingale_stats",
    "nonlinearity_names",
    "proof_term_scan",
    "rate_fit",
]


def _mean_square(samples: np.ndarray) -> float:
    """Integral of the pointwise squared magnitude over the torus."""
    return float(np.mean(np.sum(samples * samples, axis=0)))


def _mean_dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.sum(a * b, axis=0)))


@dataclass
class EnergyLedger:
    """Per-time energy accounts of one homogeneous path.

    Cumulative arrays share the path's time axis; step arrays hold the
    per-step increments that were summed.  The raw variants use the
    noise exactly as drawn, before projection; they are diagnostics for
    cross-checks against drivers that apply unprojected forcing.
    """

    times: np.ndarray
    kinetic: np.ndarray
    ito_term: np.ndarray
    martingale_term: np.ndarray
    discrete_remainder: np.ndarray
    residual: np.ndarray
    raw_ito_term: np.ndarray
    raw_martingale_term: np.ndarray
    step_ito: np.ndarray
    step_martingale: np.ndarray
    step_remainder: np.ndarray
    step_raw_ito: np.ndarray
    step_raw_martingale: np.ndarray


def _cumulative(step_values: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(step_values)])


def homogeneous_budget(path: SimPath, family: DiffusionFamily | None = None) -> EnergyLedger:
    """Evaluate the energy ledger along a complete homogeneous path.

    Requires every step stored and, when noise acted, the recorded
    increments; the evaluation replays drift and noise from the stored
    states, so it is a pure function of the path record.
    """
    if path.blown_up:
        raise ValueError("path is flagged by the blow-up detector; no ledger")
    steps = path.steps_taken
    if not np.array_equal(path.stored_steps, np.arange(steps + 1)):
        raise ValueError("ledger needs every step stored (store_every=1)")
    if family is None:
        family = path.config.family
    has_noise = family is not None
    if has_noise and path.increments is None:
        raise ValueError("ledger needs recorded increments for a noisy path")
    if has_noise and len(path.increments) != steps:
        raise ValueError("increment rows do not match the step count")

    grid = path.config.grid
    dt = path.config.dt
    dealias = path.config.dealias
    weights = family.weights() if has_noise else None

    kinetic = np.array([_mean_square(path.states[n]) for n in range(steps + 1)])
    step_ito = np.zeros(steps)
    step_mart = np.zeros(steps)
    step_rem = np.zeros(steps)
    step_raw_ito = np.zeros(steps)
    step_raw_mart = np.zeros(steps)

    for n in range(steps):
        v = RealField(grid, path.states[n])
        drift_samples = drift(v, dealias).samples
        if has_noise:
            row = path.increments[n]
            sat = _saturation(family, v)
            combo = np.zeros(grid.shape)
            shape_squares = np.zeros(grid.shape)
            for j in range(1, family.n_modes + 1):
                shape_j = family.shape_field(j, grid)
                combo = combo + weights[j - 1] * row[j - 1] * shape_j
                shape_squares = shape_squares + weights[j - 1] ** 2 * shape_j**2
            raw_noise = sat * combo
            applied = leray_project(RealField(grid, raw_noise)).samples
            sat_sq = np.sum(sat * sat, axis=0)
            raw_rate = float(np.mean(shape_squares * sat_sq))
            if family.shape == "uniform":
                projected_sat = leray_project(RealField(grid, sat)).samples
                rate = float(np.sum(weights**2)) * _mean_square(projected_sat)
            else:
                rate = 0.0
                for j in range(1, family.n_modes + 1):
                    mode_field = weights[j - 1] * family.shape_field(j, grid) * sat
                    rate += _mean_square(leray_project(RealField(grid, mode_field)).samples)
        else:
            raw_noise = np.zeros_like(path.states[n])
            applied = raw_noise
            raw_rate = 0.0
            rate = 0.0

        step_ito[n] = dt * rate
        step_raw_ito[n] = dt * raw_rate
        step_mart[n] = 2.0 * _mean_dot(path.states[n], applied)
        step_raw_mart[n] = 2.0 * _mean_dot(path.states[n], raw_noise)
        step_rem[n] = (
            (_mean_square(applied) - dt * rate)
            + dt**2 * _mean_square(drift_samples)
            + 2.0 * dt * _mean_dot(drift_samples, applied)
        )

    ito = _cumulative(step_ito)
    mart = _cumulative(step_mart)
    rem = _cumulative(step_rem)
    residual = kinetic - kinetic[0] - ito - mart - rem
    return EnergyLedger(
        times=np.array(path.stored_steps, dtype=float) * dt,
        kinetic=kinetic,
        ito_term=ito,
        martingale_term=mart,
        discrete_remainder=rem,
        residual=residual,
        raw_ito_term=_cumulative(step_raw_ito),
        raw_martingale_term=_cumulative(step_raw_mart),
        step_ito=step_ito,
        step_martingale=step_mart,
        step_remainder=step_rem,
        step_raw_ito=step_raw_ito,
        step_raw_martingale=step_raw_mart,
    )


@dataclass
class MartingaleReport:
    """Ensemble statistics of the martingale term at each output time."""

    times: np.ndarray
    mean: np.ndarray
    standard_error: np.ndarray
    z_scores: np.ndarray
    max_abs_z: float
    flagged: bool


def martingale_stats(ledgers: list[EnergyLedger], z_gate: float = 4.0) -> MartingaleReport:
    """Mean, standard error, and z-score of the martingale term over paths.

    The martingale term has mean zero, so large |z| indicates either a
    bookkeeping error or an undersized ensemble; times with |z| above
    the gate set the flag.
    """
    if len(ledgers) < 8:
        raise ValueError("need at least 8 paths for ensemble statistics")
    times = ledgers[0].times
    for ledger in ledgers[1:]:
        if not np.array_equal(ledger.times, times):
            raise ValueError("ledgers have mismatched time axes")
    matrix = np.stack([ledger.martingale_term for ledger in ledgers])
    mean = matrix.mean(axis=0)
    se = matrix.std(axis=0, ddof=1) / math.sqrt(len(ledgers))
    z = np.where(se > 0, np.divide(mean, se, out=np.zeros_like(mean), where=se > 0), 0.0)
    max_abs = float(np.max(np.abs(z)))
    return MartingaleReport(
        times=times,
        mean=mean,
        standard_error=se,
        z_scores=z,
        max_abs_z=max_abs,
        flagged=max_abs > z_gate,
    )


def _bump(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u, dtype=float)
    inside = np.abs(u) < 1.0
    with np.errstate(divide="ignore"):
        out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class TestFunctionPair:
    """Analytic space-time test functions for the weighted budget.

    theta is a compactly supported bump in time centred at theta_center
    with half-width theta_width; its derivative is evaluated from the
    formula, never by differencing.  psi_center = None selects the
    constant spatial weight; otherwise psi is a radial bump of the
    given radius around psi_center with periodic distance.
    """

    theta_center: float
    theta_width: float
    psi_center: tuple[float, ...] | None = None
    psi_radius: float = 0.25

    def __post_init__(self) -> None:
        if self.theta_width <= 0:
            raise ValueError("theta_width must be positive")
        if not 0 < self.psi_radius < 0.5:
            raise ValueError("psi_radius must lie in (0, 1/2)")

    def theta(self, t: float) -> float:
        return float(_bump(np.array([(t - self.theta_center) / self.theta_width]))[0])

    def theta_prime(self, t: float) -> float:
        u = (t - self.theta_center) / self.theta_width
        if not abs(u) < 1.0:
            return 0.0
        value = math.exp(-1.0 / (1.0 - u * u))
        return value * (-2.0 * u / (1.0 - u * u) ** 2) / self.theta_width

    def _offsets(self, grid: TorusGrid) -> np.ndarray:
        if self.psi_center is None or len(self.psi_center) != grid.dim:
            raise ValueError("psi_center must match the grid dimension")
        x = grid.coordinates()
        deltas = []
        for axis in range(grid.dim):
            raw = x[axis] - self.psi_center[axis]
            deltas.append((raw + 0.5) % 1.0 - 0.5)
        return np.stack(deltas)

    def psi_values(self, grid: TorusGrid) -> np.ndarray:
        if self.psi_center is None:
            return np.ones(grid.shape)
        offsets = self._offsets(grid)
        s = np.sum(offsets**2, axis=0) / self.psi_radius**2
        out = np.zeros(grid.shape)
        inside = s < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
        return out

    def psi_gradient(self, grid: TorusGrid) -> np.ndarray:
        if self.psi_center is None:
            return np.zeros((grid.dim,) + grid.shape)
        offsets = self._offsets(grid)
        s = np.sum(offsets**2, axis=0) / self.psi_radius**2
        values = np.zeros(grid.shape)
        factor = np.zeros(grid.shape)
        inside = s < 1.0
        values[inside] = np.exp(-1.0 / (1.0 - s[inside]))
        factor[inside] = values[inside] / (1.0 - s[inside]) ** 2
        return -factor * 2.0 * offsets / self.psi_radius**2


@dataclass
class WeightedBudget:
    """Cumulative four-term weighted energy balance along one path.

    transport_term weighs the energy density by the time derivative of
    theta; flux_term pairs the energy-pressure flux with the spatial
    gradient of psi; ito_term and martingale_term carry the
    density-weighted noise production and injection.  The residual is
    the running sum of all four and vanishes with the step size.
    """

    times: np.ndarray
    transport_term: np.ndarray
    flux_term: np.ndarray
    ito_term: np.ndarray
    martingale_term: np.ndarray
    residual: np.ndarray

    @property
    def final_residual(self) -> float:
        return float(self.residual[-1])


def inhomo_budget(
    path: InhomoPath,
    pair: TestFunctionPair,
    family: DiffusionFamily | None = None,
) -> WeightedBudget:
    """Evaluate the weighted balance for a variable-density path.

    All quadrature is left-endpoint in time; the pressure used in the
    flux term is the one the step itself computed, which is what makes
    the noise's constraint-restoring part cancel between the flux and
    injection terms.  theta must be supported strictly inside the
    path's time span.
    """
    config = path.config
    if path.blown_up or path.truncated_at is not None:
        raise ValueError("path is flagged; no weighted budget")
    if family is None:
        family = config.family
    has_noise = family is not None
    if has_noise and path.increments is None:
        raise ValueError("weighted budget needs recorded increments")
    if float(np.min(path.densities)) < config.rho_floor:
        raise ValueError("density dips below the certified floor")
    horizon = path.times[-1]
    if pair.theta_center - pair.theta_width <= 0 or pair.theta_center + pair.theta_width >= horizon:
        raise ValueError("theta support must lie strictly inside the time span")

    grid = config.grid
    dt = config.dt
    steps = path.steps_taken
    psi = pair.psi_values(grid)
    grad_psi = pair.psi_gradient(grid)
    weights = family.weights() if has_noise else None

    step_transport = np.zeros(steps)
    step_flux = np.zeros(steps)
    step_ito = np.zeros(steps)
    step_mart = np.zeros(steps)

    for n in range(steps):
        t_n = path.times[n]
        theta_n = pair.theta(t_n)
        theta_dot = pair.theta_prime(t_n)
        rho = path.densities[n]
        v = path.velocities[n]
        energy_density = 0.5 * rho * np.sum(v * v, axis=0)

        step_transport[n] = dt * theta_dot * float(np.mean(energy_density * psi))

        if theta_n != 0.0:
            p = path.pressures[n]
            carried = energy_density + p
            flux_dot = np.sum(v * grad_psi, axis=0)
            step_flux[n] = dt * theta_n * float(np.mean(carried * flux_dot))

            if has_noise:
                rho_field = RealField.scalar(grid, rho)
                m_field = RealField(grid, path.momenta[n])
                sat = _saturation(family, (rho_field, m_field))
                sat_sq = np.sum(sat * sat, axis=0)
                v_dot_sat = np.sum(v * sat, axis=0)
                row = path.increments[n]
                shape_squares = np.zeros(grid.shape)
                combo = np.zeros(grid.shape)
                for j in range(1, family.n_modes + 1):
                    shape_j = family.shape_field(j, grid)
                    shape_squares = shape_squares + weights[j - 1] ** 2 * shape_j**2
                    combo = combo + weights[j - 1] * row[j - 1] * shape_j
                rate_density = shape_squares * sat_sq / (2.0 * rho)
                step_ito[n] = dt * theta_n * float(np.mean(rate_density * psi))
                step_mart[n] = theta_n * float(np.mean(v_dot_sat * combo * psi))

    transport = _cumulative(step_transport)
    flux = _cumulative(step_flux)
    ito = _cumulative(step_ito)
    mart = _cumulative(step_mart)
    return WeightedBudget(
        times=path.times.copy(),
        transport_term=transport,
        flux_term=flux,
        ito_term=ito,
        martingale_term=mart,
        residual=transport + flux + ito + mart,
    )


# --- commutator diagnostics -------------------------------------------------

_SCALAR_MAPS = ("square", "affine")
_TENSOR_MAPS = ("quadratic", "momentum_flux")


def nonlinearity_names() -> tuple[str, ...]:
    return _SCALAR_MAPS + _TENSOR_MAPS


def _tensor_field(grid: TorusGrid, tensor: np.ndarray) -> RealField:
    d = tensor.shape[0]
    return RealField(grid, tensor.reshape((d * d,) + grid.shape))


def _mollify_tensor(grid: TorusGrid, tensor: np.ndarray, eps: float) -> np.ndarray:
    d = tensor.shape[0]
    smoothed = mollify(_tensor_field(grid, tensor), eps)
    return smoothed.samples.reshape((d, d) + grid.shape)


def _jacobian(field: RealField) -> np.ndarray:
    """J[i, j] = d phi_j / d x_i, all derivatives spectral."""
    grid = field.grid
    rows = []
    for j in range(field.components):
        rows.append(gradient(RealField.scalar(grid, field.samples[j])).samples)
    # rows[j][i] = d phi_j / d x_i; transpose to [i, j]
    stacked = np.stack(rows)  # (j, i, *shape)
    return np.swapaxes(stacked, 0, 1)


def _divergence_rows(grid: TorusGrid, tensor: np.ndarray) -> np.ndarray:
    """Row-wise divergence of a (d, d, *shape) tensor: out_i = sum_j d_j T_ij."""
    rows = []
    for i in range(tensor.shape[0]):
        rows.append(divergence(RealField(grid, tensor[i])).samples[0])
    return np.stack(rows)


def _evaluate_map(
    name: str,
    field: RealField,
    rho: RealField | None,
) -> np.ndarray:
    if name == "square":
        if field.components != 1:
            raise ValueError("square acts on scalar fields")
        return field.samples[0] ** 2
    if name == "affine":
        if field.components != 1:
            raise ValueError("affine acts on scalar fields")
        return 2.0 * field.samples[0] + 1.0
    if name == "quadratic":
        return np.einsum("i...,j...->ij...", field.samples, field.samples)
    if name == "momentum_flux":
        if rho is None:
            raise ValueError("momentum_flux needs a density field")
        outer = np.einsum("i...,j...->ij...", field.samples, field.samples)
        return outer / rho.samples[0]
    raise ValueError(f"unknown nonlinearity {name!r}; choose from {nonlinearity_names()}")


def commutator_norm(
    field: RealField,
    phi: RealField,
    name: str,
    eps: float,
    *,
    rho: RealField | None = None,
    rho_floor: float = 0.0,
) -> float:
    """L1 size of the mollification commutator paired with a test gradient.

    Computes H(smoothed state) minus smoothed H(state), contracts it
    with the gradient of the smoothed test field (the trace contraction
    for scalar maps), and integrates the absolute value.  Affine maps
    commute with unit-mass smoothing, so they give exactly zero.
    """
    grid = field.grid
    if name == "momentum_flux":
        if rho is None:
            raise ValueError("momentum_flux needs a density field")
        if float(np.min(rho.samples)) < max(rho_floor, np.finfo(float).tiny):
            raise ValueError("density dips below the required floor")
    if phi.components != grid.dim:
        raise ValueError("test field needs one component per dimension")

    smoothed_field = mollify(field, eps)
    smoothed_rho = mollify(rho, eps) if rho is not None else None
    direct = _evaluate_map(name, smoothed_field, smoothed_rho)
    plain = _evaluate_map(name, field, rho)
    phi_eps = mollify(phi, eps)

    if name in _SCALAR_MAPS:
        smoothed_plain = mollify(RealField.scalar(grid, plain), eps).samples[0]
        gap = direct - smoothed_plain
        contraction = gap * divergence(phi_eps).samples[0]
    else:
        smoothed_plain = _mollify_tensor(grid, plain, eps)
        gap = direct - smoothed_plain
        contraction = np.einsum("ij...,ij...->...", gap, _jacobian(phi_eps))
    return float(np.mean(np.abs(contraction)))


@dataclass(frozen=True)
class RateFit:
    """Log-log least-squares decay estimate."""

    slope: float
    r_squared: float
    n_points: int


def rate_fit(epsilons, norms) -> RateFit:
    """Fit log(norm) against log(eps) by ordinary least squares.

    Zero norms carry no logarithm and are excluded; fewer than four
    surviving points is an error.  The slope is invariant under
    rescaling the norms by any positive constant.
    """
    eps = np.asarray(epsilons, dtype=float)
    values = np.asarray(norms, dtype=float)
    if eps.shape != values.shape:
        raise ValueError("epsilons and norms must align")
    if np.any(values < 0):
        raise ValueError("norms must be nonnegative")
    keep = values > 0
    if int(np.sum(keep)) < 4:
        raise ValueError("need at least 4 positive norms for a rate fit")
    x = np.log(eps[keep])
    y = np.log(values[keep])
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RateFit(slope=float(slope), r_squared=float(r_squared), n_points=int(np.sum(keep)))


@dataclass
class CommutatorScan:
    """Commutator norms across smoothing scales with their fitted decay."""

    epsilons: tuple[float, ...]
    norms: tuple[float, ...]
    fitted_slope: float
    r_squared: float
    theoretical_slope: float | None = None


def commutator_scan(
    field: RealField,
    phi: RealField,
    name: str,
    epsilons,
    *,
    rho: RealField | None = None,
    rho_floor: float = 0.0,
    theoretical_slope: float | None = None,
) -> CommutatorScan:
    """Run commutator_norm over a scale list and fit the decay rate."""
    eps_list = tuple(float(e) for e in epsilons)
    norms = tuple(
        commutator_norm(field, phi, name, eps, rho=rho, rho_floor=rho_floor)
        for eps in eps_list
    )
    fit = rate_fit(eps_list, norms)
    return CommutatorScan(
        epsilons=eps_list,
        norms=norms,
        fitted_slope=fit.slope,
        r_squared=fit.r_squared,
        theoretical_slope=theoretical_slope,
    )


@dataclass
class ProofTermScan:
    """Paired advection commutator integrals across smoothing scales.

    Values are signed; the decay fit uses their magnitudes and is None
    when fewer than four scales give a nonzero value.
    """

    epsilons: tuple[float, ...]
    values: tuple[float, ...]
    fitted_slope: float | None
    r_squared: float | None


def proof_term_scan(
    field: RealField,
    epsilons,
    *,
    rho: RealField | None = None,
    rho_floor: float = 0.0,
) -> ProofTermScan:
    """Evaluate the smoothed advection pairing integral at each scale.

    Without a density this is the integral of twice the smoothed
    velocity against the divergence gap between the product of
    smoothed fields and the smoothed product.  With a density, the
    momentum-flux gap is paired with the smoothed transport velocity.
    """
    grid = field.grid
    if field.components != grid.dim:
        raise ValueError("expected a velocity or momentum field")
    if rho is not None and float(np.min(rho.samples)) < max(rho_floor, np.finfo(float).tiny):
        raise ValueError("density dips below the required floor")

    eps_list = tuple(float(e) for e in epsilons)
    values = []
    for eps in eps_list:
        smoothed = mollify(field, eps)
        if rho is None:
            inner_tensor = np.einsum(
                "i...,j...->ij...", smoothed.samples, smoothed.samples
            )
            outer_tensor = _mollify_tensor(
                grid,
                np.einsum("i...,j...->ij...", field.samples, field.samples),
                eps,
            )
            gap = _divergence_rows(grid, inner_tensor) - _divergence_rows(
                grid, outer_tensor
            )
            value = 2.0 * _mean_dot(smoothed.samples, gap)
        else:
            smoothed_rho = mollify(rho, eps).samples[0]
            transport = smoothed.samples / smoothed_rho
            inner_tensor = (
                np.einsum("i...,j...->ij...", smoothed.samples, smoothed.samples)
                / smoothed_rho
            )
            outer_tensor = _mollify_tensor(
                grid,
                np.einsum("i...,j...->ij...", field.samples, field.samples)
                / rho.samples[0],
                eps,
            )
            gap = _divergence_rows(grid, inner_tensor) - _divergence_rows(
                grid, outer_tensor
            )
            value = _mean_dot(transport, gap)
        values.append(value)

    magnitudes = np.abs(np.array(values))
    if int(np.sum(magnitudes > 0)) >= 4:
        fit = rate_fit(eps_list, magnitudes)
        slope, r_squared = fit.slope, fit.r_squared
    else:
        slope, r_squared = None, None
    return ProofTermScan(
        epsilons=eps_list,
        values=tuple(values),
        fitted_slope=slope,
        r_squared=r_squared,
    )
