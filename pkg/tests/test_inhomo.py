"""Variable-density stepping: transport, pressure solve, and reduction."""

import numpy as np
import pytest

from storus.fields import (
    RealField,
    TorusGrid,
    divergence,
    gradient,
    integrate,
    l2_norm,
    laplacian,
    to_physical,
    to_spectral,
)
from storus.noise import DiffusionFamily, nested_increment_table
from storus.euler import SimConfig, run, taylor_green
from storus.inhomo import (
    ConvergenceError,
    InhomoConfig,
    InhomoPath,
    classify_density,
    density_step,
    pressure_solve,
    run_inhomo,
)


def cosine_density(grid, amplitude=0.4):
    x = grid.coordinates()
    return RealField.scalar(
        grid, 1.0 + amplitude * np.cos(2 * np.pi * x[0]) * np.cos(2 * np.pi * x[1])
    )


class TestDensityStep:
    def test_constant_density_is_invariant(self):
        grid = TorusGrid(2, 32)
        rho = RealField.scalar(grid, np.ones(grid.shape))
        v = taylor_green(grid)
        out = density_step(rho, v, 1e-2)
        assert np.max(np.abs(out.samples - 1.0)) < 1e-14

    def test_zero_velocity_keeps_density(self):
        grid = TorusGrid(2, 32)
        rho = cosine_density(grid)
        v = RealField.zero(grid, 2)
        out = density_step(rho, v, 1e-2)
        assert np.array_equal(out.samples, rho.samples)

    def test_uniform_translation_second_order(self):
        # For v = (c, 0), transport is exact translation; one step of
        # the scheme misses it by (c dt)^2/2 * max|d2 rho/dx2| at
        # leading order, so halving dt quarters the error.
        grid = TorusGrid(2, 128)
        x = grid.coordinates()
        rho = RealField.scalar(grid, 1.0 + 0.3 * np.cos(2 * np.pi * x[0]))
        c = 0.7
        v = RealField(grid, np.stack([np.full(grid.shape, c), np.zeros(grid.shape)]))
        errors = {}
        for dt in (2e-2, 1e-2):
            exact = 1.0 + 0.3 * np.cos(2 * np.pi * (x[0] - c * dt))
            stepped = density_step(rho, v, dt)
            errors[dt] = np.max(np.abs(stepped.samples[0] - exact))
        ratio = errors[2e-2] / errors[1e-2]
        assert 3.2 < ratio < 4.8

    def test_mass_exactly_conserved(self):
        grid = TorusGrid(2, 32)
        rho = cosine_density(grid)
        out = density_step(rho, taylor_green(grid), 5e-3)
        assert abs(integrate(out) - integrate(rho)) < 1e-14

    def test_rejects_vector_density(self):
        grid = TorusGrid(2, 32)
        with pytest.raises(ValueError, match="scalar"):
            density_step(taylor_green(grid), taylor_green(grid), 1e-3)


class TestClassifyDensity:
    def test_grades(self):
        assert classify_density(np.array([0.9, 1.1]), 0.5) == "ok"
        assert classify_density(np.array([0.4, 1.1]), 0.5) == "warn"
        assert classify_density(np.array([0.2, 1.1]), 0.5) == "truncate"


class TestPressureSolve:
    def test_constant_density_matches_spectral_poisson(self):
        grid = TorusGrid(2, 32)
        rng = np.random.default_rng(0)
        source = RealField(grid, rng.standard_normal((2,) + grid.shape))
        rhs = divergence(source)
        rho = RealField.scalar(grid, np.ones(grid.shape))
        p = pressure_solve(rho, rhs, tol=1e-12)
        # independent spectral reference: laplacian(p_ref) = rhs
        coeffs = to_spectral(rhs).coefficients[0]
        lap = to_spectral(laplacian(RealField.scalar(grid, np.zeros(grid.shape))))
        # build multiplier by probing the laplacian on a delta is clumsy;
        # instead verify the defining equation and zero mean directly.
        assert np.max(np.abs(laplacian(p).samples - rhs.samples)) < 1e-9
        assert abs(integrate(p)) < 1e-13
        del coeffs, lap

    def test_manufactured_solution_recovered(self):
        grid = TorusGrid(2, 64)
        x = grid.coordinates()
        p_star = RealField.scalar(
            grid, np.cos(2 * np.pi * x[0]) * np.cos(4 * np.pi * x[1])
        )
        rho = RealField.scalar(grid, 1.0 + 0.4 * np.cos(2 * np.pi * x[0]))
        grad = gradient(p_star)
        weighted = RealField(grid, grad.samples / rho.samples[0])
        rhs = divergence(weighted)
        p = pressure_solve(rho, rhs, tol=1e-12)
        assert np.max(np.abs(p.samples - p_star.samples)) < 1e-7

    def test_zero_rhs_gives_zero_pressure(self):
        grid = TorusGrid(2, 32)
        rho = cosine_density(grid)
        rhs = RealField.scalar(grid, np.zeros(grid.shape))
        p = pressure_solve(rho, rhs)
        assert np.array_equal(p.samples, np.zeros((1,) + grid.shape))

    def test_iteration_cap_raises(self):
        grid = TorusGrid(2, 32)
        rng = np.random.default_rng(1)
        rho = RealField.scalar(grid, 1.0 + 0.8 * rng.uniform(-1, 1, grid.shape) ** 2)
        rhs = divergence(RealField(grid, rng.standard_normal((2,) + grid.shape)))
        with pytest.raises(ConvergenceError) as info:
            pressure_solve(rho, rhs, tol=1e-14, max_iterations=2)
        assert info.value.residual > 0

    def test_nonpositive_density_rejected(self):
        grid = TorusGrid(2, 32)
        rho = RealField.scalar(grid, np.zeros(grid.shape))
        rhs = RealField.scalar(grid, np.zeros(grid.shape))
        with pytest.raises(ValueError, match="positive"):
            pressure_solve(rho, rhs)


class TestRunInhomo:
    def default_family(self, n_modes=8, amplitude=0.25):
        return DiffusionFamily(
            kind="inhomogeneous",
            profile="momentum_tanh",
            amplitude=amplitude,
            n_modes=n_modes,
        )

    def test_stationary_state(self):
        grid = TorusGrid(2, 32)
        rho = cosine_density(grid)
        v = RealField.zero(grid, 2)
        config = InhomoConfig(grid, dt=1e-3, n_steps=20)
        path = run_inhomo(config, rho, v)
        assert np.max(np.abs(path.velocities)) == 0.0
        assert np.max(np.abs(path.densities - rho.samples[0])) == 0.0
        assert np.max(np.abs(path.pressures)) == 0.0

    def test_replay_bit_identical(self):
        grid = TorusGrid(2, 32)
        config = InhomoConfig(grid, dt=1e-3, n_steps=15, family=self.default_family(), seed=5)
        rho, v = cosine_density(grid), taylor_green(grid, 0.4)
        a = run_inhomo(config, rho, v, path_index=1)
        b = run_inhomo(config, rho, v, path_index=1)
        assert np.array_equal(a.velocities, b.velocities)
        assert np.array_equal(a.densities, b.densities)
        assert np.array_equal(a.pressures, b.pressures)

    def test_mass_conserved_along_noisy_path(self):
        grid = TorusGrid(2, 32)
        config = InhomoConfig(grid, dt=1e-3, n_steps=60, family=self.default_family(), seed=2)
        path = run_inhomo(config, cosine_density(grid), taylor_green(grid, 0.4))
        drift = np.abs(path.mass_series - path.mass_series[0]) / path.mass_series[0]
        assert np.max(drift) < 1e-10

    def test_velocity_divergence_within_solver_tolerance(self):
        grid = TorusGrid(2, 32)
        config = InhomoConfig(grid, dt=1e-3, n_steps=30, family=self.default_family(), seed=3)
        path = run_inhomo(config, cosine_density(grid), taylor_green(grid, 0.4))
        worst = max(
            float(np.max(np.abs(divergence(path.velocity_at(i)).samples)))
            for i in range(path.steps_taken + 1)
        )
        assert worst < 1e-8

    def test_momentum_conserved_without_noise(self):
        grid = TorusGrid(2, 32)
        config = InhomoConfig(grid, dt=1e-3, n_steps=50)
        path = run_inhomo(config, cosine_density(grid), taylor_green(grid, 0.4))
        first = path.momenta[0].mean(axis=(1, 2))
        last = path.momenta[-1].mean(axis=(1, 2))
        assert np.max(np.abs(last - first)) < 1e-13

    def test_constant_density_matches_homogeneous_run(self):
        # With rho = 1 and a momentum-saturating family driven by the
        # same streams, the elliptic projection reduces to the spectral
        # one and the trajectory must match the homogeneous driver.
        grid = TorusGrid(2, 32)
        n_steps, dt, seed = 50, 1e-3, 7
        v0 = taylor_green(grid, 0.4)
        inhomo_family = self.default_family()
        homo_family = DiffusionFamily(amplitude=0.25, n_modes=8)
        config_i = InhomoConfig(grid, dt=dt, n_steps=n_steps, family=inhomo_family, seed=seed)
        config_h = SimConfig(grid, dt=dt, n_steps=n_steps, family=homo_family, seed=seed)
        rho = RealField.scalar(grid, np.ones(grid.shape))
        path_i = run_inhomo(config_i, rho, v0)
        path_h = run(config_h, v0)
        assert np.array_equal(path_i.increments, path_h.increments)
        gap = np.max(np.abs(path_i.velocities - path_h.states))
        assert gap < 1e-6

    def test_initial_density_below_floor_rejected(self):
        grid = TorusGrid(2, 32)
        rho = RealField.scalar(grid, np.full(grid.shape, 0.4))
        config = InhomoConfig(grid, dt=1e-3, n_steps=5, rho_floor=0.5)
        with pytest.raises(ValueError, match="rho_floor"):
            run_inhomo(config, rho, taylor_green(grid, 0.3))

    def test_floor_warning_recorded(self):
        # Start with the minimum exactly on the floor; discrete
        # transport undershoots it within a few steps.
        grid = TorusGrid(2, 32)
        x = grid.coordinates()
        rho = RealField.scalar(grid, 1.0 + 0.5 * np.cos(2 * np.pi * x[0]))
        config = InhomoConfig(grid, dt=2e-3, n_steps=40, rho_floor=0.5)
        path = run_inhomo(config, rho, taylor_green(grid, 1.0))
        assert len(path.floor_warnings) > 0
        assert path.truncated_at is None

    def test_nested_increments_refine_along_same_path(self):
        grid = TorusGrid(2, 32)
        family = self.default_family()
        rho, v0 = cosine_density(grid, 0.3), taylor_green(grid, 0.4)
        seed, dt_fine, n_fine = 13, 5e-4, 64
        finals = {}
        for coarsening in (1, 2, 4):
            table = nested_increment_table(
                seed, 0, family.n_modes, dt_fine, n_fine, coarsening=coarsening
            )
            config = InhomoConfig(
                grid,
                dt=dt_fine * coarsening,
                n_steps=n_fine // coarsening,
                family=family,
                seed=seed,
            )
            path = run_inhomo(config, rho, v0, increments=table)
            finals[coarsening] = path.velocities[-1]
        err2 = np.sqrt(np.mean((finals[2] - finals[1]) ** 2))
        err4 = np.sqrt(np.mean((finals[4] - finals[1]) ** 2))
        assert 0 < err2 < err4
