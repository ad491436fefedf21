"""Stepping schemes: steady states, replay, refinement, and guards."""

import numpy as np
import pytest

from storus.fields import (
    RealField,
    TorusGrid,
    divergence,
    l2_norm,
    nonlinear_term,
    random_divergence_free,
)
from storus.noise import DiffusionFamily, nested_increment_table
from storus.euler import (
    SimConfig,
    drift,
    run,
    run_ensemble,
    shear_flow,
    taylor_green,
)


def small_grid():
    return TorusGrid(2, 32)


class TestConfigValidation:
    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError, match="positive"):
            SimConfig(small_grid(), dt=0.0, n_steps=1)

    def test_rejects_unknown_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            SimConfig(small_grid(), dt=1e-3, n_steps=1, scheme="heun")

    def test_rk4_refuses_noise(self):
        with pytest.raises(ValueError, match="deterministic"):
            SimConfig(
                small_grid(), dt=1e-3, n_steps=1, scheme="rk4", family=DiffusionFamily()
            )

    def test_rejects_inhomogeneous_family(self):
        fam = DiffusionFamily(kind="inhomogeneous", profile="momentum_tanh")
        with pytest.raises(ValueError, match="homogeneous"):
            SimConfig(small_grid(), dt=1e-3, n_steps=1, family=fam)

    def test_cfl_guard_at_start(self):
        grid = small_grid()
        config = SimConfig(grid, dt=0.5, n_steps=10)
        with pytest.raises(ValueError, match="CFL"):
            run(config, taylor_green(grid))


class TestSteadyStates:
    def test_shear_flow_is_fixed_point(self):
        grid = TorusGrid(2, 64)
        v0 = shear_flow(grid)
        config = SimConfig(grid, dt=1e-3, n_steps=100)
        path = run(config, v0)
        assert l2_norm(path.final_state - v0) < 1e-10
        assert not path.blown_up
        assert path.cfl_warnings == ()

    def test_taylor_green_advection_is_pure_gradient(self):
        grid = TorusGrid(2, 64)
        assert l2_norm(nonlinear_term(taylor_green(grid))) < 1e-11

    def test_taylor_green_steady_under_rk4(self):
        grid = small_grid()
        v0 = taylor_green(grid)
        config = SimConfig(grid, dt=1e-3, n_steps=100, scheme="rk4")
        path = run(config, v0)
        assert l2_norm(path.final_state - v0) < 1e-10


class TestReproducibility:
    def test_replay_is_bit_identical(self):
        grid = small_grid()
        config = SimConfig(
            grid, dt=5e-4, n_steps=40, family=DiffusionFamily(n_modes=8), seed=9
        )
        v0 = taylor_green(grid, amplitude=0.5)
        a = run(config, v0, path_index=2)
        b = run(config, v0, path_index=2)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.increments, b.increments)

    def test_supplied_increments_reproduce_internal_sampling(self):
        grid = small_grid()
        family = DiffusionFamily(n_modes=8)
        config = SimConfig(grid, dt=5e-4, n_steps=40, family=family, seed=9)
        v0 = taylor_green(grid, amplitude=0.5)
        table = nested_increment_table(9, 2, family.n_modes, 5e-4, 40)
        direct = run(config, v0, path_index=2)
        replayed = run(config, v0, path_index=2, increments=table)
        assert np.array_equal(direct.states, replayed.states)

    def test_distinct_paths_differ(self):
        grid = small_grid()
        config = SimConfig(grid, dt=5e-4, n_steps=20, family=DiffusionFamily(n_modes=8))
        v0 = taylor_green(grid, amplitude=0.5)
        a = run(config, v0, path_index=0)
        b = run(config, v0, path_index=1)
        assert not np.array_equal(a.states, b.states)

    def test_zero_amplitude_noise_matches_deterministic(self):
        grid = small_grid()
        v0 = taylor_green(grid, amplitude=0.5)
        noisy = SimConfig(
            grid, dt=1e-3, n_steps=30, family=DiffusionFamily(amplitude=0.0)
        )
        silent = SimConfig(grid, dt=1e-3, n_steps=30)
        assert np.array_equal(run(noisy, v0).states, run(silent, v0).states)

    def test_increment_table_shape_checked(self):
        grid = small_grid()
        family = DiffusionFamily(n_modes=8)
        config = SimConfig(grid, dt=5e-4, n_steps=40, family=family)
        with pytest.raises(ValueError, match="shape"):
            run(config, taylor_green(grid, 0.5), increments=np.zeros((39, 8)))


class TestConservation:
    def test_rk4_energy_conservation(self):
        grid = TorusGrid(2, 64)
        rng = np.random.default_rng(5)
        v0 = random_divergence_free(grid, rng)
        config = SimConfig(grid, dt=2.5e-4, n_steps=1000, scheme="rk4")
        path = run(config, v0)
        e = path.energy_series
        assert np.max(np.abs(e - e[0])) / e[0] < 1e-6

    def test_states_stay_divergence_free(self):
        grid = small_grid()
        config = SimConfig(
            grid, dt=5e-4, n_steps=50, family=DiffusionFamily(n_modes=8), seed=4
        )
        path = run(config, taylor_green(grid, 0.5))
        for i in range(len(path.stored_steps)):
            div = divergence(path.state_at(i))
            assert np.max(np.abs(div.samples)) < 1e-9

    def test_mean_momentum_conserved_without_noise(self):
        grid = small_grid()
        rng = np.random.default_rng(11)
        v0 = random_divergence_free(grid, rng)
        config = SimConfig(grid, dt=2.5e-4, n_steps=200)
        path = run(config, v0)
        first = path.states[0].mean(axis=(1, 2))
        last = path.states[-1].mean(axis=(1, 2))
        assert np.max(np.abs(last - first)) < 1e-13


class TestStrongConvergence:
    def test_nested_refinement_reduces_error(self):
        grid = small_grid()
        family = DiffusionFamily(n_modes=8)
        v0 = taylor_green(grid, amplitude=0.5)
        seed, dt_fine, n_fine = 21, 2.5e-4, 256
        finals = {}
        for coarsening in (1, 2, 4):
            table = nested_increment_table(
                seed, 0, family.n_modes, dt_fine, n_fine, coarsening=coarsening
            )
            config = SimConfig(
                grid,
                dt=dt_fine * coarsening,
                n_steps=n_fine // coarsening,
                family=family,
                seed=seed,
            )
            finals[coarsening] = run(config, v0, increments=table).final_state
        err2 = l2_norm(finals[2] - finals[1])
        err4 = l2_norm(finals[4] - finals[1])
        assert 0 < err2 < 0.9 * err4


class TestGuards:
    def test_blow_up_flagged_and_truncated(self):
        grid = TorusGrid(2, 16)
        config = SimConfig(
            grid, dt=0.2, n_steps=50, cfl_number=1e6, blow_up_factor=10.0
        )
        path = run(config, taylor_green(grid, amplitude=4.0))
        assert path.blown_up
        assert path.truncated_at is not None
        assert path.truncated_at <= 50
        assert np.all(np.isfinite(path.states))
        assert path.stored_steps[-1] <= path.truncated_at

    def test_runtime_cfl_violation_recorded(self):
        grid = small_grid()
        family = DiffusionFamily(amplitude=1.0, n_modes=4)
        v0 = taylor_green(grid, amplitude=1.0)
        dt = 0.24 * grid.spacing  # just under the bound for max|v0| = 1
        table = np.zeros((10, 4))
        table[0, 0] = 4.0  # one kick lifts max|v| past the monitored bound
        config = SimConfig(grid, dt=dt, n_steps=10, family=family)
        path = run(config, v0, increments=table)
        assert len(path.cfl_warnings) > 0
        assert not path.blown_up

    def test_grid_mismatch_rejected(self):
        config = SimConfig(small_grid(), dt=1e-3, n_steps=1)
        with pytest.raises(ValueError, match="grid"):
            run(config, taylor_green(TorusGrid(2, 16)))


class TestEnsembles:
    def test_ordered_and_deterministic(self):
        grid = TorusGrid(2, 16)
        config = SimConfig(
            grid, dt=1e-3, n_steps=10, family=DiffusionFamily(n_modes=4), seed=3
        )
        v0 = taylor_green(grid, amplitude=0.3)
        reducer = lambda p: p.energy_series[-1]
        first = run_ensemble(config, v0, 4, reducer)
        second = run_ensemble(config, v0, 4, reducer)
        assert first == second
        assert len(set(first)) == 4

    def test_threaded_matches_serial(self, monkeypatch):
        grid = TorusGrid(2, 16)
        config = SimConfig(
            grid, dt=1e-3, n_steps=10, family=DiffusionFamily(n_modes=4), seed=3
        )
        v0 = taylor_green(grid, amplitude=0.3)
        reducer = lambda p: p.energy_series[-1]
        serial = run_ensemble(config, v0, 4, reducer)
        monkeypatch.setenv("STORUS_THREADS", "2")
        threaded = run_ensemble(config, v0, 4, reducer)
        assert serial == threaded

    def test_store_every_keeps_endpoints(self):
        grid = TorusGrid(2, 16)
        config = SimConfig(grid, dt=1e-3, n_steps=25, store_every=10)
        path = run(config, taylor_green(grid, 0.3))
        assert list(path.stored_steps) == [0, 10, 20, 25]
        assert len(path.energy_series) == 26
        assert path.states.shape[0] == 4
