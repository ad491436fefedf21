"""Time stepping for stochastically forced incompressible flow on the torus.

The state is a divergence-free velocity field advanced by an explicit
Euler-Maruyama step: the deterministic drift is the projected advection
term, the noise enters through a diffusion family evaluated at the
current state, and the whole update is re-projected so every stored
state is divergence free.  A fourth-order Runge-Kutta scheme is offered
for purely deterministic runs.

Paths are reproducible: each (seed, path, step) triple owns an
independent counter-based stream, and a run can be replayed or refined
by passing an explicit increment table built from the same seed.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Sequence, TypeVar

import numpy as np

from .fields import RealField, TorusGrid, inner, leray_project, nonlinear_term
from .noise import DiffusionFamily, apply_diffusion, sample_increments, stream

__all__ = [
    "SimConfig",
    "SimPath",
    "drift",
    "run",
    "run_ensemble",
    "shear_flow",
    "taylor_green",
]

_SCHEMES = ("euler_maruyama", "rk4")

THREAD_COUNT_VAR = "STORUS_THREADS"


@dataclass(frozen=True)
class SimConfig:
    """Parameters of a single stochastic (or deterministic) run.

    The advective stability bound dt <= cfl_number * spacing / max|v|
    is enforced against the initial state and monitored at every step;
    later violations are recorded on the path rather than fatal.
    """

    grid: TorusGrid
    dt: float
    n_steps: int
    family: DiffusionFamily | None = None
    seed: int = 0
    scheme: str = "euler_maruyama"
    dealias: bool = True
    cfl_number: float = 0.25
    blow_up_factor: float = 1e3
    store_every: int = 1

    def __post_init__(self) -> None:
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError("time step must be positive and finite")
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {_SCHEMES}")
        if self.scheme == "rk4" and self.family is not None:
            raise ValueError("rk4 stepping is deterministic; drop the diffusion family")
        if self.family is not None and self.family.kind != "homogeneous":
            raise ValueError("velocity stepping takes a homogeneous diffusion family")
        if self.cfl_number <= 0:
            raise ValueError("cfl_number must be positive")
        if self.blow_up_factor <= 1:
            raise ValueError("blow_up_factor must exceed 1")
        if self.store_every < 1:
            raise ValueError("store_every must be at least 1")


@dataclass
class SimPath:
    """Record of one run: stored states, energies, increments, and flags.

    states[i] is the velocity at step stored_steps[i]; the energy series
    covers every step taken (squared L2 norm, no half).  The increment
    table holds the raw noise increments exactly as drawn, one row per
    completed step, so a run can be replayed bit for bit.
    """

    config: SimConfig
    path_index: int
    stored_steps: np.ndarray
    times: np.ndarray
    states: np.ndarray
    energy_series: np.ndarray
    increments: np.ndarray | None
    blown_up: bool = False
    truncated_at: int | None = None
    cfl_warnings: tuple[int, ...] = dataclass_field(default=())

    @property
    def steps_taken(self) -> int:
        return len(self.energy_series) - 1

    @property
    def final_state(self) -> RealField:
        return RealField(self.config.grid, self.states[-1])

    def state_at(self, stored_index: int) -> RealField:
        return RealField(self.config.grid, self.states[stored_index])


def taylor_green(grid: TorusGrid, amplitude: float = 1.0) -> RealField:
    """Cellular vortex array; its advection term is a pure gradient, so it
    is a steady state of the projected dynamics."""
    if grid.dim != 2:
        raise ValueError("taylor_green requires a two-dimensional grid")
    x = grid.coordinates()
    u1 = amplitude * np.sin(2 * np.pi * x[0]) * np.cos(2 * np.pi * x[1])
    u2 = -amplitude * np.cos(2 * np.pi * x[0]) * np.sin(2 * np.pi * x[1])
    return RealField(grid, np.stack([u1, u2]))


def shear_flow(grid: TorusGrid, amplitude: float = 1.0) -> RealField:
    """Unidirectional flow varying across the stream; exactly steady."""
    if grid.dim != 2:
        raise ValueError("shear_flow requires a two-dimensional grid")
    x = grid.coordinates()
    u1 = amplitude * np.sin(2 * np.pi * x[1])
    return RealField(grid, np.stack([u1, np.zeros(grid.shape)]))


def drift(state: RealField, dealias: bool = True) -> RealField:
    """Deterministic tendency: minus the projected advection term."""
    return RealField(state.grid, -nonlinear_term(state, dealias=dealias).samples)


def _rk4_step(state: RealField, dt: float, dealias: bool) -> np.ndarray:
    k1 = drift(state, dealias).samples
    k2 = drift(RealField(state.grid, state.samples + 0.5 * dt * k1), dealias).samples
    k3 = drift(RealField(state.grid, state.samples + 0.5 * dt * k2), dealias).samples
    k4 = drift(RealField(state.grid, state.samples + dt * k3), dealias).samples
    return state.samples + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run(
    config: SimConfig,
    initial: RealField,
    *,
    path_index: int = 0,
    increments: np.ndarray | None = None,
) -> SimPath:
    """Advance one path from the given initial state.

    The initial state is projected once so the run starts divergence
    free.  When an increment table is supplied it replaces the internal
    sampling step for step and must have one row per step; rows drawn
    from the same (seed, path, step) streams reproduce the internal run
    exactly, and summed fine rows refine it along the same noise path.
    """
    if initial.grid != config.grid:
        raise ValueError("initial state lives on a different grid")
    if initial.components != config.grid.dim:
        raise ValueError("initial state must be a velocity field")
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

    v = leray_project(initial)
    spacing = config.grid.spacing
    v0_max = float(np.max(np.abs(v.samples)))
    if v0_max > 0 and config.dt > config.cfl_number * spacing / v0_max:
        raise ValueError(
            "time step violates the CFL bound "
            f"{config.cfl_number} * spacing / max|v| = "
            f"{config.cfl_number * spacing / v0_max:.3e}"
        )
    reference_scale = v0_max if v0_max > 0 else 1.0

    stored_steps = [0]
    stored_states = [v.samples]
    energies = [inner(v, v)]
    taken_increments: list[np.ndarray] = []
    cfl_warnings: list[int] = []
    blown_up = False
    truncated_at: int | None = None

    for k in range(config.n_steps):
        vmax = float(np.max(np.abs(v.samples)))
        if k > 0 and vmax > 0 and config.dt > config.cfl_number * spacing / vmax:
            cfl_warnings.append(k)

        if config.scheme == "rk4":
            update = _rk4_step(v, config.dt, config.dealias)
        else:
            update = v.samples + config.dt * drift(v, config.dealias).samples
            if family is not None:
                if increments is not None:
                    row = increments[k]
                else:
                    row = sample_increments(
                        family.n_modes, config.dt, stream(config.seed, path_index, k)
                    ).values
                for j in range(1, family.n_modes + 1):
                    update = update + apply_diffusion(family, v, j).samples * row[j - 1]
                taken_increments.append(np.array(row, dtype=float))

        if not np.all(np.isfinite(update)):
            blown_up = True
            truncated_at = k
            if stored_steps[-1] != k:
                stored_steps.append(k)
                stored_states.append(v.samples)
            break

        new = leray_project(RealField(config.grid, update))
        v = new
        energies.append(inner(v, v))

        step = k + 1
        is_last = step == config.n_steps
        overflow = float(np.max(np.abs(v.samples))) > config.blow_up_factor * reference_scale
        if step % config.store_every == 0 or is_last or overflow:
            if stored_steps[-1] != step:
                stored_steps.append(step)
                stored_states.append(v.samples)
        if overflow:
            blown_up = True
            truncated_at = step
            break

    increments_array = (
        np.array(taken_increments) if (family is not None and taken_increments) else None
    )
    return SimPath(
        config=config,
        path_index=path_index,
        stored_steps=np.array(stored_steps, dtype=int),
        times=np.array(stored_steps, dtype=float) * config.dt,
        states=np.array(stored_states),
        energy_series=np.array(energies),
        increments=increments_array,
        blown_up=blown_up,
        truncated_at=truncated_at,
        cfl_warnings=tuple(cfl_warnings),
    )


_T = TypeVar("_T")


def run_ensemble(
    config: SimConfig,
    initial: RealField,
    n_paths: int,
    path_reducer: Callable[[SimPath], _T] | None = None,
) -> list:
    """Run independent paths 0..n_paths-1 from one initial state.

    Paths differ only through their path index, which selects disjoint
    noise streams.  Results are returned in path order.  A reducer lets
    large ensembles stream: each path is collapsed to its summary before
    the next one is simulated.  Set STORUS_THREADS to a worker count to
    evaluate paths concurrently; ordering and values are unchanged.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")

    def one(index: int):
        path = run(config, initial, path_index=index)
        return path_reducer(path) if path_reducer is not None else path

    workers = int(os.environ.get(THREAD_COUNT_VAR, "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(n_paths)))
    return [one(i) for i in range(n_paths)]
