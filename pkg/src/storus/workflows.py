"""Experiment orchestration behind the CLI subcommands.

Each workflow takes a validated RunConfig, runs the computation, and
writes its results under the output directory: CSV tables and JSON
records first, then figures rendered from the same data unless
rendering is turned off.  Workflows return the manifest or summary
dictionary they wrote, which the tests and the CLI both use.

The budget workflow replays simulation paths from the manifest's
config instead of reading bulk state files: the seeded counter-based
streams make the replay bit-identical to the original run, so full
trajectories never need to hit the disk.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .budget import (
    TestFunctionPair,
    commutator_scan,
    homogeneous_budget,
    inhomo_budget,
    martingale_stats,
    proof_term_scan,
    rate_fit,
)
from .config import ConfigError, RunConfig, config_hash, parse_config
from .euler import SimConfig, run_ensemble, shear_flow, taylor_green
from .fields import RealField, TorusGrid, random_divergence_free
from .inhomo import InhomoConfig, run_inhomo
from .noise import sample_increments, stream, verify_growth_conditions
from .regularity import (
    BesovParams,
    SyntheticFieldSpec,
    besov_seminorm,
    default_shift_set,
    estimate_holder_exponent,
    make_synthetic_field,
    shift_difference_norm,
)
from .storage import load_field, read_manifest, save_field, write_csv, write_json

__all__ = [
    "ENERGY_COLUMNS",
    "ENERGY_COLUMNS_INHOMO",
    "LEDGER_COLUMNS",
    "MARTINGALE_COLUMNS",
    "SCAN_COLUMNS",
    "SHIFT_COLUMNS",
    "WEIGHTED_COLUMNS",
    "build_density",
    "build_initial",
    "run_besov",
    "run_budget",
    "run_commutator_scan",
    "run_noise_check",
    "run_simulate",
]

ENERGY_COLUMNS = ("path", "time", "kinetic")
ENERGY_COLUMNS_INHOMO = ("path", "time", "kinetic", "mass", "min_density")
LEDGER_COLUMNS = (
    "path",
    "time",
    "kinetic",
    "ito_term",
    "martingale_term",
    "discrete_remainder",
    "residual",
)
MARTINGALE_COLUMNS = ("time", "mean", "standard_error", "z_score")
WEIGHTED_COLUMNS = (
    "pair",
    "time",
    "transport_term",
    "flux_term",
    "ito_term",
    "martingale_term",
    "residual",
)
SCAN_COLUMNS = ("epsilon", "seed", "value")
SHIFT_COLUMNS = ("shift", "length", "norm")


def build_initial(config: RunConfig) -> RealField:
    """Construct the initial velocity field named by the config."""
    grid = config.grid()
    spec = config.initial
    kind = spec.get("kind", "taylor_green")
    amplitude = float(spec.get("amplitude", 1.0))
    if kind == "taylor_green":
        return taylor_green(grid, amplitude)
    if kind == "shear_flow":
        return shear_flow(grid, amplitude)
    if kind == "zero":
        return RealField.zero(grid, grid.dim)
    rng = np.random.default_rng(int(spec.get("seed", config.seed)))
    sampled = random_divergence_free(grid, rng)
    return RealField(grid, amplitude * sampled.samples)


def build_density(config: RunConfig) -> RealField:
    """Construct the initial density field named by the config."""
    grid = config.grid()
    spec = config.density
    kind = spec.get("kind", "constant")
    base = float(spec.get("base", 1.0))
    contrast = float(spec.get("contrast", 0.0))
    x = grid.coordinates()
    if kind == "constant":
        values = np.full(grid.shape, base)
    elif kind == "cosine":
        values = base + contrast * np.cos(2.0 * np.pi * x[0])
    else:
        if grid.dim != 2:
            raise ConfigError("density.kind", "cosine_2d needs grid.dim = 2")
        values = base + contrast * np.cos(2.0 * np.pi * x[0]) * np.cos(2.0 * np.pi * x[1])
    return RealField.scalar(grid, values)


def _sim_config(config: RunConfig) -> SimConfig:
    return SimConfig(
        config.grid(),
        dt=config.dt,
        n_steps=config.n_steps,
        family=config.family(),
        seed=config.seed,
        dealias=config.dealias,
    )


def _inhomo_config(config: RunConfig) -> InhomoConfig:
    floor = float(config.density.get("floor", 0.5))
    return InhomoConfig(
        config.grid(),
        dt=config.dt,
        n_steps=config.n_steps,
        family=config.family(),
        seed=config.seed,
        rho_floor=floor,
        dealias=config.dealias,
    )


def _path_record(index: int, path) -> dict[str, Any]:
    record = {
        "index": index,
        "blown_up": bool(path.blown_up),
        "truncated_at": path.truncated_at,
        "steps_taken": int(path.steps_taken),
    }
    if hasattr(path, "floor_warnings"):
        record["floor_warnings"] = [int(k) for k in path.floor_warnings]
    return record


def run_simulate(config: RunConfig, render: bool = True) -> dict[str, Any]:
    """Run the configured ensemble and write checkpoints plus a manifest."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[dict[str, Any]] = []
    energy_rows: list[tuple] = []
    files: list[str] = []
    traces: list[tuple[np.ndarray, np.ndarray]] = []

    if config.system == "homogeneous":
        sim = _sim_config(config)
        v0 = build_initial(config)
        paths = run_ensemble(sim, v0, config.paths)
        for i, path in enumerate(paths):
            records.append(_path_record(i, path))
            for t, e in zip(path.times, path.energy_series):
                energy_rows.append((i, t, e))
            traces.append((path.times, path.energy_series))
            name = f"final_velocity_{i:04d}.npy"
            save_field(out / name, path.states[-1])
            files.append(name)
    else:
        sim = _inhomo_config(config)
        rho0 = build_density(config)
        v0 = build_initial(config)
        for i in range(config.paths):
            path = run_inhomo(sim, rho0, v0, path_index=i)
            records.append(_path_record(i, path))
            kinetic = [
                float(np.mean(path.densities[k] * np.sum(path.velocities[k] ** 2, axis=0)))
                for k in range(path.steps_taken + 1)
            ]
            min_rho = [float(np.min(path.densities[k])) for k in range(path.steps_taken + 1)]
            for k, t in enumerate(path.times):
                energy_rows.append((i, t, kinetic[k], path.mass_series[k], min_rho[k]))
            traces.append((path.times, np.array(kinetic)))
            for label, data in (
                ("density", path.densities[-1]),
                ("velocity", path.velocities[-1]),
                ("momentum", path.momenta[-1]),
                ("pressure", path.pressures[-1]),
            ):
                name = f"final_{label}_{i:04d}.npy"
                save_field(out / name, data)
                files.append(name)

    columns = ENERGY_COLUMNS if config.system == "homogeneous" else ENERGY_COLUMNS_INHOMO
    write_csv(out / "energy.csv", columns, energy_rows)
    files.append("energy.csv")

    manifest = {
        "config": config.raw,
        "config_hash": config_hash(config),
        "version": __version__,
        "system": config.system,
        "paths": config.paths,
        "seed": config.seed,
        "path_records": records,
        "files": sorted(files),
    }
    write_json(out / "manifest.json", manifest)

    if render:
        from .figures import energy_figure

        energy_figure(traces, out / "energy.png")
    return manifest


def _pairs_from(config: RunConfig) -> list[TestFunctionPair]:
    specs = config.experiment.get("pairs")
    if not specs:
        horizon = config.horizon()
        return [TestFunctionPair(theta_center=0.5 * horizon, theta_width=0.25 * horizon)]
    pairs = []
    for k, spec in enumerate(specs):
        if not isinstance(spec, dict) or "theta_center" not in spec or "theta_width" not in spec:
            raise ConfigError(
                f"experiment.pairs[{k}]", "needs theta_center and theta_width"
            )
        center = spec.get("psi_center")
        pairs.append(
            TestFunctionPair(
                theta_center=float(spec["theta_center"]),
                theta_width=float(spec["theta_width"]),
                psi_center=tuple(float(c) for c in center) if center is not None else None,
                psi_radius=float(spec.get("psi_radius", 0.25)),
            )
        )
    return pairs


def run_budget(manifest_source: str | Path, out_dir: str | Path | None = None, render: bool = True) -> dict[str, Any]:
    """Replay the manifest's ensemble and write its energy accounting."""
    manifest = read_manifest(manifest_source)
    config = parse_config(manifest["config"])
    if config_hash(config) != manifest["config_hash"]:
        raise ValueError("manifest config hash does not match its config")
    out = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict[str, Any] = {"config_hash": manifest["config_hash"], "system": config.system}
    files: list[str] = []

    if config.system == "homogeneous":
        sim = _sim_config(config)
        v0 = build_initial(config)
        paths = run_ensemble(sim, v0, config.paths)
        usable = [(i, p) for i, p in enumerate(paths) if not p.blown_up]
        skipped = [i for i, p in enumerate(paths) if p.blown_up]
        if not usable:
            raise ValueError("every path is flagged by the blow-up detector")
        ledgers = {i: homogeneous_budget(p) for i, p in usable}
        rows = []
        residuals = {}
        for i, ledger in ledgers.items():
            scale = ledger.kinetic[0] if ledger.kinetic[0] > 0 else 1.0
            residuals[i] = float(np.max(np.abs(ledger.residual)) / scale)
            for k in range(len(ledger.times)):
                rows.append(
                    (
                        i,
                        ledger.times[k],
                        ledger.kinetic[k],
                        ledger.ito_term[k],
                        ledger.martingale_term[k],
                        ledger.discrete_remainder[k],
                        ledger.residual[k],
                    )
                )
        write_csv(out / "ledger.csv", LEDGER_COLUMNS, rows)
        files.append("ledger.csv")
        summary["relative_residual_by_path"] = {str(i): residuals[i] for i in residuals}
        summary["max_relative_residual"] = max(residuals.values())
        summary["skipped_paths"] = skipped

        if len(ledgers) >= 8:
            report = martingale_stats([ledgers[i] for i, _ in usable])
            write_csv(
                out / "martingale.csv",
                MARTINGALE_COLUMNS,
                [
                    (report.times[k], report.mean[k], report.standard_error[k], report.z_scores[k])
                    for k in range(len(report.times))
                ],
            )
            files.append("martingale.csv")
            summary["martingale"] = {
                "max_abs_z": report.max_abs_z,
                "flagged": report.flagged,
            }
        if render:
            from .figures import ledger_figure, martingale_figure

            first = ledgers[usable[0][0]]
            ledger_figure(
                first.times,
                {
                    "energy change": first.kinetic - first.kinetic[0],
                    "ito term": first.ito_term,
                    "martingale term": first.martingale_term,
                    "remainder": first.discrete_remainder,
                    "residual": first.residual,
                },
                out / "ledger.png",
            )
            if "martingale" in summary:
                martingale_figure(report.times, report.z_scores, 4.0, out / "martingale.png")
    else:
        sim = _inhomo_config(config)
        rho0 = build_density(config)
        v0 = build_initial(config)
        pairs = _pairs_from(config)
        rows = []
        pair_summaries = []
        mass_drift = []
        min_density = []
        path = None
        for i in range(config.paths):
            path = run_inhomo(sim, rho0, v0, path_index=i)
            if path.blown_up or path.truncated_at is not None:
                raise ValueError(f"path {i} is flagged; weighted budget undefined")
            mass0 = path.mass_series[0]
            mass_drift.append(float(np.max(np.abs(path.mass_series - mass0)) / abs(mass0)))
            min_density.append(float(np.min(path.densities)))
            if i == 0:
                budgets = [inhomo_budget(path, pair) for pair in pairs]
                for k, budget in enumerate(budgets):
                    for j in range(len(budget.times)):
                        rows.append(
                            (
                                k,
                                budget.times[j],
                                budget.transport_term[j],
                                budget.flux_term[j],
                                budget.ito_term[j],
                                budget.martingale_term[j],
                                budget.residual[j],
                            )
                        )
                    pair_summaries.append(
                        {
                            "final_residual": budget.final_residual,
                            "max_abs_residual": float(np.max(np.abs(budget.residual))),
                        }
                    )
        write_csv(out / "weighted_budget.csv", WEIGHTED_COLUMNS, rows)
        files.append("weighted_budget.csv")
        summary["pairs"] = pair_summaries
        summary["max_relative_mass_drift"] = max(mass_drift)
        summary["min_density"] = min(min_density)
        if render:
            from .figures import weighted_budget_figure

            budget = budgets[0]
            weighted_budget_figure(
                budget.times,
                {
                    "transport": budget.transport_term,
                    "flux": budget.flux_term,
                    "ito": budget.ito_term,
                    "martingale": budget.martingale_term,
                    "residual": budget.residual,
                },
                out / "weighted_budget.png",
            )

    summary["files"] = sorted(files)
    write_json(out / "budget_summary.json", summary)
    return summary


def run_commutator_scan(config: RunConfig, render: bool = True) -> dict[str, Any]:
    """Scan a nonlinearity's mollification commutator across scales."""
    spec = config.experiment.get("commutator")
    if not isinstance(spec, dict):
        raise ConfigError("experiment.commutator", "missing required field")
    name = spec.get("map", "square")
    epsilons = spec.get("epsilons")
    if not epsilons:
        raise ConfigError("experiment.commutator.epsilons", "missing required field")
    epsilons = [float(e) for e in epsilons]
    octaves = int(spec.get("octaves", 5))
    alpha = float(spec.get("alpha", 0.4))
    grid = config.grid()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    theoretical = spec.get("theoretical_slope")
    theoretical = float(theoretical) if theoretical is not None else None

    rows: list[tuple] = []
    if name == "advection_pairing":
        n_seeds = int(spec.get("seeds", 8))
        base_seed = int(spec.get("field_seed", 0))
        magnitudes = np.zeros((n_seeds, len(epsilons)))
        for s in range(n_seeds):
            field = make_synthetic_field(
                SyntheticFieldSpec(alpha=alpha, n_octaves=octaves, seed=base_seed + s),
                grid,
                components=grid.dim,
                divergence_free=True,
            )
            scan = proof_term_scan(field, epsilons)
            magnitudes[s] = np.abs(scan.values)
            for e, value in zip(epsilons, scan.values):
                rows.append((e, base_seed + s, value))
        mean_magnitude = magnitudes.mean(axis=0)
        fit = rate_fit(epsilons, mean_magnitude)
        summary = {
            "map": name,
            "alpha": alpha,
            "epsilons": list(epsilons),
            "mean_magnitude": [float(v) for v in mean_magnitude],
            "fitted_slope": fit.slope,
            "r_squared": fit.r_squared,
            "n_seeds": n_seeds,
            "theoretical_slope": theoretical,
        }
        figure_values = mean_magnitude
    else:
        beta = float(spec.get("beta", 0.6))
        field_seed = int(spec.get("field_seed", 0))
        phi_seed = int(spec.get("phi_seed", field_seed + 1))
        tensor = name in ("quadratic", "momentum_flux")
        field = make_synthetic_field(
            SyntheticFieldSpec(alpha=alpha, n_octaves=octaves, seed=field_seed),
            grid,
            components=grid.dim if tensor else 1,
            divergence_free=tensor,
        )
        phi = make_synthetic_field(
            SyntheticFieldSpec(alpha=beta, n_octaves=octaves, seed=phi_seed),
            grid,
            components=grid.dim,
        )
        rho = None
        rho_floor = float(spec.get("rho_floor", 0.5))
        if name == "momentum_flux":
            rho_spec = spec.get("rho", {})
            base = float(rho_spec.get("base", 1.0))
            contrast = float(rho_spec.get("contrast", 0.0))
            x = grid.coordinates()
            rho = RealField.scalar(grid, base + contrast * np.cos(2.0 * np.pi * x[0]))
        scan = commutator_scan(
            field, phi, name, epsilons, rho=rho, rho_floor=rho_floor, theoretical_slope=theoretical
        )
        for e, value in zip(scan.epsilons, scan.norms):
            rows.append((e, field_seed, value))
        summary = {
            "map": name,
            "alpha": alpha,
            "beta": beta,
            "epsilons": list(scan.epsilons),
            "norms": [float(v) for v in scan.norms],
            "fitted_slope": scan.fitted_slope,
            "r_squared": scan.r_squared,
            "theoretical_slope": theoretical,
        }
        figure_values = np.array(scan.norms)

    write_csv(out / "scan.csv", SCAN_COLUMNS, rows)
    summary["files"] = ["scan.csv"]
    write_json(out / "scan_summary.json", summary)
    if render:
        from .figures import scan_figure

        scan_figure(epsilons, figure_values, summary["fitted_slope"], out / "scan.png")
    return summary


def run_besov(config: RunConfig, field_path: str | Path | None = None, render: bool = True) -> dict[str, Any]:
    """Report roughness measurements of a stored or synthetic field."""
    grid = config.grid()
    spec = config.experiment.get("besov", {})
    if field_path is not None:
        samples = load_field(field_path)
        if samples.shape[1:] != grid.shape:
            raise ValueError(
                f"field file shape {samples.shape} does not match the configured grid {grid.shape}"
            )
        field = RealField(grid, samples)
    else:
        if not isinstance(spec, dict) or "alpha" not in spec:
            raise ConfigError("experiment.besov.alpha", "missing required field")
        field = make_synthetic_field(
            SyntheticFieldSpec(
                alpha=float(spec["alpha"]),
                n_octaves=int(spec.get("octaves", 5)),
                seed=int(spec.get("seed", 0)),
            ),
            grid,
            components=int(spec.get("components", 1)),
            divergence_free=bool(spec.get("divergence_free", False)),
        )
    alpha = float(spec.get("alpha", 0.5)) if isinstance(spec, dict) else 0.5
    q = float(spec.get("q", 3.0)) if isinstance(spec, dict) else 3.0
    params = BesovParams(alpha=alpha, q=q)
    seminorm = besov_seminorm(field, params)
    fitted = estimate_holder_exponent(field)
    shifts = default_shift_set(grid)
    table = []
    for shift in shifts:
        norm = shift_difference_norm(field, shift, q)
        length = float(np.linalg.norm(np.asarray(shift, dtype=float)) * grid.spacing)
        table.append({"shift": list(shift), "length": length, "norm": norm})
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "alpha": alpha,
        "q": q,
        "seminorm": seminorm,
        "fitted_alpha": fitted,
        "per_shift": table,
        "files": ["besov.csv"],
    }
    write_json(out / "besov.json", report)
    write_csv(
        out / "besov.csv",
        SHIFT_COLUMNS,
        [(" ".join(str(c) for c in row["shift"]), row["length"], row["norm"]) for row in table],
    )
    if render:
        from .figures import shift_figure

        lengths = [row["length"] for row in table]
        norms = [row["norm"] for row in table]
        shift_figure(lengths, norms, fitted, out / "besov.png")
    return report


def run_noise_check(config: RunConfig, n_samples: int | None = None, render: bool = True) -> dict[str, Any]:
    """Verify the noise family's growth conditions and increment moments."""
    family = config.family()
    if family is None:
        raise ConfigError("noise", "missing required field for noise-check")
    growth = verify_growth_conditions(family, grid=config.grid())
    if n_samples is None:
        n_samples = int(config.experiment.get("noise_samples", 100_000))
    dt = config.dt
    draws = np.stack(
        [
            sample_increments(family.n_modes, dt, stream(config.seed, 0, k)).values
            for k in range(n_samples)
        ]
    )
    mean = draws.mean(axis=0)
    cov = np.cov(draws, rowvar=False, ddof=1)
    mean_gate = 4.0 * np.sqrt(dt / n_samples)
    diag_gate = 5.0 * dt * np.sqrt(2.0 / n_samples)
    off_gate = 5.0 * dt / np.sqrt(n_samples)
    diag_err = float(np.max(np.abs(np.diag(cov) - dt)))
    off = cov - np.diag(np.diag(cov))
    off_err = float(np.max(np.abs(off))) if family.n_modes > 1 else 0.0
    increments = {
        "n_samples": int(n_samples),
        "dt": dt,
        "max_abs_mean": float(np.max(np.abs(mean))),
        "mean_gate": float(mean_gate),
        "max_diag_error": diag_err,
        "diag_gate": float(diag_gate),
        "max_offdiag": off_err,
        "offdiag_gate": float(off_gate),
    }
    increments["passed"] = bool(
        increments["max_abs_mean"] <= mean_gate
        and diag_err <= diag_gate
        and off_err <= off_gate
    )
    weights = family.weights()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "growth": {
            "passed": growth.passed,
            "failures": list(growth.failures),
            "fitted_decay": growth.fitted_decay,
            "tail_bound": growth.tail_bound,
            "worst_lipschitz_ratio": growth.worst_lipschitz_ratio,
            "zero_state_residual": growth.zero_state_residual,
        },
        "increments": increments,
        "passed": bool(growth.passed and increments["passed"]),
        "files": ["weights.csv"],
    }
    write_json(out / "noise_check.json", report)
    write_csv(out / "weights.csv", ("mode", "weight"), list(enumerate(weights, start=1)))
    if render:
        from .figures import weight_figure

        weight_figure(weights, growth.fitted_decay, out / "weights.png")
    return report
