"""Experiment orchestration: sweeps, persistence, and figure-family presets.

A run walks a sweep grid, evaluates the analytic report at every point, and
optionally backs it with Monte Carlo estimates whose streams derive from
(master_seed, point index, replication index), so inserting a later grid
point never perturbs earlier results and outputs are byte-identical across
repeat runs and thread counts.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, SCHEMA_VERSION
from .analytics import (
    DEFAULT_QUAD,
    AnalyticsError,
    activation_table,
    active_densities,
    delivery_metrics,
    scdp,
)
from .config import (
    ConfigError,
    ExperimentConfig,
    OutputSpec,
    PolicySpec,
    SweepSpec,
    apply_sweep_value,
    config_to_dict,
    default_config,
)
from .content import (
    CachingPolicy,
    ContentParams,
    combination_set,
    mpc_policy,
    uniform_policy,
    zipf_popularity,
)
from .network import NetworkParams
from .optimizer import optimize_caching
from .simulator import monte_carlo


class HarnessError(Exception):
    """Experiment-level failure, including violated preset claims."""


CSV_HEADER = (
    "sweep_axis", "sweep_value", "metric", "file_index", "scheme",
    "analytical", "sim_mean", "sim_ci95", "replications", "seed",
)


@dataclass(frozen=True)
class ResultRow:
    sweep_axis: str
    sweep_value: float
    metric: str
    file_index: int           # 0 for aggregate metrics
    scheme: str
    analytical: Optional[float]
    sim_mean: Optional[float]
    sim_ci95: Optional[float]
    replications: Optional[int]
    seed: int
    wall_time_s: Optional[float] = None

    def persisted_fields(self) -> tuple:
        return (
            self.sweep_axis, self.sweep_value, self.metric, self.file_index,
            self.scheme, self.analytical, self.sim_mean, self.sim_ci95,
            self.replications, self.seed,
        )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolve_policy(
    config: ExperimentConfig,
    net: NetworkParams,
    content: ContentParams,
) -> CachingPolicy:
    """Materialise the configured policy source at one parameter point."""
    combos = combination_set(content.N, content.K)
    pop = zipf_popularity(content.N, content.gamma)
    source = config.policy.source
    if source == "uniform":
        return uniform_policy(combos.J)
    if source == "mpc":
        return mpc_policy(combos, pop)
    if source == "explicit":
        vector = np.asarray(config.policy.vector, dtype=float)
        if vector.size != combos.J:
            raise ConfigError(f"explicit policy has {vector.size} entries, expected J = {combos.J}")
        return CachingPolicy(vector)
    policy, _ = optimize_caching(net, content, pop)
    return policy


def _point_rows(
    config: ExperimentConfig,
    axis: str,
    value: float,
    point_index: int,
    threads: int,
) -> list:
    start = time.perf_counter()
    net, content = apply_sweep_value(config, axis, value) if axis else (config.network, config.content)
    pop = zipf_popularity(content.N, content.gamma)
    policy = resolve_policy(config, net, content)
    report = scdp(net, content, pop, policy)
    sim = None
    if config.simulate:
        sim = monte_carlo(
            net, content, pop, policy,
            replications=config.replications,
            master_seed=config.master_seed,
            threads=threads,
            stream_key=(point_index,),
        )
    elapsed = time.perf_counter() - start

    def row(metric, file_index, analytical, est=None):
        return ResultRow(
            sweep_axis=axis or "none",
            sweep_value=float(value),
            metric=metric,
            file_index=file_index,
            scheme=content.scheme,
            analytical=analytical,
            sim_mean=None if est is None else est.mean,
            sim_ci95=None if est is None else est.half_width_95,
            replications=None if est is None else est.replications,
            seed=config.master_seed,
            wall_time_s=elapsed,
        )

    rows = []
    for n in range(1, content.N + 1):
        k = n - 1
        rows.append(row("xi_n", n, float(report.activation.xi_n[k]), sim.xi_n[k] if sim else None))
        rows.append(row("sigma_n", n, float(report.sigma_n[k]), sim.sigma_n[k] if sim else None))
        rows.append(row("C_n", n, float(report.C_n[k]), sim.C_n[k] if sim else None))
    rows.append(row("xi", 0, report.activation.xi, sim.xi if sim else None))
    rows.append(row("sigma", 0, report.sigma, None))
    rows.append(row("C", 0, report.C, None))
    rows.append(row("tau", 0, report.tau, sim.tau if sim else None))
    rows.append(row("throughput", 0, report.throughput, sim.throughput if sim else None))
    return rows


def run_experiment(
    config: ExperimentConfig,
    threads: int = 1,
    progress: Optional[Callable[[str], None]] = None,
) -> list:
    """Evaluate every sweep point; emit rows in sweep order.

    A failing point contributes a single 'point_failed' row and does not
    abort the remaining points.
    """
    if config.sweep is not None:
        axis, grid = config.sweep.axis, config.sweep.grid
    else:
        axis, grid = "", (0.0,)
    rows = []
    for k, value in enumerate(grid):
        label = f"{axis}={value:g}" if axis else "single point"
        try:
            point = _point_rows(config, axis, value, k, threads)
        except (AnalyticsError, ValueError, ConfigError) as exc:
            if progress:
                progress(f"point {k} ({label}): FAILED: {exc}")
            rows.append(ResultRow(
                sweep_axis=axis or "none", sweep_value=float(value),
                metric="point_failed", file_index=0, scheme=config.content.scheme,
                analytical=None, sim_mean=None, sim_ci95=None,
                replications=None, seed=config.master_seed,
            ))
            continue
        rows.extend(point)
        if progress:
            progress(f"point {k} ({label}): {len(point)} rows")
    return rows


def persist_results(
    rows: list,
    directory,
    formats: tuple = ("csv",),
    config: Optional[ExperimentConfig] = None,
    wall_time_s: Optional[float] = None,
    basename: str = "results",
) -> list:
    """Write the result table and a run manifest; returns the written paths."""
    out_dir = Path(directory)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for fmt in formats:
            if fmt != "csv":
                raise HarnessError(f"unsupported output format {fmt!r}")
            table = out_dir / f"{basename}.csv"
            lines = [",".join(CSV_HEADER)]
            for r in rows:
                lines.append(",".join(_fmt(v) for v in r.persisted_fields()))
            table.write_text("\n".join(lines) + "\n")
            written.append(table)
        manifest = {
            "toolkit_version": __version__,
            "schema_version": SCHEMA_VERSION,
            "master_seed": config.master_seed if config else None,
            "config": config_to_dict(config) if config else None,
            "wall_time_s": wall_time_s,
            "rows": len(rows),
        }
        manifest_path = out_dir / f"{basename}_manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        written.append(manifest_path)
        return written
    except OSError as exc:
        raise HarnessError(f"cannot write results under {out_dir}: {exc}") from exc


def load_results(path) -> list:
    """Re-parse a persisted table into rows (persisted fields only)."""
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != CSV_HEADER:
        raise HarnessError(f"{path} does not carry the expected header")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        rows.append(ResultRow(
            sweep_axis=parts[0],
            sweep_value=float(parts[1]),
            metric=parts[2],
            file_index=int(parts[3]),
            scheme=parts[4],
            analytical=float(parts[5]) if parts[5] else None,
            sim_mean=float(parts[6]) if parts[6] else None,
            sim_ci95=float(parts[7]) if parts[7] else None,
            replications=int(parts[8]) if parts[8] else None,
            seed=int(parts[9]),
        ))
    return rows


# ---------------------------------------------------------------------------
# figure-family presets
# ---------------------------------------------------------------------------

#: Shared sweep grids for the presets (chosen to straddle the activation peak).
LAMBDA_U_GRID = tuple(float(v) for v in np.logspace(-3, -1, 9))
I_TH_GRID = tuple(float(v) for v in np.logspace(np.log10(0.005), 0.0, 9))
GAMMA_GRID = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)

DESK_REPLICATIONS = 2000
FULL_REPLICATIONS = 20000


@dataclass(frozen=True)
class FigurePreset:
    tag: str
    description: str
    simulate: bool


PRESETS = {
    "fig1a": FigurePreset("fig1a", "activation probability per file vs requester density, random selection", True),
    "fig1b": FigurePreset("fig1b", "activation probability per file vs requester density, most-requested selection", True),
    "fig2": FigurePreset("fig2", "cache-hit probability per file vs requester density, random selection", True),
    "fig3": FigurePreset("fig3", "cache-hit probability per file vs requester density, most-requested selection", True),
    "fig4": FigurePreset("fig4", "conditional coverage per file vs requester density, both schemes", True),
    "fig5": FigurePreset("fig5", "coverage with vs without the threshold test at matched activation, vs threshold", False),
    "fig6": FigurePreset("fig6", "delivery probability vs requester density, both schemes", True),
    "fig7": FigurePreset("fig7", "delivery probability with vs without the threshold test at matched activation", False),
    "fig8a": FigurePreset("fig8a", "delivery probability vs popularity exponent per policy, random selection", False),
    "fig8b": FigurePreset("fig8b", "delivery probability vs popularity exponent per policy, most-requested selection", False),
}


def _preset_config(scheme: str, sweep: SweepSpec, replications: int, seed: int, simulate: bool) -> ExperimentConfig:
    base = default_config()
    return ExperimentConfig(
        network=base.network,
        content=replace(base.content, scheme=scheme),
        policy=PolicySpec(),
        sweep=sweep,
        replications=replications,
        master_seed=seed,
        simulate=simulate,
        outputs=OutputSpec(),
    )


def _comparison_rows(scheme: str, seed: int) -> list:
    """Threshold-test vs baseline coverage and delivery at matched densities."""
    base = default_config()
    content = replace(base.content, scheme=scheme)
    pop = zipf_popularity(content.N, content.gamma)
    policy = uniform_policy(combination_set(content.N, content.K).J)
    rows = []
    for value in I_TH_GRID:
        net = replace(base.network, I_th=float(value))
        act = activation_table(net, content, pop, policy)
        dens = active_densities(act, net)
        sigma_n, c_n, tau = delivery_metrics(pop, dens, net)
        sigma_b, c_b, tau_b = delivery_metrics(pop, dens, net, baseline=True)
        p = pop.p
        common = dict(sweep_axis="I_th", sweep_value=float(value), file_index=0,
                      scheme=scheme, sim_mean=None, sim_ci95=None,
                      replications=None, seed=seed)
        rows.append(ResultRow(metric="xi", analytical=act.xi, **common))
        rows.append(ResultRow(metric="C", analytical=float(p @ c_n), **common))
        rows.append(ResultRow(metric="C_baseline", analytical=float(p @ c_b), **common))
        rows.append(ResultRow(metric="tau", analytical=tau, **common))
        rows.append(ResultRow(metric="tau_baseline", analytical=tau_b, **common))
    return rows


def _policy_comparison_rows(scheme: str, seed: int) -> list:
    """Optimized vs most-popular-combination vs uniform placement over the
    popularity exponent grid."""
    base = default_config()
    rows = []
    for value in GAMMA_GRID:
        content = replace(base.content, scheme=scheme, gamma=float(value))
        net = base.network
        pop = zipf_popularity(content.N, content.gamma)
        combos = combination_set(content.N, content.K)
        taus = {}
        taus["tau_uniform"] = scdp(net, content, pop, uniform_policy(combos.J)).tau
        taus["tau_mpc"] = scdp(net, content, pop, mpc_policy(combos, pop)).tau
        optimized, _ = optimize_caching(net, content, pop)
        taus["tau_optimized"] = scdp(net, content, pop, optimized).tau
        for metric, tau in taus.items():
            rows.append(ResultRow(
                sweep_axis="gamma", sweep_value=float(value), metric=metric,
                file_index=0, scheme=scheme, analytical=tau,
                sim_mean=None, sim_ci95=None, replications=None, seed=seed,
            ))
    return rows


def _check_fig5(rows: list):
    tol = 1e-9
    by_value: dict = {}
    for r in rows:
        by_value.setdefault(r.sweep_value, {})[r.metric] = r.analytical
    for value, metrics in by_value.items():
        if metrics["C"] < metrics["C_baseline"] - tol:
            raise HarnessError(
                f"coverage claim violated at I_th={value:g}: "
                f"{metrics['C']!r} < baseline {metrics['C_baseline']!r}"
            )


def _check_fig7(rows: list):
    tol = 1e-9
    by_value: dict = {}
    for r in rows:
        by_value.setdefault(r.sweep_value, {})[r.metric] = r.analytical
    for value, metrics in by_value.items():
        if metrics["tau"] < metrics["tau_baseline"] - tol:
            raise HarnessError(
                f"delivery claim violated at I_th={value:g}: "
                f"{metrics['tau']!r} < baseline {metrics['tau_baseline']!r}"
            )


def _check_fig8(rows: list):
    tol = 1e-9
    by_value: dict = {}
    for r in rows:
        by_value.setdefault(r.sweep_value, {})[r.metric] = r.analytical
    for value, metrics in by_value.items():
        best_fixed = max(metrics["tau_uniform"], metrics["tau_mpc"])
        if metrics["tau_optimized"] < best_fixed - tol:
            raise HarnessError(
                f"optimizer dominance violated at gamma={value:g}: "
                f"{metrics['tau_optimized']!r} < {best_fixed!r}"
            )


def reproduce_figure(
    tag: str,
    scale: str = "desk",
    out_dir=None,
    threads: int = 1,
    replications: Optional[int] = None,
    master_seed: int = 20240,
) -> tuple:
    """Run one figure-family preset; returns (rows, written paths).

    Desk scale runs 2000 replications where the preset simulates, full scale
    20000.  Presets with a stated ordering claim verify it and raise when it
    fails beyond tolerance.
    """
    if tag not in PRESETS:
        raise HarnessError(f"unknown figure tag {tag!r}; known: {', '.join(sorted(PRESETS))}")
    if scale not in ("desk", "full"):
        raise HarnessError(f"scale must be 'desk' or 'full', got {scale!r}")
    preset = PRESETS[tag]
    reps = replications if replications is not None else (
        DESK_REPLICATIONS if scale == "desk" else FULL_REPLICATIONS
    )
    start = time.perf_counter()

    lam_sweep = SweepSpec(axis="lambda_u", grid=LAMBDA_U_GRID)
    if tag in ("fig1a", "fig2"):
        rows = run_experiment(_preset_config("rfs", lam_sweep, reps, master_seed, preset.simulate), threads)
    elif tag in ("fig1b", "fig3"):
        rows = run_experiment(_preset_config("mrfs", lam_sweep, reps, master_seed, preset.simulate), threads)
    elif tag == "fig4":
        rows = run_experiment(_preset_config("rfs", lam_sweep, reps, master_seed, preset.simulate), threads)
        rows += run_experiment(_preset_config("mrfs", lam_sweep, reps, master_seed + 1, preset.simulate), threads)
    elif tag == "fig5":
        rows = _comparison_rows("rfs", master_seed) + _comparison_rows("mrfs", master_seed)
        _check_fig5(rows)
    elif tag == "fig6":
        rows = run_experiment(_preset_config("rfs", lam_sweep, reps, master_seed, preset.simulate), threads)
        rows += run_experiment(_preset_config("mrfs", lam_sweep, reps, master_seed + 1, preset.simulate), threads)
        _check_fig6(rows)
    elif tag == "fig7":
        rows = _comparison_rows("rfs", master_seed) + _comparison_rows("mrfs", master_seed)
        _check_fig7(rows)
    elif tag == "fig8a":
        rows = _policy_comparison_rows("rfs", master_seed)
        _check_fig8(rows)
    else:
        rows = _policy_comparison_rows("mrfs", master_seed)
        _check_fig8(rows)

    written = []
    if out_dir is not None:
        elapsed = time.perf_counter() - start
        config = _preset_config("rfs", lam_sweep, reps, master_seed, preset.simulate)
        written = persist_results(rows, out_dir, config=config, wall_time_s=elapsed, basename=tag)
        written += _write_series(rows, out_dir, tag)
    return rows, written


def _check_fig6(rows: list):
    tol = 1e-6
    tau: dict = {}
    for r in rows:
        if r.metric == "tau":
            tau[(r.scheme, r.sweep_value)] = r.analytical
    for (scheme, value), t in tau.items():
        if scheme != "mrfs":
            continue
        rfs = tau.get(("rfs", value))
        if rfs is not None and t < rfs - tol:
            raise HarnessError(
                f"scheme ordering violated at lambda_u={value:g}: mrfs {t!r} < rfs {rfs!r}"
            )


def _write_series(rows: list, out_dir, tag: str) -> list:
    """One plot-ready file per (metric, scheme, file) curve."""
    out = Path(out_dir)
    curves: dict = {}
    for r in rows:
        if r.metric == "point_failed":
            continue
        curves.setdefault((r.metric, r.scheme, r.file_index), []).append(r)
    written = []
    for (metric, scheme, file_index), pts in curves.items():
        suffix = f"_f{file_index}" if file_index else ""
        path = out / f"series_{tag}_{scheme}_{metric}{suffix}.csv"
        lines = ["sweep_value,analytical,sim_mean,sim_ci95"]
        for r in pts:
            lines.append(",".join(_fmt(v) for v in (r.sweep_value, r.analytical, r.sim_mean, r.sim_ci95)))
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written
