"""Command-line entry point.

Commands: analyze, simulate, optimize, sweep, reproduce.  Config values come
from an optional TOML file plus dotted-key overrides such as
--content.gamma=0.5; every random draw descends from the single --seed flag.
Exit codes: 0 success, 1 numerical failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time

import numpy as np

from . import SCHEMA_VERSION, __version__
from .analytics import AnalyticsError, scdp
from .config import ConfigError, ExperimentConfig, load_config
from .content import combination_set, mpc_policy, uniform_policy, zipf_popularity
from .harness import HarnessError, persist_results, reproduce_figure, run_experiment, resolve_policy
from .optimizer import OptimizerError, optimize_caching
from .simulator import monte_carlo


def _g(value) -> str:
    """Fixed 9-significant-digit formatting so textual output diffs cleanly."""
    if value is None:
        return "-"
    return format(value, ".9g")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogd2d",
        description="Analytics, simulation, and caching optimization for opportunistic D2D content delivery.",
        epilog="Any --section.key=value pair overrides a config entry, e.g. --network.lambda_u=0.02",
    )
    parser.add_argument("--version", action="version", version=f"fogd2d {__version__} (schema {SCHEMA_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help="output directory (persist results)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker cap for replications (default: available cores)")
        p.add_argument("-v", "--verbose", action="count", default=0)

    p = sub.add_parser("analyze", help="print the closed-form report for one parameter point")
    common(p)
    p = sub.add_parser("simulate", help="Monte Carlo estimates side by side with the closed forms")
    common(p)
    p.add_argument("--replications", type=int, help="replication count override")
    p = sub.add_parser("optimize", help="gradient-projection caching placement")
    common(p)
    p = sub.add_parser("sweep", help="run the sweep declared in the config")
    common(p)
    p = sub.add_parser("reproduce", help="run a figure-family preset")
    common(p)
    p.add_argument("--figure", required=True, help="preset tag, e.g. fig1a, fig6, fig8a")
    p.add_argument("--scale", choices=("desk", "full"), default="desk")
    p.add_argument("--replications", type=int, help="replication count override")
    return parser


def _split_overrides(extras: list) -> list:
    overrides = []
    for token in extras:
        body = token.lstrip("-")
        if token.startswith("--") and "." in body.split("=", 1)[0] and "=" in body:
            overrides.append(body)
        else:
            raise ConfigError(f"unrecognised argument {token!r}")
    return overrides


def _load(args, extras) -> ExperimentConfig:
    config = load_config(args.config, _split_overrides(extras))
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    replications = getattr(args, "replications", None)
    if replications is not None:
        if replications < 1:
            raise ConfigError("replications must be at least 1")
        config = dataclasses.replace(config, replications=replications)
    return config


def _cmd_analyze(args, extras) -> int:
    config = _load(args, extras)
    net, content = config.network, config.content
    pop = zipf_popularity(content.N, content.gamma)
    policy = resolve_policy(config, net, content)
    report = scdp(net, content, pop, policy)
    print(f"scheme = {content.scheme}   N = {content.N}   K = {content.K}   gamma = {_g(content.gamma)}")
    print("n    p_n          xi_n         sigma_n      C_n")
    for n in range(1, content.N + 1):
        k = n - 1
        print(f"{n:<4d} {_g(pop.p[k]):<12} {_g(report.activation.xi_n[k]):<12} "
              f"{_g(report.sigma_n[k]):<12} {_g(report.C_n[k]):<12}")
    print(f"xi = {_g(report.activation.xi)}")
    print(f"sigma = {_g(report.sigma)}")
    print(f"C = {_g(report.C)}")
    print(f"tau = {_g(report.tau)}")
    print(f"throughput = {_g(report.throughput)}")
    if args.out:
        config = dataclasses.replace(config, simulate=False)
        rows = run_experiment(config, threads=args.threads)
        persist_results(rows, args.out, config=config)
    return 0


def _cmd_simulate(args, extras) -> int:
    config = _load(args, extras)
    net, content = config.network, config.content
    pop = zipf_popularity(content.N, content.gamma)
    policy = resolve_policy(config, net, content)
    report = scdp(net, content, pop, policy)
    start = time.perf_counter()
    sim = monte_carlo(net, content, pop, policy,
                      replications=config.replications,
                      master_seed=config.master_seed,
                      threads=args.threads)
    elapsed = time.perf_counter() - start
    print(f"replications = {config.replications}   seed = {config.master_seed}")
    print("metric       analytical   sim_mean     sim_ci95     agree")

    def line(name, analytical, est):
        agree = "PASS" if (est.conditioning_count and abs(analytical - est.mean) <= est.half_width_95) else "WARN"
        print(f"{name:<12} {_g(analytical):<12} {_g(est.mean):<12} {_g(est.half_width_95):<12} {agree}")

    for n in range(1, content.N + 1):
        k = n - 1
        line(f"xi_{n}", float(report.activation.xi_n[k]), sim.xi_n[k])
        line(f"sigma_{n}", float(report.sigma_n[k]), sim.sigma_n[k])
        line(f"C_{n}", float(report.C_n[k]), sim.C_n[k])
    line("xi", report.activation.xi, sim.xi)
    line("tau", report.tau, sim.tau)
    line("throughput", report.throughput, sim.throughput)
    if args.verbose:
        print(f"wall time {elapsed:.1f}s")
    if args.out:
        config = dataclasses.replace(config, simulate=True)
        rows = run_experiment(config, threads=args.threads)
        persist_results(rows, args.out, config=config, wall_time_s=elapsed)
    return 0


def _cmd_optimize(args, extras) -> int:
    config = _load(args, extras)
    net, content = config.network, config.content
    pop = zipf_popularity(content.N, content.gamma)
    combos = combination_set(content.N, content.K)
    policy, trace = optimize_caching(net, content, pop)
    for pt in trace.points:
        print(f"iter {pt.iteration:<4d} tau = {_g(pt.tau):<14} step = {_g(pt.step):<14} |grad| = {_g(pt.grad_norm)}")
    print(f"converged = {trace.converged} ({trace.stop_reason})")
    print("policy:")
    for i in range(combos.J):
        files = ",".join(str(f) for f in combos.combos[i])
        print(f"  combo {i + 1} {{{files}}}: {_g(policy.c[i])}")
    tau_opt = scdp(net, content, pop, policy).tau
    tau_uni = scdp(net, content, pop, uniform_policy(combos.J)).tau
    tau_mpc = scdp(net, content, pop, mpc_policy(combos, pop)).tau
    print(f"tau optimized = {_g(tau_opt)}   uniform = {_g(tau_uni)}   mpc = {_g(tau_mpc)}")
    if args.out:
        from pathlib import Path
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["combo_index,files,probability"]
        for i in range(combos.J):
            files = " ".join(str(f) for f in combos.combos[i])
            lines.append(f"{i + 1},{files},{policy.c[i]!r}")
        (out / "policy.csv").write_text("\n".join(lines) + "\n")
        lines = ["iteration,tau,step,grad_norm"]
        for pt in trace.points:
            lines.append(f"{pt.iteration},{pt.tau!r},{pt.step!r},{pt.grad_norm!r}")
        (out / "trace.csv").write_text("\n".join(lines) + "\n")
    return 0


def _cmd_sweep(args, extras) -> int:
    config = _load(args, extras)
    if config.sweep is None:
        raise ConfigError("sweep command needs a [sweep] section in the config")
    progress = print if args.verbose else None
    start = time.perf_counter()
    rows = run_experiment(config, threads=args.threads, progress=progress)
    out = args.out or config.outputs.directory
    persist_results(rows, out, formats=config.outputs.formats,
                    config=config, wall_time_s=time.perf_counter() - start)
    print(f"{len(rows)} rows -> {out}")
    return 0


def _cmd_reproduce(args, extras) -> int:
    config = _load(args, extras)  # honours --seed; presets ignore other keys
    out = args.out or config.outputs.directory
    rows, written = reproduce_figure(
        args.figure, scale=args.scale, out_dir=out, threads=args.threads,
        replications=args.replications, master_seed=config.master_seed,
    )
    print(f"{args.figure}: {len(rows)} rows, {len(written)} files -> {out}")
    return 0


_COMMANDS = {
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
    "optimize": _cmd_optimize,
    "sweep": _cmd_sweep,
    "reproduce": _cmd_reproduce,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return _COMMANDS[args.command](args, extras)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (AnalyticsError, OptimizerError, HarnessError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
