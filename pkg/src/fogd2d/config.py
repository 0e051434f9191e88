"""Experiment configuration: schema, TOML loading, and dotted-key overrides.

The config document has sections network, content, policy, sweep, run, and
outputs.  Unknown sections or keys are rejected rather than ignored, so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .content import SCHEMES, ContentParams
from .network import NetworkParams


class ConfigError(Exception):
    """Invalid configuration document, key, or value."""


SWEEP_AXES = ("lambda_u", "lambda_g", "gamma", "I_th", "theta_u", "R_d")

POLICY_SOURCES = ("uniform", "mpc", "explicit", "optimizer")

_SCHEMA = {
    "network": {
        "lambda_g": float, "lambda_u": float, "P_g": float, "P_u": float,
        "theta_u": float, "I_th": float, "alpha": float, "R_d": float, "R_s": float,
    },
    "content": {"N": int, "K": int, "gamma": float, "scheme": str},
    "policy": {"source": str, "vector": list},
    "sweep": {"axis": str, "grid": list},
    "run": {"replications": int, "master_seed": int, "simulate": bool},
    "outputs": {"directory": str, "formats": list},
}


@dataclass(frozen=True)
class PolicySpec:
    source: str = "uniform"
    vector: Optional[tuple] = None

    def __post_init__(self):
        if self.source not in POLICY_SOURCES:
            raise ConfigError(f"policy source must be one of {POLICY_SOURCES}, got {self.source!r}")
        if self.source == "explicit" and not self.vector:
            raise ConfigError("explicit policy requires a probability vector")
        if self.source != "explicit" and self.vector is not None:
            raise ConfigError("policy vector is only valid with source = 'explicit'")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    grid: tuple

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {self.axis!r}")
        grid = tuple(float(v) for v in self.grid)
        if len(grid) == 0:
            raise ConfigError("sweep grid must not be empty")
        diffs = [b - a for a, b in zip(grid, grid[1:])]
        if not (all(d > 0 for d in diffs) or all(d < 0 for d in diffs)):
            raise ConfigError("sweep grid must be strictly monotone")
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "results"
    formats: tuple = ("csv",)

    def __post_init__(self):
        formats = tuple(self.formats)
        unknown = [f for f in formats if f != "csv"]
        if unknown:
            raise ConfigError(f"unknown output formats {unknown}; only 'csv' is supported")
        object.__setattr__(self, "formats", formats)


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkParams
    content: ContentParams
    policy: PolicySpec
    sweep: Optional[SweepSpec]
    replications: int
    master_seed: int
    simulate: bool
    outputs: OutputSpec

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in 64 bits")


def default_network() -> NetworkParams:
    """Default operating point: unit requester power with a threshold ratio of
    20, unit SIR target, 10 m D2D range, fourth-power pathloss, densities of
    0.01 points per square metre, and a 500 m simulation disk."""
    return NetworkParams(
        lambda_g=0.01, lambda_u=0.01, P_g=1.0, P_u=1.0,
        theta_u=1.0, I_th=0.05, alpha=4.0, R_d=10.0, R_s=500.0,
    )


def default_content() -> ContentParams:
    return ContentParams(N=5, K=3, gamma=1.0, scheme="rfs")


def default_config() -> ExperimentConfig:
    return ExperimentConfig(
        network=default_network(),
        content=default_content(),
        policy=PolicySpec(),
        sweep=None,
        replications=2000,
        master_seed=20240,
        simulate=False,
        outputs=OutputSpec(),
    )


def _check_keys(doc: dict):
    for section, body in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be a table")
        for key in body:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")


def _coerce(section: str, key: str, value):
    want = _SCHEMA[section][key]
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return int(value)
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be a boolean, got {value!r}")
        return value
    if want is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{section}.{key} must be a list, got {value!r}")
        return list(value)
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be a string, got {value!r}")
        return value
    raise AssertionError(f"unhandled schema type for {section}.{key}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Build a validated config from a parsed document merged over defaults."""
    _check_keys(doc)
    doc = {s: {k: _coerce(s, k, v) for k, v in body.items()} for s, body in doc.items()}

    base = default_config()
    net_kwargs = {f.name: getattr(base.network, f.name) for f in dataclasses.fields(NetworkParams)}
    net_kwargs.update(doc.get("network", {}))
    content_kwargs = {f.name: getattr(base.content, f.name) for f in dataclasses.fields(ContentParams)}
    content_kwargs.update(doc.get("content", {}))
    if "scheme" in content_kwargs and isinstance(content_kwargs["scheme"], str):
        content_kwargs["scheme"] = content_kwargs["scheme"].lower()
        if content_kwargs["scheme"] not in SCHEMES:
            raise ConfigError(f"content.scheme must be one of {SCHEMES}")

    policy_body = doc.get("policy", {})
    policy = PolicySpec(
        source=policy_body.get("source", "uniform"),
        vector=tuple(policy_body["vector"]) if "vector" in policy_body else None,
    )

    sweep = None
    if "sweep" in doc:
        body = doc["sweep"]
        if "axis" not in body or "grid" not in body:
            raise ConfigError("sweep section needs both axis and grid")
        sweep = SweepSpec(axis=body["axis"], grid=tuple(body["grid"]))

    run_body = doc.get("run", {})
    out_body = doc.get("outputs", {})
    try:
        return ExperimentConfig(
            network=NetworkParams(**net_kwargs),
            content=ContentParams(**content_kwargs),
            policy=policy,
            sweep=sweep,
            replications=run_body.get("replications", base.replications),
            master_seed=run_body.get("master_seed", base.master_seed),
            simulate=run_body.get("simulate", base.simulate),
            outputs=OutputSpec(
                directory=out_body.get("directory", base.outputs.directory),
                formats=tuple(out_body.get("formats", base.outputs.formats)),
            ),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str] = None, overrides: Optional[list] = None) -> ExperimentConfig:
    """Load a TOML config (defaults when path is None) and apply overrides.

    Overrides are 'section.key=value' strings; values are parsed as TOML
    scalars, falling back to bare strings.
    """
    if path is None:
        doc: dict = {}
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    for item in overrides or []:
        _apply_override(doc, item)
    return config_from_dict(doc)


def _apply_override(doc: dict, item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    dotted, raw = item.split("=", 1)
    dotted = dotted.strip().lstrip("-")
    if "." not in dotted:
        raise ConfigError(f"override key {dotted!r} must be section.key")
    section, key = dotted.split(".", 1)
    if section not in _SCHEMA or key not in _SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    doc.setdefault(section, {})[key] = value


def config_to_dict(config: ExperimentConfig) -> dict:
    """Plain-scalar echo of the config for manifests."""
    out = {
        "network": dataclasses.asdict(config.network),
        "content": dataclasses.asdict(config.content),
        "policy": {"source": config.policy.source},
        "run": {
            "replications": config.replications,
            "master_seed": config.master_seed,
            "simulate": config.simulate,
        },
        "outputs": {
            "directory": config.outputs.directory,
            "formats": list(config.outputs.formats),
        },
    }
    if config.policy.vector is not None:
        out["policy"]["vector"] = list(config.policy.vector)
    if config.sweep is not None:
        out["sweep"] = {"axis": config.sweep.axis, "grid": list(config.sweep.grid)}
    return out


def apply_sweep_value(config: ExperimentConfig, axis: str, value: float):
    """(network, content) with one axis replaced by the sweep value."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if axis == "gamma":
        return config.network, dataclasses.replace(config.content, gamma=float(value))
    return dataclasses.replace(config.network, **{axis: float(value)}), config.content
