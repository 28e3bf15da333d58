"""Experiment configuration: one JSON file, full defaults, field-level errors.

The only required key is the top-level seed; everything else defaults. The
sub-seeds for scenario, network, and trainer derive from the top seed
unless set explicitly. Scalar fields can be overridden via environment
variables with the SKIPALIGN_ prefix and double-underscore paths, e.g.
SKIPALIGN_TRAIN__LR0=0.02 or SKIPALIGN_TRAIN__HEAD__LAMBDA_SNA=0.05.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

from .heads import HeadWeights
from .net import NetSpec
from .sna import SnaWeights
from .synthdata import ScenarioSpec
from .trainer import TrainConfig

ENV_PREFIX = "SKIPALIGN_"


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    scenario: ScenarioSpec
    net: NetSpec
    train: TrainConfig

    def resolved_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "scenario": dataclasses.asdict(self.scenario),
            "net": dataclasses.asdict(self.net),
            "train": dataclasses.asdict(self.train),
        }
        out["net"]["backbone_widths"] = list(self.net.backbone_widths)
        return out


def _build_section(cls, data: dict, path: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(path, str(err)) from err


def _apply_env_overrides(data: dict, environ) -> dict:
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(".".join(path), "environment override path is not a section")
        node[path[-1]] = _parse_scalar(raw)
    return data


def _parse_scalar(raw: str):
    lowered = raw.strip().lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def resolve_config(data: dict, seed_override: int | None = None,
                   environ=None) -> ExperimentConfig:
    """Validate a raw config dict and materialize every default."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    data = json.loads(json.dumps(data))  # deep copy, JSON types only
    if environ is not None:
        data = _apply_env_overrides(data, environ)

    known = {"seed", "scenario", "net", "train"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field")

    if seed_override is not None:
        data["seed"] = int(seed_override)
        for section in ("scenario", "net", "train"):
            data.setdefault(section, {}).pop("seed", None)
    if "seed" not in data:
        raise ConfigError("seed", "missing required field")
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
        raise ConfigError("seed", "must be an integer")
    seed = data["seed"]

    scenario_data = dict(data.get("scenario", {}))
    scenario_data.setdefault("seed", seed)
    scenario = _build_section(ScenarioSpec, scenario_data, "scenario")

    net_data = dict(data.get("net", {}))
    net_data.setdefault("seed", seed + 1)
    net_data.setdefault("input_dim", scenario.input_dim)
    net_data.setdefault("num_classes", scenario.num_classes)
    if "backbone_widths" in net_data:
        net_data["backbone_widths"] = tuple(net_data["backbone_widths"])
    net = _build_section(NetSpec, net_data, "net")
    if net.input_dim != scenario.input_dim:
        raise ConfigError("net.input_dim", "must match scenario.input_dim")
    if net.num_classes != scenario.num_classes:
        raise ConfigError("net.num_classes", "must match scenario.num_classes")

    train_data = dict(data.get("train", {}))
    train_data.setdefault("seed", seed + 2)
    train_data.setdefault("gamma", scenario.gamma)
    if "head" in train_data:
        train_data["head"] = _build_section(HeadWeights, dict(train_data["head"]), "train.head")
    if "sna" in train_data:
        train_data["sna"] = _build_section(SnaWeights, dict(train_data["sna"]), "train.sna")
    train = _build_section(TrainConfig, train_data, "train")
    if abs(train.gamma - scenario.gamma) > 1e-12:
        raise ConfigError("train.gamma", "must match scenario.gamma")
    # Materialize the prototype-gate defaults so the manifest is standalone.
    if train.tau_proto is None or train.eta_proto is None:
        train = dataclasses.replace(
            train,
            tau_proto=train.tau_id if train.tau_proto is None else train.tau_proto,
            eta_proto=train.eta_id if train.eta_proto is None else train.eta_proto,
        )
    return ExperimentConfig(seed=seed, scenario=scenario, net=net, train=train)


def load_config(path, seed_override: int | None = None,
                use_env: bool = True) -> ExperimentConfig:
    """Load a config file or a run manifest (its 'config' key)."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError("<file>", f"invalid JSON: {err}") from err
    if isinstance(data, dict) and "config" in data:
        data = data["config"]  # run manifests embed the resolved config
    return resolve_config(data, seed_override=seed_override,
                          environ=os.environ if use_env else None)


def default_config(seed: int = 0) -> ExperimentConfig:
    return resolve_config({"seed": seed})


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.resolved_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()
