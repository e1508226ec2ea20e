"""Run configuration: nested YAML sections over built-in defaults and presets.

Resolution order is defaults, then preset, then config file, then command
line flags.  Every leaf remembers where its value came from.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .agent import AgentConfig
from .errors import ConfigError
from .mdp import MODES, EnvConfig, RewardWeights
from .models import ModelConfig
from .pso import PsoConfig
from .sensorsim import Checkerboard, ImuSpec, SensorDistribution


def _dataclass_defaults(cls, skip=()) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        v = f.default
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def default_tree() -> dict:
    env = EnvConfig()
    return {
        "mode": "intrinsic",
        "seed": 0,
        "output_dir": "runs/default",
        "workers": 1,
        "env": {
            "horizon": None,
            "action_duration": env.action_duration,
            "waypoints": env.waypoints,
            "frame_rate": env.frame_rate,
            "pixel_noise": env.pixel_noise,
            "path_c": env.path_c,
            "lm_iterations_train": env.lm_iterations_train,
            "lm_iterations_eval": env.lm_iterations_eval,
        },
        "imu": _dataclass_defaults(ImuSpec),
        "sensor": _dataclass_defaults(SensorDistribution),
        "board": {"rows": 6, "cols": 7, "square": 0.06},
        "reward": {m: _dataclass_defaults(RewardWeights) | _weights_for(m) for m in MODES},
        "pso": _dataclass_defaults(PsoConfig, skip=("bound",)),
        "model": _dataclass_defaults(ModelConfig, skip=("status_dim", "seed")),
        "training": {
            "batch_size": 32,
            "grad_steps": 1,
            "random_episodes": 50,
            "train_episodes": {"intrinsic": 200, "extrinsic": 200},
            "finetune_episodes": 0,
            "checkpoint_every": 50,
        },
        "evaluation": {"n_configs": 5, "repeats": 5, "seed": 1000},
    }


def _weights_for(mode: str) -> dict:
    w = RewardWeights.for_mode(mode)
    return {f.name: getattr(w, f.name) for f in fields(w)}


PRESETS = {
    "desk": {},
    # published budgets: 1000 intrinsic episodes (900 in the appendix), and
    # 900 extrinsic episodes followed by 650 fine-tuning episodes
    "paper": {
        "training": {"train_episodes": {"intrinsic": 1000, "extrinsic": 900}, "finetune_episodes": 650},
        "evaluation": {"n_configs": 9},
    },
}


# ----------------------------------------------------------------------------
# merging with provenance


def _merge(tree: dict, prov: dict, override: dict, source: str, path: str = "") -> None:
    for k, v in override.items():
        key = f"{path}.{k}" if path else str(k)
        if k not in tree:
            raise ConfigError(key, "unknown key")
        if isinstance(tree[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(key, "expected a section")
            _merge(tree[k], prov, v, source, key)
        else:
            if isinstance(v, dict):
                raise ConfigError(key, "expected a value, got a section")
            tree[k] = v
            prov[key] = source


def _leaves(tree: dict, path: str = ""):
    for k, v in tree.items():
        key = f"{path}.{k}" if path else k
        if isinstance(v, dict):
            yield from _leaves(v, key)
        else:
            yield key, v


def set_path(override: dict, dotted: str, value) -> dict:
    node = override
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return override


@dataclass
class RunConfig:
    tree: dict
    provenance: dict

    # -- construction -----------------------------------------------------------

    @classmethod
    def resolve(cls, preset: str = "desk", file_data: dict | None = None, cli: dict | None = None) -> "RunConfig":
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        tree = default_tree()
        prov = {k: "default" for k, _ in _leaves(tree)}
        _merge(tree, prov, copy.deepcopy(PRESETS[preset]), f"preset:{preset}")
        if file_data:
            if not isinstance(file_data, dict):
                raise ConfigError("<root>", "config file must hold a mapping")
            _merge(tree, prov, file_data, "config")
        if cli:
            _merge(tree, prov, cli, "cli")
        cfg = cls(tree, prov)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, preset: str = "desk", cli: dict | None = None) -> "RunConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        return cls.resolve(preset, data, cli)

    # -- accessors --------------------------------------------------------------

    @property
    def mode(self) -> str:
        return self.tree["mode"]

    @property
    def seed(self) -> int:
        return int(self.tree["seed"])

    def env_config(self) -> EnvConfig:
        t = self.tree
        e = t["env"]
        s = t["sensor"]
        dist = SensorDistribution(
            **{k: (tuple(v) if isinstance(v, list) else v) for k, v in s.items()}
        )
        return EnvConfig(
            mode=self.mode,
            horizon=e["horizon"],
            action_duration=float(e["action_duration"]),
            waypoints=int(e["waypoints"]),
            frame_rate=float(e["frame_rate"]),
            pixel_noise=float(e["pixel_noise"]),
            imu=ImuSpec(**t["imu"]),
            distribution=dist,
            board=Checkerboard(rows=int(t["board"]["rows"]), cols=int(t["board"]["cols"]), square=float(t["board"]["square"])),
            weights=RewardWeights(**t["reward"][self.mode]),
            path_c=float(e["path_c"]),
            lm_iterations_train=int(e["lm_iterations_train"]),
            lm_iterations_eval=int(e["lm_iterations_eval"]),
        )

    def pso_config(self) -> PsoConfig:
        return PsoConfig(**self.tree["pso"])

    def model_config(self) -> ModelConfig:
        m = dict(self.tree["model"])
        m["head_hidden"] = tuple(m["head_hidden"])
        return ModelConfig(**m)

    def agent_config(self) -> AgentConfig:
        tr = self.tree["training"]
        return AgentConfig(
            batch_size=int(tr["batch_size"]),
            grad_steps=int(tr["grad_steps"]),
            random_episodes=int(tr["random_episodes"]),
            train_episodes=int(tr["train_episodes"][self.mode]),
            finetune_episodes=int(tr["finetune_episodes"]) if self.mode == "extrinsic" else 0,
        )

    # -- validation -------------------------------------------------------------

    def validate(self) -> None:
        t = self.tree
        if t["mode"] not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        for key in ("seed", "workers"):
            if not isinstance(t[key], int) or isinstance(t[key], bool):
                raise ConfigError(key, "must be an integer")
        if t["workers"] < 1:
            raise ConfigError("workers", "must be >= 1")
        for key, v in _leaves(t):
            if isinstance(v, float) and v != v:
                raise ConfigError(key, "must not be NaN")
        for section, build in (
            ("imu", lambda: ImuSpec(**t["imu"])),
            ("pso", self.pso_config),
            ("model", self.model_config),
            ("training", self.agent_config),
            ("reward", lambda: [RewardWeights(**t["reward"][m]) for m in MODES]),
            ("env", self.env_config),
        ):
            try:
                build()
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(section, str(exc)) from None
        ev = t["evaluation"]
        for k in ("n_configs", "repeats"):
            if not isinstance(ev[k], int) or ev[k] < 1:
                raise ConfigError(f"evaluation.{k}", "must be a positive integer")
        if not isinstance(t["training"]["checkpoint_every"], int) or t["training"]["checkpoint_every"] < 1:
            raise ConfigError("training.checkpoint_every", "must be a positive integer")

    # -- output -----------------------------------------------------------------

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=False, default_flow_style=None)

    def describe(self) -> str:
        """One line per leaf: dotted key, value, provenance."""
        return "\n".join(f"{k} = {v!r}  # {self.provenance.get(k, 'default')}" for k, v in _leaves(self.tree))
