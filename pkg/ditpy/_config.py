"""Run configuration: nested sections addressed by flat dotted keys."""
import dataclasses
import json
import os
import typing
from pathlib import Path

import tree

from ._policy import PolicyConfig
from ._schedule import NoiseSchedule, make_cosine_schedule, make_linear_schedule

__all__ = [
    "OUTPUT_ROOT_ENV",
    "ScheduleConfig",
    "TrainConfig",
    "EnvConfig",
    "EvalConfig",
    "RunConfig",
    "tiny_run_config",
    "resolve_output",
    "parse_override",
]

OUTPUT_ROOT_ENV = "DITPY_OUTPUT_ROOT"


@dataclasses.dataclass
class ScheduleConfig:
    K: int = 100
    s: float = 0.008
    kind: str = "cosine"
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def validate(self):
        if self.K < 2:
            raise ValueError(f"schedule.K should be >= 2 but is {self.K}")
        if not self.s > 0:
            raise ValueError(f"schedule.s should be positive but is {self.s}")
        if self.kind not in ("cosine", "linear"):
            raise ValueError(f"schedule.kind should be 'cosine' or 'linear' but is '{self.kind}'")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError("schedule.beta_start and schedule.beta_end should satisfy 0 < start <= end < 1")
        return self

    def build(self) -> NoiseSchedule:
        """The noise schedule this section describes; ``s`` only applies to cosine, the betas to linear."""
        if self.kind == "linear":
            return make_linear_schedule(self.K, self.beta_start, self.beta_end)
        return make_cosine_schedule(self.K, self.s)


@dataclasses.dataclass
class TrainConfig:
    iterations: int = 20000
    batch_size: int = 64
    lr: float = 3e-4
    weight_decay: float = 1e-4
    warmup: int = 500
    min_lr_ratio: float = 0.1
    grad_clip: float = 1.0
    seed: int = 0
    eval_interval: int = 100
    objective: str = "diffusion"
    regression_loss: str = "mse"

    def validate(self):
        for name in ("iterations", "batch_size", "eval_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"train.{name} should be positive but is {getattr(self, name)}")
        if self.lr < 0:
            raise ValueError(f"train.lr should be >= 0 but is {self.lr}")
        if self.warmup < 0 or self.weight_decay < 0 or self.grad_clip < 0:
            raise ValueError("train.warmup, train.weight_decay and train.grad_clip should be >= 0")
        if not 0 <= self.min_lr_ratio <= 1:
            raise ValueError(f"train.min_lr_ratio should be in [0, 1] but is {self.min_lr_ratio}")
        if self.objective not in ("diffusion", "regression"):
            raise ValueError(f"train.objective should be 'diffusion' or 'regression' but is '{self.objective}'")
        if self.regression_loss not in ("mse", "l1"):
            raise ValueError(f"train.regression_loss should be 'mse' or 'l1' but is '{self.regression_loss}'")
        return self


@dataclasses.dataclass
class EnvConfig:
    tag: str = "fork2d"
    n_episodes: int = 100
    seed: int = 0
    workers: int = 1

    def validate(self):
        from .envs import ENVS

        if self.tag not in ENVS:
            raise ValueError(f"env.tag should be one of {sorted(ENVS)} but is '{self.tag}'")
        if self.n_episodes < 1:
            raise ValueError(f"env.n_episodes should be >= 1 but is {self.n_episodes}")
        return self


@dataclasses.dataclass
class EvalConfig:
    n_rollouts: int = 50
    ddim_steps: int = 10
    seed: int = 1000
    ensemble: bool = True
    decay: float = 0.1
    sampler: str = "ddim"

    def validate(self):
        if self.n_rollouts < 1:
            raise ValueError(f"eval.n_rollouts should be >= 1 but is {self.n_rollouts}")
        if self.ddim_steps < 1:
            raise ValueError(f"eval.ddim_steps should be >= 1 but is {self.ddim_steps}")
        if self.decay < 0:
            raise ValueError(f"eval.decay should be >= 0 but is {self.decay}")
        if self.sampler not in ("ddim", "ddpm"):
            raise ValueError(f"eval.sampler should be 'ddim' or 'ddpm' but is '{self.sampler}'")
        return self


def _field_type(cls, name):
    hint = typing.get_type_hints(cls)[name]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    if typing.get_origin(hint) is typing.Union and len(args) == 1:
        return args[0]
    return hint


def _coerce(cls, name, value):
    """Convert a JSON or command-line value to the type of field ``cls.name``."""
    hint = _field_type(cls, name)
    if value is None:
        return None
    origin = typing.get_origin(hint)
    if origin is tuple or hint is tuple:
        if isinstance(value, str):
            value = [v for v in value.replace("(", "").replace(")", "").split(",") if v.strip()]
        return tuple(int(v) for v in value)
    if hint is bool:
        if isinstance(value, str):
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"'{value}' is not a boolean")
            return value.lower() in ("true", "1")
        return bool(value)
    if hint in (int, float, str):
        if hint is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{cls.__name__}.{name} should be an int but is {value}")
        return hint(value) if not (hint is int and isinstance(value, str)) else int(value, 0)
    return value


def parse_override(text: str):
    """Split ``key=value`` from the command line."""
    if "=" not in text:
        raise ValueError(f"override should look like key=value but is '{text}'")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


@dataclasses.dataclass
class RunConfig:
    model: PolicyConfig = dataclasses.field(default_factory=PolicyConfig)
    schedule: ScheduleConfig = dataclasses.field(default_factory=ScheduleConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    env: EnvConfig = dataclasses.field(default_factory=EnvConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)

    def _shallow(self):
        return {
            section.name: {f.name: None for f in dataclasses.fields(getattr(self, section.name))}
            for section in dataclasses.fields(self)
        }

    def to_flat(self) -> dict:
        """``{"model.d_model": 64, ...}``; tuple fields stay single leaves."""
        nested = {s.name: dataclasses.asdict(getattr(self, s.name)) for s in dataclasses.fields(self)}
        flat = tree.flatten_with_path_up_to(self._shallow(), nested)
        return {".".join(path): (list(v) if isinstance(v, tuple) else v) for path, v in flat}

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply flat dotted-key overrides; unknown keys raise ``KeyError``."""
        sections = {s.name: dataclasses.asdict(getattr(self, s.name)) for s in dataclasses.fields(self)}
        known = self._shallow()
        for key, value in overrides.items():
            parts = key.split(".")
            if len(parts) != 2 or parts[0] not in known or parts[1] not in known[parts[0]]:
                raise KeyError(f"unknown config key '{key}'")
            section_cls = type(getattr(self, parts[0]))
            sections[parts[0]][parts[1]] = _coerce(section_cls, parts[1], value)
        return RunConfig(**{name: type(getattr(self, name))(**values) for name, values in sections.items()})

    def validate(self, bound: bool = False) -> "RunConfig":
        """Validate every section; ``bound`` also requires the dataset dims of the model."""
        if bound:
            self.model.validate()
        else:
            dims = dict(action_dim=1, proprio_dim=1, n_goals=1)
            dataclasses.replace(self.model, **{k: getattr(self.model, k) or v for k, v in dims.items()}).validate()
        self.schedule.validate()
        self.train.validate()
        self.env.validate()
        self.eval.validate()
        if self.eval.ddim_steps > self.schedule.K:
            raise ValueError(f"eval.ddim_steps={self.eval.ddim_steps} exceeds schedule.K={self.schedule.K}")
        if self.model.diffusion_steps != self.schedule.K:
            raise ValueError(
                f"model.diffusion_steps={self.model.diffusion_steps} should equal schedule.K={self.schedule.K}"
            )
        return self

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        return cls().with_overrides(flat)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r") as f:
            flat = json.load(f)
        if not isinstance(flat, dict):
            raise ValueError(f"config file {path} should hold a JSON object of dotted keys")
        return cls.from_flat(flat)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_flat(), f, indent=2, sort_keys=True)


def tiny_run_config() -> RunConfig:
    """Small preset for gradient checks and pipeline smoke runs."""
    return RunConfig().with_overrides(
        {
            "model.n_layers": 1,
            "model.d_model": 16,
            "model.n_heads": 2,
            "model.horizon": 4,
            "model.goal_dim": 8,
            "model.cnn_channels": (4, 8, 8),
            "model.diffusion_steps": 20,
            "schedule.K": 20,
            "train.iterations": 20,
            "train.batch_size": 8,
            "train.warmup": 2,
            "train.eval_interval": 5,
            "env.n_episodes": 4,
            "eval.n_rollouts": 2,
            "eval.ddim_steps": 5,
        }
    )


def resolve_output(path) -> Path:
    """Relative output paths are anchored at ``$DITPY_OUTPUT_ROOT`` when it is set."""
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path
