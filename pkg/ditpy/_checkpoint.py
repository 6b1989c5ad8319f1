"""Self-describing policy checkpoints (parameters, model config, normalization stats)."""
import dataclasses
import logging
from pathlib import Path
from typing import Optional

import torch

from ._config import RunConfig
from ._policy import PolicyConfig, RegressionPolicy, count_parameters, init_policy, init_regression_policy

__all__ = [
    "CHECKPOINT_VERSION",
    "CheckpointFormatError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "summarize_checkpoint",
]

_LG = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_KEYS = ("format_version", "kind", "model_config", "state_dict", "stats", "run_config")


class CheckpointFormatError(ValueError):
    pass


@dataclasses.dataclass
class Checkpoint:
    net: torch.nn.Module
    kind: str
    stats: object
    run_config: Optional[RunConfig] = None
    version: int = CHECKPOINT_VERSION


def _kind(net) -> str:
    return "regression" if isinstance(net, RegressionPolicy) else "diffusion"


def save_checkpoint(path, net: torch.nn.Module, stats, run_config: Optional[RunConfig] = None) -> Path:
    """Write ``net`` with everything needed to rebuild it; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model_config = dataclasses.asdict(net.config)
    model_config["cnn_channels"] = list(model_config["cnn_channels"])
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": _kind(net),
        "model_config": model_config,
        "state_dict": {k: v.detach().clone() for k, v in net.state_dict().items()},
        "stats": stats.to_dict(),
        "run_config": run_config.to_flat() if run_config is not None else None,
    }
    torch.save(payload, path)
    _LG.info("saved %s checkpoint to %s", payload["kind"], path)
    return path


def load_checkpoint(path) -> Checkpoint:
    from .envs import NormalizationStats

    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise CheckpointFormatError(f"{path} is not a ditpy checkpoint: {e}") from e

    if not isinstance(payload, dict) or any(k not in payload for k in _KEYS):
        raise CheckpointFormatError(f"{path} is missing checkpoint fields")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {payload['format_version']}")

    model_config = dict(payload["model_config"])
    model_config["cnn_channels"] = tuple(model_config["cnn_channels"])
    config = PolicyConfig(**model_config)
    if payload["kind"] == "diffusion":
        net = init_policy(config)
    elif payload["kind"] == "regression":
        net = init_regression_policy(config)
    else:
        raise CheckpointFormatError(f"unknown checkpoint kind '{payload['kind']}'")
    net.load_state_dict(payload["state_dict"])
    net.eval()

    run_config = payload["run_config"]
    return Checkpoint(
        net=net,
        kind=payload["kind"],
        stats=NormalizationStats.from_dict(payload["stats"]),
        run_config=RunConfig.from_flat(run_config) if run_config is not None else None,
        version=payload["format_version"],
    )


def summarize_checkpoint(path) -> str:
    ckpt = load_checkpoint(path)
    lines = [f"checkpoint {path} (version {ckpt.version}, {ckpt.kind})"]
    lines.append(f"  parameters: {count_parameters(ckpt.net)}")
    for k, v in dataclasses.asdict(ckpt.net.config).items():
        lines.append(f"  model.{k}: {v}")
    return "\n".join(lines)
