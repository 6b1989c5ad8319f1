"""Ablation runner: conditioning-block and tokenizer grids trained and evaluated under one budget."""
import dataclasses
import json
import logging
import time
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from .._config import RunConfig
from .._policy import VARIANTS, count_parameters, init_policy
from .._space import Choice, SearchSpace, grid, sample, variable_from_spec
from .._training import bind_model_config, loss_at_init, train
from ..envs import Fork2DEnv
from ._report import EvalReport
from ._rollout import decision_point_velocity, evaluate_policy

__all__ = ["AblationSuite", "default_suite", "suite_from_dict", "run_ablation"]

_LG = logging.getLogger(__name__)


@dataclasses.dataclass
class AblationSuite:
    """Named search spaces of config overrides applied on top of ``base``.

    ``mode`` is ``grid`` (every point) or ``sample`` (``n_samples`` seeded draws per space).
    """

    base: RunConfig
    spaces: Dict[str, SearchSpace]
    regression: bool = True
    mode: str = "grid"
    n_samples: int = 4
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in ("grid", "sample"):
            raise ValueError(f"suite mode should be 'grid' or 'sample' but is '{self.mode}'")

    def points(self) -> Iterator[Tuple[str, dict]]:
        rng = np.random.RandomState(self.seed)
        for name, space in self.spaces.items():
            it = grid(space) if self.mode == "grid" else sample(space, self.n_samples, rng)
            for _, overrides in it:
                yield name, overrides

    def __len__(self):
        n = sum(len(s) if self.mode == "grid" else self.n_samples for s in self.spaces.values())
        return n + int(self.regression)


def default_suite(base: RunConfig, ddim_steps: Sequence[int] = None) -> AblationSuite:
    """Four conditioning variants at two DDIM step counts, plus three tokenizer rows.

    The step counts default to ``eval.ddim_steps`` and the full ``schedule.K``.
    """
    if ddim_steps is None:
        ddim_steps = sorted({base.eval.ddim_steps, base.schedule.K})
    attention = SearchSpace(
        {
            "model.variant": Choice(VARIANTS, name="variant"),
            "eval.ddim_steps": Choice(list(ddim_steps), name="ddim_steps"),
        },
        name="attention",
    )
    encoder = SearchSpace(
        Choice(
            [
                {"model.variant": "adaln_zero", "model.tokenizer": "resnet", "model.width_multiplier": 1.0},
                {
                    "model.variant": "adaln_zero",
                    "model.tokenizer": "conv_stem",
                    "model.width_multiplier": Choice([1.0, 1.5], name="width_multiplier"),
                },
            ],
            name="tokenizer",
        ),
        name="encoder",
    )
    return AblationSuite(base=base, spaces={"attention": attention, "encoder": encoder})


def suite_from_dict(d: dict, base: RunConfig) -> AblationSuite:
    """Suite from its JSON form::

        {"spaces": {"attention": {"model.variant": ["adaln_zero", "adaln"],
                                  "eval.ddim_steps": {"choice": [10, 100]}}},
         "regression": true, "mode": "grid", "n_samples": 4, "seed": 0}
    """
    known = set(base.to_flat())
    spaces = {}
    for name, axes in d.get("spaces", {}).items():
        for key in axes:
            if key not in known:
                raise KeyError(f"unknown config key '{key}' in suite space '{name}'")
        spaces[name] = SearchSpace({key: variable_from_spec(f"{name}.{key}", spec) for key, spec in axes.items()},
                                   name=name)
    if not spaces:
        raise ValueError("an ablation suite needs at least one space")
    extra = {k: d[k] for k in ("regression", "mode", "n_samples", "seed", "workers") if k in d}
    return AblationSuite(base=base, spaces=spaces, **extra)


def _training_key(config: RunConfig) -> str:
    return json.dumps({k: v for k, v in config.to_flat().items() if not k.startswith("eval.")}, sort_keys=True)


def _row_name(suite: str, config: RunConfig) -> str:
    m = config.model
    if config.train.objective == "regression":
        return f"{suite}/regression-{config.train.regression_loss}"
    return f"{suite}/{m.variant}/{m.tokenizer}x{m.width_multiplier:g}/ddim{config.eval.ddim_steps}"


def _train_cached(config, dataset, cache):
    key = _training_key(config)
    if key not in cache:
        entry = {"name": f"run{len(cache)}"}
        try:
            entry["result"] = train(config, dataset)
            if config.train.objective == "diffusion":
                bound = bind_model_config(config, dataset.header)
                sched = config.schedule.build()
                net = init_policy(bound.model, seed=config.train.seed)
                entry["init"] = loss_at_init(net, dataset, sched, n_samples=256, seed=config.train.seed)
        except RuntimeError as e:
            _LG.warning("training %s failed: %s", _row_name("-", config), e)
            entry["error"] = e
        cache[key] = entry
    return cache[key]


def _run_point(report: EvalReport, suite: str, config: RunConfig, dataset, cache, workers: int):
    m = config.model
    diffusion = config.train.objective == "diffusion"
    row = dict(
        name=_row_name(suite, config),
        suite=suite,
        variant=m.variant if diffusion else None,
        tokenizer=m.tokenizer,
        width_multiplier=m.width_multiplier,
        objective=config.train.objective,
        steps=config.eval.ddim_steps if diffusion else None,
        n_rollouts=config.eval.n_rollouts,
        seed=config.train.seed,
    )
    entry = _train_cached(config, dataset, cache)
    if "error" in entry:
        return report.add_row(**row, status="failed", error=str(entry["error"]))

    trained = entry["result"]
    if entry["name"] not in report.curves:
        report.add_curve(entry["name"], trained.losses)
    if "init" in entry:
        mean, se = entry["init"]
        row.update(loss_at_init=mean, loss_at_init_stderr=se)
        if m.variant == "adaln_zero":
            row["loss_at_init_ok"] = bool(abs(mean - 1.0) <= 3 * se)

    sched = config.schedule.build() if diffusion else None
    try:
        evaluation = evaluate_policy(trained.net, config.env.tag, dataset.stats, config.eval, sched, workers=workers)
    except (RuntimeError, ValueError) as e:
        _LG.warning("evaluation of %s failed: %s", row["name"], e)
        return report.add_row(**row, final_loss=trained.final_loss, status="failed", error=str(e))

    if config.env.tag == Fork2DEnv.tag:
        seeds = [config.eval.seed + i for i in range(config.eval.n_rollouts)]
        row["decision_x"] = decision_point_velocity(
            trained.net, dataset.stats, seeds, sched, config.eval.ddim_steps
        ).mean_x
    if evaluation.coverage is not None:
        row.update(mode_left=evaluation.coverage.left, mode_right=evaluation.coverage.right)
    s = evaluation.success
    return report.add_row(
        **row,
        success=s.rate,
        stderr=s.stderr,
        ci_low=s.ci_low,
        ci_high=s.ci_high,
        final_loss=trained.final_loss,
        n_params=count_parameters(trained.net),
        nfe=evaluation.nfe,
        latency_ms=evaluation.latency_ms,
        status="ok",
    )


def run_ablation(suite: AblationSuite, dataset, out_dir=None) -> EvalReport:
    """Train and evaluate every point of ``suite``; failed points become ``failed`` rows.

    Points that differ only in their ``eval.*`` keys share one training run.
    """
    start = time.time()
    base = suite.base
    report = EvalReport(
        meta={
            "env": base.env.tag,
            "n_episodes": len(dataset),
            "train_seed": base.train.seed,
            "eval_seed": base.eval.seed,
            "iterations": base.train.iterations,
            "K": base.schedule.K,
            "mode": suite.mode,
        }
    )
    cache = {}
    for name, overrides in suite.points():
        _run_point(report, name, base.with_overrides(overrides), dataset, cache, suite.workers)
        _LG.info("ablation row %d/%d done", len(report), len(suite))
    if suite.regression:
        _run_point(report, "baseline", base.with_overrides({"train.objective": "regression"}), dataset, cache,
                   suite.workers)
    report.meta["wall_clock"] = time.time() - start
    report.meta["ddim_steps"] = sorted({r["steps"] for r in report.rows if r["steps"] is not None})
    if out_dir is not None:
        report.write(out_dir)
    return report
