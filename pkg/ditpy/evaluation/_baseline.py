"""Direct chunk-regression baseline sharing the diffusion policy's tokenizers and encoder."""
from .._policy import GoalSpec, RegressionPolicy
from .._training import TrainResult, train
from ._rollout import RolloutResult, make_chunk_fn, run_policy

__all__ = ["regression_baseline_train", "regression_baseline_rollout"]


def regression_baseline_train(config, dataset, out_path=None, log_path=None, loss: str = None) -> TrainResult:
    """Train with the regression objective on the same data, budget and seed as ``config``."""
    overrides = {"train.objective": "regression"}
    if loss is not None:
        overrides["train.regression_loss"] = loss
    return train(config.with_overrides(overrides), dataset, out_path=out_path, log_path=log_path)


def regression_baseline_rollout(net: RegressionPolicy, env, goal: GoalSpec, seed: int, stats,
                                ensemble_on: bool = True, decay: float = 0.1) -> RolloutResult:
    if not isinstance(net, RegressionPolicy):
        raise TypeError(f"expected a RegressionPolicy but got {type(net).__name__}")
    chunk_fn = make_chunk_fn(net, stats, goal)
    return run_policy(env, chunk_fn, net.config.horizon, goal.goal_id, seed, ensemble_on, decay)
