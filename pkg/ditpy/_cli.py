"""Command-line entry point: ``python -m ditpy <command>``.

Exit codes are 0 on success, 1 on a runtime failure and 2 on invalid input.
"""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from ._checkpoint import load_checkpoint, summarize_checkpoint
from ._config import RunConfig, parse_override, resolve_output, tiny_run_config
from ._policy import VARIANTS, init_policy, init_regression_policy
from ._training import bind_model_config, grad_check, random_batch, train

__all__ = ["GRAD_TOLERANCE", "build_parser", "main"]

_LG = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4


def _config_path(out: Path) -> Path:
    return out / "config.json" if out.is_dir() else out.with_name(out.name + ".config.json")


def _load_config(args) -> RunConfig:
    """Preset, then config file, then ``--set`` overrides, then dedicated flags."""
    config = tiny_run_config() if getattr(args, "quick", False) else RunConfig()
    if getattr(args, "config", None):
        with open(args.config, "r") as f:
            flat = json.load(f)
        if not isinstance(flat, dict):
            raise ValueError(f"config file {args.config} should hold a JSON object of dotted keys")
        config = config.with_overrides(flat)
    overrides = dict(parse_override(s) for s in getattr(args, "set", None) or [])
    for key, flag in (
        ("model.variant", "variant"),
        ("train.objective", "objective"),
        ("env.tag", "env"),
        ("env.n_episodes", "n_episodes"),
        ("env.seed", "seed"),
        ("env.workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return config.with_overrides(overrides).validate()


def cmd_gen_data(args) -> int:
    from .envs import generate_dataset

    config = _load_config(args)
    out = resolve_output(args.out)
    env = config.env
    generate_dataset(env.tag, env.n_episodes, env.seed, path=out, workers=env.workers)
    config.save(_config_path(out))
    print(f"wrote {env.n_episodes} {env.tag} episodes to {out}")
    return 0


def cmd_train(args) -> int:
    from .envs import load_dataset

    config = _load_config(args)
    dataset = load_dataset(args.data)
    out = resolve_output(args.out)
    log_path = resolve_output(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    result = train(config, dataset, out_path=out, log_path=log_path)
    result.config.save(_config_path(out))
    print(f"trained {config.train.objective} policy ({config.model.variant}); final loss {result.final_loss:.4f}")
    print(f"checkpoint: {out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate_policy, EvalReport

    ckpt = load_checkpoint(args.checkpoint)
    config = ckpt.run_config
    if config is None:
        model = {f"model.{k}": v for k, v in dataclasses.asdict(ckpt.net.config).items()}
        config = RunConfig().with_overrides({**model, "schedule.K": ckpt.net.config.diffusion_steps})
    overrides = {}
    for key, flag in (("eval.n_rollouts", "n_rollouts"), ("eval.ddim_steps", "ddim_steps"), ("eval.seed", "seed"),
                      ("eval.sampler", "sampler"), ("env.tag", "env")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.no_ensemble:
        overrides["eval.ensemble"] = False
    overrides.update(parse_override(s) for s in args.set or [])
    config = config.with_overrides(overrides).validate(bound=True)

    sched = config.schedule.build() if ckpt.kind == "diffusion" else None
    evaluation = evaluate_policy(ckpt.net, config.env.tag, ckpt.stats, config.eval, sched, workers=args.workers)
    s = evaluation.success
    print(f"success {s.rate:.3f} +/- {s.stderr:.3f} (wilson {s.ci_low:.3f}-{s.ci_high:.3f}, n={s.n})")
    if evaluation.coverage is not None:
        c = evaluation.coverage
        print(f"mode coverage left {c.left:.2f} right {c.right:.2f} over {c.n_success} successes")

    if args.out:
        out = resolve_output(args.out)
        report = EvalReport(meta={"checkpoint": str(args.checkpoint), "env": config.env.tag})
        m = ckpt.net.config
        report.add_row(
            name=f"eval/{Path(args.checkpoint).name}",
            suite="eval",
            variant=m.variant if ckpt.kind == "diffusion" else None,
            tokenizer=m.tokenizer,
            width_multiplier=m.width_multiplier,
            objective=ckpt.kind,
            steps=config.eval.ddim_steps if ckpt.kind == "diffusion" else None,
            n_rollouts=s.n,
            success=s.rate,
            stderr=s.stderr,
            ci_low=s.ci_low,
            ci_high=s.ci_high,
            mode_left=evaluation.coverage.left if evaluation.coverage else None,
            mode_right=evaluation.coverage.right if evaluation.coverage else None,
            nfe=evaluation.nfe,
            latency_ms=evaluation.latency_ms,
            seed=config.eval.seed,
            status="ok",
        )
        report.write(out)
        config.save(_config_path(out))
    return 0


def cmd_ablate(args) -> int:
    from .envs import EpisodeDataset, generate_dataset, load_dataset
    from .evaluation import default_suite, run_ablation, suite_from_dict

    config = _load_config(args)
    out = resolve_output(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        dataset = load_dataset(args.data)
    else:
        env = config.env
        dataset = EpisodeDataset(*generate_dataset(env.tag, env.n_episodes, env.seed, workers=env.workers))
    if args.suite:
        with open(args.suite, "r") as f:
            suite = suite_from_dict(json.load(f), config)
    else:
        suite = default_suite(config)
    suite.workers = args.workers
    config.save(_config_path(out))
    report = run_ablation(suite, dataset, out_dir=out)
    print(report.table())
    failed = sum(r["status"] != "ok" for r in report.rows)
    if failed:
        print(f"{failed} of {len(report)} rows failed")
    return 0


def cmd_gradcheck(args) -> int:
    from .envs import ENVS

    config = _load_config(args)
    env_cls = ENVS[config.env.tag]
    header = argparse.Namespace(
        env=config.env.tag,
        n_cameras=env_cls.n_cameras,
        image_size=config.model.image_size,
        proprio_dim=env_cls.proprio_dim,
        action_dim=env_cls.action_dim,
        n_goals=env_cls.n_goals,
    )
    sched = config.schedule.build()
    variants = [args.variant] if args.variant else list(VARIANTS)
    worst = 0.0
    for variant in variants:
        bound = bind_model_config(config.with_overrides({"model.variant": variant}), header)
        if bound.train.objective == "regression":
            net = init_regression_policy(bound.model, seed=args.check_seed)
        else:
            net = init_policy(bound.model, seed=args.check_seed)
        batch = random_batch(bound.model, args.batch_size, seed=args.check_seed)
        err = grad_check(net, batch, sched, n_params_sampled=args.n_params, h=args.h, seed=args.check_seed)
        worst = max(worst, err)
        print(f"{variant}: max relative error {err:.3e}")
    if worst >= GRAD_TOLERANCE:
        print(f"gradient check failed: {worst:.3e} >= {GRAD_TOLERANCE:.0e}")
        return 1
    return 0


def cmd_inspect(args) -> int:
    from .envs import summarize_episode_file
    from .envs._episodes import MAGIC
    from .evaluation import summarize_report

    path = Path(args.path)
    if path.is_dir() or path.suffix == ".jsonl":
        print(summarize_report(path))
        return 0
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
    if head == MAGIC:
        print(summarize_episode_file(path))
    elif head.lstrip().startswith(b"{"):
        config = RunConfig.load(path)
        for key, value in config.to_flat().items():
            print(f"{key} = {value}")
    else:
        print(summarize_checkpoint(path))
    return 0


def _add_config_args(p, quick=True):
    p.add_argument("--config", help="JSON file of flat dotted config keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    if quick:
        p.add_argument("--quick", action="store_true", help="start from the tiny smoke-test preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ditpy", description="Desk-scale diffusion policies with adaLN conditioning.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate expert demonstrations")
    _add_config_args(p)
    p.add_argument("--env", choices=["fork2d", "pickplace_lang"])
    p.add_argument("-n", "--n-episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a policy on an episode file")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--objective", choices=["diffusion", "regression"])
    p.add_argument("--log", help="training log (JSON lines); defaults next to the checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="roll out a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", choices=["fork2d", "pickplace_lang"])
    p.add_argument("--n-rollouts", type=int)
    p.add_argument("--ddim-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sampler", choices=["ddim", "ddpm"])
    p.add_argument("--no-ensemble", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite")
    _add_config_args(p)
    p.add_argument("--suite", help="JSON suite description; defaults to the variant and tokenizer grids")
    p.add_argument("--data", help="episode file; generated from the env section when omitted")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    _add_config_args(p, quick=False)
    p.add_argument("--variant", choices=VARIANTS, help="check one variant instead of all four")
    p.add_argument("--seed", dest="check_seed", type=int, default=0, help="seeds init, batch and sampling")
    p.add_argument("--n-params", type=int, default=200)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=2)
    p.set_defaults(func=cmd_gradcheck, quick=True)

    p = sub.add_parser("inspect", help="print the header of an episode file, checkpoint, report or config")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, TypeError, KeyError, FileNotFoundError) as e:
        _LG.error("invalid input: %s", e)
        return 2
    except Exception:
        _LG.exception("%s failed", args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
