"""Command-line surface: train, eval, toy1d, bench, serve.

Every command is seeded and single-process; identical arguments and seed
produce byte-identical CSV output. Output defaults to the directory named by
the BOED_OUT environment variable (falling back to ./boed_out).

Exit codes: 0 ok, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import agents, estimators
from .autodiff import load_checkpoint
from .models import MODEL_IDS, get_model
from .trainer import MODEL_DEFAULTS, TrainConfig, Trainer

PROFILES = ("paper", "desk")

# Desk profile: iterations / 10, training L / 100 (floor 1e3); evaluation uses
# L = 1e4 and 200 rollouts (500 for prey).
DESK_EVAL_L = 10_000
DESK_ROLLOUTS = {"prey": 500}
DESK_ROLLOUTS_DEFAULT = 200
PAPER_EVAL_L = 1_000_000
PAPER_ROLLOUTS = 2000


def _out_dir(args) -> Path:
    out = args.out or os.environ.get("BOED_OUT", "boed_out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def build_train_config(args) -> TrainConfig:
    overrides = {}
    if args.config:
        with open(args.config) as f:
            doc = json.load(f)
        valid = {f.name for f in dataclasses.fields(TrainConfig)} - {"model_id"}
        unknown = set(doc) - valid
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}; valid: {sorted(valid)}")
        overrides.update(doc)
    cfg = TrainConfig.for_model(args.model, **overrides)
    cfg.seed = args.seed
    cfg.reward_mode = args.reward
    cfg.profile = args.profile
    if args.profile == "desk":
        cfg.iterations = max(1, cfg.iterations // 10)
        cfg.contrastive = max(1000, cfg.contrastive // 100)
    if args.iterations is not None:
        cfg.iterations = args.iterations
    if args.contrastive is not None:
        cfg.contrastive = args.contrastive
    if args.gamma is not None:
        cfg.gamma = args.gamma
    if args.horizon is not None:
        cfg.horizon = args.horizon
    return cfg


class UsageError(Exception):
    pass


def run_header(args, cfg: TrainConfig | None = None) -> dict:
    header = {
        "command": args.command,
        "model": getattr(args, "model", None),
        "profile": getattr(args, "profile", None),
        "seed": getattr(args, "seed", None),
    }
    if getattr(args, "profile", None) == "paper" and getattr(args, "model", None) in MODEL_DEFAULTS:
        header["table_defaults"] = MODEL_DEFAULTS[args.model]
    if cfg is not None:
        header["train_config"] = dataclasses.asdict(cfg)
    return header


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    out = _out_dir(args)
    trainer = Trainer(cfg)
    stem = f"train_{cfg.model_id}_{cfg.reward_mode}_seed{cfg.seed}"
    log = trainer.train(progress=lambda row: print(
        f"iter {row['iteration']}: return {row['mean_return']:.4f} "
        f"alpha {row['alpha']:.4f}", flush=True))
    ckpt_path = out / f"{stem}.ckpt"
    trainer.save(ckpt_path)
    # wall-clock timings stay out of the CSV so repeated runs are byte-identical
    _write_csv(
        out / f"{stem}_log.csv",
        ["iteration", "mean_return", "return_stderr", "critic_loss", "actor_loss",
         "alpha"],
        ([r["iteration"], r["mean_return"], r["return_stderr"], r["critic_loss"],
          r["actor_loss"], r["alpha"]] for r in log),
    )
    (out / f"{stem}_header.json").write_text(json.dumps(run_header(args, cfg), indent=2))
    print(f"checkpoint: {ckpt_path}")
    return 0


def _load_eval_policy(args, model):
    if args.method == "random":
        return agents.RandomPolicy(model), "random"
    if args.method == "myopic-snis":
        return agents.MyopicSnisPolicy(model), "myopic-snis"
    if not args.checkpoint:
        raise UsageError("method 'policy' requires --checkpoint")
    params, meta = load_checkpoint(args.checkpoint)
    if meta.get("model") != model.model_id:
        raise RuntimeError(
            f"checkpoint is for model {meta.get('model')!r} but --model is {model.model_id!r}"
        )
    net = agents.make_policy_net(model, np.random.default_rng(0))
    for k, t in net.params.items():
        t.data[...] = params[k]
    return agents.NetworkPolicy(model, net), "policy"


def cmd_eval(args) -> int:
    model = get_model(args.model)
    policy, method = _load_eval_policy(args, model)
    if args.profile == "paper":
        L = args.contrastive or PAPER_EVAL_L
        n_rollouts = args.rollouts or PAPER_ROLLOUTS
    else:
        L = args.contrastive or DESK_EVAL_L
        n_rollouts = args.rollouts or DESK_ROLLOUTS.get(args.model, DESK_ROLLOUTS_DEFAULT)
    T = args.horizon or MODEL_DEFAULTS[args.model]["horizon"]
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xE7A1]))
    bounds = estimators.run_rollouts(model, policy, L, T, n_rollouts, rng)
    out = _out_dir(args)
    stem = f"eval_{args.model}_{method}_seed{args.seed}"
    rows = (
        [args.model, method, args.seed, r, t + 1, bounds.lower[r, t], bounds.upper[r, t]]
        for r in range(n_rollouts) for t in range(T)
    )
    _write_csv(out / f"{stem}_rollouts.csv",
               ["model", "method", "seed", "rollout", "t", "g_lower", "g_upper"], rows)
    n = n_rollouts
    agg = (
        [args.model, method, t + 1,
         bounds.lower[:, t].mean(), bounds.lower[:, t].std(ddof=1) / np.sqrt(n),
         bounds.upper[:, t].mean(), bounds.upper[:, t].std(ddof=1) / np.sqrt(n), n]
        for t in range(T)
    )
    _write_csv(out / f"{stem}_aggregate.csv",
               ["model", "method", "t", "lower_mean", "lower_stderr", "upper_mean",
                "upper_stderr", "n"], agg)
    (out / f"{stem}_header.json").write_text(json.dumps(run_header(args), indent=2))
    low = bounds.estimate("lower")
    up = bounds.estimate("upper")
    print(f"{args.model}/{method} T={T} L={L} n={n_rollouts}: "
          f"lower {low.mean:.4f}±{low.stderr:.4f} upper {up.mean:.4f}±{up.stderr:.4f}")
    return 0


def cmd_toy1d(args) -> int:
    """Myopic vs non-myopic comparison on the 1-D toy model at T = 2."""
    model = get_model("source1d")
    out = _out_dir(args)
    L_eval = args.contrastive or 1000
    n_rollouts = args.rollouts or 10_000
    results = {}
    for label, gamma in (("myopic", 0.0), ("nonmyopic", 1.0)):
        cfg = TrainConfig.for_model("source1d", gamma=gamma)
        cfg.seed = args.seed
        cfg.profile = args.profile
        cfg.iterations = args.iterations or max(1, cfg.iterations // 10)
        cfg.contrastive = max(1000, cfg.contrastive // 100)
        trainer = Trainer(cfg)
        trainer.train(progress=lambda row, lab=label: print(
            f"[{lab}] iter {row['iteration']}: return {row['mean_return']:.4f}", flush=True))
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x701D]))
        bounds = estimators.run_rollouts(
            model, trainer.eval_policy(), L_eval, 2, n_rollouts, rng)
        results[label] = bounds
        trainer.save(out / f"toy1d_{label}_seed{args.seed}.ckpt")
    grid = np.arange(-4.0, 4.0 + 1e-9, 0.05)
    d_star, eig_star = estimators.grid_search_optimal_design_1d(model, grid)
    rows = []
    for label, bounds in results.items():
        est = bounds.estimate("lower")
        for t in range(2):
            rows.append([label, t + 1, est.curve_mean[t], est.curve_stderr[t]])
    rows.append(["oracle-grid-optimal", 1, eig_star, 0.0])
    _write_csv(out / f"toy1d_seed{args.seed}.csv",
               ["method", "t", "eig_mean", "eig_stderr"], rows)
    print(f"grid-search optimum: d*={d_star:.3f} EIG*={eig_star:.4f}")
    for label, bounds in results.items():
        est = bounds.estimate("lower")
        print(f"{label}: t=1 {est.curve_mean[0]:.4f}±{est.curve_stderr[0]:.4f} "
              f"t=2 {est.curve_mean[1]:.4f}±{est.curve_stderr[1]:.4f}")
    return 0


def cmd_bench(args) -> int:
    model = get_model(args.model)
    policy, method = _load_eval_policy(args, model)
    rng = np.random.default_rng(args.seed)
    n = args.proposals
    state = policy.initial_state(1, rng)
    # warm-up
    for _ in range(10):
        d = policy.propose(state, rng)
        y = model.sample_outcome(rng, model.sample_theta(rng, 1)[0], d[0])
        state = policy.advance(state, d, np.atleast_1d(y))
    times = np.empty(n)
    outcomes_pool = []
    theta = model.sample_theta(rng, 1)[0]
    for i in range(n):
        t0 = time.perf_counter()
        d = policy.propose(state, rng)
        times[i] = time.perf_counter() - t0
        y = model.sample_outcome(rng, theta, d[0])
        t0 = time.perf_counter()
        state = policy.advance(state, d, np.atleast_1d(y))
        times[i] += time.perf_counter() - t0
        if (i + 1) % model_horizon(args.model) == 0:
            state = policy.initial_state(1, rng)
    mean_ms = float(times.mean() * 1e3)
    stderr_ms = float(times.std(ddof=1) / np.sqrt(n) * 1e3)
    hardware = f"{platform.system()} {platform.machine()}, python {platform.python_version()}"
    out = _out_dir(args)
    _write_csv(out / f"bench_{args.model}_{method}_seed{args.seed}.csv",
               ["model", "method", "proposals", "mean_ms", "stderr_ms", "hardware"],
               [[args.model, method, n, mean_ms, stderr_ms, hardware]])
    print(f"{method} latency: {mean_ms:.4f} ms ± {stderr_ms:.4f} over {n} proposals "
          f"({hardware})")
    return 0


def model_horizon(model_id: str) -> int:
    return MODEL_DEFAULTS[model_id]["horizon"]


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    host, _, port = args.addr.rpartition(":")
    app = create_app(checkpoint_dir=Path(args.checkpoints))
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boed", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model_required=True):
        sp.add_argument("--model", choices=MODEL_IDS, required=model_required)
        sp.add_argument("--profile", choices=PROFILES, default="desk")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None, help="output dir (default $BOED_OUT)")
        sp.add_argument("--contrastive", type=int, default=None, metavar="L")
        sp.add_argument("--rollouts", type=int, default=None)
        sp.add_argument("--horizon", type=int, default=None, metavar="T")

    sp = sub.add_parser("train", help="train a design policy")
    common(sp)
    sp.add_argument("--reward", choices=("dense", "sparse"), default="dense")
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--iterations", type=int, default=None)
    sp.add_argument("--config", default=None, help="JSON config overrides")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate bound estimates for a policy")
    common(sp)
    sp.add_argument("--method", choices=("policy", "random", "myopic-snis"),
                    default="policy")
    sp.add_argument("--checkpoint", default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("toy1d", help="myopic vs non-myopic 1-D comparison")
    common(sp, model_required=False)
    sp.add_argument("--iterations", type=int, default=None)
    sp.set_defaults(func=cmd_toy1d)

    sp = sub.add_parser("bench", help="deployment latency of design proposals")
    common(sp)
    sp.add_argument("--method", choices=("policy", "random"), default="policy")
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--proposals", type=int, default=1000)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("serve", help="run the live session HTTP service")
    sp.add_argument("--addr", default="127.0.0.1:8000")
    sp.add_argument("--checkpoints", required=True, help="checkpoint directory")
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (KeyboardInterrupt, BrokenPipeError):
        return 3
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
