"""Command-line entry point: ``oef <subcommand> ...`` (or ``python -m oef``)."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from jsonschema import ValidationError

from oef import dataset as D
from oef.bc import BCModel, bc_policy, train_bc
from oef.deepcfr import DeepCFRConfig, oef_cfr
from oef.envmodel import EnvModel, ModelGame, train_env
from oef.games import make_game
from oef.nn import TrainConfig
from oef.pipeline import (
    METHODS,
    StageError,
    combine,
    emit_plot_data,
    evaluate_policy,
    expert_profile,
    load_config,
    read_results,
    run_experiment,
    select_best_alpha,
    sweep,
)
from oef.policy import Policy
from oef.presets import get_preset
from oef.psro import PSROConfig, oef_psro


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _train_cfg(args, which: str) -> TrainConfig:
    base = getattr(get_preset(args.preset), which).to_dict() if args.preset else TrainConfig().to_dict()
    for name in ("batch_size", "epochs", "learning_rate", "hidden_size", "seed"):
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    return TrainConfig(**base)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="named table row, e.g. kuhn2_500")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--seed", type=int)


# ---- handlers -----------------------------------------------------------------

def cmd_generate(args) -> None:
    game = make_game(args.game)
    if args.kind == "random":
        ds = D.generate_random(game, args.size, args.seed)
    elif args.kind == "learning":
        ds = D.generate_learning(game, args.size, args.seed)
    elif args.kind == "expert":
        threshold = None if args.threshold <= 0 or not game.enumerable else args.threshold
        profile = (Policy.load(args.profile) if args.profile
                   else expert_profile(args.game, threshold, args.expert_iterations))
        ds = D.generate_expert(game, args.size, args.seed, profile, threshold)
    else:
        raise SystemExit("hybrid datasets come from `mix`")
    if game.enumerable:
        D.check_replay(ds, game)
    D.save(ds, args.out)
    print(f"{args.out}: {len(ds)} records, sha256 {ds.checksum()}")


def cmd_mix(args) -> None:
    ds = D.mix_hybrid(D.load(args.random), D.load(args.expert), args.rho, args.size, args.seed)
    D.save(ds, args.out)
    print(f"{args.out}: {len(ds)} records (rho={args.rho}), sha256 {ds.checksum()}")


def cmd_train_bc(args) -> None:
    ds = D.load(args.data)
    game = make_game(ds.meta.game_id)
    model = train_bc(ds, game, _train_cfg(args, "bc"))
    model.save(args.out)
    if args.policy_out:
        bc_policy(model, game).save(args.policy_out)
    for w in model.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{args.out}: " + " ".join(n.param_hash()[:12] if n else "uniform" for n in model.nets))


def cmd_train_env(args) -> None:
    ds = D.load(args.data)
    model = train_env(ds, make_game(ds.meta.game_id), _train_cfg(args, "env"))
    model.save(args.out)
    print(f"{args.out}: {model.net.param_hash()[:12]}, {len(model.candidates)} decode candidates")


def _solve(args, run) -> None:
    model = EnvModel.load(args.model)
    game = make_game(model.game_id)
    mg = ModelGame(model, game)
    res, cfg = run(mg, game if args.evaluate else None)
    res.profile.save(args.out)
    manifest = {"solver": args.command, "model_hash": model.net.param_hash(), "seed": args.seed, "config": cfg,
                "model_stats": res.model_stats, "history": res.history}
    if args.manifest:
        _dump(manifest, args.manifest)
    print(f"{args.out}: {len(res.profile)} infosets, fault rate {res.model_stats.get('fault_rate', 0.0):.4f}")


def cmd_solve_psro(args) -> None:
    overrides = {k: v for k, v in (("iterations", args.iterations), ("meta_solver", args.meta_solver),
                                   ("oracle", args.oracle), ("fault_cap", args.fault_cap)) if v is not None}
    cfg = PSROConfig(**overrides)
    _solve(args, lambda mg, ev: (oef_psro(mg, seed=args.seed, cfg=cfg, evaluate_game=ev), asdict(cfg)))


def cmd_solve_cfr(args) -> None:
    overrides = {k: v for k, v in (("iterations", args.iterations), ("traversals", args.traversals),
                                   ("fault_cap", args.fault_cap)) if v is not None}
    cfg = DeepCFRConfig(**overrides)
    every = args.eval_every if args.evaluate else 0
    _solve(args, lambda mg, ev: (oef_cfr(mg, cfg=cfg, seed=args.seed, evaluate_game=ev, eval_every=every),
                                 cfg.to_dict()))


def cmd_combine(args) -> None:
    game = make_game(args.game)
    bc, mb = Policy.load(args.bc), Policy.load(args.mb)
    if args.alpha is None:
        alpha, table = select_best_alpha(bc, mb, game)
        print(json.dumps({"best_alpha": alpha, "nash_conv": [[a, v] for a, v in table.items()]}))
    else:
        alpha = args.alpha
    combine(bc, mb, alpha).materialize(game).save(args.out)
    print(f"{args.out}: alpha={alpha}")


def cmd_evaluate(args) -> None:
    game = make_game(args.game)
    if args.bc_model:
        pol = bc_policy(BCModel.load(args.bc_model), game)
    else:
        pol = Policy.load(args.policy)
    approx = {"seeds": args.approx_seeds, "episodes": args.approx_episodes,
              "eval_episodes": args.approx_eval_episodes}
    value, approximate = evaluate_policy(game, pol, approx)
    _dump({"game": args.game, "nash_conv": value, "approximate": approximate}, args.out)


def cmd_sweep(args) -> None:
    try:
        if len(args.configs) == 1:
            res = run_experiment(args.configs[0], args.out, workers=args.workers)
            rows, wall = res.rows, res.wall_time
        else:
            results = sweep(args.configs, args.out, workers=args.workers or 1)
            rows, wall = [r for res in results for r in res.rows], results[0].wall_time
    except StageError as err:
        print(f"error: {err}", file=sys.stderr)
        print(json.dumps(err.manifest, sort_keys=True, indent=1), file=sys.stderr)
        raise SystemExit(2) from None
    print(f"{args.out}: {len(rows)} rows in {wall:.1f}s")


def cmd_plot_data(args) -> None:
    rows = [r for path in args.results for r in read_results(path)]
    for path in emit_plot_data(rows, args.out, args.methods):
        print(path)


def cmd_check_config(args) -> None:
    _dump(load_config(args.config).to_dict(), None)


# ---- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oef", description="Offline equilibrium finding toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a random, expert or learning dataset")
    p.add_argument("--game", required=True)
    p.add_argument("--kind", required=True, choices=["random", "expert", "learning"])
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--profile", help="equilibrium policy JSON for expert data (default: solve one)")
    p.add_argument("--threshold", type=float, default=0.01,
                   help="max NashConv of the expert profile; <= 0 skips the check")
    p.add_argument("--expert-iterations", type=int, default=2000,
                   help="MCCFR iterations for the expert profile of games too large to solve exactly")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("mix", help="hybrid dataset with a fraction rho of random records")
    p.add_argument("--random", required=True)
    p.add_argument("--expert", required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_mix)

    p = sub.add_parser("train-bc", help="behaviour cloning from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy-out", help="also write the tabulated policy")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_bc)

    p = sub.add_parser("train-env", help="environment model from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_env)

    for name, fn in (("solve-psro", cmd_solve_psro), ("solve-cfr", cmd_solve_cfr)):
        p = sub.add_parser(name, help=f"{name[6:].upper()} on a trained environment model")
        p.add_argument("--model", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--manifest")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--iterations", type=int)
        p.add_argument("--fault-cap", type=float)
        p.add_argument("--evaluate", action="store_true", help="record true-game NashConv per iteration")
        if name == "solve-psro":
            p.add_argument("--meta-solver", choices=["auto", "uniform", "matrix_nash_2p0s", "alpha_rank"])
            p.add_argument("--oracle", choices=["exact", "q_learning"])
        else:
            p.add_argument("--traversals", type=int)
            p.add_argument("--eval-every", type=int, default=10)
        p.set_defaults(fn=fn)

    p = sub.add_parser("combine", help="per-infoset mix of a BC and a model-based policy")
    p.add_argument("--game", required=True)
    p.add_argument("--bc", required=True)
    p.add_argument("--mb", required=True)
    p.add_argument("--alpha", type=float, help="BC weight; omitted = best on the 11-point grid")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_combine)

    p = sub.add_parser("evaluate", help="NashConv of a policy in the true game")
    p.add_argument("--game", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--policy")
    src.add_argument("--bc-model")
    p.add_argument("--approx-seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--approx-episodes", type=int, default=20_000)
    p.add_argument("--approx-eval-episodes", type=int, default=5_000)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sweep", help="run experiment configs end to end")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("plot-data", help="per-panel mean/std CSVs from results")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--methods", nargs="*", choices=list(METHODS))
    p.set_defaults(fn=cmd_plot_data)

    p = sub.add_parser("check-config", help="validate a config and print it normalised")
    p.add_argument("config")
    p.set_defaults(fn=cmd_check_config)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, KeyError, OSError, RuntimeError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
