"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) and
then asserts. Training budgets are reduced from the table presets so the
suite runs on one CPU; the reduced settings are listed in FAST_* below.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oef import dataset as D
from oef.bc import player_pairs
from oef.cli import main as cli
from oef.deepcfr import oef_cfr
from oef.envmodel import GameCoreModel, ModelGame, build_training_arrays, fidelity, HEAD_WEIGHTS, train_env
from oef.exact import CFRSolver, best_response_value, nash_conv
from oef.games import make_game
from oef.nn import Head, Net, TrainConfig, gradient_check
from oef.pipeline import expert_profile, run_experiment
from oef.policy import Policy
from oef.psro import oef_psro
from oracles import brute_force_best_response, brute_force_nash_conv, expected_value, profile_fn

SEEDS = (0, 1, 2)
FAST_BC = {"epochs": 200, "learning_rate": 0.01, "hidden_size": 32, "batch_size": 32}
FAST_ENV = {"epochs": 50, "learning_rate": 0.05, "hidden_size": 32, "batch_size": 32}
KUHN2_SWEEP = {"game": "kuhn_2", "sizes": [5000], "rhos": [0.0, 0.5, 1.0], "seeds": list(SEEDS),
               "solvers": ["psro"], "bc": FAST_BC, "env": FAST_ENV}


@contextmanager
def criterion(n: int):
    """Record PASS with the detail list, or FAIL with the error."""
    detail: list[str] = []
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[n] = (False, f"{'; '.join(detail)} | {type(exc).__name__}: {str(exc).splitlines()[0][:200]}")
        print(f"criterion {n}: FAIL")
        raise
    ACCEPTANCE[n] = (True, "; ".join(detail))
    print(f"criterion {n}: PASS  {'; '.join(detail)}")


@pytest.fixture(scope="module")
def kuhn():
    return make_game("kuhn_2")


@pytest.fixture(scope="module")
def kuhn_cfr_run(kuhn):
    """Vanilla CFR for 10k iterations with regret checkpoints."""
    solver = CFRSolver(kuhn)
    checks = {}
    start = time.perf_counter()
    for T in (10, 100, 1000, 10_000):
        solver.run(T - solver.iteration)
        checks[T] = (solver.max_regret().copy(), solver.regret_bound().copy())
    return solver, checks, time.perf_counter() - start


@pytest.fixture(scope="module")
def kuhn2_sweep():
    return run_experiment(KUHN2_SWEEP)


def _median_over_seeds(rows, method, rho, key):
    return float(np.median([r[key] for r in rows if r["method"] == method and r["rho"] == rho]))


# ---- 1-4: exact solvers and gradients ----------------------------------------------

def test_criterion_1_cfr_kuhn(kuhn, kuhn_cfr_run):
    with criterion(1) as d:
        solver, _, elapsed = kuhn_cfr_run
        avg = solver.average_policy()
        res = nash_conv(kuhn, avg)
        # value by direct recursion over the average profile, independent of the tree code
        v0 = expected_value(kuhn, kuhn.new_initial_state(), profile_fn(avg))[0]
        d += [f"NashConv {res.nash_conv:.5f}", f"value {v0:.5f}", f"{elapsed:.1f}s"]
        assert res.nash_conv < 0.01
        assert abs(v0 - (-1 / 18)) <= 0.005
        assert abs(res.values[0] - v0) < 1e-9
        assert elapsed < 60


def test_criterion_2_regret_bound(kuhn_cfr_run):
    with criterion(2) as d:
        _, checks, _ = kuhn_cfr_run
        for T, (regret, bound) in checks.items():
            d.append(f"T={T} max R/bound {np.max(regret / bound):.3f}")
            assert np.all(regret <= bound + 1e-12), T


def _random_profile(game, seed):
    rng = np.random.default_rng(seed)
    pol = Policy(game.max_actions)
    for key, (_, _, mask) in game.reachable_infosets().items():
        row = np.zeros(game.max_actions)
        row[mask.astype(bool)] = rng.dirichlet(np.ones(int(mask.sum())))
        pol[key] = row
    return pol


def test_criterion_3_oracle_equivalence():
    with criterion(3) as d:
        worst = 0.0
        for gid in ("kuhn_2", "liars_dice_2"):
            g = make_game(gid)
            for pol in (Policy(g.max_actions), _random_profile(g, 0), _random_profile(g, 1)):
                for p in range(2):
                    worst = max(worst, abs(best_response_value(g, pol, p) - brute_force_best_response(g, pol, p)))
                worst = max(worst, abs(nash_conv(g, pol).nash_conv - brute_force_nash_conv(g, pol)))
        d.append(f"max abs difference {worst:.2e}")
        assert worst <= 1e-9


def test_criterion_4_gradient_check(kuhn):
    with criterion(4) as d:
        ds = D.generate_random(kuhn, 400, 3)
        X, Y, M = player_pairs(ds, kuhn, 0)
        bc_net = Net(kuhn.infoset_dim, [32], Head("policy", kuhn.max_actions, "softmax"), seed=1)
        bc_err = gradient_check(bc_net, X[:64], {"policy": Y[:64]}, num_coords=100, legal_mask={"policy": M[:64]})
        Xe, T, head_mask, legal = build_training_arrays(ds, kuhn)
        heads = [Head("next_state", kuhn.joint_dim, "linear"), Head("rewards", kuhn.num_players, "linear"),
                 Head("terminal", 1, "sigmoid"), Head("legal", kuhn.max_actions, "sigmoid"),
                 Head("chance", kuhn.max_actions, "softmax")]
        env_net = Net(kuhn.joint_dim + kuhn.max_actions, [32], heads, seed=2)
        idx = np.arange(0, len(Xe), max(1, len(Xe) // 64))[:64]
        env_err = gradient_check(env_net, Xe[idx], {k: v[idx] for k, v in T.items()}, num_coords=100, seed=1,
                                 head_weight=HEAD_WEIGHTS, head_mask={k: v[idx] for k, v in head_mask.items()},
                                 legal_mask={k: v[idx] for k, v in legal.items()})
        d += [f"bc loss {bc_err:.2e}", f"env loss {env_err:.2e}"]
        assert bc_err < 1e-4 and env_err < 1e-4


# ---- 5: environment model -----------------------------------------------------------

def test_criterion_5_model_fidelity(kuhn):
    with criterion(5) as d:
        profile = expert_profile("kuhn_2", 0.01, 2000)
        f5000, f500 = [], []
        for s in SEEDS:
            def hybrid(size, tag):
                rnd = D.generate_random(kuhn, size, 100 * s + tag)
                exp = D.generate_expert(kuhn, size, 100 * s + tag + 1, profile)
                return D.mix_hybrid(rnd, exp, 0.5, size, 100 * s + tag + 2)
            held_out = hybrid(1000, 50).records
            for size, out in ((5000, f5000), (500, f500)):
                model = train_env(hybrid(size, size % 97), kuhn, TrainConfig(**FAST_ENV, seed=s))
                out.append(fidelity(model, held_out))
        d.append("size 5000 transitions/terminal/rewards " + ", ".join(
            f"{f.transitions:.3f}/{f.terminal:.3f}/{f.rewards:.3f}" for f in f5000))
        d.append("size 500 transitions " + ", ".join(f"{f.transitions:.3f}" for f in f500))
        for f in f5000:
            assert f.transitions >= 0.99 and f.terminal >= 0.99 and f.rewards >= 0.99
        assert np.median([f.transitions for f in f5000]) >= np.median([f.transitions for f in f500])


# ---- 6, 8, 9: Kuhn 2p sweep -----------------------------------------------------------

def test_criterion_6_bc_trend(kuhn2_sweep):
    with criterion(6) as d:
        expert = _median_over_seeds(kuhn2_sweep.rows, "bc", 0.0, "nash_conv")
        random = _median_over_seeds(kuhn2_sweep.rows, "bc", 1.0, "nash_conv")
        d.append(f"median BC NashConv rho=0 {expert:.4f}, rho=1 {random:.4f}")
        assert expert < random


def test_criterion_9_alpha_trend(kuhn2_sweep):
    with criterion(9) as d:
        a0 = _median_over_seeds(kuhn2_sweep.rows, "bc+mb", 0.0, "best_alpha")
        a1 = _median_over_seeds(kuhn2_sweep.rows, "bc+mb", 1.0, "best_alpha")
        d.append(f"median best alpha rho=0 {a0}, rho=1 {a1}")
        assert a0 >= a1


def _dominance(rows):
    worst = -np.inf
    cells = {}
    for r in rows:
        cells.setdefault((r["game"], r["rho"], r["seed"], r["solver"] or None), {})[r["method"]] = r["nash_conv"]
    bc = {k[:3]: v["bc"] for k, v in cells.items() if "bc" in v}
    for (game, rho, seed, solver), v in cells.items():
        if solver is None:
            continue
        gap = v["bc+mb"] - min(bc[(game, rho, seed)], v["mb"])
        worst = max(worst, gap)
    return worst, {(g, rho) for g, rho, _, s in cells if s}


def test_criterion_8_dominance(kuhn2_sweep):
    with criterion(8) as d:
        rows = list(kuhn2_sweep.rows)
        kuhn3 = {"game": "kuhn_3", "sizes": [5000], "rhos": [0.0, 0.5, 1.0], "seeds": [0], "solvers": ["psro"],
                 "bc": {**FAST_BC, "epochs": 100}, "env": FAST_ENV, "psro": {"iterations": 10}}
        leduc = {"game": "leduc_2", "sizes": [5000], "rhos": [0.0, 0.5, 1.0], "seeds": [0], "solvers": ["psro"],
                 "bc": {"epochs": 100, "learning_rate": 0.05, "hidden_size": 64, "batch_size": 32},
                 "env": {"epochs": 400, "learning_rate": 0.2, "hidden_size": 128, "batch_size": 32},
                 "psro": {"iterations": 10, "fault_cap": 0.25}}
        for cfg in (kuhn3, leduc):
            rows += run_experiment(cfg).rows
        worst, cells = _dominance(rows)
        d.append(f"{len(cells)} (game, rho) cells, max best-alpha minus min(BC, MB) {worst:.2e}")
        assert len(cells) == 9
        assert worst <= 1e-9


# ---- 7: model-based solvers ---------------------------------------------------------------

def test_criterion_7_model_based_sanity(kuhn):
    with criterion(7) as d:
        perfect = ModelGame(GameCoreModel(kuhn), kuhn)
        t = time.perf_counter()
        psro_nc = nash_conv(kuhn, oef_psro(perfect, seed=0).profile).nash_conv
        t_psro = time.perf_counter() - t
        t = time.perf_counter()
        cfr_nc = nash_conv(kuhn, oef_cfr(ModelGame(GameCoreModel(kuhn), kuhn), seed=0).profile).nash_conv
        t_cfr = time.perf_counter() - t
        d.append(f"perfect model PSRO {psro_nc:.4f} ({t_psro:.0f}s), CFR {cfr_nc:.4f} ({t_cfr:.0f}s)")
        assert psro_nc < 0.05 and cfr_nc < 0.1
        assert t_psro < 600 and t_cfr < 600

        profile = expert_profile("kuhn_2", 0.01, 2000)
        ds = D.mix_hybrid(D.generate_random(kuhn, 5000, 70), D.generate_expert(kuhn, 5000, 71, profile),
                          0.5, 5000, 72)
        model = train_env(ds, kuhn, TrainConfig(**FAST_ENV, seed=7))
        for name, solve in (("PSRO", lambda mg: oef_psro(mg, seed=0)), ("CFR", lambda mg: oef_cfr(mg, seed=0))):
            model.stats = type(model.stats)()
            t = time.perf_counter()
            res = solve(ModelGame(model, kuhn))
            elapsed = time.perf_counter() - t
            rows = np.array(list(res.profile.table.values()))
            rate = res.model_stats["fault_rate"]
            d.append(f"learned model {name} fault rate {rate:.4f}, "
                     f"NashConv {nash_conv(kuhn, res.profile).nash_conv:.4f} ({elapsed:.0f}s)")
            assert len(rows) == 12 and np.all(np.isfinite(rows))
            res.profile.validate()
            assert rate < 0.05 and elapsed < 600


# ---- 10: determinism ------------------------------------------------------------------

def _run_stages(out):
    out.mkdir()

    def run(*argv):
        assert cli([str(a) for a in argv]) == 0, argv

    run("generate", "--game", "kuhn_2", "--kind", "random", "--size", 800, "--seed", 1, "--out", out / "r.jsonl")
    run("generate", "--game", "kuhn_2", "--kind", "expert", "--size", 800, "--seed", 2, "--out", out / "e.jsonl")
    run("generate", "--game", "kuhn_2", "--kind", "learning", "--size", 800, "--seed", 3, "--out", out / "l.jsonl")
    run("mix", "--random", out / "r.jsonl", "--expert", out / "e.jsonl", "--rho", 0.5, "--size", 800,
        "--seed", 4, "--out", out / "h.jsonl")
    run("train-bc", "--data", out / "h.jsonl", "--out", out / "bc.json", "--policy-out", out / "bc_policy.json",
        "--epochs", 50)
    run("train-env", "--data", out / "h.jsonl", "--out", out / "env.json", "--epochs", 50, "--learning-rate", 0.05)
    run("solve-psro", "--model", out / "env.json", "--out", out / "psro.json", "--manifest", out / "psro_m.json",
        "--evaluate", "--fault-cap", 1.0)
    run("solve-cfr", "--model", out / "env.json", "--out", out / "cfr.json", "--manifest", out / "cfr_m.json",
        "--iterations", 5, "--traversals", 50, "--fault-cap", 1.0)
    run("combine", "--game", "kuhn_2", "--bc", out / "bc_policy.json", "--mb", out / "psro.json",
        "--out", out / "combined.json")
    run("evaluate", "--game", "kuhn_2", "--policy", out / "combined.json", "--out", out / "eval.json")
    cfg = {**KUHN2_SWEEP, "sizes": [500], "seeds": [0, 1], "solvers": ["psro", "cfr"],
           "psro": {"iterations": 3, "fault_cap": 1.0},
           "cfr": {"fault_cap": 1.0, "iterations": 3, "traversals": 30, "regret_epochs": 100, "strategy_epochs": 100}}
    # tiny models may decode badly; this check is about reproducibility, not fault rates
    run_experiment(cfg, out / "sweep")


def test_criterion_10_determinism(tmp_path):
    with criterion(10) as d:
        _run_stages(tmp_path / "a")
        _run_stages(tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                       if p.is_file() and p.name != "timing.json")
        differ = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
        d.append(f"{len(files)} files compared, {len(differ)} differ")
        assert len(files) >= 17 and not differ, differ
