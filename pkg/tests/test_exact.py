import numpy as np
import pytest
from hypothesis import given, strategies as st

from oef.exact import (
    CFRSolver,
    ExternalSamplingSolver,
    RegretTables,
    best_response,
    best_response_value,
    expected_utilities,
    external_sampling_traverse,
    nash_conv,
    regret_matching,
)
from oef.games import make_game
from oef.policy import Policy

from oracles import brute_force_best_response, brute_force_nash_conv, expected_value, profile_fn
from toy_games import MATCHING_PENNIES, RPS, MatrixTreeGame, OneDecisionGame, kuhn_equilibrium


def random_profile(game, seed):
    from oef.exact import get_tree

    tree = get_tree(game)
    rng = np.random.default_rng(seed)
    pol = Policy(game.max_actions)
    for i, key in enumerate(tree.infoset_keys):
        row = np.zeros(game.max_actions)
        legal = np.flatnonzero(tree.infoset_mask[i])
        row[legal] = rng.dirichlet(np.ones(len(legal)))
        pol[key] = row
    return pol


# ---- regret matching ------------------------------------------------------

@pytest.mark.parametrize("regrets,expected", [
    ([2, 1, 1], [0.5, 0.25, 0.25]),
    ([-1, -3], [0.5, 0.5]),
    ([0, 0, 0], [1 / 3, 1 / 3, 1 / 3]),
    ([3, -2], [1.0, 0.0]),
])
def test_regret_matching_examples(regrets, expected):
    np.testing.assert_allclose(regret_matching(regrets), expected)


def test_regret_matching_empty():
    with pytest.raises(ValueError):
        regret_matching([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=12))
def test_regret_matching_is_distribution(regrets):
    p = regret_matching(regrets)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-9


# ---- vanilla CFR ---------------------------------------------------------

def test_cfr_first_iteration_is_uniform():
    solver = CFRSolver(make_game("kuhn_2"))
    S = solver.current_strategy()
    np.testing.assert_allclose(S[:, :2], 0.5)
    np.testing.assert_allclose(S[:, 2:], 0.0)
    solver.step()
    assert solver.iteration == 1
    assert np.all(solver.cumulative_strategy >= 0)


def test_cfr_kuhn_converges_to_known_value():
    g = make_game("kuhn_2")
    solver = CFRSolver(g).run(10_000)
    res = nash_conv(g, solver.average_policy())
    assert res.nash_conv < 0.01
    assert res.values[0] == pytest.approx(-1 / 18, abs=0.005)


def test_cfr_matching_pennies():
    g = MatrixTreeGame(MATCHING_PENNIES)
    avg = CFRSolver(g).run(1000).average_policy()
    for key in ("p0:0", "p1:0"):
        np.testing.assert_allclose(avg[key], [0.5, 0.5], atol=0.01)


@pytest.mark.parametrize("gid", ["kuhn_2", "kuhn_3", "liars_dice_2", "leduc_2"])
def test_regret_bound_holds(gid):
    solver = CFRSolver(make_game(gid))
    for _ in range(4):
        solver.run(50)
        assert np.all(solver.max_regret() <= solver.regret_bound() + 1e-9)


@pytest.mark.parametrize("gid,iters", [("kuhn_2", 300), ("liars_dice_2", 200), ("leduc_2", 100)])
def test_two_epsilon_equilibrium(gid, iters):
    g = make_game(gid)
    solver = CFRSolver(g).run(iters)
    eps = solver.average_regret_bound()
    assert nash_conv(g, solver.average_policy()).nash_conv <= 2 * eps.max() + 1e-6


# ---- best response / NashConv -----------------------------------------------

@pytest.mark.parametrize("gid", ["kuhn_2", "liars_dice_2"])
def test_best_response_matches_brute_force_uniform(gid):
    g = make_game(gid)
    pol = Policy(g.max_actions)
    for p in range(2):
        assert best_response_value(g, pol, p) == pytest.approx(
            brute_force_best_response(g, pol, p), abs=1e-9)
    assert nash_conv(g, pol).nash_conv == pytest.approx(brute_force_nash_conv(g, pol), abs=1e-9)


@pytest.mark.parametrize("seed", [0, 1])
def test_best_response_matches_brute_force_random(seed):
    g = make_game("kuhn_2")
    pol = random_profile(g, seed)
    assert nash_conv(g, pol).nash_conv == pytest.approx(brute_force_nash_conv(g, pol), abs=1e-9)


def test_uniform_kuhn_nash_conv():
    g = make_game("kuhn_2")
    assert nash_conv(g, Policy(6)).nash_conv == pytest.approx(11 / 12, abs=1e-12)


def test_best_response_dominates_random_strategies():
    g = make_game("kuhn_2")
    fixed = random_profile(g, 7)
    br = best_response_value(g, fixed, 1)
    for seed in range(100):
        mine = random_profile(g, 1000 + seed)
        mixed = Policy(6, {k: (mine[k] if k.startswith("p1") else fixed[k]) for k in fixed.table})
        assert br >= expected_utilities(g, mixed)[1] - 1e-12


def test_best_response_against_dominated_pure_row():
    # player 0 fixed to row 1; player 1 picks the best column
    payoffs = np.array([[[3, 0], [5, 1]], [[-3, 0], [2, 7]]])
    g = MatrixTreeGame(payoffs)
    fixed = Policy(2, {"p0:0": np.array([0.0, 1.0])})
    value, pol = best_response(g, fixed, 1)
    assert value == 7
    np.testing.assert_array_equal(pol["p1:0"], [0, 1])


def test_kuhn_equilibrium_is_exact():
    g = make_game("kuhn_2")
    for alpha in (0.0, 0.2, 1 / 3):
        res = nash_conv(g, kuhn_equilibrium(alpha))
        assert res.nash_conv == pytest.approx(0.0, abs=1e-6)
        assert res.values[0] == pytest.approx(-1 / 18, abs=1e-6)


def test_nash_conv_nonnegative_and_per_player():
    g = make_game("kuhn_3")
    res = nash_conv(g, random_profile(g, 3))
    assert res.nash_conv >= -1e-9
    assert res.per_player.shape == (3,)
    assert res.nash_conv == pytest.approx(res.per_player.sum())


def test_expected_utilities_against_recursion():
    g = make_game("liars_dice_2")
    pol = random_profile(g, 5)
    ref = expected_value(g, g.new_initial_state(), profile_fn(pol))
    np.testing.assert_allclose(expected_utilities(g, pol), ref, atol=1e-12)
    assert abs(expected_utilities(g, pol).sum()) < 1e-9


def test_expected_utilities_symmetric_game():
    g = MatrixTreeGame(np.stack([RPS, -RPS]))
    np.testing.assert_allclose(expected_utilities(g, Policy(3)), [0, 0], atol=1e-12)


def test_missing_infosets_play_uniform():
    g = make_game("kuhn_2")
    partial = Policy(6, {"p0:K:": np.array([0, 1.0])})
    full = Policy(6)
    for key in ["p0:J:", "p0:Q:", "p0:J:pb", "p0:Q:pb", "p0:K:pb", "p1:J:p", "p1:Q:p",
                "p1:K:p", "p1:J:b", "p1:Q:b", "p1:K:b"]:
        full[key] = [0.5, 0.5]
    full["p0:K:"] = [0, 1.0]
    assert nash_conv(g, partial).nash_conv == pytest.approx(nash_conv(g, full).nash_conv)


# ---- external sampling ----------------------------------------------------

def test_external_sampling_single_decision():
    g = OneDecisionGame((1.0, 0.0))
    tables = RegretTables(2)
    v = external_sampling_traverse(g, g.new_initial_state(), 0, tables, np.random.default_rng(0))
    assert v == pytest.approx(0.5)
    np.testing.assert_allclose(tables.regret["p0:0"], [0.5, -0.5])


def test_external_sampling_no_decisions_for_traverser():
    g = OneDecisionGame((1.0, 0.0))
    tables = RegretTables(2)
    rng = np.random.default_rng(1)
    v = external_sampling_traverse(g, g.new_initial_state(), 1, tables, rng)
    assert v in (-1.0, 0.0)
    assert not tables.regret
    assert tables.counters["traverser_nodes"] == 0


def test_external_sampling_branch_structure():
    g = make_game("kuhn_2")
    tables = RegretTables(6)
    rng = np.random.default_rng(0)
    for _ in range(50):
        external_sampling_traverse(g, g.new_initial_state(), 0, tables, rng)
    c = tables.counters
    assert c["traverser_branches"] == 2 * c["traverser_nodes"]
    assert c["opponent_samples"] == c["opponent_nodes"]
    assert c["chance_samples"] == c["chance_nodes"] == 50


def test_external_sampling_unbiased():
    """Mean sampled regret matches the vanilla counterfactual regret (3σ)."""
    g = make_game("kuhn_2")
    vanilla = CFRSolver(g)
    vanilla.step()
    tree = vanilla.tree
    rng = np.random.default_rng(12345)
    n = 10_000
    samples = {k: [] for k in tree.infoset_keys}
    for p in range(2):
        for _ in range(n):
            tables = RegretTables(6)
            external_sampling_traverse(g, g.new_initial_state(), p, tables, rng)
            for k in tree.infoset_keys:
                if tree.infoset_player[tree.infoset_index()[k]] == p:
                    samples[k].append(tables.regret.get(k, np.zeros(6))[:2])
    for idx, key in enumerate(tree.infoset_keys):
        x = np.array(samples[key])
        mean = x.mean(axis=0)
        se = x.std(axis=0, ddof=1) / np.sqrt(n)
        exact = vanilla.cumulative_regret[idx, :2]
        assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12), key


def test_external_sampling_converges():
    g = make_game("kuhn_2")
    solver = ExternalSamplingSolver(g, seed=0).run(4000)
    assert nash_conv(g, solver.average_policy()).nash_conv < 0.1


def test_external_sampling_deterministic():
    g = make_game("kuhn_2")
    a = ExternalSamplingSolver(g, seed=3).run(200).average_policy()
    b = ExternalSamplingSolver(g, seed=3).run(200).average_policy()
    assert a.to_json() == b.to_json()
