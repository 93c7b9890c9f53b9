"""Ground-truth solvers: tabular CFR, external-sampling MCCFR, best response,
NashConv and expected utilities."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from oef.games.base import CHANCE, TERMINAL
from oef.policy import Policy, matrix_to_policy, merge_profile, policy_matrix
from oef.tree import GameTree, compile_tree, edge_probabilities, node_values, reach_probabilities


def regret_matching(regrets) -> np.ndarray:
    """Distribution proportional to positive regret, uniform if none is positive."""
    r = np.asarray(regrets, dtype=float)
    if r.size == 0:
        raise ValueError("regret_matching needs a nonempty vector")
    pos = np.maximum(r, 0.0)
    total = pos.sum()
    if total > 0:
        return pos / total
    return np.full(r.shape, 1.0 / r.size)


def regret_matching_matrix(regrets: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise regret matching restricted to ``mask``."""
    pos = np.where(mask, np.maximum(regrets, 0.0), 0.0)
    total = pos.sum(axis=1, keepdims=True)
    uniform = mask / np.maximum(mask.sum(axis=1, keepdims=True), 1)
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, pos / safe, uniform)


def get_tree(game) -> GameTree:
    """Compiled tree of ``game``, cached on the game object."""
    tree = getattr(game, "_compiled_tree", None)
    if tree is None:
        tree = compile_tree(game)
        game._compiled_tree = tree
    return tree


def _as_tree(game_or_tree) -> GameTree:
    return game_or_tree if isinstance(game_or_tree, GameTree) else get_tree(game_or_tree)


def _others_reach(reach: np.ndarray, nodes: np.ndarray, players: np.ndarray) -> np.ndarray:
    sub = reach[:, nodes].copy()
    sub[players, np.arange(len(nodes))] = 1.0
    return sub.prod(axis=0)


# ---------------------------------------------------------------------------
# Vanilla CFR
# ---------------------------------------------------------------------------

class CFRSolver:
    """Vanilla CFR with simultaneous updates on a compiled tree.

    Every iteration evaluates the current regret-matching profile once and
    then updates the tables of players 0..n-1 in order. The average strategy
    accumulates the current strategy weighted by the owner's reach.

    ``plus=True`` switches to CFR+: cumulative regrets are floored at zero
    after every update and the average uses linear weights t. It is only
    used to produce expert profiles quickly; all guarantees quoted in the
    docs refer to the vanilla variant.
    """

    def __init__(self, game, plus: bool = False):
        self.game = game
        self.plus = plus
        self.tree = _as_tree(game)
        t = self.tree
        self.cumulative_regret = np.zeros((t.num_infosets, t.num_actions))
        self.cumulative_strategy = np.zeros((t.num_infosets, t.num_actions))
        self.iteration = 0
        self._player_edges = np.flatnonzero(np.isnan(t.edge_chance))
        self._decision_nodes = np.flatnonzero(t.node_infoset >= 0)

    def current_strategy(self) -> np.ndarray:
        return regret_matching_matrix(self.cumulative_regret, self.tree.infoset_mask)

    def step(self) -> None:
        t = self.tree
        S = self.current_strategy()
        ep = edge_probabilities(t, S)
        reach = reach_probabilities(t, ep)
        vals = node_values(t, ep)

        pe = self._player_edges
        par = t.edge_parent[pe]
        acting = t.node_player[par]
        info = t.node_infoset[par]
        opp = _others_reach(reach, par, acting)
        inc = opp * (vals[t.edge_child[pe], acting] - vals[par, acting])
        for p in range(t.num_players):
            sel = acting == p
            np.add.at(self.cumulative_regret, (info[sel], t.edge_action[pe][sel]), inc[sel])
        if self.plus:
            np.maximum(self.cumulative_regret, 0.0, out=self.cumulative_regret)

        dn = self._decision_nodes
        dinfo = t.node_infoset[dn]
        own = reach[t.node_player[dn], dn]
        if self.plus:
            own = own * (self.iteration + 1)
        np.add.at(self.cumulative_strategy, dinfo, own[:, None] * S[dinfo])
        self.iteration += 1

    def run(self, iterations: int, callback: Callable[["CFRSolver"], None] | None = None) -> "CFRSolver":
        for _ in range(iterations):
            self.step()
            if callback is not None:
                callback(self)
        return self

    def average_strategy(self) -> np.ndarray:
        mask = self.tree.infoset_mask
        total = self.cumulative_strategy.sum(axis=1, keepdims=True)
        uniform = mask / mask.sum(axis=1, keepdims=True)
        return np.where(total > 0, self.cumulative_strategy / np.where(total > 0, total, 1.0), uniform)

    def average_policy(self) -> Policy:
        return matrix_to_policy(self.tree, self.average_strategy())

    def current_policy(self) -> Policy:
        return matrix_to_policy(self.tree, self.current_strategy())

    def max_regret(self) -> np.ndarray:
        """max_a R^T(I, a) for every infoset."""
        return np.where(self.tree.infoset_mask, self.cumulative_regret, -np.inf).max(axis=1)

    def regret_bound(self) -> np.ndarray:
        """Per-infoset bound Δ_i sqrt(|A(I)|) sqrt(T)."""
        t = self.tree
        delta = np.array([_utility_range(t, p) for p in range(t.num_players)])
        sizes = t.infoset_mask.sum(axis=1)
        return delta[t.infoset_player] * np.sqrt(sizes) * np.sqrt(self.iteration)

    def average_regret_bound(self) -> np.ndarray:
        """Per-player upper bound on R^T_i / T from positive infoset regrets."""
        t = self.tree
        pos = np.maximum(self.max_regret(), 0.0)
        out = np.zeros(t.num_players)
        np.add.at(out, t.infoset_player, pos)
        return out / max(self.iteration, 1)


def _utility_range(tree: GameTree, p: int) -> float:
    term = tree.node_player == TERMINAL
    u = tree.utility[term, p]
    return float(u.max() - u.min())


def solve_cfr(game, iterations: int) -> Policy:
    return CFRSolver(game).run(iterations).average_policy()


def solve_to_nash_conv(game, target: float, *, plus: bool = True, check_every: int = 100,
                       max_iterations: int = 200_000) -> tuple[Policy, float, int]:
    """Run CFR until the average profile has NashConv below ``target``.

    Returns (policy, NashConv, iterations). Raises RuntimeError if
    ``max_iterations`` is reached first.
    """
    solver = CFRSolver(game, plus=plus)
    while solver.iteration < max_iterations:
        solver.run(check_every)
        pol = solver.average_policy()
        nc = nash_conv(game, pol).nash_conv
        if nc < target:
            return pol, nc, solver.iteration
    raise RuntimeError(f"CFR did not reach NashConv {target} in {max_iterations} iterations")


# ---------------------------------------------------------------------------
# External-sampling MCCFR
# ---------------------------------------------------------------------------

@dataclass
class RegretTables:
    """Tabular regrets and strategy sums keyed by infoset string."""

    num_actions: int
    regret: dict[str, np.ndarray] = field(default_factory=dict)
    strategy_sum: dict[str, np.ndarray] = field(default_factory=dict)
    iteration: int = 0
    counters: dict[str, int] = field(default_factory=lambda: {
        "traverser_nodes": 0, "traverser_branches": 0,
        "opponent_nodes": 0, "opponent_samples": 0,
        "chance_nodes": 0, "chance_samples": 0,
    })

    def strategy(self, key: str, legal: list[int]) -> np.ndarray:
        r = self.regret.get(key)
        if r is None:
            return np.full(len(legal), 1.0 / len(legal))
        return regret_matching(r[legal])

    def average_policy(self) -> Policy:
        out = Policy(self.num_actions)
        for key, s in self.strategy_sum.items():
            total = s.sum()
            if total > 0:
                out.table[key] = s / total
        return out


def external_sampling_traverse(game, h, traverser: int, tables: RegretTables,
                               rng: np.random.Generator,
                               on_transition: Callable | None = None) -> float:
    """One external-sampling pass; returns the sampled value for ``traverser``.

    Traverser nodes branch over every legal action and store
    ``u(a) - u_sigma`` as regret; opponent and chance nodes sample a single
    action. ``on_transition(h, a, h_next)`` is called for every step taken.
    """
    p = game.current_player(h)
    if p == TERMINAL:
        return float(game.returns(h)[traverser])
    c = tables.counters
    if p == CHANCE:
        outcomes = game.chance_distribution(h)
        probs = np.array([q for _, q in outcomes])
        a = outcomes[rng.choice(len(outcomes), p=probs / probs.sum())][0]
        c["chance_nodes"] += 1
        c["chance_samples"] += 1
        nxt = game.apply_action(h, a)
        if on_transition is not None:
            on_transition(h, a, nxt)
        return external_sampling_traverse(game, nxt, traverser, tables, rng, on_transition)

    key = game.key_string(h, p)
    legal = game.legal_actions(h)
    sigma = tables.strategy(key, legal)
    if p == traverser:
        c["traverser_nodes"] += 1
        u = np.zeros(len(legal))
        for k, a in enumerate(legal):
            c["traverser_branches"] += 1
            nxt = game.apply_action(h, a)
            if on_transition is not None:
                on_transition(h, a, nxt)
            u[k] = external_sampling_traverse(game, nxt, traverser, tables, rng, on_transition)
        u_sigma = float(sigma @ u)
        r = tables.regret.setdefault(key, np.zeros(tables.num_actions))
        r[legal] += u - u_sigma
        return u_sigma

    c["opponent_nodes"] += 1
    c["opponent_samples"] += 1
    s = tables.strategy_sum.setdefault(key, np.zeros(tables.num_actions))
    s[legal] += sigma
    a = legal[rng.choice(len(legal), p=sigma)]
    nxt = game.apply_action(h, a)
    if on_transition is not None:
        on_transition(h, a, nxt)
    return external_sampling_traverse(game, nxt, traverser, tables, rng, on_transition)


class ExternalSamplingSolver:
    """Tabular external-sampling MCCFR with alternating traversers."""

    def __init__(self, game, seed: int = 0, on_transition: Callable | None = None):
        self.game = game
        self.rng = np.random.default_rng(seed)
        self.tables = RegretTables(game.max_actions)
        self.on_transition = on_transition

    def step(self) -> None:
        for p in range(self.game.num_players):
            external_sampling_traverse(self.game, self.game.new_initial_state(), p,
                                       self.tables, self.rng, self.on_transition)
        self.tables.iteration += 1

    def run(self, iterations: int) -> "ExternalSamplingSolver":
        for _ in range(iterations):
            self.step()
        return self

    def average_policy(self) -> Policy:
        return self.tables.average_policy()


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def expected_utilities(game, profile: Policy | Iterable[Policy]) -> np.ndarray:
    """u_i(profile) for every player by a full tree walk."""
    tree = _as_tree(game)
    ep = edge_probabilities(tree, policy_matrix(tree, profile))
    return node_values(tree, ep)[0].copy()


def best_response(game, profile: Policy | Iterable[Policy], player: int) -> tuple[float, Policy]:
    """Exact best response of ``player`` against the rest of ``profile``.

    Infosets are decided from the deepest own-action count upwards, so each
    decision sees already-optimised continuations. Returns the value and the
    deterministic response as a policy over ``player``'s infosets.
    """
    tree = _as_tree(game)
    S = policy_matrix(tree, profile)
    return best_response_matrix(tree, S, player)


def best_response_matrix(tree: GameTree, S: np.ndarray, player: int) -> tuple[float, Policy]:
    S = S.copy()
    mine = np.flatnonzero(tree.infoset_player == player)
    ep = edge_probabilities(tree, S)
    reach = reach_probabilities(tree, ep)
    pe = np.flatnonzero(np.isnan(tree.edge_chance))
    par = tree.edge_parent[pe]
    mine_edges = pe[tree.node_player[par] == player]
    mpar = tree.edge_parent[mine_edges]
    opp = _others_reach(reach, mpar, np.full(len(mpar), player))
    e_info = tree.node_infoset[mpar]
    e_act = tree.edge_action[mine_edges]
    e_depth = tree.infoset_own_depth[e_info]
    depths = tree.infoset_own_depth[mine]
    for d in sorted(set(depths.tolist()), reverse=True):
        vals = node_values(tree, edge_probabilities(tree, S))
        sel = e_depth == d
        q = np.zeros((tree.num_infosets, tree.num_actions))
        np.add.at(q, (e_info[sel], e_act[sel]), opp[sel] * vals[tree.edge_child[mine_edges[sel]], player])
        for I in mine[depths == d]:
            legal = np.flatnonzero(tree.infoset_mask[I])
            best = legal[int(np.argmax(q[I, legal]))]
            S[I] = 0.0
            S[I, best] = 1.0
    value = node_values(tree, edge_probabilities(tree, S))[0, player]
    return float(value), matrix_to_policy(tree, S, players=[player])


def best_response_value(game, profile: Policy | Iterable[Policy], player: int) -> float:
    return best_response(game, profile, player)[0]


@dataclass
class NashConvResult:
    nash_conv: float
    per_player: np.ndarray
    values: np.ndarray
    best_response_values: np.ndarray

    def __float__(self) -> float:
        return self.nash_conv


def nash_conv(game, profile: Policy | Iterable[Policy]) -> NashConvResult:
    """Σ_i [BR value_i − u_i(profile)], with |x| <= 1e-9 negatives reported as 0."""
    tree = _as_tree(game)
    joint = merge_profile(profile)
    S = policy_matrix(tree, joint)
    values = node_values(tree, edge_probabilities(tree, S))[0].copy()
    br = np.array([best_response_matrix(tree, S, p)[0] for p in range(tree.num_players)])
    per = br - values
    total = float(per.sum())
    if -1e-9 <= total < 0:
        total = 0.0
    per = np.where((per < 0) & (per >= -1e-9), 0.0, per)
    return NashConvResult(total, per, values, br)
