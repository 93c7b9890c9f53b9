"""Policy-space response oracles on a (learned) game model.

Policies live as strategy matrices over the compiled model tree, so every
meta-game entry is one exact tree evaluation. The default best-response
oracle is exact; tabular Q-learning over sampled model episodes is available
as an alternative.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from oef.approx import q_learning
from oef.envmodel import DecodeFaultError
from oef.exact import best_response_matrix, nash_conv
from oef.meta import meta_solve
from oef.policy import Policy, matrix_to_policy
from oef.tree import GameTree, compile_tree, edge_probabilities, node_values, reach_probabilities


@dataclass
class PSROConfig:
    iterations: int = 15
    meta_solver: str = "auto"
    oracle: str = "exact"
    fault_cap: float = 0.05
    max_nodes: int = 2_000_000
    q_episodes: int = 3000
    q_learning_rate: float = 0.1
    q_epsilon: float = 0.2

    def resolved_meta_solver(self, game) -> str:
        if self.meta_solver != "auto":
            return self.meta_solver
        return "matrix_nash_2p0s" if game.num_players == 2 and game.zero_sum else "alpha_rank"


@dataclass
class MetaGame:
    """Per-player policy lists and the payoff tensor over joint choices.

    ``payoffs[i][k_1, ..., k_n]`` is NaN until that profile is evaluated.
    """

    policies: list[list[np.ndarray]]
    payoffs: np.ndarray

    @property
    def filled(self) -> np.ndarray:
        return np.all(np.isfinite(self.payoffs), axis=0)

    def shape(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.policies)


@dataclass
class PSROResult:
    profile: Policy
    meta_strategy: list[np.ndarray]
    meta_game: MetaGame
    history: list[dict] = field(default_factory=list)
    model_stats: dict = field(default_factory=dict)


def compile_model_tree(model_game, fault_cap: float, max_nodes: int) -> GameTree:
    """Compile the model tree and enforce the decode-fault cap."""
    tree = compile_tree(model_game, max_nodes=max_nodes)
    stats = getattr(model_game, "stats", None)
    if stats is not None and stats.fault_rate > fault_cap:
        raise DecodeFaultError(f"decode-fault: rate {stats.fault_rate:.3%} exceeds cap {fault_cap:.0%} "
                               f"({stats.to_dict()})")
    return tree


def _uniform_matrix(tree: GameTree, player: int) -> np.ndarray:
    S = np.zeros((tree.num_infosets, tree.num_actions))
    rows = tree.infoset_player == player
    m = tree.infoset_mask[rows]
    S[rows] = m / m.sum(axis=1, keepdims=True)
    return S


def _representative_nodes(tree: GameTree) -> np.ndarray:
    rep = np.full(tree.num_infosets, -1, dtype=np.int64)
    dec = np.flatnonzero(tree.node_infoset >= 0)
    if len(dec) == 0:
        return rep
    # first node of every infoset; all share the owner's reach under perfect recall
    order = np.argsort(tree.node_infoset[dec], kind="stable")
    infos = tree.node_infoset[dec][order]
    first = np.r_[True, infos[1:] != infos[:-1]]
    rep[infos[first]] = dec[order][first]
    return rep


def profile_values(tree: GameTree, matrices: list[np.ndarray]) -> np.ndarray:
    S = np.sum(matrices, axis=0)
    return node_values(tree, edge_probabilities(tree, S))[0].copy()


def flatten_mixture(tree: GameTree, player: int, policies: list[np.ndarray], weights: np.ndarray,
                    rep: np.ndarray | None = None) -> np.ndarray:
    """Behavioural strategy equivalent to mixing ``policies`` with ``weights``.

    Each policy's action probabilities at an infoset are weighted by the
    mixture weight times that policy's own probability of reaching it.
    """
    rep = _representative_nodes(tree) if rep is None else rep
    rows = np.flatnonzero(tree.infoset_player == player)
    num = np.zeros((tree.num_infosets, tree.num_actions))
    den = np.zeros(tree.num_infosets)
    plain = np.zeros((tree.num_infosets, tree.num_actions))
    for S, w in zip(policies, weights):
        if w <= 0:
            continue
        reach = reach_probabilities(tree, edge_probabilities(tree, S))[player, rep[rows]]
        num[rows] += (w * reach)[:, None] * S[rows]
        den[rows] += w * reach
        plain[rows] += w * S[rows]
    out = np.zeros((tree.num_infosets, tree.num_actions))
    ok = den[rows] > 0
    out[rows[ok]] = num[rows[ok]] / den[rows[ok], None]
    out[rows[~ok]] = plain[rows[~ok]] / np.maximum(plain[rows[~ok]].sum(axis=1, keepdims=True), 1e-300)
    return out


def _fill(tree: GameTree, mg: MetaGame) -> None:
    n = len(mg.policies)
    shape = mg.shape()
    if mg.payoffs.shape[1:] != shape:
        grown = np.full((n, *shape), np.nan)
        grown[(slice(None), *(slice(0, k) for k in mg.payoffs.shape[1:]))] = mg.payoffs
        mg.payoffs = grown
    for idx in itertools.product(*(range(k) for k in shape)):
        if np.isfinite(mg.payoffs[(slice(None), *idx)]).all():
            continue
        mats = [mg.policies[i][k] for i, k in enumerate(idx)]
        mg.payoffs[(slice(None), *idx)] = profile_values(tree, mats)


def best_response_on_model(model_game, tree: GameTree, opponents: list[np.ndarray], player: int,
                           oracle: str = "exact", rng: np.random.Generator | None = None,
                           cfg: PSROConfig | None = None,
                           opponent_pool: list[tuple[list[np.ndarray], np.ndarray]] | None = None
                           ) -> tuple[np.ndarray, float]:
    """Best-response matrix of ``player`` and its value on the model tree.

    ``opponents`` holds one (flattened) strategy matrix per opponent. The
    Q-learning oracle samples one policy per opponent from ``opponent_pool``
    (policies, meta weights) at the start of every episode.
    """
    cfg = cfg or PSROConfig()
    if oracle == "exact":
        S = np.sum(opponents, axis=0)
        value, pol = best_response_matrix(tree, S, player)
        M = np.zeros_like(S)
        idx = tree.infoset_index()
        rows = tree.infoset_player == player
        for key, row in pol.table.items():
            M[idx[key]] = row
        M[~rows] = 0.0
        return M, value
    if oracle == "q_learning":
        return q_learning_response(model_game, tree, player, opponents, rng or np.random.default_rng(0),
                                   cfg, opponent_pool)
    raise ValueError(f"unknown best-response oracle {oracle!r}")


def q_learning_response(model_game, tree: GameTree, player: int, opponents: list[np.ndarray],
                        rng: np.random.Generator, cfg: PSROConfig,
                        opponent_pool=None) -> tuple[np.ndarray, float]:
    """Tabular Q-learning on sampled model episodes against fixed opponents.

    With an ``opponent_pool`` one policy per opponent is drawn from its
    meta-strategy at the start of every episode.
    """
    idx = tree.infoset_index()
    current = {"S": np.sum(opponents, axis=0)}

    def resample():
        current["S"] = np.sum([pols[rng.choice(len(pols), p=w)] for pols, w in opponent_pool], axis=0)

    def act(h, p, legal):
        return current["S"][idx[model_game.key_string(h, p)]][legal]

    Q = q_learning(model_game, player, act, rng, cfg.q_episodes, cfg.q_learning_rate, cfg.q_epsilon,
                   on_episode=resample if opponent_pool else None)
    M = _uniform_matrix(tree, player)
    for key, q in Q.items():
        i = idx.get(key)
        if i is None:
            continue
        legal = np.flatnonzero(tree.infoset_mask[i])
        M[i] = 0.0
        M[i, legal[int(np.argmax(q[legal]))]] = 1.0
    value = profile_values(tree, [M] + list(opponents))[player]
    return M, float(value)


def oef_psro(model_game, iterations: int | None = None, meta_solver: str | None = None,
             br_oracle: str | None = None, seed: int = 0, cfg: PSROConfig | None = None,
             evaluate_game=None) -> PSROResult:
    """PSRO where every utility and best response is computed on ``model_game``.

    Policy sets start from the uniform policy. Each iteration adds one best
    response per player against the opponents' current meta-strategy, fills
    the new meta-game entries and re-solves the meta-game. The output
    flattens each player's final meta-mixture into one behavioural policy.
    With ``evaluate_game`` the NashConv of that policy in the true game is
    recorded after every iteration.
    """
    cfg = cfg or PSROConfig()
    iterations = cfg.iterations if iterations is None else iterations
    solver = meta_solver or cfg.resolved_meta_solver(model_game)
    oracle = br_oracle or cfg.oracle
    rng = np.random.default_rng(seed)
    tree = compile_model_tree(model_game, cfg.fault_cap, cfg.max_nodes)
    n = tree.num_players
    rep = _representative_nodes(tree)
    mg = MetaGame([[_uniform_matrix(tree, i)] for i in range(n)], np.full((n,) + (1,) * n, np.nan))
    _fill(tree, mg)
    sigma = meta_solve(mg.payoffs, solver)
    history = [{"iteration": 0, "meta_strategy": [s.tolist() for s in sigma]}]

    def flat(i, weights):
        return flatten_mixture(tree, i, mg.policies[i], weights, rep)

    def record(it):
        entry = {"iteration": it, "meta_strategy": [s.tolist() for s in sigma],
                 "meta_shape": list(mg.shape())}
        if evaluate_game is not None:
            pol = matrix_to_policy(tree, np.sum([flat(i, sigma[i]) for i in range(n)], axis=0))
            entry["nash_conv"] = nash_conv(evaluate_game, pol).nash_conv
        history.append(entry)

    for it in range(1, iterations + 1):
        flats = [flat(i, sigma[i]) for i in range(n)]
        new = []
        for i in range(n):
            opps = [flats[j] for j in range(n) if j != i]
            pool = [(mg.policies[j], sigma[j]) for j in range(n) if j != i]
            M, _ = best_response_on_model(model_game, tree, opps, i, oracle, rng, cfg, pool)
            new.append(M)
        for i in range(n):
            mg.policies[i].append(new[i])
        _fill(tree, mg)
        sigma = meta_solve(mg.payoffs, solver)
        record(it)

    joint = np.sum([flat(i, sigma[i]) for i in range(n)], axis=0)
    stats = model_game.stats.to_dict() if hasattr(model_game, "stats") else {}
    return PSROResult(matrix_to_policy(tree, joint), sigma, mg, history, stats)
