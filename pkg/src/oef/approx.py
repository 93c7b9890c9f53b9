"""Sampling-based tools for games too large to walk: lazily evaluated
policies, tabular Q-learning best responses and approximate NashConv."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from oef.games.base import CHANCE, TERMINAL
from oef.policy import Policy

RowFn = Callable[[int, np.ndarray, np.ndarray], np.ndarray]


class LazyPolicy(Policy):
    """Policy whose rows come from ``fn(player, infoset tensor, legal mask)``
    the first time an infoset is looked up through :func:`probs_at`."""

    def __init__(self, num_actions: int, fn: RowFn, owner: int | str = "joint"):
        super().__init__(num_actions, {}, owner)
        self.fn = fn

    def lookup(self, game, h, p: int, legal: list[int]) -> np.ndarray:
        key = game.key_string(h, p)
        if key not in self.table:
            mask = np.zeros(self.num_actions, dtype=np.uint8)
            mask[legal] = 1
            self.table[key] = np.asarray(self.fn(p, np.asarray(game.infoset_tensor(h, p)), mask), dtype=float)
        return self.action_probs(key, legal)


def probs_at(policy: Policy, game, h, p: int, legal: list[int]) -> np.ndarray:
    """Distribution of ``policy`` over ``legal`` at history ``h``."""
    lookup = getattr(policy, "lookup", None)
    if lookup is not None:
        return lookup(game, h, p, legal)
    return policy.action_probs(game.key_string(h, p), legal)


def _sample(rng, legal, probs):
    return legal[rng.choice(len(legal), p=probs / probs.sum())]


def _chance(game, h, rng):
    dist = game.chance_distribution(h)
    return _sample(rng, [a for a, _ in dist], np.array([q for _, q in dist]))


def q_learning(game, player: int, act: Callable[[object, int, list[int]], np.ndarray],
               rng: np.random.Generator, episodes: int, learning_rate: float = 0.1,
               epsilon: float = 0.2, on_episode: Callable[[], None] | None = None) -> dict[str, np.ndarray]:
    """Tabular Q-learning of ``player`` against fixed behaviour ``act(h, p, legal)``.

    Rewards arrive only at terminals, so each update bootstraps from the next
    own decision's greedy value or from the final return.
    """
    Q: dict[str, np.ndarray] = {}
    for _ in range(episodes):
        if on_episode is not None:
            on_episode()
        h = game.new_initial_state()
        prev = None
        while True:
            p = game.current_player(h)
            if p == TERMINAL:
                if prev is not None:
                    q = Q[prev[0]]
                    q[prev[1]] += learning_rate * (float(game.returns(h)[player]) - q[prev[1]])
                break
            legal = game.legal_actions(h)
            if p == CHANCE:
                a = _chance(game, h, rng)
            elif p == player:
                key = game.key_string(h, p)
                q = Q.setdefault(key, np.zeros(game.max_actions))
                if prev is not None:
                    pq = Q[prev[0]]
                    pq[prev[1]] += learning_rate * (q[legal].max() - pq[prev[1]])
                if rng.random() < epsilon:
                    a = legal[rng.integers(len(legal))]
                else:
                    a = legal[int(np.argmax(q[legal]))]
                prev = (key, a)
            else:
                a = _sample(rng, legal, act(h, p, legal))
            h = game.apply_action(h, a)
    return Q


def rollout_value(game, player: int, act: Callable[[object, int, list[int]], np.ndarray],
                  rng: np.random.Generator, episodes: int) -> float:
    """Monte Carlo estimate of ``player``'s expected return when everyone
    (including ``player``) follows ``act``."""
    total = 0.0
    for _ in range(episodes):
        h = game.new_initial_state()
        while not game.is_terminal(h):
            p = game.current_player(h)
            if p == CHANCE:
                a = _chance(game, h, rng)
            else:
                legal = game.legal_actions(h)
                a = _sample(rng, legal, act(h, p, legal))
            h = game.apply_action(h, a)
        total += float(game.returns(h)[player])
    return total / episodes


@dataclass
class ApproxNashConv:
    nash_conv: float
    per_player: list[float]
    per_seed: list[list[float]] = field(default_factory=list)
    approximate: bool = True

    def __float__(self) -> float:
        return self.nash_conv


def approx_nash_conv(game, profile: Policy, *, seeds: Iterable[int] = (0, 1, 2), episodes: int = 20_000,
                     eval_episodes: int = 5_000, learning_rate: float = 0.1,
                     epsilon: float = 0.2) -> ApproxNashConv:
    """NashConv estimate from Q-learning best responses against ``profile``.

    For each player and seed a tabular Q-learner trains against the fixed
    profile; the greedy learner and the profile itself are then scored on the
    same number of sampled episodes. Each player's gain is the maximum over
    seeds. Up to sampling noise the estimate is a lower bound: a learner that
    misses the best response understates the gain. Results are therefore
    flagged approximate.
    """
    seeds = list(seeds)
    gains, table = [], []
    for i in range(game.num_players):
        row = []
        for s in seeds:
            rng = np.random.default_rng([s, i])

            def fixed(h, p, legal):
                return probs_at(profile, game, h, p, legal)

            Q = q_learning(game, i, fixed, rng, episodes, learning_rate, epsilon)

            def greedy(h, p, legal, Q=Q):
                if p != i:
                    return fixed(h, p, legal)
                q = Q.get(game.key_string(h, p))
                out = np.zeros(len(legal))
                if q is None:
                    out[:] = 1.0 / len(legal)
                else:
                    out[int(np.argmax(q[legal]))] = 1.0
                return out

            v_br = rollout_value(game, i, greedy, np.random.default_rng([s, i, 1]), eval_episodes)
            v_pi = rollout_value(game, i, fixed, np.random.default_rng([s, i, 1]), eval_episodes)
            row.append(v_br - v_pi)
        table.append(row)
        gains.append(max(row))
    return ApproxNashConv(float(sum(gains)), gains, table)
