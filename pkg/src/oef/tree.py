"""Flattened game trees for vectorised exact evaluation.

:func:`compile_tree` walks any object with the game interface (a true
:class:`~oef.games.Game` or a learned :class:`~oef.envmodel.ModelGame`) and
stores it breadth-first, so every level of edges can be processed with a
single numpy call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from oef.games.base import CHANCE, TERMINAL


class TreeBudgetError(RuntimeError):
    def __init__(self, msg: str = "model-blowup"):
        super().__init__(msg)


@dataclass
class GameTree:
    num_players: int
    num_actions: int
    node_player: np.ndarray      # (N,) player, CHANCE or TERMINAL
    node_depth: np.ndarray       # (N,)
    node_infoset: np.ndarray     # (N,) -1 for non-decision nodes
    utility: np.ndarray          # (N, n) zero except at terminals
    own_count: np.ndarray        # (n, N) actions taken by each player before the node
    edge_parent: np.ndarray      # (E,)
    edge_child: np.ndarray       # (E,)
    edge_action: np.ndarray      # (E,)
    edge_chance: np.ndarray      # (E,) chance probability, nan for player edges
    levels: list[np.ndarray]     # edge ids grouped by parent depth
    infoset_keys: list[str]
    infoset_player: np.ndarray   # (I,)
    infoset_mask: np.ndarray     # (I, A) bool
    infoset_own_depth: np.ndarray  # (I,)

    @property
    def num_nodes(self) -> int:
        return len(self.node_player)

    @property
    def num_infosets(self) -> int:
        return len(self.infoset_keys)

    def infoset_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.infoset_keys)}


def compile_tree(game, max_nodes: int = 2_000_000) -> GameTree:
    """Enumerate every history of ``game`` breadth-first.

    Raises :class:`TreeBudgetError` when more than ``max_nodes`` nodes would
    be created.
    """
    n = game.num_players
    A = game.max_actions
    frontier = [game.new_initial_state()]
    players, depths, infosets, utils = [], [], [], []
    e_parent, e_child, e_action, e_chance = [], [], [], []
    own = [[0] for _ in range(n)]
    levels = []
    key_index: dict[str, int] = {}
    keys: list[str] = []
    key_player: list[int] = []
    key_masks: list[np.ndarray] = []
    key_depth: list[int] = []
    depth = 0
    next_id = 1
    while frontier:
        level_edges = []
        new_frontier = []
        base = len(players)
        for offset, h in enumerate(frontier):
            node = base + offset
            p = game.current_player(h)
            players.append(p)
            depths.append(depth)
            u = np.zeros(n)
            info = -1
            if p == TERMINAL:
                u = np.asarray(game.returns(h), dtype=float)
                utils.append(u)
                infosets.append(info)
                continue
            utils.append(u)
            legal = game.legal_actions(h)
            if p == CHANCE:
                outcomes = game.chance_distribution(h)
            else:
                outcomes = [(a, np.nan) for a in legal]
                key = game.key_string(h, p)
                info = key_index.get(key)
                if info is None:
                    info = len(keys)
                    key_index[key] = info
                    keys.append(key)
                    key_player.append(p)
                    m = np.zeros(A, dtype=bool)
                    m[legal] = True
                    key_masks.append(m)
                    key_depth.append(own[p][node])
                else:
                    key_depth[info] = max(key_depth[info], own[p][node])
            infosets.append(info)
            for a, prob in outcomes:
                child = next_id
                next_id += 1
                if next_id > max_nodes:
                    raise TreeBudgetError(f"model-blowup: more than {max_nodes} nodes")
                level_edges.append(len(e_parent))
                e_parent.append(node)
                e_child.append(child)
                e_action.append(a)
                e_chance.append(prob)
                for i in range(n):
                    own[i].append(own[i][node] + (1 if p == i else 0))
                new_frontier.append(game.apply_action(h, a))
        if level_edges:
            levels.append(np.asarray(level_edges, dtype=np.int64))
        frontier = new_frontier
        depth += 1

    return GameTree(
        num_players=n,
        num_actions=A,
        node_player=np.asarray(players, dtype=np.int64),
        node_depth=np.asarray(depths, dtype=np.int64),
        node_infoset=np.asarray(infosets, dtype=np.int64),
        utility=np.asarray(utils, dtype=float).reshape(-1, n),
        own_count=np.asarray(own, dtype=np.int64),
        edge_parent=np.asarray(e_parent, dtype=np.int64),
        edge_child=np.asarray(e_child, dtype=np.int64),
        edge_action=np.asarray(e_action, dtype=np.int64),
        edge_chance=np.asarray(e_chance, dtype=float),
        levels=levels,
        infoset_keys=keys,
        infoset_player=np.asarray(key_player, dtype=np.int64),
        infoset_mask=np.asarray(key_masks, dtype=bool).reshape(-1, A),
        infoset_own_depth=np.asarray(key_depth, dtype=np.int64),
    )


def edge_probabilities(tree: GameTree, strategy: np.ndarray) -> np.ndarray:
    """Probability of every edge under an (I, A) strategy matrix."""
    probs = tree.edge_chance.copy()
    player_edges = np.isnan(probs)
    info = tree.node_infoset[tree.edge_parent[player_edges]]
    probs[player_edges] = strategy[info, tree.edge_action[player_edges]]
    return probs


def reach_probabilities(tree: GameTree, eprob: np.ndarray) -> np.ndarray:
    """Per-contributor reach, shape (n + 1, N); the last row is chance."""
    n = tree.num_players
    reach = np.ones((n + 1, tree.num_nodes))
    actor = tree.node_player[tree.edge_parent]
    row = np.where(actor == CHANCE, n, actor)
    for level in tree.levels:
        par = tree.edge_parent[level]
        ch = tree.edge_child[level]
        reach[:, ch] = reach[:, par]
        reach[row[level], ch] *= eprob[level]
    return reach


def node_values(tree: GameTree, eprob: np.ndarray) -> np.ndarray:
    """Expected utility of every node for every player, shape (N, n)."""
    values = tree.utility.copy()
    for level in reversed(tree.levels):
        par = tree.edge_parent[level]
        contrib = values[tree.edge_child[level]] * eprob[level][:, None]
        np.add.at(values, par, contrib)
    return values
