"""Behaviour cloning: one softmax policy net per player, fitted to the
(infoset, action) pairs of a dataset."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from oef.dataset import Dataset
from oef.games.base import Game
from oef.nn import Head, Net, TrainConfig, masked_softmax, train
from oef.policy import Policy


@dataclass
class BCModel:
    game_id: str
    num_players: int
    infoset_dim: int
    num_actions: int
    nets: list[Net | None]
    warnings: list[str] = field(default_factory=list)

    def action_probs(self, player: int, tensors: np.ndarray, masks: np.ndarray) -> np.ndarray:
        tensors = np.atleast_2d(tensors)
        masks = np.atleast_2d(masks).astype(bool)
        net = self.nets[player]
        if net is None:
            return masks / masks.sum(axis=1, keepdims=True)
        return masked_softmax(net.logits(tensors), masks)

    def to_dict(self) -> dict:
        return {
            "format": "oef-bc",
            "game_id": self.game_id,
            "num_players": self.num_players,
            "infoset_dim": self.infoset_dim,
            "num_actions": self.num_actions,
            "nets": [None if n is None else n.to_dict() for n in self.nets],
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BCModel":
        if d.get("format") != "oef-bc":
            raise ValueError("not a behaviour-cloning model file")
        nets = [None if n is None else Net.from_dict(n) for n in d["nets"]]
        return cls(d["game_id"], d["num_players"], d["infoset_dim"], d["num_actions"], nets,
                   list(d.get("warnings", [])))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BCModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def player_pairs(ds: Dataset, game: Game, player: int):
    """Infoset tensors, one-hot actions and legal masks of ``player``'s records."""
    d = game.infoset_dim
    rows = [r for r in ds.records if r.actor == player]
    if not rows:
        return None
    X = np.array([r.state[player * d:(player + 1) * d] for r in rows], dtype=float)
    Y = np.zeros((len(rows), game.max_actions))
    Y[np.arange(len(rows)), [r.action for r in rows]] = 1.0
    M = np.array([r.legal_mask for r in rows], dtype=bool)
    return X, Y, M


def train_bc(ds: Dataset, game: Game, cfg: TrainConfig) -> BCModel:
    """Fit one net per player with cross-entropy on observed actions.

    Only the acting player's infoset tensor and the action are used; chance
    records are skipped. A player without records keeps a uniform policy.
    """
    nets: list[Net | None] = []
    notes: list[str] = []
    for i in range(game.num_players):
        data = player_pairs(ds, game, i)
        if data is None:
            msg = f"player {i} has no records; using a uniform policy"
            warnings.warn(msg, stacklevel=2)
            notes.append(msg)
            nets.append(None)
            continue
        X, Y, M = data
        net = Net(game.infoset_dim, [cfg.hidden_size], Head("policy", game.max_actions, "softmax"),
                  seed=cfg.seed * 1000 + i)
        player_cfg = TrainConfig(cfg.batch_size, cfg.epochs, cfg.learning_rate,
                                 cfg.seed * 1000 + i, cfg.hidden_size)
        train(net, X, {"policy": Y}, player_cfg, legal_mask={"policy": M})
        nets.append(net)
    return BCModel(game.game_id, game.num_players, game.infoset_dim, game.max_actions, nets, notes)


def bc_policy(model: BCModel, game: Game) -> Policy:
    """Tabulate the masked net outputs over every reachable infoset."""
    table = game.reachable_infosets()
    pol = Policy(game.max_actions)
    for i in range(game.num_players):
        keys = [k for k, (p, _, _) in table.items() if p == i]
        if not keys:
            continue
        X = np.array([table[k][1] for k in keys], dtype=float)
        M = np.array([table[k][2] for k in keys], dtype=bool)
        probs = model.action_probs(i, X, M)
        for k, row in zip(keys, probs):
            pol[k] = row
    return pol
