"""Behavioural policies keyed by information-set strings."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from oef.tree import GameTree


@dataclass
class Policy:
    """Map from infoset key to a distribution over the dense action space.

    Entries outside the legal set are ignored on lookup; infosets without an
    entry are played uniformly.
    """

    num_actions: int
    table: dict[str, np.ndarray] = field(default_factory=dict)
    owner: int | str = "joint"

    def action_probs(self, key: str, legal: Iterable[int]) -> np.ndarray:
        """Distribution over ``legal`` (in that order)."""
        legal = list(legal)
        row = self.table.get(key)
        if row is None:
            return np.full(len(legal), 1.0 / len(legal))
        p = np.asarray(row, dtype=float)[legal]
        total = p.sum()
        if total <= 0:
            return np.full(len(legal), 1.0 / len(legal))
        return p / total

    def __setitem__(self, key: str, probs) -> None:
        self.table[key] = np.asarray(probs, dtype=float)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.table[key]

    def __contains__(self, key: str) -> bool:
        return key in self.table

    def __len__(self) -> int:
        return len(self.table)

    def copy(self) -> "Policy":
        return Policy(self.num_actions, {k: v.copy() for k, v in self.table.items()}, self.owner)

    def validate(self, atol: float = 1e-9) -> None:
        for key, row in self.table.items():
            if np.any(row < -atol) or abs(row.sum() - 1.0) > atol:
                raise ValueError(f"invalid distribution at {key!r}: {row}")

    def to_json(self) -> str:
        return json.dumps({
            "num_actions": self.num_actions,
            "owner": self.owner,
            "table": {k: [float(x) for x in v] for k, v in sorted(self.table.items())},
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        d = json.loads(text)
        return cls(d["num_actions"], {k: np.asarray(v, dtype=float) for k, v in d["table"].items()},
                   d.get("owner", "joint"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Policy":
        return cls.from_json(Path(path).read_text())


def uniform_policy(num_actions: int) -> Policy:
    return Policy(num_actions)


def merge_profile(profile: Policy | Iterable[Policy]) -> Policy:
    """Collapse a list of per-player policies into one joint policy."""
    if isinstance(profile, Policy):
        return profile
    profile = list(profile)
    out = Policy(profile[0].num_actions)
    for pol in profile:
        out.table.update(pol.table)
    return out


def policy_matrix(tree: GameTree, profile: Policy | Iterable[Policy]) -> np.ndarray:
    """(I, A) matrix of the profile's action probabilities at every tree infoset."""
    joint = merge_profile(profile)
    S = np.zeros((tree.num_infosets, tree.num_actions))
    for i, key in enumerate(tree.infoset_keys):
        legal = np.flatnonzero(tree.infoset_mask[i])
        S[i, legal] = joint.action_probs(key, legal)
    return S


def matrix_to_policy(tree: GameTree, S: np.ndarray, players: Iterable[int] | None = None) -> Policy:
    keep = None if players is None else set(players)
    out = Policy(tree.num_actions)
    for i, key in enumerate(tree.infoset_keys):
        if keep is None or tree.infoset_player[i] in keep:
            out.table[key] = S[i].copy()
    return out


def tabulate(keys_and_probs: Mapping[str, np.ndarray], num_actions: int) -> Policy:
    return Policy(num_actions, {k: np.asarray(v, dtype=float) for k, v in keys_and_probs.items()})
