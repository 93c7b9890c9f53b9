"""Common extensive-form game interface.

Every game keeps its rules in a small immutable internal state that is carried
along inside :class:`History`, so applying an action never replays the whole
action sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

CHANCE = -1
TERMINAL = -2


class GameError(Exception):
    """Base class for rule violations raised by the game engines."""


class TerminalError(GameError):
    def __init__(self, msg: str = "terminal"):
        super().__init__(msg)


class IllegalActionError(GameError):
    def __init__(self, msg: str = "illegal-action"):
        super().__init__(msg)


class NotChanceNodeError(GameError):
    def __init__(self, msg: str = "not-chance-node"):
        super().__init__(msg)


class NotTerminalError(GameError):
    def __init__(self, msg: str = "not-terminal"):
        super().__init__(msg)


class UndecodableError(GameError):
    def __init__(self, msg: str = "undecodable"):
        super().__init__(msg)


@dataclass(frozen=True)
class History:
    """An action sequence from the root of ``game``.

    ``_st`` holds the rule state derived from ``actions``; it is excluded from
    equality and hashing.
    """

    game: "Game" = field(repr=False, compare=False)
    actions: tuple[int, ...]
    _st: Any = field(repr=False, compare=False, hash=False, default=None)

    def __len__(self) -> int:
        return len(self.actions)

    def prefix(self, k: int) -> "History":
        return self.game.replay(self.actions[:k])


@dataclass(frozen=True)
class InfoSetKey:
    player: int
    key: str
    tensor: np.ndarray = field(compare=False, repr=False)

    def __hash__(self) -> int:
        return hash((self.player, self.key))


@dataclass(frozen=True)
class StateTuple:
    """Tuple of every player's information set plus the acting player.

    ``current_player`` is a player index, ``CHANCE`` or ``TERMINAL``.
    """

    infosets: tuple[InfoSetKey, ...]
    current_player: int
    joint_tensor: np.ndarray = field(compare=False, repr=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, StateTuple):
            return NotImplemented
        return np.array_equal(self.joint_tensor, other.joint_tensor)

    def __hash__(self) -> int:
        return hash(self.joint_tensor.tobytes())


class Game:
    """Abstract extensive-form game with perfect recall.

    Subclasses implement the ``_``-prefixed hooks; the public methods add the
    precondition checks shared by every game.
    """

    game_id: str
    num_players: int
    max_actions: int
    infoset_dim: int
    max_episode_length: int
    zero_sum: bool = True
    enumerable: bool = True  # small enough to walk the full tree

    # ---- hooks -------------------------------------------------------------
    def _initial(self) -> Any:
        raise NotImplementedError

    def _player(self, st: Any) -> int:
        raise NotImplementedError

    def _legal(self, st: Any) -> list[int]:
        raise NotImplementedError

    def _apply(self, st: Any, a: int) -> Any:
        raise NotImplementedError

    def _returns(self, st: Any) -> np.ndarray:
        raise NotImplementedError

    def _chance(self, st: Any) -> list[tuple[int, float]]:
        raise NotImplementedError

    def _key(self, st: Any, i: int) -> str:
        raise NotImplementedError

    def _tensor(self, st: Any, i: int) -> np.ndarray:
        raise NotImplementedError

    def _reconstruct(self, blocks: Sequence[np.ndarray]) -> tuple[int, ...]:
        """Action sequence whose per-player encodings are ``blocks``."""
        raise NotImplementedError

    # ---- public interface --------------------------------------------------
    @property
    def joint_dim(self) -> int:
        return self.num_players * self.infoset_dim + self.num_players + 1

    def new_initial_state(self) -> History:
        return History(self, (), self._initial())

    def replay(self, actions: Sequence[int]) -> History:
        h = self.new_initial_state()
        for a in actions:
            h = self.apply_action(h, int(a))
        return h

    def current_player(self, h: History) -> int:
        return self._player(h._st)

    def is_terminal(self, h: History) -> bool:
        return self._player(h._st) == TERMINAL

    def is_chance_node(self, h: History) -> bool:
        return self._player(h._st) == CHANCE

    def legal_actions(self, h: History) -> list[int]:
        if self.is_terminal(h):
            raise TerminalError()
        return self._legal(h._st)

    def legal_mask(self, h: History) -> np.ndarray:
        mask = np.zeros(self.max_actions, dtype=np.uint8)
        if not self.is_terminal(h):
            mask[self._legal(h._st)] = 1
        return mask

    def apply_action(self, h: History, a: int) -> History:
        if self.is_terminal(h):
            raise TerminalError()
        if a not in self._legal(h._st):
            raise IllegalActionError(f"illegal-action: {a}")
        return History(self, h.actions + (a,), self._apply(h._st, a))

    def returns(self, h: History) -> np.ndarray:
        if not self.is_terminal(h):
            raise NotTerminalError()
        return self._returns(h._st)

    def chance_distribution(self, h: History) -> list[tuple[int, float]]:
        if not self.is_chance_node(h):
            raise NotChanceNodeError()
        return self._chance(h._st)

    def key_string(self, h: History, i: int) -> str:
        return self._key(h._st, i)

    def infoset_key(self, h: History, i: int) -> InfoSetKey:
        return InfoSetKey(i, self._key(h._st, i), self._tensor(h._st, i))

    def infoset_tensor(self, h: History, i: int) -> np.ndarray:
        return self._tensor(h._st, i)

    def encode_state(self, h: History) -> StateTuple:
        infosets = tuple(self.infoset_key(h, i) for i in range(self.num_players))
        player = self.current_player(h)
        block = np.zeros(self.num_players + 1, dtype=np.uint8)
        if player >= 0:
            block[player] = 1
        elif player == CHANCE:
            block[self.num_players] = 1
        joint = np.concatenate([s.tensor for s in infosets] + [block]).astype(np.uint8)
        return StateTuple(infosets, player, joint)

    def decode_history(self, t: np.ndarray) -> History:
        """Inverse of :meth:`encode_state`, returning the unique history."""
        t = np.asarray(t)
        if t.shape != (self.joint_dim,):
            raise UndecodableError(f"undecodable: expected length {self.joint_dim}, got {t.shape}")
        if not np.all((t == 0) | (t == 1)):
            raise UndecodableError("undecodable: entries must be 0 or 1")
        t = t.astype(np.uint8)
        d = self.infoset_dim
        blocks = [t[i * d:(i + 1) * d] for i in range(self.num_players)]
        try:
            h = self.replay(self._reconstruct(blocks))
        except (GameError, ValueError, IndexError, KeyError) as exc:
            raise UndecodableError(f"undecodable: {exc}") from exc
        if not np.array_equal(self.encode_state(h).joint_tensor, t):
            raise UndecodableError("undecodable: inconsistent blocks")
        return h

    def decode_state(self, t: np.ndarray) -> StateTuple:
        return self.encode_state(self.decode_history(t))

    def utility_range(self, i: int) -> float:
        """Largest minus smallest terminal payoff of player ``i``."""
        raise NotImplementedError

    def reachable_infosets(self) -> dict[str, tuple[int, np.ndarray, np.ndarray]]:
        """{key: (player, infoset tensor, legal mask)} for every decision infoset.

        Enumerates the whole tree once and caches the result, so it is only
        meant for games small enough to walk.
        """
        cached = getattr(self, "_reachable_infosets", None)
        if cached is not None:
            return cached
        out: dict[str, tuple[int, np.ndarray, np.ndarray]] = {}
        stack = [self.new_initial_state()]
        while stack:
            h = stack.pop()
            p = self.current_player(h)
            if p == TERMINAL:
                continue
            if p >= 0:
                key = self.key_string(h, p)
                if key not in out:
                    out[key] = (p, self.infoset_tensor(h, p), self.legal_mask(h))
            stack.extend(self.apply_action(h, a) for a in self._legal(h._st))
        self._reachable_infosets = dict(sorted(out.items()))
        return self._reachable_infosets

    def reachable_states(self) -> np.ndarray:
        """Joint tensors of every history, one row each (cached)."""
        cached = getattr(self, "_reachable_states", None)
        if cached is not None:
            return cached
        rows = []
        stack = [self.new_initial_state()]
        while stack:
            h = stack.pop()
            rows.append(self.encode_state(h).joint_tensor)
            if not self.is_terminal(h):
                stack.extend(self.apply_action(h, a) for a in self._legal(h._st))
        self._reachable_states = np.unique(np.asarray(rows, dtype=np.uint8), axis=0)
        return self._reachable_states

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.game_id!r})"


def one_hot(index: int | None, size: int) -> np.ndarray:
    v = np.zeros(size, dtype=np.uint8)
    if index is not None:
        v[index] = 1
    return v


def read_one_hot(bits: np.ndarray) -> int | None:
    """Index of the single set bit, ``None`` if all zero."""
    idx = np.flatnonzero(bits)
    if len(idx) == 0:
        return None
    if len(idx) > 1:
        raise ValueError("more than one bit set")
    return int(idx[0])
