"""n-player Leduc poker.

The deck has n+1 ranks with two suits each. Suits never matter for payoffs,
so chance outcomes are dealt at rank level with probabilities from uniform
card dealing. Rules: ante 1, two betting rounds with fixed bet sizes 2 and 4,
at most two raises per round, folding only when facing a bet. A private card
pair with the public card beats any unpaired hand; otherwise the higher rank
wins and ties split the pot.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from oef.games.base import CHANCE, TERMINAL, Game, one_hot, read_one_hot

FOLD = 0
CALL = 1
RAISE = 2
_ACTION_CHARS = "fcr"
BET_SIZES = (2, 4)
MAX_RAISES = 2


@dataclass(frozen=True)
class _LeducState:
    private: tuple[int, ...] | None
    public: int | None
    rounds: tuple[tuple[int, ...], ...]
    contrib: tuple[int, ...]
    folded: frozenset
    pending: frozenset
    raises: int
    to_act: int  # player index, CHANCE or TERMINAL


class LeducPoker(Game):
    def __init__(self, num_players: int = 2):
        if num_players not in (2, 3):
            raise ValueError("leduc supports 2 or 3 players")
        n = num_players
        self.num_players = n
        self.game_id = f"leduc_{n}"
        self.num_ranks = n + 1
        r = self.num_ranks
        self.deals = [d for d in itertools.product(range(r), repeat=n)
                      if max(d.count(k) for k in range(r)) <= 2]
        self._deal_index = {d: k for k, d in enumerate(self.deals)}
        self.max_actions = max(len(self.deals), r, 3)
        self.round_slots = 3 * n - 2
        self.infoset_dim = 2 * r + 2 * 3 * self.round_slots
        self.max_episode_length = 2 + 2 * self.round_slots
        if n == 2:
            self.rank_names = ["J", "Q", "K"]
        else:
            self.rank_names = [str(k) for k in range(r)]

    # ---- rules -------------------------------------------------------------
    def _initial(self):
        n = self.num_players
        return _LeducState(None, None, ((),), (1,) * n, frozenset(), frozenset(range(n)), 0, CHANCE)

    def _player(self, st: _LeducState) -> int:
        return st.to_act

    def _legal(self, st: _LeducState) -> list[int]:
        if st.to_act == CHANCE:
            if st.private is None:
                return list(range(len(self.deals)))
            return [k for k in range(self.num_ranks) if self._remaining(st, k) > 0]
        out = []
        if st.contrib[st.to_act] < max(st.contrib):
            out.append(FOLD)
        out.append(CALL)
        if st.raises < MAX_RAISES:
            out.append(RAISE)
        return out

    def _remaining(self, st: _LeducState, rank: int) -> int:
        used = list(st.private or ()) + ([st.public] if st.public is not None else [])
        return 2 - used.count(rank)

    def _chance(self, st: _LeducState) -> list[tuple[int, float]]:
        if st.private is None:
            out = []
            for k, deal in enumerate(self.deals):
                counts = [2] * self.num_ranks
                left = 2 * self.num_ranks
                p = 1.0
                for c in deal:
                    p *= counts[c] / left
                    counts[c] -= 1
                    left -= 1
                out.append((k, p))
            return out
        left = 2 * self.num_ranks - self.num_players
        return [(k, self._remaining(st, k) / left) for k in self._legal(st)]

    def _next_seat(self, st_pending: frozenset, folded: frozenset, after: int) -> int:
        n = self.num_players
        for step in range(1, n + 1):
            p = (after + step) % n
            if p in st_pending and p not in folded:
                return p
        raise AssertionError("no pending player")

    def _apply(self, st: _LeducState, a: int) -> _LeducState:
        n = self.num_players
        if st.to_act == CHANCE:
            if st.private is None:
                return _LeducState(self.deals[a], None, st.rounds, st.contrib, st.folded,
                                   st.pending, 0, 0)
            first = self._next_seat(frozenset(range(n)), st.folded, n - 1)
            return _LeducState(st.private, a, st.rounds + ((),), st.contrib, st.folded,
                               frozenset(range(n)) - st.folded, 0, first)
        p = st.to_act
        rnd = len(st.rounds) - 1
        contrib = list(st.contrib)
        folded = st.folded
        pending = st.pending - {p}
        raises = st.raises
        if a == FOLD:
            folded = folded | {p}
        elif a == CALL:
            contrib[p] = max(contrib)
        else:
            contrib[p] = max(contrib) + BET_SIZES[rnd]
            raises += 1
            pending = frozenset(range(n)) - folded - {p}
        rounds = st.rounds[:-1] + (st.rounds[-1] + (a,),)
        if n - len(folded) == 1:
            to_act = TERMINAL
        elif not pending:
            to_act = CHANCE if rnd == 0 else TERMINAL
        else:
            to_act = self._next_seat(pending, folded, p)
        return _LeducState(st.private, st.public, rounds, tuple(contrib), folded, pending,
                           raises, to_act)

    def _strength(self, st: _LeducState, p: int) -> int:
        rank = st.private[p]
        return rank + (self.num_ranks if rank == st.public else 0)

    def _returns(self, st: _LeducState) -> np.ndarray:
        n = self.num_players
        contrib = np.array(st.contrib, dtype=float)
        alive = [p for p in range(n) if p not in st.folded]
        if len(alive) > 1:
            best = max(self._strength(st, p) for p in alive)
            alive = [p for p in alive if self._strength(st, p) == best]
        out = -contrib
        for p in alive:
            out[p] += contrib.sum() / len(alive)
        return out

    def utility_range(self, i: int) -> float:
        per_player = 1 + MAX_RAISES * BET_SIZES[0] + MAX_RAISES * BET_SIZES[1]
        return float(per_player * (self.num_players - 1) + per_player)

    # ---- encodings ---------------------------------------------------------
    def _key(self, st: _LeducState, i: int) -> str:
        priv = "-" if st.private is None else self.rank_names[st.private[i]]
        pub = "-" if st.public is None else self.rank_names[st.public]
        hist = "/".join("".join(_ACTION_CHARS[a] for a in r) for r in st.rounds)
        return f"p{i}:{priv}:{pub}:{hist}"

    def _tensor(self, st: _LeducState, i: int) -> np.ndarray:
        r = self.num_ranks
        priv = one_hot(None if st.private is None else st.private[i], r)
        pub = one_hot(st.public, r)
        hist = np.zeros((2, self.round_slots, 3), dtype=np.uint8)
        for k, rnd in enumerate(st.rounds):
            for j, a in enumerate(rnd):
                hist[k, j, a] = 1
        return np.concatenate([priv, pub, hist.ravel()])

    def _reconstruct(self, blocks: Sequence[np.ndarray]) -> tuple[int, ...]:
        r = self.num_ranks
        private = [read_one_hot(b[:r]) for b in blocks]
        public = read_one_hot(blocks[0][r:2 * r])
        hist = blocks[0][2 * r:].reshape(2, self.round_slots, 3)
        rounds = []
        for k in range(2):
            acts = []
            for slot in hist[k]:
                a = read_one_hot(slot)
                if a is None:
                    break
                acts.append(a)
            rounds.append(acts)
        if all(c is None for c in private):
            if rounds[0] or rounds[1] or public is not None:
                raise ValueError("actions before the deal")
            return ()
        if any(c is None for c in private):
            raise ValueError("partial deal")
        actions = [self._deal_index[tuple(private)]] + rounds[0]
        if public is not None:
            actions += [public] + rounds[1]
        elif rounds[1]:
            raise ValueError("second round without public card")
        return tuple(actions)
