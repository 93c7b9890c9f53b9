"""Two-player Liar's Dice with one die per player.

Each player rolls a private die. Players alternate raising a bid
``(quantity, face)``; bids are totally ordered by ``(quantity - 1) * sides +
face - 1`` and must strictly increase. Instead of bidding, a player may call
the previous bid a lie. The highest face is wild. The loser of the challenge
gets -1 and the winner +1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from oef.games.base import CHANCE, TERMINAL, Game, one_hot, read_one_hot


@dataclass(frozen=True)
class _DiceState:
    dice: tuple[int, ...]
    bids: tuple[int, ...]
    called: bool


class LiarsDice(Game):
    def __init__(self, dice_sides: int = 6):
        if dice_sides < 2:
            raise ValueError("dice_sides must be >= 2")
        self.num_players = 2
        self.sides = dice_sides
        self.game_id = f"liars_dice_{dice_sides}"
        self.num_bids = 2 * dice_sides
        self.liar = self.num_bids
        self.max_actions = self.num_bids + 1
        self.infoset_dim = dice_sides + self.num_bids + 1
        self.max_episode_length = 2 + self.num_bids + 1

    def _initial(self):
        return _DiceState((), (), False)

    def _player(self, st: _DiceState) -> int:
        if len(st.dice) < 2:
            return CHANCE
        if st.called:
            return TERMINAL
        return len(st.bids) % 2

    def _legal(self, st: _DiceState) -> list[int]:
        if len(st.dice) < 2:
            return list(range(self.sides))
        lo = st.bids[-1] + 1 if st.bids else 0
        out = list(range(lo, self.num_bids))
        if st.bids:
            out.append(self.liar)
        return out

    def _apply(self, st: _DiceState, a: int) -> _DiceState:
        if len(st.dice) < 2:
            return _DiceState(st.dice + (a,), (), False)
        if a == self.liar:
            return _DiceState(st.dice, st.bids, True)
        return _DiceState(st.dice, st.bids + (a,), False)

    def _chance(self, st: _DiceState) -> list[tuple[int, float]]:
        p = 1.0 / self.sides
        return [(k, p) for k in range(self.sides)]

    def bid(self, index: int) -> tuple[int, int]:
        """(quantity, face) with faces numbered from 1."""
        return index // self.sides + 1, index % self.sides + 1

    def _returns(self, st: _DiceState) -> np.ndarray:
        quantity, face = self.bid(st.bids[-1])
        wild = self.sides
        count = sum(1 for d in st.dice if d + 1 == face or d + 1 == wild)
        challenger = len(st.bids) % 2
        bidder = 1 - challenger
        out = np.zeros(2)
        loser = challenger if count >= quantity else bidder
        out[loser] = -1.0
        out[1 - loser] = 1.0
        return out

    def utility_range(self, i: int) -> float:
        return 2.0

    def _key(self, st: _DiceState, i: int) -> str:
        die = str(st.dice[i] + 1) if len(st.dice) > i else "-"
        bids = ",".join("%d-%d" % self.bid(b) for b in st.bids)
        return f"p{i}:{die}:{bids}" + (":L" if st.called else "")

    def _tensor(self, st: _DiceState, i: int) -> np.ndarray:
        die = one_hot(st.dice[i] if len(st.dice) > i else None, self.sides)
        bids = np.zeros(self.num_bids + 1, dtype=np.uint8)
        bids[list(st.bids)] = 1
        bids[-1] = st.called
        return np.concatenate([die, bids])

    def _reconstruct(self, blocks: Sequence[np.ndarray]) -> tuple[int, ...]:
        k = self.sides
        dice = [read_one_hot(b[:k]) for b in blocks]
        bids = tuple(int(x) for x in np.flatnonzero(blocks[0][k:k + self.num_bids]))
        called = bool(blocks[0][-1])
        if dice[0] is None:
            if dice[1] is not None or bids or called:
                raise ValueError("actions before the rolls")
            return ()
        if dice[1] is None:
            if bids or called:
                raise ValueError("bids before the second roll")
            return (dice[0],)
        return (dice[0], dice[1]) + bids + ((self.liar,) if called else ())
