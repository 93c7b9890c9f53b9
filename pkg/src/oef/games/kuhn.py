"""n-player Kuhn poker.

n+1 cards, one card each, ante 1, a single betting round. Until somebody
bets, ``PASS`` is a check; after the first bet every other player responds
once in seat order, where ``BET`` calls and ``PASS`` folds. The pot goes to
the highest card among the players still in.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from oef.games.base import CHANCE, TERMINAL, Game, one_hot, read_one_hot

PASS = 0
BET = 1


@dataclass(frozen=True)
class _KuhnState:
    cards: tuple[int, ...] | None
    bets: tuple[int, ...]
    bettor: int | None


class KuhnPoker(Game):
    def __init__(self, num_players: int = 2):
        if num_players not in (2, 3, 4, 5):
            raise ValueError("kuhn supports 2..5 players")
        n = num_players
        self.num_players = n
        self.game_id = f"kuhn_{n}"
        self.num_cards = n + 1
        self.deals = list(itertools.permutations(range(self.num_cards), n))
        self._deal_index = {d: k for k, d in enumerate(self.deals)}
        self.max_actions = max(len(self.deals), 2)
        self.max_bets = 2 * n - 1
        self.infoset_dim = self.num_cards + 2 * self.max_bets
        self.max_episode_length = 1 + self.max_bets
        if n == 2:
            self.card_names = ["J", "Q", "K"]
        else:
            self.card_names = [str(c) for c in range(self.num_cards)]

    def _initial(self):
        return _KuhnState(None, (), None)

    def _player(self, st: _KuhnState) -> int:
        if st.cards is None:
            return CHANCE
        n = self.num_players
        if st.bettor is None:
            return TERMINAL if len(st.bets) == n else len(st.bets)
        if len(st.bets) == st.bettor + n:
            return TERMINAL
        return len(st.bets) % n

    def _legal(self, st: _KuhnState) -> list[int]:
        if st.cards is None:
            return list(range(len(self.deals)))
        return [PASS, BET]

    def _apply(self, st: _KuhnState, a: int) -> _KuhnState:
        if st.cards is None:
            return _KuhnState(self.deals[a], (), None)
        bettor = st.bettor
        if bettor is None and a == BET:
            bettor = len(st.bets)
        return _KuhnState(st.cards, st.bets + (a,), bettor)

    def _chance(self, st: _KuhnState) -> list[tuple[int, float]]:
        p = 1.0 / len(self.deals)
        return [(k, p) for k in range(len(self.deals))]

    def _contributions(self, st: _KuhnState) -> tuple[np.ndarray, list[int]]:
        n = self.num_players
        contrib = np.ones(n)
        if st.bettor is None:
            return contrib, list(range(n))
        contrib[st.bettor] += 1
        alive = [st.bettor]
        for k in range(st.bettor + 1, len(st.bets)):
            if st.bets[k] == BET:
                contrib[k % n] += 1
                alive.append(k % n)
        return contrib, alive

    def _returns(self, st: _KuhnState) -> np.ndarray:
        contrib, alive = self._contributions(st)
        winner = max(alive, key=lambda p: st.cards[p])
        out = -contrib
        out[winner] += contrib.sum()
        return out

    def utility_range(self, i: int) -> float:
        # best: win every other player's ante and call; worst: lose ante + bet
        return float(2 * (self.num_players - 1) + 2)

    def _key(self, st: _KuhnState, i: int) -> str:
        card = "-" if st.cards is None else self.card_names[st.cards[i]]
        hist = "".join("pb"[a] for a in st.bets)
        return f"p{i}:{card}:{hist}"

    def _tensor(self, st: _KuhnState, i: int) -> np.ndarray:
        card = one_hot(None if st.cards is None else st.cards[i], self.num_cards)
        hist = np.zeros(2 * self.max_bets, dtype=np.uint8)
        for k, a in enumerate(st.bets):
            hist[2 * k + a] = 1
        return np.concatenate([card, hist])

    def _reconstruct(self, blocks: Sequence[np.ndarray]) -> tuple[int, ...]:
        nc = self.num_cards
        cards = [read_one_hot(b[:nc]) for b in blocks]
        hist = blocks[0][nc:].reshape(self.max_bets, 2)
        bets = []
        for slot in hist:
            a = read_one_hot(slot)
            if a is None:
                break
            bets.append(a)
        if all(c is None for c in cards):
            if bets:
                raise ValueError("bets before the deal")
            return ()
        if any(c is None for c in cards):
            raise ValueError("partial deal")
        return (self._deal_index[tuple(cards)],) + tuple(bets)
