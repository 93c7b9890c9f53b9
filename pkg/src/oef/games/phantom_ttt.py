"""Phantom Tic-Tac-Toe.

Players do not see the opponent's marks. A move onto a cell that is already
taken by the opponent fails, reveals that cell to the mover, and the mover
tries again. Win +1 / loss -1, full board 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from oef.games.base import TERMINAL, Game, read_one_hot

_LINES = [(0, 1, 2), (3, 4, 5), (6, 7, 8), (0, 3, 6), (1, 4, 7), (2, 5, 8),
          (0, 4, 8), (2, 4, 6)]
_MAX_ATTEMPTS = 9


@dataclass(frozen=True)
class _PhantomState:
    board: tuple[int, ...]  # -1 empty, else owner
    attempts: tuple[tuple[tuple[int, bool], ...], tuple[tuple[int, bool], ...]]
    to_act: int
    winner: int | None


class PhantomTicTacToe(Game):
    def __init__(self):
        self.num_players = 2
        self.game_id = "phantom_ttt"
        self.max_actions = 9
        self.infoset_dim = _MAX_ATTEMPTS * 10
        self.max_episode_length = 18
        self.enumerable = False

    def _initial(self):
        return _PhantomState((-1,) * 9, ((), ()), 0, None)

    def _player(self, st: _PhantomState) -> int:
        return st.to_act

    def _legal(self, st: _PhantomState) -> list[int]:
        known = {c for c, _ in st.attempts[st.to_act]}
        return [c for c in range(9) if c not in known]

    def _apply(self, st: _PhantomState, a: int) -> _PhantomState:
        p = st.to_act
        ok = st.board[a] == -1
        attempts = list(st.attempts)
        attempts[p] = attempts[p] + ((a, ok),)
        if not ok:
            return _PhantomState(st.board, tuple(attempts), p, None)
        board = list(st.board)
        board[a] = p
        if any(all(board[c] == p for c in line) for line in _LINES):
            return _PhantomState(tuple(board), tuple(attempts), TERMINAL, p)
        if all(c != -1 for c in board):
            return _PhantomState(tuple(board), tuple(attempts), TERMINAL, None)
        return _PhantomState(tuple(board), tuple(attempts), 1 - p, None)

    def _returns(self, st: _PhantomState) -> np.ndarray:
        out = np.zeros(2)
        if st.winner is not None:
            out[st.winner] = 1.0
            out[1 - st.winner] = -1.0
        return out

    def _chance(self, st):
        raise AssertionError("phantom tic-tac-toe has no chance nodes")

    def utility_range(self, i: int) -> float:
        return 2.0

    def _key(self, st: _PhantomState, i: int) -> str:
        return f"p{i}:" + ",".join(f"{c}{'+' if ok else 'x'}" for c, ok in st.attempts[i])

    def _tensor(self, st: _PhantomState, i: int) -> np.ndarray:
        t = np.zeros((_MAX_ATTEMPTS, 10), dtype=np.uint8)
        for k, (c, ok) in enumerate(st.attempts[i]):
            t[k, c] = 1
            t[k, 9] = ok
        return t.ravel()

    def _reconstruct(self, blocks: Sequence[np.ndarray]) -> tuple[int, ...]:
        seqs = []
        for b in blocks:
            seq = []
            for slot in b.reshape(_MAX_ATTEMPTS, 10):
                c = read_one_hot(slot[:9])
                if c is None:
                    if slot[9]:
                        raise ValueError("outcome bit without a move")
                    break
                seq.append((c, bool(slot[9])))
            seqs.append(seq)
        actions = []
        pos = [0, 0]
        p = 0
        while pos[p] < len(seqs[p]):
            c, ok = seqs[p][pos[p]]
            actions.append(c)
            pos[p] += 1
            if ok:
                p = 1 - p
        if pos != [len(s) for s in seqs]:
            raise ValueError("attempt sequences cannot be interleaved")
        return tuple(actions)
