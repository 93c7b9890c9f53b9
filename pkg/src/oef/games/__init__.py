"""Benchmark games behind one extensive-form interface."""

from oef.games.base import (
    CHANCE,
    TERMINAL,
    Game,
    GameError,
    History,
    IllegalActionError,
    InfoSetKey,
    NotChanceNodeError,
    NotTerminalError,
    StateTuple,
    TerminalError,
    UndecodableError,
)
from oef.games.kuhn import KuhnPoker
from oef.games.leduc import LeducPoker
from oef.games.liars_dice import LiarsDice
from oef.games.phantom_ttt import PhantomTicTacToe


def make_game(game_id: str) -> Game:
    """Build a game from ids like ``kuhn_3``, ``leduc_2``, ``liars_dice_6``, ``phantom_ttt``."""
    if game_id == "phantom_ttt":
        return PhantomTicTacToe()
    name, _, arg = game_id.rpartition("_")
    try:
        value = int(arg)
    except ValueError:
        raise ValueError(f"unknown game id {game_id!r}") from None
    if name == "kuhn":
        return KuhnPoker(value)
    if name == "leduc":
        return LeducPoker(value)
    if name == "liars_dice":
        return LiarsDice(value)
    raise ValueError(f"unknown game id {game_id!r}")


__all__ = [
    "CHANCE", "TERMINAL", "Game", "GameError", "History", "IllegalActionError",
    "InfoSetKey", "KuhnPoker", "LeducPoker", "LiarsDice", "NotChanceNodeError",
    "NotTerminalError", "PhantomTicTacToe", "StateTuple", "TerminalError",
    "UndecodableError", "make_game",
]
