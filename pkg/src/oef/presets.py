"""Named training presets: (hidden units, batch size, epochs) per game and
dataset size for behaviour cloning and for the environment model."""

from __future__ import annotations

from dataclasses import dataclass

from oef.nn import TrainConfig

# game id -> {size: (hidden, batch, epochs)}
BC_ROWS: dict[str, dict[int, tuple[int, int, int]]] = {
    "kuhn_2": {500: (32, 32, 1000), 1000: (32, 32, 2000), 5000: (32, 32, 2000)},
    "kuhn_3": {1000: (32, 32, 5000), 5000: (32, 32, 5000), 10000: (64, 128, 5000)},
    "kuhn_4": {5000: (64, 64, 5000), 10000: (64, 128, 5000), 20000: (64, 128, 5000)},
    "kuhn_5": {5000: (64, 64, 5000), 10000: (64, 128, 5000), 20000: (64, 128, 5000)},
    "leduc_2": {10000: (128, 128, 10000), 20000: (128, 128, 10000), 50000: (128, 128, 10000)},
    "leduc_3": {10000: (128, 128, 10000), 20000: (128, 128, 10000), 50000: (128, 128, 10000)},
    "liars_dice_6": {10000: (64, 64, 5000), 20000: (64, 128, 5000), 50000: (64, 128, 5000)},
    "phantom_ttt": {5000: (128, 128, 5000), 10000: (128, 128, 5000), 20000: (128, 128, 5000)},
}

ENV_ROWS: dict[str, dict[int, tuple[int, int, int]]] = {
    "kuhn_2": {500: (32, 32, 1000), 1000: (32, 32, 2000), 5000: (32, 32, 2000)},
    "kuhn_3": {1000: (32, 32, 2000), 5000: (32, 32, 5000), 10000: (64, 128, 5000)},
    "kuhn_4": {5000: (64, 64, 5000), 10000: (64, 128, 5000), 20000: (64, 128, 5000)},
    "kuhn_5": {5000: (64, 64, 5000), 10000: (64, 128, 5000), 20000: (64, 128, 5000)},
    "leduc_2": {5000: (64, 64, 5000), 10000: (64, 64, 5000), 20000: (128, 128, 10000)},
    "leduc_3": {10000: (128, 128, 10000), 20000: (128, 128, 10000), 50000: (128, 128, 10000)},
    "liars_dice_6": {10000: (64, 64, 5000), 20000: (64, 128, 5000), 50000: (64, 128, 5000)},
    "phantom_ttt": {5000: (128, 128, 5000), 10000: (128, 128, 5000), 20000: (128, 128, 5000)},
}

_PREFIX = {"kuhn_2": "kuhn2", "kuhn_3": "kuhn3", "kuhn_4": "kuhn4", "kuhn_5": "kuhn5",
           "leduc_2": "leduc2", "leduc_3": "leduc3", "liars_dice_6": "liars_dice",
           "phantom_ttt": "phantom_ttt"}


@dataclass(frozen=True)
class Preset:
    name: str
    game_id: str
    size: int
    bc: TrainConfig
    env: TrainConfig
    # True when a table has no row for this size and the nearest size's row is used
    bc_borrowed: bool = False
    env_borrowed: bool = False


def _config(row: tuple[int, int, int]) -> TrainConfig:
    hidden, batch, epochs = row
    return TrainConfig(batch_size=batch, epochs=epochs, hidden_size=hidden)


def _nearest(rows: dict[int, tuple[int, int, int]], size: int) -> tuple[tuple[int, int, int], bool]:
    if size in rows:
        return rows[size], False
    best = min(rows, key=lambda s: (abs(s - size), s))
    return rows[best], True


def preset_name(game_id: str, size: int) -> str:
    return f"{_PREFIX[game_id]}_{size}"


def _build() -> dict[str, Preset]:
    out = {}
    for game_id in BC_ROWS:
        for size in sorted(set(BC_ROWS[game_id]) | set(ENV_ROWS[game_id])):
            bc, bc_b = _nearest(BC_ROWS[game_id], size)
            env, env_b = _nearest(ENV_ROWS[game_id], size)
            name = preset_name(game_id, size)
            out[name] = Preset(name, game_id, size, _config(bc), _config(env), bc_b, env_b)
    return out


PRESETS: dict[str, Preset] = _build()


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None


def preset_for(game_id: str, size: int) -> Preset | None:
    if game_id not in _PREFIX:
        return None
    return PRESETS.get(preset_name(game_id, size))
