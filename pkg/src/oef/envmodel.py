"""Learned environment models and the game interface built on top of them.

An :class:`EnvModel` maps (joint state tensor, action) to the next state,
rewards, a terminal flag and the next legal-action mask, and maps a chance
state to a distribution over chance outcomes. :class:`ModelGame` exposes any
such transition model through the same methods as a true game, so the exact
solvers, PSRO and the sampling CFR run on it unchanged.

Decoding a predicted state: round every coordinate to {0, 1}; if the result
is not a valid encoding, snap to the nearest (L2) candidate among the states
seen in the dataset plus, when enabled, the game's reachable encodings.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from oef.dataset import Dataset, TransitionRecord
from oef.games import make_game
from oef.games.base import CHANCE, TERMINAL, Game, UndecodableError
from oef.nn import Head, Net, TrainConfig, masked_softmax, train


class DecodeFaultError(RuntimeError):
    def __init__(self, msg: str = "decode-fault"):
        super().__init__(msg)


HEAD_WEIGHTS = {"next_state": 1.0, "rewards": 1.0, "terminal": 1.0, "legal": 1.0, "chance": 1.0}


@dataclass
class StepResult:
    next_state: np.ndarray
    rewards: np.ndarray
    terminal: bool
    legal_mask: np.ndarray
    repaired: bool = False
    fault: bool = False


@dataclass
class ModelStats:
    steps: int = 0
    repairs: int = 0
    faults: int = 0
    truncations: int = 0

    @property
    def fault_rate(self) -> float:
        return (self.faults + self.truncations) / self.steps if self.steps else 0.0

    def to_dict(self) -> dict:
        return {"steps": self.steps, "repairs": self.repairs, "faults": self.faults,
                "truncations": self.truncations, "fault_rate": self.fault_rate}


def threshold_mask(probs: np.ndarray) -> np.ndarray:
    """Bits with probability >= 0.5; the single most likely bit if none is."""
    mask = (np.asarray(probs) >= 0.5).astype(np.uint8)
    if not mask.any():
        mask[int(np.argmax(probs))] = 1
    return mask


class EnvModel:
    """Multi-head network model of the game dynamics."""

    def __init__(self, game: Game, net: Net, candidates: np.ndarray, root: np.ndarray,
                 root_mask: np.ndarray):
        self.game = game
        self.game_id = game.game_id
        self.num_players = game.num_players
        self.max_actions = game.max_actions
        self.joint_dim = game.joint_dim
        self.net = net
        self.candidates = np.unique(np.asarray(candidates, dtype=np.uint8).reshape(-1, self.joint_dim), axis=0)
        self.root = np.asarray(root, dtype=np.uint8)
        self.root_mask = np.asarray(root_mask, dtype=np.uint8)
        self.stats = ModelStats()
        self._valid: dict[bytes, bool] = {}
        self._nearest: dict[bytes, bytes] = {}
        for c in self.candidates:
            self._valid[c.tobytes()] = True

    # ---- raw network queries ------------------------------------------------
    def _input(self, s: np.ndarray, a: int | None) -> np.ndarray:
        x = np.zeros(self.joint_dim + self.max_actions)
        x[:self.joint_dim] = s
        if a is not None:
            x[self.joint_dim + a] = 1.0
        return x

    def predict(self, s: np.ndarray, a: int) -> dict[str, np.ndarray]:
        return self.net.forward_all(self._input(s, a))

    # ---- decoding -------------------------------------------------------------
    def is_valid(self, t: np.ndarray) -> bool:
        key = t.tobytes()
        ok = self._valid.get(key)
        if ok is None:
            try:
                self.game.decode_history(t)
                ok = True
            except UndecodableError:
                ok = False
            self._valid[key] = ok
        return ok

    def decode(self, raw: np.ndarray) -> tuple[np.ndarray, bool]:
        """(valid state tensor, whether the nearest-neighbour repair was used).

        Raises :class:`DecodeFaultError` if no valid tensor can be produced.
        """
        t = (np.asarray(raw) >= 0.5).astype(np.uint8)
        if self.is_valid(t):
            return t, False
        key = t.tobytes()
        hit = self._nearest.get(key)
        if hit is None:
            if len(self.candidates) == 0:
                raise DecodeFaultError("decode-fault: no candidate states to repair with")
            d = ((self.candidates.astype(float) - np.asarray(raw, dtype=float)) ** 2).sum(axis=1)
            hit = self.candidates[int(np.argmin(d))].tobytes()
            self._nearest[key] = hit
        return np.frombuffer(hit, dtype=np.uint8).copy(), True

    # ---- transition interface ----------------------------------------------
    def initial_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.root.copy(), self.root_mask.copy()

    def step(self, s: np.ndarray, a: int) -> StepResult:
        out = self.predict(s, a)
        self.stats.steps += 1
        terminal = bool(out["terminal"][0] >= 0.5)
        try:
            nxt, repaired = self.decode(out["next_state"])
        except DecodeFaultError:
            self.stats.faults += 1
            return StepResult(np.zeros(self.joint_dim, np.uint8), out["rewards"].copy(), True,
                              np.zeros(self.max_actions, np.uint8), False, True)
        self.stats.repairs += int(repaired)
        block = nxt[-(self.num_players + 1):]
        fault = False
        if not terminal and not block.any():
            # a non-terminal prediction cannot land on a state nobody acts in
            fault = True
            terminal = True
            self.stats.faults += 1
        rewards = out["rewards"].copy() if terminal else np.zeros(self.num_players)
        mask = np.zeros(self.max_actions, np.uint8) if terminal else threshold_mask(out["legal"])
        return StepResult(nxt, rewards, terminal, mask, repaired, fault)

    def chance(self, s: np.ndarray, legal_mask: np.ndarray) -> np.ndarray:
        """Chance head, masked to ``legal_mask`` and renormalised."""
        mask = np.asarray(legal_mask).astype(bool)
        logits = self.net.logits(self._input(s, None))[self.net.slices["chance"]]
        return masked_softmax(logits, mask)

    # ---- persistence ----------------------------------------------------------
    def candidates_checksum(self) -> str:
        return hashlib.sha256(self.candidates.tobytes()).hexdigest()

    def sidecar(self) -> dict:
        return {
            "format": "oef-env",
            "game_id": self.game_id,
            "num_players": self.num_players,
            "max_actions": self.max_actions,
            "joint_dim": self.joint_dim,
            "heads": {h.name: h.size for h in self.net.heads},
            "root": self.root.tolist(),
            "root_mask": self.root_mask.tolist(),
            "decode_cache_checksum": self.candidates_checksum(),
            "candidates": ["".join(map(str, c)) for c in self.candidates],
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        self.net.save(path)
        Path(str(path) + ".meta.json").write_text(json.dumps(self.sidecar(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "EnvModel":
        path = Path(path)
        net = Net.load(path)
        meta = json.loads(Path(str(path) + ".meta.json").read_text())
        if meta.get("format") != "oef-env":
            raise ValueError("not an environment-model sidecar")
        game = make_game(meta["game_id"])
        heads = {h.name: h.size for h in net.heads}
        if heads != meta["heads"] or meta["joint_dim"] != game.joint_dim:
            raise ValueError("sidecar head dimensions do not match the network")
        cands = np.array([[int(ch) for ch in row] for row in meta["candidates"]], dtype=np.uint8)
        model = cls(game, net, cands.reshape(-1, game.joint_dim), np.asarray(meta["root"]),
                    np.asarray(meta["root_mask"]))
        if model.candidates_checksum() != meta["decode_cache_checksum"]:
            raise ValueError("decode cache checksum mismatch")
        return model


def model_step(m, s: np.ndarray, a: int) -> StepResult:
    return m.step(np.asarray(s, dtype=np.uint8), int(a))


def model_chance(m, s: np.ndarray, legal_mask: np.ndarray) -> np.ndarray:
    return m.chance(np.asarray(s, dtype=np.uint8), legal_mask)


class GameCoreModel:
    """A perfect transition model answered by the true game."""

    def __init__(self, game: Game):
        self.game = game
        self.game_id = game.game_id
        self.num_players = game.num_players
        self.max_actions = game.max_actions
        self.joint_dim = game.joint_dim
        self.stats = ModelStats()

    def initial_state(self):
        h = self.game.new_initial_state()
        return self.game.encode_state(h).joint_tensor, self.game.legal_mask(h)

    def step(self, s, a) -> StepResult:
        self.stats.steps += 1
        g = self.game
        nxt = g.apply_action(g.decode_history(s), a)
        terminal = g.is_terminal(nxt)
        rewards = np.asarray(g.returns(nxt), dtype=float) if terminal else np.zeros(g.num_players)
        return StepResult(g.encode_state(nxt).joint_tensor, rewards, terminal, g.legal_mask(nxt))

    def chance(self, s, legal_mask) -> np.ndarray:
        probs = np.zeros(self.max_actions)
        for a, p in self.game.chance_distribution(self.game.decode_history(s)):
            probs[a] = p
        probs = probs * np.asarray(legal_mask, dtype=float)
        return probs / probs.sum()


# ---- training ---------------------------------------------------------------

def build_training_arrays(ds: Dataset, game: Game):
    """Network inputs, per-head targets and head masks for a dataset.

    Every record gives one transition row (state ⊕ one-hot action). Chance
    records additionally give a row with an empty action block that trains
    only the chance head, so the chance distribution never sees the outcome.
    """
    J, A, n = game.joint_dim, game.max_actions, game.num_players
    recs = ds.records
    chance = [r for r in recs if r.actor == CHANCE]
    N = len(recs) + len(chance)
    X = np.zeros((N, J + A))
    T = {"next_state": np.zeros((N, J)), "rewards": np.zeros((N, n)), "terminal": np.zeros((N, 1)),
         "legal": np.zeros((N, A)), "chance": np.zeros((N, A))}
    is_step = np.zeros(N)
    is_term = np.zeros(N)
    is_chance = np.zeros(N)
    legal_in = np.ones((N, A), dtype=bool)
    for k, r in enumerate(recs):
        X[k, :J] = r.state
        X[k, J + r.action] = 1.0
        T["next_state"][k] = r.next_state
        T["rewards"][k] = r.rewards
        T["terminal"][k] = float(r.terminal)
        T["legal"][k] = r.next_legal_mask
        is_step[k] = 1.0
        is_term[k] = float(r.terminal)
    for j, r in enumerate(chance):
        k = len(recs) + j
        X[k, :J] = r.state
        T["chance"][k, r.action] = 1.0
        legal_in[k] = r.legal_mask.astype(bool)
        is_chance[k] = 1.0
    head_mask = {"next_state": is_step, "rewards": is_term, "terminal": is_step, "legal": is_step,
                 "chance": is_chance}
    return X, T, head_mask, {"chance": legal_in}


def dataset_root(ds: Dataset, game: Game) -> tuple[np.ndarray, np.ndarray]:
    """Most frequent episode-start state in the data and its legal mask.

    Falls back to the game's own initial encoding when no record starts an
    episode.
    """
    starts = Counter(r.state.tobytes() for r in ds.records if r.step == 0)
    if not starts:
        h = game.new_initial_state()
        return game.encode_state(h).joint_tensor, game.legal_mask(h)
    best = min(starts, key=lambda k: (-starts[k], k))
    rec = next(r for r in ds.records if r.step == 0 and r.state.tobytes() == best)
    return rec.state.copy(), rec.legal_mask.copy()


def train_env(ds: Dataset, game: Game, cfg: TrainConfig, *, head_weights: dict | None = None,
              use_reachable_states: bool = True) -> EnvModel:
    """Fit the multi-head model with the weighted sum of per-head losses."""
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    X, T, head_mask, legal = build_training_arrays(ds, game)
    heads = [Head("next_state", game.joint_dim, "linear"), Head("rewards", game.num_players, "linear"),
             Head("terminal", 1, "sigmoid"), Head("legal", game.max_actions, "sigmoid"),
             Head("chance", game.max_actions, "softmax")]
    net = Net(game.joint_dim + game.max_actions, [cfg.hidden_size], heads, seed=cfg.seed)
    train(net, X, T, cfg, head_weight=head_weights or HEAD_WEIGHTS, head_mask=head_mask,
          legal_mask=legal)
    cands = [r.state for r in ds.records] + [r.next_state for r in ds.records]
    candidates = np.asarray(cands, dtype=np.uint8)
    if use_reachable_states and game.enumerable:
        candidates = np.concatenate([candidates, game.reachable_states()])
    root, root_mask = dataset_root(ds, game)
    return EnvModel(game, net, candidates, root, root_mask)


@dataclass
class Fidelity:
    transitions: float
    terminal: float
    rewards: float
    legal: float
    count: int

    def to_dict(self) -> dict:
        return {"transitions": self.transitions, "terminal": self.terminal,
                "rewards": self.rewards, "legal": self.legal, "count": self.count}


def fidelity(model: EnvModel, records: list[TransitionRecord], reward_tol: float = 0.25) -> Fidelity:
    """Share of records the model reproduces.

    A transition matches when the decoded next state, the terminal flag and
    the next legal mask are exact and every reward is within ``reward_tol``.
    """
    if not records:
        raise ValueError("no records to score")
    ok = term = rew = leg = 0
    for r in records:
        res = model.step(r.state, r.action)
        s_ok = np.array_equal(res.next_state, r.next_state)
        t_ok = res.terminal == r.terminal
        r_ok = bool(np.all(np.abs(res.rewards - r.rewards) <= reward_tol))
        l_ok = np.array_equal(res.legal_mask, r.next_legal_mask)
        term += t_ok
        rew += r_ok
        leg += l_ok
        ok += s_ok and t_ok and r_ok and l_ok
    n = len(records)
    return Fidelity(ok / n, term / n, rew / n, leg / n, n)


def split_records(ds: Dataset, holdout: float, seed: int) -> tuple[list, list]:
    rng = np.random.default_rng(seed)
    idx = rng.permutation(len(ds))
    k = int(round(holdout * len(ds)))
    test = sorted(idx[:k].tolist())
    train_ = sorted(idx[k:].tolist())
    return [ds.records[i] for i in train_], [ds.records[i] for i in test]


# ---- model-backed game ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelHistory:
    state: np.ndarray
    player: int
    rewards: tuple
    legal: tuple
    actions: tuple = ()
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class ModelGame:
    """Game interface over a transition model.

    Episodes are cut at ``depth_cap`` steps (default: the true game's maximum
    episode length plus 2); a cut counts as a decode fault.
    """

    model: object
    game: Game
    depth_cap: int | None = None
    _steps: dict = field(default_factory=dict, repr=False)
    _keys: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        g = self.game
        self.game_id = g.game_id
        self.num_players = g.num_players
        self.max_actions = g.max_actions
        self.infoset_dim = g.infoset_dim
        self.max_episode_length = g.max_episode_length
        self.joint_dim = g.joint_dim
        self.zero_sum = g.zero_sum
        if self.depth_cap is None:
            self.depth_cap = g.max_episode_length + 2

    @property
    def stats(self) -> ModelStats:
        return self.model.stats

    def fault_rate(self) -> float:
        return self.model.stats.fault_rate

    def _player_of(self, s: np.ndarray) -> int:
        block = s[-(self.num_players + 1):]
        idx = np.flatnonzero(block)
        if len(idx) != 1:
            return TERMINAL
        return CHANCE if idx[0] == self.num_players else int(idx[0])

    def new_initial_state(self) -> ModelHistory:
        s, mask = self.model.initial_state()
        return ModelHistory(s, self._player_of(s), (0.0,) * self.num_players,
                            tuple(np.flatnonzero(mask).tolist()))

    def current_player(self, h: ModelHistory) -> int:
        return h.player

    def is_terminal(self, h: ModelHistory) -> bool:
        return h.player == TERMINAL

    def is_chance_node(self, h: ModelHistory) -> bool:
        return h.player == CHANCE

    def legal_actions(self, h: ModelHistory) -> list[int]:
        if h.player == TERMINAL:
            raise ValueError("terminal")
        return list(h.legal)

    def legal_mask(self, h: ModelHistory) -> np.ndarray:
        m = np.zeros(self.max_actions, dtype=np.uint8)
        m[list(h.legal)] = 1
        return m

    def apply_action(self, h: ModelHistory, a: int) -> ModelHistory:
        if a not in h.legal:
            raise ValueError(f"illegal-action: {a}")
        key = (h.state.tobytes(), int(a))
        res = self._steps.get(key)
        if res is None:
            res = self._steps[key] = self.model.step(h.state, int(a))
        else:
            # the cache is invisible to the counters: rates are per transition served
            stats = self.model.stats
            stats.steps += 1
            stats.repairs += int(res.repaired)
            stats.faults += int(res.fault)
        actions = h.actions + (int(a),)
        if res.terminal:
            return ModelHistory(res.next_state, TERMINAL, tuple(res.rewards.tolist()), (), actions)
        if len(actions) >= self.depth_cap:
            self.model.stats.truncations += 1
            return ModelHistory(res.next_state, TERMINAL, tuple(res.rewards.tolist()), (), actions, True)
        return ModelHistory(res.next_state, self._player_of(res.next_state),
                            (0.0,) * self.num_players,
                            tuple(np.flatnonzero(res.legal_mask).tolist()), actions)

    def returns(self, h: ModelHistory) -> np.ndarray:
        if h.player != TERMINAL:
            raise ValueError("not-terminal")
        return np.asarray(h.rewards, dtype=float)

    def chance_distribution(self, h: ModelHistory) -> list[tuple[int, float]]:
        if h.player != CHANCE:
            raise ValueError("not-chance-node")
        probs = self.model.chance(h.state, self.legal_mask(h))
        return [(a, float(probs[a])) for a in h.legal]

    def key_string(self, h: ModelHistory, i: int) -> str:
        key = (h.state.tobytes(), i)
        out = self._keys.get(key)
        if out is None:
            out = self._keys[key] = self.game.key_string(self.game.decode_history(h.state), i)
        return out

    def infoset_tensor(self, h: ModelHistory, i: int) -> np.ndarray:
        d = self.infoset_dim
        return h.state[i * d:(i + 1) * d].copy()

    def utility_range(self, i: int) -> float:
        return self.game.utility_range(i)
