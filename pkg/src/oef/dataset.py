"""Offline transition datasets: generation, mixing and JSONL storage.

Every record is one environment step, chance steps included (actor ``-1``),
so a learned model can also recover the chance distribution. Budgets count
transitions, and a partial final episode is kept.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from oef.exact import ExternalSamplingSolver, external_sampling_traverse, nash_conv
from oef.games.base import CHANCE, Game, History
from oef.policy import Policy

GENERATOR_VERSION = "oef-dataset/1"
FIELDS = ("episode", "step", "actor", "state", "action", "legal_mask",
          "next_state", "rewards", "terminal", "next_legal_mask")
KINDS = ("random", "expert", "learning", "hybrid")
META_PREFIX = "#META "


class DatasetError(ValueError):
    pass


class NotExpertError(DatasetError):
    def __init__(self, msg: str = "not-expert"):
        super().__init__(msg)


@dataclass
class TransitionRecord:
    episode: int
    step: int
    actor: int
    state: np.ndarray
    action: int
    legal_mask: np.ndarray
    next_state: np.ndarray
    rewards: np.ndarray
    terminal: bool
    next_legal_mask: np.ndarray

    def to_json(self) -> str:
        d = {
            "episode": int(self.episode),
            "step": int(self.step),
            "actor": int(self.actor),
            "state": [int(x) for x in self.state],
            "action": int(self.action),
            "legal_mask": [int(x) for x in self.legal_mask],
            "next_state": [int(x) for x in self.next_state],
            "rewards": [float(x) for x in self.rewards],
            "terminal": bool(self.terminal),
            "next_legal_mask": [int(x) for x in self.next_legal_mask],
        }
        return json.dumps(d, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionRecord":
        return cls(
            episode=int(d["episode"]), step=int(d["step"]), actor=int(d["actor"]),
            state=np.asarray(d["state"], dtype=np.uint8), action=int(d["action"]),
            legal_mask=np.asarray(d["legal_mask"], dtype=np.uint8),
            next_state=np.asarray(d["next_state"], dtype=np.uint8),
            rewards=np.asarray(d["rewards"], dtype=float), terminal=bool(d["terminal"]),
            next_legal_mask=np.asarray(d["next_legal_mask"], dtype=np.uint8),
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, TransitionRecord) and self.to_json() == other.to_json()


@dataclass
class DatasetMeta:
    game_id: str
    kind: str
    size: int
    seed: int
    generator_version: str = GENERATOR_VERSION
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "hybrid" and not (self.rho is not None and 0.0 <= self.rho <= 1.0):
            raise DatasetError("hybrid datasets need rho in [0, 1]")

    def to_dict(self) -> dict:
        d = {"game_id": self.game_id, "kind": self.kind, "size": self.size, "seed": self.seed,
             "generator_version": self.generator_version}
        if self.rho is not None:
            d["rho"] = self.rho
        return d


@dataclass
class Dataset:
    meta: DatasetMeta
    records: list[TransitionRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TransitionRecord]:
        return iter(self.records)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(META_PREFIX + json.dumps(self.meta.to_dict(), separators=(",", ":")) + "\n")
        for r in self.records:
            buf.write(r.to_json() + "\n")
        return buf.getvalue()

    def checksum(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def validate(self) -> None:
        """Record-level invariants: action in mask, zero rewards off-terminal,
        unique (episode, step) ids and a size that matches the meta."""
        if self.meta.size != len(self.records):
            raise DatasetError(f"size mismatch: meta says {self.meta.size}, found {len(self.records)}")
        seen = set()
        for r in self.records:
            ident = (r.episode, r.step)
            if ident in seen:
                raise DatasetError(f"duplicate record id {ident}")
            seen.add(ident)
            if not (0 <= r.action < len(r.legal_mask)) or not r.legal_mask[r.action]:
                raise DatasetError(f"record {ident}: action {r.action} not in legal mask")
            if not r.terminal and np.any(r.rewards != 0):
                raise DatasetError(f"record {ident}: nonzero rewards on a non-terminal step")


# ---- generation -----------------------------------------------------------

def make_record(game: Game, h: History, a: int, nxt: History, episode: int, step: int) -> TransitionRecord:
    terminal = game.is_terminal(nxt)
    return TransitionRecord(
        episode=episode, step=step, actor=game.current_player(h),
        state=game.encode_state(h).joint_tensor, action=int(a),
        legal_mask=game.legal_mask(h), next_state=game.encode_state(nxt).joint_tensor,
        rewards=np.asarray(game.returns(nxt), dtype=float) if terminal else np.zeros(game.num_players),
        terminal=terminal, next_legal_mask=game.legal_mask(nxt),
    )


def _sample_chance(game: Game, h: History, rng: np.random.Generator) -> int:
    outcomes = game.chance_distribution(h)
    probs = np.array([q for _, q in outcomes])
    return outcomes[rng.choice(len(outcomes), p=probs / probs.sum())][0]


def rollout_records(game: Game, num_records: int, rng: np.random.Generator,
                    choose: Callable[[History, int, list[int]], int]) -> list[TransitionRecord]:
    """Play episodes until ``num_records`` transitions have been logged."""
    out: list[TransitionRecord] = []
    episode = 0
    while len(out) < num_records:
        h = game.new_initial_state()
        step = 0
        while not game.is_terminal(h) and len(out) < num_records:
            p = game.current_player(h)
            a = _sample_chance(game, h, rng) if p == CHANCE else choose(h, p, game.legal_actions(h))
            nxt = game.apply_action(h, a)
            out.append(make_record(game, h, a, nxt, episode, step))
            h = nxt
            step += 1
        episode += 1
    return out


def generate_random(game: Game, num_records: int, seed: int) -> Dataset:
    """Every player uniform over its legal actions."""
    if num_records <= 0:
        raise DatasetError("num_records must be positive")
    rng = np.random.default_rng(seed)
    recs = rollout_records(game, num_records, rng, lambda h, p, legal: legal[rng.integers(len(legal))])
    return Dataset(DatasetMeta(game.game_id, "random", len(recs), seed), recs)


def generate_expert(game: Game, num_records: int, seed: int, ne_profile: Policy,
                    threshold: float | None = 0.01) -> Dataset:
    """Episodes sampled from ``ne_profile``, which must have NashConv <= threshold.

    ``threshold=None`` skips the check; it exists for games whose tree is too
    large for exact NashConv.
    """
    if num_records <= 0:
        raise DatasetError("num_records must be positive")
    if threshold is not None:
        nc = nash_conv(game, ne_profile).nash_conv
        if nc > threshold:
            raise NotExpertError(f"not-expert: profile NashConv {nc:.6g} exceeds {threshold}")
    rng = np.random.default_rng(seed)

    def choose(h, p, legal):
        probs = ne_profile.action_probs(game.key_string(h, p), legal)
        return legal[rng.choice(len(legal), p=probs)]

    recs = rollout_records(game, num_records, rng, choose)
    return Dataset(DatasetMeta(game.game_id, "expert", len(recs), seed), recs)


def generate_learning(game: Game, num_records: int, seed: int) -> Dataset:
    """Log every environment step made by an external-sampling MCCFR run from scratch.

    One traversal is one episode id; step ids count the transitions inside
    the traversal, so traverser branches share an episode.
    """
    if num_records <= 0:
        raise DatasetError("num_records must be positive")
    recs: list[TransitionRecord] = []
    state = {"episode": -1, "step": 0}

    def log(h, a, nxt):
        if len(recs) >= num_records:
            return
        recs.append(make_record(game, h, a, nxt, state["episode"], state["step"]))
        state["step"] += 1

    solver = ExternalSamplingSolver(game, seed=seed, on_transition=log)
    while len(recs) < num_records:
        for p in range(game.num_players):
            if len(recs) >= num_records:
                break
            state["episode"] += 1
            state["step"] = 0
            external_sampling_traverse(game, game.new_initial_state(), p, solver.tables,
                                       solver.rng, log)
        solver.tables.iteration += 1
    return Dataset(DatasetMeta(game.game_id, "learning", len(recs), seed), recs)


def mix_hybrid(random_ds: Dataset, expert_ds: Dataset, rho: float, target_size: int,
               seed: int) -> Dataset:
    """round(rho * target_size) random records plus expert records, shuffled.

    Episode ids are renumbered in order of first appearance so that
    (episode, step) stays unique across the two sources.
    """
    if not 0.0 <= rho <= 1.0:
        raise DatasetError("rho must lie in [0, 1]")
    if random_ds.meta.game_id != expert_ds.meta.game_id:
        raise DatasetError("datasets come from different games")
    n_rand = int(np.floor(rho * target_size + 0.5))
    n_exp = target_size - n_rand
    if n_rand > len(random_ds) or n_exp > len(expert_ds):
        raise DatasetError(f"insufficient source records: need {n_rand} random and {n_exp} expert, "
                           f"have {len(random_ds)} and {len(expert_ds)}")
    rng = np.random.default_rng(seed)
    pick_r = np.sort(rng.choice(len(random_ds), size=n_rand, replace=False))
    pick_e = np.sort(rng.choice(len(expert_ds), size=n_exp, replace=False))
    tagged = [(0, random_ds.records[i]) for i in pick_r] + [(1, expert_ds.records[i]) for i in pick_e]
    order = rng.permutation(len(tagged))
    renum: dict[tuple[int, int], int] = {}
    out = []
    for k in order:
        src, r = tagged[k]
        ep = renum.setdefault((src, r.episode), len(renum))
        out.append(TransitionRecord(ep, r.step, r.actor, r.state, r.action, r.legal_mask,
                                    r.next_state, r.rewards, r.terminal, r.next_legal_mask))
    meta = DatasetMeta(random_ds.meta.game_id, "hybrid", len(out), seed, rho=float(rho))
    return Dataset(meta, out)


# ---- checks ---------------------------------------------------------------

def check_replay(ds: Dataset, game: Game) -> None:
    """Re-derive every record from game-core; raises DatasetError on mismatch."""
    cache: dict[bytes, History] = {}
    for r in ds.records:
        ident = (r.episode, r.step)
        key = r.state.tobytes()
        h = cache.get(key)
        if h is None:
            h = cache[key] = game.decode_history(r.state)
        if game.current_player(h) != r.actor:
            raise DatasetError(f"record {ident}: actor {r.actor} but state belongs to {game.current_player(h)}")
        if not np.array_equal(game.legal_mask(h), r.legal_mask):
            raise DatasetError(f"record {ident}: legal mask differs")
        expect = make_record(game, h, r.action, game.apply_action(h, r.action), r.episode, r.step)
        if expect != r:
            raise DatasetError(f"record {ident}: transition does not replay")


# ---- storage --------------------------------------------------------------

def save(ds: Dataset, path: str | Path) -> None:
    ds.validate()
    Path(path).write_bytes(ds.to_text().encode("utf-8"))


def loads(text: str) -> Dataset:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(META_PREFIX):
        raise DatasetError("line 1: missing #META header")
    try:
        md = json.loads(lines[0][len(META_PREFIX):])
        meta = DatasetMeta(**md)
    except (json.JSONDecodeError, TypeError) as exc:
        raise DatasetError(f"line 1: malformed meta header: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: malformed JSON: {exc.msg}") from exc
        if not isinstance(d, dict):
            raise DatasetError(f"line {lineno}: record is not an object")
        unknown = [k for k in d if k not in FIELDS]
        if unknown:
            raise DatasetError(f"line {lineno}: unknown field {unknown[0]!r}")
        missing = [k for k in FIELDS if k not in d]
        if missing:
            raise DatasetError(f"line {lineno}: missing field {missing[0]!r}")
        try:
            records.append(TransitionRecord.from_dict(d))
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"line {lineno}: bad value: {exc}") from exc
    ds = Dataset(meta, records)
    ds.validate()
    return ds


def load(path: str | Path) -> Dataset:
    return loads(Path(path).read_bytes().decode("utf-8"))
