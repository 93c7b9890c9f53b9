"""End-to-end experiments: dataset -> behaviour cloning + environment model ->
model-based solver -> per-infoset combination -> true-game evaluation.

Outputs are deterministic given the config: CSV floats use shortest
round-trip repr, manifests are canonical JSON, and wall time is kept out of
both (it goes to ``timing.json``).
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from oef import __version__
from oef import dataset as D
from oef.approx import LazyPolicy, approx_nash_conv, probs_at
from oef.bc import BCModel, bc_policy, train_bc
from oef.deepcfr import DeepCFRConfig, oef_cfr
from oef.envmodel import ModelGame, ModelStats, train_env
from oef.exact import ExternalSamplingSolver, nash_conv, solve_to_nash_conv
from oef.games import make_game
from oef.nn import TrainConfig, masked_softmax
from oef.policy import Policy
from oef.presets import get_preset, preset_for
from oef.psro import PSROConfig, oef_psro

ALPHA_GRID = tuple(k / 10 for k in range(11))
DEFAULT_RHOS = (0.0, 0.25, 0.5, 0.75, 1.0)
TIE_TOL = 1e-12
SOLVERS = ("psro", "cfr")
METHODS = ("bc", "mb", "bc+mb")
RESULT_FIELDS = ("game", "kind", "size", "rho", "seed", "method", "solver", "nash_conv",
                 "best_alpha", "approximate", "fault_rate")
ALPHA_FIELDS = ("game", "kind", "size", "rho", "seed", "solver", "alpha", "nash_conv")
PLOT_FIELDS = ("game", "kind", "method", "solver", "metric", "x_name", "x", "series_name", "series",
               "n", "mean", "std")
SEED_ENV = "OEF_SEED"


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the partial manifest."""

    def __init__(self, stage: str, manifest: dict, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.manifest = manifest
        self.cause = cause


# ---- combination ------------------------------------------------------------

class CombinedPolicy(Policy):
    """alpha * bc + (1 - alpha) * mb at every infoset, computed on lookup."""

    def __init__(self, bc: Policy, mb: Policy, alpha: float):
        super().__init__(bc.num_actions, {}, "joint")
        self.bc, self.mb, self.alpha = bc, mb, float(alpha)

    def action_probs(self, key: str, legal: Iterable[int]) -> np.ndarray:
        legal = list(legal)
        return self.alpha * self.bc.action_probs(key, legal) + (1 - self.alpha) * self.mb.action_probs(key, legal)

    def lookup(self, game, h, p: int, legal: list[int]) -> np.ndarray:
        return (self.alpha * probs_at(self.bc, game, h, p, legal)
                + (1 - self.alpha) * probs_at(self.mb, game, h, p, legal))

    def materialize(self, game) -> Policy:
        """Plain tabular policy over every reachable infoset of ``game``."""
        out = Policy(self.num_actions)
        for key, (_, _, mask) in game.reachable_infosets().items():
            legal = np.flatnonzero(mask)
            row = np.zeros(self.num_actions)
            row[legal] = self.action_probs(key, legal)
            out[key] = row
        return out


def combine(bc: Policy, mb: Policy, alpha: float) -> CombinedPolicy:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return CombinedPolicy(bc, mb, alpha)


def evaluate_policy(game, policy: Policy, approx: dict | None = None) -> tuple[float, bool]:
    """(NashConv, approximate). Exact when the game tree can be walked,
    otherwise the Q-learning estimate with ``approx`` settings."""
    if game.enumerable:
        return nash_conv(game, policy).nash_conv, False
    return approx_nash_conv(game, policy, **(approx or {})).nash_conv, True


def select_best_alpha(bc: Policy, mb: Policy, game, grid: Sequence[float] = ALPHA_GRID, *,
                      approx: dict | None = None) -> tuple[float, dict[float, float]]:
    """Grid alpha with the lowest true-game NashConv; values within TIE_TOL
    of the minimum count as ties and the smallest such alpha wins."""
    table = {float(a): evaluate_policy(game, combine(bc, mb, a), approx)[0] for a in sorted(grid)}
    low = min(table.values())
    best = min(a for a, v in table.items() if v <= low + TIE_TOL)
    return best, table


# ---- seeds and config -------------------------------------------------------

def derive_seed(base: int, *labels) -> int:
    """Independent 32-bit seed for one stage, stable across runs and platforms."""
    words = [int(base)] + [zlib.crc32(str(label).encode()) for label in labels]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


_TRAIN_FIELDS = {"batch_size": {"type": "integer", "minimum": 1},
                 "epochs": {"type": "integer", "minimum": 1},
                 "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                 "hidden_size": {"type": "integer", "minimum": 1}}
_SEEDS = {"type": "integer", "minimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["game"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "game": {"type": "string"},
        "kind": {"enum": list(D.KINDS)},
        "size": {"type": "integer", "minimum": 1},
        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "rho": {"type": "number", "minimum": 0, "maximum": 1},
        "rhos": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
        "seed": _SEEDS,
        "seeds": {"type": "array", "items": _SEEDS, "minItems": 1},
        "solver": {"enum": list(SOLVERS)},
        "solvers": {"type": "array", "items": {"enum": list(SOLVERS)}, "minItems": 1},
        "preset": {"type": "string"},
        "bc": {"type": "object", "properties": _TRAIN_FIELDS, "additionalProperties": False},
        "env": {"type": "object", "properties": _TRAIN_FIELDS, "additionalProperties": False},
        "psro": {"type": "object"},
        "cfr": {"type": "object"},
        "expert_threshold": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "expert_iterations": {"type": "integer", "minimum": 1},
        "alpha_grid": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                       "minItems": 1},
        "approx": {"type": "object", "additionalProperties": False,
                   "properties": {"seeds": {"type": "array", "items": _SEEDS, "minItems": 1},
                                  "episodes": {"type": "integer", "minimum": 1},
                                  "eval_episodes": {"type": "integer", "minimum": 1},
                                  "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                                  "epsilon": {"type": "number", "minimum": 0, "maximum": 1}}},
        "workers": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class ExperimentConfig:
    """Normalised experiment config.

    ``preset`` is "auto" (the table row for each (game, size) when there is
    one), "none" (library defaults) or a preset name applied to every size.
    ``bc`` / ``env`` override individual training fields on top of it.
    """

    game: str
    name: str = ""
    kind: str = "hybrid"
    sizes: list[int] = field(default_factory=lambda: [5000])
    rhos: list[float] = field(default_factory=lambda: list(DEFAULT_RHOS))
    seeds: list[int] = field(default_factory=lambda: [0])
    solvers: list[str] = field(default_factory=lambda: ["psro"])
    preset: str = "auto"
    bc: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    psro: dict = field(default_factory=dict)
    cfr: dict = field(default_factory=dict)
    expert_threshold: float | None = 0.01
    expert_iterations: int = 2000
    alpha_grid: list[float] = field(default_factory=lambda: list(ALPHA_GRID))
    approx: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        make_game(self.game)  # raises on unknown ids
        if self.kind in ("random", "expert", "learning"):
            # rho only means something for hybrids; keep a placeholder so cells line up
            self.rhos = [{"random": 1.0, "expert": 0.0, "learning": None}[self.kind]]
        if self.preset not in ("auto", "none"):
            get_preset(self.preset)
        PSROConfig(**self.psro)
        DeepCFRConfig(**self.cfr)
        if not self.name:
            self.name = f"{self.game}_{self.kind}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict, *, env: dict | None = None) -> "ExperimentConfig":
        """Validate against CONFIG_SCHEMA, fold singular keys into lists and
        apply the OEF_SEED override (a single seed replacing the seed list)."""
        jsonschema.validate(raw, CONFIG_SCHEMA)
        d = dict(raw)
        for one, many in (("size", "sizes"), ("rho", "rhos"), ("seed", "seeds"), ("solver", "solvers")):
            if one in d:
                if many in d:
                    raise ValueError(f"config gives both {one!r} and {many!r}")
                d[many] = [d.pop(one)]
        env = os.environ if env is None else env
        if env.get(SEED_ENV, "").strip():
            d["seeds"] = [int(env[SEED_ENV])]
        d["rhos"] = [float(r) for r in d.get("rhos", DEFAULT_RHOS)]
        d["alpha_grid"] = [float(a) for a in d.get("alpha_grid", ALPHA_GRID)]
        return cls(**d)


def load_config(source: str | Path | dict, *, env: dict | None = None) -> ExperimentConfig:
    if isinstance(source, ExperimentConfig):
        return source
    if not isinstance(source, dict):
        source = json.loads(Path(source).read_text())
    return ExperimentConfig.from_dict(source, env=env)


def train_configs(cfg: ExperimentConfig, size: int) -> tuple[TrainConfig, TrainConfig]:
    """(bc, env) training configs for one dataset size, seeds left at 0."""
    if cfg.preset == "none":
        bc, env = TrainConfig(), TrainConfig()
    else:
        preset = get_preset(cfg.preset) if cfg.preset != "auto" else preset_for(cfg.game, size)
        bc, env = (preset.bc, preset.env) if preset else (TrainConfig(), TrainConfig())
    return TrainConfig(**{**bc.to_dict(), **cfg.bc}), TrainConfig(**{**env.to_dict(), **cfg.env})


# ---- stages -----------------------------------------------------------------

@lru_cache(maxsize=None)
def expert_profile(game_id: str, threshold: float | None, iterations: int) -> Policy:
    """Equilibrium profile used to sample expert data.

    CFR+ to NashConv threshold / 2 when the tree can be walked, else the
    average policy of ``iterations`` external-sampling MCCFR iterations.
    """
    game = make_game(game_id)
    if game.enumerable:
        return solve_to_nash_conv(game, (threshold or 0.01) / 2)[0]
    return ExternalSamplingSolver(game, seed=0).run(iterations).average_policy()


def source_datasets(cfg: ExperimentConfig, game, size: int, seed: int) -> dict[str, D.Dataset]:
    """Datasets shared by every rho of one (size, seed) cell."""
    out = {}
    if cfg.kind in ("hybrid", "random"):
        out["random"] = D.generate_random(game, size, derive_seed(seed, "random", size))
    if cfg.kind in ("hybrid", "expert"):
        threshold = cfg.expert_threshold if game.enumerable else None
        profile = expert_profile(cfg.game, cfg.expert_threshold, cfg.expert_iterations)
        out["expert"] = D.generate_expert(game, size, derive_seed(seed, "expert", size), profile, threshold)
    if cfg.kind == "learning":
        out["learning"] = D.generate_learning(game, size, derive_seed(seed, "learning", size))
    return out


def training_dataset(cfg: ExperimentConfig, sources: dict[str, D.Dataset], size: int, seed: int,
                     rho: float | None) -> D.Dataset:
    if cfg.kind == "hybrid":
        return D.mix_hybrid(sources["random"], sources["expert"], rho, size, derive_seed(seed, "mix", size, rho))
    return sources[cfg.kind]


def bc_profile(model: BCModel, game) -> Policy:
    if game.enumerable:
        return bc_policy(model, game)
    return LazyPolicy(game.max_actions, lambda p, t, m: model.action_probs(p, t[None, :].astype(float), m[None, :])[0])


def _net_policy(nets, game) -> Policy:
    def row(p, t, m):
        if nets[p] is None:
            return m / m.sum()
        return masked_softmax(nets[p].logits(t[None, :].astype(float)), m[None, :].astype(bool))[0]
    return LazyPolicy(game.max_actions, row)


def solve_on_model(solver: str, model, game, cfg: ExperimentConfig, seed: int) -> tuple[Policy, dict]:
    """Run one model-based solver; returns (profile, model stats)."""
    model.stats = ModelStats()
    mg = ModelGame(model, game)
    if solver == "psro":
        res = oef_psro(mg, seed=seed, cfg=PSROConfig(**cfg.psro))
        return res.profile, res.model_stats
    res = oef_cfr(mg, cfg=DeepCFRConfig(**cfg.cfr), seed=seed)
    profile = res.profile if game.enumerable else _net_policy(res.solver.strategy_nets, game)
    return profile, res.model_stats


# ---- experiment -------------------------------------------------------------

@dataclass
class CellResult:
    rows: list[dict]
    alpha_rows: list[dict]
    manifest: dict
    wall_time: float


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]
    alpha_rows: list[dict]
    manifests: list[dict]
    wall_time: float

    def best_alphas(self) -> dict[tuple, float]:
        return {(r["size"], r["rho"], r["seed"], r["solver"]): r["best_alpha"]
                for r in self.rows if r["method"] == "bc+mb"}


def _stage(name: str, manifest: dict, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        manifest["failed_stage"] = name
        raise StageError(name, manifest, exc) from exc


def run_cell(cfg: ExperimentConfig, size: int, seed: int) -> CellResult:
    """Every rho and solver for one (size, seed); sequential across stages."""
    start = time.perf_counter()
    game = make_game(cfg.game)
    bc_base, env_base = train_configs(cfg, size)
    manifest = {"game": cfg.game, "kind": cfg.kind, "size": size, "seed": seed, "datasets": {}, "runs": []}
    sources = _stage("generate", manifest, source_datasets, cfg, game, size, seed)
    for name, ds in sources.items():
        manifest["datasets"][name] = {"seed": ds.meta.seed, "size": len(ds), "checksum": ds.checksum()}
    base = {"game": cfg.game, "kind": cfg.kind, "size": size, "seed": seed}
    rows, alpha_rows = [], []
    for rho in cfg.rhos:
        run = {"rho": rho}
        manifest["runs"].append(run)
        ds = _stage("mix", manifest, training_dataset, cfg, sources, size, seed, rho)
        run["dataset"] = {"kind": ds.meta.kind, "seed": ds.meta.seed, "size": len(ds), "checksum": ds.checksum()}

        bc_cfg = TrainConfig(**{**bc_base.to_dict(), "seed": derive_seed(seed, "bc", size, rho)})
        bc_model = _stage("train-bc", manifest, train_bc, ds, game, bc_cfg)
        bc = bc_profile(bc_model, game)
        run["bc"] = {"train": bc_cfg.to_dict(),
                     "param_hashes": [n.param_hash() if n else None for n in bc_model.nets]}
        bc_nc, approximate = _stage("evaluate", manifest, evaluate_policy, game, bc, cfg.approx)
        run["bc"]["nash_conv"] = bc_nc
        rows.append({**base, "rho": rho, "method": "bc", "solver": "", "nash_conv": bc_nc,
                     "best_alpha": None, "approximate": approximate, "fault_rate": None})

        env_cfg = TrainConfig(**{**env_base.to_dict(), "seed": derive_seed(seed, "env", size, rho)})
        model = _stage("train-env", manifest, train_env, ds, game, env_cfg)
        run["env"] = {"train": env_cfg.to_dict(), "param_hash": model.net.param_hash(),
                      "candidates_checksum": model.candidates_checksum()}

        run["solvers"] = {}
        for solver in cfg.solvers:
            solver_seed = derive_seed(seed, solver, size, rho)
            mb, stats = _stage(f"solve-{solver}", manifest, solve_on_model, solver, model, game, cfg, solver_seed)
            mb_nc, _ = _stage("evaluate", manifest, evaluate_policy, game, mb, cfg.approx)
            best, table = _stage("combine", manifest, select_best_alpha, bc, mb, game, cfg.alpha_grid,
                                 approx=cfg.approx)
            run["solvers"][solver] = {"seed": solver_seed, "model_stats": stats, "nash_conv": mb_nc,
                                      "best_alpha": best, "alpha_table": [[a, v] for a, v in table.items()]}
            fault = stats.get("fault_rate")
            rows.append({**base, "rho": rho, "method": "mb", "solver": solver, "nash_conv": mb_nc,
                         "best_alpha": None, "approximate": approximate, "fault_rate": fault})
            rows.append({**base, "rho": rho, "method": "bc+mb", "solver": solver, "nash_conv": table[best],
                         "best_alpha": best, "approximate": approximate, "fault_rate": fault})
            alpha_rows.extend({**base, "rho": rho, "solver": solver, "alpha": a, "nash_conv": v}
                              for a, v in table.items())
    return CellResult(rows, alpha_rows, manifest, time.perf_counter() - start)


def _cell_task(payload: tuple[dict, int, int]) -> CellResult:
    raw, size, seed = payload
    return run_cell(ExperimentConfig(**raw), size, seed)


def _run_tasks(tasks: list[tuple[dict, int, int]], workers: int) -> list[CellResult]:
    """Run cells, in parallel when ``workers`` > 1; results keep task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [_cell_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_cell_task, tasks))


def _cells(cfg: ExperimentConfig) -> list[tuple[dict, int, int]]:
    return [(cfg.to_dict(), size, seed) for size in cfg.sizes for seed in cfg.seeds]


def _collect(cfg: ExperimentConfig, cells: list[CellResult], wall: float) -> ExperimentResult:
    return ExperimentResult(cfg, [r for c in cells for r in c.rows], [r for c in cells for r in c.alpha_rows],
                            [c.manifest for c in cells], wall)


def run_experiment(config, out_dir: str | Path | None = None, workers: int | None = None) -> ExperimentResult:
    """Run every (size, seed) cell of ``config`` and optionally write outputs.

    A failing stage raises StageError; with ``out_dir`` the partial manifest
    is written to ``failed_manifest.json`` first.
    """
    cfg = load_config(config)
    start = time.perf_counter()
    try:
        cells = _run_tasks(_cells(cfg), workers or cfg.workers)
    except StageError as err:
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "failed_manifest.json").write_text(
                _canonical({"config": cfg.to_dict(), "stage": err.stage, "cell": err.manifest}))
        raise
    result = _collect(cfg, cells, time.perf_counter() - start)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def sweep(configs: Sequence, out_dir: str | Path, workers: int = 1) -> list[ExperimentResult]:
    """Run several configs through one worker pool; each config writes into
    ``out_dir/<name>`` and all rows are merged into ``out_dir/results.csv``."""
    cfgs = [load_config(c) for c in configs]
    names = [c.name for c in cfgs]
    if len(set(names)) != len(names):
        raise ValueError(f"config names must be unique, got {names}")
    start = time.perf_counter()
    tasks, owner = [], []
    for k, cfg in enumerate(cfgs):
        cells = _cells(cfg)
        tasks.extend(cells)
        owner.extend([k] * len(cells))
    cells = _run_tasks(tasks, workers)
    wall = time.perf_counter() - start
    results = [_collect(cfg, [c for c, o in zip(cells, owner) if o == k], wall) for k, cfg in enumerate(cfgs)]
    out = Path(out_dir)
    for res in results:
        write_outputs(res, out / res.config.name)
    write_csv(out / "results.csv", RESULT_FIELDS, [r for res in results for r in res.rows])
    return results


# ---- files ------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(fields: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(f)) for f in fields])
    return buf.getvalue()


def write_csv(path: str | Path, fields: Sequence[str], rows: Iterable[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(csv_text(fields, rows))


def manifest_document(result: ExperimentResult) -> dict:
    return {"format": "oef-experiment/1", "package_version": __version__,
            "generator_version": D.GENERATOR_VERSION, "config": result.config.to_dict(),
            "cells": result.manifests}


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", RESULT_FIELDS, result.rows)
    write_csv(out / "alphas.csv", ALPHA_FIELDS, result.alpha_rows)
    (out / "manifest.json").write_text(_canonical(manifest_document(result)))
    (out / "timing.json").write_text(json.dumps({"wall_time": result.wall_time}) + "\n")


_INT = {"size", "seed", "n"}
_FLOAT = {"rho", "nash_conv", "best_alpha", "fault_rate", "alpha", "x", "mean", "std"}


def _parse(field_name: str, text: str):
    if text == "":
        return None if field_name in _INT | _FLOAT else text
    if field_name in _INT:
        return int(text)
    if field_name in _FLOAT:
        return float(text)
    if field_name == "approximate":
        return text == "true"
    return text


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(f)]


def verify_manifest(doc: dict) -> None:
    """Regenerate every dataset named in an experiment manifest and check its
    checksum; raises ValueError on the first mismatch."""
    cfg = ExperimentConfig(**doc["config"])
    game = make_game(cfg.game)
    for cell in doc["cells"]:
        size, seed = cell["size"], cell["seed"]
        sources = source_datasets(cfg, game, size, seed)
        for name, info in cell["datasets"].items():
            if sources[name].checksum() != info["checksum"]:
                raise ValueError(f"dataset {name!r} of cell (size={size}, seed={seed}) does not reproduce")
        for run in cell["runs"]:
            ds = training_dataset(cfg, sources, size, seed, run["rho"])
            if ds.checksum() != run["dataset"]["checksum"]:
                raise ValueError(f"training data of cell (size={size}, seed={seed}, rho={run['rho']}) "
                                 "does not reproduce")


# ---- plot data --------------------------------------------------------------

def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text) or "none"


def _stats(values: list[float]) -> tuple[int, float, float]:
    v = np.asarray(values, dtype=float)
    std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return len(v), float(v.mean()), std


def plot_panels(rows: Sequence[dict], methods: Sequence[str] | None = None) -> dict[str, list[dict]]:
    """{file name: rows} with one panel per (game, kind, method, solver,
    metric, x axis). Axis x = rho draws one series per size and axis
    x = size one series per rho; y is the mean and sample std over seeds."""
    if not rows:
        raise ValueError("no results to plot")
    if methods is not None:
        methods = list(methods)
        if not methods:
            raise ValueError("empty method filter")
        unknown = set(methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        rows = [r for r in rows if r["method"] in methods]
        if not rows:
            raise ValueError(f"no rows for methods {methods}")
    groups: dict[tuple, dict[tuple, list[float]]] = {}
    for r in rows:
        metrics = ["nash_conv"] + (["best_alpha"] if r["method"] == "bc+mb" else [])
        panel = (r["game"], r["kind"], r["method"], r["solver"] or "")
        for metric in metrics:
            axes = [("size", r["size"], "rho", r["rho"])]
            if r["rho"] is not None:
                axes.insert(0, ("rho", r["rho"], "size", r["size"]))
            for x_name, x, s_name, s in axes:
                key = panel + (metric, x_name, s_name)
                groups.setdefault(key, {}).setdefault((x, s), []).append(r[metric])
    panels = {}
    for (game, kind, method, solver, metric, x_name, s_name), points in sorted(groups.items()):
        fname = f"{_slug(game)}__{kind}__{_slug(method)}__{_slug(solver)}__{metric}_vs_{x_name}.csv"
        out = []
        for (x, s) in sorted(points, key=lambda k: (k[0], -1 if k[1] is None else k[1])):
            n, mean, std = _stats(points[(x, s)])
            out.append({"game": game, "kind": kind, "method": method, "solver": solver, "metric": metric,
                        "x_name": x_name, "x": x, "series_name": s_name, "series": s,
                        "n": n, "mean": mean, "std": std})
        panels[fname] = out
    return panels


def emit_plot_data(rows: Sequence[dict], out_dir: str | Path,
                   methods: Sequence[str] | None = None) -> list[Path]:
    """Write one CSV per panel (header PLOT_FIELDS); returns the paths."""
    out = Path(out_dir)
    paths = []
    for fname, panel in plot_panels(rows, methods).items():
        write_csv(out / fname, PLOT_FIELDS, panel)
        paths.append(out / fname)
    return paths
