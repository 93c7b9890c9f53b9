"""Deep CFR on a (learned) game model.

Every iteration runs K external-sampling traversals per player on the model.
Traverser nodes branch over all legal actions and store sampled regrets;
opponent nodes store their current strategy. The regret net of the traverser
is then refit from a fresh initialisation. After the last iteration one
average-strategy net per player is fit to the strategy memory, and its
masked softmax is tabulated as the output policy.

Samples carry their iteration t as weight. Memory rows that share an infoset
tensor and mask are aggregated into one row (weighted mean target, summed
weight) before full-batch training: for both squared error and soft-target
cross-entropy this leaves the loss unchanged up to a constant, so the
gradient is exactly that of the full memory.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from oef.envmodel import DecodeFaultError
from oef.exact import nash_conv, regret_matching
from oef.games.base import CHANCE, TERMINAL
from oef.nn import Head, Net, TrainConfig, masked_softmax, train
from oef.policy import Policy
from oef.tree import TreeBudgetError


@dataclass
class DeepCFRConfig:
    iterations: int = 100
    traversals: int = 200
    hidden_size: int = 64
    regret_epochs: int = 1000
    regret_learning_rate: float = 0.1
    strategy_epochs: int = 1000
    strategy_learning_rate: float = 0.05
    memory_capacity: int | None = None
    fault_cap: float = 0.05
    # nodes one traversal may touch before the run aborts as a model blow-up
    max_traversal_nodes: int | None = None

    def __post_init__(self):
        for name in ("iterations", "traversals", "hidden_size", "regret_epochs", "strategy_epochs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.memory_capacity is not None and self.memory_capacity < 1:
            raise ValueError("memory_capacity must be positive")
        if self.max_traversal_nodes is not None and self.max_traversal_nodes < 1:
            raise ValueError("max_traversal_nodes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class Memory:
    """(infoset tensor, legal mask, vector, iteration) samples.

    Unbounded by default; with ``capacity`` it keeps a uniform reservoir
    sample of everything inserted.
    """

    def __init__(self, capacity: int | None = None, rng: np.random.Generator | None = None):
        self.capacity = capacity
        self.rng = rng or np.random.default_rng(0)
        self.items: list[tuple[np.ndarray, np.ndarray, np.ndarray, int]] = []
        self.seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, tensor: np.ndarray, mask: np.ndarray, vector: np.ndarray, t: int) -> None:
        if t < 1:
            raise ValueError("iterations start at 1")
        item = (tensor, mask, vector, t)
        self.seen += 1
        if self.capacity is None or len(self.items) < self.capacity:
            self.items.append(item)
            return
        j = int(self.rng.integers(self.seen))
        if j < self.capacity:
            self.items[j] = item

    def aggregate(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Distinct (tensor, mask) rows with t-weighted mean vectors and total weight."""
        groups: dict[bytes, list] = {}
        for tensor, mask, vec, t in self.items:
            key = tensor.tobytes() + mask.tobytes()
            g = groups.get(key)
            if g is None:
                groups[key] = [tensor, mask, t * vec.astype(float), float(t)]
            else:
                g[2] = g[2] + t * vec
                g[3] += t
        keys = sorted(groups)
        X = np.array([groups[k][0] for k in keys], dtype=float)
        M = np.array([groups[k][1] for k in keys], dtype=bool)
        W = np.array([groups[k][3] for k in keys])
        Y = np.array([groups[k][2] for k in keys]) / W[:, None]
        return X, M, Y, W


@dataclass
class Counters:
    traverser_nodes: int = 0
    traverser_branches: int = 0
    opponent_nodes: int = 0
    opponent_samples: int = 0
    chance_nodes: int = 0
    chance_samples: int = 0


def sample_chance(game, h, rng: np.random.Generator) -> int:
    """Draw one outcome from the (model's) chance distribution at ``h``."""
    outcomes = game.chance_distribution(h)
    probs = np.array([q for _, q in outcomes])
    return outcomes[rng.choice(len(outcomes), p=probs / probs.sum())][0]


class DeepCFR:
    def __init__(self, game, cfg: DeepCFRConfig | None = None, seed: int = 0):
        self.game = game
        self.cfg = cfg or DeepCFRConfig()
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        n = game.num_players
        self.regret_memory = [Memory(self.cfg.memory_capacity, np.random.default_rng([seed, 1, p]))
                              for p in range(n)]
        self.strategy_memory = [Memory(self.cfg.memory_capacity, np.random.default_rng([seed, 2, p]))
                                for p in range(n)]
        self.regret_nets: list[Net | None] = [None] * n
        self.strategy_nets: list[Net | None] = [None] * n
        self.counters = Counters()
        self.init_hashes: list[list[str]] = [[] for _ in range(n)]
        self.trained_hashes: list[list[str]] = [[] for _ in range(n)]
        self.infosets: dict[str, tuple[int, np.ndarray, np.ndarray]] = {}
        self.iteration = 0
        self._visits = 0
        # keyed by legal set too: a learned model may predict different masks within one infoset
        self._cache: dict[tuple[int, str, tuple[int, ...]], np.ndarray] = {}

    # ---- strategies -------------------------------------------------------
    def strategy(self, h, p: int) -> tuple[str, np.ndarray, np.ndarray, list[int], np.ndarray]:
        """Infoset key, tensor, mask, legal actions and the regret-matching
        strategy over them."""
        key = self.game.key_string(h, p)
        legal = self.game.legal_actions(h)
        tensor = np.asarray(self.game.infoset_tensor(h, p))
        mask = np.zeros(self.game.max_actions, dtype=np.uint8)
        mask[legal] = 1
        if key not in self.infosets:
            self.infosets[key] = (p, tensor, mask)
        sigma = self._cache.get((p, key, tuple(legal)))
        if sigma is None:
            net = self.regret_nets[p]
            if net is None:
                sigma = np.full(len(legal), 1.0 / len(legal))
            else:
                adv = net.logits(tensor[None, :].astype(float))[0]
                sigma = regret_matching(adv[legal])
            self._cache[(p, key, tuple(legal))] = sigma
        return key, tensor, mask, legal, sigma

    # ---- traversal ------------------------------------------------------
    def traverse(self, h, traverser: int, t: int) -> float:
        """One external-sampling pass from ``h``; returns the traverser's sampled value."""
        g = self.game
        self._visits += 1
        cap = self.cfg.max_traversal_nodes
        if cap is not None and self._visits > cap:
            raise TreeBudgetError(f"model-blowup: traversal exceeded {cap} nodes")
        p = g.current_player(h)
        if p == TERMINAL:
            return float(g.returns(h)[traverser])
        c = self.counters
        if p == CHANCE:
            c.chance_nodes += 1
            c.chance_samples += 1
            return self.traverse(g.apply_action(h, sample_chance(g, h, self.rng)), traverser, t)
        _, tensor, mask, legal, sigma = self.strategy(h, p)
        if p == traverser:
            c.traverser_nodes += 1
            u = np.zeros(len(legal))
            for k, a in enumerate(legal):
                c.traverser_branches += 1
                u[k] = self.traverse(g.apply_action(h, a), traverser, t)
            u_sigma = float(sigma @ u)
            regret = np.zeros(g.max_actions)
            regret[legal] = u - u_sigma
            self.regret_memory[p].add(tensor, mask, regret, t)
            return u_sigma
        c.opponent_nodes += 1
        c.opponent_samples += 1
        full = np.zeros(g.max_actions)
        full[legal] = sigma
        self.strategy_memory[p].add(tensor, mask, full, t)
        a = legal[self.rng.choice(len(legal), p=sigma)]
        return self.traverse(g.apply_action(h, a), traverser, t)

    # ---- training -------------------------------------------------------
    def _net_seed(self, kind: int, p: int, t: int) -> int:
        return int(np.random.SeedSequence([self.seed, kind, p, t]).generate_state(1)[0])

    def fit_regret_net(self, p: int, t: int) -> Net:
        """Refit player ``p``'s regret net from a fresh initialisation."""
        cfg = self.cfg
        net = Net(self.game.infoset_dim, [cfg.hidden_size], Head("regret", self.game.max_actions, "linear"),
                  seed=self._net_seed(1, p, t))
        self.init_hashes[p].append(net.param_hash())
        X, _, Y, W = self.regret_memory[p].aggregate()
        tc = TrainConfig(len(X), cfg.regret_epochs, cfg.regret_learning_rate, self._net_seed(3, p, t),
                         cfg.hidden_size)
        train(net, X, {"regret": Y}, tc, sample_weight=W)
        self.trained_hashes[p].append(net.param_hash())
        return net

    def fit_strategy_net(self, p: int) -> Net | None:
        cfg = self.cfg
        if len(self.strategy_memory[p]) == 0:
            return None
        X, M, Y, W = self.strategy_memory[p].aggregate()
        net = Net(self.game.infoset_dim, [cfg.hidden_size], Head("policy", self.game.max_actions, "softmax"),
                  seed=self._net_seed(2, p, 0))
        tc = TrainConfig(len(X), cfg.strategy_epochs, cfg.strategy_learning_rate, self._net_seed(4, p, 0),
                         cfg.hidden_size)
        train(net, X, {"policy": Y}, tc, sample_weight=W, legal_mask={"policy": M})
        return net

    def _check_faults(self) -> None:
        stats = getattr(self.game, "stats", None)
        if stats is not None and stats.steps and stats.fault_rate > self.cfg.fault_cap:
            raise DecodeFaultError(f"decode-fault: rate {stats.fault_rate:.3%} exceeds cap "
                                   f"{self.cfg.fault_cap:.0%} ({stats.to_dict()})")

    def iterate(self) -> None:
        self.iteration += 1
        t = self.iteration
        for p in range(self.game.num_players):
            for _ in range(self.cfg.traversals):
                self._visits = 0
                self.traverse(self.game.new_initial_state(), p, t)
            self._check_faults()
            if len(self.regret_memory[p]):
                self.regret_nets[p] = self.fit_regret_net(p, t)
            self._cache = {k: v for k, v in self._cache.items() if k[0] != p}

    def run(self, iterations: int | None = None) -> "DeepCFR":
        for _ in range(self.cfg.iterations if iterations is None else iterations):
            self.iterate()
        self.strategy_nets = [self.fit_strategy_net(p) for p in range(self.game.num_players)]
        return self

    # ---- output ---------------------------------------------------------
    def _tabulate(self, nets, infosets) -> Policy:
        infosets = self.infosets if infosets is None else infosets
        pol = Policy(self.game.max_actions)
        for p, net in enumerate(nets):
            keys = [k for k, (q, _, _) in infosets.items() if q == p]
            if net is None or not keys:
                continue
            X = np.array([infosets[k][1] for k in keys], dtype=float)
            M = np.array([infosets[k][2] for k in keys], dtype=bool)
            for k, row in zip(keys, masked_softmax(net.logits(X), M)):
                pol[k] = row
        return pol

    def average_policy(self, infosets: dict[str, tuple[int, np.ndarray, np.ndarray]] | None = None) -> Policy:
        """Masked softmax of the strategy nets over ``infosets`` (default: every
        infoset the traversals visited). Players without a net play uniformly."""
        return self._tabulate(self.strategy_nets, infosets)

    def snapshot_policy(self, infosets=None) -> Policy:
        """Average policy from strategy nets fit to the memory so far; the
        solver's own nets are left untouched."""
        return self._tabulate([self.fit_strategy_net(p) for p in range(self.game.num_players)], infosets)


@dataclass
class DeepCFRResult:
    profile: Policy
    solver: DeepCFR
    history: list[dict] = field(default_factory=list)
    model_stats: dict = field(default_factory=dict)


def oef_cfr(model_game, iterations: int | None = None, traversals: int | None = None,
            cfg: DeepCFRConfig | None = None, seed: int = 0, evaluate_game=None,
            eval_every: int = 0) -> DeepCFRResult:
    """Deep CFR on ``model_game``; returns the tabulated average-strategy profile.

    The output is tabulated over every infoset of the true game when it can be
    enumerated, and over the infosets visited on the model otherwise. With
    ``evaluate_game`` and ``eval_every`` the NashConv of an intermediate
    average strategy is recorded every ``eval_every`` iterations.
    """
    cfg = cfg or DeepCFRConfig()
    overrides = {}
    if iterations is not None:
        overrides["iterations"] = iterations
    if traversals is not None:
        overrides["traversals"] = traversals
    if overrides:
        cfg = DeepCFRConfig(**{**cfg.to_dict(), **overrides})
    solver = DeepCFR(model_game, cfg, seed)
    true_game = getattr(model_game, "game", model_game)

    def table():
        if getattr(true_game, "enumerable", False):
            return true_game.reachable_infosets()
        return None

    history = []
    for t in range(1, cfg.iterations + 1):
        solver.iterate()
        if evaluate_game is not None and eval_every and t % eval_every == 0 and t < cfg.iterations:
            history.append({"iteration": t,
                            "nash_conv": nash_conv(evaluate_game, solver.snapshot_policy(table())).nash_conv})
    solver.strategy_nets = [solver.fit_strategy_net(p) for p in range(model_game.num_players)]
    profile = solver.average_policy(table())
    if evaluate_game is not None:
        history.append({"iteration": cfg.iterations, "nash_conv": nash_conv(evaluate_game, profile).nash_conv})
    stats = model_game.stats.to_dict() if hasattr(model_game, "stats") else {}
    return DeepCFRResult(profile, solver, history, stats)
