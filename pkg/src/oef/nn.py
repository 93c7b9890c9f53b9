"""Small multi-head feedforward networks trained with plain SGD.

One or more ReLU hidden layers feed a set of output heads. Each head kind has
a fixed loss: softmax heads use cross-entropy (optionally over a legal-action
mask), linear heads use squared error and sigmoid heads use binary
cross-entropy. All heads share one output matrix, so a forward pass is two
matrix products for the usual single-hidden-layer shape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

HEAD_KINDS = ("softmax", "linear", "sigmoid")
LOSS_OF_HEAD = {"softmax": "cross_entropy", "linear": "mse", "sigmoid": "bce"}
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when the loss or the parameters stop being finite."""


@dataclass(frozen=True)
class Head:
    name: str
    size: int
    kind: str

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("head size must be positive")


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 1000
    learning_rate: float = 0.01
    seed: int = 0
    hidden_size: int = 32

    def __post_init__(self):
        for name in ("batch_size", "epochs", "hidden_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def masked_softmax(logits, legal_mask=None) -> np.ndarray:
    """Softmax over the set bits of ``legal_mask``; illegal entries are exactly 0."""
    z = np.asarray(logits, dtype=float)
    if legal_mask is None:
        m = np.ones(z.shape, dtype=bool)
    else:
        m = np.asarray(legal_mask).astype(bool)
        if not np.all(m.any(axis=-1)):
            raise ValueError("legal mask has no set bit")
    zm = np.where(m, z, -np.inf)
    zm = zm - zm.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(zm), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-_softplus(-z))


class Net:
    """ReLU MLP with named output heads."""

    def __init__(self, input_dim: int, hidden: Sequence[int], heads: Sequence[Head] | Head,
                 seed: int = 0):
        if isinstance(heads, Head):
            heads = [heads]
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.heads = tuple(heads)
        names = [h.name for h in self.heads]
        if len(set(names)) != len(names):
            raise ValueError("duplicate head names")
        self.slices: dict[str, slice] = {}
        start = 0
        for h in self.heads:
            self.slices[h.name] = slice(start, start + h.size)
            start += h.size
        self.output_dim = start
        self.seed = seed
        self.reset(seed)

    # ---- parameters --------------------------------------------------------
    def reset(self, seed: int) -> None:
        """Fresh fan-in scaled uniform initialisation."""
        rng = np.random.default_rng(seed)
        sizes = (self.input_dim, *self.hidden, self.output_dim)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.params():
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "Net":
        other = Net.__new__(Net)
        other.__dict__.update(self.__dict__)
        other.weights = [W.copy() for W in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    @property
    def single(self) -> Head:
        if len(self.heads) != 1:
            raise ValueError("net has several heads")
        return self.heads[0]

    # ---- forward -----------------------------------------------------------
    def _hidden(self, X):
        acts = [X]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(np.maximum(acts[-1] @ W + b, 0.0))
        return acts

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.input_dim:
            raise ValueError(f"shape mismatch: expected input length {self.input_dim}, got {X.shape[-1]}")
        return X

    def logits(self, X) -> np.ndarray:
        X = self._check_input(X)
        h = self._hidden(np.atleast_2d(X))[-1]
        Z = h @ self.weights[-1] + self.biases[-1]
        return Z[0] if X.ndim == 1 else Z

    def forward_all(self, X, masks: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        """Activated output of every head. ``masks`` restricts softmax heads."""
        Z = self.logits(X)
        masks = masks or {}
        out = {}
        for head in self.heads:
            z = Z[..., self.slices[head.name]]
            if head.kind == "softmax":
                out[head.name] = masked_softmax(z, masks.get(head.name))
            elif head.kind == "sigmoid":
                out[head.name] = _sigmoid(z)
            else:
                out[head.name] = z.copy()
        return out

    def forward(self, X, mask=None) -> np.ndarray:
        """Output of a single-head net."""
        head = self.single
        return self.forward_all(X, {head.name: mask} if mask is not None else None)[head.name]

    # ---- loss and gradient ---------------------------------------------------
    def loss_and_grads(self, X, targets: Mapping[str, np.ndarray],
                       sample_weight=None, head_weight: Mapping[str, float] | None = None,
                       head_mask: Mapping[str, np.ndarray] | None = None,
                       legal_mask: Mapping[str, np.ndarray] | None = None,
                       want_grads: bool = True):
        """Weighted mean loss over the batch and its parameter gradients.

        loss = Σ_heads w_h Σ_n s_n m_nh ℓ_h(n) / Σ_n s_n, where ``head_mask``
        gives m_nh (which samples train which head) and ``sample_weight`` s_n.
        """
        X = np.atleast_2d(self._check_input(X))
        N = X.shape[0]
        s = np.ones(N) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        norm = s.sum()
        if norm <= 0:
            raise ValueError("sample weights sum to zero")
        head_weight = head_weight or {}
        head_mask = head_mask or {}
        legal_mask = legal_mask or {}
        acts = self._hidden(X)
        H = acts[-1]
        Z = H @ self.weights[-1] + self.biases[-1]
        dZ = np.zeros_like(Z)
        total = 0.0
        for head in self.heads:
            if head.name not in targets:
                continue
            sl = self.slices[head.name]
            z = Z[:, sl]
            y = np.asarray(targets[head.name], dtype=float).reshape(N, head.size)
            w = s * float(head_weight.get(head.name, 1.0))
            if head.name in head_mask:
                w = w * np.asarray(head_mask[head.name], dtype=float)
            if head.kind == "softmax":
                m = legal_mask.get(head.name)
                m = np.ones(z.shape, dtype=bool) if m is None else np.asarray(m).astype(bool)
                empty = ~m.any(axis=1)
                m = m | empty[:, None]
                y = np.where(m, y, 0.0)
                ys = y.sum(axis=1, keepdims=True)
                y = np.where(ys > 0, y / np.where(ys > 0, ys, 1.0), 0.0)
                zm = np.where(m, z, -np.inf)
                zmax = zm.max(axis=1, keepdims=True)
                e = np.where(m, np.exp(zm - zmax), 0.0)
                se = e.sum(axis=1, keepdims=True)
                p = e / se
                lse = (np.log(se) + zmax)[:, 0]
                ell = lse * y.sum(axis=1) - (np.where(m, z, 0.0) * y).sum(axis=1)
                g = p * y.sum(axis=1, keepdims=True) - y
            elif head.kind == "linear":
                diff = z - y
                ell = (diff ** 2).mean(axis=1)
                g = 2.0 * diff / head.size
            else:
                ell = (_softplus(z) - y * z).mean(axis=1)
                g = (_sigmoid(z) - y) / head.size
            total += float((w * ell).sum()) / norm
            dZ[:, sl] = g * (w / norm)[:, None]
        if not want_grads:
            return total, None
        grads = [None] * (2 * len(self.weights))
        delta = dZ
        for k in range(len(self.weights) - 1, -1, -1):
            grads[2 * k] = acts[k].T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (acts[k] > 0)
        return total, grads

    def loss(self, X, targets, **kw) -> float:
        return self.loss_and_grads(X, targets, want_grads=False, **kw)[0]

    def sgd_step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        for p, g in zip(self.params(), grads):
            p -= lr * g

    # ---- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "oef-net",
            "version": FORMAT_VERSION,
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "heads": [asdict(h) for h in self.heads],
            "seed": self.seed,
            "weights": [{"shape": list(W.shape), "data": W.ravel().tolist()} for W in self.weights],
            "biases": [{"shape": list(b.shape), "data": b.tolist()} for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Net":
        if d.get("format") != "oef-net" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not an oef-net file of a supported version")
        net = cls(d["input_dim"], d["hidden"], [Head(**h) for h in d["heads"]], seed=d.get("seed", 0))
        if len(d["weights"]) != len(net.weights) or len(d["biases"]) != len(net.biases):
            raise ValueError("layer count does not match the architecture")
        for k, (w, b) in enumerate(zip(d["weights"], d["biases"])):
            if tuple(w["shape"]) != net.weights[k].shape or tuple(b["shape"]) != net.biases[k].shape:
                raise ValueError(f"shape mismatch in layer {k}")
            W = np.asarray(w["data"], dtype=float)
            B = np.asarray(b["data"], dtype=float)
            if W.size != net.weights[k].size or B.size != net.biases[k].size:
                raise ValueError(f"parameter count mismatch in layer {k}")
            net.weights[k] = W.reshape(net.weights[k].shape)
            net.biases[k] = B
        return net

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Net":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EpochStats:
    mean_loss: float
    min_loss: float
    max_loss: float
    batches: int


def _take(d: Mapping[str, np.ndarray] | None, idx) -> dict | None:
    if d is None:
        return None
    return {k: np.asarray(v)[idx] for k, v in d.items()}


def train_epoch(net: Net, X, targets: Mapping[str, np.ndarray], cfg: TrainConfig,
                rng: np.random.Generator, *, sample_weight=None, head_weight=None,
                head_mask=None, legal_mask=None) -> EpochStats:
    """One shuffled pass of mini-batch SGD over the data."""
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    order = rng.permutation(N)
    losses = []
    for start in range(0, N, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        sw = None if sample_weight is None else np.asarray(sample_weight)[idx]
        if sw is not None and sw.sum() <= 0:
            continue
        # divergence is reported below as TrainingError, not as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grads = net.loss_and_grads(
                X[idx], _take(targets, idx), sample_weight=sw, head_weight=head_weight,
                head_mask=_take(head_mask, idx), legal_mask=_take(legal_mask, idx))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} at batch starting {start}; "
                                f"max |param| {max(np.abs(p).max() for p in net.params()):.3g}")
        net.sgd_step(grads, cfg.learning_rate)
        losses.append(loss)
    if not all(np.all(np.isfinite(p)) for p in net.params()):
        raise TrainingError("parameters became non-finite")
    arr = np.asarray(losses) if losses else np.zeros(1)
    return EpochStats(float(arr.mean()), float(arr.min()), float(arr.max()), len(losses))


def train(net: Net, X, targets: Mapping[str, np.ndarray], cfg: TrainConfig, **kw) -> list[float]:
    """``cfg.epochs`` passes of SGD; returns the mean loss of every epoch."""
    rng = np.random.default_rng(cfg.seed)
    return [train_epoch(net, X, targets, cfg, rng, **kw).mean_loss for _ in range(cfg.epochs)]


def gradient_check(net: Net, X, targets, *, num_coords: int = 100, h: float = 1e-5,
                   seed: int = 0, **kw) -> float:
    """Max relative error between analytic and central-difference gradients
    over ``num_coords`` randomly chosen parameter coordinates."""
    rng = np.random.default_rng(seed)
    _, grads = net.loss_and_grads(X, targets, **kw)
    params = net.params()
    sizes = np.array([p.size for p in params])
    worst = 0.0
    for _ in range(num_coords):
        k = int(rng.choice(len(params), p=sizes / sizes.sum()))
        j = int(rng.integers(params[k].size))
        flat = params[k].reshape(-1)
        old = flat[j]
        flat[j] = old + h
        up = net.loss(X, targets, **kw)
        flat[j] = old - h
        down = net.loss(X, targets, **kw)
        flat[j] = old
        numeric = (up - down) / (2 * h)
        analytic = grads[k].reshape(-1)[j]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
