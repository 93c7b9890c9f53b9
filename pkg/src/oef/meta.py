"""Meta-game solvers for policy-space response oracles.

A meta-game is a payoff tensor ``U`` of shape ``(n, |Π_1|, ..., |Π_n|)``:
``U[i][k_1, ..., k_n]`` is player i's expected utility when every player j
plays its k_j-th policy.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

METHODS = ("uniform", "matrix_nash_2p0s", "alpha_rank")


class MetaGameError(ValueError):
    pass


def _check(U: np.ndarray) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    if U.ndim < 2 or U.shape[0] != U.ndim - 1:
        raise MetaGameError(f"payoff tensor shape {U.shape} is not (n, |Π_1|, ..., |Π_n|)")
    if not np.all(np.isfinite(U)):
        raise MetaGameError("meta-game has unfilled or non-finite entries")
    return U


def meta_solve(U, method: str, **kw) -> list[np.ndarray]:
    """Per-player distributions over policy lists."""
    U = _check(U)
    if method == "uniform":
        return [np.full(k, 1.0 / k) for k in U.shape[1:]]
    if method == "matrix_nash_2p0s":
        return matrix_nash_2p0s(U, **kw)
    if method == "alpha_rank":
        return alpha_rank(U, **kw)[0]
    raise MetaGameError(f"unknown meta-solver {method!r}")


# ---- two-player zero-sum Nash by regret matching ---------------------------

def matrix_exploitability(A: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Sum of both players' best-response gains in the zero-sum game A (row payoff)."""
    return float((A @ y).max() - (x @ A).min())


def matrix_nash_2p0s(U, tol: float = 1e-3, max_iterations: int = 1_000_000) -> list[np.ndarray]:
    """Nash equilibrium of a two-player zero-sum matrix game by regret matching+
    with linear averaging, iterated until exploitability < ``tol``."""
    U = _check(U)
    if U.shape[0] != 2:
        raise MetaGameError("matrix_nash_2p0s needs exactly two players")
    A = 0.5 * (U[0] - U[1])  # exact for zero-sum tensors; symmetrises small noise
    m, n = A.shape
    rx, ry = np.zeros(m), np.zeros(n)
    sx, sy = np.zeros(m), np.zeros(n)
    x, y = np.full(m, 1.0 / m), np.full(n, 1.0 / n)
    for t in range(1, max_iterations + 1):
        ux = A @ y
        rx = np.maximum(rx + ux - x @ ux, 0.0)
        x = rx / rx.sum() if rx.sum() > 0 else np.full(m, 1.0 / m)
        uy = -(x @ A)
        ry = np.maximum(ry + uy - uy @ y, 0.0)
        y = ry / ry.sum() if ry.sum() > 0 else np.full(n, 1.0 / n)
        sx += t * x
        sy += t * y
        if t % 10 == 0 or t == 1:
            ax, ay = sx / sx.sum(), sy / sy.sum()
            if matrix_exploitability(A, ax, ay) < tol:
                return [ax, ay]
    raise RuntimeError("regret matching did not reach the exploitability tolerance")


# ---- alpha-rank ---------------------------------------------------------

def fixation_probability(delta: np.ndarray, alpha: float, m: int) -> np.ndarray:
    """Probability that a single mutant with payoff advantage ``delta`` takes
    over a population of size ``m`` at selection intensity ``alpha``.

    (1 - e^{-αΔ}) / (1 - e^{-mαΔ}), written in a form that cannot overflow;
    Δ = 0 gives the neutral value 1/m.
    """
    delta = np.asarray(delta, dtype=float)
    x = alpha * delta
    out = np.full(x.shape, 1.0 / m)
    pos = x > 0
    neg = x < 0
    xp = x[pos]
    out[pos] = -np.expm1(-xp) / -np.expm1(-m * xp)
    xn = -x[neg]
    out[neg] = np.exp(-(m - 1) * xn) * (-np.expm1(-xn)) / (-np.expm1(-m * xn))
    return out


def _deviations(sizes: tuple[int, ...]):
    """For every population and target strategy: (source, destination) flat
    profile indices of all unilateral deviations to that strategy."""
    P = int(np.prod(sizes))
    flat = np.arange(P)
    coords = np.unravel_index(flat, sizes)
    out = []
    for pop, k in enumerate(sizes):
        for s in range(k):
            c = list(coords)
            c[pop] = np.full(P, s)
            dst = np.ravel_multi_index(c, sizes)
            keep = dst != flat
            out.append((pop, flat[keep], dst[keep]))
    return out


def _transition_entries(U: np.ndarray, alpha: float, m: int):
    sizes = U.shape[1:]
    denom = sum(k - 1 for k in sizes)
    eta = 1.0 / denom if denom > 0 else 0.0
    rows, cols, vals = [], [], []
    for pop, src, dst in _deviations(sizes):
        u = U[pop].ravel()
        rows.append(src)
        cols.append(dst)
        vals.append(eta * fixation_probability(u[dst] - u[src], alpha, m))
    if not rows:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def alpha_rank_chain(U, alpha: float, m: int = 50) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    """Dense row-stochastic transition matrix over joint strategy profiles."""
    U = _check(U)
    sizes = U.shape[1:]
    P = int(np.prod(sizes))
    r, c, v = _transition_entries(U, alpha, m)
    C = np.zeros((P, P))
    np.add.at(C, (r, c), v)
    C[np.arange(P), np.arange(P)] = 1.0 - C.sum(axis=1)
    profiles = list(itertools.product(*(range(k) for k in sizes)))
    return C, profiles


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible chain by GTH state reduction."""
    A = np.array(P, dtype=float)
    n = A.shape[0]
    for k in range(n - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            raise np.linalg.LinAlgError("chain is reducible")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(n)
    pi[0] = 1.0
    for k in range(1, n):
        pi[k] = pi[:k] @ A[:k, k]
        top = pi[:k + 1].max()
        if top > 1e200:
            pi[:k + 1] /= top
    return pi / pi.sum()


def _sparse_stationary(U: np.ndarray, alpha: float, m: int) -> np.ndarray:
    from scipy.sparse import coo_matrix, diags
    from scipy.sparse.linalg import spsolve

    P = int(np.prod(U.shape[1:]))
    r, c, v = _transition_entries(U, alpha, m)
    C = coo_matrix((v, (r, c)), shape=(P, P)).tocsr()
    out = np.asarray(C.sum(axis=1)).ravel()
    # pi (C - diag(out)) = 0 with the last equation replaced by sum(pi) = 1
    Q = (C - diags(out)).T.tolil()
    Q[P - 1, :] = np.ones(P)
    b = np.zeros(P)
    b[P - 1] = 1.0
    pi = np.maximum(spsolve(Q.tocsc(), b), 0.0)
    return pi / pi.sum()


DEFAULT_ALPHAS = tuple(float(a) for a in np.logspace(-2, 4, 61))
TRANSITION_FLOOR = 1e-100
DENSE_LIMIT = 400


def alpha_rank(U, m: int = 50, alphas: Sequence[float] = DEFAULT_ALPHAS,
               alpha: float | None = None) -> tuple[list[np.ndarray], dict]:
    """Per-population marginals of the alpha-rank stationary distribution.

    Without a fixed ``alpha`` the sweep keeps the largest value for which every
    transition between distinct profiles stays above ``TRANSITION_FLOOR``, so
    the chain remains numerically irreducible.
    """
    U = _check(U)
    sizes = U.shape[1:]
    chosen = alpha
    if chosen is None:
        chosen = min(alphas)
        for a in sorted(alphas):
            _, _, v = _transition_entries(U, a, m)
            if v.size and v.min() < TRANSITION_FLOOR:
                break
            chosen = a
    P = int(np.prod(sizes))
    if P <= DENSE_LIMIT:
        C, _ = alpha_rank_chain(U, chosen, m)
        pi = stationary_distribution(C)
    else:
        pi = _sparse_stationary(U, chosen, m)
    grid = np.unravel_index(np.arange(P), sizes)
    marginals = [np.bincount(grid[pop], weights=pi, minlength=k) for pop, k in enumerate(sizes)]
    return marginals, {"alpha": chosen, "m": m, "stationary": pi}
