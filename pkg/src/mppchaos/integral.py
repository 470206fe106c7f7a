"""Single and iterated stochastic integrals against a discretized martingale measure.

Two evaluators are provided and cross-checked in the tests:

* a vectorized *sweep* over a trie of separable integrands (all paths of a
  batch at once), which carries every running iterated integral through the
  intervals with the Gauss-Legendre collocation matrix and through the atoms
  with descending-depth updates;
* a per-path *nesting matrix* W, W[i, j] = weight of node j in the integral
  over (0, s_i), which evaluates general (non-separable) integrands and the
  jump-capped operator by tensor contraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ArityMismatch, DepthTooLarge
from .martingale import MeasureNodes
from .model import History
from .quadrature import gauss_legendre01, integration_matrix01, integration_row01

MAX_GENERAL_DEPTH = 4


# --------------------------------------------------------------------------
# integrands


class Integrand:
    """Function of n time-mark pairs, argument 0 being the latest (outermost) time.

    ``func(ts, xs)`` receives float and int arrays whose last axis has length n.
    ``factors`` (optional) is a separable form, one vectorized f_k(t, x) per
    argument.  ``predictable`` (arity 1) is f(history_before_t, t, x).
    """

    def __init__(self, arity: int, func=None, factors=None, predictable=None):
        if arity < 1:
            raise ValueError("arity must be >= 1")
        if factors is not None and len(factors) != arity:
            raise ArityMismatch(f"{len(factors)} factors for arity {arity}")
        if predictable is not None and arity != 1:
            raise ArityMismatch("predictable integrands have arity 1")
        if func is None and factors is None and predictable is None:
            raise ValueError("integrand needs func, factors or predictable")
        self.arity = arity
        self.factors = None if factors is None else tuple(factors)
        self.predictable = predictable
        self._func = func

    @classmethod
    def constant(cls, value: float, arity: int = 1) -> "Integrand":
        return cls(arity, factors=[Const(value)] + [Const(1.0)] * (arity - 1))

    @classmethod
    def separable(cls, *factors) -> "Integrand":
        return cls(len(factors), factors=factors)

    @property
    def is_separable(self) -> bool:
        return self.factors is not None

    @property
    def is_predictable(self) -> bool:
        return self.predictable is not None

    def __call__(self, ts, xs):
        ts = np.asarray(ts, dtype=float)
        xs = np.asarray(xs)
        if self._func is not None:
            return np.asarray(self._func(ts, xs), dtype=float)
        if self.factors is None:
            raise TypeError("predictable integrand needs a history; use integrate()")
        out = np.ones(ts.shape[:-1])
        for k, f in enumerate(self.factors):
            out = out * f(ts[..., k], xs[..., k])
        return out

    def __add__(self, other: "Integrand") -> "Integrand":
        if other.arity != self.arity:
            raise ArityMismatch("cannot add integrands of different arity")
        return Integrand(self.arity, func=lambda ts, xs: self(ts, xs) + other(ts, xs))

    def __rmul__(self, a: float) -> "Integrand":
        a = float(a)
        return Integrand(self.arity, func=lambda ts, xs: a * self(ts, xs))


class Const:
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, t, x):
        return np.full(np.broadcast(np.asarray(t), np.asarray(x)).shape, self.value)


class TimePower:
    """t ** p, any mark."""

    def __init__(self, p: int):
        self.p = int(p)

    def __call__(self, t, x):
        return np.broadcast_to(np.asarray(t, dtype=float) ** self.p, np.broadcast(np.asarray(t), np.asarray(x)).shape)


class MarkIndicator:
    def __init__(self, mark: int):
        self.mark = int(mark)

    def __call__(self, t, x):
        return np.broadcast_to((np.asarray(x) == self.mark).astype(float), np.broadcast(np.asarray(t), np.asarray(x)).shape)


@dataclass
class IteratedFamily:
    """g_0 constant and g_i of arity i for i = 1..depth."""

    g0: float
    gs: Sequence[Integrand] = ()

    def __post_init__(self):
        if not math.isfinite(self.g0):
            raise ValueError("g0 must be finite")
        for i, g in enumerate(self.gs, start=1):
            if g.arity != i:
                raise ArityMismatch(f"g_{i} has arity {g.arity}")

    @property
    def depth(self) -> int:
        return len(self.gs)


# --------------------------------------------------------------------------
# flat node view of a single path


@dataclass
class FlatNodes:
    t: np.ndarray
    x: np.ndarray
    w: np.ndarray  # full-interval weight (atom weight or cell weight)
    is_atom: np.ndarray
    interval: np.ndarray
    W: np.ndarray  # strict-before nesting matrix


def flat_nodes(nodes: MeasureNodes) -> FlatNodes:
    """Nonzero nodes in time order (cells of interval k, then its atom) with W."""
    if nodes.n_paths != 1:
        raise ValueError("flat_nodes needs a single-path MeasureNodes")
    q = nodes.q
    K = nodes.lo.shape[1]
    E = nodes.n_marks
    S = integration_matrix01(q)
    cw = nodes.cell_weight[0]
    dens = nodes.density[0]
    L = nodes.length[0]
    t, x, w, atom, itv, key, jj = [], [], [], [], [], [], []
    for k in range(K):
        for j in range(q):
            for m in range(E):
                if dens[k, j, m] != 0.0:
                    t.append(nodes.t[0, k, j]); x.append(m); w.append(cw[k, j, m])
                    atom.append(False); itv.append(k); key.append(2 * k); jj.append(j)
        if nodes.atom_mark[0, k] >= 0:
            t.append(nodes.atom_time[0, k]); x.append(int(nodes.atom_mark[0, k])); w.append(nodes.atom_weight[0, k])
            atom.append(True); itv.append(k); key.append(2 * k + 1); jj.append(-1)
    t = np.array(t, dtype=float); x = np.array(x, dtype=int); w = np.array(w, dtype=float)
    atom = np.array(atom, dtype=bool); itv = np.array(itv, dtype=int)
    key = np.array(key, dtype=int); jj = np.array(jj, dtype=int)
    W = np.where(key[None, :] < key[:, None], w[None, :], 0.0)
    same = (key[:, None] == key[None, :]) & ~atom[:, None] & ~atom[None, :]
    if same.any():
        ii, kk = np.nonzero(same)
        W[ii, kk] = L[itv[ii]] * S[jj[ii], jj[kk]] * dens[itv[kk], jj[kk], x[kk]]
    return FlatNodes(t, x, w, atom, itv, W)


# --------------------------------------------------------------------------
# single integrals


def integrate(nodes: MeasureNodes, f: Integrand) -> float:
    """int f dm over (0, H] for a single path.

    Predictable integrands receive the history strictly before each node time.
    """
    if f.arity != 1:
        raise ArityMismatch(f"integrate needs arity 1, got {f.arity}")
    fl = flat_nodes(nodes)
    if f.is_predictable:
        path = nodes.paths[0]
        vals = np.array([f.predictable(History.before(path, s), s, m) for s, m in zip(fl.t, fl.x)])
    else:
        vals = f(fl.t[:, None], fl.x[:, None])
    return float(np.dot(fl.w, vals))


def integrate_batch(nodes: MeasureNodes, f: Callable) -> np.ndarray:
    """int f dm for every path of a batch; ``f(t, x)`` deterministic and vectorized."""
    E = nodes.n_marks
    xs = np.arange(E)
    cell = (nodes.cell_weight * f(nodes.t[..., None], xs)).sum(axis=(1, 2, 3))
    has = nodes.atom_mark >= 0
    ax = np.where(has, nodes.atom_mark, 0)
    atom = np.where(has, nodes.atom_weight * f(nodes.atom_time, ax), 0.0).sum(axis=1)
    return cell + atom


def integrate_until(nodes: MeasureNodes, f: Callable, t: float, closed: bool = True) -> float:
    """int f dm over (0, t] (or (0, t) with closed=False) for a single path."""
    total = 0.0
    E = nodes.n_marks
    xs = np.arange(E)
    cw = nodes.cell_weight[0]
    for k in range(nodes.lo.shape[1]):
        a, b = nodes.lo[0, k], nodes.hi[0, k]
        if a >= t:
            break
        vals = f(nodes.t[0, k][:, None], xs[None, :])
        if b <= t:
            total += float((cw[k] * vals).sum())
        else:
            row = integration_row01(nodes.q, (t - a) / (b - a))
            total += float((b - a) * (row[:, None] * nodes.density[0, k] * vals).sum())
        m = nodes.atom_mark[0, k]
        if m >= 0 and (b < t or (closed and b == t)):
            total += float(nodes.atom_weight[0, k] * f(np.float64(b), np.int64(m)))
    return total


# --------------------------------------------------------------------------
# trie sweep for separable integrands


@dataclass
class Trie:
    """Running iterated integrals indexed by factor tuples (outermost first).

    Node 0 is the empty tuple (constant 1); the parent of (i_1, ..., i_n) is
    (i_2, ..., i_n) and its value is int f_{i_1}(s) V_parent(s-) dm(s).
    """

    tuples: list
    parent: np.ndarray
    first: np.ndarray
    depth: np.ndarray

    @classmethod
    def from_tuples(cls, tuples: Sequence[tuple]) -> "Trie":
        index = {(): 0}
        order = [()]
        for tup in tuples:
            tup = tuple(int(i) for i in tup)
            for k in range(len(tup) - 1, -1, -1):
                suffix = tup[k:]
                if suffix not in index:
                    index[suffix] = len(order)
                    order.append(suffix)
        parent = np.array([-1] + [index[s[1:]] for s in order[1:]], dtype=int)
        first = np.array([-1] + [s[0] for s in order[1:]], dtype=int)
        depth = np.array([len(s) for s in order], dtype=int)
        trie = cls(order, parent, first, depth)
        trie._index = index
        return trie

    def index(self, tup) -> int:
        return self._index[tuple(int(i) for i in tup)]

    def __len__(self):
        return len(self.tuples)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())


def sweep(nodes: MeasureNodes, factors: Sequence[Callable], trie: Trie) -> np.ndarray:
    """Values at the horizon of every trie node for every path: array (B, len(trie))."""
    B, K = nodes.lo.shape
    q = nodes.q
    E = nodes.n_marks
    S = integration_matrix01(q)
    _, gw = gauss_legendre01(q)
    xs = np.arange(E)
    used = sorted({int(i) for i in trie.first[1:]})
    nf = len(factors)
    # beta[i] (B, K, q): sum_x f_i(t, x) * density(t, x); alpha_w[i] (B, K): f_i at the atom times weight
    beta = np.zeros((nf, B, K, q))
    gatom = np.zeros((nf, B, K))
    has = nodes.atom_mark >= 0
    ax = np.where(has, nodes.atom_mark, 0)
    for i in used:
        f = factors[i]
        beta[i] = (f(nodes.t[..., None], xs) * nodes.density).sum(axis=-1)
        gatom[i] = np.where(has, f(nodes.atom_time, ax) * nodes.atom_weight, 0.0)
    levels = [np.flatnonzero(trie.depth == d) for d in range(1, trie.max_depth + 1)] if len(trie) > 1 else []
    V = np.zeros((B, len(trie)))
    V[:, 0] = 1.0
    length = nodes.length
    for k in range(K):
        # padded intervals (zero length, no atom) leave V unchanged
        act = np.flatnonzero((length[:, k] > 0.0) | has[:, k])
        if act.size == 0:
            continue
        Lk = length[act, k]
        Va = V[act]
        Vn = np.empty((act.size, len(trie), q))
        Vn[:, 0, :] = 1.0
        Vend = Va.copy()
        for idx in levels:
            integrand = Vn[:, trie.parent[idx], :] * np.moveaxis(beta[trie.first[idx]][:, act, k, :], 0, 1)
            Vn[:, idx, :] = Va[:, idx, None] + Lk[:, None, None] * (integrand @ S.T)
            Vend[:, idx] = Va[:, idx] + Lk[:, None] * (integrand @ gw)
        for idx in reversed(levels):
            Vend[:, idx] += Vend[:, trie.parent[idx]] * gatom[trie.first[idx]][:, act, k].T
        V[act] = Vend
    return V


# --------------------------------------------------------------------------
# iterated integrals of a single path


def _general_contract(fl: FlatNodes, g: Integrand, masks: Sequence[np.ndarray], outer_w: np.ndarray) -> float:
    """sum_{i_1} outer_w[i_1] sum_{i_2} W[i_1 i_2] ... g(i_1..i_n), level l restricted to masks[l]."""
    n = g.arity
    idx = [np.flatnonzero(m) for m in masks]

    def rec(prefix_nodes: list, level: int):
        # returns vector over idx[level] of partial contractions
        if level == n - 1 or n - level <= 2:
            sets = idx[level:]
            grids = np.meshgrid(*sets, indexing="ij")
            pre = [np.full(grids[0].shape, p) for p in prefix_nodes]
            allidx = np.stack(pre + list(grids), axis=-1)
            vals = g(fl.t[allidx], fl.x[allidx])
            # contract deepest levels first
            for lev in range(n - 1, level, -1):
                Wsub = fl.W[np.ix_(idx[lev - 1], idx[lev])]
                vals = np.einsum("...ab,ab->...a", vals, Wsub)
            return vals
        out = np.empty(len(idx[level]))
        Wsub = fl.W[np.ix_(idx[level], idx[level + 1])]
        for a, node in enumerate(idx[level]):
            inner = rec(prefix_nodes + [node], level + 1)
            out[a] = Wsub[a] @ inner
        return out

    top = rec([], 0)
    return float(outer_w[idx[0]] @ top)


def _separable_contract(fl: FlatNodes, factors, masks, outer_w) -> float:
    n = len(factors)
    u = factors[n - 1](fl.t, fl.x) * masks[n - 1]
    for lev in range(n - 2, -1, -1):
        u = factors[lev](fl.t, fl.x) * (fl.W @ u) * masks[lev]
    return float(outer_w @ u)


def iterated_J(nodes: MeasureNodes, n: int, g) -> float:
    """n-fold iterated integral of g over 0 <= s_n < ... < s_1 <= H.

    ``n = 0`` returns the constant ``g``.  Separable integrands use the sweep;
    general ones the nesting-matrix contraction (n <= 4).
    """
    if n == 0:
        return float(g)
    if g.arity != n:
        raise ArityMismatch(f"integrand arity {g.arity} != {n}")
    if g.is_separable:
        trie = Trie.from_tuples([tuple(range(n))])
        V = sweep(nodes, g.factors, trie)
        return float(V[0, trie.index(tuple(range(n)))])
    if n > MAX_GENERAL_DEPTH:
        raise DepthTooLarge(f"general integrands are limited to depth {MAX_GENERAL_DEPTH}")
    fl = flat_nodes(nodes)
    ones = np.ones(len(fl.t), dtype=bool)
    return _general_contract(fl, g, [ones] * n, fl.w)


def iterated_J_recursive(nodes: MeasureNodes, n: int, g: Integrand) -> float:
    """Nesting-matrix evaluation, also for separable g (validation route)."""
    if g.arity != n:
        raise ArityMismatch(f"integrand arity {g.arity} != {n}")
    if n > MAX_GENERAL_DEPTH:
        raise DepthTooLarge(f"general integrands are limited to depth {MAX_GENERAL_DEPTH}")
    fl = flat_nodes(nodes)
    ones = np.ones(len(fl.t), dtype=bool)
    return _general_contract(fl, Integrand(n, func=g.__call__), [ones] * n, fl.w)


def _jump_cap_mask(fl: FlatNodes, path, j: int) -> np.ndarray:
    """Nodes in (0, T_j]; all nodes when the path has fewer than j jumps."""
    if j > path.n_jumps:
        return np.ones(len(fl.t), dtype=bool)
    Tj = path.times[j - 1]
    # cells sit strictly inside intervals, atoms exactly at their times
    return np.where(fl.is_atom, fl.t <= Tj, fl.t < Tj)


def iterated_I(nodes: MeasureNodes, fam: IteratedFamily, tau: float, k: int) -> float:
    """Jump-capped iterated operator.

    I^k_tau = g_0 + sum_{n=1..k} of n-fold integrals where level l (l = 1 the
    outermost) runs over (0, T_{k-l+1}] intersected with (0, tau) for l = 1 and
    with (0, t_{l-1}) otherwise.  ``tau = inf`` (or tau >= H) means (0, H].
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return float(fam.g0)
    if fam.depth < k:
        raise ArityMismatch(f"family has depth {fam.depth} < k={k}")
    path = nodes.paths[0]
    H = nodes.horizon
    open_tau = tau <= H
    if open_tau:
        inside = (nodes.lo[0] < tau) & (tau < nodes.hi[0])
        if inside.any():
            nodes = nodes.refined([tau])
    fl = flat_nodes(nodes)
    if open_tau:
        tau_mask = fl.t < tau
    else:
        tau_mask = np.ones(len(fl.t), dtype=bool)
    total = float(fam.g0)
    for n in range(1, k + 1):
        g = fam.gs[n - 1]
        masks = [_jump_cap_mask(fl, path, k - lev) for lev in range(n)]
        masks[0] = masks[0] & tau_mask
        if g.is_separable:
            total += _separable_contract(fl, g.factors, masks, fl.w)
        else:
            if n > MAX_GENERAL_DEPTH:
                raise DepthTooLarge(f"general integrands are limited to depth {MAX_GENERAL_DEPTH}")
            total += _general_contract(fl, g, masks, fl.w)
    return total


def iterated_I_nested(nodes: MeasureNodes, fam: IteratedFamily, tau: float, k: int) -> float:
    """I^k_tau evaluated literally as nested integrals on the same nodes.

    g_0 + int_{(0, T_k] cap (0, tau)} (g_1 + int_{(0, T_{k-1}] cap (0, t_1)} (g_2 + ...) dm) dm.
    Slower than :func:`iterated_I`; used to cross-check its term-by-term sum.
    """
    if k == 0:
        return float(fam.g0)
    if fam.depth < k:
        raise ArityMismatch(f"family has depth {fam.depth} < k={k}")
    path = nodes.paths[0]
    open_tau = tau <= nodes.horizon
    if open_tau and ((nodes.lo[0] < tau) & (tau < nodes.hi[0])).any():
        nodes = nodes.refined([tau])
    fl = flat_nodes(nodes)
    caps = {lev: _jump_cap_mask(fl, path, k - lev + 1) for lev in range(1, k + 1)}
    if open_tau:
        caps[1] = caps[1] & (fl.t < tau)

    def level(lev: int, prefix: list) -> float:
        weights = fl.w if lev == 1 else fl.W[prefix[-1]]
        sel = np.flatnonzero(caps[lev] & (weights != 0.0))
        if sel.size == 0:
            return 0.0
        args = np.array([prefix + [i] for i in sel], dtype=int)
        vals = np.asarray(fam.gs[lev - 1](fl.t[args], fl.x[args]), dtype=float)
        if lev < k:
            vals = vals + np.array([level(lev + 1, prefix + [int(i)]) for i in sel])
        return float(weights[sel] @ vals)

    return float(fam.g0) + level(1, [])
