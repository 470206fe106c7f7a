"""Separable chaos bases, feature matrices and least-squares projection.

A basis element of order n is the iterated integral J^n of a product
f_{i_1}(t_1, x_1) ... f_{i_n}(t_n, x_n) where every factor is a shifted
Legendre polynomial in time times a mark indicator.  Because the running
integrals of all factor tuples form a trie (each tuple extends its suffix),
one sweep over the discretized measure yields every feature of every order.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, SizeCap
from .functionals import Functional
from .integral import Integrand, Trie, sweep
from .martingale import DEFAULT_QUAD_NODES, Rescale, ZetaSpec, measure_nodes_batch
from .model import MarkSpace, ValidatedModel
from .path import Path, PathBatch, sample_paths
from .quadrature import shifted_legendre
from .stats import residual_fraction_se

MAX_ORDER = 4
MAX_TIME_DEGREE = 6
MAX_PER_ORDER = 10_000


class LegendreMark:
    """P_degree(2t/H - 1) * 1{x = mark}."""

    def __init__(self, degree: int, mark: int, horizon: float):
        self.degree = int(degree)
        self.mark = int(mark)
        self.horizon = float(horizon)

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x)
        return shifted_legendre(self.degree, t, self.horizon) * (x == self.mark)

    def __repr__(self):
        return f"LegendreMark(degree={self.degree}, mark={self.mark})"


@dataclass
class ChaosBasis:
    """All factor tuples of length <= K over (d + 1) * |E| factors.

    Factor index j * |E| + e is the degree-j polynomial on mark e.  Columns of
    a feature matrix follow ``trie`` order, which is sorted by order.
    """

    max_order: int
    time_degree: int
    n_marks: int
    horizon: float
    factors: list
    trie: Trie = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.trie)

    @property
    def order(self) -> np.ndarray:
        return self.trie.depth

    def columns(self, n: int) -> np.ndarray:
        return np.flatnonzero(self.trie.depth == n)

    def count(self, n: int) -> int:
        return len(self.columns(n))

    def tuples(self, n: int) -> list:
        return [self.trie.tuples[i] for i in self.columns(n)]

    def integrand(self, column: int) -> Integrand | None:
        """Separable integrand of a column; None for the constant column."""
        tup = self.trie.tuples[column]
        if not tup:
            return None
        return Integrand.separable(*[self.factors[i] for i in tup])


def build_basis(K: int, d: int, mark_space: MarkSpace | int, horizon: float = 1.0) -> ChaosBasis:
    """Basis of orders 0..K with time degree <= d.

    Raises:
        SizeCap: some order has more than 10^4 elements.
    """
    if not 0 <= K <= MAX_ORDER:
        raise ValueError(f"order must lie in 0..{MAX_ORDER}")
    if not 0 <= d <= MAX_TIME_DEGREE:
        raise ValueError(f"time degree must lie in 0..{MAX_TIME_DEGREE}")
    E = mark_space if isinstance(mark_space, int) else mark_space.size
    m = (d + 1) * E
    if m ** K > MAX_PER_ORDER:
        raise SizeCap(f"order {K} would hold {m ** K} elements (cap {MAX_PER_ORDER})")
    factors = [LegendreMark(j, e, horizon) for j in range(d + 1) for e in range(E)]
    tuples = [t for n in range(1, K + 1) for t in itertools.product(range(m), repeat=n)]
    return ChaosBasis(K, d, E, float(horizon), factors, Trie.from_tuples(tuples))


# --------------------------------------------------------------------------
# features


def _sweep_chunk(args):
    model, zeta, batch, factors, trie, q, mode = args
    nodes = measure_nodes_batch(model, zeta, batch, q=q, mode=mode)
    return sweep(nodes, factors, trie)


def slice_batch(batch: PathBatch, a: int, b: int) -> PathBatch:
    """Paths a..b-1 of a batch, trimmed to their own maximum jump count."""
    counts = batch.counts[a:b]
    w = int(counts.max()) if len(counts) else 0
    return PathBatch(batch.horizon, counts, batch.times[a:b, :w], batch.marks[a:b, :w], batch.regimes[a:b, : w + 1])


def sweep_batch(
    batch: PathBatch,
    factors: Sequence,
    trie: Trie,
    model: ValidatedModel,
    zeta: ZetaSpec,
    q: int = DEFAULT_QUAD_NODES,
    mode: Rescale | str = Rescale.SQRT_PSI,
    chunk: int = 2048,
    workers: int = 1,
) -> np.ndarray:
    """Running integrals of every trie node at the horizon, chunked over paths.

    Chunks are fixed by path index, so the result does not depend on ``workers``.
    """
    P = len(batch)
    mode = Rescale(mode)
    jobs = [(model, zeta, slice_batch(batch, a, min(a + chunk, P)), factors, trie, q, mode) for a in range(0, P, chunk)]
    if workers <= 1 or len(jobs) <= 1:
        parts = [_sweep_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sweep_chunk, jobs))
    if not parts:
        return np.zeros((0, len(trie)))
    return np.concatenate(parts, axis=0)


def evaluate_features(
    paths: Sequence[Path] | PathBatch,
    basis: ChaosBasis,
    model: ValidatedModel,
    zeta: ZetaSpec | None = None,
    q: int = DEFAULT_QUAD_NODES,
    mode: Rescale | str = Rescale.SQRT_PSI,
    chunk: int = 2048,
    workers: int = 1,
) -> np.ndarray:
    """Feature matrix (paths x basis elements); column 0 is the constant 1."""
    zeta = zeta if zeta is not None else ZetaSpec()
    batch = paths if isinstance(paths, PathBatch) else PathBatch.from_paths(model, list(paths))
    return sweep_batch(batch, basis.factors, basis.trie, model, zeta, q, mode, chunk, workers)


# --------------------------------------------------------------------------
# projection


@dataclass
class ProjectionResult:
    coefficients: list  # per order m: coefficients of the fit on orders <= m
    condition_number: float
    residuals: np.ndarray  # r_0..r_K
    std_errors: np.ndarray
    ridge: float
    order: np.ndarray = field(repr=False)

    @property
    def max_order(self) -> int:
        return len(self.residuals) - 1

    def coefficients_by_order(self, m: int | None = None) -> dict:
        """Coefficients of the full fit (or the fit on orders <= m), grouped by order."""
        m = self.max_order if m is None else m
        c = self.coefficients[m]
        cols = np.flatnonzero(self.order <= m)
        return {n: c[self.order[cols] == n] for n in range(m + 1)}


def _solve(G: np.ndarray, b: np.ndarray, ridge: float) -> np.ndarray:
    if ridge > 0.0:
        return np.linalg.solve(G + ridge * np.eye(len(b)), b)
    return np.linalg.pinv(G, hermitian=True) @ b


def project(
    y: np.ndarray,
    features: np.ndarray,
    ridge: float | None = None,
    order: np.ndarray | None = None,
) -> ProjectionResult:
    """Least-squares projection of y on nested spans of orders 0..K.

    ``ridge`` defaults to 1e-8 * trace(G) / p with G the empirical Gram matrix;
    ``ridge=0`` solves with the pseudo-inverse.  ``order`` gives the chaos
    order of every column (all ones past column 0 if omitted).

    Raises:
        DimensionMismatch: y and features disagree on the number of paths.
    """
    y = np.asarray(y, dtype=float)
    F = np.asarray(features, dtype=float)
    if F.ndim != 2 or y.ndim != 1 or F.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"y has shape {y.shape}, features {F.shape}")
    if ridge is not None and ridge < 0.0:
        raise ValueError("ridge must be >= 0")
    P, p = F.shape
    if order is None:
        order = np.array([0] + [1] * (p - 1), dtype=int)
    order = np.asarray(order, dtype=int)
    G = F.T @ F / P
    b = F.T @ y / P
    eps = 1e-8 * np.trace(G) / p if ridge is None else float(ridge)
    eig = np.linalg.eigvalsh(G)
    cond = float(eig[-1] / eig[0]) if eig[0] > 0 else float("inf")
    K = int(order.max())
    coefs, res, ses = [], [], []
    for m in range(K + 1):
        cols = np.flatnonzero(order <= m)
        c = _solve(G[np.ix_(cols, cols)], b[cols], eps)
        e = y - F[:, cols] @ c
        r, se = residual_fraction_se(y, e)
        coefs.append(c)
        res.append(r)
        ses.append(se)
    return ProjectionResult(coefs, cond, np.array(res), np.array(ses), eps, order)


# --------------------------------------------------------------------------
# completeness


@dataclass
class CompletenessRow:
    functional: str
    order: int
    residual_fraction: float
    std_error: float
    oracle_value: float | None
    passed: bool


def completeness_report(
    model: ValidatedModel,
    zeta: ZetaSpec | None,
    functionals: Sequence[Functional],
    K: int,
    n_paths: int,
    *,
    seed: int,
    time_degree: int = 0,
    q: int = DEFAULT_QUAD_NODES,
    mode: Rescale | str = Rescale.SQRT_PSI,
    ridge: float | None = None,
    threshold: float = 3.5,
    workers: int = 1,
    oracle_cfg=None,
    batch: PathBatch | None = None,
    features: np.ndarray | None = None,
) -> list[CompletenessRow]:
    """Residual fractions r_0..r_K for each functional, checked against the oracle.

    A row passes when it is within ``threshold`` standard errors of the exact
    tail (when the oracle can compute it) and, for m >= 1, when r_m does not
    exceed r_{m-1} by more than ``threshold`` combined standard errors.
    """
    from .errors import TruncationTooLarge
    from .oracle import OracleConfig, chaos_tail

    zeta = zeta if zeta is not None else ZetaSpec()
    cfg = oracle_cfg if oracle_cfg is not None else OracleConfig()
    basis = build_basis(K, time_degree, model.mark_space, model.horizon)
    if batch is None:
        batch = PathBatch.from_paths(model, sample_paths(model, seed, n_paths, workers=workers))
    F = features if features is not None else evaluate_features(batch, basis, model, zeta, q=q, mode=mode, workers=workers)
    rows = []
    for fun in functionals:
        y = fun.batch(batch)
        res = project(y, F, ridge=ridge, order=basis.order)
        exact = None
        if K <= 3:
            try:
                exact = chaos_tail(model, fun, K, cfg, zeta=zeta, time_degree=time_degree, mode=mode, q=q).residuals
            except (TruncationTooLarge, SizeCap):
                exact = None
        for m in range(K + 1):
            r, se = float(res.residuals[m]), float(res.std_errors[m])
            ok = True
            if exact is not None:
                ok = abs(r - exact[m]) <= threshold * se + 1e-9
            if m >= 1:
                combined = float(np.hypot(se, res.std_errors[m - 1]))
                ok = ok and r <= res.residuals[m - 1] + threshold * combined + 1e-12
            rows.append(CompletenessRow(fun.name, m, r, se, None if exact is None else float(exact[m]), bool(ok)))
    return rows
