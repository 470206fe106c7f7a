"""Verification suites: each maps a run context to report rows."""

from __future__ import annotations

import math
import platform
from typing import Callable

import numpy as np
import scipy
from scipy.integrate import quad
from scipy.linalg import expm

from . import __version__
from . import functionals as lib
from .chaos import build_basis, completeness_report, slice_batch, sweep_batch
from .config import SuiteConfig
from .errors import SuiteFailure, TruncationTooLarge
from .integral import (
    Const,
    Integrand,
    IteratedFamily,
    MarkIndicator,
    TimePower,
    Trie,
    integrate_until,
    iterated_I,
    iterated_I_nested,
)
from .martingale import Rescale, measure_nodes, measure_nodes_batch
from .model import CTMC, MarkedPoisson
from .oracle import (
    OracleConfig,
    count_tail,
    occupancy_probability,
    oracle_expectation,
    stray_psi_inner_product,
    zeta_inner_product_bound,
)
from .path import Path, PathBatch, sample_paths
from .quadrature import gauss_legendre01
from .report import INFO, Report, Row, check_row, estimate_row, exact_row, stat_row

EXACT_SAMPLE = 200  # paths used by the per-path identity suites
ORTHO_MIN_DEGREE = 2  # enough basis elements per order for distinct random pairs
ORTHO_MAX_PER_ORDER = 100


class RunContext:
    """Simulated paths plus cached sweeps shared by the suites of one run."""

    def __init__(self, cfg: SuiteConfig):
        self.cfg = cfg
        self.model = cfg.model
        self.zeta = cfg.zeta
        self.paths = sample_paths(cfg.model, cfg.seed, cfg.paths, workers=cfg.workers, chunk=cfg.chunk)
        self.batch = PathBatch.from_paths(cfg.model, self.paths)

    def sweep(self, factors, tuples, mode: Rescale) -> tuple[np.ndarray, Trie]:
        trie = Trie.from_tuples(tuples)
        V = sweep_batch(self.batch, factors, trie, self.model, self.zeta, self.cfg.quad_nodes, mode,
                        workers=self.cfg.workers)
        return V, trie

    def map_nodes(self, fn: Callable, mode: Rescale, chunk: int = 2048) -> np.ndarray:
        """Concatenate ``fn(nodes)`` over fixed path chunks."""
        P = len(self.batch)
        parts = []
        for a in range(0, P, chunk):
            nodes = measure_nodes_batch(self.model, self.zeta, slice_batch(self.batch, a, min(a + chunk, P)),
                                        q=self.cfg.quad_nodes, mode=mode)
            parts.append(fn(nodes))
        return np.concatenate(parts)

    def node_count(self) -> int:
        """Atoms plus nonzero continuous nodes over all simulated paths."""
        b = self.batch
        support = (self.model.kernel > 0.0).sum(axis=1)
        cols = np.arange(b.regimes.shape[1])[None, :] <= b.counts[:, None]
        per_interval = np.where(cols, support[b.regimes], 0)
        return int(per_interval.sum()) * self.cfg.quad_nodes + int(b.counts.sum())


def _test_functions(model):
    fs = [("1", Const(1.0)), ("t", TimePower(1))]
    fs += [(f"1{{x={lab}}}", MarkIndicator(e)) for e, lab in enumerate(model.mark_space.labels)]
    return fs


# --------------------------------------------------------------------------
# suites


def suite_martingale(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    thr = cfg.threshold
    V, trie = ctx.sweep([Const(1.0), TimePower(1)], [(0,), (1,), (0, 0), (0, 0, 0)], cfg.mode)
    prov = "martingale property of m: exact zero mean"
    rows = [
        stat_row("martingale", "int 1 dm", V[:, trie.index((0,))], 0.0, prov, thr),
        stat_row("martingale", "int t dm", V[:, trie.index((1,))], 0.0, prov, thr),
        stat_row("martingale", "J2(1)", V[:, trie.index((0, 0))], 0.0, prov, thr),
        stat_row("martingale", "J3(1)", V[:, trie.index((0, 0, 0))], 0.0, prov, thr),
    ]
    Vn, trie_n = ctx.sweep([Const(1.0)], [(0,)], Rescale.NONE)
    rows.append(stat_row("martingale", "atoms minus compensator (mode none)", Vn[:, 1], 0.0,
                         "compensation: E[q((0,H] x E)] = 0", thr))
    # psi-transfer: E[int f psi dp~] = sum_alpha int occupancy f dzeta
    for name, f in [("1", Const(1.0)), ("t", TimePower(1))]:
        xs = np.arange(ctx.model.n_marks)
        vals = ctx.map_nodes(lambda nd: -(nd.cell_weight * f(nd.t[..., None], xs)).sum(axis=(1, 2, 3)), Rescale.PSI)
        target, bound = zeta_inner_product_bound(f, Const(1.0), ctx.model, ctx.zeta, cfg.oracle)
        rows.append(stat_row("martingale", f"int {name} psi dp~", vals, target,
                             f"oracle zeta form, bound {bound:.3g}", thr, bound))
    return rows


def suite_isometry(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    thr = cfg.threshold
    fs = _test_functions(ctx.model)
    factors = [f for _, f in fs]
    tuples = [(i,) for i in range(len(fs))]
    Vs, trie = ctx.sweep(factors, tuples, Rescale.SQRT_PSI)
    Vp, _ = ctx.sweep(factors, tuples, Rescale.PSI)
    rows = []
    for i, (name, f) in enumerate(fs):
        col = trie.index((i,))
        zf, bound = zeta_inner_product_bound(f, f, ctx.model, ctx.zeta, cfg.oracle)
        prov = f"oracle zeta form, truncation bound {bound:.3g}"
        rows.append(stat_row("isometry", f"E[(int {name} dm)^2] sqrt_psi", Vs[:, col] ** 2, zf, prov, thr, bound))
        stray = stray_psi_inner_product(f, f, ctx.model, ctx.zeta, cfg.oracle)
        gap = Vp[:, col] ** 2 - zf
        rows.append(stat_row("isometry", f"E[(int {name} dq_psi)^2] - zeta form (psi)", gap, 0.0,
                             "informational: literal psi rescaling leaves a stray psi", thr, info=True))
        rows.append(stat_row("isometry", f"psi gap vs stray-psi correction for {name}", gap, stray - zf,
                             "oracle: sum_alpha int E[1 f^2 psi] dzeta minus zeta form", thr, bound))
    return rows


def suite_simplex(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    model, zeta = ctx.model, ctx.zeta
    n_alpha = len(model.distinct_jump_indices()) + 1
    mass = zeta.mark_table(model, n_alpha).sum(axis=1)
    nodes, weights = gauss_legendre01(64)
    wint = float(model.horizon * weights @ zeta.time_density(model.horizon * nodes))
    V, trie = ctx.sweep([Const(1.0)], [(0,), (0, 0), (0, 0, 0)], Rescale.SQRT_PSI)
    uniform = bool(np.allclose(mass, mass[0], rtol=0, atol=1e-14))
    rows = []
    for n in (1, 2, 3):
        col = trie.index((0,) * n)
        target = (mass[0] * wint) ** n / math.factorial(n)
        rows.append(stat_row("simplex", f"E[J{n}(1)^2]", V[:, col] ** 2, target,
                             "simplex volume (int w)^n / n! times mark mass^n", cfg.threshold, info=not uniform))
    return rows


def suite_orthogonality(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    degree = max(cfg.time_degree, ORTHO_MIN_DEGREE)
    while degree > 0 and ((degree + 1) * ctx.model.n_marks) ** 3 > ORTHO_MAX_PER_ORDER:
        degree -= 1
    basis = build_basis(3, degree, ctx.model.mark_space, ctx.model.horizon)
    V = sweep_batch(ctx.batch, basis.factors, basis.trie, ctx.model, ctx.zeta, cfg.quad_nodes, cfg.mode,
                    workers=cfg.workers)
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    rows = []
    for m, n in [(1, 2), (1, 3), (2, 3)]:
        cm, cn = basis.columns(m), basis.columns(n)
        picks_a = rng.choice(cm, size=5, replace=len(cm) < 5)
        picks_b = rng.choice(cn, size=5, replace=len(cn) < 5)
        for a, b in zip(picks_a.tolist(), picks_b.tolist()):
            ta, tb = basis.trie.tuples[a], basis.trie.tuples[b]
            rows.append(stat_row("orthogonality", f"E[J{m}{list(ta)} J{n}{list(tb)}]", V[:, a] * V[:, b], 0.0,
                                 "cross-order orthogonality: exact zero", cfg.threshold))
    for n in (1, 2, 3):
        cols = basis.columns(n)
        G = V[:, cols].T @ V[:, cols] / len(V)
        lo = float(np.linalg.eigvalsh(G).min())
        rows.append(check_row("orthogonality", f"min eigenvalue of order-{n} Gram", lo, lo >= -1e-12 * max(1.0, np.trace(G)),
                              "positive semidefinite", 0.0))
    return rows


def suite_completeness(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    funs = [lib.by_name(name, ctx.model) for name in cfg.functionals]
    table = completeness_report(
        ctx.model, ctx.zeta, funs, cfg.max_order, cfg.paths, seed=cfg.seed, time_degree=cfg.time_degree,
        q=cfg.quad_nodes, mode=cfg.mode, ridge=cfg.ridge, threshold=cfg.threshold, workers=cfg.workers,
        oracle_cfg=cfg.oracle, batch=ctx.batch,
    )
    rows = []
    by_fun: dict[str, list] = {}
    for r in table:
        by_fun.setdefault(r.functional, []).append(r)
        stat = f"r_{r.order}[{r.functional}]"
        if r.oracle_value is None:
            rows.append(Row("completeness", stat, r.residual_fraction, r.std_error, None, None,
                            "pass" if r.passed else "fail", "monotone in order (no oracle tail)"))
        else:
            row = estimate_row("completeness", stat, r.residual_fraction, r.std_error, r.oracle_value,
                               "oracle chaos tail", cfg.threshold)
            row.status = "pass" if r.passed else "fail"
            rows.append(row)
    for name, seq in by_fun.items():
        exact = [r.oracle_value for r in seq]
        if None not in exact:
            for m in range(1, len(seq)):
                if exact[m] < exact[m - 1] and exact[m] > 1e-9:
                    ok = seq[m].residual_fraction < seq[m - 1].residual_fraction
                    rows.append(check_row("completeness", f"r_{m} < r_{m - 1} [{name}]", seq[m].residual_fraction,
                                          ok, "oracle tail strictly decreasing", seq[m - 1].residual_fraction))
        for m, thr in sorted(cfg.thresholds.get(name, {}).items()):
            r = seq[m].residual_fraction
            rows.append(check_row("completeness", f"r_{m}[{name}] < {thr:g}", r, r < thr, "configured bound", thr))
    return rows


def _library(model) -> list:
    funs = [lib.count(), lib.count_squared(), lib.exp_neg_count(), lib.first_jump_capped(model.horizon)]
    if isinstance(model.spec.kind, CTMC):
        funs += [lib.terminal_state(r, lab) for r, lab in enumerate(model.regime_labels)]
    return funs


def suite_oracle_check(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    model = ctx.model
    H = model.horizon
    tol = cfg.oracle.tolerance
    rows = []
    kind = model.spec.kind
    if isinstance(kind, MarkedPoisson):
        lam = float(model.exit_rates[0])
        closed = {
            "N": (lib.count(), lam * H),
            "N2": (lib.count_squared(), (lam * H) ** 2 + lam * H),
            "exp_neg_N": (lib.exp_neg_count(), math.exp(lam * H * (math.exp(-1.0) - 1.0))),
        }
        for name, (fun, target) in closed.items():
            value, bound = oracle_expectation(model, fun, cfg.oracle)
            rows.append(exact_row("oracle-check", f"E[{name}] vs closed form", value, target, tol, "Poisson closed form"))
    if isinstance(kind, CTMC):
        Q = np.asarray(kind.generator, dtype=float)
        pH = expm(Q * H)[model.regime0]
        for r, lab in enumerate(model.regime_labels):
            value, _ = oracle_expectation(model, lib.terminal_state(r, lab), cfg.oracle)
            rows.append(exact_row("oracle-check", f"P(X_H={lab}) vs matrix exponential", value, float(pH[r]), tol,
                                  "expm(Q H)"))
        nodes, weights = gauss_legendre01(48)
        exits = -np.diag(Q)
        en = float(H * sum(w * expm(Q * H * s)[model.regime0] @ exits for s, w in zip(nodes, weights)))
        value, _ = oracle_expectation(model, lib.count(), cfg.oracle)
        rows.append(exact_row("oracle-check", "E[N] vs int pi(t) q dt", value, en, tol, "Kolmogorov forward law"))
    # first jump: E[min(T_1, H)] = int_0^H S(t) dt
    fj = lib.first_jump_capped(H)
    value, _ = oracle_expectation(model, fj, cfg.oracle)
    ref, _ = quad(lambda t: float(model.survival_elapsed(model.regime0, t)), 0.0, H, epsabs=1e-14, epsrel=1e-13)
    rows.append(exact_row("oracle-check", "E[min(T1,H)] vs int survival", value, ref, tol, "adaptive quadrature"))
    # quadrature doubling
    doubled = OracleConfig(n_max=cfg.oracle.n_max, quad_nodes=2 * cfg.oracle.quad_nodes, tolerance=tol,
                           time_nodes=2 * cfg.oracle.time_nodes)
    v2, _ = oracle_expectation(model, fj, doubled)
    rows.append(exact_row("oracle-check", "first-jump oracle q vs 2q", v2, value, tol, "quadrature self-consistency"))
    if model.is_markov:
        # enumeration engines would pay (2q)^n_max per stratum here
        z1, _ = zeta_inner_product_bound(Const(1.0), TimePower(1), model, ctx.zeta, cfg.oracle)
        z2, _ = zeta_inner_product_bound(Const(1.0), TimePower(1), model, ctx.zeta, doubled)
        rows.append(exact_row("oracle-check", "zeta inner product (1,t) q vs 2q", z2, z1, tol,
                              "quadrature self-consistency"))
    # occupancy partition of unity
    n_part = cfg.oracle.n_max if not model.is_markov else max(cfg.oracle.n_max, 25)
    worst, worst_bound = 0.0, 0.0
    for t in np.linspace(H / 20, H, 20):
        total = sum(occupancy_probability(model, a, float(t), cfg.oracle) for a in range(n_part + 1))
        bound = count_tail(model, n_part, horizon=float(t))
        if abs(total - 1.0) - bound > worst - worst_bound:
            worst, worst_bound = abs(total - 1.0), bound
    rows.append(exact_row("oracle-check", "occupancy partition of unity (20 times)", 1.0 - worst, 1.0,
                          worst_bound + 1e-12, f"truncation bound {worst_bound:.3g}"))
    # Monte Carlo vs oracle
    for fun in _library(model):
        y = fun.batch(ctx.batch)
        se = float(np.std(y, ddof=1) / math.sqrt(len(y)))
        loose = OracleConfig(n_max=cfg.oracle.n_max, quad_nodes=cfg.oracle.quad_nodes,
                             tolerance=max(tol, 0.1 * se), time_nodes=cfg.oracle.time_nodes)
        try:
            target, bound = oracle_expectation(model, fun, loose)
        except TruncationTooLarge as exc:
            rows.append(Row("oracle-check", f"MC mean of {fun.name}", float(np.mean(y)), se, None, None, INFO, str(exc)))
            continue
        rows.append(stat_row("oracle-check", f"MC mean of {fun.name}", y, target,
                             f"oracle expectation, bound {bound:.3g}", cfg.threshold, bound))
    return rows


def _boundary_family() -> IteratedFamily:
    g2 = Integrand(2, func=lambda ts, xs: np.cos(ts[..., 0] - 2.0 * ts[..., 1]))
    g3 = Integrand.separable(Const(1.0), TimePower(1), Const(1.0))
    return IteratedFamily(0.25, [Integrand.separable(TimePower(1)), g2, g3])


def _first_mark(model, regime: int) -> int:
    return int(np.flatnonzero(model.kernel[regime] > 0.0)[0])


def suite_boundary(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    model, zeta = ctx.model, ctx.zeta
    H = model.horizon
    tol = cfg.exact_tol
    fam = _boundary_family()
    t1, tau = 0.3 * H, 0.6 * H
    x1 = _first_mark(model, model.regime0)
    x2 = _first_mark(model, int(model.next_regime[model.regime0, x1]))
    A = Path(H, (t1,), (x1,))
    B = Path(H, (t1, tau), (x1, x2))
    nA = measure_nodes(model, zeta, A, q=cfg.quad_nodes, mode=cfg.mode)
    nB = measure_nodes(model, zeta, B, q=cfg.quad_nodes, mode=cfg.mode)
    rows = []
    for k in (1, 2, 3):
        rows.append(exact_row("boundary", f"I{k}_tau unchanged by a jump at tau (open cap)",
                              iterated_I(nB, fam, tau, k), iterated_I(nA, fam, tau, k), tol, "exact identity"))
    # closed jump cap: tau = inf adds exactly the atom at T_2 = tau
    atom = nB.atom_weight[0, 1]
    inner = integrate_until(nB, lambda t, x: fam.gs[1](np.stack([np.full(np.shape(t), tau), t], -1),
                                                       np.stack([np.full(np.shape(x), x2), x], -1)), t1, closed=True)
    g1 = float(fam.gs[0](np.array([[tau]]), np.array([[x2]]))[0])
    expected = atom * (g1 + inner)
    diff = iterated_I(nB, fam, math.inf, 2) - iterated_I(nB, fam, tau, 2)
    rows.append(exact_row("boundary", "I2 closed T2 cap adds the atom at T2", diff, expected, tol, "exact identity"))
    one = lambda t, x: np.ones(np.broadcast(t, x).shape)
    jump = integrate_until(nB, one, tau, closed=True) - integrate_until(nB, one, tau, closed=False)
    rows.append(exact_row("boundary", "int_(0,tau] - int_(0,tau) equals the atom weight", jump, atom, tol, "exact identity"))
    # term-by-term operator vs literal nested recursion
    worst = 0.0
    sample = [A, B] + ctx.paths[:20]
    for p in sample:
        nd = measure_nodes(model, zeta, p, q=cfg.quad_nodes, mode=cfg.mode)
        for k in (1, 2, 3):
            for s in (0.45 * H, tau, math.inf):
                worst = max(worst, abs(iterated_I(nd, fam, s, k) - iterated_I_nested(nd, fam, s, k)))
    rows.append(exact_row("boundary", "I^k term sum vs nested recursion (k<=3, max abs diff)", worst, 0.0, tol,
                          "displayed expansions evaluated independently"))
    return rows


def suite_telescoping(ctx: RunContext) -> list[Row]:
    cfg = ctx.cfg
    model, zeta = ctx.model, ctx.zeta
    tol = cfg.exact_tol
    n = min(EXACT_SAMPLE, len(ctx.paths))
    sub = slice_batch(ctx.batch, 0, n)
    nodes = measure_nodes_batch(model, zeta, sub, q=cfg.quad_nodes, mode=cfg.mode)
    incr = nodes.cell_weight.sum(axis=(2, 3)) + np.where(nodes.atom_mark >= 0, nodes.atom_weight, 0.0)
    partial = np.cumsum(incr, axis=1)
    one = lambda t, x: np.ones(np.broadcast(t, x).shape)
    worst = 0.0
    for i, p in enumerate(ctx.paths[:n]):
        nd = measure_nodes(model, zeta, p, q=cfg.quad_nodes, mode=cfg.mode)
        for a, T in enumerate(p.times):
            worst = max(worst, abs(integrate_until(nd, one, T, closed=True) - partial[i, a]))
        worst = max(worst, abs(integrate_until(nd, one, model.horizon, closed=True) - partial[i, p.n_jumps]))
    rows = [exact_row("telescoping", "M_{T_a} = sum of increments (max abs diff)", worst, 0.0, tol,
                      "telescoping identity for M = int 1 dm")]
    xs = np.arange(model.n_marks)
    by_mode = {m: measure_nodes_batch(model, zeta, sub, q=cfg.quad_nodes, mode=m) for m in Rescale}
    for name, f in [("1", Const(1.0)), ("t", TimePower(1))]:
        def total(nd, power):
            with np.errstate(divide="ignore", invalid="ignore"):
                inv_c = np.where(nd.psi_cells > 0, nd.psi_cells ** -power, 0.0)
                inv_a = np.where(nd.psi_atoms > 0, nd.psi_atoms ** -power, 0.0)
            fv = f(nd.t[..., None], xs)
            cells = (nd.cell_weight * fv * inv_c).sum(axis=(1, 2, 3))
            has = nd.atom_mark >= 0
            fa = f(nd.atom_time, np.where(has, nd.atom_mark, 0))
            return cells + np.where(has, nd.atom_weight * fa * inv_a, 0.0).sum(axis=1)

        base = total(by_mode[Rescale.NONE], 0.0)
        d_psi = float(np.max(np.abs(total(by_mode[Rescale.PSI], 1.0) - base)))
        d_sqrt = float(np.max(np.abs(total(by_mode[Rescale.SQRT_PSI], 0.5) - base)))
        rows.append(exact_row("telescoping", f"int {name} dq = int {name}/psi dq_psi (max abs diff)", d_psi, 0.0, tol,
                              "rescale equivalence"))
        rows.append(exact_row("telescoping", f"int {name} dq = int {name}/sqrt(psi) dm (max abs diff)", d_sqrt, 0.0,
                              tol, "rescale equivalence"))
    return rows


SUITE_FUNCS = {
    "martingale": suite_martingale,
    "isometry": suite_isometry,
    "simplex": suite_simplex,
    "orthogonality": suite_orthogonality,
    "completeness": suite_completeness,
    "oracle-check": suite_oracle_check,
    "boundary": suite_boundary,
    "telescoping": suite_telescoping,
}


def environment(cfg: SuiteConfig, ctx: RunContext) -> dict:
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": cfg.seed,
        "paths": cfg.paths,
        "quad_nodes": cfg.quad_nodes,
        "node_count": ctx.node_count(),
        "mode": cfg.mode.value,
        "model": ctx.model.kind_name,
        "horizon": ctx.model.horizon,
        "suites": list(cfg.suites),
        "threshold_se": cfg.threshold,
        "exact_tolerance": cfg.exact_tol,
        "oracle": {"n_max": cfg.oracle.n_max, "quad_nodes": cfg.oracle.quad_nodes, "tolerance": cfg.oracle.tolerance},
    }


def run(cfg: SuiteConfig, raise_on_fail: bool = False) -> Report:
    """Run the selected suites in a fixed order.

    Raises:
        SuiteFailure: with ``raise_on_fail`` and at least one failing row.
    """
    ctx = RunContext(cfg)
    report = Report(environment=environment(cfg, ctx))
    for name in SUITE_FUNCS:
        if name in cfg.suites:
            report.extend(SUITE_FUNCS[name](ctx))
    if raise_on_fail and not report.ok:
        raise SuiteFailure(report)
    return report
