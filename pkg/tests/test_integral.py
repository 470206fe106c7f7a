import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import nquad

from conftest import ctmc_model, poisson_model, renewal_model
from mppchaos.errors import ArityMismatch, DepthTooLarge
from mppchaos.integral import (
    Const,
    Integrand,
    IteratedFamily,
    MarkIndicator,
    TimePower,
    Trie,
    integrate,
    integrate_until,
    iterated_I,
    iterated_I_nested,
    iterated_J,
    iterated_J_recursive,
    sweep,
)
from mppchaos.martingale import Rescale, ZetaSpec, measure_nodes
from mppchaos.path import Path, sample_paths

R2 = math.sqrt(2.0)


def nodes_for(path, model=None, mode=Rescale.SQRT_PSI, q=16):
    return measure_nodes(model or poisson_model(), ZetaSpec(), path, q=q, mode=mode)


# ---------------------------------------------------------------- integrate


def test_integrate_examples():
    empty = nodes_for(Path(1.0))
    assert integrate(empty, Integrand.constant(0.0)) == 0.0
    assert integrate(empty, Integrand.constant(1.0)) == pytest.approx(-R2, abs=1e-13)
    one = nodes_for(Path(1.0, (0.5,), (0,)))
    assert integrate(one, Integrand.constant(1.0)) == pytest.approx(1 / R2 - R2, abs=1e-13)


def test_integrate_rejects_wrong_arity():
    with pytest.raises(ArityMismatch):
        integrate(nodes_for(Path(1.0)), Integrand.constant(1.0, arity=2))


def test_predictable_integrand_never_reads_its_own_jump():
    m = ctmc_model()
    seen = []

    def f(history, t, x):
        seen.append((t, history.jumps))
        return float(len(history.jumps)) + (history.marks[-1] if history.jumps else 0.0)

    p = Path(1.0, (0.3, 0.6), (1, 1))
    value = integrate(measure_nodes(m, ZetaSpec(), p), Integrand(1, predictable=f))
    assert all(all(s < t for s, _ in jumps) for t, jumps in seen)
    # perturbing the mark of the jump at the evaluation time leaves its term unchanged
    g = lambda h, t, x: float(len(h.jumps))  # noqa: E731
    a = integrate(measure_nodes(m, ZetaSpec(), p), Integrand(1, predictable=g))
    assert np.isfinite(value) and np.isfinite(a)
    nd = measure_nodes(m, ZetaSpec(), p)
    atoms = [w * k for k, (_, _, w) in enumerate(nd.atoms)]
    cells = sum(w * (0 if t < 0.3 else 1 if t < 0.6 else 2) for t, _, w in nd.cells)
    assert a == pytest.approx(sum(atoms) + cells, abs=1e-13)


# ---------------------------------------------------------------- iterated J


def test_iterated_J_examples():
    one = nodes_for(Path(1.0, (0.5,), (0,)))
    assert iterated_J(one, 0, 2.5) == 2.5
    assert iterated_J(one, 1, Integrand.constant(1.0)) == pytest.approx(integrate(one, Integrand.constant(1.0)))
    assert iterated_J(one, 2, Integrand.constant(1.0, 2)) == pytest.approx(0.0, abs=1e-13)
    two = nodes_for(Path(1.0, (0.2, 0.85), (0, 0)))
    assert iterated_J(two, 2, Integrand.constant(1.0, 2)) == pytest.approx(-0.5, abs=1e-13)


def test_general_integrand_depth_cap():
    g = Integrand(5, func=lambda ts, xs: ts.sum(axis=-1))
    with pytest.raises(DepthTooLarge):
        iterated_J(nodes_for(Path(1.0)), 5, g)


def _random_factor(rng):
    kind = rng.integers(3)
    if kind == 0:
        return Const(float(rng.normal()))
    if kind == 1:
        return TimePower(int(rng.integers(1, 4)))
    return MarkIndicator(int(rng.integers(2)))


def test_sweep_matches_recursive_evaluator_on_random_paths():
    rng = np.random.default_rng(5)
    m = ctmc_model()
    paths = sample_paths(m, 77, 100)
    worst = 0.0
    for p in paths:
        nd = measure_nodes(m, ZetaSpec(), p, q=6)
        for n in (1, 2, 3):
            g = Integrand.separable(*[_random_factor(rng) for _ in range(n)])
            worst = max(worst, abs(iterated_J(nd, n, g) - iterated_J_recursive(nd, n, g)))
    assert worst < 1e-9


def test_bracket_identity_for_J2():
    m = poisson_model()
    for p in sample_paths(m, 3, 50):
        nd = nodes_for(p, m)
        M = integrate(nd, Integrand.constant(1.0))
        bracket = sum(w * w for _, _, w in nd.atoms)
        assert iterated_J(nd, 2, Integrand.constant(1.0, 2)) == pytest.approx((M * M - bracket) / 2, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), seed=st.integers(0, 10_000))
def test_iterated_J_is_linear(a, b, seed):
    m = poisson_model(dist=(0.4, 0.6))
    p = sample_paths(m, seed, 1)[0]
    nd = nodes_for(p, m, q=8)
    g = Integrand.separable(TimePower(1), MarkIndicator(0))
    h = Integrand(2, func=lambda ts, xs: np.cos(ts[..., 0] - ts[..., 1]))
    lhs = iterated_J(nd, 2, a * g + b * h)
    rhs = a * iterated_J(nd, 2, g) + b * iterated_J(nd, 2, h)
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_empty_path_matches_direct_simplex_quadrature():
    nd = nodes_for(Path(1.0))
    f = [lambda t: math.exp(-t), lambda t: math.cos(2 * t), lambda t: 1.0 + t]
    g = Integrand.separable(*[lambda t, x, fk=fk: np.vectorize(fk)(t) + 0.0 * x for fk in f])
    ref, _ = nquad(lambda s3, s2, s1: f[0](s1) * f[1](s2) * f[2](s3),
                   [lambda s2, s1: [0.0, s2], lambda s1: [0.0, s1], [0.0, 1.0]], opts={"epsabs": 1e-12})
    assert iterated_J(nd, 3, g) == pytest.approx((-R2) ** 3 * ref, abs=1e-6)


def test_trie_reuses_shared_suffixes():
    trie = Trie.from_tuples([(0,), (1, 0), (0, 0), (1, 1, 0)])
    # (1, 1, 0) hangs off (1, 0), which hangs off (0,); nothing else is added
    assert len(trie) == 5
    assert trie.tuples[trie.parent[trie.index((1, 1, 0))]] == (1, 0)
    nd = nodes_for(Path(1.0, (0.4,), (0,)))
    V = sweep(nd, [Const(1.0), TimePower(1)], trie)
    ref = iterated_J(nd, 3, Integrand.separable(TimePower(1), TimePower(1), Const(1.0)))
    assert V[0, trie.index((1, 1, 0))] == pytest.approx(ref, abs=1e-13)


# ---------------------------------------------------------------- iterated I


def test_iterated_I_examples():
    empty = nodes_for(Path(1.0))
    assert iterated_I(empty, IteratedFamily(3.7), 0.5, 0) == 3.7
    fam = IteratedFamily(1.0, [Integrand.constant(1.0)])
    assert iterated_I(empty, fam, 1.0, 1) == pytest.approx(1 - R2, abs=1e-13)
    one = nodes_for(Path(1.0, (0.5,), (0,)))
    fam0 = IteratedFamily(0.0, [Integrand.constant(1.0)])
    assert iterated_I(one, fam0, 0.5, 1) == pytest.approx(-1 / R2, abs=1e-13)


def test_open_tau_cap_ignores_a_jump_at_tau():
    fam = IteratedFamily(0.2, [Integrand.separable(TimePower(1)), Integrand.constant(1.0, 2),
                               Integrand.separable(Const(1.0), TimePower(2), Const(-1.0))])
    A = nodes_for(Path(1.0, (0.3,), (0,)))
    B = nodes_for(Path(1.0, (0.3, 0.6), (0, 0)))
    for k in (1, 2, 3):
        assert iterated_I(B, fam, 0.6, k) == pytest.approx(iterated_I(A, fam, 0.6, k), abs=1e-12)
    assert iterated_I(B, fam, math.inf, 2) != pytest.approx(iterated_I(B, fam, 0.6, 2), abs=1e-3)


def test_closed_and_open_single_integrals_differ_by_the_atom():
    nd = nodes_for(Path(1.0, (0.5,), (0,)))
    one = lambda t, x: np.ones(np.broadcast(t, x).shape)  # noqa: E731
    jump = integrate_until(nd, one, 0.5, closed=True) - integrate_until(nd, one, 0.5, closed=False)
    assert jump == pytest.approx(1 / R2, abs=1e-15)


# independent symbolic evaluation of the displayed k <= 3 expansions ----------

_ts = sp.symbols("t1:4")
G_SYM = [
    lambda a: 1 + a[0],
    lambda a: a[0] * a[1] - a[1] ** 2 + sp.Rational(1, 2),
    lambda a: a[0] + a[1] * a[2] - a[2],
]


def _family():
    return IteratedFamily(0.75, [
        Integrand(1, func=lambda ts, xs: 1 + ts[..., 0]),
        Integrand(2, func=lambda ts, xs: ts[..., 0] * ts[..., 1] - ts[..., 1] ** 2 + 0.5),
        Integrand(3, func=lambda ts, xs: ts[..., 0] + ts[..., 1] * ts[..., 2] - ts[..., 2]),
    ])


def _symbolic_I(jumps, tau, k, H=1):
    """I^k_tau on a Poisson(2) path under sqrt-psi weights, by exact piecewise integration."""
    dens = -sp.sqrt(2)
    atom = sp.sqrt(2) / 2
    pts = sorted(jumps)

    def level(lev, prefix):
        j = k - lev + 1
        b = pts[j - 1] if j <= len(pts) else H
        if lev == 1:
            c, c_int = tau, None
        else:
            c, c_int = prefix[-1]
        if c_int is not None:
            clo, chi = c_int
            upper = b if b <= clo else c
            atom_ok = lambda T: T <= b and T <= clo  # noqa: E731
            cuts = [T for T in pts if T <= clo and T < b]
        else:
            upper = b if c is None else min(b, c)
            atom_ok = lambda T: T <= b and (c is None or T < c)  # noqa: E731
            cuts = [T for T in pts if T < upper]
        vals = [v for v, _ in prefix]
        total = 0
        edges = [0] + cuts + [upper]
        for lo, hi in zip(edges[:-1], edges[1:]):
            s = sp.Symbol(f"s{lev}")
            hi_num = hi if not isinstance(hi, sp.Symbol) else c_int[1]
            inner = G_SYM[lev - 1](vals + [s])
            if lev < k:
                inner = inner + level(lev + 1, prefix + [(s, (lo, hi_num))])
            total += sp.integrate(dens * inner, (s, lo, hi))
        for T in pts:
            if atom_ok(T):
                inner = G_SYM[lev - 1](vals + [T])
                if lev < k:
                    inner = inner + level(lev + 1, prefix + [(T, None)])
                total += atom * inner
        return total

    return sp.Rational(3, 4) + level(1, [])


@pytest.mark.parametrize("jumps", [(), (sp.Rational(3, 10),), (sp.Rational(3, 10), sp.Rational(3, 5)),
                                   (sp.Rational(1, 5), sp.Rational(3, 5), sp.Rational(9, 10))])
@pytest.mark.parametrize("tau", [sp.Rational(9, 20), sp.Rational(3, 5), None])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_I_matches_displayed_expansions(jumps, tau, k):
    expected = float(_symbolic_I(list(jumps), tau, k))
    nd = nodes_for(Path(1.0, [float(t) for t in jumps], [0] * len(jumps)))
    t = math.inf if tau is None else float(tau)
    assert iterated_I(nd, _family(), t, k) == pytest.approx(expected, abs=1e-9)
    assert iterated_I_nested(nd, _family(), t, k) == pytest.approx(expected, abs=1e-9)


def test_I_term_sum_matches_nested_recursion_on_renewal_paths():
    m = renewal_model(a=0.5, b=0.5)
    fam = IteratedFamily(0.1, [Integrand.separable(MarkIndicator(1)),
                               Integrand(2, func=lambda ts, xs: np.sin(ts[..., 0] + xs[..., 1])),
                               Integrand.separable(TimePower(1), Const(2.0), MarkIndicator(0))])
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for p in sample_paths(m, 31, 15):
            nd = measure_nodes(m, ZetaSpec(), p, q=6)
            for tau in (0.35, math.inf):
                for k in (1, 2, 3):
                    assert iterated_I(nd, fam, tau, k) == pytest.approx(iterated_I_nested(nd, fam, tau, k), abs=1e-12)
