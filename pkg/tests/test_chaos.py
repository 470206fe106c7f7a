import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import nquad

from conftest import ctmc_model, poisson_model
from mppchaos import functionals as lib
from mppchaos.chaos import build_basis, completeness_report, evaluate_features, project
from mppchaos.quadrature import shifted_legendre
from mppchaos.errors import DimensionMismatch, SizeCap
from mppchaos.martingale import ZetaSpec
from mppchaos.path import Path, PathBatch, sample_paths


@pytest.fixture(scope="module")
def poisson_run():
    m = poisson_model()
    paths = sample_paths(m, 20261016, 100_000)
    basis = build_basis(3, 0, m.mark_space, 1.0)
    F = evaluate_features(paths, basis, m)
    return m, PathBatch.from_paths(m, paths), basis, F


# ---------------------------------------------------------------- basis


def test_basis_examples():
    b = build_basis(1, 0, 1)
    assert (b.count(0), b.count(1)) == (1, 1)
    assert build_basis(2, 1, 2).count(2) == 16
    assert build_basis(0, 3, 2).size == 1


def test_basis_size_cap():
    with pytest.raises(SizeCap):
        build_basis(4, 6, 2)


@settings(max_examples=30, deadline=None)
@given(K=st.integers(0, 3), d=st.integers(0, 3), E=st.integers(1, 3))
def test_basis_counts_and_uniqueness(K, d, E):
    if ((d + 1) * E) ** K > 10_000:
        return
    b = build_basis(K, d, E)
    for n in range(K + 1):
        tuples = b.tuples(n)
        assert len(tuples) == ((d + 1) * E) ** n
        assert len(set(tuples)) == len(tuples)
    assert b.integrand(0) is None


def test_basis_factors_are_bounded():
    b = build_basis(2, 4, 2, horizon=2.0)
    ts = np.linspace(0.0, 2.0, 401)
    for f in b.factors:
        for x in (0, 1):
            assert np.max(np.abs(f(ts, np.full_like(ts, x, dtype=int)))) <= 1.0 + 1e-12


# ---------------------------------------------------------------- features


def test_constant_column_and_order_one_closed_form(poisson_run):
    m, batch, basis, F = poisson_run
    np.testing.assert_array_equal(F[:, 0], 1.0)
    col = basis.columns(1)[0]
    np.testing.assert_allclose(F[:, col], (batch.counts - 2.0) / math.sqrt(2.0), atol=1e-12)


def test_empty_path_order_two_column_matches_quadrature():
    m = poisson_model(dist=(0.4, 0.6))
    basis = build_basis(2, 1, m.mark_space)
    F = evaluate_features([Path(1.0)], basis, m)
    # default reference marks are uniform: psi = 0.5 / (2 nu(x)), density -sqrt(psi) * 2 nu(x)
    dens = [-math.sqrt(0.5 / (2 * p)) * 2 * p for p in (0.4, 0.6)]
    for col in basis.columns(2):
        (i, j) = basis.trie.tuples[col]
        fi, fj = basis.factors[i], basis.factors[j]
        ref, _ = nquad(lambda s2, s1: float(fi(s1, fi.mark)) * float(fj(s2, fj.mark)),
                       [lambda s1: [0.0, s1], [0.0, 1.0]], opts={"epsabs": 1e-13})
        assert F[0, col] == pytest.approx(dens[fi.mark] * dens[fj.mark] * ref, abs=1e-10)


def test_features_do_not_depend_on_workers_or_chunks():
    m = ctmc_model()
    paths = sample_paths(m, 6, 1500)
    basis = build_basis(2, 1, m.mark_space)
    a = evaluate_features(paths, basis, m, chunk=2048)
    b = evaluate_features(paths, basis, m, chunk=256, workers=2)
    assert a.tobytes() == b.tobytes()


def test_shifted_legendre_is_orthogonal():
    x, w = np.polynomial.legendre.leggauss(20)
    t = (x + 1.0)  # horizon 2
    for i in range(4):
        for j in range(4):
            ip = float(w @ (shifted_legendre(i, t, 2.0) * shifted_legendre(j, t, 2.0)))
            assert ip == pytest.approx(2.0 / (2 * i + 1) if i == j else 0.0, abs=1e-13)


# ---------------------------------------------------------------- projection


def test_projecting_a_feature_on_itself(poisson_run):
    _, _, basis, F = poisson_run
    col = basis.columns(1)[0]
    res = project(F[:, col], F[:, :col + 1], ridge=0.0, order=basis.order[:col + 1])
    assert res.residuals[1] < 1e-10
    assert res.coefficients_by_order(1)[1][0] == pytest.approx(1.0, abs=1e-10)


def test_count_projection_coefficients(poisson_run):
    m, batch, basis, F = poisson_run
    cols = np.flatnonzero(basis.order <= 1)
    res = project(batch.counts.astype(float), F[:, cols], order=basis.order[cols])
    assert res.residuals[1] < 1e-3
    np.testing.assert_allclose(res.coefficients[1], [2.0, math.sqrt(2.0)], atol=1e-6)


def test_squared_count_is_order_two(poisson_run):
    _, batch, basis, F = poisson_run
    cols = np.flatnonzero(basis.order <= 2)
    res = project(batch.counts.astype(float) ** 2, F[:, cols], order=basis.order[cols])
    assert res.residuals[2] < 1e-2


def test_constant_target_has_zero_residual(poisson_run):
    _, _, basis, F = poisson_run
    res = project(np.full(F.shape[0], 4.2), F, order=basis.order)
    assert res.residuals[0] == 0.0


def test_projection_reports_condition_number_and_ridge(poisson_run):
    _, batch, basis, F = poisson_run
    res = project(batch.counts.astype(float), F, order=basis.order)
    assert res.condition_number >= 1.0
    G = F.T @ F / len(F)
    assert res.ridge == pytest.approx(1e-8 * np.trace(G) / F.shape[1])


def test_projection_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        project(np.zeros(5), np.zeros((4, 2)))


def test_rank_deficient_features_fall_back_to_pseudo_inverse():
    rng = np.random.default_rng(0)
    x = rng.normal(size=500)
    F = np.c_[np.ones(500), x, x]
    res = project(3.0 * x + 1.0, F, ridge=0.0)
    assert res.residuals[1] < 1e-20


def test_completeness_report_for_exponential_of_count():
    m = poisson_model()
    rows = completeness_report(m, ZetaSpec(), [lib.exp_neg_count(), lib.constant(1.5)], 3, 30_000, seed=99)
    exp_rows = [r for r in rows if r.functional == "exp_neg_N"]
    assert all(r.passed for r in rows)
    assert [r.order for r in exp_rows] == [0, 1, 2, 3]
    assert all(b.residual_fraction < a.residual_fraction for a, b in zip(exp_rows, exp_rows[1:]))
    const = [r for r in rows if r.functional.startswith("const")]
    assert const[0].residual_fraction == 0.0
