import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ctmc_model, poisson_model, renewal_model
from mppchaos.errors import (
    InvalidKernel,
    InvalidMarkSpace,
    InvalidRates,
    OutOfHorizon,
    StochasticSupport,
    SupportMismatch,
)
from mppchaos.model import (
    CTMC,
    History,
    MarkedPoisson,
    MarkSpace,
    ModelSpec,
    Renewal,
    Representation,
    hazard,
    make_hazard,
    mark_kernel,
    support_marks,
    survival,
    validate_model,
)


def test_ctmc_increment_model_is_valid(ctmc):
    assert ctmc.n_regimes == 2
    np.testing.assert_array_equal(ctmc.kernel, [[0.0, 1.0], [0.0, 1.0]])


def test_one_mark_poisson_with_increments_is_valid():
    spec = ModelSpec(MarkSpace.cyclic(1), MarkedPoisson(2.0, (1.0,)), Representation.JUMP_INCREMENT)
    assert validate_model(spec).n_marks == 1


def test_three_state_chain_with_missing_transition_reports_state_and_mark():
    Q = ((-1.0, 0.0, 1.0), (1.0, -2.0, 1.0), (1.0, 1.0, -2.0))
    spec = ModelSpec(MarkSpace((0, 1, 2)), CTMC(Q, 0), Representation.STATE_AFTER_JUMP)
    with pytest.raises(SupportMismatch) as info:
        validate_model(spec)
    assert (info.value.state, info.value.mark) == (0, 1)


@pytest.mark.parametrize(
    "kind, exc",
    [
        (MarkedPoisson(0.0, (1.0,)), InvalidRates),
        (MarkedPoisson(float("nan"), (1.0,)), InvalidRates),
        (MarkedPoisson(1.0, (0.5,)), InvalidKernel),
        (CTMC(((-1.0, 2.0), (1.0, -1.0))), InvalidKernel),
        (CTMC(((1.0, -1.0), (1.0, -1.0))), InvalidRates),
    ],
)
def test_invalid_parameters_are_rejected(kind, exc):
    n = 2 if isinstance(kind, CTMC) else 1
    with pytest.raises(exc):
        validate_model(ModelSpec(MarkSpace(tuple(range(n))), kind))


def test_mark_space_rejects_duplicates_and_broken_group_tables():
    with pytest.raises(InvalidMarkSpace):
        MarkSpace(("a", "a"))
    with pytest.raises(InvalidMarkSpace):
        MarkSpace((0, 1), addition=((0, 1), (1, 1)))


def test_hazard_examples(poisson, ctmc):
    assert hazard(poisson, History(), 0.3) == 2.0
    assert hazard(ctmc, History(((0.2, 1),), 0.5), 0.5) == 2.0
    lin = renewal_model(a=1.0, b=1.0)
    assert hazard(lin, History(((0.2, 0),), 0.5), 0.5) == pytest.approx(1.3, abs=1e-15)


def test_hazard_outside_horizon_raises(poisson):
    with pytest.raises(OutOfHorizon):
        hazard(poisson, History(), 1.5)


def test_mark_kernel_examples(ctmc):
    np.testing.assert_allclose(mark_kernel(poisson_model(dist=(0.3, 0.7)), History(), 0.4), [0.3, 0.7])
    np.testing.assert_allclose(mark_kernel(ctmc, History(((0.2, 1),), 0.4), 0.4), [0.0, 1.0])
    np.testing.assert_allclose(mark_kernel(renewal_model(), History(), 0.4), [0.5, 0.5])


def test_survival_examples(poisson):
    assert survival(poisson, History(), 1.0) == pytest.approx(math.exp(-2.0), abs=1e-15)
    assert survival(poisson, History(((0.4, 0),), 0.9), 0.4) == 1.0
    assert survival(renewal_model(a=1.0, b=1.0), History(), 1.0) == pytest.approx(math.exp(-1.5), abs=1e-15)


def test_support_marks_examples(ctmc):
    assert support_marks(ctmc, 1) == frozenset({1})
    assert support_marks(poisson_model(dist=(0.3, 0.7)), 3) == frozenset({"x0", "x1"})
    Q = ((-2.0, 1.0, 1.0), (1.0, -2.0, 1.0), (1.0, 1.0, -2.0))
    three = validate_model(ModelSpec(MarkSpace((0, 1, 2)), CTMC(Q, 0)))
    assert support_marks(three, 1) == frozenset({1, 2})
    with pytest.raises(StochasticSupport):
        support_marks(three, 2)


@pytest.mark.parametrize("family, params", [("constant", {"rate": 1.7}), ("linear", {"a": 0.4, "b": 1.3}),
                                            ("exponential", {"a": 0.8, "b": -0.6})])
def test_hazard_family_cumulative_matches_quadrature(family, params):
    from scipy.integrate import quad

    h = make_hazard(family, **params)
    for u in (0.1, 0.6, 1.0):
        ref, _ = quad(lambda s: float(h.rate(s)), 0.0, u, epsabs=1e-14)
        assert float(h.cumulative(u)) == pytest.approx(ref, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.1, 3.0), b=st.floats(-0.09, 3.0), e=st.floats(1e-6, 5.0))
def test_linear_hazard_inverse_round_trips(a, b, e):
    h = make_hazard("linear", a=a, b=b)
    u = h.inverse_cumulative(e)
    if math.isfinite(u):
        assert float(h.cumulative(u)) == pytest.approx(e, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.1, 3.0), b=st.floats(-2.0, 2.0), e=st.floats(1e-6, 5.0))
def test_exponential_hazard_inverse_round_trips(a, b, e):
    h = make_hazard("exponential", a=a, b=b)
    u = h.inverse_cumulative(e)
    if math.isfinite(u):
        assert float(h.cumulative(u)) == pytest.approx(e, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 7))
def test_cyclic_group_tables_pass_the_group_check(n):
    ms = MarkSpace.cyclic(n)
    assert ms.has_group
    for i in range(n):
        assert ms.add(i, ms.identity) == i


def test_ctmc_mark_kernel_matches_generator_rows():
    m = ctmc_model()
    Q = np.array([[-1.0, 1.0], [2.0, -2.0]])
    for s in range(2):
        y = m.next_regime[s, 1]
        assert m.kernel[s, 1] == pytest.approx(Q[s, y] / -Q[s, s])
