import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ctmc_model, poisson_model, renewal_model
from mppchaos import functionals as lib
from mppchaos.errors import JumpCapExceeded
from mppchaos.oracle import oracle_expectation
from mppchaos.path import (
    Path,
    PathBatch,
    SeedSpec,
    interval_index,
    read_paths_csv,
    sample_path,
    sample_paths,
    write_paths_csv,
)
from mppchaos.stats import mc_stats


@pytest.fixture(scope="module")
def poisson_paths():
    return sample_paths(poisson_model(), 20261016, 100_000)


def test_poisson_mean_count_matches_rate(poisson_paths):
    s = mc_stats([p.n_jumps for p in poisson_paths])
    assert abs(s.z_score(2.0)) <= 3.5


def test_ctmc_mean_count_matches_oracle():
    m = ctmc_model()
    paths = sample_paths(m, 11, 40_000)
    target, _ = oracle_expectation(m, lib.count())
    assert abs(mc_stats([p.n_jumps for p in paths]).z_score(target)) <= 3.5


def test_vanishing_rate_gives_empty_paths():
    m = poisson_model(rate=1e-12)
    assert all(p.n_jumps == 0 for p in sample_paths(m, 3, 1000))


@pytest.mark.parametrize("t, alpha", [(0.5, 0), (0.50001, 1), (0.2, 0)])
def test_interval_index_boundary_convention(t, alpha):
    assert interval_index(Path(1.0, (0.5,), (0,)), t) == alpha


def test_interval_index_on_empty_path():
    assert interval_index(Path(1.0), 0.7) == 0


def test_path_rejects_unordered_or_out_of_range_times():
    with pytest.raises(ValueError):
        Path(1.0, (0.5, 0.5), (0, 0))
    with pytest.raises(ValueError):
        Path(1.0, (1.2,), (0,))


def test_paths_are_valid_for_every_model_kind():
    for m in (poisson_model(dist=(0.3, 0.7)), ctmc_model(), renewal_model()):
        for p in sample_paths(m, 5, 300):
            assert all(0.0 < t <= 1.0 for t in p.times)
            assert all(b > a for a, b in zip(p.times, p.times[1:]))
            r = m.regime0
            for x in p.marks:
                assert m.kernel[r, x] > 0.0
                r = int(m.next_regime[r, x])


def test_ctmc_paths_alternate_states():
    m = ctmc_model()
    for p in sample_paths(m, 9, 200):
        assert all(x == 1 for x in p.marks)


def test_paths_do_not_depend_on_worker_count_or_chunking():
    m = renewal_model()
    serial = sample_paths(m, 42, 900, chunk=1000)
    parallel = sample_paths(m, 42, 900, workers=2, chunk=128)
    assert serial == parallel


def test_path_streams_are_addressed_by_index():
    m = poisson_model()
    tail = sample_paths(m, 8, 10, start=50)
    assert tail == [sample_path(m, SeedSpec(8, i)) for i in range(50, 60)]
    assert sample_path(m, SeedSpec(8, 0)) != sample_path(m, SeedSpec(9, 0))


def test_jump_cap_is_enforced():
    with pytest.raises(JumpCapExceeded):
        sample_path(poisson_model(rate=500.0), SeedSpec(1, 0), cap=10)


def test_csv_round_trip_keeps_times_exactly():
    m = poisson_model(dist=(0.3, 0.7))
    paths = sample_paths(m, 4, 50)
    buf = io.StringIO()
    write_paths_csv(buf, m, paths)
    assert buf.getvalue().splitlines()[0] == "path_id,alpha,time,mark"
    buf.seek(0)
    assert read_paths_csv(buf, m, len(paths)) == paths


@settings(max_examples=40, deadline=None)
@given(times=st.lists(st.floats(1e-6, 1.0), min_size=0, max_size=6, unique=True), t=st.floats(1e-9, 1.0))
def test_interval_index_counts_jumps_strictly_before(times, t):
    times = sorted(times)
    p = Path(1.0, times, [0] * len(times))
    assert interval_index(p, t) == sum(s < t for s in times)


def test_batch_terminal_regime_matches_marks():
    m = ctmc_model()
    paths = sample_paths(m, 2, 500)
    b = PathBatch.from_paths(m, paths)
    np.testing.assert_array_equal(b.terminal_regime, [p.n_jumps % 2 for p in paths])
