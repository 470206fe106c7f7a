"""Acceptance criteria 1-9 at desk scale: Poisson rate 2 and the two-state chain
with exit rates 1 and 2, horizon 1, 10^5 paths, fixed seed.

Each test records one pass/fail line, printed in the terminal summary.
"""

import math
from pathlib import Path as FsPath

import pytest

import conftest
from mppchaos.config import SUITES, load_config
from mppchaos.integral import Const
from mppchaos.martingale import ZetaSpec
from mppchaos.oracle import zeta_inner_product
from mppchaos.report import PASS
from mppchaos.suites import run

CONFIGS = FsPath(__file__).resolve().parents[1] / "configs"
PATHS = 100_000


def _full(name, workers=1):
    over = {"sim": {"paths": PATHS, "workers": workers}, "suites": list(SUITES)}
    return run(load_config(CONFIGS / f"{name}.yaml", over))


@pytest.fixture(scope="module")
def poisson_report():
    return _full("poisson")


@pytest.fixture(scope="module")
def ctmc_report():
    return _full("ctmc")


def record(number, checks):
    """Store the outcome of one criterion and fail the test on any failed check."""
    failed = [name for name, ok in checks if not ok]
    detail = f"{len(checks) - len(failed)}/{len(checks)} checks" + (f"; failed: {', '.join(failed)}" if failed else "")
    conftest.ACCEPTANCE[number] = (not failed, detail)
    assert not failed, detail


def row_checks(report, label, test, match=lambda s: True):
    rows = [r for r in report.rows if r.test == test and match(r.statistic)]
    if not rows:
        return [(f"{label}: no {test} rows", False)]
    return [(f"{label}: {r.statistic}", r.status == PASS) for r in rows]


def test_criterion_1_martingale_zero_mean(poisson_report, ctmc_report):
    names = {"int 1 dm", "int t dm", "J2(1)", "J3(1)"}
    checks = []
    for label, rep in (("poisson", poisson_report), ("ctmc", ctmc_report)):
        found = row_checks(rep, label, "martingale", lambda s: s in names)
        checks += found + [(f"{label}: all four statistics present", len(found) == 4)]
    record(1, checks)


def test_criterion_2_isometry(poisson_report, ctmc_report):
    checks = []
    for label, rep in (("poisson", poisson_report), ("ctmc", ctmc_report)):
        found = row_checks(rep, label, "isometry", lambda s: s.endswith("dm)^2] sqrt_psi"))
        # f = 1, f = t and one indicator per mark
        n_marks = 1 if label == "poisson" else 2
        checks += found + [(f"{label}: {2 + n_marks} test functions", len(found) == 2 + n_marks)]
        cfg = load_config(CONFIGS / f"{label}.yaml")
        h = zeta_inner_product(Const(1.0), Const(1.0), cfg.model, ZetaSpec())
        checks.append((f"{label}: zeta form of f=1 equals H", abs(h - cfg.model.horizon) <= 1e-12))
    record(2, checks)


def test_criterion_3_psi_mode_deviation(poisson_report, ctmc_report):
    checks = []
    for label, rep in (("poisson", poisson_report), ("ctmc", ctmc_report)):
        checks += row_checks(rep, label, "isometry", lambda s: s.startswith("psi gap vs stray-psi correction"))
    record(3, checks)


def test_criterion_4_simplex_volumes(poisson_report, ctmc_report):
    checks = []
    for label, rep in (("poisson", poisson_report), ("ctmc", ctmc_report)):
        rows = [r for r in rep.rows if r.test == "simplex"]
        for n in (1, 2, 3):
            hit = [r for r in rows if r.statistic == f"E[J{n}(1)^2]"]
            ok = len(hit) == 1 and hit[0].status == PASS and abs(hit[0].target - 1 / math.factorial(n)) < 1e-12
            checks.append((f"{label}: E[J{n}(1)^2] = 1/{n}!", ok))
    record(4, checks)


def test_criterion_5_orthogonality(poisson_report, ctmc_report):
    checks = []
    for label, rep in (("poisson", poisson_report), ("ctmc", ctmc_report)):
        pairs = row_checks(rep, label, "orthogonality", lambda s: s.startswith("E[J"))
        checks += pairs + [(f"{label}: 5 pairs for each order pair", len(pairs) == 15)]
    record(5, checks)


def _row(report, test, statistic):
    hit = [r for r in report.rows if r.test == test and r.statistic == statistic]
    return hit[0] if hit else None


def test_criterion_6_completeness(poisson_report, ctmc_report):
    checks = []
    r1 = _row(poisson_report, "completeness", "r_1[N]")
    checks.append(("N: r_1 < 1e-3", r1 is not None and r1.estimate < 1e-3))
    r2 = _row(poisson_report, "completeness", "r_2[N2]")
    checks.append(("N^2: r_2 < 1e-2", r2 is not None and r2.estimate < 1e-2))
    for m in range(4):
        row = _row(poisson_report, "completeness", f"r_{m}[exp_neg_N]")
        checks.append((f"exp(-N): r_{m} matches the oracle tail",
                       row is not None and row.target is not None and row.status == PASS))
    for m in (1, 2, 3):
        row = _row(poisson_report, "completeness", f"r_{m} < r_{m - 1} [exp_neg_N]")
        checks.append((f"exp(-N): r_{m} < r_{m - 1}", row is not None and row.status == PASS))
    row = _row(ctmc_report, "completeness", "r_3[terminal_state=0]")
    checks.append(("terminal state: r_3 matches the oracle tail",
                   row is not None and row.target is not None and row.status == PASS))
    record(6, checks)


def test_criterion_7_exact_identities(poisson_report, ctmc_report):
    from test_integral import _family, _symbolic_I

    from mppchaos.integral import iterated_I
    from mppchaos.martingale import measure_nodes
    from mppchaos.path import Path

    checks = []
    for label, rep in (("poisson", poisson_report), ("ctmc", ctmc_report)):
        checks += row_checks(rep, label, "telescoping")
        checks += row_checks(rep, label, "boundary")
    # displayed k <= 3 expansions, evaluated symbolically and independently of the package
    import sympy as sp

    cfg = load_config(CONFIGS / "poisson.yaml")
    jumps = (sp.Rational(3, 10), sp.Rational(3, 5))
    nd = measure_nodes(cfg.model, cfg.zeta, Path(1.0, [float(t) for t in jumps], [0, 0]))
    for k in (1, 2, 3):
        for tau in (sp.Rational(3, 5), None):
            ref = float(_symbolic_I(list(jumps), tau, k))
            got = iterated_I(nd, _family(), math.inf if tau is None else float(tau), k)
            checks.append((f"I^{k} at tau={tau} vs displayed expansion", abs(got - ref) <= 1e-9))
    record(7, checks)


def test_criterion_8_oracle_self_checks(poisson_report, ctmc_report):
    checks = []
    for label, rep in (("poisson", poisson_report), ("ctmc", ctmc_report)):
        checks += row_checks(rep, label, "oracle-check")
    stats = {r.statistic for r in poisson_report.rows if r.test == "oracle-check"}
    for name in ("E[N] vs closed form", "E[N2] vs closed form", "E[exp_neg_N] vs closed form",
                 "occupancy partition of unity (20 times)", "first-jump oracle q vs 2q",
                 "zeta inner product (1,t) q vs 2q"):
        checks.append((f"poisson: {name} present", name in stats))
    tol_ok = all(r.bound <= 1e-8 for r in poisson_report.rows if r.statistic.endswith("vs closed form"))
    checks.append(("closed forms compared at 1e-8", tol_ok))
    record(8, checks)


def test_criterion_9_reproducibility(poisson_report):
    again = _full("poisson")
    parallel = _full("poisson", workers=2)
    checks = [
        ("second run: identical CSV bytes", again.to_csv().encode() == poisson_report.to_csv().encode()),
        ("second run: identical JSON bytes", again.to_json().encode() == poisson_report.to_json().encode()),
        ("2 workers: identical CSV bytes", parallel.to_csv().encode() == poisson_report.to_csv().encode()),
        ("2 workers: identical JSON bytes", parallel.to_json().encode() == poisson_report.to_json().encode()),
    ]
    record(9, checks)
