"""Verification report rows and their CSV / JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

from .stats import mc_stats

CSV_COLUMNS = ("test", "statistic", "estimate", "std_error", "target", "z_score", "pass")
PASS, FAIL, INFO = "pass", "fail", "info"


def fmt(value) -> str:
    """Round-trip float formatting; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, float) or hasattr(value, "dtype"):
        return format(float(value), ".17g")
    return str(value)


@dataclass
class Row:
    test: str
    statistic: str
    estimate: float
    std_error: float | None
    target: float | None
    z_score: float | None
    status: str
    provenance: str = ""
    bound: float | None = None

    @property
    def passed(self) -> bool:
        return self.status != FAIL


def _z_and_status(estimate, std_error, target, threshold, bound, info):
    """z-score of the deviation beyond the target's own error allowance.

    The allowance is the oracle bound plus a 1e-12 relative roundoff floor, so
    that deterministic per-path quantities (zero standard error) compare with
    the target at floating-point precision.
    """
    diff = estimate - target
    slack = (bound or 0.0) + 1e-12 * max(1.0, abs(target))
    excess = max(abs(diff) - slack, 0.0)
    if std_error > 0.0:
        z = math.copysign(excess / std_error, diff)
    else:
        z = 0.0 if excess == 0.0 else math.copysign(math.inf, diff)
    status = INFO if info else (PASS if abs(z) <= threshold else FAIL)
    return z, status


def stat_row(test, statistic, samples, target, provenance, threshold=3.5, bound=None, info=False) -> Row:
    """Monte Carlo mean of ``samples`` against ``target`` at ``threshold`` standard errors."""
    s = mc_stats(samples)
    z, status = _z_and_status(s.mean, s.std_error, float(target), threshold, bound, info)
    return Row(test, statistic, s.mean, s.std_error, float(target), z, status, provenance, bound)


def estimate_row(test, statistic, estimate, std_error, target, provenance, threshold=3.5, bound=None, info=False) -> Row:
    z, status = _z_and_status(float(estimate), float(std_error), float(target), threshold, bound, info)
    return Row(test, statistic, float(estimate), float(std_error), float(target), z, status, provenance, bound)


def exact_row(test, statistic, value, target, tol, provenance) -> Row:
    ok = abs(value - target) <= tol
    return Row(test, statistic, float(value), None, float(target), None, PASS if ok else FAIL, provenance, tol)


def check_row(test, statistic, value, ok: bool, provenance, target=None) -> Row:
    return Row(test, statistic, float(value), None, None if target is None else float(target), None,
               PASS if ok else FAIL, provenance)


@dataclass
class Report:
    rows: list = field(default_factory=list)
    environment: dict = field(default_factory=dict)

    def extend(self, rows):
        self.rows.extend(rows)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.status == FAIL]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.test, r.statistic, fmt(r.estimate), fmt(r.std_error), fmt(r.target), fmt(r.z_score), r.status])
        return buf.getvalue()

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            return v

        rows = [{k: clean(v) for k, v in asdict(r).items()} for r in self.rows]
        doc = {"environment": self.environment, "rows": rows, "ok": self.ok}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, csv_path=None, json_path=None) -> None:
        if csv_path:
            with open(csv_path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.to_csv())
        if json_path:
            with open(json_path, "w", encoding="utf-8") as fh:
                fh.write(self.to_json())
