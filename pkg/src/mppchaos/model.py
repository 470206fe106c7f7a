"""Marked point process models on a finite mark space.

Every builtin model is a semi-Markov process over a finite set of *regimes*:
the regime after each jump fixes the hazard of the next inter-jump time (as a
function of elapsed time) and the kernel of the next mark.

    MarkedPoisson  one regime, constant hazard, i.i.d. marks
    CTMC           regime = current state, constant hazard -Q[s, s]
    Renewal        regime = last mark, elapsed-time hazard h(u)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InvalidKernel,
    InvalidMarkSpace,
    InvalidRates,
    OutOfHorizon,
    StochasticSupport,
    SupportMismatch,
)

_TOL = 1e-12


# --------------------------------------------------------------------------
# mark space


@dataclass(frozen=True)
class MarkSpace:
    """Finite ordered set of mark labels, optionally with a group law.

    ``addition[i][j]`` is the index of ``labels[i] + labels[j]``.
    """

    labels: tuple
    addition: tuple | None = None

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 1:
            raise InvalidMarkSpace("mark space needs at least one label")
        if len(set(labels)) != len(labels):
            raise InvalidMarkSpace(f"duplicate labels in {labels!r}")
        if self.addition is not None:
            table = tuple(tuple(int(v) for v in row) for row in self.addition)
            object.__setattr__(self, "addition", table)
            _check_group(table, len(labels))

    @classmethod
    def cyclic(cls, n: int, labels: Sequence | None = None) -> "MarkSpace":
        """Z_n with labels 0..n-1 (or the given labels in that order)."""
        labels = tuple(range(n)) if labels is None else tuple(labels)
        table = tuple(tuple((i + j) % n for j in range(n)) for i in range(n))
        return cls(labels, table)

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidMarkSpace(f"unknown mark label {label!r}") from None

    @property
    def has_group(self) -> bool:
        return self.addition is not None

    @cached_property
    def identity(self) -> int:
        if self.addition is None:
            raise InvalidMarkSpace("mark space has no group structure")
        n = self.size
        for e in range(n):
            if all(self.addition[e][j] == j and self.addition[j][e] == j for j in range(n)):
                return e
        raise InvalidMarkSpace("no identity element")  # unreachable after _check_group

    def add(self, i: int, j: int) -> int:
        return self.addition[i][j]


def _check_group(table, n):
    if len(table) != n or any(len(row) != n for row in table):
        raise InvalidMarkSpace("addition table must be |E| x |E|")
    if any(not 0 <= v < n for row in table for v in row):
        raise InvalidMarkSpace("addition table is not closed")
    ids = [e for e in range(n) if all(table[e][j] == j and table[j][e] == j for j in range(n))]
    if not ids:
        raise InvalidMarkSpace("addition table has no identity")
    e = ids[0]
    for i in range(n):
        if not any(table[i][j] == e and table[j][i] == e for j in range(n)):
            raise InvalidMarkSpace(f"element {i} has no inverse")
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if table[table[i][j]][k] != table[i][table[j][k]]:
                    raise InvalidMarkSpace("addition table is not associative")


# --------------------------------------------------------------------------
# hazard families (functions of elapsed time since the last jump)


class HazardFamily:
    """Hazard h(u) of elapsed time u with its integral H(u) = int_0^u h."""

    name = "abstract"

    def rate(self, u):
        raise NotImplementedError

    def cumulative(self, u):
        raise NotImplementedError

    def inverse_cumulative(self, e: float) -> float:
        """Smallest u with H(u) = e; bisection to 1e-12 unless overridden."""
        hi = 1.0
        while self.cumulative(hi) < e:
            hi *= 2.0
            if hi > 1e12:
                return math.inf
        return brentq(lambda u: self.cumulative(u) - e, 0.0, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps)

    @property
    def is_constant(self) -> bool:
        return False

    def sup(self, horizon: float) -> float:
        grid = np.linspace(0.0, horizon, 1025)
        return float(np.max(self.rate(grid)))

    def inf(self, horizon: float) -> float:
        grid = np.linspace(0.0, horizon, 1025)
        return float(np.min(self.rate(grid)))

    def params(self) -> dict:
        return {}


class ConstantHazard(HazardFamily):
    name = "constant"

    def __init__(self, rate: float):
        self.value = float(rate)

    def rate(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value)

    def cumulative(self, u):
        return self.value * np.asarray(u, dtype=float)

    def inverse_cumulative(self, e):
        return e / self.value

    @property
    def is_constant(self):
        return True

    def sup(self, horizon):
        return self.value

    def inf(self, horizon):
        return self.value

    def params(self):
        return {"rate": self.value}


class LinearHazard(HazardFamily):
    """h(u) = a + b u."""

    name = "linear"

    def __init__(self, a: float, b: float):
        self.a = float(a)
        self.b = float(b)

    def rate(self, u):
        return self.a + self.b * np.asarray(u, dtype=float)

    def cumulative(self, u):
        u = np.asarray(u, dtype=float)
        return self.a * u + 0.5 * self.b * u * u

    def inverse_cumulative(self, e):
        a, b = self.a, self.b
        if b == 0.0:
            return e / a
        disc = a * a + 2.0 * b * e
        if disc < 0.0:
            return math.inf
        # stable root of 0.5 b u^2 + a u - e = 0
        return 2.0 * e / (a + math.sqrt(disc))

    def params(self):
        return {"a": self.a, "b": self.b}


class ExponentialHazard(HazardFamily):
    """h(u) = a exp(b u)."""

    name = "exponential"

    def __init__(self, a: float, b: float):
        self.a = float(a)
        self.b = float(b)

    def rate(self, u):
        return self.a * np.exp(self.b * np.asarray(u, dtype=float))

    def cumulative(self, u):
        u = np.asarray(u, dtype=float)
        x = self.b * u
        # expm1(x)/x form, so a tiny or subnormal b does not amplify rounding in x
        small = np.abs(x) < 1e-8
        ratio = np.where(small, 1.0 + x / 2.0, np.expm1(x) / np.where(small, 1.0, x))
        return self.a * u * ratio

    def inverse_cumulative(self, e):
        arg = self.b * e / self.a
        if arg <= -1.0:
            return math.inf
        ratio = 1.0 - arg / 2.0 if abs(arg) < 1e-8 else math.log1p(arg) / arg
        return e / self.a * ratio

    def params(self):
        return {"a": self.a, "b": self.b}


HAZARD_FAMILIES = {
    "constant": ConstantHazard,
    "linear": LinearHazard,
    "exponential": ExponentialHazard,
}


def make_hazard(family: str, **params) -> HazardFamily:
    try:
        cls = HAZARD_FAMILIES[family]
    except KeyError:
        raise InvalidRates(f"unknown hazard family {family!r}") from None
    return cls(**params)


# --------------------------------------------------------------------------
# model description


class Representation(str, Enum):
    STATE_AFTER_JUMP = "state_after_jump"
    JUMP_INCREMENT = "jump_increment"


@dataclass(frozen=True)
class MarkedPoisson:
    rate: float
    mark_dist: tuple


@dataclass(frozen=True)
class CTMC:
    generator: tuple
    initial_state: object = None  # label; defaults to the first label


@dataclass(frozen=True)
class Renewal:
    hazard: HazardFamily
    kernel: tuple
    initial_mark: object = None  # label conditioning the first mark


@dataclass(frozen=True)
class ModelSpec:
    mark_space: MarkSpace
    kind: object
    representation: Representation = Representation.STATE_AFTER_JUMP
    horizon: float = 1.0


@dataclass(frozen=True)
class History:
    """Jumps strictly before ``t_current`` as (time, mark index) pairs."""

    jumps: tuple = ()
    t_current: float = 0.0

    def __post_init__(self):
        jumps = tuple((float(t), int(x)) for t, x in self.jumps)
        object.__setattr__(self, "jumps", jumps)
        times = [t for t, _ in jumps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("history times must be strictly increasing")
        if times and times[-1] >= self.t_current:
            raise ValueError("history must lie strictly before t_current")

    @classmethod
    def before(cls, path, t: float) -> "History":
        """History of ``path`` strictly before time ``t``."""
        jumps = [(s, x) for s, x in zip(path.times, path.marks) if s < t]
        return cls(tuple(jumps), t)

    @property
    def last_time(self) -> float:
        return self.jumps[-1][0] if self.jumps else 0.0

    @property
    def marks(self) -> tuple:
        return tuple(x for _, x in self.jumps)


# --------------------------------------------------------------------------
# validated model


@dataclass(eq=False)
class ValidatedModel:
    """Immutable, precomputed view of a validated :class:`ModelSpec`."""

    spec: ModelSpec
    regime_labels: tuple
    regime0: int
    hazards: tuple  # HazardFamily per regime
    kernel: np.ndarray  # (R, E) next-mark probabilities
    next_regime: np.ndarray  # (R, E) regime after jumping with mark x
    _reach: list = field(default_factory=list, repr=False)
    _cycle_start: int | None = field(default=None, repr=False)

    def __post_init__(self):
        self.kernel.setflags(write=False)
        self.next_regime.setflags(write=False)

    @property
    def mark_space(self) -> MarkSpace:
        return self.spec.mark_space

    @property
    def horizon(self) -> float:
        return float(self.spec.horizon)

    @property
    def n_marks(self) -> int:
        return self.spec.mark_space.size

    @property
    def n_regimes(self) -> int:
        return len(self.regime_labels)

    @property
    def kind_name(self) -> str:
        return type(self.spec.kind).__name__

    @property
    def is_markov(self) -> bool:
        """Constant hazards: (count, regime) is a continuous-time Markov chain."""
        return all(h.is_constant for h in self.hazards)

    @cached_property
    def exit_rates(self) -> np.ndarray:
        if not self.is_markov:
            raise TypeError("exit rates are only constant for Markov models")
        return np.array([h.value for h in self.hazards])

    def hazard_rate(self, regime: int, elapsed):
        return self.hazards[regime].rate(elapsed)

    def cumulative_hazard(self, regime: int, elapsed):
        return self.hazards[regime].cumulative(elapsed)

    def survival_elapsed(self, regime: int, elapsed):
        return np.exp(-self.hazards[regime].cumulative(elapsed))

    def regime_after(self, marks: Sequence[int]) -> int:
        r = self.regime0
        for x in marks:
            r = int(self.next_regime[r, x])
        return r

    def max_hazard(self) -> float:
        return max(h.sup(self.horizon) for h in self.hazards)

    def admissible_marks(self, regime: int) -> np.ndarray:
        """Marks allowed by the representation before any rate is consulted."""
        mask = np.ones(self.n_marks, dtype=bool)
        if isinstance(self.spec.kind, CTMC):
            if self.spec.representation is Representation.STATE_AFTER_JUMP:
                mask[regime] = False
            else:
                mask[self.mark_space.identity] = False
        return mask

    # reachable regimes before jump alpha (alpha >= 1), eventually periodic

    def reachable(self, alpha: int) -> frozenset:
        if alpha < 1:
            raise ValueError("jump index starts at 1")
        if not self._reach:
            seen = {}
            current = frozenset([self.regime0])
            while current not in seen:
                seen[current] = len(self._reach)
                self._reach.append(current)
                current = frozenset(
                    int(self.next_regime[r, x])
                    for r in current
                    for x in range(self.n_marks)
                    if self.kernel[r, x] > 0.0
                )
            self._cycle_start = seen[current]
        i = alpha - 1
        n = len(self._reach)
        if i >= n:
            period = n - self._cycle_start
            i = self._cycle_start + (i - self._cycle_start) % period
        return self._reach[i]

    def distinct_jump_indices(self) -> range:
        """Jump indices whose reachable sets cover every distinct case."""
        self.reachable(1)
        return range(1, len(self._reach) + 1)

    def support_indices(self, alpha: int) -> tuple:
        sets = {tuple(np.flatnonzero(self.kernel[r] > 0.0)) for r in self.reachable(alpha)}
        if len(sets) != 1:
            raise StochasticSupport(
                f"marks with positive rate at jump {alpha} depend on the history: "
                f"{sorted(sets)}"
            )
        return sets.pop()


# --------------------------------------------------------------------------
# construction and validation


def _finite_positive(value, what):
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidRates(f"{what} must be finite and > 0, got {value!r}")
    return value


def _probability_rows(rows, n_cols, what):
    arr = np.asarray(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[1] != n_cols:
        raise InvalidKernel(f"{what} must have {n_cols} columns, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidRates(f"{what} has non-finite entries")
    if np.any(arr < 0.0):
        raise InvalidKernel(f"{what} has negative entries")
    sums = arr.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise InvalidKernel(f"{what} rows must sum to 1, got {sums.tolist()}")
    return arr


def _build(spec: ModelSpec) -> ValidatedModel:
    ms = spec.mark_space
    n = ms.size
    horizon = float(spec.horizon)
    if not math.isfinite(horizon) or horizon <= 0.0:
        raise InvalidRates(f"horizon must be finite and > 0, got {horizon!r}")
    kind = spec.kind

    if isinstance(kind, MarkedPoisson):
        lam = _finite_positive(kind.rate, "Poisson rate")
        nu = _probability_rows(kind.mark_dist, n, "mark distribution")
        return ValidatedModel(
            spec, ("*",), 0, (ConstantHazard(lam),), nu.copy(), np.zeros((1, n), dtype=int)
        )

    if isinstance(kind, CTMC):
        Q = np.asarray(kind.generator, dtype=float)
        if Q.shape != (n, n):
            raise InvalidKernel(f"generator must be {n}x{n} over the mark labels, got {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise InvalidRates("generator has non-finite entries")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0.0):
            raise InvalidRates("generator off-diagonal entries must be >= 0")
        if np.any(np.abs(Q.sum(axis=1)) > 1e-9 * np.maximum(1.0, np.abs(np.diag(Q)))):
            raise InvalidKernel("generator rows must sum to 0")
        exit_rates = off.sum(axis=1)
        if np.any(exit_rates <= 0.0):
            s = int(np.flatnonzero(exit_rates <= 0.0)[0])
            raise InvalidRates(f"state {ms.labels[s]!r} has zero exit rate")
        start = 0 if kind.initial_state is None else ms.index(kind.initial_state)
        kernel = np.zeros((n, n))
        nxt = np.zeros((n, n), dtype=int)
        if spec.representation is Representation.STATE_AFTER_JUMP:
            for s in range(n):
                kernel[s] = off[s] / exit_rates[s]
                nxt[s] = np.arange(n)
        else:
            if not ms.has_group:
                raise InvalidMarkSpace("jump-increment representation needs a group law on the marks")
            for s in range(n):
                for d in range(n):
                    y = ms.add(s, d)
                    kernel[s, d] = off[s, y] / exit_rates[s]
                    nxt[s, d] = y
        hazards = tuple(ConstantHazard(q) for q in exit_rates)
        return ValidatedModel(spec, ms.labels, start, hazards, kernel, nxt)

    if isinstance(kind, Renewal):
        hz = kind.hazard
        if not isinstance(hz, HazardFamily):
            raise InvalidRates("renewal hazard must be a HazardFamily")
        lo = hz.inf(horizon)
        if not math.isfinite(lo) or lo <= 0.0 or not math.isfinite(hz.sup(horizon)):
            raise InvalidRates("renewal hazard must be finite and > 0 on [0, H]")
        kernel = _probability_rows(kind.kernel, n, "renewal mark kernel")
        if kernel.shape[0] == 1:
            kernel = np.repeat(kernel, n, axis=0)
        if kernel.shape[0] != n:
            raise InvalidKernel("renewal kernel needs one row per previous mark")
        start = 0 if kind.initial_mark is None else ms.index(kind.initial_mark)
        nxt = np.tile(np.arange(n), (n, 1))
        return ValidatedModel(spec, ms.labels, start, (hz,) * n, kernel, nxt)

    raise InvalidRates(f"unknown model kind {type(kind).__name__}")


def validate_model(spec: ModelSpec, zeta=None) -> ValidatedModel:
    """Check every model invariant and the support compatibility of the reference marks.

    With ``zeta`` given, its per-jump mark weights are the reference; otherwise
    the reference is uniform over the representation's admissible marks in
    every reachable regime.

    Raises:
        InvalidRates, InvalidKernel, InvalidMarkSpace, SupportMismatch
    """
    model = _build(spec)
    labels = spec.mark_space.labels
    for alpha in model.distinct_jump_indices():
        for r in sorted(model.reachable(alpha)):
            if zeta is None:
                ref = model.admissible_marks(r)
            else:
                ref = np.asarray(zeta.mark_weights(model, alpha)) > 0.0
            bad = np.flatnonzero(ref & (model.kernel[r] <= 0.0))
            if bad.size:
                raise SupportMismatch(model.regime_labels[r], labels[int(bad[0])])
    return model


# --------------------------------------------------------------------------
# per-history quantities


def _state(model: ValidatedModel, history: History, t: float, *, strict: bool):
    if not 0.0 <= t <= model.horizon * (1 + _TOL):
        raise OutOfHorizon(f"t={t} outside [0, {model.horizon}]")
    last = history.last_time
    if strict and t <= last and history.jumps:
        raise ValueError(f"t={t} must exceed the last jump time {last}")
    if t < last:
        raise ValueError(f"t={t} precedes the last jump time {last}")
    return last, model.regime_after(history.marks)


def hazard(model: ValidatedModel, history: History, t: float) -> float:
    """Total jump intensity at ``t`` given the history."""
    last, r = _state(model, history, t, strict=True)
    return float(model.hazard_rate(r, t - last))


def mark_kernel(model: ValidatedModel, history: History, t: float) -> np.ndarray:
    """Probability vector of the next mark over the labels."""
    _, r = _state(model, history, t, strict=True)
    return model.kernel[r].copy()


def survival(model: ValidatedModel, history: History, t: float) -> float:
    """Conditional probability that the next jump is after ``t``."""
    last, r = _state(model, history, t, strict=False)
    return float(model.survival_elapsed(r, t - last))


def support_marks(model: ValidatedModel, jump_index: int) -> frozenset:
    """Labels with positive rate at jump ``jump_index``, when history independent.

    Raises:
        StochasticSupport: the set depends on the realized history.
    """
    idx = model.support_indices(jump_index)
    return frozenset(model.mark_space.labels[i] for i in idx)
