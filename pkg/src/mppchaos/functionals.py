"""Path functionals used as projection targets and oracle inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ValidatedModel
from .path import Path, PathBatch


@dataclass(frozen=True)
class Functional:
    """Square-integrable map of a path.

    ``terminal(count, regime)`` is set when the value depends only on the
    number of jumps by the horizon and the final regime (vectorized).
    ``envelope(k)`` bounds |Y| over paths with k jumps; ``increasing`` says
    whether that bound is nondecreasing in k (otherwise it is a constant bound).
    ``prefix`` is the number of leading jumps the value reads, when finite.
    """

    name: str
    terminal: Callable | None = None
    on_path: Callable | None = None
    on_batch: Callable | None = None
    envelope: Callable = lambda k: 1.0
    increasing: bool = False
    prefix: int | None = None

    def __call__(self, path: Path, model: ValidatedModel) -> float:
        if self.on_path is not None:
            return float(self.on_path(path, model))
        r = model.regime_after(path.marks)
        return float(self.terminal(np.array([path.n_jumps]), np.array([r]))[0])

    def batch(self, batch: PathBatch) -> np.ndarray:
        if self.on_batch is not None:
            return np.asarray(self.on_batch(batch), dtype=float)
        return np.asarray(self.terminal(batch.counts, batch.terminal_regime), dtype=float)


def count() -> Functional:
    return Functional("N", terminal=lambda n, r: n.astype(float), envelope=float, increasing=True)


def count_squared() -> Functional:
    return Functional("N2", terminal=lambda n, r: n.astype(float) ** 2, envelope=lambda k: float(k * k), increasing=True)


def exp_neg_count() -> Functional:
    return Functional("exp_neg_N", terminal=lambda n, r: np.exp(-n.astype(float)), envelope=lambda k: math.exp(-k))


def terminal_state(regime: int, label=None) -> Functional:
    name = f"terminal_state={label if label is not None else regime}"
    return Functional(name, terminal=lambda n, r: (r == regime).astype(float))


def constant(c: float) -> Functional:
    return Functional(f"const={c:g}", terminal=lambda n, r: np.full(np.shape(n), float(c)), envelope=lambda k: abs(c))


def first_jump_capped(horizon: float) -> Functional:
    def on_path(path, model):
        return path.times[0] if path.times else horizon

    def on_batch(b):
        return np.minimum(b.first_jump, horizon)

    return Functional("first_jump", on_path=on_path, on_batch=on_batch, envelope=lambda k: horizon, prefix=1)


def by_name(name: str, model: ValidatedModel) -> Functional:
    """Resolve a config name: N, N2, exp_neg_N, first_jump, const=<c>, terminal_state=<label>."""
    if name == "N":
        return count()
    if name == "N2":
        return count_squared()
    if name == "exp_neg_N":
        return exp_neg_count()
    if name == "first_jump":
        return first_jump_capped(model.horizon)
    if name.startswith("const="):
        return constant(float(name.split("=", 1)[1]))
    if name.startswith("terminal_state="):
        raw = name.split("=", 1)[1]
        labels = [str(lab) for lab in model.regime_labels]
        if raw not in labels:
            raise KeyError(f"unknown state {raw!r}; regimes are {labels}")
        return terminal_state(labels.index(raw), raw)
    raise KeyError(f"unknown functional {name!r}")
