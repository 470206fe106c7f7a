"""Paths of a marked point process and their exact sequential simulation."""

from __future__ import annotations

import bisect
import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import JumpCapExceeded
from .model import ValidatedModel

DEFAULT_JUMP_CAP = 10_000


@dataclass(frozen=True)
class Path:
    """Jump times 0 < T_1 < ... < T_N <= horizon with mark indices."""

    horizon: float
    times: tuple = ()
    marks: tuple = ()

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        marks = tuple(int(x) for x in self.marks)
        if len(times) != len(marks):
            raise ValueError("times and marks differ in length")
        if times and (times[0] <= 0.0 or times[-1] > self.horizon):
            raise ValueError(f"jump times must lie in (0, {self.horizon}]")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("jump times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    def events(self):
        return list(zip(self.times, self.marks))

    def with_jump(self, t: float, mark: int) -> "Path":
        pairs = sorted(self.events() + [(float(t), int(mark))])
        return Path(self.horizon, [p[0] for p in pairs], [p[1] for p in pairs])


@dataclass(frozen=True)
class SeedSpec:
    master: int
    index: int = 0


def path_generator(seed: SeedSpec) -> np.random.Generator:
    """Counter-based stream for one path: Philox keyed by the master seed,
    with the path index in the top counter word."""
    key = int(seed.master) % (1 << 64)
    bitgen = np.random.Philox(key=key, counter=[0, 0, 0, int(seed.index) % (1 << 64)])
    return np.random.Generator(bitgen)


def sample_path(model: ValidatedModel, seed: SeedSpec, cap: int = DEFAULT_JUMP_CAP) -> Path:
    """Simulate one path by inverse-survival sampling of each inter-jump time.

    Raises:
        JumpCapExceeded: more than ``cap`` jumps before the horizon.
    """
    rng = path_generator(seed)
    horizon = model.horizon
    cum = np.cumsum(model.kernel, axis=1)
    t = 0.0
    r = model.regime0
    times: list[float] = []
    marks: list[int] = []
    while True:
        e = rng.standard_exponential()
        gap = model.hazards[r].inverse_cumulative(e)
        t_new = t + gap
        if t_new > horizon or math.isinf(t_new):
            break
        if t_new <= t:
            # floating-point tie with the previous jump; redraw
            continue
        u = rng.random() * cum[r, -1]
        x = min(int(np.searchsorted(cum[r], u, side="right")), model.n_marks - 1)
        times.append(t_new)
        marks.append(x)
        if len(times) >= cap:
            raise JumpCapExceeded(f"path {seed.index} reached the jump cap {cap}")
        t = t_new
        r = int(model.next_regime[r, x])
    return Path(horizon, times, marks)


def interval_index(path: Path, t: float) -> int:
    """Index alpha with t in (T_alpha, T_{alpha+1}], i.e. the number of jumps before t."""
    return bisect.bisect_left(path.times, t)


def _sample_chunk(args):
    model, master, start, stop, cap = args
    return [sample_path(model, SeedSpec(master, i), cap) for i in range(start, stop)]


def sample_paths(
    model: ValidatedModel,
    master_seed: int,
    n_paths: int,
    *,
    start: int = 0,
    workers: int = 1,
    chunk: int = 4096,
    cap: int = DEFAULT_JUMP_CAP,
) -> list[Path]:
    """Paths ``start .. start + n_paths - 1``; identical for any worker count."""
    bounds = [(a, min(a + chunk, start + n_paths)) for a in range(start, start + n_paths, chunk)]
    jobs = [(model, master_seed, a, b, cap) for a, b in bounds]
    if workers <= 1 or len(jobs) <= 1:
        parts = [_sample_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_sample_chunk, jobs))
    return [p for part in parts for p in part]


# --------------------------------------------------------------------------
# padded batch view used by the vectorized integrators


@dataclass
class PathBatch:
    """Padded arrays for a list of paths on a common horizon.

    times:   (P, Nmax) jump times, +inf past each path's end
    marks:   (P, Nmax) mark indices, -1 past the end
    regimes: (P, Nmax + 1) regime after k jumps (k = 0..Nmax), frozen past the end
    """

    horizon: float
    counts: np.ndarray
    times: np.ndarray
    marks: np.ndarray
    regimes: np.ndarray

    @classmethod
    def from_paths(cls, model: ValidatedModel, paths: Sequence[Path]) -> "PathBatch":
        n = len(paths)
        counts = np.array([p.n_jumps for p in paths], dtype=int)
        width = int(counts.max()) if n else 0
        times = np.full((n, width), np.inf)
        marks = np.full((n, width), -1, dtype=int)
        regimes = np.full((n, width + 1), model.regime0, dtype=int)
        for i, p in enumerate(paths):
            k = p.n_jumps
            if k:
                times[i, :k] = p.times
                marks[i, :k] = p.marks
                r = model.regime0
                for j, x in enumerate(p.marks):
                    r = int(model.next_regime[r, x])
                    regimes[i, j + 1] = r
                regimes[i, k + 1:] = r
        return cls(float(model.horizon), counts, times, marks, regimes)

    def __len__(self):
        return len(self.counts)

    @property
    def terminal_regime(self) -> np.ndarray:
        return self.regimes[np.arange(len(self.counts)), self.counts]

    @property
    def first_jump(self) -> np.ndarray:
        if self.times.shape[1] == 0:
            return np.full(len(self.counts), np.inf)
        return self.times[:, 0]


# --------------------------------------------------------------------------
# CSV interchange: path_id, alpha, time, mark


def write_paths_csv(fh, model: ValidatedModel, paths: Iterable[Path], start: int = 0) -> None:
    labels = model.mark_space.labels
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_id", "alpha", "time", "mark"])
    for pid, p in enumerate(paths, start=start):
        for alpha, (t, x) in enumerate(p.events(), start=1):
            w.writerow([pid, alpha, repr(t), labels[x]])


def read_paths_csv(fh, model: ValidatedModel, n_paths: int | None = None) -> list[Path]:
    """Inverse of :func:`write_paths_csv`; paths without rows are empty."""
    ms = model.mark_space
    by_label = {str(lab): i for i, lab in enumerate(ms.labels)}
    events: dict[int, list] = {}
    for row in csv.DictReader(fh):
        pid = int(row["path_id"])
        events.setdefault(pid, []).append((int(row["alpha"]), float(row["time"]), by_label[row["mark"]]))
    n = n_paths if n_paths is not None else (max(events) + 1 if events else 0)
    out = []
    for pid in range(n):
        ev = sorted(events.get(pid, []))
        out.append(Path(model.horizon, [e[1] for e in ev], [e[2] for e in ev]))
    return out
