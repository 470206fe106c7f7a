"""Compensator, reference measure, rescaling and the per-path discretized martingale measure.

The martingale measure is m = (rescale) * (p - p~): point masses at the jumps
and a signed absolutely continuous part on each inter-jump interval.  The
continuous part is stored at Gauss-Legendre nodes of every interval so that
single integrals are quadratures and nested integrals can use the matching
collocation integration matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import GridTooCoarse, PsiCodomainWarning, SupportMismatch, ZeroCompensator
from .model import History, ValidatedModel
from .path import Path, PathBatch
from .quadrature import gauss_legendre01, integration_matrix01

DEFAULT_QUAD_NODES = 16


class Rescale(str, Enum):
    SQRT_PSI = "sqrt_psi"
    PSI = "psi"
    NONE = "none"


# --------------------------------------------------------------------------
# reference measure zeta = w(t) dt (x) nu_ref^alpha


_TIME_FAMILIES = ("constant", "linear", "exponential")


@dataclass(frozen=True)
class ZetaSpec:
    """Deterministic reference measure, one mark measure per jump index.

    ``mark_weights`` (over labels) applies to every jump index unless
    ``overrides`` maps that index to its own weights.  Without either, the mark
    measure is uniform (mass 1) on the support of the jump.
    """

    time_family: str = "constant"
    time_params: tuple = ()
    scale: float = 1.0
    mark_weights_all: tuple | None = None
    overrides: tuple = ()

    def __post_init__(self):
        if self.time_family not in _TIME_FAMILIES:
            raise ValueError(f"unknown time density family {self.time_family!r}")
        if isinstance(self.time_params, dict):
            object.__setattr__(self, "time_params", tuple(sorted(self.time_params.items())))
        if isinstance(self.overrides, dict):
            object.__setattr__(
                self, "overrides", tuple(sorted((int(k), tuple(v)) for k, v in self.overrides.items()))
            )
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise ValueError("zeta scale must be finite and > 0")

    def time_density(self, t):
        t = np.asarray(t, dtype=float)
        p = dict(self.time_params)
        if self.time_family == "constant":
            w = np.full_like(t, p.get("value", 1.0))
        elif self.time_family == "linear":
            w = p.get("a", 1.0) + p.get("b", 0.0) * t
        else:
            w = p.get("a", 1.0) * np.exp(p.get("b", 0.0) * t)
        return self.scale * w

    def check_time_density(self, horizon: float) -> None:
        w = self.time_density(np.linspace(0.0, horizon, 1025))
        if np.any(~np.isfinite(w)) or np.any(w < 0.0):
            raise ValueError("zeta time density must be finite and >= 0 on [0, H]")

    def mark_weights(self, model: ValidatedModel, alpha: int) -> np.ndarray:
        for a, weights in self.overrides:
            if a == alpha:
                return np.asarray(weights, dtype=float)
        if self.mark_weights_all is not None:
            return np.asarray(self.mark_weights_all, dtype=float)
        out = np.zeros(model.n_marks)
        idx = list(model.support_indices(alpha))
        out[idx] = 1.0 / len(idx)
        return out

    def mark_table(self, model: ValidatedModel, n_alpha: int) -> np.ndarray:
        """(n_alpha, E) array; row a holds the weights of jump index a + 1."""
        return np.array([self.mark_weights(model, a) for a in range(1, n_alpha + 1)]).reshape(
            n_alpha, model.n_marks
        )

    @property
    def alpha_dependent(self) -> bool:
        return bool(self.overrides) or self.mark_weights_all is None


def check_zeta(model: ValidatedModel, zeta: ZetaSpec) -> None:
    """Reference marks must be positive exactly on the support of each jump."""
    zeta.check_time_density(model.horizon)
    labels = model.mark_space.labels
    for alpha in model.distinct_jump_indices():
        ref = zeta.mark_weights(model, alpha)
        if ref.shape != (model.n_marks,) or np.any(ref < 0.0) or not np.all(np.isfinite(ref)):
            raise ValueError(f"bad reference mark weights at jump {alpha}: {ref!r}")
        for r in sorted(model.reachable(alpha)):
            pos = model.kernel[r] > 0.0
            bad = np.flatnonzero(pos != (ref > 0.0))
            if bad.size:
                raise SupportMismatch(model.regime_labels[r], labels[int(bad[0])])


# --------------------------------------------------------------------------
# pointwise quantities


def compensator_density(model: ValidatedModel, path: Path, t: float, x: int) -> float:
    """Density of p~ at (t, x), predictable: the jump at ``t`` itself is not used."""
    hist = History.before(path, t)
    r = model.regime_after(hist.marks)
    return float(model.hazard_rate(r, t - hist.last_time) * model.kernel[r, x])


def psi(model: ValidatedModel, zeta: ZetaSpec, path: Path, t: float, x: int) -> float:
    """d zeta / d p~ at (t, x) on the interval containing t.

    Raises:
        ZeroCompensator: the compensator density vanishes at (t, x).
    """
    rho = compensator_density(model, path, t, x)
    if rho <= 0.0:
        raise ZeroCompensator(f"compensator density is zero at t={t}, mark={x}")
    alpha = len(History.before(path, t).jumps) + 1
    value = float(zeta.time_density(t) * zeta.mark_weights(model, alpha)[x] / rho)
    if value > 1.0 + 1e-12:
        warnings.warn(f"psi={value:.6g} > 1 at t={t}, mark={x}", PsiCodomainWarning, stacklevel=2)
    return value


# --------------------------------------------------------------------------
# discretized measure


@dataclass
class MeasureNodes:
    """Discretized m for a batch of B paths, K intervals each, q nodes per interval.

    Interval k of path b is (lo[b, k], hi[b, k]] and may be followed by an atom
    at hi[b, k] (atom_mark >= 0).  Padding intervals have zero length and no
    atom.  ``density[b, k, j, x]`` is the signed density (<= 0) of the
    continuous part at node j; cell weights are length * gl_weight * density.
    """

    mode: Rescale
    q: int
    horizon: float
    lo: np.ndarray  # (B, K)
    hi: np.ndarray  # (B, K)
    t: np.ndarray  # (B, K, q)
    density: np.ndarray  # (B, K, q, E)
    atom_time: np.ndarray  # (B, K)
    atom_mark: np.ndarray  # (B, K) int, -1 when no atom
    atom_weight: np.ndarray  # (B, K)
    regime: np.ndarray  # (B, K) regime during the interval
    alpha: np.ndarray  # (B, K) index of the next jump
    psi_cells: np.ndarray = field(repr=False, default=None)  # (B, K, q, E)
    psi_atoms: np.ndarray = field(repr=False, default=None)  # (B, K)
    paths: list | None = field(repr=False, default=None)
    model: ValidatedModel | None = field(repr=False, default=None)
    zeta: ZetaSpec | None = field(repr=False, default=None)
    breakpoints: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.lo.shape[0]

    @property
    def n_marks(self) -> int:
        return self.density.shape[-1]

    @property
    def length(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def cell_weight(self) -> np.ndarray:
        _, gw = gauss_legendre01(self.q)
        return self.length[..., None, None] * gw[None, None, :, None] * self.density

    def node_count(self) -> int:
        return int(np.count_nonzero(self.density)) + int(np.count_nonzero(self.atom_mark >= 0))

    # single-path views ------------------------------------------------------

    def _one(self):
        if self.n_paths != 1:
            raise ValueError("this view needs a single-path MeasureNodes")

    @property
    def atoms(self) -> list[tuple[float, int, float]]:
        """(time, mark, weight) of every jump of the (single) path."""
        self._one()
        keep = self.atom_mark[0] >= 0
        return list(
            zip(self.atom_time[0][keep].tolist(), self.atom_mark[0][keep].tolist(), self.atom_weight[0][keep].tolist())
        )

    @property
    def cells(self) -> list[tuple[float, int, float]]:
        """(time, mark, signed weight) of every nonzero quadrature cell."""
        self._one()
        c = self.cell_weight[0]
        k, j, x = np.nonzero(c)
        return list(zip(self.t[0][k, j].tolist(), x.tolist(), c[k, j, x].tolist()))

    def total_atom_mass(self) -> np.ndarray:
        return np.where(self.atom_mark >= 0, self.atom_weight, 0.0).sum(axis=1)

    def total_cell_mass(self) -> np.ndarray:
        return self.cell_weight.sum(axis=(1, 2, 3))

    def refined(self, breakpoints: Sequence[float]) -> "MeasureNodes":
        """Rebuild a single-path discretization with extra interval breakpoints."""
        self._one()
        if self.model is None or self.paths is None:
            raise ValueError("nodes were built without their model; cannot refine")
        pts = tuple(sorted(set(self.breakpoints) | {float(b) for b in breakpoints}))
        return measure_nodes(self.model, self.zeta, self.paths[0], q=self.q, mode=self.mode, breakpoints=pts)


def _rescaled(model, zeta, mode, regime, alpha, t, elapsed, nu_table):
    """rho, psi and the rescaled density R >= 0 at arrays of nodes.

    regime, alpha: int arrays broadcastable to t; returns arrays with a trailing mark axis.
    """
    haz = np.zeros(t.shape)
    for r in np.unique(regime):
        sel = regime == r
        haz[sel] = model.hazard_rate(int(r), elapsed[sel])
    rho = haz[..., None] * model.kernel[regime]  # (..., E)
    nu = nu_table[alpha - 1]  # (..., E)
    ref = zeta.time_density(t)[..., None] * nu
    with np.errstate(divide="ignore", invalid="ignore"):
        psi_v = np.where(rho > 0.0, ref / np.where(rho > 0.0, rho, 1.0), 0.0)
    bad = (rho <= 0.0) & (ref > 0.0)
    if np.any(bad):
        pos = np.argwhere(bad)[0]
        r = int(np.broadcast_to(regime, t.shape)[tuple(pos[:-1])])
        raise SupportMismatch(
            model.regime_labels[r],
            model.mark_space.labels[int(pos[-1])],
            "reference measure is positive where the compensator vanishes",
        )
    if mode is Rescale.SQRT_PSI:
        R = np.sqrt(psi_v) * rho
    elif mode is Rescale.PSI:
        R = psi_v * rho
    else:
        R = rho
    return rho, psi_v, R


def _atom_weight(mode, psi_value):
    if mode is Rescale.SQRT_PSI:
        return np.sqrt(psi_value)
    if mode is Rescale.PSI:
        return psi_value
    return np.ones_like(psi_value)


def _assemble(model, zeta, mode, q, lo, hi, last, regime, alpha, atom_time, atom_mark, paths, breakpoints=()):
    if q < 2:
        raise GridTooCoarse(f"every interval needs at least 2 quadrature nodes, got {q}")
    mode = Rescale(mode)
    nodes01, _ = gauss_legendre01(q)
    length = hi - lo
    t = lo[..., None] + length[..., None] * nodes01
    elapsed = t - last[..., None]
    n_alpha = int(alpha.max()) if alpha.size else 1
    nu_table = zeta.mark_table(model, max(n_alpha, 1))
    reg_n = np.broadcast_to(regime[..., None], t.shape)
    alp_n = np.broadcast_to(alpha[..., None], t.shape)
    _, psi_c, R = _rescaled(model, zeta, mode, reg_n, alp_n, t, elapsed, nu_table)
    density = -R

    has_atom = atom_mark >= 0
    at = np.where(has_atom, atom_time, lo)
    ax = np.where(has_atom, atom_mark, 0)
    _, psi_a_all, _ = _rescaled(model, zeta, mode, regime, alpha, at, at - last, nu_table)
    psi_a = np.take_along_axis(psi_a_all, ax[..., None], axis=-1)[..., 0]
    psi_a = np.where(has_atom, psi_a, 0.0)
    if has_atom.any() and np.any(psi_a[has_atom] <= 0.0):
        raise ZeroCompensator("a jump occurred where the compensator density is zero")
    weight = np.where(has_atom, _atom_weight(mode, psi_a), 0.0)
    big = np.concatenate([psi_c[psi_c > 0.0].ravel(), psi_a[has_atom].ravel()])
    if big.size and big.max() > 1.0 + 1e-12:
        warnings.warn(f"psi reaches {big.max():.6g} > 1", PsiCodomainWarning, stacklevel=3)
    return MeasureNodes(
        mode=mode,
        q=q,
        horizon=model.horizon,
        lo=lo,
        hi=hi,
        t=t,
        density=density,
        atom_time=np.where(has_atom, atom_time, hi),
        atom_mark=np.where(has_atom, atom_mark, -1),
        atom_weight=weight,
        regime=regime,
        alpha=alpha,
        psi_cells=psi_c,
        psi_atoms=psi_a,
        paths=paths,
        model=model,
        zeta=zeta,
        breakpoints=tuple(breakpoints),
    )


def measure_nodes(
    model: ValidatedModel,
    zeta: ZetaSpec,
    path: Path,
    q: int = DEFAULT_QUAD_NODES,
    mode: Rescale | str = Rescale.SQRT_PSI,
    breakpoints: Sequence[float] = (),
) -> MeasureNodes:
    """Discretize m along one path.

    Intervals are the inter-jump intervals, further split at ``breakpoints``
    (no atom at a pure breakpoint), so the grid is subordinate to the jumps.

    Raises:
        GridTooCoarse: fewer than 2 nodes per interval.
    """
    H = model.horizon
    cuts = sorted({0.0, H, *path.times, *(float(b) for b in breakpoints if 0.0 < b < H)})
    jump_at = dict(zip(path.times, path.marks))
    lo, hi, last, regime, alpha, atom_t, atom_x = [], [], [], [], [], [], []
    n_before = 0
    r = model.regime0
    last_jump = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        lo.append(a)
        hi.append(b)
        last.append(last_jump)
        regime.append(r)
        alpha.append(n_before + 1)
        if b in jump_at:
            atom_t.append(b)
            atom_x.append(jump_at[b])
            n_before += 1
            r = int(model.next_regime[r, jump_at[b]])
            last_jump = b
        else:
            atom_t.append(b)
            atom_x.append(-1)
    arr = lambda v, dt=float: np.asarray(v, dtype=dt)[None, :]  # noqa: E731
    return _assemble(
        model, zeta, mode, q,
        arr(lo), arr(hi), arr(last), arr(regime, int), arr(alpha, int), arr(atom_t), arr(atom_x, int),
        [path], breakpoints,
    )


def measure_nodes_batch(
    model: ValidatedModel,
    zeta: ZetaSpec,
    batch: PathBatch,
    q: int = DEFAULT_QUAD_NODES,
    mode: Rescale | str = Rescale.SQRT_PSI,
) -> MeasureNodes:
    """Discretize m for a padded batch of paths (no extra breakpoints)."""
    H = batch.horizon
    P, W = batch.times.shape
    jt = np.minimum(batch.times, H)
    lo = np.concatenate([np.zeros((P, 1)), jt], axis=1)
    hi = np.concatenate([jt, np.full((P, 1), H)], axis=1)
    atom_t = hi.copy()
    atom_x = np.concatenate([batch.marks, np.full((P, 1), -1, dtype=int)], axis=1)
    regime = batch.regimes
    alpha = np.broadcast_to(np.arange(1, W + 2), (P, W + 1)).copy()
    # freeze padded intervals at the last real jump index
    alpha = np.minimum(alpha, batch.counts[:, None] + 1)
    return _assemble(model, zeta, mode, q, lo, hi, lo.copy(), regime, alpha, atom_t, atom_x, None)
