"""Exact expectations used as ground truth for the Monte Carlo checks.

Two engines:

* **enumeration** -- sum over the number of jumps n <= n_max and over mark
  sequences, integrating the joint density of the ordered jump times with
  nested Gauss-Legendre rules on the simplex 0 < t_1 < ... < t_n.  Works for
  every model kind and every path functional; the neglected tail is bounded
  with a dominating Poisson count.
* **forward equations** -- for constant-hazard models (count, regime) is a
  finite continuous-time Markov chain once the count is lumped at a cap.  The
  law of the chain, and the first and second moments of any family of
  running separable iterated integrals jointly with the chain state, solve
  linear ODEs.  This reaches truncation levels the enumeration cannot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.stats import poisson

from .errors import SizeCap, TruncationTooLarge
from .functionals import Functional
from .martingale import Rescale, ZetaSpec
from .model import ValidatedModel
from .path import PathBatch
from .quadrature import gauss_legendre01


MAX_ENUMERATED_PATHS = 2_000_000


@dataclass(frozen=True)
class OracleConfig:
    n_max: int = 6
    quad_nodes: int = 8
    tolerance: float = 1e-8
    count_cap: int = 60
    time_nodes: int = 48
    ode_rtol: float = 1e-12
    ode_atol: float = 1e-14


# --------------------------------------------------------------------------
# tail bounds


def count_tail(model: ValidatedModel, n: int, horizon: float | None = None) -> float:
    """P(N' > n) for the dominating count N' ~ Poisson(sup hazard * horizon)."""
    H = model.horizon if horizon is None else horizon
    return float(poisson.sf(n, model.max_hazard() * H))


def functional_tail(model: ValidatedModel, functional: Functional, n: int) -> float:
    """Bound on E[|Y| ; N > n] by stochastic domination of the jump count."""
    mu = model.max_hazard() * model.horizon
    if not functional.increasing:
        return functional.envelope(n + 1) * float(poisson.sf(n, mu))
    ks = np.arange(n + 1, n + 400)
    env = np.array([functional.envelope(int(k)) for k in ks])
    return float(np.sum(env * poisson.pmf(ks, mu)))


# --------------------------------------------------------------------------
# enumeration engine


@dataclass
class Stratum:
    """All quadrature configurations with exactly n jumps in (0, t_end]."""

    times: np.ndarray  # (M, n)
    marks: np.ndarray  # (M, n)
    regimes: np.ndarray  # (M, n + 1)
    weight: np.ndarray  # (M,)

    @property
    def last(self) -> np.ndarray:
        if self.times.shape[1] == 0:
            return np.zeros(len(self.weight))
        return self.times[:, -1]


def times_decouple(model: ValidatedModel) -> bool:
    """True when every regime shares one hazard, so jump times ignore the marks."""
    return len({id(h) for h in model.hazards}) == 1 or all(
        type(h) is type(model.hazards[0]) and h.params() == model.hazards[0].params() for h in model.hazards
    )


def regime_law(model: ValidatedModel, n: int) -> np.ndarray:
    """Distribution of the regime after n jumps, when times and marks decouple."""
    R = model.n_regimes
    step = np.zeros((R, R))
    for r in range(R):
        np.add.at(step[r], model.next_regime[r], model.kernel[r])
    law = np.zeros(R)
    law[model.regime0] = 1.0
    return law @ np.linalg.matrix_power(step, n)


def enumerate_stratum(model: ValidatedModel, n: int, t_end: float, q: int, survive: bool = True,
                      lump_marks: bool = False) -> Stratum:
    """Nested GL quadrature of the joint law of the first n jumps on (0, t_end].

    With ``survive`` the weight includes the probability of no further jump
    by ``t_end``, so weights integrate {N_{t_end} = n}.  ``lump_marks`` sums
    over mark sequences (valid when :func:`times_decouple`); marks are then
    reported as 0 and the regime stays at the initial one.
    """
    nodes, weights = gauss_legendre01(q)
    times = np.zeros((1, 0))
    marks = np.zeros((1, 0), dtype=int)
    regimes = np.full((1, 1), model.regime0, dtype=int)
    w = np.ones(1)
    for _ in range(n):
        last = times[:, -1] if times.shape[1] else np.zeros(len(w))
        span = t_end - last
        new_t = last[:, None] + span[:, None] * nodes  # (M, q)
        jac = span[:, None] * weights
        r = regimes[:, -1]
        dens = np.empty_like(new_t)
        for reg in np.unique(r):
            sel = r == reg
            u = new_t[sel] - last[sel, None]
            dens[sel] = model.hazard_rate(int(reg), u) * model.survival_elapsed(int(reg), u)
        kern = np.ones((len(r), 1)) if lump_marks else model.kernel[r]  # (M, E)
        full = (w[:, None] * jac * dens)[:, :, None] * kern[:, None, :]  # (M, q, E)
        mi, qi, xi = np.nonzero(kern[:, None, :].repeat(q, axis=1) > 0.0)
        times = np.concatenate([times[mi], new_t[mi, qi][:, None]], axis=1)
        marks = np.concatenate([marks[mi], xi[:, None]], axis=1)
        nxt = r[mi] if lump_marks else model.next_regime[r[mi], xi]
        regimes = np.concatenate([regimes[mi], nxt[:, None]], axis=1)
        w = full[mi, qi, xi]
    if survive:
        last = times[:, -1] if times.shape[1] else np.zeros(len(w))
        r = regimes[:, -1]
        for reg in np.unique(r):
            sel = r == reg
            w[sel] = w[sel] * model.survival_elapsed(int(reg), t_end - last[sel])
    return Stratum(times, marks, regimes, w)


@dataclass
class WeightedPaths:
    batch: PathBatch
    weight: np.ndarray
    truncation: float  # bound on the neglected probability mass


def enumerate_paths(model: ValidatedModel, n_max: int, q: int, prefix: int | None = None) -> WeightedPaths:
    """Weighted jump configurations on [0, H] with at most n_max jumps.

    With ``prefix = k <= n_max`` the last stratum holds the first k jumps
    only (no survival factor), which is exact for functionals reading no
    further than the k-th jump.
    """
    H = model.horizon
    top = n_max if prefix is None else min(prefix, n_max)
    strata = [enumerate_stratum(model, n, H, q, survive=not (prefix is not None and n == prefix)) for n in range(top + 1)]
    width = top
    P = sum(len(s.weight) for s in strata)
    times = np.full((P, width), np.inf)
    marks = np.full((P, width), -1, dtype=int)
    regimes = np.empty((P, width + 1), dtype=int)
    counts = np.empty(P, dtype=int)
    weight = np.empty(P)
    i = 0
    for n, s in enumerate(strata):
        m = len(s.weight)
        times[i:i + m, :n] = s.times
        marks[i:i + m, :n] = s.marks
        regimes[i:i + m, :n + 1] = s.regimes
        regimes[i:i + m, n + 1:] = s.regimes[:, -1:]
        counts[i:i + m] = n
        weight[i:i + m] = s.weight
        i += m
    trunc = 0.0 if (prefix is not None and prefix <= n_max) else count_tail(model, n_max)
    return WeightedPaths(PathBatch(H, counts, times, marks, regimes), weight, trunc)


# --------------------------------------------------------------------------
# forward-equation engine


class MarkovChain:
    """(count lumped at ``count_cap``, regime) chain of a constant-hazard model."""

    def __init__(self, model: ValidatedModel, count_cap: int = 0, zeta: ZetaSpec | None = None,
                 mode: Rescale | str = Rescale.SQRT_PSI):
        if not model.is_markov:
            raise TypeError("forward equations need constant hazards")
        self.model = model
        self.zeta = zeta if zeta is not None else ZetaSpec()
        self.mode = Rescale(mode)
        R = model.n_regimes
        C = int(count_cap)
        self.R, self.C, self.Z = R, C, (C + 1) * R
        self.count = np.repeat(np.arange(C + 1), R)
        self.regime = np.tile(np.arange(R), C + 1)
        lam = model.exit_rates
        self.lam = lam[self.regime]
        z0, xs, z1, rate = [], [], [], []
        for z in range(self.Z):
            c, r = self.count[z], self.regime[z]
            for x in range(model.n_marks):
                k = model.kernel[r, x]
                if k > 0.0:
                    z0.append(z)
                    xs.append(x)
                    z1.append(min(c + 1, C) * R + int(model.next_regime[r, x]))
                    rate.append(lam[r] * k)
        self.z0 = np.array(z0, dtype=int)
        self.x = np.array(xs, dtype=int)
        self.z1 = np.array(z1, dtype=int)
        self.rate = np.array(rate)
        self.scatter = np.zeros((len(rate), self.Z))
        self.scatter[np.arange(len(rate)), self.z1] = 1.0
        G = np.zeros((self.Z, self.Z))
        np.add.at(G, (self.z0, self.z1), self.rate)
        G[np.arange(self.Z), np.arange(self.Z)] -= self.lam
        self.generator = G
        self.start = np.zeros(self.Z)
        self.start[model.regime0] = 1.0
        self.rho = self.lam[:, None] * model.kernel[self.regime]  # (Z, E)
        self.nu = self.zeta.mark_table(model, C + 1)[self.count]  # (Z, E)

    def distribution(self, t: float) -> np.ndarray:
        return self.start @ expm(self.generator * t)

    def psi(self, t: float) -> np.ndarray:
        ref = self.zeta.time_density(t) * self.nu
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.rho > 0.0, ref / np.where(self.rho > 0.0, self.rho, 1.0), 0.0)

    def local(self, t: float):
        """Rescaled continuous density R >= 0 and atom weights a, both (Z, E)."""
        p = self.psi(t)
        if self.mode is Rescale.SQRT_PSI:
            return np.sqrt(p) * self.rho, np.sqrt(p)
        if self.mode is Rescale.PSI:
            return p * self.rho, p
        return self.rho.copy(), np.where(self.rho > 0.0, 1.0, 0.0)

    def _node_factors(self, factors, trie, t):
        E = self.model.n_marks
        tt = np.full(E, float(t))
        xs = np.arange(E)
        table = np.array([f(tt, xs) for f in factors]).reshape(len(factors), E)
        Gn = np.zeros((len(trie), E))
        Gn[1:] = table[trie.first[1:]]
        R, a = self.local(t)
        beta = -Gn @ R.T  # (L, Z)
        gam = Gn[:, self.x] * a[self.z0, self.x]  # (L, T)
        return beta, gam

    def first_moments(self, factors, trie, t_end: float, rtol=1e-12, atol=1e-14) -> np.ndarray:
        """u[tau, z] = E[V_tau(t_end) ; Z_{t_end} = z] for every trie node."""
        L, Z = len(trie), self.Z
        par = trie.parent.copy()
        par[0] = 0

        def rhs(t, y):
            u = y.reshape(L, Z)
            beta, gam = self._node_factors(factors, trie, t)
            du = beta * u[par] - self.lam * u
            inflow = self.rate * (u[:, self.z0] + gam * u[par][:, self.z0])
            du += inflow @ self.scatter
            return du.ravel()

        y0 = np.zeros((L, Z))
        y0[0] = self.start
        sol = solve_ivp(rhs, (0.0, t_end), y0.ravel(), method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(sol.message)
        return sol.y[:, -1].reshape(L, Z)

    def second_moments(self, factors, trie, t_end: float, rtol=1e-12, atol=1e-14) -> np.ndarray:
        """P[s, u, z] = E[V_s V_u ; Z = z] at t_end."""
        L, Z = len(trie), self.Z
        par = trie.parent.copy()
        par[0] = 0
        z0 = self.z0

        def rhs(t, y):
            P = y.reshape(L, L, Z)
            beta, gam = self._node_factors(factors, trie, t)
            Pp = P[par]  # P[par s, u]
            Pq = P[:, par]  # P[s, par u]
            dP = beta[:, None, :] * Pp + beta[None, :, :] * Pq - self.lam * P
            gs = gam[:, None, :]
            gu = gam[None, :, :]
            inflow = self.rate * (
                P[:, :, z0] + gs * Pp[:, :, z0] + gu * Pq[:, :, z0] + gs * gu * Pp[:, par][:, :, z0]
            )
            dP += inflow @ self.scatter
            return dP.ravel()

        y0 = np.zeros((L, L, Z))
        y0[0, 0] = self.start
        sol = solve_ivp(rhs, (0.0, t_end), y0.ravel(), method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(sol.message)
        return sol.y[:, -1].reshape(L, L, Z)


def _nu_alpha_dependent(model: ValidatedModel, zeta: ZetaSpec) -> bool:
    n = len(model.distinct_jump_indices()) + 1
    table = zeta.mark_table(model, n)
    return bool(np.any(np.abs(table - table[0]) > 0.0))


def _cap_for(model: ValidatedModel, tol: float, floor: int) -> int:
    mu = model.max_hazard() * model.horizon
    c = max(floor, int(mu) + 1)
    while poisson.sf(c, mu) > tol * 1e-6 and c < 10_000:
        c += 1
    return c


# --------------------------------------------------------------------------
# public oracle operations


def oracle_expectation(model: ValidatedModel, functional: Functional, cfg: OracleConfig = OracleConfig(),
                       method: str = "auto") -> tuple[float, float]:
    """E[Y] with an error bound from truncating the number of jumps.

    Raises:
        TruncationTooLarge: the bound exceeds ``cfg.tolerance``.
    """
    use_chain = method == "markov" or (method == "auto" and model.is_markov and functional.terminal is not None)
    if use_chain:
        C = cfg.count_cap
        chain = MarkovChain(model, count_cap=C)
        dist = chain.distribution(model.horizon)
        vals = functional.terminal(chain.count, chain.regime)
        value = float(dist @ vals)
        bound = 2.0 * functional_tail(model, functional, C - 1)
    elif functional.terminal is not None and times_decouple(model):
        value = 0.0
        for n in range(cfg.n_max + 1):
            p_n = float(enumerate_stratum(model, n, model.horizon, cfg.quad_nodes, lump_marks=True).weight.sum())
            law = regime_law(model, n)
            vals = functional.terminal(np.full(model.n_regimes, n), np.arange(model.n_regimes))
            value += p_n * float(law @ vals)
        bound = functional_tail(model, functional, cfg.n_max)
    else:
        wp = enumerate_paths(model, cfg.n_max, cfg.quad_nodes, prefix=functional.prefix)
        value = float(wp.weight @ functional.batch(wp.batch))
        bound = 0.0 if wp.truncation == 0.0 else functional_tail(model, functional, cfg.n_max)
    if bound > cfg.tolerance:
        raise TruncationTooLarge(f"truncation bound {bound:.3g} exceeds tolerance {cfg.tolerance:.3g}")
    return value, bound


def occupancy_probability(model: ValidatedModel, alpha: int, t: float, cfg: OracleConfig = OracleConfig()) -> float:
    """P(t in (T_alpha, T_{alpha+1}]) = P(exactly alpha jumps in (0, t))."""
    if not 0.0 < t <= model.horizon * (1 + 1e-12):
        raise ValueError("need 0 < t <= H")
    kind = model.kind_name
    if kind == "MarkedPoisson":
        lam = model.exit_rates[0]
        return float(math.exp(-lam * t) * (lam * t) ** alpha / math.factorial(alpha))
    if model.is_markov:
        chain = MarkovChain(model, count_cap=alpha + 1)
        return float(chain.distribution(t)[chain.count == alpha].sum())
    lump = times_decouple(model)
    return float(enumerate_stratum(model, alpha, t, cfg.quad_nodes, lump_marks=lump).weight.sum())


def _occupancy_table(model: ValidatedModel, ts: np.ndarray, n_max: int, cfg: OracleConfig) -> np.ndarray:
    """occ[a, j] = P(a jumps before ts[j]) for a = 0..n_max."""
    if model.is_markov:
        chain = MarkovChain(model, count_cap=n_max + 1)
        out = np.zeros((n_max + 1, len(ts)))
        for j, t in enumerate(ts):
            d = chain.distribution(t)
            for a in range(n_max + 1):
                out[a, j] = d[chain.count == a].sum()
        return out
    return np.array([[occupancy_probability(model, a, t, cfg) for t in ts] for a in range(n_max + 1)])


def zeta_inner_product(f: Callable, g: Callable, model: ValidatedModel, zeta: ZetaSpec,
                       cfg: OracleConfig = OracleConfig()) -> float:
    """sum_alpha int E[1{t in (T_{alpha-1}, T_alpha]}] f g zeta^alpha(dt, dx) for deterministic f, g."""
    value, _ = zeta_inner_product_bound(f, g, model, zeta, cfg)
    return value


def zeta_inner_product_bound(f, g, model, zeta, cfg=OracleConfig()) -> tuple[float, float]:
    H = model.horizon
    nodes, weights = gauss_legendre01(cfg.time_nodes)
    ts = H * nodes
    n_max = _cap_for(model, cfg.tolerance, cfg.n_max) if model.is_markov else cfg.n_max
    occ = _occupancy_table(model, ts, n_max, cfg)
    E = model.n_marks
    xs = np.arange(E)
    fg = f(ts[:, None], xs[None, :]) * g(ts[:, None], xs[None, :])  # (T, E)
    w = zeta.time_density(ts)
    nu = zeta.mark_table(model, n_max + 1)  # (A, E)
    integrand = np.einsum("aj,je,ae->j", occ, fg, nu) * w
    value = float(H * weights @ integrand)
    sup = float(np.max(np.abs(fg)) * np.max(w) * np.max(nu.sum(axis=1))) * H
    return value, sup * count_tail(model, n_max)


def stray_psi_inner_product(f: Callable, g: Callable, model: ValidatedModel, zeta: ZetaSpec,
                            cfg: OracleConfig = OracleConfig()) -> float:
    """sum_alpha int E[1{...} f g psi] zeta^alpha(dt, dx): second moment of int f dq_psi."""
    H = model.horizon
    nodes, weights = gauss_legendre01(cfg.time_nodes)
    ts = H * nodes
    E = model.n_marks
    xs = np.arange(E)
    total = np.zeros(len(ts))
    if model.is_markov:
        C = _cap_for(model, cfg.tolerance, cfg.n_max)
        chain = MarkovChain(model, count_cap=C, zeta=zeta)
        for j, t in enumerate(ts):
            d = chain.distribution(t)
            fg = f(np.full(E, t), xs) * g(np.full(E, t), xs)
            ref = zeta.time_density(t) * chain.nu  # (Z, E)
            total[j] = float(d @ (chain.psi(t) * ref * fg).sum(axis=1))
    else:
        lump = times_decouple(model)
        for j, t in enumerate(ts):
            fg = f(np.full(E, t), xs) * g(np.full(E, t), xs)
            for n in range(cfg.n_max + 1):
                st = enumerate_stratum(model, n, t, cfg.quad_nodes, lump_marks=lump)
                el = t - st.last
                ref = zeta.time_density(t) * zeta.mark_weights(model, n + 1)
                if lump:
                    law = regime_law(model, n)
                    regs = [(reg, st.weight * law[reg]) for reg in np.flatnonzero(law > 0.0)]
                    els = [el] * len(regs)
                else:
                    r = st.regimes[:, -1]
                    regs = [(reg, st.weight[r == reg]) for reg in np.unique(r)]
                    els = [el[r == reg] for reg in np.unique(r)]
                for (reg, wts), e in zip(regs, els):
                    rho = model.hazard_rate(int(reg), e)[:, None] * model.kernel[reg]
                    with np.errstate(divide="ignore", invalid="ignore"):
                        ps = np.where(rho > 0.0, ref / np.where(rho > 0.0, rho, 1.0), 0.0)
                    total[j] += float(wts @ (ps * ref * fg).sum(axis=1))
    return float(H * weights @ total)


# --------------------------------------------------------------------------
# exact chaos tails


@dataclass
class ChaosTail:
    residuals: np.ndarray  # r_0..r_K
    gram: np.ndarray
    cross: np.ndarray  # E[Y V]
    mean: float
    second_moment: float
    truncation: float
    method: str

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2


def _residuals(gram, cross, ey2, var, depth, K, rcond=1e-13):
    out = []
    for m in range(K + 1):
        cols = np.flatnonzero(depth <= m)
        G = gram[np.ix_(cols, cols)]
        b = cross[cols]
        coef = np.linalg.pinv(G, rcond=rcond, hermitian=True) @ b
        out.append(max((ey2 - b @ coef) / var, 0.0) if var > 0 else 0.0)
    return np.array(out)


def chaos_tail(model: ValidatedModel, functional: Functional, K: int, cfg: OracleConfig = OracleConfig(),
               zeta: ZetaSpec | None = None, time_degree: int = 0, mode: Rescale | str = Rescale.SQRT_PSI,
               q: int = 16) -> ChaosTail:
    """Exact residual fractions r_0..r_K of the projection on the chaos basis.

    Raises:
        TruncationTooLarge
    """
    from .chaos import build_basis, evaluate_features

    if K > 3:
        raise ValueError("exact chaos tails are limited to K <= 3")
    zeta = zeta if zeta is not None else ZetaSpec()
    basis = build_basis(K, time_degree, model.mark_space, model.horizon)
    trie = basis.trie
    if model.is_markov and functional.terminal is not None:
        cap_y = _cap_for(model, cfg.tolerance, cfg.n_max)
        count_dep = _nu_alpha_dependent(model, zeta)
        chain_g = MarkovChain(model, count_cap=cap_y if count_dep else 0, zeta=zeta, mode=mode)
        P = chain_g.second_moments(basis.factors, trie, model.horizon, cfg.ode_rtol, cfg.ode_atol)
        gram = P.sum(axis=2)
        chain_y = MarkovChain(model, count_cap=cap_y, zeta=zeta, mode=mode)
        u = chain_y.first_moments(basis.factors, trie, model.horizon, cfg.ode_rtol, cfg.ode_atol)
        phi = functional.terminal(chain_y.count, chain_y.regime)
        cross = u @ phi
        dist = u[0]
        mean = float(dist @ phi)
        ey2 = float(dist @ phi ** 2)
        trunc = count_tail(model, cap_y)
        method = "forward-equations"
    else:
        trunc = count_tail(model, cfg.n_max)
        if trunc > cfg.tolerance:
            raise TruncationTooLarge(f"P(N > {cfg.n_max}) <= {trunc:.3g} exceeds tolerance {cfg.tolerance:.3g}")
        size = sum((cfg.quad_nodes * model.n_marks) ** n for n in range(cfg.n_max + 1))
        if size > MAX_ENUMERATED_PATHS:
            raise SizeCap(f"enumeration would hold {size} configurations (cap {MAX_ENUMERATED_PATHS})")
        wp = enumerate_paths(model, cfg.n_max, cfg.quad_nodes)
        F = evaluate_features(wp.batch, basis, model, zeta, q=q, mode=mode)
        y = functional.batch(wp.batch)
        # condition on N <= n_max so the order-0 tail is exactly 1
        w = wp.weight / wp.weight.sum()
        gram = (F * w[:, None]).T @ F
        cross = F.T @ (w * y)
        mean = float(w @ y)
        ey2 = float(w @ y ** 2)
        method = "enumeration"
    var = ey2 - mean ** 2
    res = _residuals(gram, cross, ey2, var, trie.depth, K)
    return ChaosTail(res, gram, cross, mean, ey2, trunc, method)
