"""Gauss-Legendre rules on [0, 1] and the matching collocation integration matrix."""

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L


@lru_cache(maxsize=None)
def gauss_legendre01(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the q-point Gauss-Legendre rule on [0, 1]."""
    x, w = L.leggauss(q)
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@lru_cache(maxsize=None)
def integration_matrix01(q: int) -> np.ndarray:
    """Matrix S with (S @ v)[i] ~ int_0^{s_i} v(s) ds for v sampled at the GL nodes s_j.

    Exact when v is a polynomial of degree < q.
    """
    x, _ = L.leggauss(q)
    vander = L.legvander(x, q - 1)  # vander[j, k] = P_k(x_j)
    # antiderivative of each P_k from -1, evaluated at the nodes
    prim = np.empty((q, q))
    for k in range(q):
        c = np.zeros(q)
        c[k] = 1.0
        prim[:, k] = L.legval(x, L.legint(c, lbnd=-1.0))
    # ds = dx / 2
    S = 0.5 * prim @ np.linalg.inv(vander)
    S.setflags(write=False)
    return S


def shifted_legendre(degree: int, t, horizon: float):
    """P_degree(2 t / horizon - 1)."""
    c = np.zeros(degree + 1)
    c[degree] = 1.0
    return L.legval(2.0 * np.asarray(t, dtype=float) / horizon - 1.0, c)


def integration_row01(q: int, s: float) -> np.ndarray:
    """Row r with r @ v ~ int_0^s v for v sampled at the q GL nodes of [0, 1]."""
    x, _ = L.leggauss(q)
    vander = L.legvander(x, q - 1)
    prim = np.empty(q)
    for k in range(q):
        c = np.zeros(q)
        c[k] = 1.0
        prim[k] = L.legval(2.0 * s - 1.0, L.legint(c, lbnd=-1.0))
    return 0.5 * prim @ np.linalg.inv(vander)
