"""Quadrature rules on the reference triangle and the unit interval."""
from functools import lru_cache

import numpy as np

# Dunavant degree-5 rule, barycentric coordinates and weights summing to 1.
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_W0, _W1, _W2 = 0.225, 0.132394152788506, 0.125939180544827

DUNAVANT7 = (
    np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
        [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
    ]),
    np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2]),
)

# Edge midpoints: exact for quadratics.
MIDPOINT3 = (
    np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    np.full(3, 1 / 3),
)


@lru_cache(maxsize=None)
def gauss_legendre01(n):
    """n-point Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def subdivided_rule(level, base="dunavant7"):
    """Base rule replicated on the 4**level congruent sub-triangles of the reference triangle.

    Returns barycentric points (m, 3) and weights (m,) summing to 1.
    """
    bary, w = DUNAVANT7 if base == "dunavant7" else MIDPOINT3
    tris = [np.eye(3)]
    for _ in range(level):
        nxt = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array([a, ab, ca]), np.array([ab, b, bc]),
                    np.array([ca, bc, c]), np.array([ab, bc, ca])]
        tris = nxt
    pts = np.concatenate([bary @ t for t in tris])
    wts = np.concatenate([w / len(tris)] * len(tris))
    return pts, wts


def map_points(corners, bary):
    """Physical points for barycentric coordinates. corners (..., 3, 3) -> (..., m, 3)."""
    return np.einsum("mk,...kd->...md", bary, corners)
