"""Triangle quadrature rules and closed-form static kernel integrals."""

from __future__ import annotations

import numpy as np

# Degree-2 rule, interior points.
RULE3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
RULE3_WEIGHTS = np.full(3, 1 / 3)

# Degree-5 seven-point rule (Strang & Fix / Dunavant).
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
RULE7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
        [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
    ]
)
RULE7_WEIGHTS = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def quadrature_points(triangles: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """(n_tri, n_q, 3) physical points for barycentric rule ``bary``."""
    return np.einsum("qk,nkj->nqj", bary, triangles)


def static_potential(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Exact integral of 1/|x - y| over flat triangles, pairwise.

    ``points`` and ``triangles`` have matching leading dimension (m, 3) and
    (m, 3, 3). Uses the edge-decomposition formula of Wilton et al.
    """
    x = np.asarray(points, dtype=float)
    t = np.asarray(triangles, dtype=float)
    n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d = np.einsum("ij,ij->i", x - t[:, 0], n)
    rho = x - d[:, None] * n
    abs_d = np.abs(d)
    total = np.zeros(len(x))
    for k in range(3):
        a = t[:, k]
        b = t[:, (k + 1) % 3]
        edge = b - a
        length = np.linalg.norm(edge, axis=1)
        lhat = edge / length[:, None]
        uhat = np.cross(lhat, n)
        l_plus = np.einsum("ij,ij->i", b - rho, lhat)
        l_minus = np.einsum("ij,ij->i", a - rho, lhat)
        p0 = np.einsum("ij,ij->i", a - rho, uhat)
        r0_sq = p0 * p0 + d * d
        r_plus = np.sqrt(r0_sq + l_plus * l_plus)
        r_minus = np.sqrt(r0_sq + l_minus * l_minus)
        on_line = np.abs(p0) <= 1e-14 * length
        with np.errstate(divide="ignore", invalid="ignore"):
            log_term = np.where(on_line, 0.0, p0 * np.log((r_plus + l_plus) / (r_minus + l_minus)))
            atan_term = np.arctan2(p0 * l_plus, r0_sq + abs_d * r_plus) - np.arctan2(p0 * l_minus, r0_sq + abs_d * r_minus)
        total += log_term - abs_d * np.where(on_line, 0.0, atan_term)
    return total


def solid_angle(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Integral of n_y . (x - y) / |x - y|^3 over flat triangles, pairwise.

    Equals the signed solid angle the triangle subtends at x: positive when x
    lies on the side its normal (right-hand winding) points to.
    """
    r1 = triangles[:, 0] - points
    r2 = triangles[:, 1] - points
    r3 = triangles[:, 2] - points
    l1 = np.linalg.norm(r1, axis=1)
    l2 = np.linalg.norm(r2, axis=1)
    l3 = np.linalg.norm(r3, axis=1)
    num = np.einsum("ij,ij->i", r1, np.cross(r2, r3))
    den = (
        l1 * l2 * l3
        + np.einsum("ij,ij->i", r1, r2) * l3
        + np.einsum("ij,ij->i", r1, r3) * l2
        + np.einsum("ij,ij->i", r2, r3) * l1
    )
    return -2.0 * np.arctan2(num, den)
