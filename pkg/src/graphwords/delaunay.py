"""Delaunay edges for the small point sets that make up one graph feature.

Every triple of points is tested against every other point with the
incircle predicate. Exact cocircularity is resolved by symbolically raising
each point on the lifting paraboloid by an infinitesimal amount that shrinks
with its input index (point 0 is raised most), which always leaves a proper
triangulation. The cost is O(n^4) and is meant for n up to a few dozen.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)

# relative tolerances for treating a predicate as exactly zero
_ORIENT_TOL = 1e-12
_INCIRCLE_TOL = 1e-10
_DUPLICATE_EPS = 1e-9


class DuplicatePointWarning(UserWarning):
    pass


def orient(a, b, c) -> float:
    """Twice the signed area of triangle abc; positive when counter-clockwise."""
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _lifted(p) -> tuple[float, float, float]:
    return (p[0], p[1], p[0] * p[0] + p[1] * p[1])


def _incircle_sos(pts: np.ndarray, tri: tuple[int, int, int], d: int, scale: float) -> float:
    """Sign of the perturbed incircle test for point ``d`` against ccw ``tri``.

    Positive means inside. Only called when the plain determinant is zero
    up to tolerance.
    """
    rows = [*tri, d]
    lifted = np.array([[*_lifted(pts[i]), 1.0] for i in rows])
    # raising point p adds delta_p * cofactor(p, z) to the determinant;
    # smaller indices dominate
    for row in sorted(range(4), key=lambda r: rows[r]):
        m = lifted.copy()
        m[:, 2] = 0.0
        m[row, 2] = 1.0
        cof = np.linalg.det(m)
        if abs(cof) > _ORIENT_TOL * scale**2:
            return float(np.sign(cof))
    return -1.0


def _dedupe(pts: np.ndarray) -> np.ndarray:
    seen: dict[tuple[float, float], int] = {}
    out = pts.copy()
    span = float(np.ptp(pts, axis=0).max()) if len(pts) > 1 else 1.0
    span = span if span > 0 else 1.0
    moved = []
    for i, (x, y) in enumerate(map(tuple, pts)):
        key = (x, y)
        if key in seen:
            k = len(moved) + 1
            out[i] = (x + k * _DUPLICATE_EPS * span, y + k * _DUPLICATE_EPS * span * 0.618)
            moved.append(i)
        else:
            seen[key] = i
    if moved:
        warnings.warn(
            f"duplicate coordinates at indices {moved}; perturbed before triangulating",
            DuplicatePointWarning,
            stacklevel=3,
        )
    return out


@lru_cache(maxsize=64)
def _triples(n: int) -> np.ndarray:
    out = np.array(list(itertools.combinations(range(n), 3)))
    out.flags.writeable = False
    return out


def delaunay_triangles(points) -> list[tuple[int, int, int]]:
    """Delaunay triangles as counter-clockwise index triples, sorted."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 3:
        return []
    pts = _dedupe(pts)
    centered = pts - pts.mean(axis=0)
    scale = float(np.abs(centered).max()) or 1.0

    triples = _triples(n)
    a, b, c = (centered[triples[:, k]] for k in range(3))
    ori = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    keep = np.abs(ori) > _ORIENT_TOL * scale**2
    triples, ori = triples[keep], ori[keep]
    if len(triples) == 0:
        return []
    # make every triple counter-clockwise
    cw = ori < 0
    triples[cw] = triples[cw][:, [0, 2, 1]]

    # incircle determinant of every (triangle, point) pair, in coordinates relative to the point
    P = centered[triples]  # (T, 3, 2)
    rel = P[:, None, :, :] - centered[None, :, None, :]  # (T, n, 3, 2)
    lift = (rel**2).sum(axis=-1)
    det = (
        rel[..., 0, 0] * (rel[..., 1, 1] * lift[..., 2] - lift[..., 1] * rel[..., 2, 1])
        - rel[..., 0, 1] * (rel[..., 1, 0] * lift[..., 2] - lift[..., 1] * rel[..., 2, 0])
        + lift[..., 0] * (rel[..., 1, 0] * rel[..., 2, 1] - rel[..., 1, 1] * rel[..., 2, 0])
    )
    member = np.zeros(det.shape, dtype=bool)
    member[np.arange(len(triples))[:, None], triples] = True
    det[member] = -np.inf

    tol = _INCIRCLE_TOL * scale**4
    inside = det > tol
    ambiguous = (np.abs(det) <= tol) & ~member
    out = []
    for t_idx in np.flatnonzero(~inside.any(axis=1)):
        tri = tuple(int(v) for v in triples[t_idx])
        if ambiguous[t_idx].any() and any(
            _incircle_sos(centered, tri, int(d), scale) > 0 for d in np.flatnonzero(ambiguous[t_idx])
        ):
            continue
        out.append(tri)
    return sorted(out)


def _collinear_chain(pts: np.ndarray) -> set[tuple[int, int]]:
    direction = pts[-1] - pts[0]
    if not direction.any():
        direction = np.array([1.0, 0.0])
    proj = pts @ direction
    order = sorted(range(len(pts)), key=lambda i: (proj[i], i))
    return {tuple(sorted((order[k], order[k + 1]))) for k in range(len(order) - 1)}


def delaunay_edges(points) -> set[tuple[int, int]]:
    """Edge set of the Delaunay triangulation, as ``(i, j)`` pairs with ``i < j``.

    Two points give their single edge, one point gives none. Fully collinear
    input has no triangles; its edges are the chain joining consecutive points
    along the line.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        return set()
    if n == 2:
        return {(0, 1)}
    tris = delaunay_triangles(pts)
    if not tris:
        return _collinear_chain(_dedupe(pts))
    edges = set()
    for i, j, k in tris:
        edges.update({tuple(sorted(e)) for e in ((i, j), (j, k), (i, k))})
    return edges
