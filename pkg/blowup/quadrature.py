import numpy as np
from numpy.polynomial.legendre import leggauss
from functools import lru_cache
from typing import Callable, Tuple


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def segment_integrals(func: Callable[[np.ndarray], np.ndarray], lo, hi, order: int = 16) -> np.ndarray:
    """Integrate ``func`` over each segment ``[lo[i], hi[i]]`` with one Gauss-Legendre rule.

    ``func`` must accept a 2D array of abscissae and return values of the same shape.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    nodes, weights = gauss_legendre(order)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    points = mid[:, None] + half[:, None] * nodes[None, :]
    values = np.asarray(func(points), dtype=float)
    return half * (values @ weights)


def panel_nodes(edges: np.ndarray, order: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """Flattened Gauss-Legendre nodes and weights on consecutive panels.

    Nodes come out sorted when ``edges`` is increasing.
    """
    edges = np.asarray(edges, dtype=float)
    nodes, weights = gauss_legendre(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    points = mid[:, None] + half[:, None] * nodes[None, :]
    w = half[:, None] * weights[None, :]
    return points.ravel(), w.ravel()


def panel_sums(values: np.ndarray, weights: np.ndarray, n_panels: int) -> np.ndarray:
    return (values * weights).reshape(n_panels, -1).sum(axis=1)


def cumulative_integral(func: Callable[[np.ndarray], np.ndarray], points, start: float = 0.0, order: int = 8) -> np.ndarray:
    """Running integral of ``func`` from ``start`` up to each of the sorted ``points``."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return np.zeros(0)
    if np.any(np.diff(points) < 0) or points[0] < start:
        raise ValueError("points must be sorted and not below the start of integration")
    left = np.concatenate(([start], points[:-1]))
    pieces = segment_integrals(func, left, points, order=order)
    return np.cumsum(pieces)
