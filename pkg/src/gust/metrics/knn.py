"""kNN-ball density and coverage between real and generated point sets."""

import numpy as np

from ..exceptions import TooFewRealPoints


def _points(s):
    pts = getattr(s, "points", s)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or not np.isfinite(pts).all():
        raise ValueError("point sets must be finite (n, d) arrays")
    return pts


def pairwise_distances(a, b):
    """Euclidean distances, accumulating squared coordinate differences in axis order."""
    d2 = np.zeros((len(a), len(b)))
    for c in range(a.shape[1]):
        d2 += (a[:, None, c] - b[None, :, c]) ** 2
    return np.sqrt(d2)


def knn_radii(real, k):
    """Distance from every real point to its ``k``-th nearest other real point."""
    real = _points(real)
    if len(real) <= k:
        raise TooFewRealPoints(f"need more than k={k} real points, got {len(real)}")
    d = pairwise_distances(real, real)
    np.fill_diagonal(d, np.inf)
    return np.sort(d, axis=1)[:, k - 1]


def _membership(real, gen, k):
    real, gen = _points(real), _points(gen)
    if real.shape[1] != gen.shape[1]:
        raise ValueError("real and generated points differ in dimension")
    radii = knn_radii(real, k)
    return pairwise_distances(real, gen) <= radii[:, None]  # (N, M)


def density(real, gen, k=5):
    """Mean number of real kNN balls containing each generated point, divided by k."""
    inside = _membership(real, gen, k)
    return float(inside.sum()) / (k * inside.shape[1])


def coverage(real, gen, k=5):
    """Fraction of real kNN balls that contain at least one generated point."""
    inside = _membership(real, gen, k)
    return float(inside.any(axis=1).sum()) / inside.shape[0]
