"""Handcrafted graph builders: correlation, electrode distance and k-NN."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .graph import Graph
from .montage import Montage, standard_montage
from .signals import EegWindow


def abs_correlation(data: np.ndarray) -> np.ndarray:
    """|Pearson r| between rows; a zero-variance row correlates 0 with everything."""
    x = np.asarray(data, dtype=float)
    xc = x - x.mean(1, keepdims=True)
    norm = np.sqrt((xc**2).sum(1))
    ok = norm > 0
    r = np.zeros((x.shape[0], x.shape[0]))
    xn = xc[ok] / norm[ok, None]
    r[np.ix_(ok, ok)] = np.clip(np.abs(xn @ xn.T), 0.0, 1.0)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 0.0)
    return r


def correlation_graph(window: EegWindow, phi: float) -> Graph:
    r = abs_correlation(window.data)
    return Graph(np.where(r > phi, r, 0.0), window.window_index, tuple(window.labels), phi)


def distance_graph(montage: Montage, phi_dist: float, window_index: int = 0) -> Graph:
    """Weight ``1 - d / D`` for electrodes closer than ``phi_dist``, where D
    is the diameter of the sphere enclosing the montage."""
    d = montage.distances
    pos = np.array([c.position for c in montage.channels])
    diameter = 2.0 * float(np.max(np.linalg.norm(pos, axis=1)))
    w = np.where(d < phi_dist, 1.0 - d / diameter, 0.0)
    np.fill_diagonal(w, 0.0)
    return Graph(w, window_index, tuple(montage.labels), phi_dist)


def knn_graph(window: EegWindow, k: int) -> Graph:
    """Each channel links to its ``k`` most |r|-similar channels, then the
    directed links are symmetrised by union. Ties go to the lower index."""
    n = window.n_channels
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    sim = abs_correlation(window.data)
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        cand = np.array([j for j in range(n) if j != i])
        order = cand[np.lexsort((cand, -sim[i, cand]))]
        adj[i, order[:k]] = True
    adj |= adj.T
    return Graph(np.where(adj, sim, 0.0), window.window_index, tuple(window.labels), None)


class CorrelationGraphBuilder(BaseEstimator):
    def __init__(self, threshold=0.3):
        self.threshold = threshold

    def fit(self, windows=None, graphs=None):
        return self

    def transform(self, windows) -> list[Graph]:
        return [correlation_graph(w, self.threshold) for w in windows]

    predict = transform


class DistanceGraphBuilder(BaseEstimator):
    def __init__(self, max_distance=0.8, montage=None):
        self.max_distance = max_distance
        self.montage = montage

    def fit(self, windows=None, graphs=None):
        return self

    def transform(self, windows) -> list[Graph]:
        out = []
        for w in windows:
            montage = self.montage or w.montage
            out.append(distance_graph(montage, self.max_distance, w.window_index))
        return out

    predict = transform

    def static_graph(self) -> Graph:
        return distance_graph(self.montage or standard_montage(), self.max_distance)


class KnnGraphBuilder(BaseEstimator):
    def __init__(self, k=3):
        self.k = k

    def fit(self, windows=None, graphs=None):
        return self

    def transform(self, windows) -> list[Graph]:
        return [knn_graph(w, self.k) for w in windows]

    predict = transform
