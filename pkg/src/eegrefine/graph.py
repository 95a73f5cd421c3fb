"""Edge-probability matrices, weighted graphs and their JSON file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, InvariantError
from .validation import check_unit_interval


def _check_square_symmetric(m: np.ndarray, what: str) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"{what} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataError(f"{what} contains non-finite values")
    if not np.array_equal(m, m.T):
        raise InvariantError(f"{what} is not symmetric")
    if np.any(np.diag(m) != 0):
        raise InvariantError(f"{what} has a non-zero diagonal")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class ProbGraph:
    probs: np.ndarray = field(repr=False)
    window_index: int = 0
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        p = _check_square_symmetric(self.probs, "probability matrix")
        if np.any((p < 0) | (p > 1)):
            raise InvariantError("probabilities outside [0, 1]")
        object.__setattr__(self, "probs", p)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph; a positive weight means the edge exists."""

    weights: np.ndarray = field(repr=False)
    window_index: int = 0
    labels: tuple[str, ...] | None = None
    phi: float | None = None

    def __post_init__(self):
        w = _check_square_symmetric(self.weights, "weight matrix")
        if np.any(w < 0):
            raise InvariantError("negative edge weight")
        object.__setattr__(self, "weights", w)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != w.shape[0]:
                raise DataError(f"{len(labels)} labels for a {w.shape[0]}-node graph")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def binarize(self) -> np.ndarray:
        return (self.weights > 0).astype(np.int8)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.weights, 1))
        return list(zip(i.tolist(), j.tolist()))

    def edge_set(self) -> set[tuple[int, int]]:
        return set(self.edges())

    @property
    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.weights, 1)))

    def with_weights(self, weights) -> "Graph":
        return Graph(weights, self.window_index, self.labels, self.phi)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "labels": list(self.labels) if self.labels is not None else [str(k) for k in range(self.n)],
            "phi": self.phi,
            "window_index": self.window_index,
            "edges": [{"i": i, "j": j, "w": float(self.weights[i, j])} for i, j in self.edges()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Graph":
        try:
            n = int(d["n"])
            edges = d["edges"]
        except KeyError as exc:
            raise DataError(f"graph JSON missing field {exc}") from None
        w = np.zeros((n, n))
        for e in edges:
            i, j, v = int(e["i"]), int(e["j"]), float(e["w"])
            if not 0 <= i < j < n:
                raise DataError(f"graph JSON edge ({i}, {j}) must satisfy 0 <= i < j < n")
            w[i, j] = w[j, i] = v
        return cls(w, int(d.get("window_index", 0)), d.get("labels"), d.get("phi"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Graph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def threshold_edges(p: ProbGraph, phi: float) -> Graph:
    """Keep ``p[i, j]`` as the edge weight where ``p[i, j] > phi`` (strict)."""
    phi = check_unit_interval(phi, "phi")
    w = np.where(p.probs > phi, p.probs, 0.0)
    return Graph(w, p.window_index, p.labels, phi)
