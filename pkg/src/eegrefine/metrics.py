"""Graph-level benchmark statistics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DataError
from .graph import Graph
from .montage import Lobe, Montage

JSD_EPS = 1e-9


@dataclass
class GraphSeries:
    graphs: list[Graph]
    judge_id: str = ""

    def __post_init__(self):
        self.graphs = list(self.graphs)
        if not self.graphs:
            raise DataError("empty graph series")
        n = self.graphs[0].n
        if any(g.n != n for g in self.graphs):
            raise DataError("graphs in a series must share node count")

    def __len__(self):
        return len(self.graphs)

    @property
    def n(self) -> int:
        return self.graphs[0].n


def _upper(g: Graph) -> np.ndarray:
    return g.weights[np.triu_indices(g.n, 1)]


def sparsity(g: Graph) -> float:
    """Fraction of absent edges among the n(n-1)/2 unordered pairs."""
    if g.n < 2:
        raise DataError("sparsity needs at least 2 nodes")
    total = g.n * (g.n - 1) // 2
    return 1.0 - g.n_edges / total


def jsd(g1: Graph, g2: Graph) -> float:
    """Base-2 Jensen-Shannon divergence between the eps-smoothed, normalised
    upper-triangle weight vectors of two graphs."""
    if g1.n != g2.n:
        raise DataError(f"graph sizes differ: {g1.n} vs {g2.n}")
    p = _upper(g1) + JSD_EPS
    q = _upper(g2) + JSD_EPS
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)
    kl_pm = np.sum(p * np.log2(p / m))
    kl_qm = np.sum(q * np.log2(q / m))
    return float(min(1.0, max(0.0, 0.5 * kl_pm + 0.5 * kl_qm)))


def mean_series_jsd(s: GraphSeries) -> float:
    """Mean JSD between consecutive windows (0 for a single graph)."""
    if len(s) < 2:
        return 0.0
    return float(np.mean([jsd(a, b) for a, b in zip(s.graphs[:-1], s.graphs[1:])]))


def edge_difference(s1: GraphSeries, s2: GraphSeries) -> float:
    """Mean over windows of the fraction of unordered pairs whose edge
    presence differs between the two series."""
    if len(s1) != len(s2):
        raise DataError(f"series lengths differ: {len(s1)} vs {len(s2)}")
    if s1.n != s2.n:
        raise DataError("series node counts differ")
    iu = np.triu_indices(s1.n, 1)
    diffs = [
        np.mean(a.binarize()[iu] != b.binarize()[iu]) for a, b in zip(s1.graphs, s2.graphs)
    ]
    return float(np.mean(diffs))


def edge_difference_matrix(series: list[GraphSeries]) -> np.ndarray:
    k = len(series)
    out = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = edge_difference(series[a], series[b])
    return out


def node_importance(s: GraphSeries) -> np.ndarray:
    """[n_windows, n_nodes] weighted degree scaled by each window's maximum."""
    out = np.zeros((len(s), s.n))
    for t, g in enumerate(s.graphs):
        deg = g.weights.sum(1)
        top = deg.max()
        if top > 0:
            out[t] = deg / top
    return out


def lobe_pair_mask(montage: Montage, lobes) -> np.ndarray:
    """Unordered pairs with both channels inside the same listed lobe."""
    n = montage.n_channels
    mask = np.zeros((n, n), dtype=bool)
    for lobe in lobes:
        idx = montage.lobe_members(Lobe(lobe))
        mask[np.ix_(idx, idx)] = True
    np.fill_diagonal(mask, False)
    return np.triu(mask, 1)


def active_lobe_strength(s: GraphSeries, montage: Montage, lobes) -> np.ndarray:
    """Per-window mean edge weight over within-lobe pairs of ``lobes``."""
    mask = lobe_pair_mask(montage, lobes)
    if not mask.any():
        raise DataError("no within-lobe pairs for the scheduled lobes")
    return np.array([g.weights[mask].mean() for g in s.graphs])


def f1_accuracy_recall(y_true, y_pred) -> tuple[float, float, float]:
    y_true = np.asarray(y_true, dtype=bool)
    y_pred = np.asarray(y_pred, dtype=bool)
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    acc = float(np.mean(y_true == y_pred)) if y_true.size else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return f1, acc, recall


def fit_threshold(scores, labels) -> float:
    """Decision threshold (predict positive when score > t) maximising F1,
    then accuracy, on the given split. Candidates sit midway between
    consecutive distinct scores (plus one below the minimum); the lowest
    best candidate wins."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    values = np.unique(scores)
    candidates = np.concatenate([[values[0] - 1.0], 0.5 * (values[:-1] + values[1:])])
    best, best_key = candidates[0], (-1.0, -1.0)
    for t in candidates:
        f1, acc, _ = f1_accuracy_recall(labels, scores > t)
        if (f1, acc) > best_key:
            best, best_key = t, (f1, acc)
    return float(best)


@dataclass
class DetectionScore:
    f1: float
    accuracy: float
    recall: float
    threshold: float
    n_train: int
    n_test: int


def detection_proxy_score(s: GraphSeries, seizure_labels, montage: Montage, lobes,
                          train_fraction: float = 0.7) -> DetectionScore:
    """Window-level seizure call from within-lobe edge strength.

    The first ``train_fraction`` of windows fit the threshold, the rest are
    scored. This is a relative yardstick between graph sources only.
    """
    labels = np.asarray(seizure_labels, dtype=bool)
    if labels.size != len(s):
        raise DataError(f"{labels.size} labels for {len(s)} windows")
    scores = active_lobe_strength(s, montage, lobes)
    cut = int(np.floor(train_fraction * len(s)))
    if cut < 1 or cut >= len(s):
        raise DataError("train/test split leaves an empty side")
    thr = fit_threshold(scores[:cut], labels[:cut])
    f1, acc, recall = f1_accuracy_recall(labels[cut:], scores[cut:] > thr)
    return DetectionScore(f1, acc, recall, thr, cut, len(s) - cut)


@dataclass
class JudgeReport:
    judge_id: str
    mean_sparsity: float
    mean_jsd: float
    agreement: float
    f1: float
    accuracy: float
    recall: float
    n_edges: int
    warnings: int = 0
    error: str | None = None


@dataclass
class BenchReport:
    rows: list[JudgeReport] = field(default_factory=list)

    def to_dict(self) -> dict:
        """Rows as plain dicts; NaN (failed judge) becomes None."""
        rows = []
        for r in self.rows:
            d = asdict(r)
            rows.append({k: None if isinstance(v, float) and np.isnan(v) else v for k, v in d.items()})
        return {"rows": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def write_csv(self, path) -> None:
        cols = list(JudgeReport.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow(["" if getattr(r, c) is None else getattr(r, c) for c in cols])


def error_row(judge_id: str, message: str) -> JudgeReport:
    nan = float("nan")
    return JudgeReport(judge_id, nan, nan, nan, nan, nan, nan, 0, 0, message)


def summarize(series: GraphSeries, reference: GraphSeries, seizure_labels, montage, lobes,
              warnings: int = 0) -> JudgeReport:
    det = detection_proxy_score(series, seizure_labels, montage, lobes)
    return JudgeReport(
        judge_id=series.judge_id,
        mean_sparsity=float(np.mean([sparsity(g) for g in series.graphs])),
        mean_jsd=mean_series_jsd(series),
        agreement=1.0 - edge_difference(series, reference),
        f1=det.f1,
        accuracy=det.accuracy,
        recall=det.recall,
        n_edges=int(sum(g.n_edges for g in series.graphs)),
        warnings=warnings,
    )


def write_matrix_csv(path, matrix, row_labels, col_labels, corner="") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([corner] + list(col_labels))
        for lab, row in zip(row_labels, np.asarray(matrix)):
            w.writerow([lab] + [repr(float(v)) for v in row])
