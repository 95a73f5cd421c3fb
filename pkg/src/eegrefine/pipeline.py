"""Configuration, run manifests and the command implementations behind the CLI.

Every command writes into one output directory and finishes by writing
``manifest.json``, which lists every other file there with its SHA-256.
Nothing time-dependent goes into the data files, so two runs with the same
config, seed and cache state produce the same inventory hashes.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.metrics import roc_auc_score

from . import __version__
from .baselines import (
    CorrelationGraphBuilder,
    DistanceGraphBuilder,
    KnnGraphBuilder,
    abs_correlation,
)
from .edge_predictor import TransformerEdgePredictor
from .exceptions import ConfigError, DataError, JudgeError
from .features import describe_channel, write_features_csv
from .graph import Graph, threshold_edges
from .metrics import (
    BenchReport,
    GraphSeries,
    JudgeReport,
    edge_difference,
    edge_difference_matrix,
    error_row,
    mean_series_jsd,
    node_importance,
    sparsity,
    summarize,
    write_matrix_csv,
)
from .refiner import JudgeConfig, RemoteJudge, make_judge, refine_window
from .signals import EegWindow, SynthSpec, generate_synthetic, load_windows, write_csv_recording, write_windows_json
from .validation import check_fraction, check_positive_int, check_unit_interval

log = logging.getLogger(__name__)

SOURCES = ("transformer", "correlation", "distance", "knn")

DEFAULT_CONFIG = {
    "seed": 42,
    # exactly one of "synth" / "input"
    "synth": {},
    "input": None,
    "window_seconds": 4.0,
    "sample_rate": None,
    "source": "transformer",
    "phi": 0.5,
    "train_fraction": 0.7,
    "checkpoint": None,
    "encoder": {
        "patch_len": 25, "d_model": 32, "n_heads": 4, "n_layers": 1,
        "feedforward_dim": 64, "hidden_dim": 32, "learning_rate": 0.05,
        "momentum": 0.9, "n_epochs": 40, "batch_size": 8,
    },
    "baselines": {"correlation_threshold": 0.3, "max_distance": 0.8, "knn_k": 3},
    "judges": [{"kind": "mock", "judge_id": "mock"}],
    "max_parallel": 1,
    "metrics": {"jsd": True, "edge_difference": True, "node_importance": True, "detection": True},
    "synth_formats": ["csv"],
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "synth":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(d: dict, dotted: str, value) -> None:
    """``set_dotted(cfg, "encoder.n_epochs", 5)``; list items by integer key."""
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if isinstance(node, list):
            node = node[int(k)]
            continue
        if node.get(k) is None:
            node[k] = {}
        node = node[k]
    last = keys[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


@dataclass
class PipelineConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))

    @classmethod
    def from_dict(cls, d: dict | None = None, overrides: list[str] | tuple = (), seed: int | None = None):
        d = dict(d or {})
        unknown = set(d) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("input") is not None and "synth" not in d:
            d["synth"] = None
        raw = _merge(DEFAULT_CONFIG, d)
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must look like key=value: {item!r}")
            key, value = item.split("=", 1)
            set_dotted(raw, key.strip(), _parse_value(value))
        if seed is not None:
            raw["seed"] = int(seed)
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None, overrides=(), seed=None) -> "PipelineConfig":
        d = {}
        if path is not None:
            try:
                with open(path) as fh:
                    d = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d, overrides, seed)

    def __getitem__(self, key):
        return self.raw[key]

    def validate(self):
        r = self.raw
        has_synth = r.get("synth") is not None
        has_input = r.get("input") is not None
        if has_synth == has_input:
            raise ConfigError("config needs exactly one data source: 'synth' or 'input'")
        if r["source"] not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {r['source']!r}")
        try:
            check_unit_interval(r["phi"], "phi")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        check_fraction(r["train_fraction"], "train_fraction")
        check_positive_int(r["max_parallel"], "max_parallel")
        check_positive_int(r["baselines"]["knn_k"], "baselines.knn_k")
        unknown = set(r["encoder"]) - set(TransformerEdgePredictor().get_params())
        if unknown:
            raise ConfigError(f"unknown encoder settings: {sorted(unknown)}")
        if not r["judges"]:
            raise ConfigError("at least one judge is required")
        ids = [j.judge_id for j in self.judge_configs()]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"judge ids must be unique: {ids}")
        if has_synth:
            self.synth_spec()

    def synth_spec(self) -> SynthSpec:
        d = dict(self.raw["synth"])
        d["seed"] = self.raw["seed"]
        try:
            return SynthSpec.from_dict(d)
        except (DataError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth spec: {exc}") from None

    def judge_configs(self) -> list[JudgeConfig]:
        out = []
        for j in self.raw["judges"]:
            j = dict(j)
            j.setdefault("max_parallel", self.raw["max_parallel"])
            try:
                out.append(JudgeConfig.from_dict(j))
            except TypeError as exc:
                raise ConfigError(f"bad judge config: {exc}") from None
        return out

    def public_dict(self) -> dict:
        """Config with judge credentials dropped."""
        d = copy.deepcopy(self.raw)
        for j in d["judges"]:
            j.pop("api_key", None)
        return d

    def to_json(self) -> str:
        return json.dumps(self.public_dict(), indent=1, sort_keys=True) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.public_dict(), sort_keys=True).encode()).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Config hash, tool version, stage timings and a hashed file inventory."""

    filename = "manifest.json"

    def __init__(self, command: str, config: PipelineConfig, out_dir):
        self.command = command
        self.config = config
        self.out_dir = Path(out_dir)
        self.timings: dict[str, float] = {}
        self.warnings: list[str] = []
        self.files: dict[str, str] = {}

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 4)

    def inventory(self) -> dict[str, str]:
        files = {}
        for p in sorted(self.out_dir.rglob("*")):
            if p.is_file() and p.relative_to(self.out_dir).as_posix() != self.filename:
                files[p.relative_to(self.out_dir).as_posix()] = file_sha256(p)
        return files

    def inventory_hash(self) -> str:
        blob = "".join(f"{k}\t{v}\n" for k, v in self.files.items())
        return hashlib.sha256(blob.encode()).hexdigest()

    def write(self) -> Path:
        self.files = self.inventory()
        payload = {
            "command": self.command,
            "version": __version__,
            "config_hash": self.config.hash(),
            "seed": self.config["seed"],
            "timings": self.timings,
            "warnings": self.warnings,
            "inventory_hash": self.inventory_hash(),
            "files": self.files,
        }
        path = self.out_dir / self.filename
        path.write_text(json.dumps(payload, indent=1) + "\n")
        return path


def read_manifest(out_dir) -> dict:
    with open(Path(out_dir) / RunManifest.filename) as fh:
        return json.load(fh)


# data and stage one ---------------------------------------------------------

@dataclass
class Dataset:
    windows: list[EegWindow]
    spec: SynthSpec | None = None

    @property
    def labels(self):
        return self.windows[0].labels

    @property
    def montage(self):
        return self.windows[0].montage

    def seizure_labels(self):
        return None if self.spec is None else self.spec.seizure_labels()

    def proxy_lobes(self):
        return None if self.spec is None else self.spec.scheduled_lobes()


def load_dataset(cfg: PipelineConfig) -> Dataset:
    if cfg["input"] is not None:
        try:
            windows = load_windows(cfg["input"], cfg["window_seconds"], cfg["sample_rate"])
        except OSError as exc:
            raise DataError(f"cannot read {cfg['input']}: {exc}") from None
        return Dataset(windows)
    spec = cfg.synth_spec()
    return Dataset(generate_synthetic(spec), spec)


def split_index(n: int, fraction: float) -> int:
    cut = int(math.floor(fraction * n))
    if cut < 1 or cut >= n:
        raise DataError(f"train split of {n} windows at {fraction} leaves an empty side")
    return cut


def supervision_graphs(cfg: PipelineConfig, data: Dataset) -> list[np.ndarray]:
    """Planted ground truth on synthetic data, thresholded |r| otherwise."""
    if data.spec is not None:
        return data.spec.ground_truth()
    thr = cfg["baselines"]["correlation_threshold"]
    return [(abs_correlation(w.data) > thr).astype(float) for w in data.windows]


def stage_one_model(cfg: PipelineConfig, data: Dataset, out_dir: Path) -> TransformerEdgePredictor:
    """Load the configured checkpoint, or train on the leading split and
    save ``model.json`` in the output directory."""
    ckpt = cfg["checkpoint"]
    if ckpt and Path(ckpt).exists():
        model = TransformerEdgePredictor.load(ckpt)
    else:
        cut = split_index(len(data.windows), cfg["train_fraction"])
        params = dict(cfg["encoder"], threshold=cfg["phi"], random_state=cfg["seed"])
        model = TransformerEdgePredictor(**params)
        try:
            model.fit(data.windows[:cut], supervision_graphs(cfg, data)[:cut])
        except FloatingPointError as exc:
            raise DataError(str(exc)) from None
    model.set_params(threshold=cfg["phi"])
    model.save(out_dir / "model.json")
    return model


def build_graphs(cfg: PipelineConfig, data: Dataset, source: str, out_dir: Path,
                 model: TransformerEdgePredictor | None = None) -> list[Graph]:
    b = cfg["baselines"]
    if source == "transformer":
        model = model or stage_one_model(cfg, data, out_dir)
        return model.predict(data.windows)
    if source == "correlation":
        return CorrelationGraphBuilder(b["correlation_threshold"]).transform(data.windows)
    if source == "distance":
        return DistanceGraphBuilder(b["max_distance"]).transform(data.windows)
    if source == "knn":
        try:
            return KnnGraphBuilder(b["knn_k"]).transform(data.windows)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown graph source {source!r}")


def pair_auc(scores: list[np.ndarray], truth: list[np.ndarray]) -> float:
    """ROC AUC over the upper-triangle pairs of all given windows."""
    n = truth[0].shape[0]
    iu = np.triu_indices(n, 1)
    y = np.concatenate([t[iu] for t in truth]) > 0
    s = np.concatenate([np.asarray(m)[iu] for m in scores])
    if y.all() or not y.any():
        return float("nan")
    return float(roc_auc_score(y, s))


def write_graph_dir(directory: Path, graphs: list[Graph]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for g in graphs:
        g.save(directory / f"w{g.window_index:04d}.json")


def read_graph_dir(directory) -> list[Graph]:
    paths = sorted(Path(directory).glob("w*.json"))
    if not paths:
        raise DataError(f"no graph files in {directory}")
    return [Graph.load(p) for p in paths]


# refinement ------------------------------------------------------------------

@dataclass
class RefineOutcome:
    judge_id: str
    graphs: list[Graph] | None
    verdicts: list
    warnings: list[str]
    network_calls: int = 0
    error: str | None = None


def refine_series(graphs, windows, jcfg: JudgeConfig, transport=None) -> RefineOutcome:
    """Refine a whole series with one judge. A hard judge failure is caught
    and reported; verdicts completed before it stay in the cache."""
    try:
        judge = make_judge(jcfg.resolved(), transport=transport)
    except ConfigError as exc:
        return RefineOutcome(jcfg.judge_id, None, [], [], 0, str(exc))
    out, verdicts, warnings = [], [], []
    try:
        for g, w in zip(graphs, windows):
            res = refine_window(g, w, judge, jcfg.max_parallel)
            out.append(res.graph)
            verdicts.extend(res.verdicts)
            warnings.extend(res.warnings)
    except JudgeError as exc:
        calls = getattr(judge, "network_calls", 0)
        return RefineOutcome(jcfg.judge_id, None, verdicts, warnings, calls, str(exc))
    finally:
        if isinstance(judge, RemoteJudge):
            judge.close()
    return RefineOutcome(jcfg.judge_id, out, verdicts, warnings, getattr(judge, "network_calls", 0))


def write_verdict_log(path, verdicts, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "i", "j", "label_i", "label_j", "decision", "raw", "cached", "retried"])
        for v in verdicts:
            w.writerow([v.window_index, v.i, v.j, labels[v.i], labels[v.j], v.decision.value,
                        v.raw_response, int(v.cached), int(v.retried)])


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


# commands --------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, out_dir) -> RunManifest:
    if cfg["input"] is not None:
        raise ConfigError("synth needs a 'synth' data source")
    out = _prepare(out_dir)
    man = RunManifest("synth", cfg, out)
    spec = cfg.synth_spec()
    with man.stage("generate"):
        windows = generate_synthetic(spec)
    with man.stage("write"):
        formats = set(cfg["synth_formats"])
        if "csv" in formats:
            data = np.concatenate([w.data for w in windows], axis=1)
            write_csv_recording(out / "recording.csv", windows[0].labels, data)
        if "json" in formats:
            write_windows_json(out / "windows.json", windows)
        planted = Graph(spec.planted_adjacency(), 0, tuple(spec.montage.labels), None)
        planted.save(out / "planted_graph.json")
        _dump(out / "synth_spec.json", spec.to_dict())
        with open(out / "seizure_labels.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "seizure", "lobe"])
            for tau in range(spec.n_windows):
                lobe = spec.active_lobe(tau)
                w.writerow([tau, int(lobe is not None), "" if lobe is None else lobe.value])
    man.write()
    return man


def cmd_features(cfg: PipelineConfig, out_dir) -> RunManifest:
    out = _prepare(out_dir)
    man = RunManifest("features", cfg, out)
    with man.stage("load"):
        data = load_dataset(cfg)
    with man.stage("features"):
        write_features_csv(out / "features.csv", data.windows)
        with open(out / "descriptions.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "channel", "description"])
            for win in data.windows:
                for c, label in enumerate(win.labels):
                    w.writerow([win.window_index, label, describe_channel(win, c).rendered])
    man.write()
    return man


def cmd_build_graph(cfg: PipelineConfig, out_dir, source: str | None = None) -> RunManifest:
    source = source or cfg["source"]
    out = _prepare(out_dir)
    man = RunManifest("build-graph", cfg, out)
    with man.stage("load"):
        data = load_dataset(cfg)
    with man.stage(f"build:{source}"):
        graphs = build_graphs(cfg, data, source, out)
    with man.stage("write"):
        write_graph_dir(out / "graphs" / source, graphs)
    man.write()
    return man


def cmd_refine(cfg: PipelineConfig, out_dir, graphs_dir=None, transport=None) -> RunManifest:
    """Refine initial graphs (read from ``graphs_dir`` or built from the
    configured source) with every configured judge."""
    out = _prepare(out_dir)
    man = RunManifest("refine", cfg, out)
    with man.stage("load"):
        data = load_dataset(cfg)
    with man.stage("initial"):
        if graphs_dir is not None:
            initial = read_graph_dir(graphs_dir)
            if len(initial) != len(data.windows):
                raise DataError(f"{len(initial)} graphs for {len(data.windows)} windows")
        else:
            initial = build_graphs(cfg, data, cfg["source"], out)
    summary, failed = {}, []
    for jcfg in cfg.judge_configs():
        with man.stage(f"refine:{jcfg.judge_id}"):
            res = refine_series(initial, data.windows, jcfg, transport)
        write_verdict_log(out / f"verdicts_{jcfg.judge_id}.csv", res.verdicts, data.labels)
        if res.graphs is not None:
            write_graph_dir(out / "graphs" / f"refined_{jcfg.judge_id}", res.graphs)
        else:
            failed.append(jcfg.judge_id)
        man.warnings.extend(res.warnings)
        summary[jcfg.judge_id] = {
            "initial_edges": sum(g.n_edges for g in initial),
            "verdicts": len(res.verdicts),
            "kept_edges": None if res.graphs is None else sum(g.n_edges for g in res.graphs),
            "network_calls": res.network_calls,
            "warnings": len(res.warnings),
            "error": res.error,
        }
    _dump(out / "refine_summary.json", summary)
    man.write()
    if failed:
        raise JudgeError(f"judge(s) failed: {', '.join(failed)}; see refine_summary.json")
    return man


def _series_metrics(series: GraphSeries, flags: dict) -> dict:
    d = {
        "judge_id": series.judge_id,
        "mean_sparsity": float(np.mean([sparsity(g) for g in series.graphs])),
        "n_edges": int(sum(g.n_edges for g in series.graphs)),
    }
    if flags.get("jsd", True):
        d["mean_jsd"] = mean_series_jsd(series)
    return d


def cmd_metrics(cfg: PipelineConfig, out_dir, graph_dirs) -> RunManifest:
    """Metrics for already-written graph directories; the directory name is
    the series id."""
    if not graph_dirs:
        raise ConfigError("metrics needs at least one --graphs directory")
    out = _prepare(out_dir)
    man = RunManifest("metrics", cfg, out)
    flags = cfg["metrics"]
    series = [GraphSeries(read_graph_dir(d), Path(d).name) for d in graph_dirs]
    ids = [s.judge_id for s in series]
    rows = [_series_metrics(s, flags) for s in series]
    _dump(out / "metrics.json", {"series": rows})
    if flags.get("edge_difference", True) and len(series) > 1:
        write_matrix_csv(out / "edge_difference.csv", edge_difference_matrix(series), ids, ids, "judge_id")
    if flags.get("node_importance", True):
        for s in series:
            labels = s.graphs[0].labels or [str(k) for k in range(s.n)]
            idx = [g.window_index for g in s.graphs]
            write_matrix_csv(out / f"node_importance_{s.judge_id}.csv", node_importance(s), idx, labels, "window")
    man.write()
    return man


@dataclass
class BenchResult:
    report: BenchReport
    series: dict[str, GraphSeries]
    auc: dict[str, float]
    manifest: RunManifest


def cmd_bench(cfg: PipelineConfig, out_dir, transport=None) -> BenchResult:
    """Stage one, every baseline and every configured judge on one dataset.

    Series ids: ``transformer`` (unrefined), ``correlation``, ``distance``,
    ``knn`` and one per judge. Agreement is measured against the unrefined
    transformer series.
    """
    out = _prepare(out_dir)
    man = RunManifest("bench", cfg, out)
    flags = cfg["metrics"]
    with man.stage("load"):
        data = load_dataset(cfg)
    with man.stage("stage_one"):
        model = stage_one_model(cfg, data, out)
        probs = model.predict_proba(data.windows)
        initial = [threshold_edges(p, cfg["phi"]) for p in probs]
    series = {"transformer": GraphSeries(initial, "transformer")}
    with man.stage("baselines"):
        for source in ("correlation", "distance", "knn"):
            series[source] = GraphSeries(build_graphs(cfg, data, source, out), source)

    auc = {}
    if data.spec is not None:
        cut = split_index(len(data.windows), cfg["train_fraction"])
        truth = data.spec.ground_truth()[cut:]
        auc = {
            "transformer": pair_auc([p.probs for p in probs[cut:]], truth),
            "correlation": pair_auc([abs_correlation(w.data) for w in data.windows[cut:]], truth),
            "n_test_windows": len(truth),
        }
        _dump(out / "auc.json", auc)

    judge_rows, warn_counts, refine_summary = {}, {}, {}
    for jcfg in cfg.judge_configs():
        with man.stage(f"refine:{jcfg.judge_id}"):
            res = refine_series(initial, data.windows, jcfg, transport)
        write_verdict_log(out / f"verdicts_{jcfg.judge_id}.csv", res.verdicts, data.labels)
        man.warnings.extend(res.warnings)
        refine_summary[jcfg.judge_id] = {"network_calls": res.network_calls, "error": res.error,
                                         "verdicts": len(res.verdicts)}
        if res.graphs is None:
            judge_rows[jcfg.judge_id] = error_row(jcfg.judge_id, res.error or "judge failed")
            continue
        series[jcfg.judge_id] = GraphSeries(res.graphs, jcfg.judge_id)
        warn_counts[jcfg.judge_id] = len(res.warnings)
    _dump(out / "refine_summary.json", refine_summary)

    with man.stage("metrics"):
        report = BenchReport()
        labels, lobes = data.seizure_labels(), data.proxy_lobes()
        reference = series["transformer"]
        order = ["transformer", "correlation", "distance", "knn"] + [j.judge_id for j in cfg.judge_configs()]
        for sid in order:
            if sid in judge_rows:
                report.rows.append(judge_rows[sid])
                continue
            s = series[sid]
            if labels is not None and flags.get("detection", True):
                row = summarize(s, reference, labels, data.montage, lobes, warn_counts.get(sid, 0))
            else:
                row = summarize_unlabelled(s, reference, warn_counts.get(sid, 0))
            if not flags.get("jsd", True):
                row.mean_jsd = float("nan")
            report.rows.append(row)
        (out / "report.json").write_text(report.to_json())
        report.write_csv(out / "report.csv")
        ids = list(series)
        if flags.get("edge_difference", True):
            write_matrix_csv(out / "edge_difference.csv",
                             edge_difference_matrix([series[k] for k in ids]), ids, ids, "judge_id")
        if flags.get("node_importance", True):
            idx = [w.window_index for w in data.windows]
            for sid, s in series.items():
                write_matrix_csv(out / f"node_importance_{sid}.csv", node_importance(s), idx, data.labels, "window")
    (out / "config.json").write_text(cfg.to_json())
    man.write()
    return BenchResult(report, series, auc, man)


def summarize_unlabelled(series: GraphSeries, reference: GraphSeries, warnings: int = 0):
    nan = float("nan")
    return JudgeReport(
        judge_id=series.judge_id,
        mean_sparsity=float(np.mean([sparsity(g) for g in series.graphs])),
        mean_jsd=mean_series_jsd(series),
        agreement=1.0 - edge_difference(series, reference),
        f1=nan, accuracy=nan, recall=nan,
        n_edges=int(sum(g.n_edges for g in series.graphs)),
        warnings=warnings,
    )
