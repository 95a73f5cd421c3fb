"""Windowed EEG containers, synthetic recordings with planted connectivity,
and plain-text ingestion (CSV and JSON windows)."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .montage import Lobe, Montage, montage_for_labels, standard_montage


@dataclass(frozen=True)
class EegWindow:
    """One window of multichannel signal, ``data`` is [n_channels, n_samples] in µV."""

    data: np.ndarray = field(repr=False)
    sample_rate: float
    window_index: int
    montage: Montage = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2:
            raise DataError(f"window data must be 2-D, got shape {data.shape}")
        if data.shape[0] != self.montage.n_channels:
            raise DataError(
                f"window has {data.shape[0]} channels, montage has {self.montage.n_channels}"
            )
        if data.shape[1] < 2:
            raise DataError("window needs at least 2 samples")
        if not np.all(np.isfinite(data)):
            raise DataError("window contains non-finite values")
        if not self.sample_rate > 0:
            raise DataError("sample_rate must be positive")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def labels(self) -> list[str]:
        return self.montage.labels


@dataclass(frozen=True)
class SeizureEvent:
    """Windows ``start <= tau < stop`` are ictal; the lobe sequence is spread
    evenly over the range (first lobe = onset)."""

    start: int
    stop: int
    lobes: tuple[Lobe, ...]

    def __post_init__(self):
        object.__setattr__(self, "lobes", tuple(Lobe(x) for x in self.lobes))

    def lobe_at(self, tau: int) -> Lobe | None:
        if not self.start <= tau < self.stop:
            return None
        k = (tau - self.start) * len(self.lobes) // (self.stop - self.start)
        return self.lobes[k]


DEFAULT_PLANTED = (
    ("O1", "O2"), ("O1", "Pz"), ("O2", "Pz"),
    ("C3", "Cz"), ("Cz", "C4"), ("C3", "C4"),
    ("F3", "Fz"), ("Fz", "F4"), ("F3", "F4"),
    ("T5", "P3"),
)

DEFAULT_SCHEDULE = tuple(
    SeizureEvent(s, s + 6, (Lobe.FRONTAL, Lobe.TEMPORAL)) for s in (10, 50, 90, 130, 170)
)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 42
    n_windows: int = 200
    window_seconds: float = 4.0
    sample_rate: float = 250.0
    planted_edges: tuple[tuple[str, str], ...] = DEFAULT_PLANTED
    seizure_schedule: tuple[SeizureEvent, ...] = DEFAULT_SCHEDULE
    noise_std: float = 10.0
    source_amplitude: float = 10.0
    # one frequency per connected component of the planted graph, cycled
    source_frequencies: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0)
    seizure_amplitude: float = 40.0
    # ictal rhythm frequency, drawn once per seizure event
    seizure_frequency_range: tuple[float, float] = (2.5, 6.0)
    # interictal rhythmic artifacts: channel-local, independent frequencies
    artifact_rate: float = 0.15
    artifact_amplitude: float = 40.0
    artifact_frequency_range: tuple[float, float] = (1.5, 12.0)
    artifact_lobes: tuple[Lobe, ...] = (Lobe.FRONTAL, Lobe.TEMPORAL)
    artifact_channels: tuple[int, int] = (3, 5)
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "planted_edges", tuple(tuple(e) for e in self.planted_edges))
        object.__setattr__(
            self,
            "seizure_schedule",
            tuple(e if isinstance(e, SeizureEvent) else SeizureEvent(**e) for e in self.seizure_schedule),
        )
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "artifact_lobes", tuple(Lobe(x) for x in self.artifact_lobes))
        object.__setattr__(self, "artifact_frequency_range", tuple(self.artifact_frequency_range))
        object.__setattr__(self, "seizure_frequency_range", tuple(self.seizure_frequency_range))
        object.__setattr__(self, "artifact_channels", tuple(int(k) for k in self.artifact_channels))
        self.validate()

    @property
    def montage(self) -> Montage:
        return standard_montage() if self.labels is None else montage_for_labels(self.labels)

    @property
    def samples_per_window(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    def validate(self):
        if self.n_windows < 1:
            raise DataError("n_windows must be >= 1")
        if self.samples_per_window < 2:
            raise DataError("window must hold at least 2 samples")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if not self.source_frequencies:
            raise DataError("source_frequencies is empty")
        if not 0.0 <= self.artifact_rate <= 1.0:
            raise DataError("artifact_rate must lie in [0, 1]")
        for name in ("artifact_frequency_range", "seizure_frequency_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise DataError(f"{name} must satisfy 0 < low <= high")
        if not 1 <= self.artifact_channels[0] <= self.artifact_channels[1]:
            raise DataError("artifact_channels must satisfy 1 <= low <= high")
        montage = self.montage
        for a, b in self.planted_edges:
            if a == b:
                raise DataError(f"planted self-loop on {a}")
            for lab in (a, b):
                if lab not in montage.labels:
                    raise DataError(f"planted edge uses unknown channel {lab!r}")
        for ev in self.seizure_schedule:
            if not 0 <= ev.start < ev.stop <= self.n_windows:
                raise DataError(
                    f"seizure range [{ev.start}, {ev.stop}) out of bounds for {self.n_windows} windows"
                )
            if not ev.lobes:
                raise DataError("seizure event with empty lobe sequence")
            for lobe in ev.lobes:
                if not montage.lobe_members(lobe):
                    raise DataError(f"montage has no {lobe.value} channels")

    def active_event(self, tau: int) -> tuple[Lobe | None, int | None]:
        for k, ev in enumerate(self.seizure_schedule):
            lobe = ev.lobe_at(tau)
            if lobe is not None:
                return lobe, k
        return None, None

    def active_lobe(self, tau: int) -> Lobe | None:
        return self.active_event(tau)[0]

    def seizure_labels(self) -> np.ndarray:
        return np.array([self.active_lobe(t) is not None for t in range(self.n_windows)])

    def scheduled_lobes(self) -> list[Lobe]:
        seen = []
        for ev in self.seizure_schedule:
            for lobe in ev.lobes:
                if lobe not in seen:
                    seen.append(lobe)
        return seen

    def planted_adjacency(self) -> np.ndarray:
        m = self.montage
        adj = np.zeros((m.n_channels, m.n_channels))
        for a, b in self.planted_edges:
            i, j = m.index(a), m.index(b)
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def ground_truth(self) -> list[np.ndarray]:
        """Per-window 0/1 adjacency: planted edges plus a clique over the ictal lobe."""
        m = self.montage
        base = self.planted_adjacency()
        out = []
        for tau in range(self.n_windows):
            adj = base.copy()
            lobe = self.active_lobe(tau)
            if lobe is not None:
                idx = m.lobe_members(lobe)
                adj[np.ix_(idx, idx)] = 1.0
                np.fill_diagonal(adj, 0.0)
            out.append(adj)
        return out

    def components(self) -> list[list[int]]:
        """Connected components of the planted graph (only channels with edges),
        in order of first appearance in ``planted_edges``."""
        m = self.montage
        parent = {}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        order = []
        for a, b in self.planted_edges:
            for lab in (a, b):
                k = m.index(lab)
                if k not in parent:
                    parent[k] = k
                    order.append(k)
            ra, rb = find(m.index(a)), find(m.index(b))
            if ra != rb:
                parent[rb] = ra
        groups: dict[int, list[int]] = {}
        for k in order:
            groups.setdefault(find(k), []).append(k)
        return list(groups.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["planted_edges"] = [list(e) for e in self.planted_edges]
        d["seizure_schedule"] = [
            {"start": e.start, "stop": e.stop, "lobes": [lobe.value for lobe in e.lobes]}
            for e in self.seizure_schedule
        ]
        d["source_frequencies"] = list(self.source_frequencies)
        d["labels"] = None if self.labels is None else list(self.labels)
        d["artifact_lobes"] = [lobe.value for lobe in self.artifact_lobes]
        d["artifact_frequency_range"] = list(self.artifact_frequency_range)
        d["seizure_frequency_range"] = list(self.seizure_frequency_range)
        d["artifact_channels"] = list(self.artifact_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown SynthSpec fields: {sorted(unknown)}")
        d = dict(d)
        if "planted_edges" in d:
            d["planted_edges"] = tuple(tuple(e) for e in d["planted_edges"])
        if "seizure_schedule" in d:
            d["seizure_schedule"] = tuple(
                SeizureEvent(int(e["start"]), int(e["stop"]), tuple(e["lobes"]))
                if isinstance(e, dict)
                else SeizureEvent(int(e[0]), int(e[1]), tuple(e[2]))
                for e in d["seizure_schedule"]
            )
        if "source_frequencies" in d:
            d["source_frequencies"] = tuple(float(f) for f in d["source_frequencies"])
        return cls(**d)

    @classmethod
    def from_json(cls, path, seed: int | None = None) -> "SynthSpec":
        with open(path) as fh:
            d = json.load(fh)
        if seed is not None:
            d["seed"] = seed
        return cls.from_dict(d)


def _spike_wave(t: np.ndarray, freq: float, phase: float) -> np.ndarray:
    # slow wave plus a narrow spike once per cycle
    period = 1.0 / freq
    cyc = ((t + phase / (2 * np.pi * freq)) % period) / period
    spikes = 1.5 * np.exp(-(((cyc - 0.25) * period) / 0.012) ** 2)
    return np.sin(2 * np.pi * freq * t + phase) + spikes


def generate_synthetic(spec: SynthSpec) -> list[EegWindow]:
    """Deterministic synthetic EEG.

    Channels in one connected component of the planted graph share an
    oscillatory source (one frequency per component, fresh phase and a small
    frequency jitter per window). Channels of the ictal lobe additionally
    share a spike-wave discharge whose amplitude ramps up across the window.
    A fraction ``artifact_rate`` of interictal windows carries rhythmic
    artifacts: a few channels of ``artifact_lobes`` each get their own
    spike-wave burst at an independent frequency and phase, so they look
    ictal one by one but share no source. Every channel gets independent
    Gaussian noise of ``noise_std``.
    """
    spec.validate()
    montage = spec.montage
    n, T = montage.n_channels, spec.samples_per_window
    rng = np.random.default_rng(spec.seed)
    t = np.arange(T) / spec.sample_rate
    comps = spec.components()
    comp_freq = [spec.source_frequencies[k % len(spec.source_frequencies)] for k in range(len(comps))]
    ramp = np.linspace(0.5, 1.0, T)
    event_freq = [rng.uniform(*spec.seizure_frequency_range) for _ in spec.seizure_schedule]

    windows = []
    for tau in range(spec.n_windows):
        x = np.zeros((n, T))
        for members, f0 in zip(comps, comp_freq):
            phase = rng.uniform(0, 2 * np.pi)
            f = f0 + rng.uniform(-0.5, 0.5)
            x[members] += spec.source_amplitude * np.sin(2 * np.pi * f * t + phase)
        lobe, event = spec.active_event(tau)
        if lobe is not None:
            phase = rng.uniform(0, 2 * np.pi)
            burst = spec.seizure_amplitude * ramp * _spike_wave(t, event_freq[event], phase)
            burst -= burst.mean()
            x[montage.lobe_members(lobe)] += burst
        elif spec.artifact_rate > 0 and rng.uniform() < spec.artifact_rate:
            pool = [k for lb in spec.artifact_lobes for k in montage.lobe_members(lb)]
            lo, hi = spec.artifact_channels
            count = min(len(pool), int(rng.integers(lo, hi + 1)))
            for k in sorted(rng.choice(pool, size=count, replace=False)):
                f = rng.uniform(*spec.artifact_frequency_range)
                burst = spec.artifact_amplitude * ramp * _spike_wave(t, f, rng.uniform(0, 2 * np.pi))
                x[k] += burst - burst.mean()
        if spec.noise_std > 0:
            x += rng.normal(0.0, spec.noise_std, size=(n, T))
        windows.append(EegWindow(x, spec.sample_rate, tau, montage))
    return windows


def slice_windows(recording, sample_rate: float, window_seconds: float, montage: Montage | None = None) -> list[EegWindow]:
    """Cut a [n_channels, n_samples] recording into consecutive non-overlapping
    windows; a trailing partial window is dropped."""
    rec = np.asarray(recording, dtype=float)
    if rec.ndim != 2:
        raise DataError("recording must be a 2-D [channels, samples] array")
    if montage is None:
        montage = standard_montage()
    size = int(round(window_seconds * sample_rate))
    if size < 2:
        raise DataError("window shorter than 2 samples")
    count = rec.shape[1] // size
    if count == 0:
        raise DataError(
            f"recording of {rec.shape[1]} samples is shorter than one window ({size} samples)"
        )
    return [
        EegWindow(rec[:, k * size:(k + 1) * size], sample_rate, k, montage) for k in range(count)
    ]


def read_csv_recording(path) -> tuple[list[str], np.ndarray]:
    """CSV with a header row of channel labels and one row per sample.

    Returns labels and a [n_channels, n_samples] array.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty CSV") from None
        rows = [row for row in reader if row]
    labels = [h.strip() for h in header]
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric sample ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(labels):
        raise DataError(f"{path}: ragged rows or column count != header")
    return labels, data.T


def write_csv_recording(path, labels, data, fmt: str = "%.6f") -> None:
    data = np.asarray(data, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(labels) + "\n")
        np.savetxt(fh, data.T, delimiter=",", fmt=fmt)


def window_to_json(window: EegWindow) -> dict:
    return {
        "sample_rate": window.sample_rate,
        "window_index": window.window_index,
        "labels": window.labels,
        "data": window.data.tolist(),
    }


def window_from_json(d: dict, window_index: int | None = None) -> EegWindow:
    try:
        labels = d["labels"]
        data = d["data"]
        rate = float(d["sample_rate"])
    except KeyError as exc:
        raise DataError(f"window JSON missing field {exc}") from None
    idx = d.get("window_index", 0) if window_index is None else window_index
    try:
        montage = montage_for_labels(labels)
    except KeyError as exc:
        raise DataError(str(exc)) from None
    return EegWindow(np.asarray(data, dtype=float), rate, int(idx), montage)


def write_windows_json(path, windows) -> None:
    with open(path, "w") as fh:
        json.dump([window_to_json(w) for w in windows], fh)


def read_windows_json(path) -> list[EegWindow]:
    with open(path) as fh:
        payload = json.load(fh)
    if isinstance(payload, dict):
        payload = [payload]
    return [window_from_json(d, window_index=k) for k, d in enumerate(payload)]


def load_windows(path, window_seconds: float = 4.0, sample_rate: float | None = None) -> list[EegWindow]:
    """Load EEG from ``.csv`` (needs ``sample_rate``) or ``.json`` windows."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_windows_json(path)
    if path.suffix.lower() == ".csv":
        if sample_rate is None:
            raise DataError("CSV input needs an explicit sample_rate")
        labels, data = read_csv_recording(path)
        try:
            montage = montage_for_labels(labels)
        except KeyError as exc:
            raise DataError(str(exc)) from None
        return slice_windows(data, sample_rate, window_seconds, montage)
    raise DataError(f"unsupported EEG file type: {path.suffix}")
