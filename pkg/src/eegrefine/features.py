"""Per-channel statistical features and textual channel descriptions.

Conventions: population standard deviation; skewness ``m3 / std**3`` and
kurtosis ``m4 / std**4`` (non-excess), both 0 for a constant window;
quantiles by linear interpolation between order statistics; dominant
frequency is the strongest non-DC DFT bin (lowest frequency on ties, 0 when
there is no non-DC power); a zero sample inherits the previous non-zero sign
when counting zero crossings.
"""
from __future__ import annotations

import csv
import re
from dataclasses import astuple, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DataError
from .signals import EegWindow

MICRO = "µ"

FEATURE_NAMES = (
    "mean_amplitude",
    "std",
    "dominant_frequency",
    "min",
    "max",
    "median",
    "q25",
    "q75",
    "skewness",
    "kurtosis",
    "energy",
    "zero_crossing_rate",
)


@dataclass(frozen=True)
class StatFeatures:
    mean_amplitude: float
    std: float
    dominant_frequency: float
    min: float
    max: float
    median: float
    q25: float
    q75: float
    skewness: float
    kurtosis: float
    energy: float
    zero_crossing_rate: int

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "StatFeatures":
        values = list(values)
        values[-1] = int(values[-1])
        return cls(*values)


def zero_crossings(x: np.ndarray) -> int:
    s = np.sign(x)
    nz = s[s != 0]
    return int(np.count_nonzero(nz[1:] != nz[:-1]))


def dominant_frequency(x: np.ndarray, sample_rate: float) -> float:
    power = np.abs(np.fft.rfft(x)) ** 2
    if power.size < 2:
        return 0.0
    k = int(np.argmax(power[1:])) + 1
    if power[k] == 0:
        return 0.0
    return float(k * sample_rate / x.size)


def compute_stat_features(signal, sample_rate: float) -> StatFeatures:
    """The twelve window statistics of one channel."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise DataError("signal must be 1-D")
    if x.size < 2:
        raise DataError("signal needs at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite values")
    if not sample_rate > 0:
        raise DataError("sample_rate must be positive")

    mean = float(np.mean(x))
    centred = x - mean
    var = float(np.mean(centred**2))
    std = float(np.sqrt(var))
    if std > 0:
        # standardise first so tiny amplitudes do not underflow std**3
        z = centred / std
        skew = float(np.mean(z**3))
        kurt = float(np.mean(z**4))
    else:
        skew = kurt = 0.0
    q25, median, q75 = (float(v) for v in np.percentile(x, [25, 50, 75]))
    return StatFeatures(
        mean_amplitude=mean,
        std=std,
        dominant_frequency=dominant_frequency(x, sample_rate),
        min=float(np.min(x)),
        max=float(np.max(x)),
        median=median,
        q25=q25,
        q75=q75,
        skewness=skew,
        kurtosis=kurt,
        energy=float(np.dot(x, x)),
        zero_crossing_rate=zero_crossings(x),
    )


def window_features(window: EegWindow) -> list[StatFeatures]:
    return [compute_stat_features(row, window.sample_rate) for row in window.data]


def _fmt1(v: float) -> str:
    s = f"{v:.1f}"
    return "0.0" if s == "-0.0" else s


def _fmt_shape(v: float) -> str:
    # two decimals, a redundant trailing zero dropped: 0.32, 2.1, -0.15, 0.0
    s = f"{v:.2f}"
    if s.endswith("0"):
        s = s[:-1]
    return "0.0" if s == "-0.0" else s


def render_stat_text(f: StatFeatures) -> str:
    u = f"{MICRO}V"
    return (
        f"Mean amplitude: {_fmt1(f.mean_amplitude)} {u}, "
        f"Std: {_fmt1(f.std)} {u}, "
        f"Dominant frequency: {_fmt1(f.dominant_frequency)} Hz, "
        f"Min: {_fmt1(f.min)} {u}, "
        f"Max: {_fmt1(f.max)} {u}, "
        f"Median: {_fmt1(f.median)} {u}, "
        f"Q25: {_fmt1(f.q25)} {u}, "
        f"Q75: {_fmt1(f.q75)} {u}, "
        f"Skewness: {_fmt_shape(f.skewness)}, "
        f"Kurtosis: {_fmt_shape(f.kurtosis)}, "
        f"Energy: {_fmt1(f.energy)}, "
        f"Zero-crossing rate: {int(f.zero_crossing_rate)}."
    )


_NUM = r"(-?\d+(?:\.\d+)?)"
_STAT_RE = re.compile(
    rf"Mean amplitude: {_NUM} {MICRO}V, Std: {_NUM} {MICRO}V, "
    rf"Dominant frequency: {_NUM} Hz, Min: {_NUM} {MICRO}V, Max: {_NUM} {MICRO}V, "
    rf"Median: {_NUM} {MICRO}V, Q25: {_NUM} {MICRO}V, Q75: {_NUM} {MICRO}V, "
    rf"Skewness: {_NUM}, Kurtosis: {_NUM}, Energy: {_NUM}, Zero-crossing rate: (\d+)\."
)


def parse_stat_text(text: str) -> StatFeatures:
    """Inverse of :func:`render_stat_text` (values come back rounded)."""
    m = _STAT_RE.search(text)
    if m is None:
        raise ValueError("no statistics block found")
    return StatFeatures.from_array([float(g) for g in m.groups()])


def round_features(f: StatFeatures) -> StatFeatures:
    """The values a rendered block carries."""
    return parse_stat_text(render_stat_text(f))


# Describer thresholds (µV of window std, relative slope of |x|).
LOW_AMPLITUDE_STD = 5.0
HIGH_AMPLITUDE_STD = 20.0
SPIKE_FACTOR = 4.0
TREND_DEADBAND = 0.2


@dataclass(frozen=True)
class TextualDescription:
    channel_label: str
    lobe_phrase: str
    amplitude_phrase: str
    waveform_phrase: str
    trend_phrase: str
    rendered: str = ""

    def __post_init__(self):
        if not self.rendered:
            object.__setattr__(self, "rendered", self.template())

    def template(self) -> str:
        return (
            f"Channel {self.channel_label}, located in the {self.lobe_phrase}, shows "
            f"{self.amplitude_phrase} amplitude with {self.waveform_phrase}. "
            f"The EEG signal exhibits {self.trend_phrase} over the observed time window."
        )

    @classmethod
    def from_text(cls, channel_label: str, text: str) -> "TextualDescription":
        """Wrap free text produced by some other describer."""
        return cls(channel_label, "", "", "", "", rendered=text)


def amplitude_phrase(std: float) -> str:
    if std < LOW_AMPLITUDE_STD:
        return "low"
    if std < HIGH_AMPLITUDE_STD:
        return "moderate"
    return "high"


def has_spikes(x: np.ndarray) -> bool:
    std = x.std()
    return bool(std > 0 and np.any(np.abs(x - x.mean()) > SPIKE_FACTOR * std))


def trend_phrase(x: np.ndarray) -> str:
    env = np.abs(x)
    level = env.mean()
    if level == 0:
        return "a stable pattern"
    t = np.linspace(0.0, 1.0, x.size)
    slope = np.polyfit(t, env, 1)[0]
    rel = slope / level
    if rel > TREND_DEADBAND:
        return "an increasing trend in amplitude"
    if rel < -TREND_DEADBAND:
        return "a decreasing trend in amplitude"
    return "a stable pattern"


def describe_signal(label: str, lobe_phrase: str, x) -> TextualDescription:
    x = np.asarray(x, dtype=float)
    return TextualDescription(
        channel_label=label,
        lobe_phrase=lobe_phrase,
        amplitude_phrase=amplitude_phrase(float(x.std())),
        waveform_phrase="intermittent sharp spikes" if has_spikes(x) else "a regular background",
        trend_phrase=trend_phrase(x),
    )


def describe_channel(window: EegWindow, channel: int) -> TextualDescription:
    """Template description of one channel of a window."""
    if not 0 <= channel < window.n_channels:
        raise IndexError(f"channel {channel} out of range for {window.n_channels} channels")
    info = window.montage.channels[channel]
    return describe_signal(info.label, info.lobe.phrase, window.data[channel])


class StatFeatureExtractor(TransformerMixin, BaseEstimator):
    """Maps a [n_signals, n_samples] array to [n_signals, 12] feature rows."""

    def __init__(self, sample_rate=250.0):
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.vstack([compute_stat_features(row, self.sample_rate).as_array() for row in X])

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)


def write_features_csv(path, windows) -> int:
    """One row per (window, channel); columns in the canonical feature order."""
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "channel"] + list(FEATURE_NAMES))
        for win in windows:
            for label, f in zip(win.labels, window_features(win)):
                w.writerow([win.window_index, label] + [repr(v) for v in astuple(f)])
                rows += 1
    return rows

