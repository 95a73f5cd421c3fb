"""10-20 electrode montage.

Electrode positions are the usual BESA spherical angles projected on the
unit sphere (x to the right ear, y to the nose, z to the vertex).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Lobe(str, enum.Enum):
    FRONTAL = "Frontal"
    TEMPORAL = "Temporal"
    CENTRAL = "Central"
    PARIETAL = "Parietal"
    OCCIPITAL = "Occipital"

    @property
    def phrase(self) -> str:
        if self is Lobe.CENTRAL:
            return "central region"
        return f"{self.value.lower()} lobe"


# Anatomical neighbours used by the mock judge.
ADJACENT_LOBES = frozenset(
    frozenset(p)
    for p in [
        (Lobe.FRONTAL, Lobe.CENTRAL),
        (Lobe.FRONTAL, Lobe.TEMPORAL),
        (Lobe.CENTRAL, Lobe.PARIETAL),
        (Lobe.CENTRAL, Lobe.TEMPORAL),
        (Lobe.TEMPORAL, Lobe.PARIETAL),
        (Lobe.PARIETAL, Lobe.OCCIPITAL),
    ]
)


def lobes_related(a: Lobe, b: Lobe) -> bool:
    """True when two lobes are identical or anatomically adjacent."""
    return a == b or frozenset((a, b)) in ADJACENT_LOBES


def lobe_of(label: str) -> Lobe:
    """Lobe from the 10-20 label prefix (``Fp``/``F``, ``T``, ``C``, ``P``, ``O``)."""
    if not label:
        raise ValueError("empty channel label")
    prefix = label[0].upper()
    try:
        return {
            "F": Lobe.FRONTAL,
            "T": Lobe.TEMPORAL,
            "C": Lobe.CENTRAL,
            "P": Lobe.PARIETAL,
            "O": Lobe.OCCIPITAL,
        }[prefix]
    except KeyError:
        raise ValueError(f"not a 10-20 label: {label!r}") from None


# (label, theta, phi) in degrees.
_STANDARD_1020 = (
    ("Fp1", -92, -72),
    ("Fp2", 92, 72),
    ("F7", -92, -36),
    ("F3", -60, -51),
    ("Fz", 46, 90),
    ("F4", 60, 51),
    ("F8", 92, 36),
    ("T3", -92, 0),
    ("C3", -46, 0),
    ("Cz", 0, 0),
    ("C4", 46, 0),
    ("T4", 92, 0),
    ("T5", -92, 36),
    ("P3", -60, 51),
    ("Pz", 46, -90),
    ("P4", 60, -51),
    ("T6", 92, -36),
    ("O1", -92, 72),
    ("O2", 92, -72),
)


def _sphere(theta: float, phi: float) -> tuple[float, float, float]:
    t, p = np.deg2rad(theta), np.deg2rad(phi)
    return (float(np.sin(t) * np.cos(p)), float(np.sin(t) * np.sin(p)), float(np.cos(t)))


@dataclass(frozen=True)
class ChannelInfo:
    label: str
    lobe: Lobe
    position: tuple[float, float, float]


@dataclass(frozen=True)
class Montage:
    channels: tuple[ChannelInfo, ...]
    distances: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        labels = [c.label for c in self.channels]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate channel labels in montage")
        d = np.asarray(self.distances, dtype=float)
        n = len(labels)
        if d.shape != (n, n):
            raise ValueError(f"distance matrix shape {d.shape} != ({n}, {n})")
        if not np.allclose(d, d.T) or np.any(np.diag(d) != 0):
            raise ValueError("distance matrix must be symmetric with zero diagonal")
        if n > 1 and np.any(d[~np.eye(n, dtype=bool)] <= 0):
            raise ValueError("coincident electrodes in montage")
        d.setflags(write=False)
        object.__setattr__(self, "distances", d)

    @classmethod
    def from_channels(cls, channels) -> "Montage":
        channels = tuple(channels)
        pos = np.array([c.position for c in channels], dtype=float).reshape(len(channels), 3)
        diff = pos[:, None, :] - pos[None, :, :]
        return cls(channels, np.sqrt((diff**2).sum(-1)))

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.channels]

    @property
    def lobes(self) -> list[Lobe]:
        return [c.lobe for c in self.channels]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def __len__(self):
        return len(self.channels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"channel {label!r} not in montage") from None

    def lobe(self, label: str) -> Lobe:
        return self.channels[self.index(label)].lobe

    def lobe_members(self, lobe: Lobe) -> list[int]:
        return [k for k, c in enumerate(self.channels) if c.lobe == Lobe(lobe)]

    def pairs(self) -> list[tuple[int, int]]:
        n = self.n_channels
        return [(i, j) for i in range(n) for j in range(i + 1, n)]


def standard_montage() -> Montage:
    """The canonical 19-channel 10-20 montage in fixed label order."""
    return Montage.from_channels(
        ChannelInfo(label, lobe_of(label), _sphere(theta, phi))
        for label, theta, phi in _STANDARD_1020
    )


def montage_for_labels(labels) -> Montage:
    """Subset of the standard montage, ordered as ``labels``."""
    std = standard_montage()
    return Montage.from_channels(std.channels[std.index(lab)] for lab in labels)
