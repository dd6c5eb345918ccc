"""Default-event (anchor) grid and the offset coding between anchors and events."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, DomainError
from .events import Event

DEFAULT_SIZES_S = (10.0, 20.0, 30.0, 40.0, 60.0, 80.0, 100.0, 130.0, 150.0)


@dataclass(frozen=True)
class GridConfig:
    window_s: float = 180.0
    default_sizes_s: tuple[float, ...] = DEFAULT_SIZES_S
    overlap: float = 0.5

    def __post_init__(self):
        if not self.window_s > 0:
            raise ConfigError(f"window_s must be > 0, got {self.window_s}")
        if not self.default_sizes_s or any(s <= 0 for s in self.default_sizes_s):
            raise ConfigError("default sizes must be positive and non-empty")
        if not 0 < self.overlap < 1:
            raise ConfigError(f"overlap must lie in (0, 1), got {self.overlap}")


@dataclass(frozen=True)
class DefaultEventGrid:
    """Anchors ordered by size ascending, then by center."""

    centers: np.ndarray
    durations: np.ndarray
    counts: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.centers)

    @cached_property
    def starts(self) -> np.ndarray:
        return self.centers - self.durations / 2

    @cached_property
    def stops(self) -> np.ndarray:
        return self.centers + self.durations / 2

    def events(self) -> list[Event]:
        return [Event(float(c), float(d)) for c, d in zip(self.centers, self.durations)]


def anchors_per_size(window_s: float, size_s: float, overlap: float) -> int:
    stride = size_s * (1 - overlap)
    # guard against 180 / 5.000000001 style truncation
    return int(math.floor(window_s / stride + 1e-9))


def build_grid(cfg: GridConfig = GridConfig()) -> DefaultEventGrid:
    """Tile the window: for each size, anchors every ``size * (1 - overlap)`` seconds,
    centered at ``stride * (i + 0.5)``. Large anchors overhang the window edges."""
    centers, durations, counts = [], [], []
    for size in sorted(cfg.default_sizes_s):
        stride = size * (1 - cfg.overlap)
        n = anchors_per_size(cfg.window_s, size, cfg.overlap)
        counts.append(n)
        centers.extend(stride * (i + 0.5) for i in range(n))
        durations.extend([float(size)] * n)
    return DefaultEventGrid(np.array(centers, dtype=np.float64), np.array(durations, dtype=np.float64), tuple(counts))


def encode_offsets(event: Event, anchor: Event) -> tuple[float, float]:
    """(center shift in anchor durations, log duration ratio)."""
    if event.duration_s <= 0 or anchor.duration_s <= 0:
        raise DomainError("durations must be > 0")
    return (event.center_s - anchor.center_s) / anchor.duration_s, math.log(event.duration_s / anchor.duration_s)


def decode_offsets(dc: float, dd: float, anchor: Event) -> Event:
    return Event(anchor.center_s + dc * anchor.duration_s, anchor.duration_s * math.exp(dd))


def encode_array(centers, durations, anchor_centers, anchor_durations) -> np.ndarray:
    """Vectorized :func:`encode_offsets`; returns ``[N, 2]``."""
    centers = np.asarray(centers, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.float64)
    if np.any(durations <= 0) or np.any(np.asarray(anchor_durations) <= 0):
        raise DomainError("durations must be > 0")
    return np.stack(
        [(centers - anchor_centers) / anchor_durations, np.log(durations / anchor_durations)], axis=-1
    )


def decode_array(offsets, anchor_centers, anchor_durations) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`decode_offsets`; returns ``(centers, durations)``."""
    offsets = np.asarray(offsets, dtype=np.float64)
    return anchor_centers + offsets[..., 0] * anchor_durations, anchor_durations * np.exp(offsets[..., 1])
