"""Normalization, downsampling, window sampling and augmentation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ArgumentError, ConfigError, SamplingError
from .events import Annotation, Event
from .io_record import Channel, Record

NORMALIZED_RANGE = (-0.5, 0.5)
_MAX_TRIES = 10_000


@dataclass(frozen=True)
class PreprocessConfig:
    """``clip`` overrides the per-channel nominal ranges read from the record when set."""

    downsample_factor: int = 64
    window_s: float = 180.0
    clip: tuple[tuple[float, float], ...] | None = None
    normalized_range: tuple[float, float] = NORMALIZED_RANGE
    min_event_overlap: float = 0.5

    def __post_init__(self):
        if int(self.downsample_factor) != self.downsample_factor or self.downsample_factor < 1:
            raise ConfigError(f"downsample_factor must be an integer >= 1, got {self.downsample_factor}")
        if not self.window_s > 0:
            raise ConfigError(f"window_s must be > 0, got {self.window_s}")
        if self.clip is not None:
            for lo, hi in self.clip:
                if not lo < hi:
                    raise ConfigError(f"clip range ({lo}, {hi}) is empty")
        if not 0 <= self.min_event_overlap <= 1:
            raise ConfigError("min_event_overlap must lie in [0, 1]")


@dataclass(frozen=True)
class AugmentConfig:
    noise_std: float = 0.05
    p_noise: float = 0.5
    p_invert: float = 0.5
    p_rescale: float = 0.5
    scale_range: tuple[float, float] = (0.8, 1.25)

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(p_noise=0.0, p_invert=0.0, p_rescale=0.0)


@dataclass
class Window:
    samples: np.ndarray  # [C, T']
    start_s: float
    events: list[Event] = field(default_factory=list)
    record_id: str = ""


def normalize(record: Record, cfg: PreprocessConfig = PreprocessConfig()) -> Record:
    """Clamp each channel to its nominal range, then map it affinely onto [-0.5, 0.5]."""
    out_lo, out_hi = cfg.normalized_range
    ranges = cfg.clip or [(c.nominal_min, c.nominal_max) for c in record.channels]
    if len(ranges) != record.n_channels:
        raise ConfigError(f"{len(ranges)} clip ranges for {record.n_channels} channels")
    x = np.asarray(record.samples, dtype=np.float64)
    out = np.empty_like(x)
    for i, (lo, hi) in enumerate(ranges):
        row = np.clip(x[i], lo, hi)
        if (lo, hi) == (out_lo, out_hi):
            out[i] = row
        else:
            out[i] = (row - lo) / (hi - lo) * (out_hi - out_lo) + out_lo
    channels = [Channel(c.name, out_lo, out_hi, c.unit) for c in record.channels]
    return Record(record.record_id, channels, record.sampling_rate_hz, record.hours_of_sleep, out)


def downsample(record: Record, factor: int) -> Record:
    """Mean-pool non-overlapping blocks of ``factor`` samples; trailing remainder is dropped."""
    factor = int(factor)
    if factor < 1:
        raise ArgumentError(f"downsample factor must be >= 1, got {factor}")
    if factor > record.total_samples:
        raise ArgumentError(f"downsample factor {factor} exceeds {record.total_samples} samples")
    if factor == 1:
        return record.replace(np.array(record.samples, copy=True))
    n = record.total_samples // factor
    x = np.asarray(record.samples, dtype=np.float64)[:, : n * factor]
    pooled = x.reshape(record.n_channels, n, factor).mean(axis=-1)
    return record.replace(pooled, record.sampling_rate_hz / factor)


def prepare(record: Record, cfg: PreprocessConfig = PreprocessConfig()) -> Record:
    """Normalize then downsample, the order used for training and inference alike."""
    return downsample(normalize(record, cfg), cfg.downsample_factor)


def window_events(events: Sequence[Event], start_s: float, window_s: float, min_overlap: float = 0.5) -> list[Event]:
    """Events seen in ``[start_s, start_s + window_s]``, in window-local time.

    Events are clipped to the window and dropped when less than
    ``min_overlap`` of their duration remains.
    """
    stop_s = start_s + window_s
    out = []
    for e in events:
        lo = max(e.start_s, start_s)
        hi = min(e.stop_s, stop_s)
        if hi <= lo or (hi - lo) < min_overlap * e.duration_s:
            continue
        if lo == e.start_s and hi == e.stop_s:
            out.append(Event(e.center_s - start_s, e.duration_s, e.label))
        else:
            out.append(Event.from_bounds(lo - start_s, hi - start_s, e.label))
    return out


def window_length(record: Record, window_s: float) -> int:
    return int(round(window_s * record.sampling_rate_hz))


def draw_window(
    record: Record,
    events: Sequence[Event],
    cfg: PreprocessConfig,
    rng: np.random.Generator,
    require_event: bool = False,
) -> Window:
    """One random window; with ``require_event`` rejection-sample until it holds an event."""
    n = window_length(record, cfg.window_s)
    if record.total_samples < n:
        raise ArgumentError(
            f"record {record.record_id!r} ({record.duration_s:.1f} s) shorter than window ({cfg.window_s} s)"
        )
    if require_event and not events:
        raise SamplingError(f"record {record.record_id!r} has no events to sample around")
    fs = record.sampling_rate_hz
    for _ in range(_MAX_TRIES):
        i = int(rng.integers(0, record.total_samples - n + 1))
        start_s = i / fs
        local = window_events(events, start_s, cfg.window_s, cfg.min_event_overlap)
        if local or not require_event:
            return Window(record.samples[:, i : i + n], start_s, local, record.record_id)
    raise SamplingError(f"no event window found in {record.record_id!r} after {_MAX_TRIES} draws")


def sample_windows(
    record: Record,
    annotation: Annotation,
    cfg: PreprocessConfig,
    count: int,
    balance: float,
    rng_seed,
) -> list[Window]:
    """``count`` random windows, the first ``round(count * balance)`` guaranteed to hold an event."""
    if not 0 <= balance <= 1:
        raise ArgumentError(f"balance must lie in [0, 1], got {balance}")
    rng = np.random.default_rng(rng_seed)
    n_event = int(round(count * balance))
    if n_event and not annotation.events:
        raise SamplingError(f"balance {balance} requested but record {record.record_id!r} has no events")
    return [
        draw_window(record, annotation.events, cfg, rng, require_event=k < n_event)
        for k in range(count)
    ]


def augment(window: Window, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> Window:
    """Random noise, sign inversion and rescaling, each drawn independently; re-clamped afterwards."""
    x = np.array(window.samples, dtype=np.float64, copy=True)
    # draw every decision unconditionally so the RNG stream does not depend on the outcomes
    do_noise, do_invert, do_scale = rng.random(3) < (cfg.p_noise, cfg.p_invert, cfg.p_rescale)
    noise = rng.standard_normal(x.shape) * cfg.noise_std
    lo, hi = np.log(cfg.scale_range[0]), np.log(cfg.scale_range[1])
    scale = float(np.exp(rng.uniform(lo, hi)))
    if not (do_noise or do_invert or do_scale):
        return replace(window, samples=x)
    if do_noise:
        x += noise
    if do_invert:
        x = -x
    if do_scale:
        x *= scale
    np.clip(x, *NORMALIZED_RANGE, out=x)
    return replace(window, samples=x)


def invert(window: Window) -> Window:
    return replace(window, samples=-np.asarray(window.samples))
