"""Synthetic respiratory recordings with planted apnea-hypopnea events and noisy scorers.

Channels mimic the six respiratory PSG signals: two airflow traces, thoracic
and abdominal belts, a snoring microphone envelope and SpO2. During an event
the breathing channels are attenuated (with short cosine ramps around each
boundary) and SpO2 desaturates after a delay.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .events import Annotation, Event
from .io_record import Channel, Record

CHANNELS = (
    Channel("airflow_pressure", -2.0, 2.0, "a.u."),
    Channel("airflow_nasal", -2.0, 2.0, "a.u."),
    Channel("thorax_belt", -2.0, 2.0, "a.u."),
    Channel("abdomen_belt", -2.0, 2.0, "a.u."),
    Channel("snoring", 0.0, 2.0, "a.u."),
    Channel("spo2", 80.0, 100.0, "%"),
)
# residual amplitude multiplier per channel inside an event (scaled by the event's own depth)
_CHANNEL_DEPTH = np.array([1.0, 1.0, 0.7, 0.7, 1.0])


@dataclass(frozen=True)
class ScorerNoise:
    jitter_std_s: float = 0.0
    miss_prob: float = 0.0
    false_alarm_per_h: float = 0.0
    min_duration_s: float = 3.0

    def __post_init__(self):
        if self.jitter_std_s < 0 or self.false_alarm_per_h < 0:
            raise ConfigError("scorer noise parameters must be >= 0")
        if not 0 <= self.miss_prob <= 1:
            raise ConfigError("miss_prob must lie in [0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    n_records: int = 30
    duration_s: float = 7200.0
    sampling_rate_hz: float = 256.0
    event_rate_per_h: float = 18.5
    event_duration_s: tuple[float, float] = (10.0, 60.0)
    min_gap_s: float = 10.0
    residual_amplitude: tuple[float, float] = (0.05, 0.3)  # airflow amplitude left during events
    ramp_s: float = 2.0
    desat_percent: tuple[float, float] = (3.0, 6.0)
    desat_delay_s: float = 15.0
    noise_std: float = 0.05
    breathing_hz: tuple[float, float] = (0.2, 0.3)
    splits: tuple[int, int, int] = (20, 5, 5)  # train / validation / test, in record order
    n_scorers: int = 5
    scorer_noise: ScorerNoise = field(default_factory=lambda: ScorerNoise(2.0, 0.1, 1.0))

    def __post_init__(self):
        lo, hi = self.event_duration_s
        if not 10 <= lo <= hi <= 150:
            raise ConfigError(f"event durations must lie within [10, 150] s, got {self.event_duration_s}")
        if self.event_rate_per_h < 0 or self.min_gap_s < 0:
            raise ConfigError("event rate and gap must be >= 0")
        if self.duration_s <= 0 or self.sampling_rate_hz <= 0:
            raise ConfigError("duration and sampling rate must be > 0")
        if sum(self.splits) != self.n_records:
            raise ConfigError(f"splits {self.splits} do not add up to {self.n_records} records")
        hours = self.duration_s / 3600
        expected = self.event_rate_per_h * hours * ((lo + hi) / 2 + self.min_gap_s)
        if expected > 0.8 * self.duration_s:
            raise ConfigError(
                f"event rate {self.event_rate_per_h}/h cannot be planted with a {self.min_gap_s} s gap "
                f"in {self.duration_s} s records"
            )


def plant_events(cfg: SynthConfig, rng: np.random.Generator) -> list[Event]:
    """Poisson number of events, uniform durations, non-overlapping with at least ``min_gap_s`` between."""
    n = int(rng.poisson(cfg.event_rate_per_h * cfg.duration_s / 3600))
    durs = rng.uniform(*cfg.event_duration_s, size=n)
    slack = cfg.duration_s - durs.sum() - (n + 1) * cfg.min_gap_s
    if slack < 0:
        raise ConfigError(f"{n} events of total {durs.sum():.0f} s do not fit in {cfg.duration_s} s")
    offsets = np.sort(rng.uniform(0, slack, size=n))
    starts = cfg.min_gap_s + offsets + np.concatenate(([0.0], np.cumsum(durs)[:-1])) + np.arange(n) * cfg.min_gap_s
    return [Event(float(s + d / 2), float(d)) for s, d in zip(starts, durs)]


def _ramp(t: np.ndarray, start: float, stop: float, ramp: float) -> np.ndarray:
    """1 inside [start, stop], 0 outside, raised-cosine transitions of width ``ramp`` centered on each edge."""
    up = np.clip((t - (start - ramp / 2)) / ramp, 0, 1)
    down = np.clip(((stop + ramp / 2) - t) / ramp, 0, 1)
    w = np.minimum(up, down)
    return 0.5 - 0.5 * np.cos(np.pi * w)


def generate_record(cfg: SynthConfig, seed, record_id: str = "rec000") -> tuple[Record, Annotation]:
    """One synthetic record and its ground-truth annotation (scorer ``truth``)."""
    rng = np.random.default_rng(seed)
    events = plant_events(cfg, rng) if cfg.event_rate_per_h > 0 else []
    fs = cfg.sampling_rate_hz
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs

    # breathing phase with slow frequency drift
    f0 = rng.uniform(*cfg.breathing_hz)
    drift = 0.1 * f0 * np.sin(2 * np.pi * t / rng.uniform(200, 600) + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 + drift) / fs + rng.uniform(0, 2 * np.pi)
    base = np.sin(phase) + 0.3 * np.sin(2 * phase + 0.5)
    slow = 1 + 0.15 * np.sin(2 * np.pi * t / rng.uniform(120, 400) + rng.uniform(0, 2 * np.pi))

    # attenuation envelope: 1 outside events, residual amplitude inside
    envelope = np.ones((5, n))
    spo2 = np.full(n, 96.0 + rng.uniform(-1, 1))
    for e in events:
        lo = max(0, int((e.start_s - cfg.ramp_s) * fs))
        hi = min(n, int((e.stop_s + cfg.ramp_s) * fs) + 1)
        seg = _ramp(t[lo:hi], e.start_s, e.stop_s, cfg.ramp_s)
        depth = 1 - rng.uniform(*cfg.residual_amplitude)
        envelope[:, lo:hi] *= 1 - np.outer(_CHANNEL_DEPTH * depth, seg)
        # desaturation: linear fall over the event, shifted by the delay, then ~15 s recovery
        drop = rng.uniform(*cfg.desat_percent)
        d0, d1 = e.start_s + cfg.desat_delay_s, e.stop_s + cfg.desat_delay_s
        lo2, hi2 = max(0, int(d0 * fs)), min(n, int((d1 + 15.0) * fs))
        tt = t[lo2:hi2]
        profile = np.where(tt < d1, (tt - d0) / (d1 - d0), 1 - (tt - d1) / 15.0)
        spo2[lo2:hi2] -= drop * np.clip(profile, 0, 1)

    gains = rng.uniform(0.6, 1.0, size=4)
    lags = rng.uniform(0, 0.6, size=4)
    x = np.empty((6, n))
    for c in range(4):
        x[c] = gains[c] * slow * envelope[c] * (np.sin(phase - lags[c]) + 0.3 * np.sin(2 * phase + 0.5 - lags[c]))
    x[4] = 0.5 * slow * envelope[4] * np.abs(base) * (1 + 0.3 * rng.standard_normal(n))
    x[5] = spo2
    x[:5] += cfg.noise_std * rng.standard_normal((5, n))
    x[5] += 0.2 * rng.standard_normal(n)
    for c, ch in enumerate(CHANNELS):
        np.clip(x[c], ch.nominal_min, ch.nominal_max, out=x[c])
    record = Record(record_id, list(CHANNELS), fs, cfg.duration_s / 3600, x.astype(np.float32))
    return record, Annotation(record_id, "truth", events)


def generate_scorers(truth: Annotation, noise: ScorerNoise, n: int, seed, duration_s: float) -> list[Annotation]:
    """``n`` simulated scorers: boundary jitter, missed events and false alarms on top of ``truth``."""
    rng = np.random.default_rng(seed)
    hours = duration_s / 3600
    out = []
    for k in range(n):
        events = []
        for e in truth.events:
            # draw everything for every event so streams stay aligned across settings
            miss = rng.random() < noise.miss_prob
            j0, j1 = rng.standard_normal(2) * noise.jitter_std_s
            if miss:
                continue
            if noise.jitter_std_s == 0:
                events.append(Event(e.center_s, e.duration_s, e.label))
                continue
            a = max(0.0, e.start_s + j0)
            b = min(duration_s, e.stop_s + j1)
            if b - a < noise.min_duration_s:
                c = min(max((a + b) / 2, noise.min_duration_s / 2), duration_s - noise.min_duration_s / 2)
                a, b = c - noise.min_duration_s / 2, c + noise.min_duration_s / 2
            events.append(Event.from_bounds(a, b))
        for _ in range(int(rng.poisson(noise.false_alarm_per_h * hours))):
            d = rng.uniform(10.0, 40.0)
            c = rng.uniform(d / 2, duration_s - d / 2)
            events.append(Event(c, d))
        out.append(Annotation(truth.record_id, f"scorer{k + 1}", events))
    return out


@dataclass
class SynthRecord:
    record: Record
    truth: Annotation
    scorers: list[Annotation]
    split: str


def generate_dataset(cfg: SynthConfig, seed: int = 0):
    """Yield :class:`SynthRecord` one at a time (records at full rate are large)."""
    n_train, n_val, _ = cfg.splits
    for i in range(cfg.n_records):
        rid = f"rec{i:03d}"
        record, truth = generate_record(cfg, [seed, i, 0], rid)
        scorers = generate_scorers(truth, cfg.scorer_noise, cfg.n_scorers, [seed, i, 1], cfg.duration_s)
        split = "train" if i < n_train else "validation" if i < n_train + n_val else "test"
        yield SynthRecord(record, truth, scorers, split)
