import numpy as np
import pytest
from scipy import stats

from dosed.errors import ConfigError
from dosed.events import Annotation
from dosed.metrics import match_events, prf1
from dosed.synth import (
    CHANNELS, ScorerNoise, SynthConfig, generate_dataset, generate_record, generate_scorers, plant_events,
)

SHORT = SynthConfig(n_records=1, duration_s=1800.0, splits=(1, 0, 0))


def test_zero_rate_is_empty():
    _, truth = generate_record(SynthConfig(n_records=1, splits=(1, 0, 0), event_rate_per_h=0.0, duration_s=600), 0)
    assert truth.events == []


def test_record_is_deterministic():
    a, ta = generate_record(SHORT, 11)
    b, tb = generate_record(SHORT, 11)
    assert a == b and ta == tb
    c, _ = generate_record(SHORT, 12)
    assert a != c


def test_record_layout():
    r, truth = generate_record(SHORT, 0)
    assert r.samples.shape == (6, int(1800 * 256)) and r.samples.dtype == np.float32
    assert [c.name for c in r.channels] == [c.name for c in CHANNELS]
    for i, c in enumerate(CHANNELS):
        assert r.samples[i].min() >= c.nominal_min and r.samples[i].max() <= c.nominal_max
    assert truth.scorer_id == "truth"


def test_events_respect_bounds_and_gap():
    cfg = SynthConfig(n_records=1, splits=(1, 0, 0), duration_s=8 * 3600.0)
    for seed in range(5):
        events = plant_events(cfg, np.random.default_rng(seed))
        for e in events:
            assert 10 <= e.duration_s <= 60
            assert 0 <= e.start_s and e.stop_s <= cfg.duration_s
        for a, b in zip(events, events[1:]):
            assert b.start_s - a.stop_s >= cfg.min_gap_s - 1e-9


def test_planted_count_in_poisson_band():
    cfg = SynthConfig(n_records=1, splits=(1, 0, 0), duration_s=8 * 3600.0)
    lo, hi = stats.poisson.ppf([0.005, 0.995], 148)
    counts = [len(plant_events(cfg, np.random.default_rng(s))) for s in range(20)]
    assert sum(lo <= c <= hi for c in counts) >= 19


def test_events_attenuate_airflow():
    r, truth = generate_record(SHORT, 3)
    fs = r.sampling_rate_hz
    inside = np.zeros(r.total_samples, dtype=bool)
    for e in truth.events:
        inside[int((e.start_s + 2) * fs) : int((e.stop_s - 2) * fs)] = True
    amp_in = np.std(r.samples[0, inside])
    amp_out = np.std(r.samples[0, ~inside])
    assert amp_in < 0.5 * amp_out


def test_overfull_config_rejected():
    with pytest.raises(ConfigError):
        SynthConfig(n_records=1, splits=(1, 0, 0), event_rate_per_h=100.0)
    with pytest.raises(ConfigError):
        SynthConfig(n_records=3, splits=(1, 1, 0))
    with pytest.raises(ConfigError):
        SynthConfig(event_duration_s=(5.0, 20.0))


def test_scorer_noise_extremes():
    _, truth = generate_record(SHORT, 0)
    same = generate_scorers(truth, ScorerNoise(), 3, 0, SHORT.duration_s)
    assert [s.events for s in same] == [truth.events] * 3
    assert [s.scorer_id for s in same] == ["scorer1", "scorer2", "scorer3"]
    gone = generate_scorers(truth, ScorerNoise(miss_prob=1.0), 2, 0, SHORT.duration_s)
    assert all(s.events == [] for s in gone)


def test_jittered_scorers_stay_close():
    cfg = SynthConfig(n_records=1, splits=(1, 0, 0), duration_s=4 * 3600.0)
    _, truth = generate_record(cfg, 0)
    for s in generate_scorers(truth, ScorerNoise(jitter_std_s=2.0), 5, 1, cfg.duration_s):
        assert prf1(match_events(s, Annotation(truth.record_id, "t", truth.events), 0.3))[2] > 0.9


def test_dataset_splits_and_seeds():
    cfg = SynthConfig(n_records=3, duration_s=600.0, splits=(1, 1, 1), n_scorers=2)
    a = list(generate_dataset(cfg, 4))
    b = list(generate_dataset(cfg, 4))
    assert [s.split for s in a] == ["train", "validation", "test"]
    assert [s.record.record_id for s in a] == ["rec000", "rec001", "rec002"]
    assert all(x.record == y.record and x.scorers == y.scorers for x, y in zip(a, b))
