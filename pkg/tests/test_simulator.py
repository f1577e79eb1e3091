import math

import numpy as np
import pytest

from oamqrng import simulator as sim
from oamqrng.crosstalk import OutcomeDistribution

BALANCED = OutcomeDistribution((-6, -5, -4, -3), np.full(4, 0.25))
PT = sim.PulseTrainConfig(12.5e6, 2e-9, 100_000)
FC = sim.FiberConfig(800.0, 10e-9)


def test_arrival_time_examples():
    assert sim.arrival_time(0, 0, PT, FC) == 0
    assert sim.arrival_time(0, 1, PT, FC) == 10_000
    assert sim.arrival_time(3, 2, PT, FC) == 3 * 80_000 + 20_000


def test_arrival_time_vectorized_and_base_delay():
    fc = sim.FiberConfig(800.0, 10e-9, base_delay=4e-6)
    t = sim.arrival_time(np.array([0, 1]), np.array([0, 3]), PT, fc)
    np.testing.assert_array_equal(t, [4_000_000, 4_000_000 + 80_000 + 30_000])


def test_config_invariants():
    with pytest.raises(ValueError):
        sim.PulseTrainConfig(12.5e6, 80e-9, 10)
    with pytest.raises(ValueError):
        sim.PulseTrainConfig(0, 1e-9, 10)
    with pytest.raises(ValueError):
        sim.PulseTrainConfig(12.5e6, 2e-9, 0)
    with pytest.raises(ValueError):
        sim.DetectorConfig(dark_rate=-1)
    with pytest.raises(ValueError):
        sim.DetectorConfig(timestamp_resolution=0)
    with pytest.raises(ValueError):
        sim.FiberConfig(800, 30e-9).check(PT, 4)
    sim.FiberConfig(800, 26e-9).check(PT, 4)


def test_same_seed_same_stream():
    det = sim.DetectorConfig()
    a = sim.simulate_events(BALANCED, PT, FC, det, 11)
    b = sim.simulate_events(BALANCED, PT, FC, det, 11)
    c = sim.simulate_events(BALANCED, PT, FC, det, 12)
    assert a.events.tobytes() == b.events.tobytes()
    assert a.ground_truth.tobytes() == b.ground_truth.tobytes()
    assert a.events.tobytes() != c.events.tobytes()
    assert a.metadata["rng_algorithm"] == "numpy.PCG64"


def test_stream_sorted_nonnegative_quantized():
    det = sim.DetectorConfig(jitter_sigma=200e-12, timestamp_resolution=5e-12, dark_rate=1e4)
    res = sim.simulate_events(BALANCED, PT, FC, det, 3)
    ev = res.events
    assert ev.dtype == np.uint64
    assert np.all(ev[1:] >= ev[:-1])
    assert np.all(ev % 5 == 0)
    n_signal = int(np.count_nonzero(res.ground_truth != sim.NO_DETECTION))
    assert len(ev) == n_signal + res.n_dark
    assert n_signal <= PT.n_pulses


def test_noise_free_events_are_arrival_times():
    det = sim.DetectorConfig(eta_det=0.83, dark_rate=0, jitter_sigma=0)
    res = sim.simulate_events(BALANCED, PT, FC, det, 5)
    pulses = np.flatnonzero(res.ground_truth != sim.NO_DETECTION)
    want = sim.arrival_time(pulses, res.ground_truth[pulses], PT, FC)
    np.testing.assert_array_equal(res.events, np.sort(want))


def test_dark_counts_poisson_over_one_second():
    pt = sim.PulseTrainConfig(12.5e6, 2e-9, 12_500_000)
    det = sim.DetectorConfig(eta_det=0.0, dark_rate=50.0)
    counts = [len(sim.simulate_events(BALANCED, pt, FC, det, s).events) for s in range(100)]
    mean = np.mean(counts)
    assert abs(mean - 50.0) < 3 * math.sqrt(50.0 / 100)


def test_per_mode_detection_binomial():
    n = 1_000_000
    pt = sim.PulseTrainConfig(12.5e6, 2e-9, n)
    det = sim.DetectorConfig(eta_det=0.83, dark_rate=0)
    res = sim.simulate_events(BALANCED, pt, FC, det, 2022)
    counts = np.bincount(res.ground_truth[res.ground_truth != sim.NO_DETECTION], minlength=4)
    p = 0.2075
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 5 * sigma)


def test_invalid_distribution_rejected():
    with pytest.raises(ValueError):
        sim.simulate_events([0.5, 0.6], PT, FC, sim.DetectorConfig(), 0)


def test_event_log_round_trip(tmp_path):
    res = sim.simulate_events(BALANCED, PT, FC, sim.DetectorConfig(), 9)
    path = tmp_path / "ev.oamq"
    sim.write_event_log(path, res.events, 1)
    ev, res_ps = sim.read_event_log(path)
    assert res_ps == 1
    np.testing.assert_array_equal(ev, res.events)
    raw = path.read_bytes()
    assert raw[:4] == b"OAMQ"
    assert len(raw) == 18 + 8 * len(res.events)


def test_event_log_rejects_corruption(tmp_path):
    path = tmp_path / "ev.oamq"
    sim.write_event_log(path, np.arange(10, dtype=np.uint64))
    data = path.read_bytes()
    (tmp_path / "bad_magic").write_bytes(b"XXXX" + data[4:])
    (tmp_path / "short").write_bytes(data[:-8])
    for name in ("bad_magic", "short"):
        with pytest.raises(ValueError):
            sim.read_event_log(tmp_path / name)


def test_ground_truth_round_trip(tmp_path):
    res = sim.simulate_events(BALANCED, PT, FC, sim.DetectorConfig(), 9)
    sim.write_ground_truth(tmp_path / "t.bin", res.ground_truth)
    np.testing.assert_array_equal(sim.read_ground_truth(tmp_path / "t.bin"), res.ground_truth)
    assert set(np.unique(res.ground_truth)) <= {0, 1, 2, 3, 0xFF}
