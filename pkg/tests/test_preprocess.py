import numpy as np
import pytest

from gyrocal.errors import (
    FlatSignalError,
    InsufficientOverlapError,
    OutOfRangeError,
    TooFewSamplesError,
)
from gyrocal.preprocess import (
    AlignedPairs,
    GyroStream,
    SelectionPolicy,
    align,
    center,
    compute_snr,
    estimate_time_offset,
    resample,
    select,
)

RATE = 100.0


def wavy_stream(gyro_id=1, duration=10.0, rate=RATE, t0=0.0, delay=0.0, rng=None):
    """Multi-frequency stream whose norm sequence has structure to correlate."""
    t = t0 + np.arange(0.0, duration, 1.0 / rate)
    ts = t - delay
    w = np.stack([
        1.5 * np.sin(2 * np.pi * 0.4 * ts) + 0.5 * np.sin(2 * np.pi * 1.9 * ts),
        1.1 * np.sin(2 * np.pi * 0.7 * ts + 1.0),
        0.9 * np.sin(2 * np.pi * 1.3 * ts + 2.2),
    ], axis=1)
    if rng is not None:
        w = w + 0.01 * rng.normal(size=w.shape)
    return GyroStream(gyro_id, t, w, rate)


class TestEstimateTimeOffset:
    def test_identical_streams(self):
        a = wavy_stream(1)
        b = wavy_stream(2)
        assert abs(estimate_time_offset(a, b)) <= 0.5 / RATE

    def test_exact_three_sample_delay(self):
        a = wavy_stream(1)
        b = wavy_stream(2, delay=3.0 / RATE)
        assert np.isclose(estimate_time_offset(a, b), 3.0 / RATE, atol=1e-6)

    def test_flat_signal(self):
        t = np.arange(0.0, 10.0, 1.0 / RATE)
        const = np.tile([0.3, 0.1, -0.2], (t.size, 1))
        a = GyroStream(1, t, const, RATE)
        b = GyroStream(2, t, const, RATE)
        with pytest.raises(FlatSignalError):
            estimate_time_offset(a, b)

    def test_insufficient_overlap(self):
        a = wavy_stream(1, duration=10.0)
        b = wavy_stream(2, duration=10.0, t0=9.0)
        with pytest.raises(InsufficientOverlapError):
            estimate_time_offset(a, b)


class TestResample:
    def test_reproduces_knots(self, rng):
        t = np.arange(0.0, 2.0, 1.0 / RATE)
        s = GyroStream(1, t, rng.normal(size=(t.size, 3)), RATE)
        out = resample(s, t)
        assert np.max(np.abs(out.w - s.w)) < 1e-12

    def test_exact_on_cubics(self):
        # splines reproduce cubic polynomials away from the boundary
        t = np.arange(0.0, 4.0, 1.0 / RATE)
        coeffs = np.array([[0.2, -0.5, 0.3, 1.0],
                           [-0.1, 0.4, 0.0, -2.0],
                           [0.05, 0.0, -0.7, 0.5]])
        poly = np.stack([np.polyval(c, t) for c in coeffs], axis=1)
        s = GyroStream(1, t, poly, RATE)
        mid = (t[:-1] + t[1:]) / 2.0
        interior = mid[(mid > 0.5) & (mid < 3.5)]
        expected = np.stack([np.polyval(c, interior) for c in coeffs], axis=1)
        out = resample(s, interior)
        assert np.max(np.abs(out.w - expected)) < 1e-9

    def test_too_few_samples(self):
        s = GyroStream(1, np.array([0.0, 0.01, 0.02]), np.zeros((3, 3)), RATE)
        with pytest.raises(TooFewSamplesError):
            resample(s, np.array([0.005]))

    def test_out_of_range(self):
        t = np.arange(0.0, 1.0, 1.0 / RATE)
        s = GyroStream(1, t, np.zeros((t.size, 3)), RATE)
        with pytest.raises(OutOfRangeError):
            resample(s, np.array([-0.5]))


class TestAlign:
    def test_prealigned_streams(self):
        a = wavy_stream(1)
        b = wavy_stream(2)
        pairs = align(a, b)
        keep = np.isin(a.t, pairs.t)
        assert pairs.n >= a.t.size - 2
        assert np.max(np.abs(pairs.w1 - a.w[keep])) < 1e-12
        assert np.max(np.abs(pairs.w2 - b.w[keep])) < 1e-6

    def test_delayed_stream_recovers_pairing(self):
        a = wavy_stream(1)
        b = wavy_stream(2, delay=3.0 / RATE)
        pairs = align(a, b)
        # C = I here, so matched pairs must agree sample by sample
        assert np.max(np.abs(pairs.w1 - pairs.w2)) < 1e-4

    def test_disjoint_ranges(self):
        a = wavy_stream(1, duration=5.0)
        b = wavy_stream(2, duration=5.0, t0=100.0)
        with pytest.raises(InsufficientOverlapError):
            align(a, b)

    def test_idempotent_offset(self):
        a = wavy_stream(1)
        b = wavy_stream(2, delay=0.0437)
        pairs = align(a, b)
        s1 = GyroStream(1, pairs.t, pairs.w1, RATE)
        s2 = GyroStream(2, pairs.t, pairs.w2, RATE)
        assert abs(estimate_time_offset(s1, s2)) < 0.5 / RATE


class TestSelect:
    def test_unreachable_target_keeps_all(self, rng):
        p = AlignedPairs(t=np.arange(100) / RATE,
                         w1=rng.normal(size=(100, 3)),
                         w2=rng.normal(size=(100, 3)))
        out = select(p, SelectionPolicy(target_snr_per_axis=1e12, sigma=1.0))
        assert out.n == p.n
        assert out.snr_target_met is False

    def test_norm_gate_keeps_single_pair(self):
        w1 = np.zeros((20, 3))
        w1[7] = [10.0, 0.0, 0.0]
        p = AlignedPairs(t=np.arange(20) / RATE, w1=w1, w2=w1.copy())
        out = select(p, SelectionPolicy(min_norm=0.5, target_snr_per_axis=1e12, sigma=1.0))
        assert out.n == 1
        assert np.array_equal(out.w1[0], [10.0, 0.0, 0.0])

    def test_stops_at_cumulative_snr_target(self, rng):
        target = 4.0e3
        sigma = 1.745e-3
        n = 4000
        w1 = rng.normal(0.0, 1.5, size=(n, 3))
        p = AlignedPairs(t=np.arange(n) / RATE, w1=w1, w2=w1.copy())
        out = select(p, SelectionPolicy(target_snr_per_axis=target, sigma=sigma))
        # independent cumulative-sum oracle over the centered proxy
        proxy = w1 - w1.mean(axis=0)
        cum = np.cumsum(proxy**2, axis=0) / sigma**2
        expected = int(np.nonzero(np.all(cum >= target**2, axis=1))[0][0]) + 1
        assert out.n == expected
        assert out.snr_target_met is True
        assert np.all(out.snr_per_axis >= target)

    def test_preserves_order_no_duplicates(self, rng):
        n = 500
        w1 = rng.normal(size=(n, 3))
        p = AlignedPairs(t=np.arange(n) / RATE, w1=w1, w2=w1.copy())
        out = select(p, SelectionPolicy(min_norm=0.8, target_snr_per_axis=1e12, sigma=1.0))
        assert np.all(np.diff(out.t) > 0)
        assert np.unique(out.t).size == out.n


class TestCenter:
    def test_constant_stream(self):
        v = np.array([0.4, -0.2, 0.9])
        p = AlignedPairs(t=np.arange(10) / RATE,
                         w1=np.tile(v, (10, 1)), w2=np.tile(2 * v, (10, 1)))
        out = center(p)
        assert np.allclose(out.w1, 0.0)
        assert np.allclose(out.mean1, v)
        assert np.allclose(out.mean2, 2 * v)

    def test_symmetric_pair(self):
        v = np.array([1.0, -2.0, 3.0])
        p = AlignedPairs(t=np.array([0.0, 0.01]), w1=np.stack([v, -v]),
                         w2=np.stack([-v, v]))
        out = center(p)
        assert np.allclose(out.mean1, 0.0)
        assert np.allclose(out.w1, p.w1)

    def test_columnwise_mean_vanishes(self, rng):
        p = AlignedPairs(t=np.arange(100) / RATE,
                         w1=rng.normal(1.0, 2.0, size=(100, 3)),
                         w2=rng.normal(-0.5, 2.0, size=(100, 3)))
        out = center(p)
        # direct-summation oracle
        assert np.max(np.abs(out.w1.sum(axis=0) / 100)) < 1e-12
        assert np.max(np.abs(out.w2.sum(axis=0) / 100)) < 1e-12

    def test_idempotent(self, rng):
        p = AlignedPairs(t=np.arange(50) / RATE,
                         w1=rng.normal(1.0, 1.0, size=(50, 3)),
                         w2=rng.normal(size=(50, 3)))
        once = center(p)
        twice = center(once)
        assert np.allclose(twice.w1, once.w1)
        assert np.allclose(twice.mean1, 0.0)


class TestComputeSnr:
    def test_all_zero(self):
        p = AlignedPairs(t=np.arange(5) / RATE, w1=np.zeros((5, 3)), w2=np.zeros((5, 3)))
        total, per_axis = compute_snr(p, sigma=0.5)
        assert total == 0.0
        assert np.array_equal(per_axis, np.zeros(3))

    def test_single_pair_unit_case(self):
        sigma = 0.37
        w1 = np.array([[sigma, 0.0, 0.0]])
        p = AlignedPairs(t=np.array([0.0]), w1=w1, w2=w1.copy())
        total, per_axis = compute_snr(p, sigma)
        assert np.isclose(total, 1.0)
        assert np.allclose(per_axis, [1.0, 0.0, 0.0])

    def test_homogeneity(self, rng):
        w1 = rng.normal(size=(200, 3))
        p = AlignedPairs(t=np.arange(200) / RATE, w1=w1, w2=w1.copy())
        p2 = AlignedPairs(t=np.arange(200) / RATE, w1=2 * w1, w2=w1.copy())
        t1, a1 = compute_snr(p, 0.1)
        t2, a2 = compute_snr(p2, 0.1)
        assert np.isclose(t2, 2 * t1)
        assert np.allclose(a2, 2 * a1)
        t3, _ = compute_snr(p, 0.2)
        assert np.isclose(t3, t1 / 2)


class TestStreamValidation:
    def test_rejects_decreasing_timestamps(self):
        with pytest.raises(ValueError):
            GyroStream(1, np.array([0.0, 0.0]), np.zeros((2, 3)), RATE)

    def test_rejects_bad_gyro_id(self):
        with pytest.raises(ValueError):
            GyroStream(3, np.array([0.0]), np.zeros((1, 3)), RATE)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            GyroStream(1, np.array([0.0]), np.array([[np.nan, 0, 0]]), RATE)

    def test_indexing(self):
        s = GyroStream(1, np.array([0.0, 0.5]), np.arange(6.0).reshape(2, 3), 2.0)
        assert len(s) == 2
        assert s[1].t == 0.5
        assert np.array_equal(s[1].w, [3.0, 4.0, 5.0])
