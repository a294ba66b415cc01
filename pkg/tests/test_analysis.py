import numpy as np
import pytest

from gyrocal.analysis import (
    McScenario,
    SkewErrorModel,
    compute_residuals,
    covariance_lower_bound,
    detect_flex,
    information_matrix,
    mc_run,
    mitigate_and_recalibrate,
    predict_skew_rotation_error,
)
from gyrocal.direct import calibrate
from gyrocal.errors import CalibrationError, SingularInformationError
from gyrocal.geometry import rotation_error, so3_exp
from gyrocal.preprocess import center
from gyrocal.sim import FlexSpec, SensorModel, SumOfSinusoids, make_scenario

from conftest import random_rotation


def diag_model(C, s1=(1.0, 1.0, 1.0), s2=(1.0, 1.0, 1.0), **kw):
    return SensorModel(C=C, S1=np.diag(s1), S2=np.diag(s2), **kw)


class TestCovarianceLowerBound:
    def test_unit_case(self):
        assert covariance_lower_bound(4.5) == 1.0

    def test_large_snr(self):
        assert np.isclose(covariance_lower_bound(4.5e6), 1e-6)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            covariance_lower_bound(0.0)


class TestInformationMatrix:
    def test_single_z_rate(self):
        H = information_matrix(np.array([[0.0, 0.0, 1.0],
                                         [0.0, 1.0, 0.0]]), sigma=1.0)
        expected = np.array([[2.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        assert np.allclose(H, expected)

    def test_structure_single_sample(self):
        # rotation about one axis alone carries no information about it
        w = np.array([[0.0, 0.0, 1.0]])
        with pytest.raises(SingularInformationError):
            information_matrix(w, sigma=1.0)

    def test_matches_printed_pattern(self, rng):
        w = rng.normal(size=(5, 3))
        H = information_matrix(w, sigma=0.7)
        brute = np.zeros((3, 3))
        for wx, wy, wz in w:
            brute += np.array([
                [wy**2 + wz**2, -wx * wy, -wx * wz],
                [-wx * wy, wx**2 + wz**2, -wy * wz],
                [-wx * wz, -wy * wz, wx**2 + wy**2],
            ])
        assert np.allclose(H, brute / 0.49)

    def test_weak_axis_increases_trace_inverse(self, rng):
        w = rng.normal(size=(500, 3))
        balanced = information_matrix(w, 1.0)
        weak = w.copy()
        weak[:, 0] *= 0.1
        # rescale to equal total energy (equal SNR)
        weak *= np.sqrt(np.sum(w**2) / np.sum(weak**2))
        imbalanced = information_matrix(weak, 1.0)
        assert (np.trace(np.linalg.inv(imbalanced))
                > np.trace(np.linalg.inv(balanced)))


class TestPredictSkewRotationError:
    def test_zero_skew(self, rng):
        model = SkewErrorModel(np.zeros((3, 3)), np.zeros((3, 3)))
        C = random_rotation(rng)
        assert np.allclose(predict_skew_rotation_error(model, C), 0.0)

    def test_single_entry_identity_rotation(self):
        sigma_s = 2.357e-4
        S1t = np.zeros((3, 3))
        S1t[0, 1] = sigma_s
        model = SkewErrorModel(S1t, np.zeros((3, 3)))
        theta = predict_skew_rotation_error(model, np.eye(3))
        assert np.allclose(theta, [0.0, 0.0, -sigma_s / 2.0])

    def test_rejects_lower_triangular(self):
        S = np.zeros((3, 3))
        S[1, 0] = 1e-4
        with pytest.raises(ValueError):
            SkewErrorModel(S, np.zeros((3, 3)))

    def test_high_snr_measured_error_matches(self, rng):
        # single-draw version of the Monte-Carlo agreement claim
        C = random_rotation(rng, min_entry=0.15)
        model = diag_model(C, sigma_n=np.deg2rad(0.002))
        pairs, truth = make_scenario(model, SumOfSinusoids(duration=40.0),
                                     skew_sigma_s=2.357e-4, seed=4)
        res = calibrate(pairs)
        from gyrocal.geometry import so3_log
        measured = so3_log(res.C @ truth.C.T)
        S1t = np.zeros((3, 3))
        S1t[0, 1], S1t[0, 2], S1t[1, 2] = truth.skew1
        S2t = np.zeros((3, 3))
        S2t[0, 1], S2t[0, 2], S2t[1, 2] = truth.skew2
        predicted = predict_skew_rotation_error(SkewErrorModel(S1t, S2t), truth.C)
        assert np.linalg.norm(measured - predicted) < 0.25 * np.linalg.norm(predicted)


class TestComputeResiduals:
    def test_noiseless_exact(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        model = diag_model(C, s1=(1.01, 0.98, 1.03), s2=(0.97, 1.02, 0.99))
        pairs, _ = make_scenario(model, SumOfSinusoids(duration=5.0), seed=0)
        centered = center(pairs)
        res = calibrate(centered)
        r = compute_residuals(centered, res)
        assert np.max(np.linalg.norm(r, axis=1)) < 1e-10

    def test_noise_only_residual_std(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        sigma = np.deg2rad(0.1)
        model = diag_model(C, sigma_n=sigma)
        pairs, _ = make_scenario(model, SumOfSinusoids(duration=60.0), seed=1)
        centered = center(pairs)
        result = calibrate(centered)
        r = compute_residuals(centered, result)
        # two independent noise sources add in quadrature
        measured = r.std(axis=0).mean()
        assert abs(measured / (sigma * np.sqrt(2.0)) - 1.0) < 0.05

    def test_requires_centered(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        pairs, _ = make_scenario(diag_model(C), SumOfSinusoids(duration=2.0), seed=0)
        res = calibrate(pairs)
        with pytest.raises(ValueError):
            compute_residuals(pairs, res)

    def test_flex_correlates_residuals_with_rate(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        model = diag_model(C, sigma_n=np.deg2rad(0.05))
        flex = FlexSpec(segments=[(10.0, 16.0)], peak_rad=np.deg2rad(0.5), seed=2)
        pairs, _ = make_scenario(model, SumOfSinusoids(duration=60.0),
                                 flex=flex, seed=3)
        centered = center(pairs)
        result = calibrate(centered)
        r = compute_residuals(centered, result)
        inside = (pairs.t >= 10.0) & (pairs.t < 16.0)
        rho = np.corrcoef(np.linalg.norm(r[inside], axis=1),
                          np.linalg.norm(centered.w1[inside], axis=1))[0, 1]
        assert rho > 0.5


class TestDetectFlex:
    def test_noise_floor_all_kept(self, rng):
        # tightly clustered norms: nothing is 3 sigma away
        r = rng.normal(size=(200, 3))
        r = r / np.linalg.norm(r, axis=1, keepdims=True)
        r *= rng.uniform(0.9, 1.1, size=(200, 1))
        mask = detect_flex(r, hysteresis_w=2)
        assert np.all(mask.keep)

    def test_single_spike_window(self, rng):
        r = 1e-3 * rng.normal(size=(200, 3))
        r[50] = [0.5, 0.5, 0.5]
        mask = detect_flex(r, hysteresis_w=2)
        removed = np.nonzero(~mask.keep)[0]
        assert np.array_equal(removed, [48, 49, 50, 51, 52])

    def test_flex_spans_removed_rigid_kept(self, rng):
        # rigid noise with two flex spans at 10x amplitude
        n = 5000
        r = rng.normal(0.0, 1e-3, size=(n, 3))
        flex_idx = np.zeros(n, dtype=bool)
        flex_idx[1000:1250] = True
        flex_idx[3000:3250] = True
        sigma_r_true = np.sqrt(3.0) * 1e-3
        r[flex_idx] = 10.0 * sigma_r_true * rng.normal(size=(flex_idx.sum(), 3))
        mask = detect_flex(r, hysteresis_w=5)
        flex_removed = np.mean(~mask.keep[flex_idx])
        rigid_removed = np.mean(~mask.keep[~flex_idx])
        assert flex_removed >= 0.90
        assert rigid_removed <= 0.02

    def test_idempotent_on_rigid(self, rng):
        r = rng.normal(0.0, 1e-3, size=(2000, 3))
        first = detect_flex(r, hysteresis_w=5)
        second = detect_flex(r[first.keep], hysteresis_w=5)
        assert np.mean(~second.keep) < 0.01

    def test_plain_std_mode(self, rng):
        r = rng.normal(0.0, 1e-3, size=(500, 3))
        mask = detect_flex(r, robust=False)
        assert np.isclose(mask.sigma_r, np.sqrt(3.0) * 1e-3, rtol=0.1)

    def test_needs_ten_residuals(self):
        with pytest.raises(ValueError):
            detect_flex(np.zeros((5, 3)))


class TestMitigateAndRecalibrate:
    def test_rigid_data_unchanged(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        model = diag_model(C, sigma_n=np.deg2rad(0.05))
        pairs, truth = make_scenario(model, SumOfSinusoids(duration=30.0), seed=5)
        plain = calibrate(pairs)
        mitigated = mitigate_and_recalibrate(pairs)
        noise_floor = rotation_error(plain.C, truth.C)
        assert mitigated.mitigation_applied
        assert rotation_error(mitigated.C, plain.C) < 2 * noise_floor
        assert mitigated.flex_fraction_removed < 0.01

    def test_flexed_data_improves(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        base = SumOfSinusoids(duration=60.0)
        prof = SumOfSinusoids(duration=60.0, amplitudes=base.amplitudes * 1.5,
                              frequencies=base.frequencies)
        model = diag_model(C, s1=(1.01, 0.98, 1.03), s2=(0.97, 1.02, 0.99),
                           sigma_n=np.deg2rad(0.05), sigma_nu=np.deg2rad(57.3e-6))
        flex = FlexSpec(segments=[(10.0, 13.0), (30.0, 33.0)],
                        peak_rad=np.deg2rad(0.5), seed=6)
        pairs, truth = make_scenario(model, prof, flex=flex, seed=7)
        before = calibrate(pairs)
        after = mitigate_and_recalibrate(pairs)
        assert rotation_error(after.C, truth.C) < rotation_error(before.C, truth.C) / 5
        assert 0.0 < after.flex_fraction_removed < 0.5
        assert after.sigma_r > 0

    def test_fully_flexed_does_not_silently_pass(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        model = diag_model(C, sigma_n=np.deg2rad(0.05))
        flex = FlexSpec(segments=[(0.0, 30.0)], peak_rad=np.deg2rad(2.0), seed=8)
        pairs, truth = make_scenario(model, SumOfSinusoids(duration=30.0),
                                     flex=flex, seed=9)
        try:
            res = mitigate_and_recalibrate(pairs)
        except CalibrationError:
            return
        assert res.mitigation_applied   # survived, but flagged as a second pass


class TestMcRun:
    def _scenario(self, rng, sigma_deg=0.0):
        C = random_rotation(rng, min_entry=0.15)
        model = diag_model(C, s1=(1.01, 0.98, 1.03), s2=(0.97, 1.02, 0.99),
                           sigma_n=np.deg2rad(sigma_deg))
        return McScenario(model=model, profile=SumOfSinusoids(duration=10.0),
                          motion_seed=13)

    def test_zero_noise_rmse(self, rng):
        stats = mc_run(self._scenario(rng), M=5, seed=1)
        assert stats.rmse_rotation < 1e-8
        assert stats.rmse_scale < 1e-8
        assert stats.n_failed == 0

    def test_seed_determinism(self, rng):
        sc = self._scenario(rng, sigma_deg=0.1)
        a = mc_run(sc, M=8, seed=3)
        b = mc_run(sc, M=8, seed=3)
        assert np.array_equal(a.per_run_rotation, b.per_run_rotation)
        assert np.array_equal(a.per_run_scale, b.per_run_scale)

    def test_worker_count_invariance(self, rng):
        sc = self._scenario(rng, sigma_deg=0.1)
        serial = mc_run(sc, M=6, seed=4, workers=1)
        parallel = mc_run(sc, M=6, seed=4, workers=2)
        assert np.array_equal(serial.per_run_rotation, parallel.per_run_rotation)

    def test_rmse_definition(self, rng):
        sc = self._scenario(rng, sigma_deg=0.1)
        stats = mc_run(sc, M=10, seed=5)
        assert np.isclose(stats.rmse_rotation,
                          np.sqrt(np.mean(stats.per_run_rotation**2)))

    def test_skew_prediction_included(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        sc = McScenario(model=diag_model(C, sigma_n=np.deg2rad(0.01)),
                        profile=SumOfSinusoids(duration=10.0),
                        skew_sigma_s=2.357e-4, motion_seed=13)
        stats = mc_run(sc, M=4, seed=6)
        assert stats.per_run_predicted is not None
        assert stats.per_run_predicted.shape == (4, 3)

    def test_serializable(self, rng):
        import json
        stats = mc_run(self._scenario(rng, sigma_deg=0.1), M=3, seed=7)
        text = json.dumps(stats.to_dict())
        assert json.loads(text)["m_runs"] == 3

    def test_monotone_rmse_in_snr(self, rng):
        C = random_rotation(rng, min_entry=0.15)
        base = SumOfSinusoids(duration=10.0)
        rmses = []
        for mult in (0.5, 1.0, 2.0, 4.0):
            prof = SumOfSinusoids(duration=10.0,
                                  amplitudes=base.amplitudes * mult,
                                  frequencies=base.frequencies)
            model = diag_model(C, sigma_n=np.deg2rad(0.1))
            stats = mc_run(McScenario(model=model, profile=prof, motion_seed=2),
                           M=100, seed=8)
            rmses.append(stats.rmse_rotation)
        assert all(b < a for a, b in zip(rmses, rmses[1:]))
