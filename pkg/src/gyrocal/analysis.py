"""Error bounds, skewness-error prediction, flex handling, Monte Carlo.

Everything here consumes results of the solvers plus scenario ground
truth; nothing feeds back into the estimation itself except the flex
mask used by :func:`mitigate_and_recalibrate`.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .direct import CalibrateOptions, CalibrationResult, calibrate
from .errors import CalibrationError, SingularInformationError
from .geometry import ensure_rotation, rotation_error, scale_error, so3_log
from .preprocess import AlignedPairs, center
from .sim import (
    FlexSpec,
    MotionProfile,
    ScenarioTruth,
    SensorModel,
    make_scenario,
    true_snr,
)


def covariance_lower_bound(snr_sq_mean: float) -> float:
    """Lower bound on the trace of the rotation error covariance.

    Valid under zero bias, perfect intrinsics, and zero-mean rates
    independent across axes; equals 4.5 / E{SNR^2}.
    """
    if not snr_sq_mean > 0:
        raise ValueError("snr_sq_mean must be positive")
    return 4.5 / snr_sq_mean


def information_matrix(w: np.ndarray, sigma: float) -> np.ndarray:
    """Rotation-only information matrix of a rate sequence.

    H = (1/sigma^2) * sum_k skew(w_k)^T skew(w_k), i.e. the energy
    orthogonal to each instantaneous rotation axis.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    w = np.atleast_2d(np.asarray(w, float))
    G = w.T @ w
    H = (np.trace(G) * np.eye(3) - G) / sigma**2
    eigs = np.linalg.eigvalsh(H)
    if eigs[0] < 1e-12 * max(eigs[-1], 1e-300):
        raise SingularInformationError(
            "rates span fewer than 3 d.o.f.; rotation information is singular")
    return H


@dataclass(frozen=True)
class SkewErrorModel:
    """Uncompensated skewness (strict upper-triangular intrinsic errors)."""

    S1_tilde: np.ndarray
    S2_tilde: np.ndarray

    def __post_init__(self):
        for S in (self.S1_tilde, self.S2_tilde):
            S = np.asarray(S, float)
            if np.any(np.abs(np.tril(S)) > 0):
                raise ValueError("skew errors live strictly above the diagonal")


def _skew_generator(S_tilde: np.ndarray) -> np.ndarray:
    S = np.asarray(S_tilde, float)
    return np.array([-S[1, 2], S[0, 2], -S[0, 1]])


def predict_skew_rotation_error(model: SkewErrorModel, C: np.ndarray) -> np.ndarray:
    """First-order rotation error induced by uncompensated skewness.

    theta = 0.5 * (w1 - C @ w2) where w_i collects the skew entries of
    gyro i as the generating vector of its antisymmetric part; the
    least-squares noise term is dropped (it vanishes with growing data).
    """
    C = ensure_rotation(C)
    w1 = _skew_generator(model.S1_tilde)
    w2 = _skew_generator(model.S2_tilde)
    return 0.5 * (w1 - C @ w2)


def compute_residuals(p: AlignedPairs, result: CalibrationResult) -> np.ndarray:
    """Per-pair residuals of centered measurements under the fitted model."""
    if not p.is_centered:
        raise ValueError("residuals are defined on centered pairs")
    A_hat = np.diag(result.s1) @ result.C @ np.diag(1.0 / result.s2)
    return p.w1 - p.w2 @ A_hat.T


@dataclass(frozen=True)
class FlexMask:
    keep: np.ndarray          # bool (n,)
    sigma_r: float            # rad/s
    hysteresis: int


def detect_flex(residuals: np.ndarray, hysteresis_w: int = 5,
                robust: bool = True) -> FlexMask:
    """3-sigma outlier mask on residual norms with hysteresis expansion.

    sigma_r is the standard deviation of the residual vectors (the root
    total spread across all three components), by default estimated
    robustly from the per-component MAD so that flex spikes cannot
    inflate it and mask themselves; `robust=False` uses the plain std.
    Norms above 3 sigma_r are rejected along with `hysteresis_w` samples
    on each side to cover flex onset and settling.
    """
    r = np.atleast_2d(np.asarray(residuals, float))
    if r.shape[0] < 10:
        raise ValueError("need at least 10 residuals to estimate sigma_r")
    norms = np.linalg.norm(r, axis=1)
    if robust:
        centered = r - np.median(r, axis=0)
        sigma_axis = 1.4826 * float(np.median(np.abs(centered)))
        sigma_r = np.sqrt(3.0) * sigma_axis
    else:
        sigma_r = float(np.sqrt(np.mean(np.sum((r - r.mean(axis=0))**2, axis=1))))
    reject = norms > 3.0 * sigma_r
    if hysteresis_w > 0 and np.any(reject):
        kernel = np.ones(2 * hysteresis_w + 1)
        reject = np.convolve(reject.astype(float), kernel, mode="same") > 0
    return FlexMask(keep=~reject, sigma_r=sigma_r, hysteresis=hysteresis_w)


def mitigate_and_recalibrate(
    p: AlignedPairs,
    options: Optional[CalibrateOptions] = None,
    hysteresis_w: int = 5,
    robust: bool = True,
) -> CalibrationResult:
    """Two-pass calibration with flex rejection in between.

    Pass one fits all pairs; residual outliers (and their hysteresis
    neighborhoods) are dropped; the kept subset is re-centered and fit
    again. The result carries the removed fraction and sigma_r.
    """
    first = calibrate(p, options)
    residuals = compute_residuals(center(p) if not p.is_centered else p, first)
    mask = detect_flex(residuals, hysteresis_w=hysteresis_w, robust=robust)
    keep = mask.keep
    kept = AlignedPairs(t=p.t[keep], w1=p.w1[keep], w2=p.w2[keep])
    second = calibrate(kept, options)
    return replace(
        second,
        mitigation_applied=True,
        flex_fraction_removed=float(1.0 - keep.mean()),
        sigma_r=mask.sigma_r,
    )


@dataclass(frozen=True)
class McScenario:
    """One repeatable scenario for Monte-Carlo batches.

    The motion (and hence SNR) is pinned by `motion_seed`; each run
    redraws corruption (noise, bias walk, and skew when `skew_sigma_s`
    is set) from the batch seed and the run index.
    """

    model: SensorModel
    profile: MotionProfile
    flex: Optional[FlexSpec] = None
    skew_sigma_s: Optional[float] = None
    motion_seed: int = 0
    options: CalibrateOptions = field(default_factory=CalibrateOptions)
    mitigate: bool = False


@dataclass(frozen=True)
class McStats:
    """Per-run errors and their RMS over a Monte-Carlo batch."""

    rmse_rotation: float            # rad
    rmse_scale: float               # fraction
    per_run_rotation: np.ndarray
    per_run_scale: np.ndarray
    snr: float
    m_runs: int
    n_failed: int
    failed_runs: List[int]
    per_run_predicted: Optional[np.ndarray] = None   # (m, 3) skew predictions

    def to_dict(self) -> dict:
        d = {
            "rmse_rotation_rad": self.rmse_rotation,
            "rmse_scale": self.rmse_scale,
            "per_run_rotation_rad": self.per_run_rotation.tolist(),
            "per_run_scale": self.per_run_scale.tolist(),
            "snr": self.snr,
            "m_runs": self.m_runs,
            "n_failed": self.n_failed,
            "failed_runs": list(self.failed_runs),
        }
        if self.per_run_predicted is not None:
            d["per_run_predicted_rad"] = self.per_run_predicted.tolist()
        return d


def _run_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _mc_single(args) -> Tuple[int, Optional[Tuple[float, float, Optional[np.ndarray]]]]:
    scenario, seed, index = args
    pairs, truth = make_scenario(
        scenario.model, scenario.profile, scenario.flex,
        scenario.skew_sigma_s, seed=_run_seed(seed, index),
        motion_seed=scenario.motion_seed,
    )
    try:
        if scenario.mitigate:
            result = mitigate_and_recalibrate(pairs, scenario.options)
        else:
            result = calibrate(pairs, scenario.options)
        e_rot = rotation_error(result.C, truth.C)
        e_scale = scale_error(result.s1, result.s2, truth.s1, truth.s2)
    except CalibrationError:
        return index, None
    predicted = None
    if scenario.skew_sigma_s is not None:
        S1t = np.zeros((3, 3))
        S1t[0, 1], S1t[0, 2], S1t[1, 2] = truth.skew1
        S2t = np.zeros((3, 3))
        S2t[0, 1], S2t[0, 2], S2t[1, 2] = truth.skew2
        predicted = predict_skew_rotation_error(
            SkewErrorModel(S1t, S2t), truth.C)
    return index, (e_rot, e_scale, predicted)


def mc_run(scenario: McScenario, M: int, seed: int = 0, workers: int = 1) -> McStats:
    """M independent corruption draws and calibrations of one scenario.

    Results are identical for any worker count: each run's generator
    state derives only from (seed, run index). Runs that raise a
    calibration error are excluded from the RMS and reported by index.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    tasks = [(scenario, seed, i) for i in range(M)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_mc_single, tasks, chunksize=max(1, M // (4 * workers))))
    else:
        outcomes = [_mc_single(t) for t in tasks]

    rot, scl, preds, failed = [], [], [], []
    for index, payload in sorted(outcomes):
        if payload is None:
            failed.append(index)
            continue
        e_rot, e_scale, predicted = payload
        rot.append(e_rot)
        scl.append(e_scale)
        if predicted is not None:
            preds.append(predicted)

    rot = np.asarray(rot)
    scl = np.asarray(scl)
    return McStats(
        rmse_rotation=float(np.sqrt(np.mean(rot**2))) if rot.size else np.nan,
        rmse_scale=float(np.sqrt(np.mean(scl**2))) if scl.size else np.nan,
        per_run_rotation=rot,
        per_run_scale=scl,
        snr=true_snr(scenario.profile, scenario.model, scenario.motion_seed),
        m_runs=M,
        n_failed=len(failed),
        failed_runs=failed,
        per_run_predicted=np.asarray(preds) if preds else None,
    )
