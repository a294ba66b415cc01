"""Synthetic ground truth: motion generation and the full corruption model.

A scenario is built in four stages: true gyro-1 rates from a motion
profile, true gyro-2 rates through the (possibly flexing) mount rotation,
then per-gyro corruption with intrinsics, random-walk bias, and white
noise. All randomness flows through numpy Generators seeded from the
caller, so identical seeds reproduce scenarios bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from .geometry import ensure_rotation, so3_exp
from .preprocess import AlignedPairs, GyroStream


@dataclass(frozen=True)
class SensorModel:
    """Ground-truth intrinsics, extrinsics and noise levels.

    S1/S2 are upper triangular: diagonals are the scale factors, strict
    upper entries the skewness. sigma_n is the white-noise std per gyro
    and sigma_nu the bias random-walk increment std per sample, both in
    rad/s.
    """

    C: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    b1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_n: float = 0.0
    sigma_nu: float = 0.0
    rate_hz: float = 100.0

    def __post_init__(self):
        ensure_rotation(self.C)
        for S in (self.S1, self.S2):
            S = np.asarray(S, float)
            if np.any(np.diag(S) <= 0):
                raise ValueError("scale factors (diagonal of S) must be positive")
            if np.any(np.abs(np.tril(S, -1)) > 0):
                raise ValueError("intrinsic matrices must be upper triangular")
        if self.sigma_n < 0 or self.sigma_nu < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def sigma_combined(self) -> float:
        """Std of the differenced noise n1 - A n2 (A close to orthonormal)."""
        return float(np.sqrt(2.0) * self.sigma_n)


@dataclass(frozen=True)
class SumOfSinusoids:
    """Per-axis sinusoid mixtures; phases drawn from the seed when None."""

    duration: float = 60.0
    amplitudes: np.ndarray = field(default_factory=lambda: _DEFAULT_AMPLITUDES.copy())
    frequencies: np.ndarray = field(default_factory=lambda: _DEFAULT_FREQUENCIES.copy())
    phases: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        a = np.atleast_2d(np.asarray(self.amplitudes, float))
        f = np.atleast_2d(np.asarray(self.frequencies, float))
        if a.shape != f.shape or a.shape[0] != 3:
            raise ValueError("amplitudes and frequencies must both be (3, m)")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "frequencies", f)


# rate envelope of a few rad/s; incommensurate frequencies excite all axes
_DEFAULT_AMPLITUDES = np.array([
    [1.3, 0.7, 0.4],
    [1.1, 0.8, 0.5],
    [1.2, 0.9, 0.3],
])
_DEFAULT_FREQUENCIES = np.array([
    [0.31, 1.07, 2.23],
    [0.41, 1.31, 2.39],
    [0.53, 1.51, 1.97],
])


@dataclass(frozen=True)
class CsvImport:
    """True gyro-1 rates from a CSV file in the CLI format."""

    path: str
    duration: Optional[float] = None    # clip when set


@dataclass(frozen=True)
class AxisImbalanced:
    """Base profile with one axis weakened, optionally at constant SNR.

    With `preserve_total_snr`, the other two axes are amplified by a
    common factor so the total signal energy matches the base profile.
    """

    base: "MotionProfile"
    weak_axis: int = 0
    weak_gain: float = 0.1
    preserve_total_snr: bool = True


MotionProfile = Union[SumOfSinusoids, CsvImport, AxisImbalanced]


@dataclass(frozen=True)
class FlexSpec:
    """Transient rigidity violations: the mount rotation wobbles in-segment.

    Inside each (start, end) time segment the extrinsic rotation is
    perturbed by a rotation vector along a fixed per-segment direction
    with magnitude proportional to the rate norm, peaking at `peak_rad`.
    """

    segments: List[Tuple[float, float]]
    peak_rad: float = np.deg2rad(0.5)
    seed: int = 0

    def __post_init__(self):
        segs = sorted(tuple(map(float, s)) for s in self.segments)
        for (a, b) in segs:
            if not b > a:
                raise ValueError("flex segments need start < end")
        for (_, b), (a2, _) in zip(segs, segs[1:]):
            if a2 < b:
                raise ValueError("flex segments must not overlap")
        object.__setattr__(self, "segments", segs)


def generate_motion(profile: MotionProfile, seed: int = 0, rate_hz: float = 100.0) -> GyroStream:
    """True gyro-1 rate stream for a motion profile, deterministic per seed."""
    if isinstance(profile, AxisImbalanced):
        base = generate_motion(profile.base, seed, rate_hz)
        gains = np.ones(3)
        gains[profile.weak_axis] = profile.weak_gain
        if profile.preserve_total_snr:
            energy = np.sum(base.w**2, axis=0)
            weak = profile.weak_axis
            others = [i for i in range(3) if i != weak]
            need = energy.sum() - profile.weak_gain**2 * energy[weak]
            gains[others] = np.sqrt(need / energy[others].sum())
        return GyroStream(1, base.t, base.w * gains, rate_hz)

    if isinstance(profile, CsvImport):
        from .fileio import read_gyro_csv
        stream = read_gyro_csv(profile.path, gyro_id=1, nominal_rate=rate_hz)
        if profile.duration is not None:
            keep = stream.t <= stream.t[0] + profile.duration
            stream = GyroStream(1, stream.t[keep], stream.w[keep], rate_hz)
        return stream

    t = np.arange(0.0, profile.duration, 1.0 / rate_hz)
    phases = profile.phases
    if phases is None:
        phases = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi,
                                                     profile.amplitudes.shape)
    w = np.zeros((t.size, 3))
    for axis in range(3):
        for amp, freq, ph in zip(profile.amplitudes[axis],
                                 profile.frequencies[axis], phases[axis]):
            w[:, axis] += amp * np.sin(2.0 * np.pi * freq * t + ph)
    return GyroStream(1, t, w, rate_hz)


def derive_second_gyro(w1: GyroStream, C: np.ndarray,
                       flex: Optional[FlexSpec] = None) -> GyroStream:
    """True gyro-2 rates: the gyro-1 rates seen through the mount rotation.

    Outside flex segments this is a fixed change of frame; inside, the
    per-sample perturbed rotation applies.
    """
    C = ensure_rotation(C)
    w2 = w1.w @ C            # rows: C^T w1(k)
    if flex is not None and flex.segments:
        rng = np.random.default_rng(flex.seed)
        max_norm = max(float(np.max(np.linalg.norm(w1.w, axis=1))), 1e-12)
        for (start, end) in flex.segments:
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            inside = np.nonzero((w1.t >= start) & (w1.t < end))[0]
            for k in inside:
                mag = flex.peak_rad * np.linalg.norm(w1.w[k]) / max_norm
                Ck = C @ so3_exp(mag * u)
                w2[k] = Ck.T @ w1.w[k]
    return GyroStream(2, w1.t, w2, w1.nominal_rate)


def corrupt(w: GyroStream, S: np.ndarray, b0: np.ndarray,
            sigma_n: float, sigma_nu: float, seed: int = 0) -> GyroStream:
    """Measured stream: intrinsics, random-walk bias, white noise.

    The bias walks from b0 with per-sample normal increments of std
    sigma_nu; white noise of std sigma_n adds on top. Draw order (walk
    first, then noise) is part of the determinism contract.
    """
    rng = np.random.default_rng(seed)
    n = len(w)
    bias = np.asarray(b0, float) + np.cumsum(
        rng.normal(0.0, sigma_nu, size=(n, 3)), axis=0)
    noise = rng.normal(0.0, sigma_n, size=(n, 3))
    return GyroStream(w.gyro_id, w.t, w.w @ np.asarray(S, float).T + bias + noise,
                      w.nominal_rate)


@dataclass(frozen=True)
class ScenarioTruth:
    """Everything needed to score a calibration of the scenario."""

    C: np.ndarray
    s1: np.ndarray            # diagonal of S1
    s2: np.ndarray
    skew1: np.ndarray         # upper entries (xy, xz, yz)
    skew2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    sigma_n: float
    sigma_nu: float
    rate_hz: float


def _upper_entries(S: np.ndarray) -> np.ndarray:
    return np.array([S[0, 1], S[0, 2], S[1, 2]])


def make_scenario(
    model: SensorModel,
    profile: MotionProfile,
    flex: Optional[FlexSpec] = None,
    skew_sigma_s: Optional[float] = None,
    seed: int = 0,
    motion_seed: Optional[int] = None,
) -> Tuple[AlignedPairs, ScenarioTruth]:
    """Full forward model producing co-sampled measured pairs plus truth.

    `seed` drives the corruption draws (and the skew draw when
    `skew_sigma_s` is set); `motion_seed` (default: `seed`) drives the
    motion phases so Monte-Carlo batches can redraw noise over a fixed
    trajectory.
    """
    if motion_seed is None:
        motion_seed = seed
    children = np.random.SeedSequence(seed).spawn(3)

    S1 = np.asarray(model.S1, float).copy()
    S2 = np.asarray(model.S2, float).copy()
    if skew_sigma_s is not None:
        rng = np.random.default_rng(children[0])
        rows, cols = np.triu_indices(3, k=1)
        S1[rows, cols] = rng.normal(0.0, skew_sigma_s, size=3)
        S2[rows, cols] = rng.normal(0.0, skew_sigma_s, size=3)

    w1_true = generate_motion(profile, seed=motion_seed, rate_hz=model.rate_hz)
    w2_true = derive_second_gyro(w1_true, model.C, flex)
    m1 = corrupt(w1_true, S1, model.b1, model.sigma_n, model.sigma_nu,
                 seed=children[1])
    m2 = corrupt(w2_true, S2, model.b2, model.sigma_n, model.sigma_nu,
                 seed=children[2])

    pairs = AlignedPairs(t=w1_true.t, w1=m1.w, w2=m2.w)
    truth = ScenarioTruth(
        C=model.C, s1=np.diag(S1).copy(), s2=np.diag(S2).copy(),
        skew1=_upper_entries(S1), skew2=_upper_entries(S2),
        b1=np.asarray(model.b1, float), b2=np.asarray(model.b2, float),
        sigma_n=model.sigma_n, sigma_nu=model.sigma_nu, rate_hz=model.rate_hz,
    )
    return pairs, truth


def true_snr(profile: MotionProfile, model: SensorModel, motion_seed: int = 0) -> float:
    """Noise-normalized signal norm of the true gyro-1 rates."""
    if model.sigma_n == 0.0:
        return np.inf
    w = generate_motion(profile, seed=motion_seed, rate_hz=model.rate_hz).w
    return float(np.sqrt(np.sum(w**2) / model.sigma_combined**2))
