"""Stream alignment, resampling, sample selection and mean-centering.

Turns two raw gyroscope streams into time-synchronized, co-sampled pairs
ready for the least-squares solve. Angular rates are (n, 3) arrays in
rad/s; timestamps are seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    FlatSignalError,
    InsufficientOverlapError,
    OutOfRangeError,
    TooFewSamplesError,
)


class GyroSample(NamedTuple):
    t: float
    w: np.ndarray


@dataclass(frozen=True)
class GyroStream:
    """Timestamped angular-velocity measurements of one gyroscope."""

    gyro_id: int
    t: np.ndarray           # (n,) seconds, strictly increasing
    w: np.ndarray           # (n, 3) rad/s
    nominal_rate: float     # Hz

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if self.gyro_id not in (1, 2):
            raise ValueError("gyro_id must be 1 or 2")
        if t.ndim != 1 or w.shape != (t.size, 3):
            raise ValueError("t must be (n,) and w must be (n, 3)")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise ValueError("timestamps and rates must be finite")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not self.nominal_rate > 0:
            raise ValueError("nominal_rate must be positive")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "w", w)

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, k: int) -> GyroSample:
        return GyroSample(float(self.t[k]), self.w[k])


@dataclass(frozen=True)
class AlignedPairs:
    """Co-sampled measurement pairs from both gyroscopes.

    `mean1`/`mean2` are populated by :func:`center`, after which `w1`/`w2`
    hold mean-subtracted values. `snr_per_axis`/`snr_target_met` are
    populated by :func:`select`.
    """

    t: np.ndarray            # (n,)
    w1: np.ndarray           # (n, 3)
    w2: np.ndarray           # (n, 3)
    mean1: Optional[np.ndarray] = None
    mean2: Optional[np.ndarray] = None
    snr_per_axis: Optional[np.ndarray] = None
    snr_target_met: Optional[bool] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        w1 = np.asarray(self.w1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float)
        if t.size < 1 or w1.shape != (t.size, 3) or w2.shape != (t.size, 3):
            raise ValueError("need n >= 1 pairs with matching lengths")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def is_centered(self) -> bool:
        return self.mean1 is not None

    @property
    def means(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.is_centered:
            raise ValueError("pairs are not centered; call center() first")
        return self.mean1, self.mean2


@dataclass(frozen=True)
class SelectionPolicy:
    """Norm gate and per-axis SNR target for sample selection."""

    min_norm: float = 0.0               # rad/s
    max_norm: float = np.inf            # rad/s
    target_snr_per_axis: float = 4.0e3
    sigma: float = 1.745e-3             # rad/s, combined noise std

    def __post_init__(self):
        if not (0.0 <= self.min_norm < self.max_norm):
            raise ValueError("require 0 <= min_norm < max_norm")
        if not self.target_snr_per_axis > 0:
            raise ValueError("target_snr_per_axis must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def estimate_time_offset(a: GyroStream, b: GyroStream, max_lag: float = 0.5) -> float:
    """Time offset of stream b relative to a, in seconds.

    A positive result means b is delayed: b(t) carries the signal a had at
    t - offset. The lag maximizing the normalized cross-correlation of the
    rate-norm sequences is searched on a one-sample grid and refined to
    sub-sample resolution by a quadratic fit around the peak.
    """
    t0 = max(a.t[0], b.t[0])
    t1 = min(a.t[-1], b.t[-1])
    if t1 - t0 < 2.0:
        raise InsufficientOverlapError(
            f"streams overlap for {max(t1 - t0, 0.0):.3f} s; need >= 2 s")
    if max_lag >= 0.5 * (t1 - t0):
        raise ValueError("max_lag must be less than half the overlap")

    dt = 1.0 / a.nominal_rate
    grid = np.arange(t0, t1, dt)
    na = np.interp(grid, a.t, np.linalg.norm(a.w, axis=1))
    nb = np.interp(grid, b.t, np.linalg.norm(b.w, axis=1))
    if np.var(na) < 1e-12 or np.var(nb) < 1e-12:
        raise FlatSignalError("rate-norm sequence has variance < 1e-12")
    na = na - na.mean()
    nb = nb - nb.mean()

    max_shift = int(np.floor(max_lag / dt))
    shifts = np.arange(-max_shift, max_shift + 1)
    corr = np.empty(shifts.size)
    for i, s in enumerate(shifts):
        # b delayed by s*dt lines up a[k-s] with b[k]
        if s >= 0:
            x, y = na[: grid.size - s], nb[s:]
        else:
            x, y = na[-s:], nb[: grid.size + s]
        denom = np.linalg.norm(x) * np.linalg.norm(y)
        corr[i] = np.dot(x, y) / denom if denom > 0 else 0.0

    k = int(np.argmax(corr))
    shift = float(shifts[k])
    if 0 < k < shifts.size - 1:
        cm, c0, cp = corr[k - 1], corr[k], corr[k + 1]
        denom = cm - 2.0 * c0 + cp
        if denom < 0:
            shift += 0.5 * (cm - cp) / denom
    return shift * dt


def resample(s: GyroStream, query_times: np.ndarray) -> GyroStream:
    """Natural cubic-spline resampling of each axis at `query_times`."""
    q = np.asarray(query_times, dtype=float)
    if len(s) < 4:
        raise TooFewSamplesError(f"{len(s)} samples; spline needs >= 4")
    if q.size and (q[0] < s.t[0] or q[-1] > s.t[-1]):
        raise OutOfRangeError("query times outside the sampled range")
    spline = CubicSpline(s.t, s.w, axis=0, bc_type="natural")
    return GyroStream(s.gyro_id, q, spline(q), s.nominal_rate)


def align(a: GyroStream, b: GyroStream, max_lag: float = 0.5) -> AlignedPairs:
    """Time-offset compensation and co-sampling of b onto a's timestamps."""
    offset = estimate_time_offset(a, b, max_lag=max_lag)
    # a(t) pairs with b(t + offset); keep timestamps where both are sampled
    keep = (a.t >= a.t[0]) & (a.t + offset >= b.t[0]) & (a.t + offset <= b.t[-1])
    if not np.any(keep):
        raise InsufficientOverlapError("no common samples after offset compensation")
    t = a.t[keep]
    b_on_a = resample(b, t + offset)
    return AlignedPairs(t=t, w1=a.w[keep], w2=b_on_a.w)


def select(p: AlignedPairs, policy: SelectionPolicy) -> AlignedPairs:
    """Norm-gated selection until the per-axis SNR target is reached.

    Pairs with ||w1|| inside [min_norm, max_norm] are kept in temporal
    order; accumulation stops at the first index where all three per-axis
    SNRs (computed from mean-centered w1 as the true-rate proxy) reach the
    target. An exhausted input is returned in full with the target flag
    left False.
    """
    norms = np.linalg.norm(p.w1, axis=1)
    gate = (norms >= policy.min_norm) & (norms <= policy.max_norm)
    idx = np.nonzero(gate)[0]
    if idx.size == 0:
        raise ValueError("norm gate rejected every pair")

    proxy = p.w1[idx] - p.w1[idx].mean(axis=0)
    cum = np.cumsum(proxy**2, axis=0) / policy.sigma**2
    reached = np.nonzero(np.all(cum >= policy.target_snr_per_axis**2, axis=1))[0]
    if reached.size:
        idx = idx[: reached[0] + 1]
        achieved = np.sqrt(cum[reached[0]])
        met = True
    else:
        achieved = np.sqrt(cum[-1])
        met = False
    return AlignedPairs(
        t=p.t[idx], w1=p.w1[idx], w2=p.w2[idx],
        mean1=p.mean1, mean2=p.mean2,
        snr_per_axis=achieved, snr_target_met=met,
    )


def center(p: AlignedPairs) -> AlignedPairs:
    """Subtract per-gyro sample means, recording them for bias recovery.

    Centering an already-centered set leaves values unchanged and reports
    zero means, so the stored means always refer to the data as given.
    """
    m1 = p.w1.mean(axis=0)
    m2 = p.w2.mean(axis=0)
    return replace(p, w1=p.w1 - m1, w2=p.w2 - m2, mean1=m1, mean2=m2)


def compute_snr(p: AlignedPairs, sigma: float, use_centered: bool = False) -> Tuple[float, np.ndarray]:
    """Noise-normalized signal energy of gyro 1: (total, per-axis).

    total = sqrt(sum ||w1||^2 / sigma^2); per-axis applies the same formula
    to each component. With `use_centered`, the sample mean of w1 is
    removed first (a no-op on already-centered pairs).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    w = p.w1 - p.w1.mean(axis=0) if use_centered else p.w1
    per_axis = np.sqrt(np.sum(w**2, axis=0)) / sigma
    return float(np.linalg.norm(per_axis)), per_axis
