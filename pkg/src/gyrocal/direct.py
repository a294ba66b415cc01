"""Direct least-squares recovery of extrinsics and scale factors.

The mixing matrix A = S1 @ C @ inv(S2) that maps gyro-2 rates onto gyro-1
rates is the unconstrained minimizer of the paired measurement cost; it is
then factored into the rotation C and the per-axis scale factors. Which
degrees of freedom are observable depends on how the two gyros' axes are
mutually placed, so the factorization is dispatched on a configuration
classification of A.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .errors import (
    IndefiniteNullspaceError,
    NonPositiveScaleError,
    DegenerateRatioError,
    RankDeficientError,
)
from .geometry import nearest_orthonormal
from .preprocess import AlignedPairs, center, compute_snr


class ConfigKind(Enum):
    GENERAL = "general"
    ONE_PARALLEL_PAIR = "one_parallel_pair"
    ALL_PARALLEL = "all_parallel"


@dataclass(frozen=True)
class Configuration:
    """Mutual placement class of the two gyros' sensing axes.

    For ONE_PARALLEL_PAIR, `common_axis_1`/`common_axis_2` are the 0-based
    parallel axes of gyro 1 and gyro 2 and `sign` their relative direction.
    For ALL_PARALLEL, `permutation` holds the signed permutation matrix
    that the rotation snaps to.
    """

    kind: ConfigKind
    common_axis_1: Optional[int] = None
    common_axis_2: Optional[int] = None
    sign: Optional[int] = None
    permutation: Optional[np.ndarray] = None


@dataclass(frozen=True)
class MixingMatrix:
    A: np.ndarray             # (3, 3)
    gram_eigs: np.ndarray     # eigenvalues of W2^T W2, descending
    residual_rms: float       # rad/s


@dataclass(frozen=True)
class NullspaceResult:
    vector: np.ndarray                 # unit norm, positivized
    second_smallest_eig_ratio: float


@dataclass(frozen=True)
class Diagnostics:
    n_pairs: int
    residual_rms: float
    gram_cond: float
    snr_total: float
    snr_per_axis: np.ndarray


@dataclass(frozen=True)
class CalibrationResult:
    """Recovered extrinsics, scale factors and bookkeeping.

    `scale_mode` records the scale-factor convention:
      * "unit-norm": general placement, ||s2**2|| = 1;
      * "ratios": all-parallel, s1 holds pairwise ratios and s2 is ones;
      * "global-resolved": after prior-based global-scale resolution.
    For one-parallel placements the common-axis entries use s2 = 1 with
    s1 carrying the observable ratio (also exposed as `scale_ratio`), and
    `zeta` holds the four observable non-common scale factors in canonical
    order (2nd-gyro x, y then 1st-gyro x, y of the permuted frames).
    """

    C: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    combined_bias: np.ndarray
    config: Configuration
    scale_mode: str
    diagnostics: Diagnostics
    scale_ratio: Optional[float] = None
    zeta: Optional[np.ndarray] = None
    solver: str = "direct"
    iterations: Optional[int] = None
    mitigation_applied: bool = False
    flex_fraction_removed: float = 0.0
    sigma_r: Optional[float] = None


@dataclass(frozen=True)
class Decomposition:
    C: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    scale_mode: str
    scale_ratio: Optional[float] = None
    zeta: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CalibrateOptions:
    rank_tol: float = 1e-8
    classify_tol: float = 0.05
    resolve_scale_axis: Optional[int] = None   # 0..2; None keeps unit-norm mode
    sigma: float = 1.0                         # rad/s, for SNR diagnostics


def solve_A(p: AlignedPairs, rank_tol: float = 1e-8) -> MixingMatrix:
    """Least-squares mixing matrix from centered pairs, single pass.

    Accumulates the two 3x3 moment matrices W1^T W2 and W2^T W2 in one
    O(n) sweep and solves the 3x3 normal system. Raises RankDeficientError
    when the centered gyro-2 rates do not span 3 d.o.f. -- fewer than four
    effective pairs, coplanar excitation, or a fourth measurement whose
    combination coefficients over the first three sum to one all land
    here, since each collapses the Gram spectrum.
    """
    if not p.is_centered:
        raise ValueError("solve_A requires centered pairs; call center() first")
    W1, W2 = p.w1, p.w2
    gram = W2.T @ W2
    cross = W1.T @ W2
    eigs = np.linalg.eigvalsh(gram)[::-1]
    if eigs[0] <= 0.0 or eigs[2] < rank_tol * eigs[0]:
        raise RankDeficientError(
            f"gram eigenvalue ratio {eigs[2] / max(eigs[0], 1e-300):.3e} "
            f"below rank_tol={rank_tol:g}; rates span < 3 d.o.f.")
    A = np.linalg.solve(gram, cross.T).T
    res = W1 - W2 @ A.T
    rms = float(np.sqrt(np.mean(np.sum(res**2, axis=1))))
    return MixingMatrix(A=A, gram_eigs=eigs, residual_rms=rms)


def recover_bias(A: np.ndarray, means: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Combined bias b1 - A b2 from the per-gyro sample means."""
    m1, m2 = means
    return np.asarray(m1, float) - np.asarray(A, float) @ np.asarray(m2, float)


def build_AI_A0(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Elementwise squares and the row-pair products of A.

    A_I[i, j] = A[i, j]**2; A_0 rows hold the elementwise products of row
    pairs (1,2), (2,3), (3,1). The orthonormality of C makes A_I map the
    squared gyro-2 scales onto the squared gyro-1 scales while A_0
    annihilates the squared gyro-2 scales.
    """
    A = np.asarray(A, dtype=float)
    A_I = A**2
    A_0 = np.stack([A[0] * A[1], A[1] * A[2], A[2] * A[0]])
    return A_I, A_0


def classify_configuration(A: np.ndarray, tol: float = 0.05) -> Configuration:
    """Detect parallel-axis placements from the zero pattern of A.

    An entry counts as significant when it exceeds `tol` times its row
    (column) norm. All rows and columns single-significant means every
    axis pair is parallel; exactly one such row/column sharing its
    dominant entry means one parallel pair; anything else is general.
    """
    A = np.asarray(A, dtype=float)
    row_sig = np.abs(A) > tol * np.linalg.norm(A, axis=1)[:, None]
    col_sig = np.abs(A) > tol * np.linalg.norm(A, axis=0)[None, :]
    row_single = row_sig.sum(axis=1) == 1
    col_single = col_sig.sum(axis=0) == 1

    if row_single.all() and col_single.all():
        perm = np.zeros((3, 3))
        for i in range(3):
            j = int(np.argmax(np.abs(A[i])))
            perm[i, j] = np.sign(A[i, j])
        return Configuration(kind=ConfigKind.ALL_PARALLEL, permutation=perm)

    if row_single.sum() == 1 and col_single.sum() == 1:
        i = int(np.nonzero(row_single)[0][0])
        j = int(np.argmax(np.abs(A[i])))
        if col_single[j] and int(np.argmax(np.abs(A[:, j]))) == i:
            return Configuration(
                kind=ConfigKind.ONE_PARALLEL_PAIR,
                common_axis_1=i, common_axis_2=j,
                sign=int(np.sign(A[i, j])),
            )
    return Configuration(kind=ConfigKind.GENERAL)


def smallest_eigvec(M: np.ndarray, mixed_sign_tol: float = 1e-8) -> NullspaceResult:
    """Positivized eigenvector of M^T M with the smallest eigenvalue.

    Raises IndefiniteNullspaceError when components of the eigenvector
    disagree in sign beyond `mixed_sign_tol` relative to the largest one,
    which signals data inconsistent with the bilinear scale model.
    """
    M = np.asarray(M, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(M.T @ M)
    v = eigvecs[:, 0]
    if v[np.argmax(np.abs(v))] < 0.0:
        v = -v
    if np.min(v) < -mixed_sign_tol * np.max(v):
        raise IndefiniteNullspaceError(
            f"null vector has mixed signs: {np.array2string(v, precision=3)}")
    v = np.clip(v, 0.0, None)
    floor = max(eigvals[0], 1e-300)
    return NullspaceResult(vector=v / np.linalg.norm(v),
                           second_smallest_eig_ratio=float(eigvals[1] / floor))


def decompose_general(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scale factors and rotation for a no-parallel-axes placement.

    The squared gyro-2 scales are the (unit-norm) null direction of A_0,
    the squared gyro-1 scales follow through A_I, and the rotation is the
    orthonormal projection of inv(S1) @ A @ S2. Absolute scale is not
    observable, so ||s2**2|| = 1 by convention.

    Returns (s1, s2, C).
    """
    A = np.asarray(A, dtype=float)
    A_I, A_0 = build_AI_A0(A)
    s2_sq = smallest_eigvec(A_0).vector
    s1_sq = A_I @ s2_sq
    if np.any(s1_sq <= 0.0):
        raise NonPositiveScaleError(
            f"recovered squared scales {np.array2string(s1_sq, precision=3)} "
            "are not strictly positive")
    s1 = np.sqrt(s1_sq)
    s2 = np.sqrt(s2_sq)
    C = nearest_orthonormal(np.diag(1.0 / s1) @ A @ np.diag(s2))
    return s1, s2, C


_CYCLE_TO_Z = (
    np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]),  # x -> z
    np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),  # y -> z
    np.eye(3),                                                      # z -> z
)
_FLIP_Z = np.diag([1.0, -1.0, -1.0])


def _canonical_permutations(cfg: Configuration) -> Tuple[np.ndarray, np.ndarray]:
    """Rotations that send each gyro's common axis to +z (same direction)."""
    P1 = _CYCLE_TO_Z[cfg.common_axis_1]
    P2 = _CYCLE_TO_Z[cfg.common_axis_2]
    if cfg.sign < 0:
        P2 = _FLIP_Z @ P2
    return P1, P2


def decompose_one_parallel(A: np.ndarray, cfg: Configuration,
                           rank_tol: float = 1e-8) -> Decomposition:
    """Recovery for placements with exactly one pair of parallel axes.

    Both frames are first rotated so the common axes become +z; there the
    (3,3) entry of A is the common-axis scale ratio and the four remaining
    scale factors come from the null direction of a 3x4 system, observable
    only up to a global scale that is fixed to one. The planar rotation
    angle follows from the scale-compensated upper-left block. Outputs are
    rotated back to the original frames.
    """
    A = np.asarray(A, dtype=float)
    P1, P2 = _canonical_permutations(cfg)
    Ac = P1 @ A @ P2.T

    lam = float(Ac[2, 2])
    if lam <= 0.0:
        raise DegenerateRatioError(f"common-axis ratio {lam:g} is not positive")

    system = np.array([
        [Ac[0, 0]**2, Ac[0, 1]**2, -1.0, 0.0],
        [Ac[1, 0]**2, Ac[1, 1]**2, 0.0, -1.0],
        [Ac[0, 0] * Ac[1, 0], Ac[0, 1] * Ac[1, 1], 0.0, 0.0],
    ])
    svals = np.linalg.svd(system, compute_uv=False)
    if svals[2] < rank_tol * svals[0]:
        raise RankDeficientError(
            "one-parallel scale system rows are dependent; placement is "
            "closer to all-parallel")
    zeta = smallest_eigvec(system).vector
    zb = np.sqrt(zeta)

    Cc = nearest_orthonormal(np.array([
        [Ac[0, 0] * zb[0] / zb[2], Ac[0, 1] * zb[1] / zb[2], 0.0],
        [Ac[1, 0] * zb[0] / zb[3], Ac[1, 1] * zb[1] / zb[3], 0.0],
        [0.0, 0.0, 1.0],
    ]))

    s1c = np.array([zb[2], zb[3], lam])
    s2c = np.array([zb[0], zb[1], 1.0])
    return Decomposition(C=P1.T @ Cc @ P2,
                         s1=(P1**2).T @ s1c,
                         s2=(P2**2).T @ s2c,
                         scale_mode="unit-norm", scale_ratio=lam, zeta=zb)


def decompose_all_parallel(A: np.ndarray, cfg: Configuration) -> Decomposition:
    """Recovery for pairwise-parallel placements.

    Only the signed axis pairing and the three pairwise scale ratios are
    observable; the rotation is snapped to the exact signed permutation
    and s1 carries the ratios against s2 = 1.
    """
    A = np.asarray(A, dtype=float)
    perm = cfg.permutation
    if abs(np.linalg.det(perm) - 1.0) > 1e-12:
        raise ValueError("snapped axis pairing is a reflection, not a rotation; "
                         "data inconsistent with a rigid pair")
    cols = np.argmax(np.abs(perm), axis=1)
    ratios = np.abs(A[np.arange(3), cols])
    return Decomposition(C=perm.copy(), s1=ratios, s2=np.ones(3),
                         scale_mode="ratios")


def resolve_global_scale(result: CalibrationResult, prior_axis: int = 0) -> CalibrationResult:
    """Fix the unobservable global scale using a near-unity prior.

    Given the estimated ratio lam of the prior axis's scale factors, the
    closest pair to (1, 1) on the constraint line s1a/s2a = lam is
    s1a = lam(lam+1)/(lam^2+1), s2a = (lam+1)/(lam^2+1); the other scale
    factors keep their ratios to the anchor axis.
    """
    cfg = result.config
    if cfg.kind == ConfigKind.ALL_PARALLEL:
        raise ValueError("global scale is meaningless for all-parallel placements; "
                         "only pairwise ratios are observable")
    s1 = result.s1.copy()
    s2 = result.s2.copy()

    if cfg.kind == ConfigKind.ONE_PARALLEL_PAIR:
        a = prior_axis
        if a == cfg.common_axis_1 and a == cfg.common_axis_2:
            lam = result.scale_ratio
            s1a, s2a = _closest_unity_pair(lam)
            s1[a], s2[a] = s1a, s2a
            return replace(result, s1=s1, s2=s2, scale_mode="global-resolved")
        if a in (cfg.common_axis_1, cfg.common_axis_2):
            raise ValueError(
                "prior axis belongs to the common-axis pair of only one gyro; "
                "its scale ratio is not observable")
        lam = float(s1[a] / s2[a])
        s1a, _ = _closest_unity_pair(lam)
        k = s1a / s1[a]
        mask1 = np.arange(3) != cfg.common_axis_1
        mask2 = np.arange(3) != cfg.common_axis_2
        s1[mask1] *= k
        s2[mask2] *= k
        return replace(result, s1=s1, s2=s2, scale_mode="global-resolved")

    lam = float(s1[prior_axis] / s2[prior_axis])
    s1a, _ = _closest_unity_pair(lam)
    k = s1a / s1[prior_axis]
    return replace(result, s1=s1 * k, s2=s2 * k, scale_mode="global-resolved")


def _closest_unity_pair(lam: float) -> Tuple[float, float]:
    if not lam > 0.0:
        raise DegenerateRatioError(f"scale ratio {lam:g} must be positive")
    return lam * (lam + 1.0) / (lam**2 + 1.0), (lam + 1.0) / (lam**2 + 1.0)


def calibrate(p: AlignedPairs, options: Optional[CalibrateOptions] = None) -> CalibrationResult:
    """Full direct pipeline: center, solve, classify, decompose.

    Global-scale resolution runs when `options.resolve_scale_axis` is set
    and the placement admits it (skipped for all-parallel).
    """
    opts = options or CalibrateOptions()
    if not p.is_centered:
        p = center(p)
    mix = solve_A(p, rank_tol=opts.rank_tol)
    bias = recover_bias(mix.A, p.means)
    cfg = classify_configuration(mix.A, tol=opts.classify_tol)

    if cfg.kind == ConfigKind.GENERAL:
        s1, s2, C = decompose_general(mix.A)
        dec = Decomposition(C=C, s1=s1, s2=s2, scale_mode="unit-norm")
    elif cfg.kind == ConfigKind.ONE_PARALLEL_PAIR:
        dec = decompose_one_parallel(mix.A, cfg, rank_tol=opts.rank_tol)
    else:
        dec = decompose_all_parallel(mix.A, cfg)

    snr_total, snr_axis = compute_snr(p, opts.sigma)
    diag = Diagnostics(
        n_pairs=p.n,
        residual_rms=mix.residual_rms,
        gram_cond=float(mix.gram_eigs[0] / mix.gram_eigs[2]),
        snr_total=snr_total,
        snr_per_axis=snr_axis,
    )
    result = CalibrationResult(
        C=dec.C, s1=dec.s1, s2=dec.s2, combined_bias=bias, config=cfg,
        scale_mode=dec.scale_mode, diagnostics=diag,
        scale_ratio=dec.scale_ratio, zeta=dec.zeta,
    )
    if opts.resolve_scale_axis is not None and cfg.kind != ConfigKind.ALL_PARALLEL:
        result = resolve_global_scale(result, opts.resolve_scale_axis)
    return result
