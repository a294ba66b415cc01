"""Gauss-Newton reference solver over rotation and percentage scale errors.

Each iteration compensates the measurements by the current intrinsics
estimate, eliminates the combined bias by mean removal, and solves a
linear least-squares problem in the 9-vector [rotation error; symmetric
scale-coupling terms]. It exists to cross-check the direct solver, which
reaches the same optimum without iterating.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .direct import (
    CalibrateOptions,
    CalibrationResult,
    Diagnostics,
    classify_configuration,
    recover_bias,
)
from .errors import (
    NoConvergenceError,
    SingularNormalEquationsError,
    SingularPhiError,
)
from .geometry import ensure_rotation, so3_exp
from .preprocess import AlignedPairs, center, compute_snr


@dataclass(frozen=True)
class IterState:
    C: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    iteration: int = 0
    last_step_norm: float = np.inf


def identity_state() -> IterState:
    return IterState(C=np.eye(3), s1=np.ones(3), s2=np.ones(3))


def gn_normalize(p: AlignedPairs, state: IterState) -> Tuple[np.ndarray, np.ndarray]:
    """Mean-removed residuals and Jacobians at the current state.

    Measurements are divided by the current scale estimates, re-centered,
    and differenced through the current rotation. The Jacobian blocks are
    the cross-product matrix of the centered gyro-1 rates (rotation part)
    and their symmetric-coupling layout (scale part); measured rates stand
    in for the true ones.

    Returns (residuals, jacobians) with shapes (n, 3) and (n, 3, 9).
    """
    w1 = p.w1 / state.s1
    w2 = p.w2 / state.s2
    w1 = w1 - w1.mean(axis=0)
    w2 = w2 - w2.mean(axis=0)
    r = w1 - w2 @ state.C.T

    n = p.n
    J = np.zeros((n, 3, 9))
    x, y, z = w1[:, 0], w1[:, 1], w1[:, 2]
    # skew(w1) columns
    J[:, 0, 1], J[:, 0, 2] = -z, y
    J[:, 1, 0], J[:, 1, 2] = z, -x
    J[:, 2, 0], J[:, 2, 1] = -y, x
    # gamma layout: (g11, g12, g13, g22, g23, g33)
    J[:, 0, 3], J[:, 0, 4], J[:, 0, 5] = x, y, z
    J[:, 1, 4], J[:, 1, 6], J[:, 1, 7] = x, y, z
    J[:, 2, 5], J[:, 2, 7], J[:, 2, 8] = x, y, z
    return r, J


def gn_solve_step(residuals: np.ndarray, jacobians: np.ndarray) -> np.ndarray:
    """Normal-equations solve for the 9-vector update."""
    Jf = jacobians.reshape(-1, 9)
    rf = residuals.reshape(-1)
    H = Jf.T @ Jf
    eigs = np.linalg.eigvalsh(H)
    if eigs[0] < 1e-12 * max(eigs[-1], 1e-300):
        raise SingularNormalEquationsError(
            f"normal-equation eigenvalue ratio {eigs[0] / max(eigs[-1], 1e-300):.3e}")
    return np.linalg.solve(H, Jf.T @ rf)


def recover_scale_errors(gamma: np.ndarray, C: np.ndarray,
                         min_norm: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Percentage scale errors from the symmetric coupling terms.

    The six gamma values are linear in the six per-axis errors through a
    matrix built from elementwise products of the rows of C, which has a
    one-dimensional gauge nullspace; the first gyro-1 component is pinned
    to zero and the remaining five solved by least squares. When the
    rotation still has parallel axes the pinned system stays rank
    deficient; `min_norm` then picks the minimum-norm solution instead of
    raising, which lets the iteration pass through such states.
    """
    C = ensure_rotation(C)
    c1, c2, c3 = C[0], C[1], C[2]
    phi = np.zeros((6, 6))
    phi[0, 0] = 1.0
    phi[3, 1] = 1.0
    phi[5, 2] = 1.0
    phi[0, 3:] = -c1 * c1
    phi[1, 3:] = -c1 * c2
    phi[2, 3:] = -c1 * c3
    phi[3, 3:] = -c2 * c2
    phi[4, 3:] = -c2 * c3
    phi[5, 3:] = -c3 * c3

    reduced = phi[:, 1:]
    svals = np.linalg.svd(reduced, compute_uv=False)
    if svals[-1] < 1e-10 * svals[0] and not min_norm:
        raise SingularPhiError(
            "scale-error system needs more pinned components; placement is "
            "degenerate (parallel axes)")
    sol, *_ = np.linalg.lstsq(reduced, np.asarray(gamma, float), rcond=1e-10)
    full = np.concatenate([[0.0], sol])
    return full[:3], full[3:]


def iterate_calibrate(
    p: AlignedPairs,
    init: Optional[IterState] = None,
    tol: float = 1e-10,
    max_iter: int = 20,
    options: Optional[CalibrateOptions] = None,
) -> CalibrationResult:
    """Gauss-Newton loop until the update norm drops below `tol`.

    The rotation update is applied through the exponential map so the
    estimate stays exactly orthonormal; scales update multiplicatively.
    The gauge pin keeps the first gyro-1 scale factor at its initial
    value, so results share the direct solver's up-to-global-scale
    convention only after normalization.
    """
    opts = options or CalibrateOptions()
    if not p.is_centered:
        p = center(p)
    state = init or identity_state()

    converged = False
    for it in range(1, max_iter + 1):
        r, J = gn_normalize(p, state)
        x = gn_solve_step(r, J)
        s1_err, s2_err = recover_scale_errors(x[3:], state.C, min_norm=True)
        s1 = state.s1 * (1.0 + s1_err)
        s2 = state.s2 * (1.0 + s2_err)
        if np.any(s1 <= 0.0) or np.any(s2 <= 0.0):
            raise NoConvergenceError(
                f"scale estimate left the positive orthant at iteration {it}")
        # convergence is judged on the applied state change; the raw gamma
        # step keeps its gauge-orthogonal noise component forever
        step = float(np.sqrt(np.sum(x[:3]**2)
                             + np.sum(s1_err**2) + np.sum(s2_err**2)))
        state = IterState(
            C=so3_exp(-x[:3]) @ state.C,
            s1=s1,
            s2=s2,
            iteration=it,
            last_step_norm=step,
        )
        if state.last_step_norm < tol:
            converged = True
            break
    if not converged:
        raise NoConvergenceError(
            f"step norm {state.last_step_norm:.3e} after {max_iter} iterations "
            f"(tol {tol:g})")

    A_hat = np.diag(state.s1) @ state.C @ np.diag(1.0 / state.s2)
    res = p.w1 - p.w2 @ A_hat.T
    gram_eigs = np.linalg.eigvalsh(p.w2.T @ p.w2)[::-1]
    snr_total, snr_axis = compute_snr(p, opts.sigma)
    diag = Diagnostics(
        n_pairs=p.n,
        residual_rms=float(np.sqrt(np.mean(np.sum(res**2, axis=1)))),
        gram_cond=float(gram_eigs[0] / gram_eigs[2]),
        snr_total=snr_total,
        snr_per_axis=snr_axis,
    )
    return CalibrationResult(
        C=state.C,
        s1=state.s1,
        s2=state.s2,
        combined_bias=recover_bias(A_hat, p.means),
        config=classify_configuration(A_hat, tol=opts.classify_tol),
        scale_mode="gauge-pinned",
        diagnostics=diag,
        solver="iterative",
        iterations=state.iteration,
    )
