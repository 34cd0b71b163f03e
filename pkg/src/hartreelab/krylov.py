"""Lanczos approximation of ``exp(-i tau A) v`` for Hermitian ``A``."""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .errors import ConvergenceError

__all__ = ["expm_multiply_hermitian"]

_BREAKDOWN = 1e-13
_MAX_HALVINGS = 40
# per-substep error shares below a few ulps cannot be resolved
_STEP_FLOOR = 8 * np.finfo(float).eps


def _small_exp(alpha, beta, s):
    """First column of ``exp(-i s T)`` for the tridiagonal ``T(alpha, beta)``."""
    if len(alpha) == 1:
        return np.array([np.exp(-1j * s * alpha[0])])
    T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
    return expm(-1j * s * T)[:, 0]


def expm_multiply_hermitian(A, v, tau: float, tol: float = 1e-10, m_max: int = 60) -> np.ndarray:
    """Apply ``exp(-i tau A)`` to ``v`` with an adaptive Lanczos scheme.

    The interval is split into substeps.  On each substep the Krylov basis
    grows until the a posteriori estimate ``beta_m |[exp(-i s T_m)]_{m,1}|``
    drops below the substep's share of ``tol``; if ``m_max`` vectors are not
    enough the substep is halved and the basis reused.

    Parameters
    ----------
    A : sparse matrix, ndarray or LinearOperator
        Hermitian operator (only ``A @ x`` is used).
    v : ndarray
        Start vector.
    tau : float
        Time; negative values propagate backwards.
    tol : float
        Absolute error target for the whole interval, relative to ``||v||``.
    m_max : int
        Largest Krylov dimension.
    """
    w = np.array(v, dtype=complex)
    if tau == 0 or not np.any(w):
        return w
    total = abs(float(tau))
    sign = 1.0 if tau > 0 else -1.0
    done = 0.0
    trial = total
    n = w.shape[0]
    m_max = max(1, min(m_max, n))

    while done < total * (1 - 1e-15):
        trial = min(trial, total - done)
        norm_w = np.linalg.norm(w)
        basis = np.empty((m_max + 1, n), dtype=complex)
        basis[0] = w / norm_w
        alpha, beta = [], []
        happy = False
        accepted = None
        for j in range(m_max):
            u = A @ basis[j]
            a = np.vdot(basis[j], u).real
            u = u - a * basis[j] - (beta[-1] * basis[j - 1] if j else 0)
            # full reorthogonalization keeps the basis orthonormal at m <= 60
            u -= basis[: j + 1].T @ (basis[: j + 1].conj() @ u)
            b = np.linalg.norm(u)
            alpha.append(a)
            if b < _BREAKDOWN * max(1.0, abs(a)):
                happy = True
                break
            beta.append(b)
            basis[j + 1] = u / b
            if j >= 1 or m_max == 1:
                c = _small_exp(np.array(alpha), np.array(beta[:-1]), sign * trial)
                if b * abs(c[-1]) <= max(tol * trial / total, _STEP_FLOOR * b):
                    accepted = c
                    break
        m = len(alpha)
        if happy:
            accepted = _small_exp(np.array(alpha), np.array(beta[: m - 1]), sign * trial)
        elif accepted is None:
            a_arr, b_arr = np.array(alpha), np.array(beta[: m - 1])
            for _ in range(_MAX_HALVINGS):
                trial *= 0.5
                c = _small_exp(a_arr, b_arr, sign * trial)
                if beta[m - 1] * abs(c[-1]) <= max(tol * trial / total, _STEP_FLOOR * beta[m - 1]):
                    accepted = c
                    break
            if accepted is None:
                raise ConvergenceError(
                    f"Krylov propagation stalled at t={done:.3e} of {total:.3e} (tolerance {tol:.1e})"
                )
        w = norm_w * (accepted @ basis[:m])
        done += trial
        if m < m_max // 2:
            trial *= 2.0
    return w
