"""Exact matrix-solve equalizer baselines: L-MMSE, ZF, MRC, and mismatched L-MMSE.

All of these reduce to solving the regularized Gram system
(H^H H + ridge * I) x = H^H y, which is Hermitian positive definite for
ridge > 0 and is solved by a Cholesky factorization (never by forming an
explicit inverse). Cost is O(B U^2 + U^3), the inversion work that the
iterative equalizers in `amp_core` avoid.
"""

import numpy as np
import scipy.linalg as sla

_HERMITIAN_TOL = 1e-12


class RankDeficiencyError(RuntimeError):
    """The Gram matrix is singular (ZF / noiseless L-MMSE on a rank-deficient channel)."""


def gram(H: np.ndarray) -> np.ndarray:
    """G = H^H H, checked to be Hermitian to within 1e-12 before any solve."""
    G = H.conj().T @ H
    scale = max(1.0, float(np.abs(G).max()))
    residual = float(np.abs(G - G.conj().T).max())
    if residual > _HERMITIAN_TOL * scale:
        raise ArithmeticError(f"Gram matrix lost Hermitian symmetry (residual {residual:.3e})")
    return G


def matched_filter(H: np.ndarray, y: np.ndarray) -> np.ndarray:
    return H.conj().T @ y


def solve_regularized(G: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    """Solve (G + ridge I) out = rhs via Cholesky; rhs may be a vector or matrix."""
    A = G + ridge * np.eye(G.shape[0]) if ridge != 0.0 else G
    try:
        factor = sla.cho_factor(A, lower=False)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"Gram system is not positive definite: {exc}") from exc
    if ridge == 0.0:
        # Rounding can leave a singular Gram with a tiny positive pivot that
        # the factorization accepts; reject it instead of returning garbage.
        pivots = np.abs(np.diagonal(factor[0]))
        if float(pivots.min()) <= 1e-7 * float(pivots.max()):
            raise RankDeficiencyError("Gram system is numerically rank deficient")
    return sla.cho_solve(factor, rhs)


def _check_dims(H, y):
    H = np.asarray(H)
    y = np.asarray(y)
    if H.ndim != 2 or y.shape != (H.shape[0],):
        raise ValueError(f"incompatible shapes H{H.shape}, y{y.shape}")
    return H, y


def mmse_equalize(H: np.ndarray, y: np.ndarray, Es: float, N0: float) -> np.ndarray:
    """L-MMSE estimate x_hat = (H^H H + (N0/Es) I)^-1 H^H y.

    At N0 = 0 this degenerates to ZF with an explicit rank check rather than
    silently regularizing.
    """
    H, y = _check_dims(H, y)
    if Es <= 0:
        raise ValueError("Es must be positive")
    if N0 < 0:
        raise ValueError("N0 must be nonnegative")
    if N0 == 0.0:
        return zf_equalize(H, y)
    return solve_regularized(gram(H), matched_filter(H, y), N0 / Es)


def zf_equalize(H: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Zero-forcing estimate x_hat = (H^H H)^-1 H^H y; needs full column rank."""
    H, y = _check_dims(H, y)
    B, U = H.shape
    if U > B:
        raise RankDeficiencyError(f"zero forcing needs U <= B, got U={U} > B={B}")
    return solve_regularized(gram(H), matched_filter(H, y), 0.0)


def mrc_equalize(H: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Maximum-ratio combining: x_hat = H^H y."""
    H, y = _check_dims(H, y)
    return matched_filter(H, y)


def mismatched_mmse_equalize(H: np.ndarray, y: np.ndarray, Es_prime: float, N0: float) -> np.ndarray:
    """L-MMSE run with an assumed signal power Es_prime instead of the true Es."""
    if Es_prime <= 0:
        raise ValueError("Es_prime must be positive")
    return mmse_equalize(H, y, Es_prime, N0)


def equalizer_matrix(
    H: np.ndarray,
    kind: str,
    Es: float = 1.0,
    N0: float = 0.0,
    es_prime: float | None = None,
) -> np.ndarray:
    """The (U, B) equalization matrix W for one of the linear equalizers.

    Used by the SIR analysis path, which needs W itself rather than W y.
    """
    H = np.asarray(H)
    Hh = H.conj().T
    if kind == "mrc":
        return Hh
    if kind == "zf":
        if H.shape[1] > H.shape[0]:
            raise RankDeficiencyError("zero forcing needs U <= B")
        return solve_regularized(gram(H), Hh, 0.0)
    if kind == "lmmse":
        return solve_regularized(gram(H), Hh, N0 / Es)
    if kind == "lmmse_mismatched":
        if es_prime is None or es_prime <= 0:
            raise ValueError("lmmse_mismatched needs a positive es_prime")
        return solve_regularized(gram(H), Hh, N0 / es_prime)
    raise ValueError(f"unknown linear equalizer {kind!r}")


def output_sinr(W: np.ndarray, H: np.ndarray, Es: float, N0: float) -> np.ndarray:
    """Per-user output SINR of x_hat = W y for i.i.d. symbols of power Es.

    Decomposes W y = (WH)_uu x_u + interference + filtered noise and returns
    |diag|^2 Es / (off-diagonal power * Es + N0 * row norms of W).
    """
    A = W @ H
    diag = np.diagonal(A)
    signal = np.abs(diag) ** 2 * Es
    total = np.einsum("uv,uv->u", A.conj(), A).real * Es
    noise = N0 * np.einsum("ub,ub->u", W.conj(), W).real
    return signal / (total - signal + noise)
