"""Dense linear-algebra kernels: soft-thresholding, generalized norms and
projections, power-iteration SVD, and generalized Procrustes.

All routines operate on plain numpy arrays. Wherever a smoothing operator
S = I + alpha*L is expected, either the raw symmetric matrix or any object
with a ``.matrix`` attribute (see :class:`conga.graphs.SmoothingOperator`)
is accepted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

# Deterministic fallback start for power iterations whose all-ones start
# stagnates (e.g. when the ones vector is an exact non-leading eigenvector).
_RESTART_KEY = 0x5EED_C0DE


class DomainError(ValueError):
    """Input outside the operation's domain (non-finite, bad shape, ...)."""


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge within the iteration cap."""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass(frozen=True)
class SingularTriple:
    """Leading singular pair (left, right, value), unit vectors, value >= 0.

    Sign convention: the entry of ``left`` with the largest absolute value
    is positive.
    """

    left: np.ndarray
    right: np.ndarray
    value: float


def _as_matrix(S):
    return getattr(S, "matrix", S)


def _check_finite(x, name="input"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite entries")
    return x


def soft_threshold(x, t):
    """Elementwise shrinkage sign(x) * max(|x| - t, 0).

    ``t`` may be a scalar or a per-coordinate array of nonnegative
    thresholds.
    """
    x = _check_finite(x, "x")
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise DomainError("threshold must be finite and nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def s_norm(u, S):
    """Generalized norm sqrt(u' S u) for a positive semidefinite S."""
    u = np.asarray(u, dtype=float)
    M = _as_matrix(S)
    if u.shape[0] != M.shape[0]:
        raise DomainError(
            f"dimension mismatch: vector of length {u.shape[0]} "
            f"vs operator of size {M.shape[0]}"
        )
    q = float(u @ (M @ u))
    # q can dip epsilon-negative for u ~ 0 through rounding
    return float(np.sqrt(max(q, 0.0)))


def project_s_ball(u, S):
    """Project onto {u : sqrt(u' S u) <= 1}: identity inside, rescale outside."""
    u = np.asarray(u, dtype=float)
    nrm = s_norm(u, S)
    if nrm <= 1.0:
        return u.copy()
    return u / nrm


def fix_sign(u):
    """Flip sign so that the largest-|entry| coordinate is positive.

    Returns (vector, flipped_flag). Deterministic: ties are resolved by
    np.argmax (lowest index wins).
    """
    u = np.asarray(u, dtype=float)
    i = int(np.argmax(np.abs(u)))
    if u[i] < 0:
        return -u, True
    return u.copy(), False


def _ones_start(n):
    return np.full(n, 1.0 / np.sqrt(n))


def _random_start(n):
    rng = np.random.Generator(np.random.Philox(_RESTART_KEY))
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def _svd_power_run(C, v0, tol, max_iter):
    """One power-iteration run on C'C. Returns (u, v, sigma, residual, iters)."""
    v = v0
    sigma = 0.0
    for it in range(1, max_iter + 1):
        w = C.T @ (C @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return None, v, 0.0, np.inf, it
        v = w / nw
        Cv = C @ v
        sigma = np.linalg.norm(Cv)
        if sigma == 0.0:
            return None, v, 0.0, np.inf, it
        u = Cv / sigma
        residual = np.linalg.norm(C.T @ u - sigma * v) / sigma
        if residual <= tol:
            return u, v, sigma, residual, it
    return u, v, sigma, residual, max_iter


def leading_singular_pair(C, tol=1e-10, max_iter=10_000):
    """Leading singular triple of a nonzero matrix via power iteration.

    Deterministic all-ones start; if that run stagnates (converges in a
    handful of iterations, which happens when the start is an exact
    eigenvector of C'C) a single fixed pseudorandom restart is tried and
    the run with the larger value wins.
    """
    C = _check_finite(C, "matrix")
    if C.ndim != 2:
        raise DomainError("expected a 2-d matrix")
    if not np.any(C):
        raise DomainError("leading singular pair of the zero matrix is undefined")

    runs = []
    u, v, sigma, res, iters = _svd_power_run(C, _ones_start(C.shape[1]), tol, max_iter)
    if u is not None:
        runs.append((u, v, sigma, res))
    # Fast convergence suggests the start hit an eigenvector exactly;
    # verify against one deterministic pseudorandom restart.
    if u is None or iters <= 8 or res > tol:
        u2, v2, sigma2, res2, _ = _svd_power_run(
            C, _random_start(C.shape[1]), tol, max_iter
        )
        if u2 is not None:
            runs.append((u2, v2, sigma2, res2))

    converged = [r for r in runs if r[3] <= tol]
    if not converged:
        best = max(runs, key=lambda r: r[2]) if runs else (None, None, 0.0, np.inf)
        raise PowerIterationError(
            f"power iteration did not converge in {max_iter} iterations "
            f"(residual {best[3]:.3e})",
            last_iterate=best[1],
            residual=best[3],
        )
    u, v, sigma, _ = max(converged, key=lambda r: r[2])
    u, flipped = fix_sign(u)
    if flipped:
        v = -v
    return SingularTriple(left=u, right=v, value=float(sigma))


def lambda_max(S, tol=1e-10, max_iter=10_000):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    M = _check_finite(_as_matrix(S), "operator")
    n = M.shape[0]

    def run(v):
        lam = 0.0
        for it in range(1, max_iter + 1):
            w = M @ v
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0, 0.0, it
            v = w / nw
            lam = float(v @ (M @ v))
            residual = np.linalg.norm(M @ v - lam * v) / max(lam, 1e-300)
            if residual <= tol:
                return lam, residual, it
        return lam, residual, max_iter

    lam, res, iters = run(_ones_start(n))
    if iters <= 8 or res > tol:
        lam2, res2, _ = run(_random_start(n))
        if res2 <= tol:
            lam = max(lam, lam2)
            res = min(res, res2)
    if res > tol:
        # Near-degenerate leading eigenvalues stall the power iteration; the
        # dense symmetric eigensolver is exact and deterministic at this scale.
        return float(np.linalg.eigvalsh(M)[-1])
    return lam


def symmetric_sqrt_factors(S):
    """Return (S^{1/2}, S^{-1/2}) via dense symmetric eigen-decomposition.

    Requires S positive definite (all eigenvalues > 0).
    """
    M = _check_finite(_as_matrix(S), "operator")
    evals, evecs = np.linalg.eigh(M)
    if evals[0] <= 0:
        raise DomainError(
            f"operator is not positive definite (min eigenvalue {evals[0]:.3e})"
        )
    root = evecs @ (np.sqrt(evals)[:, None] * evecs.T)
    inv_root = evecs @ ((1.0 / np.sqrt(evals))[:, None] * evecs.T)
    return root, inv_root


def _sqrt_factors_of(S):
    """Fetch cached sqrt factors from a SmoothingOperator, else compute."""
    getter = getattr(S, "sqrt_factors", None)
    if callable(getter):
        return getter()
    return symmetric_sqrt_factors(S)


def project_conv_stiefel(X, S):
    """Nearest point of {X : lambda_max(X' S X) <= 1} in the S-weighted metric.

    Transform Y = S^{1/2} X, clip singular values of Y to at most 1, map back
    through S^{-1/2}.
    """
    X = _check_finite(X, "X")
    if X.shape[1] > X.shape[0]:
        raise DomainError("expected a tall matrix (K <= n)")
    root, inv_root = _sqrt_factors_of(S)
    Y = root @ X
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    if s.size and s[0] <= 1.0:
        return X.copy()
    return inv_root @ (U @ (np.minimum(s, 1.0)[:, None] * Vt))


def generalized_procrustes(B, S):
    """argmax of Tr(U' B) over {U : U' S U = I}.

    Computed as S^{-1/2} times the polar factor of S^{-1/2} B. A
    rank-deficient B makes the polar factor non-unique; the SVD's choice is
    used and a warning is issued.
    """
    B = _check_finite(B, "B")
    if B.shape[1] > B.shape[0]:
        raise DomainError("expected a tall matrix (K <= n)")
    if not np.any(B):
        raise DomainError("Procrustes target matrix is zero")
    root, inv_root = _sqrt_factors_of(S)
    A = inv_root @ B
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size and s[-1] <= 1e-12 * s[0]:
        warnings.warn(
            "rank-deficient Procrustes target: polar factor not unique",
            RuntimeWarning,
            stacklevel=2,
        )
    return inv_root @ (U @ Vt)
