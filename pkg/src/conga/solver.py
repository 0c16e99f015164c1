"""Sparse graph-smooth PLS estimators.

Two routes to the same penalized cross-covariance decomposition of
C = X1' X2:

* :func:`sgpls_greedy` extracts one component at a time with a regularized
  power method (proximal gradient inner loops) and Hotelling-style
  deflation of the cross-product matrix.
* :func:`sgpls_multirank` fits all K components jointly, alternating
  penalized subproblems over the generalized Stiefel manifold solved by
  manifold ADMM (generalized Procrustes step + proximal step).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import SmoothingOperator
from .linalg import (
    DomainError,
    PowerIterationError,
    fix_sign,
    generalized_procrustes,
    leading_singular_pair,
    project_conv_stiefel,
    project_s_ball,
    s_norm,
    soft_threshold,
)

PENALTY_KINDS = ("none", "l1", "scaled-l1-per-node")


class SolverError(RuntimeError):
    """Iteration cap exceeded; carries the diagnostics gathered so far."""

    def __init__(self, message, trace=None, last_iterate=None):
        super().__init__(message)
        self.trace = trace
        self.last_iterate = last_iterate


class DegeneratePivotError(RuntimeError):
    """Deflation pivot u'Cv is numerically zero: the component carried no signal."""


@dataclass(frozen=True)
class PenaltySpec:
    """Sparsity penalty: lambda * P(x) for a positive homogeneous P.

    kind "none": P = 0. kind "l1": P = sum |x_i|. kind "scaled-l1-per-node":
    P = sum w_i |x_i| with fixed nonnegative per-node weights.
    """

    kind: str = "l1"
    weight: float = 0.0
    node_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise DomainError(f"unknown penalty kind {self.kind!r}")
        if self.weight < 0:
            raise DomainError("penalty weight must be nonnegative")
        if self.kind == "scaled-l1-per-node" and self.node_weights is None:
            raise DomainError("scaled-l1-per-node requires node_weights")

    def value(self, x):
        """lambda * P(x); x may be a vector or a matrix."""
        if self.kind == "none" or self.weight == 0.0:
            return 0.0
        a = np.abs(x)
        if self.kind == "scaled-l1-per-node":
            w = self.node_weights
            a = a * (w[:, None] if a.ndim == 2 else w)
        return self.weight * float(a.sum())

    def prox(self, x, step):
        """prox of step * lambda * P; soft-thresholding for the l1 kinds."""
        if self.kind == "none" or self.weight == 0.0:
            return np.asarray(x, dtype=float).copy()
        t = step * self.weight
        if self.kind == "scaled-l1-per-node":
            w = self.node_weights
            t = t * (w[:, None] if np.ndim(x) == 2 else w)
        return soft_threshold(x, t)


def no_penalty():
    return PenaltySpec(kind="none", weight=0.0)


def l1_penalty(weight):
    return PenaltySpec(kind="l1", weight=float(weight))


@dataclass(frozen=True)
class SolverConfig:
    n_components: int = 1
    penalty1: PenaltySpec = field(default_factory=no_penalty)
    penalty2: PenaltySpec = field(default_factory=no_penalty)
    alpha1: float = 0.0
    alpha2: float = 0.0
    inner_tol: float = 1e-9
    outer_tol: float = 1e-7
    max_inner: int = 5000
    max_outer: int = 500
    madmm_rho: float = 1.0

    def __post_init__(self):
        if self.n_components < 1:
            raise DomainError("n_components must be >= 1")
        if self.inner_tol <= 0 or self.outer_tol <= 0:
            raise DomainError("tolerances must be positive")
        if self.max_inner < 1 or self.max_outer < 1:
            raise DomainError("iteration caps must be >= 1")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise DomainError("smoothing weights must be nonnegative")


@dataclass
class FactorPair:
    """Estimated factor matrices with per-column diagnostics."""

    u_hat: np.ndarray
    v_hat: np.ndarray
    s_norms_u: np.ndarray
    s_norms_v: np.ndarray
    objective_trace: list
    converged: np.ndarray
    component_values: np.ndarray
    warnings: list = field(default_factory=list)
    inner_monotone_violation: float = 0.0

    @property
    def n_components(self):
        return self.u_hat.shape[1]


@dataclass
class Rank1Result:
    u: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    monotone_violation: float


def objective(U, V, C, cfg: SolverConfig):
    """Tr(U' C V) minus both penalty terms."""
    U = np.atleast_2d(np.asarray(U, dtype=float).T).T
    V = np.atleast_2d(np.asarray(V, dtype=float).T).T
    if U.shape[0] != C.shape[0] or V.shape[0] != C.shape[1] or U.shape[1] != V.shape[1]:
        raise DomainError("shape mismatch between factors and cross-product")
    return (
        float(np.trace(U.T @ C @ V)) - cfg.penalty1.value(U) - cfg.penalty2.value(V)
    )


def penalty_upper_bound(C):
    """Largest absolute entry of C; an empirically sufficient l1 weight for
    the trivial (all-zero) solution from the standard initialization."""
    C = np.asarray(C, dtype=float)
    return float(np.max(np.abs(C))) if C.size else 0.0


def _subproblem_objective(u, b, S: SmoothingOperator, penalty: PenaltySpec):
    # 0.5*||b - u||^2 + lambda*P(u) + (alpha/2) * u'Lu
    r = b - u
    smooth = 0.5 * float(r @ r)
    if S.alpha > 0:
        smooth += 0.5 * S.alpha * float(u @ (S.laplacian @ u))
    return smooth + penalty.value(u)


def rank1_subproblem(C, v_fixed, S: SmoothingOperator, penalty: PenaltySpec,
                     tol=1e-9, max_iter=5000, u0=None):
    """Proximal-gradient solve of the penalized rank-1 subproblem.

    Iterates u <- prox((lambda/ell) P)(u + (1/ell)(C v - S u)) followed by
    projection onto the S-ball, until the relative iterate change drops
    below tol. Returns the iterate with its objective trace; for convex
    penalties the trace is nonincreasing.
    """
    v_fixed = np.asarray(v_fixed, dtype=float)
    if not np.all(np.isfinite(v_fixed)):
        raise DomainError("v_fixed contains non-finite entries")
    b = C @ v_fixed
    ell = S.ell
    # The recursion runs on the raw proximal-gradient iterate; the S-ball
    # case split only shapes the exported vector. Feeding the projected
    # iterate back would break the monotone-descent guarantee.
    u = np.zeros(C.shape[0]) if u0 is None else np.asarray(u0, dtype=float).copy()

    trace = [_subproblem_objective(u, b, S, penalty)]
    violation = 0.0
    for it in range(1, max_iter + 1):
        grad_step = u + (b - S.matrix @ u) / ell
        u_new = penalty.prox(grad_step, 1.0 / ell)
        obj = _subproblem_objective(u_new, b, S, penalty)
        violation = max(violation, (obj - trace[-1]) / (1.0 + abs(trace[-1])))
        trace.append(obj)
        change = np.linalg.norm(u_new - u) / max(np.linalg.norm(u), 1e-300)
        u = u_new
        if change < tol or (not np.any(u) and it > 1):
            return Rank1Result(project_s_ball(u, S), np.asarray(trace), it, violation)
    raise SolverError(
        f"rank-1 subproblem did not converge in {max_iter} iterations "
        f"(last relative change {change:.3e})",
        trace=np.asarray(trace),
        last_iterate=u,
    )


def deflate(C, u, v):
    """Hotelling-style deflation C - C v u' C / (u' C v).

    The returned matrix annihilates u on the left and v on the right.
    """
    C = np.asarray(C, dtype=float)
    Cv = C @ v
    uC = u @ C
    pivot = float(u @ Cv)
    scale = np.linalg.norm(C)
    if abs(pivot) <= 1e-12 * scale:
        raise DegeneratePivotError(
            f"deflation pivot {pivot:.3e} is negligible relative to ||C|| = {scale:.3e}"
        )
    return C - np.outer(Cv, uC) / pivot


def _normalize_column(u, S):
    nrm = s_norm(u, S)
    if nrm == 0.0:
        return u, 0.0
    return u / nrm, 1.0


def sgpls_greedy(C, S1: SmoothingOperator, S2: SmoothingOperator, cfg: SolverConfig):
    """Greedy SGPLS: per component, alternate penalized rank-1 subproblems
    initialized from the leading singular pair, then deflate.

    On a degenerate component (zero factor or negligible pivot) the
    remaining columns are returned as zeros with a structured warning
    rather than dividing by a near-zero pivot.
    """
    C = np.asarray(C, dtype=float)
    n1, n2 = C.shape
    K = cfg.n_components
    if K > min(n1, n2):
        raise DomainError("n_components exceeds min(n1, n2)")

    U = np.zeros((n1, K))
    V = np.zeros((n2, K))
    converged = np.zeros(K, dtype=bool)
    values = np.zeros(K)
    traces = []
    warns = []
    violation = 0.0

    Ck = C.copy()
    scale0 = np.linalg.norm(C)
    for k in range(K):
        if np.linalg.norm(Ck) <= 1e-14 * max(scale0, 1.0):
            warns.append(f"component {k}: residual matrix is zero; stopping early")
            break
        try:
            trip = leading_singular_pair(Ck, tol=1e-10, max_iter=10_000)
            u0, v0 = trip.left, trip.right
        except PowerIterationError as exc:
            # Near-degenerate leading singular values stall the power
            # iteration; its last iterate is still an excellent initializer.
            v0 = exc.last_iterate
            u0 = Ck @ v0
            u0 /= np.linalg.norm(u0)
        u = project_s_ball(u0, S1)
        v = project_s_ball(v0, S2)

        comp_trace = []
        ok = False
        for _ in range(cfg.max_outer):
            ru = rank1_subproblem(Ck, v, S1, cfg.penalty1,
                                  tol=cfg.inner_tol, max_iter=cfg.max_inner, u0=u)
            rv = rank1_subproblem(Ck.T, ru.u, S2, cfg.penalty2,
                                  tol=cfg.inner_tol, max_iter=cfg.max_inner, u0=v)
            violation = max(violation, ru.monotone_violation, rv.monotone_violation)
            u_new, v_new = ru.u, rv.u
            rank1_cfg_obj = (
                float(u_new @ (Ck @ v_new))
                - cfg.penalty1.value(u_new)
                - cfg.penalty2.value(v_new)
            )
            comp_trace.append(rank1_cfg_obj)
            prev = np.concatenate([u, v])
            cur = np.concatenate([u_new, v_new])
            change = np.linalg.norm(cur - prev) / max(np.linalg.norm(prev), 1e-300)
            u, v = u_new, v_new
            if not np.any(u) or not np.any(v):
                ok = True  # converged to the trivial solution
                break
            if change < cfg.outer_tol:
                ok = True
                break
        traces.append(comp_trace)
        if not ok:
            raise SolverError(
                f"component {k}: alternation did not converge in "
                f"{cfg.max_outer} outer iterations",
                trace=comp_trace,
            )

        if not np.any(u) or not np.any(v):
            warns.append(
                f"component {k}: trivial (zero) solution; remaining "
                f"components left at zero (penalty weight at or above the "
                f"degenerate threshold)"
            )
            break

        # Optimal nonzero columns sit on the unit S-sphere; renormalize to
        # pin the norm exactly before recording and deflating.
        u, _ = _normalize_column(u, S1)
        v, _ = _normalize_column(v, S2)
        pivot = float(u @ (Ck @ v))
        if pivot < 0:
            v = -v
            pivot = -pivot
        u, flipped = fix_sign(u)
        if flipped:
            v = -v
        if pivot <= 1e-12 * max(scale0, 1.0):
            warns.append(
                f"component {k}: degenerate pivot {pivot:.3e}; stopping early "
                f"with {k} components"
            )
            break
        U[:, k] = u
        V[:, k] = v
        values[k] = pivot
        converged[k] = True
        Ck = deflate(Ck, u, v)

    return FactorPair(
        u_hat=U,
        v_hat=V,
        s_norms_u=np.array([s_norm(U[:, k], S1) for k in range(K)]),
        s_norms_v=np.array([s_norm(V[:, k], S2) for k in range(K)]),
        objective_trace=traces,
        converged=converged,
        component_values=values,
        warnings=warns,
        inner_monotone_violation=violation,
    )


def _madmm_subproblem(M, S: SmoothingOperator, penalty: PenaltySpec,
                      cfg: SolverConfig, state=None):
    """Minimize -Tr(U'M) + lambda*P(U) over U'SU = I by manifold ADMM.

    Splitting U = Z: manifold step is a generalized Procrustes on
    M + rho (Z - D), Z-step is the penalty prox, D the scaled dual.
    Returns (Z, state) where Z is the sparse iterate; passing the state
    back in warm-starts the splitting variables, which keeps the outer
    alternation from limit-cycling between cold-started solves.
    """
    n, K = M.shape
    if state is None:
        rho = cfg.madmm_rho
        U = generalized_procrustes(M, S)
        Z = U.copy()
        D = np.zeros_like(U)
    else:
        Z, D, rho = state
    sqrt_nk = np.sqrt(n * K)
    # Rescale rho only every few iterations and freeze it after a warm-up
    # phase: adapting on every iteration can toggle rho back and forth
    # across the 10x residual trigger, repeatedly rescaling the dual and
    # stalling the iteration before the residuals can decay.
    adapt_every = 10
    adapt_until = min(cfg.max_inner // 2, 500)
    for it in range(1, cfg.max_inner + 1):
        U = generalized_procrustes(M + rho * (Z - D), S)
        Z_new = penalty.prox(U + D, 1.0 / rho)
        r_primal = np.linalg.norm(U - Z_new)
        r_dual = rho * np.linalg.norm(Z_new - Z)
        D = D + U - Z_new
        Z = Z_new
        eps_pri = sqrt_nk * 1e-12 + 1e-8 * max(np.linalg.norm(U), np.linalg.norm(Z))
        eps_dual = sqrt_nk * 1e-12 + 1e-8 * rho * np.linalg.norm(D)
        if r_primal <= eps_pri and r_dual <= eps_dual:
            break
        if it % adapt_every == 0 and it <= adapt_until:
            if r_primal > 10 * r_dual and rho < 1e8:
                rho *= 2.0
                D /= 2.0
            elif r_dual > 10 * r_primal and rho > 1e-8:
                rho /= 2.0
                D *= 2.0
    return Z, (Z, D, rho)


def sgpls_multirank(C, S1: SmoothingOperator, S2: SmoothingOperator,
                    cfg: SolverConfig):
    """Multi-rank SGPLS: alternate manifold-ADMM subproblems for U and V
    from a truncated-SVD start until the objective stabilizes.

    The objective trace is recorded but monotonicity is not guaranteed
    (manifold ADMM is a heuristic).
    """
    C = np.asarray(C, dtype=float)
    n1, n2 = C.shape
    K = cfg.n_components
    if K > min(n1, n2):
        raise DomainError("n_components exceeds min(n1, n2)")

    Ul, sv, Vt = np.linalg.svd(C, full_matrices=False)
    U = project_conv_stiefel(Ul[:, :K], S1)
    V = project_conv_stiefel(Vt[:K].T, S2)

    trace = [objective(U, V, C, cfg)]
    converged = False
    state_u = state_v = None
    for _ in range(cfg.max_outer):
        U, state_u = _madmm_subproblem(C @ V, S1, cfg.penalty1, cfg, state_u)
        V, state_v = _madmm_subproblem(C.T @ U, S2, cfg.penalty2, cfg, state_v)
        obj = objective(U, V, C, cfg)
        done = abs(obj - trace[-1]) < cfg.outer_tol * (1.0 + abs(trace[-1]))
        trace.append(obj)
        if done:
            converged = True
            break
    if not converged:
        raise SolverError(
            f"multirank alternation did not converge in {cfg.max_outer} "
            f"outer iterations",
            trace=trace,
        )

    warns = []
    for (F, S, side) in ((U, S1, "U"), (V, S2, "V")):
        for k in range(K):
            col, nz = _normalize_column(F[:, k], S)
            F[:, k] = col
            if nz == 0.0:
                warns.append(f"multirank: zero column {k} in {side}")
    for k in range(K):
        U[:, k], flipped = fix_sign(U[:, k])
        if flipped:
            V[:, k] = -V[:, k]

    return FactorPair(
        u_hat=U,
        v_hat=V,
        s_norms_u=np.array([s_norm(U[:, k], S1) for k in range(K)]),
        s_norms_v=np.array([s_norm(V[:, k], S2) for k in range(K)]),
        objective_trace=[trace],
        converged=np.full(K, True),
        component_values=np.array([float(U[:, k] @ C @ V[:, k]) for k in range(K)]),
        warnings=warns,
    )
