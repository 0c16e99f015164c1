"""Turn factor matrices into community assignments, score them against
ground truth under the best joint label permutation, and run the
four-variant (PLS / SPLS / GPLS / SGPLS) oracle-tuned comparison.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .graphs import UNASSIGNED, Membership, smoothing_operator
from .linalg import DomainError
from .signals import SignalDataset, cross_product
from .solver import (
    PenaltySpec,
    SolverConfig,
    l1_penalty,
    no_penalty,
    penalty_upper_bound,
    sgpls_greedy,
    sgpls_multirank,
)

VARIANTS = ("PLS", "SPLS", "GPLS", "SGPLS")

MAX_PERMUTATION_K = 8

# Assignment threshold: separates numerically-zero entries produced by
# soft-thresholding from true support, relative to the largest magnitude.
DEFAULT_TAU_REL = 1e-6


@dataclass(frozen=True)
class AssignmentResult:
    assignment: np.ndarray
    support_threshold: float
    source: str = ""

    @property
    def n_assigned(self):
        return int(np.sum(self.assignment != UNASSIGNED))


@dataclass(frozen=True)
class Scores:
    accuracy1: float
    accuracy2: float
    alignment_accuracy: float
    permutation: tuple
    assigned1: int
    assigned2: int
    empty1: bool
    empty2: bool

    @property
    def mean_accuracy(self):
        return 0.5 * (self.accuracy1 + self.accuracy2)

    def to_dict(self):
        d = dict(self.__dict__)
        d["permutation"] = list(self.permutation)
        return d


@dataclass
class ComparisonReport:
    rows: dict
    chosen_configs: dict
    factors: dict = field(default_factory=dict)
    max_inner_monotone_violation: float = 0.0


def extract_membership(F, tau=None, source=""):
    """Assign node i to argmax_k |F_ik| when that magnitude exceeds tau.

    tau defaults to DEFAULT_TAU_REL times the largest magnitude in F; ties
    go to the lowest component index; rows with no entry above tau are
    unassigned. Invariant under column-wise sign flips.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    mags = np.abs(F)
    if tau is None:
        tau = DEFAULT_TAU_REL * float(mags.max(initial=0.0))
    if tau < 0:
        raise DomainError("support threshold must be nonnegative")
    best = mags.argmax(axis=1)
    assignment = np.where(mags.max(axis=1) > tau, best, UNASSIGNED)
    return AssignmentResult(assignment=assignment, support_threshold=float(tau),
                            source=source)


def _correct_counts(est, truth, perm):
    assigned = est != UNASSIGNED
    relabeled = np.where(assigned, np.take(perm, est, mode="clip"), UNASSIGNED)
    return int(np.sum(assigned & (relabeled == truth))), int(assigned.sum())


def match_and_score(est1: AssignmentResult, est2: AssignmentResult,
                    truth1: Membership, truth2: Membership):
    """Score estimated communities against ground truth.

    A single permutation of component labels is applied jointly to both
    graphs (the cross-graph pairing is fixed by component index) and chosen
    to maximize the total number of correct assignments over both graphs.
    Per-graph accuracy is correct / assigned; an estimate with no assigned
    nodes scores 0 with its empty flag set. Alignment accuracy is the
    fraction of assigned cross-graph node pairs whose estimated community
    pair matches the true pair.
    """
    if truth1.n_communities != truth2.n_communities:
        raise DomainError("ground-truth community counts differ")
    K = truth1.n_communities
    if K > MAX_PERMUTATION_K:
        raise DomainError(
            f"brute-force permutation matching supports K <= {MAX_PERMUTATION_K}"
        )

    best = None
    for perm in itertools.permutations(range(K)):
        c1, a1 = _correct_counts(est1.assignment, truth1.assignment, perm)
        c2, a2 = _correct_counts(est2.assignment, truth2.assignment, perm)
        total = c1 + c2
        if best is None or total > best[0]:
            best = (total, perm, c1, a1, c2, a2)

    _, perm, c1, a1, c2, a2 = best
    acc1 = c1 / a1 if a1 else 0.0
    acc2 = c2 / a2 if a2 else 0.0
    alignment = (c1 * c2) / (a1 * a2) if a1 and a2 else 0.0
    return Scores(
        accuracy1=acc1,
        accuracy2=acc2,
        alignment_accuracy=alignment,
        permutation=perm,
        assigned1=a1,
        assigned2=a2,
        empty1=(a1 == 0),
        empty2=(a2 == 0),
    )


def score_factors(fit, truth1, truth2, tau=None):
    est1 = extract_membership(fit.u_hat, tau=tau, source="U")
    est2 = extract_membership(fit.v_hat, tau=tau, source="V")
    return match_and_score(est1, est2, truth1, truth2)


def _fit(C, S1, S2, cfg, algorithm):
    if algorithm == "greedy":
        return sgpls_greedy(C, S1, S2, cfg)
    if algorithm == "multirank":
        return sgpls_multirank(C, S1, S2, cfg)
    raise DomainError(f"unknown algorithm {algorithm!r}")


class _OperatorCache:
    """Smoothing operators keyed by alpha; Laplacians are fixed per dataset."""

    def __init__(self, lap1, lap2):
        self.lap1 = lap1
        self.lap2 = lap2
        self._cache = {}

    def pair(self, alpha1, alpha2):
        return self._get(1, alpha1), self._get(2, alpha2)

    def _get(self, side, alpha):
        key = (side, float(alpha))
        if key not in self._cache:
            lap = self.lap1 if side == 1 else self.lap2
            self._cache[key] = smoothing_operator(lap, alpha)
        return self._cache[key]


def oracle_tune(dataset: SignalDataset, truth1: Membership, truth2: Membership,
                lap1, lap2, grid, algorithm="greedy", ops=None):
    """Fit every grid config, score against ground truth, return the best.

    Smoothing operators are rebuilt per grid point from the Laplacians
    (alpha is a tuning parameter). Solver failures are recorded per grid
    point, not fatal. Ties break by grid order. Returns
    (best_config, best_row, all_rows).
    """
    if not grid:
        raise DomainError("tuning grid is empty")
    C = cross_product(dataset)
    ops = ops or _OperatorCache(lap1, lap2)

    rows = []
    best = None
    for idx, cfg in enumerate(grid):
        row = {
            "grid_index": idx,
            "lambda1": cfg.penalty1.weight,
            "lambda2": cfg.penalty2.weight,
            "alpha1": cfg.alpha1,
            "alpha2": cfg.alpha2,
        }
        t0 = time.perf_counter()
        try:
            S1, S2 = ops.pair(cfg.alpha1, cfg.alpha2)
            fit = _fit(C, S1, S2, cfg, algorithm)
            scores = score_factors(fit, truth1, truth2)
        except Exception as exc:  # recorded, not fatal
            row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
            continue
        row.update(scores.to_dict())
        row["mean_accuracy"] = scores.mean_accuracy
        row["support_sizes"] = [
            int(np.any(fit.u_hat, axis=1).sum()),
            int(np.any(fit.v_hat, axis=1).sum()),
        ]
        row["objective"] = float(np.sum(fit.component_values))
        row["runtime"] = time.perf_counter() - t0
        row["monotone_violation"] = fit.inner_monotone_violation
        rows.append(row)
        if best is None or scores.mean_accuracy > best[1]["mean_accuracy"]:
            best = (cfg, row, fit)

    if best is None:
        raise DomainError("every grid point failed; no tuned config available")
    return best[0], best[1], rows, best[2]


def variant_grid(variant, n_components, lambdas, alphas, base=None):
    """Grid for one variant; PLS pins lambda=alpha=0, SPLS pins alpha=0,
    GPLS pins lambda=0."""
    if variant not in VARIANTS:
        raise DomainError(f"unknown variant {variant!r}")
    base = base or SolverConfig(n_components=n_components)
    lam_values = [0.0] if variant in ("PLS", "GPLS") else list(lambdas)
    alpha_values = [0.0] if variant in ("PLS", "SPLS") else list(alphas)
    grid = []
    for lam in lam_values:
        pen = l1_penalty(lam) if lam > 0 else no_penalty()
        for alpha in alpha_values:
            grid.append(
                SolverConfig(
                    n_components=n_components,
                    penalty1=pen,
                    penalty2=pen,
                    alpha1=alpha,
                    alpha2=alpha,
                    inner_tol=base.inner_tol,
                    outer_tol=base.outer_tol,
                    max_inner=base.max_inner,
                    max_outer=base.max_outer,
                    madmm_rho=base.madmm_rho,
                )
            )
    return grid


def default_grids(C, n_components, n_lambda=5, n_alpha=5):
    """Log-spaced (lambda, alpha) tuning grids for all four variants.

    Lambda spans a fixed fraction range of the largest |C| entry; alpha
    spans roughly two decades. The ranges were calibrated once on the
    frozen benchmark seed set and are kept fixed so that benchmark results
    stay comparable across runs.
    """
    lam_ub = penalty_upper_bound(C)
    lambdas = lam_ub * np.logspace(-1.1, -0.5, n_lambda)
    alphas = np.logspace(-0.3, 1.6, n_alpha)
    return {
        v: variant_grid(v, n_components, lambdas, alphas) for v in VARIANTS
    }


def _validate_variant_grid(variant, grid):
    for cfg in grid:
        lam_zero = cfg.penalty1.weight == 0 and cfg.penalty2.weight == 0
        alpha_zero = cfg.alpha1 == 0 and cfg.alpha2 == 0
        if variant == "PLS" and not (lam_zero and alpha_zero):
            raise DomainError("PLS grid must pin lambda = alpha = 0")
        if variant == "SPLS" and not alpha_zero:
            raise DomainError("SPLS grid must pin alpha = 0")
        if variant == "GPLS" and not lam_zero:
            raise DomainError("GPLS grid must pin lambda = 0")


def run_variant_comparison(dataset: SignalDataset, truth1: Membership,
                           truth2: Membership, lap1, lap2, grids,
                           algorithm="greedy"):
    """Oracle-tune each variant on its grid and assemble the report."""
    ops = _OperatorCache(lap1, lap2)
    rows = {}
    chosen = {}
    factors = {}
    violation = 0.0
    for variant, grid in grids.items():
        _validate_variant_grid(variant, grid)
        cfg, row, all_rows, fit = oracle_tune(
            dataset, truth1, truth2, lap1, lap2, grid,
            algorithm=algorithm, ops=ops,
        )
        rows[variant] = row
        chosen[variant] = cfg
        factors[variant] = (fit.u_hat, fit.v_hat)
        violation = max(
            violation,
            max((r.get("monotone_violation", 0.0) for r in all_rows), default=0.0),
        )
    return ComparisonReport(
        rows=rows,
        chosen_configs=chosen,
        factors=factors,
        max_inner_monotone_violation=violation,
    )
