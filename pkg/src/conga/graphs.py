"""Undirected simple graphs, stochastic block model sampling, normalized
Laplacians, and smoothing operators S = I + alpha*L.

Randomness uses numpy's counter-based Philox generator so that every
artifact is reproducible from the seed recorded in the run config
(algorithm identifier: "philox", numpy's Philox4x64-10).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import DomainError, lambda_max, symmetric_sqrt_factors

RNG_ALGORITHM = "philox"

UNASSIGNED = -1


def make_rng(seed):
    """Seeded counter-based generator; accepts ints or SeedSequences."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph held as a dense symmetric 0/1 adjacency."""

    n: int
    adjacency: np.ndarray

    def __post_init__(self):
        A = self.adjacency
        if A.shape != (self.n, self.n):
            raise DomainError("adjacency shape does not match node count")
        if not np.array_equal(A, A.T):
            raise DomainError("adjacency must be symmetric")
        if np.any(np.diag(A) != 0):
            raise DomainError("adjacency diagonal must be zero")
        if not np.isin(A, (0, 1)).all():
            raise DomainError("adjacency entries must be 0 or 1")

    @property
    def degrees(self):
        return self.adjacency.sum(axis=1)


@dataclass(frozen=True)
class Membership:
    """Per-node community labels in {0..K-1}, UNASSIGNED (-1) allowed."""

    assignment: np.ndarray
    n_communities: int

    def __post_init__(self):
        a = self.assignment
        if a.ndim != 1:
            raise DomainError("assignment must be a vector")
        if np.any((a < UNASSIGNED) | (a >= self.n_communities)):
            raise DomainError("community labels out of range")

    @property
    def sizes(self):
        return np.bincount(
            self.assignment[self.assignment != UNASSIGNED],
            minlength=self.n_communities,
        )

    def nodes_in(self, k):
        return np.flatnonzero(self.assignment == k)


@dataclass
class SmoothingOperator:
    """S = I + alpha*L with the leading eigenvalue ell cached.

    Square-root factors S^{1/2}, S^{-1/2} are computed lazily by dense
    symmetric eigen-decomposition and cached.
    """

    alpha: float
    laplacian: np.ndarray
    matrix: np.ndarray
    ell: float
    _sqrt: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def sqrt_factors(self):
        if self._sqrt is None:
            self._sqrt = symmetric_sqrt_factors(self.matrix)
        return self._sqrt


def sbm_generate(sizes, p_intra, q_inter, seed):
    """Sample a stochastic block model graph and its ground-truth membership.

    Each unordered node pair is an edge independently with probability
    p_intra if the endpoints share a community, else q_inter. Deterministic
    for a fixed seed.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) == 0:
        raise DomainError("community size list is empty")
    if any(s < 1 for s in sizes):
        raise DomainError("community sizes must be >= 1")
    if not (0.0 <= q_inter <= p_intra <= 1.0):
        raise DomainError("require 0 <= q_inter <= p_intra <= 1")

    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_intra, q_inter)

    rng = make_rng(seed)
    draws = rng.random((n, n))
    upper = np.triu(draws < prob, k=1)
    A = (upper | upper.T).astype(np.int8)

    return Graph(n=n, adjacency=A), Membership(labels, len(sizes))


def normalized_laplacian(g: Graph):
    """Symmetric normalized Laplacian L = I - D^{-1/2} A D^{-1/2}.

    Isolated nodes use 0 in place of the undefined D^{-1/2} entry, so their
    row/column is zero off-diagonal and L_ii = 1.
    """
    d = g.degrees.astype(float)
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    L = np.eye(g.n) - inv_sqrt[:, None] * g.adjacency * inv_sqrt[None, :]
    return (L + L.T) / 2.0


def smoothing_operator(L, alpha, tol=1e-10):
    """Build S = I + alpha*L and cache its leading eigenvalue."""
    if alpha < 0:
        raise DomainError("smoothing weight alpha must be nonnegative")
    L = np.asarray(L, dtype=float)
    S = np.eye(L.shape[0]) + alpha * L
    ell = lambda_max(S, tol=tol) if alpha > 0 else 1.0
    return SmoothingOperator(alpha=float(alpha), laplacian=L, matrix=S, ell=ell)


# ---------------------------------------------------------------------------
# File formats


def write_edge_list(path, g: Graph):
    """One `u<TAB>v` line per undirected edge, header `# nodes=<n>`."""
    i, j = np.nonzero(np.triu(g.adjacency, k=1))
    with open(path, "w") as fh:
        fh.write(f"# nodes={g.n}\n")
        for u, v in zip(i, j):
            fh.write(f"{u}\t{v}\n")


def read_edge_list(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# nodes="):
            raise DomainError(f"{path}: missing '# nodes=' header")
        n = int(header.split("=", 1)[1])
        A = np.zeros((n, n), dtype=np.int8)
        for line in fh:
            line = line.strip()
            if not line:
                continue
            u, v = map(int, line.split("\t"))
            A[u, v] = A[v, u] = 1
    return Graph(n=n, adjacency=A)


def write_membership(path, mem: Membership):
    """CSV with columns node,community."""
    with open(path, "w") as fh:
        fh.write("node,community\n")
        for i, k in enumerate(mem.assignment):
            fh.write(f"{i},{int(k)}\n")


def read_membership(path):
    nodes, labels = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "node,community":
            raise DomainError(f"{path}: expected 'node,community' header")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, b = line.split(",")
            nodes.append(int(a))
            labels.append(int(b))
    assignment = np.full(len(nodes), UNASSIGNED, dtype=int)
    assignment[np.asarray(nodes)] = labels
    k = int(assignment.max()) + 1 if assignment.size else 0
    return Membership(assignment, max(k, 1))
