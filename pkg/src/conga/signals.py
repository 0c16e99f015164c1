"""Paired graph-signal generation on two community-aligned graphs, and the
cross-product matrix the solvers decompose.

Generative process per sample: one community pair is active (chosen
uniformly), each of its nodes is selected independently with probability s
in each graph, the selected nodes share a total clean energy equally, and
IID Gaussian noise is added at every node of both graphs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .graphs import Membership, make_rng
from .linalg import DomainError


class DataFormatError(ValueError):
    """A serialized matrix file is malformed."""


@dataclass(frozen=True)
class SimulationConfig:
    """Complete generative description of a benchmark dataset."""

    sizes1: tuple
    sizes2: tuple
    p_intra: float
    q_inter: float
    m: int
    s: float
    energy: float
    sigma: float
    seed: int
    rng: str = "philox"

    def __post_init__(self):
        if len(self.sizes1) != len(self.sizes2) or len(self.sizes1) < 1:
            raise DomainError("sizes1 and sizes2 must be nonempty, equal length")
        if not 0.0 <= self.s <= 1.0:
            raise DomainError("selection probability s must lie in [0, 1]")
        if self.energy <= 0:
            raise DomainError("energy must be positive")
        if self.sigma < 0:
            raise DomainError("sigma must be nonnegative")
        if self.m < 1:
            raise DomainError("sample count m must be >= 1")

    @property
    def n_communities(self):
        return len(self.sizes1)

    @property
    def n1(self):
        return int(sum(self.sizes1))

    @property
    def n2(self):
        return int(sum(self.sizes2))

    def to_dict(self):
        d = dict(self.__dict__)
        d["sizes1"] = list(self.sizes1)
        d["sizes2"] = list(self.sizes2)
        return d


@dataclass(frozen=True)
class SignalDataset:
    """Paired signal matrices with equal sample counts."""

    x1: np.ndarray
    x2: np.ndarray
    provenance: SimulationConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.x1.ndim != 2 or self.x2.ndim != 2:
            raise DomainError("signal matrices must be 2-d")
        if self.x1.shape[0] != self.x2.shape[0]:
            raise DomainError("x1 and x2 must have the same number of samples")
        if not (np.all(np.isfinite(self.x1)) and np.all(np.isfinite(self.x2))):
            raise DomainError("signal matrices contain non-finite entries")

    @property
    def m(self):
        return self.x1.shape[0]


def _clean_block(mem: Membership, active, energy, s, rng):
    """Clean signal matrix for one graph given per-sample active communities."""
    m = active.size
    n = mem.assignment.size
    X = np.zeros((m, n))
    members = [mem.nodes_in(k) for k in range(mem.n_communities)]
    for t in range(m):
        nodes = members[active[t]]
        selected = nodes[rng.random(nodes.size) < s]
        if selected.size:
            X[t, selected] = np.sqrt(energy / selected.size)
    return X


def generate_paired_signals(mem1: Membership, mem2: Membership,
                            cfg: SimulationConfig, rng=None):
    """Draw the paired dataset described by ``cfg``. Deterministic per seed.

    A sample whose active community selects zero nodes in one graph
    contributes a pure-noise row for that graph; samples stay independent.
    An explicit ``rng`` overrides the config seed (used when one base seed
    is split across graphs and signals).
    """
    if mem1.n_communities != mem2.n_communities:
        raise DomainError("membership community counts differ between graphs")
    if mem1.n_communities != cfg.n_communities:
        raise DomainError("config community count does not match memberships")

    if rng is None:
        rng = make_rng(cfg.seed)
    active = rng.integers(0, cfg.n_communities, size=cfg.m)
    x1 = _clean_block(mem1, active, cfg.energy, cfg.s, rng)
    x2 = _clean_block(mem2, active, cfg.energy, cfg.s, rng)
    if cfg.sigma > 0:
        x1 = x1 + rng.normal(0.0, cfg.sigma, size=x1.shape)
        x2 = x2 + rng.normal(0.0, cfg.sigma, size=x2.shape)
    return SignalDataset(x1=x1, x2=x2, provenance=cfg)


def cross_product(d: SignalDataset):
    """C = X1' X2, the n1 x n2 matrix of per-node-pair inner products."""
    return d.x1.T @ d.x2


def snr_summary(cfg: SimulationConfig):
    """Report signal-to-noise under two natural definitions, per graph.

    * energy ratio: clean per-sample energy over expected noise energy,
      energy / (n * sigma^2).
    * amplitude ratio: typical clean amplitude over noise scale,
      sqrt(energy / (s * mean community size)) / sigma.

    Nothing here is calibrated to any external reference value.
    """
    out = {}
    for name, sizes in (("graph1", cfg.sizes1), ("graph2", cfg.sizes2)):
        n = float(sum(sizes))
        mean_size = n / len(sizes)
        if cfg.sigma == 0:
            out[name] = {"energy_ratio": np.inf, "amplitude_ratio": np.inf}
            continue
        out[name] = {
            "energy_ratio": cfg.energy / (n * cfg.sigma**2),
            "amplitude_ratio": np.sqrt(cfg.energy / (cfg.s * mean_size)) / cfg.sigma,
        }
    return out


# ---------------------------------------------------------------------------
# Serialization

_MAGIC = b"CNGA"


def write_matrix_csv(path, X):
    """One sample per row, header `n=<cols>`, 17 significant digits."""
    X = np.asarray(X, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"n={X.shape[1]}\n")
        for row in X:
            fh.write(",".join(format(v, ".17g") for v in row))
            fh.write("\n")


def read_matrix_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("n="):
            raise DataFormatError(f"{path}: missing 'n=<cols>' header")
        cols = int(header[2:])
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            vals = [float(v) for v in line.split(",")]
            if len(vals) != cols:
                raise DataFormatError(f"{path}: row with {len(vals)} != {cols} columns")
            rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows)


def write_matrix_binary(path, X):
    """Magic CNGA, u32 rows, u32 cols, f64 entries row-major, little-endian."""
    X = np.ascontiguousarray(X, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", X.shape[0], X.shape[1]))
        fh.write(X.tobytes())


def read_matrix_binary(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        rows, cols = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
        if data.size != rows * cols:
            raise DataFormatError(f"{path}: truncated payload")
    return data.reshape(rows, cols).astype(float)
