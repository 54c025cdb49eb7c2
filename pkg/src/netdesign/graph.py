"""Network and covariate containers, generators, loaders and repairs.

Adjacency is kept sparse (edge tuples plus a CSR matrix built on demand);
dense n-by-n arrays are only materialized by downstream numerics that
need them.  Node ids are always 0-based and dense internally; the loaders
accept 1-based files through a flag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy import sparse

from .errors import DataError, GraphFormatError, RankError

__all__ = [
    "Network",
    "CovariateMatrix",
    "RepairResult",
    "generate_bernoulli_network",
    "generate_pm1_covariates",
    "load_edge_list",
    "write_edge_list",
    "load_covariates",
    "write_covariates",
    "repair_isolated",
    "subsample_network",
    "paired_bipartite_instance",
]


@dataclass(frozen=True)
class Network:
    """Simple undirected graph on nodes 0..n-1 with no self loops.

    Attributes:
        n: number of nodes.
        edges: canonical edge tuple, each entry (i, j) with i < j, sorted.
    """

    n: int
    edges: tuple = field(default=())

    @staticmethod
    def from_edges(n: int, pairs: Iterable[tuple]) -> "Network":
        """Build a network from an iterable of node pairs.

        Duplicate pairs (in either orientation) collapse to one edge.
        Raises GraphFormatError on self loops or out-of-range ids.
        """
        if n < 1:
            raise DataError(f"need at least one node, got n={n}")
        canon = set()
        for a, b in pairs:
            a, b = int(a), int(b)
            if a == b:
                raise GraphFormatError(f"self loop at node {a} is not allowed")
            if not (0 <= a < n and 0 <= b < n):
                raise GraphFormatError(f"edge ({a}, {b}) outside node range 0..{n - 1}")
            canon.add((a, b) if a < b else (b, a))
        return Network(n=n, edges=tuple(sorted(canon)))

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    @property
    def m(self) -> int:
        """Total degree: twice the edge count."""
        return 2 * len(self.edges)

    @cached_property
    def adjacency(self) -> sparse.csr_array:
        """Symmetric 0/1 adjacency matrix in CSR form."""
        if not self.edges:
            return sparse.csr_array((self.n, self.n), dtype=np.float64)
        ij = np.asarray(self.edges, dtype=np.int64)
        rows = np.concatenate([ij[:, 0], ij[:, 1]])
        cols = np.concatenate([ij[:, 1], ij[:, 0]])
        data = np.ones(rows.size, dtype=np.float64)
        return sparse.csr_array((data, (rows, cols)), shape=(self.n, self.n))

    @property
    def isolated_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.degrees == 0)

    def __repr__(self) -> str:
        return f"Network(n={self.n}, edges={len(self.edges)})"


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    """Covariates with a leading intercept column.

    Attributes:
        values: n-by-(p+1) float array; column 0 is all ones; full column
            rank is checked at construction.
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise DataError("covariate matrix must be 2-dimensional and non-empty")
        if not np.all(vals[:, 0] == 1.0):
            raise DataError("first covariate column must be the intercept (all ones)")
        if np.linalg.matrix_rank(vals) < vals.shape[1]:
            raise RankError(
                f"covariate matrix with {vals.shape[1]} columns is rank deficient"
            )
        object.__setattr__(self, "values", vals)

    @staticmethod
    def from_raw(z: np.ndarray) -> "CovariateMatrix":
        """Prepend an intercept column to raw covariates z (n-by-p).

        A 1-d input of length n is treated as a single covariate.
        """
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        ones = np.ones((z.shape[0], 1))
        return CovariateMatrix(np.hstack([ones, z]))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        """Number of covariates, excluding the intercept."""
        return self.values.shape[1] - 1

    def rows(self, idx: np.ndarray) -> "CovariateMatrix":
        return CovariateMatrix(self.values[np.asarray(idx)])

    def __repr__(self) -> str:
        return f"CovariateMatrix(n={self.n}, p={self.p})"


@dataclass(frozen=True)
class RepairResult:
    """Outcome of an isolated-node repair.

    kept maps new node ids to the old ones; for the connect strategy it is
    the identity.
    """

    network: Network
    kept: np.ndarray


def generate_bernoulli_network(n: int, density: float, seed: int) -> Network:
    """Erdos-Renyi graph: each of the n(n-1)/2 pairs is an edge independently.

    Args:
        n: node count, at least 2.
        density: edge probability in [0, 1].
        seed: RNG seed; equal seeds give bit-identical networks.
    """
    if n < 2:
        raise DataError(f"need n >= 2 nodes, got {n}")
    if not 0.0 <= density <= 1.0:
        raise DataError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n - 1):
        hits = np.flatnonzero(rng.random(n - 1 - i) < density)
        pairs.extend((i, i + 1 + int(j)) for j in hits)
    return Network(n=n, edges=tuple(pairs))


def generate_pm1_covariates(n: int, p: int, seed: int) -> CovariateMatrix:
    """Covariates with iid +/-1 entries plus intercept; redraws if rank deficient."""
    if p < 0:
        raise DataError(f"need p >= 0 covariates, got {p}")
    rng = np.random.default_rng(seed)
    for _ in range(32):
        z = rng.integers(0, 2, size=(n, p)) * 2.0 - 1.0
        try:
            return CovariateMatrix.from_raw(z)
        except RankError:
            continue
    raise RankError(f"could not draw full-rank +/-1 covariates with n={n}, p={p}")


def load_edge_list(path, index_base: int = 0) -> Network:
    """Read a whitespace-separated edge list.

    One edge per line as two integer node ids; blank lines and lines whose
    first non-blank character is '#' are ignored.  Node count is inferred
    from the maximum id seen.

    Args:
        path: file to read.
        index_base: 0 for files whose ids start at 0, 1 for 1-based files.
    """
    if index_base not in (0, 1):
        raise DataError(f"index_base must be 0 or 1, got {index_base}")
    pairs = []
    max_id = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected two node ids, got {len(parts)} fields"
                )
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(
                    f"{path}:{lineno}: non-integer node id in {parts!r}"
                ) from None
            a -= index_base
            b -= index_base
            if a < 0 or b < 0:
                raise GraphFormatError(
                    f"{path}:{lineno}: node id below {index_base} "
                    f"(file declared {index_base}-based)"
                )
            if a == b:
                raise GraphFormatError(f"{path}:{lineno}: self loop at node {a + index_base}")
            pairs.append((a, b))
            max_id = max(max_id, a, b)
    if max_id < 0:
        raise GraphFormatError(f"{path}: no edges found")
    return Network.from_edges(max_id + 1, pairs)


def write_edge_list(net: Network, path) -> None:
    """Write the canonical (sorted, 0-based) edge list."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes: {net.n}\n")
        for a, b in net.edges:
            fh.write(f"{a} {b}\n")


def load_covariates(path, keep_first: int | None = None, header: bool = False) -> CovariateMatrix:
    """Read raw covariates from CSV (no intercept column in the file).

    Comma-separated, one row per node, no header unless header=True skips
    one line.  Columns beyond keep_first are discarded, then constant
    columns are dropped with a warning naming their indices, then the
    intercept is prepended and full rank checked.
    """
    rows = []
    ncol = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if ncol is None:
                ncol = len(parts)
            elif len(parts) != ncol:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected {ncol} fields, got {len(parts)}"
                )
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise GraphFormatError(
                    f"{path}:{lineno}: non-numeric covariate value"
                ) from None
    if not rows:
        raise GraphFormatError(f"{path}: no covariate rows found")
    z = np.asarray(rows, dtype=np.float64)
    if keep_first is not None:
        if keep_first < 0:
            raise DataError(f"keep_first must be non-negative, got {keep_first}")
        z = z[:, :keep_first]
    constant = np.flatnonzero(np.all(z == z[0:1, :], axis=0)) if z.shape[0] else np.array([])
    if constant.size:
        warnings.warn(
            f"dropping constant covariate columns {constant.tolist()} from {path}",
            stacklevel=2,
        )
        z = np.delete(z, constant, axis=1)
    return CovariateMatrix.from_raw(z)


def write_covariates(z: np.ndarray, path) -> None:
    """Write raw covariates (no intercept) as plain CSV."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    with open(path, "w", encoding="utf-8") as fh:
        for row in z:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def repair_isolated(net: Network, strategy: str, seed: int | None = None) -> RepairResult:
    """Make every degree at least one.

    strategy "connect": scan nodes in index order; any node still isolated
    gains exactly one edge to a uniformly chosen other node.  strategy
    "remove": drop isolated nodes and reindex the rest densely; kept gives
    the old id of each new node.
    """
    if strategy == "connect":
        rng = np.random.default_rng(seed)
        pairs = list(net.edges)
        deg = net.degrees.copy()
        for node in range(net.n):
            if deg[node] > 0:
                continue
            other = int(rng.integers(0, net.n - 1))
            if other >= node:
                other += 1
            pairs.append((node, other))
            deg[node] += 1
            deg[other] += 1
        return RepairResult(Network.from_edges(net.n, pairs), np.arange(net.n))
    if strategy == "remove":
        kept = np.flatnonzero(net.degrees > 0)
        if kept.size == 0:
            raise DataError("cannot remove isolated nodes: the network has no edges")
        new_id = -np.ones(net.n, dtype=np.int64)
        new_id[kept] = np.arange(kept.size)
        pairs = [(new_id[a], new_id[b]) for a, b in net.edges]
        return RepairResult(Network.from_edges(kept.size, pairs), kept)
    raise DataError(f"unknown repair strategy {strategy!r}; use 'connect' or 'remove'")


def subsample_network(
    net: Network, cov: CovariateMatrix, k: int, seed: int
) -> tuple[Network, CovariateMatrix]:
    """Induced subgraph on k uniformly chosen nodes, with matching covariate rows.

    The sampled node set is sorted ascending, so k == n returns the network
    unchanged.  Isolated nodes may appear in the result; repair separately.
    """
    if cov.n != net.n:
        raise DataError(f"covariate rows ({cov.n}) do not match node count ({net.n})")
    if not 1 <= k <= net.n:
        raise DataError(f"subsample size must lie in 1..{net.n}, got {k}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(net.n, size=k, replace=False))
    new_id = -np.ones(net.n, dtype=np.int64)
    new_id[chosen] = np.arange(k)
    pairs = [
        (new_id[a], new_id[b]) for a, b in net.edges if new_id[a] >= 0 and new_id[b] >= 0
    ]
    return Network.from_edges(k, pairs), cov.rows(chosen)


def paired_bipartite_instance(n_pairs: int = 10) -> tuple[Network, CovariateMatrix]:
    """Bipartite demonstration instance: n_pairs disjoint partner edges.

    Nodes 0..n_pairs-1 form one side, their partners n_pairs..2*n_pairs-1
    the other.  A single +/-1 covariate alternates along each side and is
    shared within a pair, so cutting every edge can balance the covariate
    exactly while making every edge cross the two arms.
    """
    if n_pairs < 2:
        raise DataError(f"need at least 2 pairs, got {n_pairs}")
    edges = [(i, i + n_pairs) for i in range(n_pairs)]
    z_side = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n_pairs)])
    z = np.concatenate([z_side, z_side]).reshape(-1, 1)
    return Network.from_edges(2 * n_pairs, edges), CovariateMatrix.from_raw(z)
