"""Data shards, federated datasets, and the shard CSV/manifest format.

A federated dataset is an ordered sequence of immutable shards; the first
shard plays the role of the master machine.  Shard files are CSVs with header
``y,x1,...,xp`` where the ``x1`` column is identically one, and a manifest
file lists shard paths in master-first order.
"""

import os
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DataShard:
    """One machine's immutable slice of the data."""

    y: np.ndarray
    X: np.ndarray
    shard_id: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if y.ndim != 1 or len(y) != X.shape[0]:
            raise ValueError("y length must match the number of rows of X")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("shard must contain at least one row and one column")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise ValueError("shard contains non-finite entries")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("first design column must be identically 1")
        y.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class FederatedDataset:
    """Ordered shards; index 0 is the master machine."""

    shards: list
    _pooled: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.shards:
            raise ValueError("need at least one shard")
        p = self.shards[0].p
        if any(s.p != p for s in self.shards):
            raise ValueError("all shards must share the same number of columns")

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def p(self) -> int:
        return self.shards[0].p

    @property
    def total_n(self) -> int:
        return sum(s.n for s in self.shards)

    @property
    def master(self) -> DataShard:
        return self.shards[0]

    @property
    def weights(self) -> np.ndarray:
        """Per-shard aggregation weights n_j / N."""
        n = np.array([s.n for s in self.shards], dtype=float)
        return n / n.sum()

    def pooled(self):
        """Concatenated (y, X, row offsets); cached after first use."""
        if self._pooled is None:
            y = np.concatenate([s.y for s in self.shards])
            X = np.vstack([s.X for s in self.shards])
            offsets = np.cumsum([0] + [s.n for s in self.shards])
            self._pooled = (y, X, offsets)
        return self._pooled

    def pooled_shard(self) -> DataShard:
        y, X, _ = self.pooled()
        return DataShard(y=y, X=X, shard_id=-1)


def partition(y, X, m: int, seed: int, allow_unequal: bool = False) -> FederatedDataset:
    """Shuffle rows deterministically and split into m contiguous shards."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    N = len(y)
    if N < m:
        raise ValueError(f"cannot split {N} rows into {m} shards")
    if N % m != 0 and not allow_unequal:
        raise ValueError(f"N={N} not divisible by m={m}; pass allow_unequal=True to override")
    order = np.random.default_rng(seed).permutation(N)
    y, X = y[order], X[order]
    bounds = np.linspace(0, N, m + 1).round().astype(int)
    shards = [
        DataShard(y=y[a:b], X=X[a:b], shard_id=j)
        for j, (a, b) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]
    return FederatedDataset(shards=shards)


def as_federated(data) -> FederatedDataset:
    """Wrap a single shard as a one-machine federation; pass through otherwise."""
    if isinstance(data, FederatedDataset):
        return data
    return FederatedDataset(shards=[data])


# ---------------------------------------------------------------------------
# shard file format

MANIFEST_NAME = "manifest.txt"


def shard_header(p: int) -> str:
    return ",".join(["y"] + [f"x{j}" for j in range(1, p + 1)])


def write_shards(fed: FederatedDataset, out_dir: str) -> str:
    """Write one CSV per shard plus a master-first manifest; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for shard in fed.shards:
        path = os.path.join(out_dir, f"shard_{shard.shard_id:04d}.csv")
        rows = np.column_stack([shard.y, shard.X])
        np.savetxt(path, rows, delimiter=",", header=shard_header(shard.p), comments="")
        paths.append(path)
    manifest = os.path.join(out_dir, MANIFEST_NAME)
    with open(manifest, "w") as fh:
        fh.write("\n".join(os.path.basename(p) for p in paths) + "\n")
    return manifest


def read_shards(manifest_path: str) -> FederatedDataset:
    """Load a federated dataset from a manifest written by ``write_shards``."""
    base = os.path.dirname(manifest_path)
    with open(manifest_path) as fh:
        names = [line.strip() for line in fh if line.strip()]
    shards = []
    for j, name in enumerate(names):
        rows = np.loadtxt(os.path.join(base, name), delimiter=",", skiprows=1, ndmin=2)
        shards.append(DataShard(y=rows[:, 0], X=rows[:, 1:], shard_id=j))
    return FederatedDataset(shards=shards)
