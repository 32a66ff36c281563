"""Clustered count data and the Poisson log-linear mixed model.

Observations are indexed globally by concatenating clusters in their given
order; every vector of length N in this package uses that ordering.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from functools import cached_property
from os import PathLike
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln

from .exceptions import DataFormatError, DimensionError, DomainError, LinkOverflowError

# exp() overflows float64 just above this value.
_MAX_ETA = 709.78


@dataclass(frozen=True)
class Cluster:
    y: NDArray[np.float64]
    X: NDArray[np.float64]
    Z: NDArray[np.float64]

    @property
    def n(self) -> int:
        return self.y.shape[0]


class ClusteredCounts:
    """Count responses grouped into clusters with fixed and random designs.

    Parameters
    ----------
    clusters : sequence of Cluster or (y, X, Z) triples
        Cluster ``i`` holds ``y`` (length n_i), ``X`` (n_i x p) and
        ``Z`` (n_i x q). All clusters must share p and q.
    ids : sequence, optional
        Cluster labels (defaults to 0..m-1).
    x_names, z_names : sequence of str, optional
        Column labels used in diagnostics.
    """

    def __init__(self, clusters, ids=None, x_names=None, z_names=None):
        ys, Xs, Zs = [], [], []
        for k, c in enumerate(clusters):
            y, X, Z = (c.y, c.X, c.Z) if isinstance(c, Cluster) else c
            y = np.asarray(y, dtype=float).reshape(-1)
            X = np.atleast_2d(np.asarray(X, dtype=float))
            Z = np.asarray(Z, dtype=float)
            if Z.ndim == 1:
                Z = Z[:, None] if Z.size == y.size else Z[None, :]
            if Z.size == 0:
                Z = np.zeros((y.size, 0))
            if y.size < 1:
                raise DimensionError(f"cluster {k} is empty", cluster=k)
            if X.shape[0] != y.size or Z.shape[0] != y.size:
                raise DimensionError(
                    f"cluster {k}: X has {X.shape[0]} rows and Z has {Z.shape[0]} rows "
                    f"but y has length {y.size}",
                    cluster=k,
                )
            if Xs and (X.shape[1] != Xs[0].shape[1] or Z.shape[1] != Zs[0].shape[1]):
                raise DimensionError(
                    f"cluster {k}: (p, q) = {(X.shape[1], Z.shape[1])} differs from "
                    f"cluster 0's {(Xs[0].shape[1], Zs[0].shape[1])}",
                    cluster=k,
                )
            if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
                raise DomainError(f"cluster {k}: design matrices must be finite")
            if np.any(y < 0) or np.any(y != np.round(y)) or not np.all(np.isfinite(y)):
                raise DomainError(f"cluster {k}: responses must be non-negative integers")
            ys.append(y)
            Xs.append(X)
            Zs.append(Z)
        if not ys:
            raise DimensionError("at least one cluster is required")
        sizes = np.array([y.size for y in ys])
        self._init(np.concatenate(ys), np.vstack(Xs), np.vstack(Zs), sizes, ids, x_names, z_names)

    def _init(self, y, X, Z, sizes, ids, x_names, z_names):
        self.y = y
        self.X = X
        self.Z = Z
        self.sizes = sizes
        self.starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        self.group = np.repeat(np.arange(sizes.size), sizes)
        self.ids = tuple(range(sizes.size)) if ids is None else tuple(ids)
        p, q = X.shape[1], Z.shape[1]
        self.x_names = tuple(x_names) if x_names is not None else tuple(f"x{j + 1}" for j in range(p))
        self.z_names = tuple(z_names) if z_names is not None else tuple(f"z{j + 1}" for j in range(q))
        for a in (y, X, Z):
            a.flags.writeable = False

    @classmethod
    def from_arrays(cls, y: ArrayLike, X: ArrayLike, Z: ArrayLike, groups: ArrayLike) -> ClusteredCounts:
        """Build from stacked arrays; ``groups`` must list each cluster contiguously."""
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float).reshape(y.size, -1)
        groups = np.asarray(groups)
        change = np.flatnonzero(groups[1:] != groups[:-1]) + 1
        bounds = np.concatenate(([0], change, [y.size]))
        labels = groups[bounds[:-1]]
        if len(set(labels.tolist())) != labels.size:
            raise DataFormatError("rows of each cluster must be contiguous")
        clusters = [(y[a:b], X[a:b], Z[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        return cls(clusters, ids=labels.tolist())

    def with_response(self, y: NDArray[np.float64]) -> ClusteredCounts:
        """Same designs, new response vector (validated counts only)."""
        y = np.array(y, dtype=float)
        if y.shape != self.y.shape:
            raise DimensionError(f"response has shape {y.shape}, expected {self.y.shape}")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DomainError("responses must be non-negative integers")
        new = object.__new__(type(self))
        new._init(y, self.X, self.Z, self.sizes, self.ids, self.x_names, self.z_names)
        # designs are shared, so are their derived caches
        for key in ("ZZ", "rank_checked"):
            if key in self.__dict__:
                new.__dict__[key] = self.__dict__[key]
        return new

    @property
    def m(self) -> int:
        return self.sizes.size

    @property
    def N(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def clusters(self) -> list[Cluster]:
        return [
            Cluster(self.y[a : a + n], self.X[a : a + n], self.Z[a : a + n])
            for a, n in zip(self.starts, self.sizes)
        ]

    @cached_property
    def ZZ(self) -> NDArray[np.float64]:
        """Per-observation outer products z_j z_j^T, shape (N, q, q)."""
        return self.Z[:, :, None] * self.Z[:, None, :]

    @cached_property
    def log_y_factorial(self) -> float:
        return float(np.sum(gammaln(self.y + 1.0)))

    def cluster_sum(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Sum ``values`` (leading axis N) within clusters."""
        return np.add.reduceat(values, self.starts, axis=0)

    def __repr__(self) -> str:
        return f"ClusteredCounts(m={self.m}, N={self.N}, p={self.p}, q={self.q})"


class ModelKind(str, enum.Enum):
    FIXED_ONLY = "fixed"
    MIXED_DIAGONAL = "mixed"


@dataclass(frozen=True)
class SolverControls:
    """Iteration limits and tolerances shared by all fitting routines."""

    max_inner: int = 200
    max_outer: int = 500
    inner_tol: float = 1e-10
    outer_tol: float = 1e-8
    max_halvings: int = 30

    def __post_init__(self):
        if min(self.inner_tol, self.outer_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.max_inner, self.max_outer) < 1 or self.max_halvings < 0:
            raise ValueError("iteration limits must be positive")


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.MIXED_DIAGONAL
    q: int = 1
    variance_floor: float = 1e-8
    solver: SolverControls = field(default_factory=SolverControls)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")
        if self.kind is ModelKind.FIXED_ONLY and self.q != 0:
            raise ValueError("a fixed-effects-only model has q = 0")
        if self.kind is ModelKind.MIXED_DIAGONAL and self.q < 1:
            raise ValueError("a mixed model needs q >= 1")

    @property
    def log_sigma_floor(self) -> float:
        return 0.5 * float(np.log(self.variance_floor))


@dataclass(frozen=True)
class Parameters:
    """Population parameters: fixed effects and log random-effect SDs."""

    beta: NDArray[np.float64]
    log_sigma: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        log_sigma = np.atleast_1d(np.asarray(self.log_sigma, dtype=float))
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(log_sigma))):
            raise ValueError("parameters must be finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "log_sigma", log_sigma)

    @property
    def dim(self) -> int:
        return self.beta.size + self.log_sigma.size


def _as_effects(data: ClusteredCounts, b) -> NDArray[np.float64]:
    if b is None:
        return np.zeros((data.m, data.q))
    b = np.asarray(b, dtype=float)
    if data.q == 0 and b.size == 0:
        return np.zeros((data.m, 0))
    if b.ndim == 1 and data.q == 1 and b.size == data.m:
        b = b[:, None]
    if b.shape != (data.m, data.q):
        bad = 0 if b.ndim < 2 else min(b.shape[0], data.m - 1)
        raise DimensionError(
            f"random effects have shape {b.shape}, expected {(data.m, data.q)}", cluster=bad
        )
    return b


def linear_predictor(data: ClusteredCounts, beta: ArrayLike, b=None) -> NDArray[np.float64]:
    """eta = X beta + Z_i b_i, stacked in cluster order."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape != (data.p,):
        raise DimensionError(f"beta has length {beta.size}, expected p = {data.p}", cluster=0)
    b = _as_effects(data, b)
    eta = data.X @ beta
    if data.q:
        eta = eta + np.einsum("nq,nq->n", data.Z, b[data.group])
    return eta


def fitted_means(data: ClusteredCounts, beta: ArrayLike, b=None) -> NDArray[np.float64]:
    eta = linear_predictor(data, beta, b)
    return exp_link(eta)


def exp_link(eta: NDArray[np.float64]) -> NDArray[np.float64]:
    if eta.size and np.max(eta) > _MAX_ETA:
        raise LinkOverflowError(float(np.max(eta)))
    return np.exp(eta)


def conditional_log_lik(y: ArrayLike, mu: ArrayLike) -> float:
    """Poisson log-likelihood sum(-mu + y log mu - log y!), with 0 log mu = 0."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise DimensionError(f"y has shape {y.shape} but mu has shape {mu.shape}")
    if np.any(~(mu > 0)):
        raise DomainError("Poisson means must be strictly positive")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise DomainError("responses must be non-negative integers")
    ylogmu = np.where(y > 0, y * np.log(mu), 0.0)
    return float(np.sum(ylogmu - mu - gammaln(y + 1.0)))


def read_csv(path: str | PathLike) -> ClusteredCounts:
    """Read ``cluster_id, y, x1..xp, z1..zq`` rows grouped by cluster.

    Raises DataFormatError with the offending line number on malformed input.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty file", line=1) from None
        if header[:2] != ["cluster_id", "y"]:
            raise DataFormatError("header must start with 'cluster_id,y'", line=1)
        x_cols = [j for j, h in enumerate(header) if h.startswith("x")]
        z_cols = [j for j, h in enumerate(header) if h.startswith("z")]
        if not x_cols:
            raise DataFormatError("no fixed-effect columns (x1..xp)", line=1)
        if sorted(x_cols + z_cols) != list(range(2, len(header))) or (
            z_cols and min(z_cols) < max(x_cols)
        ):
            raise DataFormatError("columns after 'y' must be x1..xp followed by z1..zq", line=1)

        order: list[str] = []
        rows: dict[str, list] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, got {len(row)}", line=line_no)
            cid = row[0].strip()
            if cid in rows and order[-1] != cid:
                raise DataFormatError(f"rows of cluster {cid!r} are not contiguous", line=line_no)
            try:
                y = float(row[1])
                x = [float(row[j]) for j in x_cols]
                z = [float(row[j]) for j in z_cols]
            except ValueError as exc:
                raise DataFormatError(f"non-numeric field ({exc})", line=line_no) from None
            if not (y >= 0 and y == int(y)):
                raise DataFormatError(f"y = {row[1]!r} is not a non-negative integer", line=line_no)
            if cid not in rows:
                order.append(cid)
                rows[cid] = []
            rows[cid].append((y, x, z))
    if not order:
        raise DataFormatError("no data rows", line=2)
    q = len(z_cols)
    clusters = []
    for cid in order:
        r = rows[cid]
        clusters.append(
            (
                [t[0] for t in r],
                np.array([t[1] for t in r]),
                np.array([t[2] for t in r]).reshape(len(r), q),
            )
        )
    return ClusteredCounts(
        clusters,
        ids=order,
        x_names=[header[j] for j in x_cols],
        z_names=[header[j] for j in z_cols],
    )


def write_csv(data: ClusteredCounts, path: str | PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster_id", "y", *data.x_names, *data.z_names])
        for j in range(data.N):
            w.writerow(
                [data.ids[data.group[j]], int(data.y[j])]
                + [repr(float(v)) for v in data.X[j]]
                + [repr(float(v)) for v in data.Z[j]]
            )


def as_cluster_list(values: NDArray, data: ClusteredCounts) -> list[NDArray]:
    """Split an N-vector into per-cluster pieces."""
    return np.split(values, data.starts[1:])


__all__: Sequence[str] = [
    "Cluster",
    "ClusteredCounts",
    "ModelKind",
    "ModelSpec",
    "Parameters",
    "SolverControls",
    "conditional_log_lik",
    "exp_link",
    "fitted_means",
    "linear_predictor",
    "read_csv",
    "write_csv",
]
