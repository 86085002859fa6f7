"""Pseudospectral polynomial chaos on standard-normal germs.

Bases are products of orthonormal probabilists' Hermite polynomials, so every
normalization constant is one: the mean is the zeroth coefficient and the
variance is the sum of squares of the others.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import DimensionMismatch, InvalidBounds, SizeOverflow

MAX_NODES = 10**7


def hermite_table(n: int, theta) -> np.ndarray:
    """Orthonormal Hermite values psi_0..psi_n at theta, shape (n + 1, *theta.shape).

    Uses He_{k+1} = theta He_k - k He_{k-1} and psi_k = He_k / sqrt(k!),
    written directly for the normalized values.
    """
    theta = np.asarray(theta, dtype=float)
    out = np.empty((n + 1, *theta.shape))
    out[0] = 1.0
    if n >= 1:
        out[1] = theta
    for k in range(1, n):
        out[k + 1] = (theta * out[k] - np.sqrt(k) * out[k - 1]) / np.sqrt(k + 1)
    return out


def hermite_orthonormal(n: int, theta):
    if n < 0:
        raise ValueError("degree must be >= 0")
    v = hermite_table(n, theta)[n]
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """Total-degree multi-indices, graded: by degree, then lexicographically descending.

    For n_x = 2, n_pce = 2 the order is (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
    """

    n_x: int
    n_pce: int
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first, *rest)


def multi_indices(n_x: int, n_pce: int) -> MultiIndexSet:
    if n_x < 0 or n_pce < 0:
        raise ValueError("n_x and n_pce must be >= 0")
    if n_x == 0:
        return MultiIndexSet(0, n_pce, np.zeros((1, 0), dtype=int))
    rows = [c for d in range(n_pce + 1) for c in _compositions(d, n_x)]
    return MultiIndexSet(n_x, n_pce, np.array(rows, dtype=int).reshape(-1, n_x))


def gauss_hermite(n_w: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the standard normal measure (Golub-Welsch).

    Eigenvalues of the symmetric Jacobi matrix with off-diagonals sqrt(k) are
    the nodes; squared first eigenvector components are the weights.
    """
    if not 1 <= n_w <= 50:
        raise ValueError("n_w must be in 1..50")
    off = np.sqrt(np.arange(1, n_w))
    J = np.diag(off, 1) + np.diag(off, -1)
    nodes, vecs = np.linalg.eigh(J)
    weights = vecs[0] ** 2
    # exact symmetry about zero
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return nodes, weights / weights.sum()


@dataclass(frozen=True, eq=False)
class CubatureRule:
    n_w: int
    n_x: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_q(self) -> int:
        return len(self.weights)


def tensor_rule(n_w: int, n_x: int) -> CubatureRule:
    """Full tensor product of the 1D rule; the first dimension varies slowest."""
    if n_x < 0:
        raise ValueError("n_x must be >= 0")
    if n_w**n_x > MAX_NODES:
        raise SizeOverflow(f"{n_w}**{n_x} nodes exceed {MAX_NODES}")
    x, w = gauss_hermite(n_w)
    if n_x == 0:
        return CubatureRule(n_w, 0, np.zeros((1, 0)), np.ones(1))
    grids = np.meshgrid(*([x] * n_x), indexing="ij")
    wgrids = np.meshgrid(*([w] * n_x), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return CubatureRule(n_w, n_x, nodes, weights)


def basis_matrix(basis: MultiIndexSet, theta) -> np.ndarray:
    """Psi_i(theta_j) for rows theta_j; shape (m, len(basis))."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[1] != basis.n_x:
        raise DimensionMismatch(f"theta has {theta.shape[1]} dims, basis has {basis.n_x}")
    out = np.ones((theta.shape[0], len(basis)))
    for d in range(basis.n_x):
        table = hermite_table(basis.n_pce, theta[:, d])
        out *= table[basis.indices[:, d]].T
    return out


@dataclass
class PCESurrogate:
    basis: MultiIndexSet
    coeffs: np.ndarray  # (len(basis), n_out)
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim == 1:
            self.coeffs = self.coeffs[:, None]
        if self.coeffs.shape[0] != len(self.basis):
            raise DimensionMismatch("one coefficient row per basis term is required")
        if not self.labels:
            self.labels = [f"y{k}" for k in range(self.coeffs.shape[1])]

    @property
    def n_out(self) -> int:
        return self.coeffs.shape[1]


def pseudospectral_fit(
    model: Callable[[np.ndarray], Sequence[float]] | np.ndarray,
    rule: CubatureRule,
    basis: MultiIndexSet,
    labels: list[str] | None = None,
) -> PCESurrogate:
    """Y_i = sum_j model(theta_j) Psi_i(theta_j) w_j.

    ``model`` is either a callable evaluated once per node, in node order, or
    an array of precomputed node values with shape (n_q, n_out). A failing
    model call is re-raised with ``node_index`` set on the exception.
    """
    if rule.n_x != basis.n_x:
        raise DimensionMismatch(f"rule has n_x={rule.n_x}, basis has n_x={basis.n_x}")
    if callable(model):
        values = []
        for j, theta in enumerate(rule.nodes):
            try:
                values.append(np.atleast_1d(np.asarray(model(theta), dtype=float)))
            except Exception as exc:
                exc.node_index = j
                raise
        values = np.array(values)
    else:
        values = np.asarray(model, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != rule.n_q:
            raise DimensionMismatch(f"{values.shape[0]} node values for {rule.n_q} nodes")
    psi = basis_matrix(basis, rule.nodes)
    coeffs = psi.T @ (rule.weights[:, None] * values)
    return PCESurrogate(basis, coeffs, list(labels or []))


def surrogate_eval(s: PCESurrogate, theta) -> np.ndarray:
    """Sum_i Y_i Psi_i(theta); theta is one point (n_x,) or rows (m, n_x)."""
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    vals = basis_matrix(s.basis, theta) @ s.coeffs
    return vals[0] if single else vals


def moments(s: PCESurrogate) -> tuple[np.ndarray, np.ndarray]:
    return s.coeffs[0].copy(), np.sum(s.coeffs[1:] ** 2, axis=0)


@dataclass(frozen=True)
class InputDistribution:
    """Gaussian N(mean, std**2) truncated to [lo, hi]."""

    mean: float
    std: float
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.std < 0:
            raise InvalidBounds("std must be >= 0")
        if not self.lo < self.hi:
            raise InvalidBounds("truncation needs lo < hi")
        if not self.lo <= self.mean <= self.hi:
            raise InvalidBounds("mean must lie within the truncation bounds")

    def to_physical(self, theta):
        return self.mean + self.std * np.asarray(theta, dtype=float)

    def clamp(self, theta):
        return np.clip(self.to_physical(theta), self.lo, self.hi)

    def theta_bounds(self) -> tuple[float, float]:
        if self.std == 0:
            return -math.inf, math.inf
        return (self.lo - self.mean) / self.std, (self.hi - self.mean) / self.std


def sample_truncated_theta(dists: Sequence[InputDistribution], n: int, rng: np.random.Generator) -> np.ndarray:
    """Standard-normal rows whose physical images fall inside every truncation window.

    Out-of-bounds entries are redrawn until none remain.
    """
    theta = rng.standard_normal((n, len(dists)))
    for d, dist in enumerate(dists):
        lo, hi = dist.theta_bounds()
        bad = (theta[:, d] < lo) | (theta[:, d] > hi)
        while bad.any():
            theta[bad, d] = rng.standard_normal(int(bad.sum()))
            bad = (theta[:, d] < lo) | (theta[:, d] > hi)
    return theta


def silverman_bandwidth(x: np.ndarray) -> float:
    n = len(x)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(np.std(x, ddof=1) if n > 1 else 0.0, (q75 - q25) / 1.349)
    if spread <= 0:
        spread = np.std(x, ddof=1) if n > 1 else 0.0
    return 0.9 * spread * n ** (-0.2)


def empirical_cdf(values) -> tuple[np.ndarray, np.ndarray]:
    v = np.sort(np.asarray(values, dtype=float))
    return v, np.arange(1, len(v) + 1) / len(v)


def kde_cdf(values, n_grid: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-kernel CDF with Silverman bandwidth on an even grid.

    Falls back to the empirical CDF when the sample has no spread.
    """
    v = np.sort(np.asarray(values, dtype=float))
    h = silverman_bandwidth(v)
    if not h > 0:
        return empirical_cdf(v)
    grid = np.linspace(v[0] - 4 * h, v[-1] + 4 * h, n_grid)
    cdf = np.empty(n_grid)
    for s in range(0, n_grid, 64):
        cdf[s:s + 64] = ndtr((grid[s:s + 64, None] - v[None, :]) / h).mean(axis=1)
    return grid, cdf


def cdf_table(
    s: PCESurrogate,
    dists: Sequence[InputDistribution],
    n_samples: int = 10**5,
    seed: int = 0,
    kde: bool = False,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-output (value, probability) CDF points from sampling the surrogate."""
    if len(dists) != s.basis.n_x:
        raise DimensionMismatch(f"{len(dists)} distributions for n_x={s.basis.n_x}")
    rng = np.random.Generator(np.random.PCG64(seed))
    theta = sample_truncated_theta(dists, n_samples, rng)
    vals = np.zeros((n_samples, s.n_out))
    for start in range(0, n_samples, 20_000):
        vals[start:start + 20_000] = surrogate_eval(s, theta[start:start + 20_000])
    make = kde_cdf if kde else empirical_cdf
    return {name: make(vals[:, k]) for k, name in enumerate(s.labels)}


def write_cdf_csv(path: str | Path, tables: dict[str, tuple[np.ndarray, np.ndarray]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["output_name", "value", "cdf"])
        for name, (vals, probs) in tables.items():
            for v, p in zip(vals, probs):
                w.writerow([name, repr(float(v)), repr(float(p))])


def write_moments_csv(path: str | Path, names: Sequence[str], mean, std) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["output_name", "mean", "std"])
        for name, m, sd in zip(names, mean, std):
            w.writerow([name, repr(float(m)), repr(float(sd))])


def read_cdf_csv(path: str | Path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    rows: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.setdefault(row["output_name"], []).append((float(row["value"]), float(row["cdf"])))
    return {k: (np.array([a for a, _ in v]), np.array([b for _, b in v])) for k, v in rows.items()}


def read_moments_csv(path: str | Path) -> dict[str, tuple[float, float]]:
    with open(path, newline="") as fh:
        return {row["output_name"]: (float(row["mean"]), float(row["std"])) for row in csv.DictReader(fh)}
