"""Uncertainty propagation: PCE over cubature nodes, Monte Carlo baselines, timing.

Random inputs are c_f and two matrix parameters, each a truncated Gaussian.
Cubature nodes are mapped to physical values by x = clamp(mean + std * theta,
lo, hi); Monte Carlo draws use rejection sampling inside the bounds instead.
Inputs with zero std are constants and do not count towards n_x.
"""

from __future__ import annotations

import hashlib
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .ann import Network, load
from .dataset import numeric_features
from .errors import ConfigError, PropertyMismatch
from .fft import SolverConfig, homogenize
from .microstructure import VoxelGrid, make_grid
from .pce import (
    InputDistribution,
    PCESurrogate,
    cdf_table,
    empirical_cdf,
    kde_cdf,
    moments,
    multi_indices,
    pseudospectral_fit,
    sample_truncated_theta,
    surrogate_eval,
    tensor_rule,
    write_cdf_csv,
    write_moments_csv,
)
from .tensor import MaterialParams, Rep, extract_isotropic, extract_transverse_isotropic

log = logging.getLogger(__name__)

TRANSVERSE_NAMES = ["E1", "E2", "G12", "G23", "nu12", "nu23"]
ISO_NAMES = ["E", "nu"]
RAW_NAMES = [f"C{i + 1}{j + 1}" for i in range(6) for j in range(i, 6)]
PROPERTY_NAMES = {"transverse_iso": TRANSVERSE_NAMES, "iso": ISO_NAMES, "raw_tensor": RAW_NAMES}
CLAMP_WARN = 1e-3

Homogenizer = Callable[[VoxelGrid, MaterialParams, MaterialParams], np.ndarray]


def properties_of(C: np.ndarray, kind: str) -> np.ndarray:
    if kind == "transverse_iso":
        p = extract_transverse_isotropic(C)
        return np.array([p.E1, p.E2, p.G12, p.G23, p.nu12, p.nu23])
    if kind == "iso":
        p = extract_isotropic(C)
        return np.array([p.E, p.nu])
    if kind == "raw_tensor":
        return np.asarray(C)[np.triu_indices(6)]
    raise ConfigError(f"unknown property set {kind!r}")


@dataclass(frozen=True)
class UQConfig:
    """Inputs are ordered (c_f, p1, p2); p1/p2 are (E, nu) or (K, G) of the matrix."""

    c_f: InputDistribution
    p1: InputDistribution
    p2: InputDistribution
    matrix_rep: Rep = Rep.E_NU
    inclusion: MaterialParams = MaterialParams.from_e_nu(2.31e5, 0.1)
    n_w: int = 10
    n_pce: int = 9
    n: int = 16
    kind: str = "fiber"
    solver: str = "fft"
    checkpoint: str | None = None
    properties: str = "transverse_iso"
    seed: int = 0
    sphere_radius: float = 0.1
    rel_tol: float = 1e-8
    max_iter: int = 500
    n_cdf: int = 100_000
    kde: bool = False

    def __post_init__(self):
        object.__setattr__(self, "matrix_rep", Rep(self.matrix_rep))
        if self.solver not in ("fft", "ann"):
            raise ConfigError(f"solver must be fft or ann, got {self.solver!r}")
        if self.solver == "ann" and not self.checkpoint:
            raise ConfigError("solver=ann needs a checkpoint path")
        if self.properties not in PROPERTY_NAMES:
            raise ConfigError(f"unknown property set {self.properties!r}")
        if self.kind not in ("fiber", "spheres"):
            raise ConfigError(f"unknown microstructure kind {self.kind!r}")
        if self.n_w < 1 or self.n_pce < 0:
            raise ConfigError("n_w must be >= 1 and n_pce >= 0")
        if self.n_pce > self.n_w - 1:
            log.warning("n_pce=%d exceeds n_w-1=%d; high-order coefficients alias", self.n_pce, self.n_w - 1)

    @property
    def inputs(self) -> list[InputDistribution]:
        return [self.c_f, self.p1, self.p2]

    @property
    def input_names(self) -> list[str]:
        return ["c_f", "E_M", "nu_M"] if self.matrix_rep is Rep.E_NU else ["c_f", "K_M", "G_M"]

    @property
    def active(self) -> list[int]:
        return [i for i, d in enumerate(self.inputs) if d.std > 0]

    @property
    def n_x(self) -> int:
        return len(self.active)

    @property
    def property_names(self) -> list[str]:
        return PROPERTY_NAMES[self.properties]

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.rel_tol, self.max_iter)


@dataclass
class UQResult:
    names: list[str]
    mean: np.ndarray
    std: np.ndarray
    cdf: dict[str, tuple[np.ndarray, np.ndarray]]
    meta: dict[str, object] = field(default_factory=dict)
    surrogate: PCESurrogate | None = None
    samples: np.ndarray | None = None


class AnnHomogenizer:
    """Full 6x6 stiffness from a trained network: one prediction per unit strain."""

    def __init__(self, net: Network):
        self.net = net

    def __call__(self, g: VoxelGrid, mat_M: MaterialParams, mat_I: MaterialParams | None = None) -> np.ndarray:
        if self.net.grid_n and g.n != self.net.grid_n:
            raise ConfigError(f"network expects n={self.net.grid_n}, grid has n={g.n}")
        x1 = np.array([numeric_features(mat_M, i) for i in range(1, 7)])
        C = self.net.predict_shared(x1, g.data).T
        return 0.5 * (C + C.T)


def make_homogenizer(cfg: UQConfig) -> Homogenizer:
    if cfg.solver == "ann":
        net = load(cfg.checkpoint)
        if net.grid_n != cfg.n:
            raise ConfigError(f"checkpoint grid n={net.grid_n} differs from n={cfg.n}")
        return AnnHomogenizer(net)
    scfg = cfg.solver_config()
    return lambda g, m, i: homogenize(g, m, i, scfg)


def evaluate_point(cfg: UQConfig, solver: Homogenizer, x: np.ndarray, grid_seed: int) -> np.ndarray:
    """Properties at one physical input point (c_f, p1, p2)."""
    g = make_grid(cfg.kind, cfg.n, float(x[0]), grid_seed, cfg.sphere_radius)
    mat_M = MaterialParams(cfg.matrix_rep, float(x[1]), float(x[2]))
    return properties_of(solver(g, mat_M, cfg.inclusion), cfg.properties)


def node_inputs(cfg: UQConfig, theta: np.ndarray) -> tuple[np.ndarray, bool]:
    """Physical inputs for a cubature node and whether any value was clamped."""
    x = np.array([d.mean for d in cfg.inputs], dtype=float)
    clamped = False
    for a, t in zip(cfg.active, theta):
        raw = cfg.inputs[a].to_physical(t)
        x[a] = cfg.inputs[a].clamp(t)
        clamped |= bool(x[a] != raw)
    return x, clamped


def clamped_mass(cfg: UQConfig) -> float:
    """Cubature weight of nodes with at least one clamped input."""
    rule = tensor_rule(cfg.n_w, cfg.n_x)
    return float(sum(w for theta, w in zip(rule.nodes, rule.weights) if node_inputs(cfg, theta)[1]))


def run_uq(cfg: UQConfig, solver: Homogenizer | None = None) -> UQResult:
    """Pseudospectral PCE of the chosen properties over the tensor Gauss-Hermite rule.

    Node j uses microstructure seed cfg.seed + j.
    """
    t0 = time.perf_counter()
    solver = solver or make_homogenizer(cfg)
    rule = tensor_rule(cfg.n_w, cfg.n_x)
    basis = multi_indices(cfg.n_x, cfg.n_pce)
    values = []
    mass = 0.0
    for j, (theta, w) in enumerate(zip(rule.nodes, rule.weights)):
        x, clamped = node_inputs(cfg, theta)
        mass += w * clamped
        try:
            values.append(evaluate_point(cfg, solver, x, cfg.seed + j))
        except Exception as exc:
            exc.node_index = j
            log.error("solver failed at node %d: %s", j, exc)
            raise
    if mass > CLAMP_WARN:
        log.warning("%.3g of the cubature mass lies on clamped nodes", mass)
    s = pseudospectral_fit(np.array(values), rule, basis, cfg.property_names)
    mean, var = moments(s)
    active = [cfg.inputs[a] for a in cfg.active]
    cdf = cdf_table(s, active, cfg.n_cdf, cfg.seed, cfg.kde)
    meta = {
        "solver_calls": rule.n_q,
        "wall_time": time.perf_counter() - t0,
        "solver": cfg.solver,
        "n_x": cfg.n_x,
        "clamped_mass": mass,
    }
    return UQResult(cfg.property_names, mean, np.sqrt(np.maximum(var, 0.0)), cdf, meta, s)


def surrogate_point_fn(cfg: UQConfig, s: PCESurrogate) -> Callable[[np.ndarray, int], np.ndarray]:
    """A run_mc point function that evaluates a fitted PCE at physical inputs."""
    def fn(x, k):
        theta = [(x[a] - cfg.inputs[a].mean) / cfg.inputs[a].std for a in cfg.active]
        return surrogate_eval(s, np.array(theta, dtype=float))
    return fn


def run_mc(
    cfg: UQConfig,
    n_samples: int,
    solver: Homogenizer | None = None,
    point_fn: Callable[[np.ndarray, int], np.ndarray] | None = None,
) -> UQResult:
    """Monte Carlo over truncated-normal inputs drawn by rejection sampling.

    Sample k uses microstructure seed cfg.seed + k. ``point_fn(x, k)`` replaces
    the homogenization solver when given.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    t0 = time.perf_counter()
    kind = cfg.solver if point_fn is None else "custom"
    if point_fn is None:
        solver = solver or make_homogenizer(cfg)
        point_fn = lambda x, k: evaluate_point(cfg, solver, x, cfg.seed + k)  # noqa: E731
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    theta = sample_truncated_theta([cfg.inputs[a] for a in cfg.active], n_samples, rng)
    base = np.array([d.mean for d in cfg.inputs], dtype=float)
    values = []
    for k in range(n_samples):
        x = base.copy()
        for col, a in enumerate(cfg.active):
            x[a] = cfg.inputs[a].to_physical(theta[k, col])
        try:
            values.append(point_fn(x, k))
        except Exception as exc:
            exc.sample_index = k
            log.error("solver failed at sample %d: %s", k, exc)
            raise
    values = np.array(values).reshape(n_samples, -1)
    names = cfg.property_names
    # shifting by the first sample keeps the spread of identical values exactly zero
    std = (values - values[0]).std(axis=0, ddof=1) if n_samples > 1 else np.zeros(values.shape[1])
    make = kde_cdf if cfg.kde else empirical_cdf
    cdf = {name: make(values[:, i]) for i, name in enumerate(names)}
    meta = {"solver_calls": n_samples, "wall_time": time.perf_counter() - t0, "solver": kind}
    return UQResult(names, values.mean(axis=0), std, cdf, meta, samples=values)


@dataclass
class BenchRow:
    n: int
    fft_seconds: float | None
    ann_seconds: float | None

    @property
    def ratio(self) -> float | None:
        if self.fft_seconds is None or self.ann_seconds is None:
            return None
        return self.fft_seconds / self.ann_seconds


def median_time(fn: Callable[[], object], repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def bench_timing(
    sizes: list[int],
    fft_for: Callable[[int], Callable[[], object]] | None,
    ann_for: Callable[[int], Callable[[], object]] | None,
    repetitions: int = 5,
) -> list[BenchRow]:
    """Median wall time of one full 6-direction homogenization per solver and size.

    ``fft_for(n)`` / ``ann_for(n)`` return zero-argument callables doing the
    work. A size that runs out of memory is recorded as an absent entry.
    """
    rows = []
    for n in sizes:
        entry = []
        for factory in (fft_for, ann_for):
            if factory is None:
                entry.append(None)
                continue
            try:
                entry.append(median_time(factory(n), repetitions))
            except MemoryError:
                log.warning("out of memory at n=%d", n)
                entry.append(None)
        rows.append(BenchRow(n, *entry))
    return rows


def bench_case(n: int, c_f: float = 0.6335, E: float = 3101.0, nu: float = 0.41):
    """Fiber grid and materials used for timing runs."""
    return make_grid("fiber", n, c_f, 0), MaterialParams.from_e_nu(E, nu), MaterialParams.from_e_nu(2.31e5, 0.1)


def _step_cdf(table: tuple[np.ndarray, np.ndarray], x: np.ndarray) -> np.ndarray:
    vals, probs = table
    idx = np.searchsorted(vals, x, side="right") - 1
    return np.where(idx >= 0, probs[np.clip(idx, 0, None)], 0.0)


def kolmogorov_distance(a: tuple[np.ndarray, np.ndarray], b: tuple[np.ndarray, np.ndarray]) -> float:
    """Sup of |F_a - F_b| over the merged support of two right-continuous step CDFs."""
    grid = np.union1d(a[0], b[0])
    return float(np.max(np.abs(_step_cdf(a, grid) - _step_cdf(b, grid))))


def _rel_diff(x: float, y: float) -> float:
    if x == y:
        return 0.0
    den = min(abs(x), abs(y))
    return abs(x - y) / den if den > 0 else math.inf


@dataclass
class CompareRow:
    name: str
    mean_rel_diff: float
    std_rel_diff: float
    ks_distance: float


def compare_results(a: UQResult, b: UQResult) -> list[CompareRow]:
    """Relative differences use the smaller magnitude as denominator, so the report is symmetric."""
    if list(a.names) != list(b.names):
        raise PropertyMismatch(f"property sets differ: {a.names} vs {b.names}")
    rows = []
    for i, name in enumerate(a.names):
        rows.append(CompareRow(
            name,
            _rel_diff(float(a.mean[i]), float(b.mean[i])),
            _rel_diff(float(a.std[i]), float(b.std[i])),
            kolmogorov_distance(a.cdf[name], b.cdf[name]),
        ))
    return rows


def write_compare_csv(path: str | Path, rows: list[CompareRow]) -> None:
    lines = ["output_name,mean_rel_diff,std_rel_diff,ks_distance"]
    lines += [f"{r.name},{r.mean_rel_diff!r},{r.std_rel_diff!r},{r.ks_distance!r}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(path: str | Path, entries: dict[str, object]) -> None:
    """Flat key=value run record, with a hash over the entries."""
    body = [f"{k}={v}" for k, v in entries.items()]
    digest = hashlib.sha256("\n".join(body).encode()).hexdigest()[:16]
    Path(path).write_text("\n".join([f"version={__version__}", *body, f"config_hash={digest}"]) + "\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def config_entries(cfg: UQConfig) -> dict[str, object]:
    out = {}
    for k, v in asdict(cfg).items():
        if isinstance(v, dict):
            for kk, vv in v.items():
                out[f"{k}.{kk}"] = vv.value if hasattr(vv, "value") else vv
        else:
            out[k] = v.value if hasattr(v, "value") else v
    return out


def write_result(result: UQResult, out_dir: str | Path, prefix: str, manifest: dict[str, object]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_moments_csv(out / f"{prefix}_moments.csv", result.names, result.mean, result.std)
    write_cdf_csv(out / f"{prefix}_cdf.csv", result.cdf)
    # wall time is left out so reruns give identical manifests
    stable = {k: v for k, v in result.meta.items() if k != "wall_time"}
    write_manifest(out / f"{prefix}_manifest.txt", {**manifest, **stable})
