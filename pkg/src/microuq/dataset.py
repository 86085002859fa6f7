"""Labeled training data: uniform input sampling, FFT labels, shuffling, MUQD files.

Each sample carries the recipe of its grid (kind, c_f, grid_seed) rather than
the voxels; grids are rebuilt on demand, or embedded in the file on request.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ann.train import ArrayData
from .errors import BadFractions, CorruptFile, InvalidBounds, NoConvergence, TargetUnreachable
from .fft import SolverConfig, stress_for_strain
from .microstructure import VoxelGrid, make_grid
from .tensor import MaterialParams, Rep, convert_params

log = logging.getLogger(__name__)

MAGIC = b"MUQD"
VERSION = 1
KINDS = ("fiber", "spheres")
_RECORD = struct.Struct("<5dBQ6d")


@dataclass(frozen=True)
class SampleInputBounds:
    """Uniform ranges for c_f and the matrix parameters; the inclusion is fixed.

    ``matrix_rep`` says whether ``p1``/``p2`` are (E, nu) or (K, G).
    """

    c_f: tuple[float, float] = (0.0, 1.0)
    p1: tuple[float, float] = (1e3, 1e4)
    p2: tuple[float, float] = (0.1, 0.48)
    matrix_rep: Rep = Rep.E_NU
    inclusion: MaterialParams = MaterialParams.from_e_nu(2.31e5, 0.1)

    def __post_init__(self):
        object.__setattr__(self, "matrix_rep", Rep(self.matrix_rep))
        for name in ("c_f", "p1", "p2"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise InvalidBounds(f"{name} bounds ({lo}, {hi}) need lo <= hi")
        if not (0.0 <= self.c_f[0] and self.c_f[1] <= 1.0):
            raise InvalidBounds("c_f bounds must lie in [0, 1]")
        if self.p1[0] <= 0:
            raise InvalidBounds("moduli must be positive")
        if self.matrix_rep is Rep.E_NU:
            if not (0.0 < self.p2[0] and self.p2[1] < 0.5):
                raise InvalidBounds("Poisson ratio bounds must lie in (0, 0.5)")
        elif self.matrix_rep is Rep.K_G:
            if self.p2[0] <= 0:
                raise InvalidBounds("moduli must be positive")
        else:
            raise InvalidBounds("matrix bounds must be given as ENu or KG")


@dataclass(frozen=True)
class Sample:
    c_f: float
    mat_M: MaterialParams
    mat_I: MaterialParams
    strain_index: int
    grid_seed: int
    label: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        if not 1 <= self.strain_index <= 6:
            raise ValueError("strain_index must be in 1..6")
        object.__setattr__(self, "mat_M", convert_params(self.mat_M, Rep.K_G))
        object.__setattr__(self, "mat_I", convert_params(self.mat_I, Rep.K_G))
        object.__setattr__(self, "label", np.asarray(self.label, dtype=float))

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and (self.c_f, self.mat_M, self.mat_I, self.strain_index, self.grid_seed)
            == (other.c_f, other.mat_M, other.mat_I, other.strain_index, other.grid_seed)
            and np.array_equal(self.label, other.label)
        )

    def with_label(self, label) -> Sample:
        return Sample(self.c_f, self.mat_M, self.mat_I, self.strain_index, self.grid_seed, label)


@dataclass
class Dataset:
    kind: str
    n: int
    samples: list[Sample]
    embed_grids: bool = False
    grids: list[np.ndarray] | None = None

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same = (self.kind, self.n, self.embed_grids, self.samples) == (
            other.kind, other.n, other.embed_grids, other.samples)
        if same and self.embed_grids:
            same = all(np.array_equal(a, b) for a, b in zip(self.grids, other.grids))
        return same

    def grid(self, i: int, sphere_radius: float = 0.1) -> VoxelGrid:
        if self.grids is not None:
            return VoxelGrid(self.grids[i])
        s = self.samples[i]
        return make_grid(self.kind, self.n, s.c_f, s.grid_seed, sphere_radius)

    def subset(self, idx) -> Dataset:
        grids = None if self.grids is None else [self.grids[i] for i in idx]
        return Dataset(self.kind, self.n, [self.samples[i] for i in idx], self.embed_grids, grids)


def sample_inputs(bounds: SampleInputBounds, k: int, base_seed: int, strain_index: int = 1) -> Sample:
    """Unlabeled sample k: c_f and matrix parameters uniform in their bounds, seed base_seed + k."""
    rng = np.random.Generator(np.random.PCG64(base_seed + k))
    c_f = float(rng.uniform(*bounds.c_f))
    p1 = float(rng.uniform(*bounds.p1))
    p2 = float(rng.uniform(*bounds.p2))
    mat_M = MaterialParams(bounds.matrix_rep, p1, p2)
    return Sample(c_f, mat_M, bounds.inclusion, strain_index, base_seed + k)


def label_sample(s: Sample, kind: str, n: int, cfg: SolverConfig, sphere_radius: float = 0.1) -> Sample:
    g = make_grid(kind, n, s.c_f, s.grid_seed, sphere_radius)
    return s.with_label(stress_for_strain(g, s.mat_M, s.mat_I, s.strain_index, cfg))


def generate(
    n_s: int,
    bounds: SampleInputBounds,
    n: int,
    kind: str,
    base_seed: int,
    cfg: SolverConfig = SolverConfig(),
    embed_grids: bool = False,
    sphere_radius: float = 0.1,
) -> Dataset:
    """Strain-major generation of n_s labeled samples, shuffled at the end.

    Sample k (k = 0..n_s-1) uses strain state k // (n_s/6) + 1 and seed
    base_seed + k. A sample whose solve or grid fails is replaced by a fresh
    draw with seed base_seed + n_s + (failure count), keeping the strain
    balance; more than 1% failures abort the run with the last error.
    """
    if n_s % 6 != 0:
        raise ValueError(f"n_s={n_s} must be a multiple of 6 so every unit strain state is equally represented")
    if kind not in KINDS:
        raise ValueError(f"unknown microstructure kind {kind!r}")
    per = n_s // 6
    samples: list[Sample] = []
    failures = 0
    for k in range(n_s):
        strain = k // per + 1
        s = sample_inputs(bounds, k, base_seed, strain)
        while True:
            try:
                samples.append(label_sample(s, kind, n, cfg, sphere_radius))
                break
            except (NoConvergence, TargetUnreachable) as exc:
                failures += 1
                log.warning("sample %d failed: %s", k, exc)
                if failures > 0.01 * n_s:
                    exc.sample_index = k
                    raise
                s = sample_inputs(bounds, n_s + failures - 1, base_seed, strain)
        if (k + 1) % max(1, n_s // 10) == 0:
            log.info("generated %d/%d samples (%d failures)", k + 1, n_s, failures)
    order = np.random.Generator(np.random.PCG64([base_seed, 1])).permutation(n_s)
    ds = Dataset(kind, n, [samples[i] for i in order], embed_grids)
    if embed_grids:
        ds.grids = [make_grid(kind, n, s.c_f, s.grid_seed, sphere_radius).data for s in ds.samples]
    return ds


def split(ds: Dataset, fractions: tuple[float, float, float], seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded disjoint partition; sizes are floor(f * n) for val and test, train takes the rest."""
    f = np.asarray(fractions, dtype=float)
    if f.shape != (3,) or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise BadFractions(f"fractions {fractions} must be three non-negative numbers summing to 1")
    n = len(ds)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    n_val = int(np.floor(f[1] * n + 1e-9))
    n_test = int(np.floor(f[2] * n + 1e-9))
    n_train = n - n_val - n_test
    parts = np.split(order, [n_train, n_train + n_val])
    return tuple(ds.subset(sorted(p)) for p in parts)


N_NUMERIC = 8


def numeric_features(mat_M: MaterialParams, strain_index: int) -> np.ndarray:
    """Network numeric input: log K and log G of the matrix, then the one-hot strain state.

    Log moduli keep the inputs on a common scale; the bulk modulus spans two
    decades once the Poisson ratio approaches 0.5.
    """
    K, G = mat_M.bulk_shear()
    x = np.zeros(N_NUMERIC)
    x[0], x[1] = np.log(K), np.log(G)
    x[1 + strain_index] = 1.0
    return x


def to_arrays(ds: Dataset, sphere_radius: float = 0.1) -> ArrayData:
    cache: dict[tuple[float, int], np.ndarray] = {}
    grids = np.empty((len(ds), ds.n, ds.n, ds.n), dtype=np.uint8)
    for i, s in enumerate(ds.samples):
        if ds.grids is not None:
            grids[i] = ds.grids[i]
            continue
        key = (s.c_f, s.grid_seed if ds.kind == "spheres" else 0)
        if key not in cache:
            cache[key] = ds.grid(i, sphere_radius).data
        grids[i] = cache[key]
    x1 = np.array([numeric_features(s.mat_M, s.strain_index) for s in ds.samples]).reshape(len(ds), N_NUMERIC)
    y = np.array([s.label for s in ds.samples]).reshape(len(ds), 6)
    return ArrayData(x1, grids, y)


def serialize(ds: Dataset) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<IIIBB", VERSION, len(ds), ds.n, KINDS.index(ds.kind), int(ds.embed_grids)))
    for i, s in enumerate(ds.samples):
        out.write(_RECORD.pack(s.c_f, s.mat_M.p1, s.mat_M.p2, s.mat_I.p1, s.mat_I.p2,
                               s.strain_index, s.grid_seed, *s.label))
        if ds.embed_grids:
            out.write(np.asarray(ds.grids[i], dtype=np.uint8).ravel(order="F").tobytes())
    return out.getvalue()


def deserialize(buf: bytes) -> Dataset:
    head = struct.calcsize("<IIIBB")
    if len(buf) < 4 + head or buf[:4] != MAGIC:
        raise CorruptFile("bad dataset magic or short header")
    version, n_s, n, kind, embed = struct.unpack_from("<IIIBB", buf, 4)
    if version != VERSION:
        raise CorruptFile(f"unsupported dataset version {version}")
    if kind >= len(KINDS) or embed > 1:
        raise CorruptFile("bad kind or embed flag")
    rec = _RECORD.size + (n**3 if embed else 0)
    pos = 4 + head
    if len(buf) != pos + n_s * rec:
        raise CorruptFile(f"dataset payload has {len(buf) - pos} bytes, expected {n_s * rec}")
    samples, grids = [], [] if embed else None
    for _ in range(n_s):
        v = _RECORD.unpack_from(buf, pos)
        pos += _RECORD.size
        try:
            samples.append(Sample(v[0], MaterialParams.from_k_g(v[1], v[2]),
                                  MaterialParams.from_k_g(v[3], v[4]), v[5], v[6], np.array(v[7:13])))
        except ValueError as exc:
            raise CorruptFile(f"invalid record: {exc}") from None
        if embed:
            g = np.frombuffer(buf, dtype=np.uint8, count=n**3, offset=pos).reshape((n, n, n), order="F")
            grids.append(g.copy())
            pos += n**3
    return Dataset(KINDS[kind], n, samples, bool(embed), grids)


def save(ds: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(serialize(ds))


def load(path: str | Path) -> Dataset:
    return deserialize(Path(path).read_bytes())
