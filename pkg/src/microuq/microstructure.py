"""Binary voxel unit cells: centered single fibers and RSA sphere packings.

Grids live on the unit cube; voxel (i1, i2, i3) has its center at
((i1 + 0.5)/n, (i2 + 0.5)/n, (i3 + 0.5)/n) and array axis 0 is direction 1.
Randomness comes from numpy's PCG64 bit generator, seeded per grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFile, OutOfRange, TargetUnreachable

GRID_MAGIC = b"MUQG"
GRID_VERSION = 1
FIELD_MAGIC = b"MUQF"


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """n**3 phase indicators, 0 = matrix and 1 = inclusion."""

    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.uint8)
        if d.ndim != 3 or len(set(d.shape)) != 1:
            raise ValueError(f"grid must be a cube, got shape {d.shape}")
        if d.shape[0] < 2:
            raise ValueError("grid needs n >= 2")
        if d.size and d.max() > 1:
            raise ValueError("grid entries must be 0 or 1")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, VoxelGrid) and np.array_equal(self.data, other.data)

    @classmethod
    def homogeneous(cls, n: int, phase: int = 0) -> VoxelGrid:
        return cls(np.full((n, n, n), phase, dtype=np.uint8))


@dataclass(frozen=True)
class RsaConfig:
    sphere_radius: float = 0.1
    max_attempts: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.sphere_radius < 0.5:
            raise ValueError("sphere_radius must be in (0, 0.5)")
        if self.max_attempts <= 0:
            raise ValueError("max_attempts must be positive")


def volume_fraction(g: VoxelGrid) -> float:
    return float(np.count_nonzero(g.data)) / g.data.size


def _centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def gen_single_fiber(n: int, c_f: float) -> VoxelGrid:
    """Cylinder along x1 of radius sqrt(c_f/pi), centered in the 2-3 section.

    For c_f > pi/4 the radius exceeds half the cell and the cylinder is
    clipped by the cell faces.
    """
    if not 0.0 <= c_f <= 1.0:
        raise OutOfRange(f"c_f={c_f} not in [0, 1]")
    r = np.sqrt(c_f / np.pi)
    x = _centers(n) - 0.5
    inside = (x[:, None] ** 2 + x[None, :] ** 2) <= r * r
    if c_f == 0.0:
        inside[:] = False
    data = np.broadcast_to(inside[None, :, :], (n, n, n)).astype(np.uint8)
    return VoxelGrid(data)


def _sphere_voxels(center: np.ndarray, radius: float, n: int) -> tuple[np.ndarray, ...]:
    """Indices of voxels whose centers lie within radius of center (periodic)."""
    axes = []
    for c in center:
        lo = int(np.floor((c - radius) * n - 0.5))
        hi = int(np.ceil((c + radius) * n - 0.5))
        idx = np.arange(lo, hi + 1)
        d = (idx + 0.5) / n - c
        axes.append((idx % n, d))
    (i1, d1), (i2, d2), (i3, d3) = axes
    dist2 = d1[:, None, None] ** 2 + d2[None, :, None] ** 2 + d3[None, None, :] ** 2
    a, b, c = np.nonzero(dist2 <= radius * radius)
    out = i1[a], i2[b], i3[c]
    if max(len(i1), len(i2), len(i3)) > n:
        # window wider than the cell: the same voxel can appear twice
        flat = np.unique(np.ravel_multi_index(out, (n, n, n)))
        out = np.unravel_index(flat, (n, n, n))
    return out


def gen_spheres_rsa(n: int, c_f: float, cfg: RsaConfig) -> VoxelGrid:
    """Random sequential adsorption of equal spheres with periodic wrap-around.

    A candidate sphere is rejected when any of its voxels is already taken.
    Placement stops once the voxel volume fraction reaches c_f.
    """
    if not 0.0 <= c_f < 0.5:
        raise OutOfRange(f"c_f={c_f} not in [0, 0.5)")
    data = np.zeros((n, n, n), dtype=np.uint8)
    if c_f == 0.0:
        return VoxelGrid(data)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    target = int(np.ceil(c_f * n**3 - 1e-9))
    filled = 0
    attempts = 0
    while filled < target and attempts < cfg.max_attempts:
        attempts += 1
        center = rng.random(3)
        idx = _sphere_voxels(center, cfg.sphere_radius, n)
        if len(idx[0]) == 0 or data[idx].any():
            continue
        data[idx] = 1
        filled += len(idx[0])
    reached = filled / n**3
    if filled < target and reached < c_f - 0.02:
        raise TargetUnreachable(reached, c_f, attempts)
    return VoxelGrid(data)


def make_grid(kind: str, n: int, c_f: float, seed: int, sphere_radius: float = 0.1) -> VoxelGrid:
    if kind == "fiber":
        return gen_single_fiber(n, c_f)
    if kind == "spheres":
        return gen_spheres_rsa(n, c_f, RsaConfig(sphere_radius=sphere_radius, seed=seed))
    raise ValueError(f"unknown microstructure kind {kind!r}")


def grid_to_bytes(g: VoxelGrid) -> bytes:
    header = GRID_MAGIC + struct.pack("<II", GRID_VERSION, g.n)
    return header + g.data.ravel(order="F").tobytes()


def grid_from_bytes(buf: bytes) -> VoxelGrid:
    if len(buf) < 12 or buf[:4] != GRID_MAGIC:
        raise CorruptFile("bad grid magic")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != GRID_VERSION:
        raise CorruptFile(f"unsupported grid version {version}")
    if len(buf) != 12 + n**3:
        raise CorruptFile(f"grid payload has {len(buf) - 12} bytes, expected {n**3}")
    data = np.frombuffer(buf, dtype=np.uint8, offset=12).reshape((n, n, n), order="F")
    if data.max(initial=0) > 1:
        raise CorruptFile("grid entries must be 0 or 1")
    return VoxelGrid(data.copy())


def save_grid(g: VoxelGrid, path: str | Path) -> None:
    Path(path).write_bytes(grid_to_bytes(g))


def load_grid(path: str | Path) -> VoxelGrid:
    return grid_from_bytes(Path(path).read_bytes())


def field_to_bytes(g: VoxelGrid, field: np.ndarray) -> bytes:
    """Grid record followed by an f32 Voigt field, components outermost."""
    f = np.asarray(field, dtype="<f4")
    if f.shape != (6, g.n, g.n, g.n):
        raise ValueError(f"field shape {f.shape} does not match grid n={g.n}")
    head = FIELD_MAGIC + struct.pack("<III", GRID_VERSION, g.n, 6)
    payload = b"".join(f[c].ravel(order="F").tobytes() for c in range(6))
    return head + g.data.ravel(order="F").tobytes() + payload


def field_from_bytes(buf: bytes) -> tuple[VoxelGrid, np.ndarray]:
    if len(buf) < 16 or buf[:4] != FIELD_MAGIC:
        raise CorruptFile("bad field magic")
    version, n, nc = struct.unpack_from("<III", buf, 4)
    expected = 16 + n**3 + 4 * nc * n**3
    if version != GRID_VERSION or len(buf) != expected:
        raise CorruptFile("field file has wrong version or length")
    grid = np.frombuffer(buf, dtype=np.uint8, count=n**3, offset=16).reshape((n, n, n), order="F")
    vals = np.frombuffer(buf, dtype="<f4", offset=16 + n**3).reshape(nc, n**3)
    field = np.stack([v.reshape((n, n, n), order="F") for v in vals])
    return VoxelGrid(grid.copy()), field
