"""Strain-based Galerkin FFT solver for periodic linear elasticity on voxel grids.

Fields are stored component-first with shape (6, n, n, n). Public fields use
Voigt notation (engineering shear strain, plain stress); the solver works in
Mandel components internally, where the tensor double dot is a plain dot
product and the compatibility projection is orthogonal, so CG applies.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .errors import DimensionMismatch, NoConvergence
from .microstructure import VoxelGrid
from .tensor import MaterialParams, stiffness_of, unit_strain, voigt_to_mandel_stiffness

log = logging.getLogger(__name__)

SQ2 = np.sqrt(2.0)
_AXES = (1, 2, 3)
# scipy.fft worker count; set by the CLI threads option
workers = 1


def voigt_to_mandel_strain(e: np.ndarray) -> np.ndarray:
    m = np.array(e, dtype=float, copy=True)
    m[3:] /= SQ2
    return m


def mandel_to_voigt_strain(m: np.ndarray) -> np.ndarray:
    e = np.array(m, dtype=float, copy=True)
    e[3:] *= SQ2
    return e


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must be in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


class ProjectionOperator:
    """Orthogonal projection onto compatible, zero-mean strain fields.

    At each nonzero frequency with unit direction q the tensor amplitude A is
    mapped to sym(2 (A q) x q) - (q . A q) q x q, i.e. the symmetric-gradient
    part sym(u x q). The zero mode is removed, which pins the field mean. For
    even n the modes touching the Nyquist index are removed as well, because
    they cannot be projected consistently with a real-valued field.
    """

    def __init__(self, n: int):
        self.n = n
        k = np.fft.fftfreq(n) * n
        kz = np.fft.rfftfreq(n) * n
        k1, k2, k3 = np.meshgrid(k, k, kz, indexing="ij")
        norm = np.sqrt(k1**2 + k2**2 + k3**2)
        keep = norm > 0
        if n % 2 == 0:
            nyq = n // 2
            keep &= (np.abs(k1) != nyq) & (np.abs(k2) != nyq) & (np.abs(k3) != nyq)
        safe = np.where(keep, norm, 1.0)
        # Frequencies scale out of the unit direction, so the 2*pi factor is dropped.
        self.q = np.stack([k1, k2, k3]) / safe * keep

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    def _apply_hat(self, a):
        q1, q2, q3 = self.q
        a11, a22, a33 = a[0], a[1], a[2]
        a23, a13, a12 = a[3] / SQ2, a[4] / SQ2, a[5] / SQ2
        v1 = a11 * q1 + a12 * q2 + a13 * q3
        v2 = a12 * q1 + a22 * q2 + a23 * q3
        v3 = a13 * q1 + a23 * q2 + a33 * q3
        s = q1 * v1 + q2 * v2 + q3 * v3
        out = np.empty_like(a)
        out[0] = (2 * v1 - s * q1) * q1
        out[1] = (2 * v2 - s * q2) * q2
        out[2] = (2 * v3 - s * q3) * q3
        out[3] = SQ2 * (v2 * q3 + v3 * q2 - s * q2 * q3)
        out[4] = SQ2 * (v1 * q3 + v3 * q1 - s * q1 * q3)
        out[5] = SQ2 * (v1 * q2 + v2 * q1 - s * q1 * q2)
        return out

    def _check(self, f: np.ndarray):
        if f.shape != (6, *self.shape):
            raise DimensionMismatch(f"field shape {f.shape} does not match n={self.n}")

    def apply_mandel(self, f: np.ndarray) -> np.ndarray:
        self._check(f)
        a = scipy.fft.rfftn(f, axes=_AXES, workers=workers)
        return scipy.fft.irfftn(self._apply_hat(a), s=self.shape, axes=_AXES, workers=workers)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        """Project a Voigt strain field (engineering shear)."""
        f = np.asarray(f, dtype=float)
        self._check(f)
        return mandel_to_voigt_strain(self.apply_mandel(voigt_to_mandel_strain(f)))


@functools.lru_cache(maxsize=8)
def projection_operator(n: int) -> ProjectionOperator:
    return ProjectionOperator(n)


def project(op: ProjectionOperator, f: np.ndarray) -> np.ndarray:
    return op(f)


class _Stiffness:
    """Voxel-wise isotropic stiffness on Mandel fields: lam tr(e) I + 2 mu e."""

    def __init__(self, g: VoxelGrid, mat_M: MaterialParams, mat_I: MaterialParams):
        lam_m, mu_m = _lame(mat_M)
        lam_i, mu_i = _lame(mat_I)
        self.Mm = voigt_to_mandel_stiffness(stiffness_of(mat_M))
        mask = g.data.astype(bool)
        self.lam = np.where(mask, lam_i, lam_m)
        self.mu2 = np.where(mask, 2.0 * mu_i, 2.0 * mu_m)

    def __call__(self, e: np.ndarray) -> np.ndarray:
        s = self.mu2 * e
        s[:3] += self.lam * (e[0] + e[1] + e[2])
        return s


def _lame(p: MaterialParams) -> tuple[float, float]:
    K, G = p.bulk_shear()
    return K - 2.0 * G / 3.0, G


@dataclass
class SolveInfo:
    iterations: int = 0
    residual: float = 0.0


def _cg(apply_A, b, rel_tol, max_iter, info: SolveInfo):
    x = np.zeros_like(b)
    r = b.copy()
    rr = float(np.vdot(r, r))
    bnorm = np.sqrt(rr)
    info.iterations, info.residual = 0, 0.0
    if bnorm == 0.0:
        return x
    p = r.copy()
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        alpha = rr / float(np.vdot(p, Ap))
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(np.vdot(r, r))
        info.iterations, info.residual = it, np.sqrt(rr_new) / bnorm
        if info.residual <= rel_tol:
            return x
        p *= rr_new / rr
        p += r
        rr = rr_new
    raise NoConvergence(info.iterations, info.residual)


def _solve_mandel(op, stiff, eps_bar_m, cfg, info):
    n = op.n
    e_bar = np.broadcast_to(eps_bar_m[:, None, None, None], (6, n, n, n))
    rhs = -op.apply_mandel(stiff(np.ascontiguousarray(e_bar)))
    # A homogeneous cell leaves only FFT round-off in the right-hand side.
    scale = np.linalg.norm(stiff.Mm @ eps_bar_m) * np.sqrt(n**3) + 1e-300
    if np.linalg.norm(rhs) <= 1e-13 * scale:
        info.iterations, info.residual = 0, 0.0
        return e_bar.copy()
    fluct = _cg(lambda v: op.apply_mandel(stiff(v)), rhs, cfg.rel_tol, cfg.max_iter, info)
    return fluct + e_bar


def solve_micro(
    g: VoxelGrid,
    mat_M: MaterialParams,
    mat_I: MaterialParams,
    eps_bar: np.ndarray,
    cfg: SolverConfig = SolverConfig(),
    info: SolveInfo | None = None,
) -> np.ndarray:
    """Converged Voigt strain field eps = eps_bar + eps* with shape (6, n, n, n)."""
    eps_bar = np.asarray(eps_bar, dtype=float)
    if eps_bar.shape != (6,):
        raise DimensionMismatch("eps_bar must have 6 Voigt components")
    info = info if info is not None else SolveInfo()
    op = projection_operator(g.n)
    e = _solve_mandel(op, _Stiffness(g, mat_M, mat_I), voigt_to_mandel_strain(eps_bar), cfg, info)
    return mandel_to_voigt_strain(e)


def _phase_stiffness(mat_M, mat_I):
    return stiffness_of(mat_M), stiffness_of(mat_I)


def average_stress(g: VoxelGrid, mat_M, mat_I, eps: np.ndarray) -> np.ndarray:
    C_m, C_i = _phase_stiffness(mat_M, mat_I)
    mask = g.data.astype(bool)
    flat = eps.reshape(6, -1)
    m = mask.ravel()
    total = flat.shape[1]
    sum_i = flat[:, m].sum(axis=1)
    sum_m = flat.sum(axis=1) - sum_i
    return (C_m @ sum_m + C_i @ sum_i) / total


def stress_field(g: VoxelGrid, mat_M, mat_I, eps: np.ndarray) -> np.ndarray:
    C_m, C_i = _phase_stiffness(mat_M, mat_I)
    flat = eps.reshape(6, -1)
    sig = C_m @ flat
    m = g.data.astype(bool).ravel()
    sig[:, m] = C_i @ flat[:, m]
    return sig.reshape(eps.shape)


def hill_mandel_residual(g: VoxelGrid, mat_M, mat_I, eps: np.ndarray) -> float:
    sig = stress_field(g, mat_M, mat_I, eps)
    micro = float(np.mean(np.sum(sig * eps, axis=0)))
    s_bar = sig.reshape(6, -1).mean(axis=1)
    e_bar = eps.reshape(6, -1).mean(axis=1)
    macro = float(s_bar @ e_bar)
    return abs(micro - macro) / abs(macro)


@dataclass
class HomogenizationResult:
    C: np.ndarray
    asymmetry: float
    iterations: list[int] = field(default_factory=list)


def homogenize_detailed(g: VoxelGrid, mat_M, mat_I, cfg: SolverConfig = SolverConfig()) -> HomogenizationResult:
    op = projection_operator(g.n)
    stiff = _Stiffness(g, mat_M, mat_I)
    C = np.zeros((6, 6))
    iters = []
    for i in range(1, 7):
        info = SolveInfo()
        try:
            e = _solve_mandel(op, stiff, voigt_to_mandel_strain(unit_strain(i)), cfg, info)
        except NoConvergence as exc:
            raise NoConvergence(exc.iterations, exc.residual, strain_index=i) from None
        C[:, i - 1] = average_stress(g, mat_M, mat_I, mandel_to_voigt_strain(e))
        iters.append(info.iterations)
    asym = float(np.max(np.abs(C - C.T)) / np.max(np.abs(C))) if np.any(C) else 0.0
    if asym > 1e-6:
        log.warning("effective stiffness asymmetry %.2e before symmetrization", asym)
    return HomogenizationResult(0.5 * (C + C.T), asym, iters)


def homogenize(g: VoxelGrid, mat_M, mat_I, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Effective 6x6 Voigt stiffness from six unit macro strains."""
    return homogenize_detailed(g, mat_M, mat_I, cfg).C


def stress_for_strain(g: VoxelGrid, mat_M, mat_I, strain_index: int, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Average stress response to a single unit macro strain."""
    try:
        eps = solve_micro(g, mat_M, mat_I, unit_strain(strain_index), cfg)
    except NoConvergence as exc:
        raise NoConvergence(exc.iterations, exc.residual, strain_index=strain_index) from None
    return average_stress(g, mat_M, mat_I, eps)
