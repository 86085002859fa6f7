"""Isotropic linear elasticity in Voigt notation.

Voigt ordering is (11, 22, 33, 23, 13, 12). Strain vectors carry engineering
shear (gamma = 2 eps_ij), so stiffness matrices hold plain G on the shear
diagonal and sigma = C @ eps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import Degenerate, IndexOutOfRange, NonPhysical

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


class Rep(str, enum.Enum):
    LAME_G = "LameG"
    E_NU = "ENu"
    K_G = "KG"


@dataclass(frozen=True)
class MaterialParams:
    """Two-parameter isotropic material in one of three representations."""

    representation: Rep
    p1: float
    p2: float

    def __post_init__(self):
        rep = Rep(self.representation)
        object.__setattr__(self, "representation", rep)
        a, b = float(self.p1), float(self.p2)
        if not (np.isfinite(a) and np.isfinite(b)):
            raise NonPhysical(f"non-finite parameters ({a}, {b})")
        if rep is Rep.E_NU:
            if a <= 0 or not (0.0 <= b < 0.5):
                raise NonPhysical(f"E={a}, nu={b} outside E>0, 0<=nu<0.5")
        elif rep is Rep.K_G:
            if a <= 0 or b <= 0:
                raise NonPhysical(f"K={a}, G={b} must both be positive")
        else:
            if a < 0 or b <= 0:
                raise NonPhysical(f"lambda={a}, G={b} needs lambda>=0, G>0")

    @classmethod
    def from_e_nu(cls, E: float, nu: float) -> MaterialParams:
        return cls(Rep.E_NU, E, nu)

    @classmethod
    def from_k_g(cls, K: float, G: float) -> MaterialParams:
        return cls(Rep.K_G, K, G)

    def bulk_shear(self) -> tuple[float, float]:
        p = convert_params(self, Rep.K_G)
        return p.p1, p.p2


def _to_lame(p: MaterialParams) -> tuple[float, float]:
    a, b = float(p.p1), float(p.p2)
    if p.representation is Rep.LAME_G:
        return a, b
    if p.representation is Rep.E_NU:
        return a * b / ((1.0 + b) * (1.0 - 2.0 * b)), a / (2.0 * (1.0 + b))
    return a - 2.0 * b / 3.0, b


def convert_params(p: MaterialParams, target: Rep | str) -> MaterialParams:
    """Express the same isotropic material in the target representation.

    Raises NonPhysical when the result would leave the admissible range of the
    target representation (e.g. a negative Poisson ratio from K, G input).
    """
    target = Rep(target)
    if p.representation is target:
        return p
    lam, G = _to_lame(p)
    if target is Rep.LAME_G:
        return MaterialParams(target, lam, G)
    if target is Rep.K_G:
        return MaterialParams(target, lam + 2.0 * G / 3.0, G)
    if lam + G <= 0:
        raise NonPhysical("lambda + G <= 0")
    E = G * (3.0 * lam + 2.0 * G) / (lam + G)
    nu = lam / (2.0 * (lam + G))
    return MaterialParams(target, E, nu)


def isotropic_stiffness(K: float, G: float) -> np.ndarray:
    if K < 0 or G < 0:
        raise NonPhysical(f"K={K}, G={G} must be non-negative")
    lam = K - 2.0 * G / 3.0
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[[0, 1, 2], [0, 1, 2]] = lam + 2.0 * G
    C[[3, 4, 5], [3, 4, 5]] = G
    return C


def stiffness_of(p: MaterialParams) -> np.ndarray:
    return isotropic_stiffness(*p.bulk_shear())


@dataclass(frozen=True)
class IsoProps:
    E: float
    nu: float


@dataclass(frozen=True)
class TransverseIsoProps:
    E1: float
    E2: float
    G12: float
    G23: float
    nu12: float
    nu23: float

    def as_dict(self) -> dict[str, float]:
        return {
            "E1": self.E1, "E2": self.E2, "G12": self.G12,
            "G23": self.G23, "nu12": self.nu12, "nu23": self.nu23,
        }


def extract_isotropic(C: np.ndarray) -> IsoProps:
    """Closest isotropic reading of C; anisotropic deviations are ignored."""
    C = np.asarray(C, dtype=float)
    mu = float(np.mean(np.diag(C)[3:]))
    off = C[:3, :3][~np.eye(3, dtype=bool)]
    lam = float(np.mean(off))
    if lam + mu <= 0:
        raise Degenerate(f"lambda + mu = {lam + mu} <= 0")
    E = mu * (3.0 * lam + 2.0 * mu) / (lam + mu)
    nu = lam / (2.0 * (lam + mu))
    return IsoProps(E, nu)


def extract_transverse_isotropic(C: np.ndarray, axis: int = 1) -> TransverseIsoProps:
    """Engineering constants of a transversely isotropic C with fiber along x1.

    Reads the compliance S = inv(C); entries related by the 2<->3 symmetry
    are averaged before use.
    """
    if axis != 1:
        raise ValueError("only axis 1 is supported")
    C = np.asarray(C, dtype=float)
    if np.linalg.cond(C) > 1.0 / np.finfo(float).eps:
        raise Degenerate("stiffness matrix is singular")
    S = np.linalg.inv(C)
    S = 0.5 * (S + S.T)
    E1 = 1.0 / S[0, 0]
    E2 = 1.0 / (0.5 * (S[1, 1] + S[2, 2]))
    nu12 = -0.5 * (S[0, 1] + S[0, 2]) * E1
    nu23 = -S[1, 2] * E2
    G23 = 1.0 / S[3, 3]
    G12 = 1.0 / (0.5 * (S[4, 4] + S[5, 5]))
    return TransverseIsoProps(E1, E2, G12, G23, nu12, nu23)


def transverse_isotropic_stiffness(E1, E2, G12, G23, nu12, nu23) -> np.ndarray:
    """Stiffness assembled from engineering constants via the compliance."""
    S = np.zeros((6, 6))
    S[0, 0] = 1.0 / E1
    S[1, 1] = S[2, 2] = 1.0 / E2
    S[0, 1] = S[1, 0] = S[0, 2] = S[2, 0] = -nu12 / E1
    S[1, 2] = S[2, 1] = -nu23 / E2
    S[3, 3] = 1.0 / G23
    S[4, 4] = S[5, 5] = 1.0 / G12
    return np.linalg.inv(S)


def unit_strain(i: int) -> np.ndarray:
    """Voigt unit macro strain with a one in slot i (1-based)."""
    if not 1 <= i <= 6:
        raise IndexOutOfRange(f"strain index {i} not in 1..6")
    e = np.zeros(6)
    e[i - 1] = 1.0
    return e


# Mandel scaling: Euclidean dot of Mandel vectors equals the tensor double dot.
MANDEL = np.array([1.0, 1.0, 1.0, np.sqrt(2.0), np.sqrt(2.0), np.sqrt(2.0)])


def voigt_to_mandel_stiffness(C: np.ndarray) -> np.ndarray:
    return C * np.outer(MANDEL, MANDEL)


def voigt_bound(C_m: np.ndarray, C_i: np.ndarray, c: float) -> np.ndarray:
    return (1.0 - c) * C_m + c * C_i


def reuss_bound(C_m: np.ndarray, C_i: np.ndarray, c: float) -> np.ndarray:
    S = (1.0 - c) * np.linalg.inv(C_m) + c * np.linalg.inv(C_i)
    return np.linalg.inv(S)
