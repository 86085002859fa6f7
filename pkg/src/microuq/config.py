"""Flat key=value run configuration shared by all CLI commands.

One assignment per line, ``#`` starts a comment. Unknown keys are rejected.
Truncation bounds of the UQ inputs reuse the sampling bounds (c_f_lo, ...),
so the surrogate is never queried outside its training range.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .ann import TrainConfig
from .ann.train import HpSearchSpace
from .dataset import SampleInputBounds
from .errors import ConfigError
from .fft import SolverConfig
from .pce import InputDistribution
from .tensor import MaterialParams, Rep
from .uq import UQConfig


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    out: str = "."

    # microstructure
    kind: str = "fiber"
    n: int = 16
    sphere_radius: float = 0.1
    c_f: float = 0.6335
    grid: str = ""

    # materials; p1/p2 are (E, nu) for ENu and (K, G) for KG
    matrix_rep: str = "ENu"
    matrix_p1: float = 3101.0
    matrix_p2: float = 0.41
    inclusion_E: float = 2.31e5
    inclusion_nu: float = 0.1

    # FFT solver
    rel_tol: float = 1e-8
    max_iter: int = 500

    # dataset generation; also the truncation window of the UQ inputs
    n_s: int = 600
    c_f_lo: float = 0.0
    c_f_hi: float = 1.0
    p1_lo: float = 1e3
    p1_hi: float = 1e4
    p2_lo: float = 0.1
    p2_hi: float = 0.48
    embed_grids: bool = False
    dataset: str = "dataset.muqd"

    # training
    checkpoint: str = "model.muqm"
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    alpha: float = 1e-3
    beta: float = 0.0
    lambda_l2: float = 0.0
    batch_size: int = 32
    max_epochs: int = 400
    patience: int = 40
    lr_decay: float = 0.5
    n_F: int = 16
    n_u: int = 256
    n_L: int = 2
    label_transform: str = "symlog"
    label_scale: float = 100.0
    trials: int = 10

    # uncertainty quantification
    c_f_mean: float = 0.6335
    c_f_std: float = 0.0264
    p1_mean: float = 3101.0
    p1_std: float = 111.0
    p2_mean: float = 0.41
    p2_std: float = 0.044
    n_w: int = 10
    n_pce: int = 9
    solver: str = "fft"
    properties: str = "transverse_iso"
    n_cdf: int = 100_000
    kde: bool = False
    n_samples: int = 1000

    # benchmark
    sizes: str = "16,32"
    repetitions: int = 5
    bench_solvers: str = "fft,ann"

    # compare: output prefixes of two uq/mc runs inside their directories
    result_a: str = ""
    result_b: str = ""

    def __post_init__(self):
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        if self.kind not in ("fiber", "spheres"):
            raise ConfigError(f"unknown microstructure kind {self.kind!r}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        try:
            Rep(self.matrix_rep)
        except ValueError:
            raise ConfigError(f"matrix_rep must be ENu or KG, got {self.matrix_rep!r}") from None

    # --- views onto module configs ---------------------------------------

    def matrix(self) -> MaterialParams:
        return MaterialParams(Rep(self.matrix_rep), self.matrix_p1, self.matrix_p2)

    def inclusion(self) -> MaterialParams:
        return MaterialParams.from_e_nu(self.inclusion_E, self.inclusion_nu)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.rel_tol, self.max_iter)

    def bounds(self) -> SampleInputBounds:
        return SampleInputBounds(
            (self.c_f_lo, self.c_f_hi), (self.p1_lo, self.p1_hi), (self.p2_lo, self.p2_hi),
            Rep(self.matrix_rep), self.inclusion(),
        )

    def fractions(self) -> tuple[float, float, float]:
        return (1.0 - self.val_fraction - self.test_fraction, self.val_fraction, self.test_fraction)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha, beta_dropout=self.beta, lambda_l2=self.lambda_l2, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience, lr_decay=self.lr_decay, seed=self.seed,
        )

    def hp_space(self) -> HpSearchSpace:
        return HpSearchSpace(trials=self.trials, seed=self.seed)

    def uq_config(self) -> UQConfig:
        return UQConfig(
            InputDistribution(self.c_f_mean, self.c_f_std, self.c_f_lo, self.c_f_hi),
            InputDistribution(self.p1_mean, self.p1_std, self.p1_lo, self.p1_hi),
            InputDistribution(self.p2_mean, self.p2_std, self.p2_lo, self.p2_hi),
            matrix_rep=Rep(self.matrix_rep), inclusion=self.inclusion(), n_w=self.n_w, n_pce=self.n_pce,
            n=self.n, kind=self.kind, solver=self.solver,
            checkpoint=self.checkpoint if self.solver == "ann" else None,
            properties=self.properties, seed=self.seed, sphere_radius=self.sphere_radius,
            rel_tol=self.rel_tol, max_iter=self.max_iter, n_cdf=self.n_cdf, kde=self.kde,
        )

    def size_list(self) -> list[int]:
        try:
            return [int(s) for s in self.sizes.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"sizes must be a comma-separated integer list, got {self.sizes!r}") from None

    def entries(self) -> dict[str, object]:
        return dataclasses.asdict(self)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            v = float(raw)
            if math.isnan(v):
                raise ValueError
            return v
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad {kind} value for {key}: {raw!r}") from None
    return raw


def parse_assignments(lines, source: str = "<config>") -> dict[str, object]:
    values = {}
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def load_config(path: str | Path | None = None, overrides: dict[str, object] | None = None) -> RunConfig:
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        values = parse_assignments(p.read_text().splitlines(), str(p))
    values.update(overrides or {})
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.entries().items())
