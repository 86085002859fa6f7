"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
Every command writes ``<out>/<command>_manifest.txt`` with the full
configuration, so a run can be repeated from its manifest alone.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, fft
from . import dataset as ds_mod
from .ann import ArrayData, Network, alexnet_lite, evaluate, hp_random_search, init_glorot, train
from .ann import load as load_net
from .ann import save as save_net
from .config import RunConfig, load_config, parse_assignments
from .errors import (
    BadFractions,
    ConfigError,
    InvalidBounds,
    MicroUQError,
    NonPhysical,
    OutOfRange,
)
from .microstructure import load_grid, make_grid, save_grid, volume_fraction
from .pce import read_cdf_csv, read_moments_csv
from .tensor import extract_transverse_isotropic
from .uq import (
    AnnHomogenizer,
    UQResult,
    bench_case,
    bench_timing,
    compare_results,
    run_mc,
    run_uq,
    write_compare_csv,
    write_manifest,
    write_result,
)

log = logging.getLogger("microuq")

CONFIG_ERRORS = (ConfigError, NonPhysical, InvalidBounds, BadFractions, OutOfRange)


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _target(path: str | Path) -> Path:
    """Output file path with its parent directory created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not path or not p.is_file():
        raise ConfigError(f"{what} {path!r} not found")
    return p


def _manifest(cfg: RunConfig, command: str, **extra) -> None:
    write_manifest(_out(cfg) / f"{command.replace('-', '_')}_manifest.txt",
                   {"command": command, **cfg.entries(), **extra})


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# --- commands -------------------------------------------------------------

def cmd_gen_micro(cfg: RunConfig) -> None:
    g = make_grid(cfg.kind, cfg.n, cfg.c_f, cfg.seed, cfg.sphere_radius)
    path = Path(cfg.grid) if cfg.grid else _out(cfg) / "grid.muqg"
    save_grid(g, _target(path))
    print(f"wrote {path}: n={g.n} c_f={_fmt(volume_fraction(g))}")
    _manifest(cfg, "gen-micro", grid_file=path, volume_fraction=volume_fraction(g))


def cmd_homogenize(cfg: RunConfig) -> None:
    mat_M, mat_I = cfg.matrix(), cfg.inclusion()
    g = load_grid(_require(cfg.grid, "grid file")) if cfg.grid else make_grid(
        cfg.kind, cfg.n, cfg.c_f, cfg.seed, cfg.sphere_radius)
    if cfg.solver == "ann":
        C = AnnHomogenizer(load_net(_require(cfg.checkpoint, "checkpoint")))(g, mat_M, mat_I)
    else:
        C = fft.homogenize(g, mat_M, mat_I, cfg.solver_config())
    for row in C:
        print(" ".join(f"{_fmt(v):>12}" for v in row))
    props = extract_transverse_isotropic(C).as_dict()
    for k, v in props.items():
        print(f"{k} = {_fmt(v)}")
    out = _out(cfg)
    np.savetxt(out / "homogenized_stiffness.csv", C, delimiter=",", fmt="%.17g")
    _manifest(cfg, "homogenize", volume_fraction=volume_fraction(g))


def cmd_gen_data(cfg: RunConfig) -> None:
    if cfg.n_s % 6 != 0:
        raise ConfigError(f"n_s={cfg.n_s} must be a multiple of 6 (equal share of each unit strain state)")
    ds = ds_mod.generate(cfg.n_s, cfg.bounds(), cfg.n, cfg.kind, cfg.seed, cfg.solver_config(),
                         cfg.embed_grids, cfg.sphere_radius)
    ds_mod.save(ds, _target(cfg.dataset))
    print(f"wrote {cfg.dataset}: {len(ds)} samples, n={ds.n}")
    _manifest(cfg, "gen-data")


def _load_splits(cfg: RunConfig) -> tuple[ArrayData, ArrayData, ArrayData]:
    ds = ds_mod.load(_require(cfg.dataset, "dataset"))
    parts = ds_mod.split(ds, cfg.fractions(), cfg.seed)
    return tuple(ds_mod.to_arrays(p, cfg.sphere_radius) for p in parts)


def _grid_n(data: ArrayData) -> int:
    return 0 if data.x2 is None else data.x2.shape[1]


def make_network(cfg: RunConfig, grid_n: int, n_F=None, n_u=None, n_L=None, beta=None) -> Network:
    return alexnet_lite(
        grid_n, ds_mod.N_NUMERIC, 6,
        n_F=cfg.n_F if n_F is None else n_F, n_u=cfg.n_u if n_u is None else n_u,
        n_L=cfg.n_L if n_L is None else n_L, beta=cfg.beta if beta is None else beta,
        label_transform=cfg.label_transform, label_scale=cfg.label_scale,
    )


def cmd_train(cfg: RunConfig) -> None:
    tr, va, te = _load_splits(cfg)
    net = train(tr, make_network(cfg, _grid_n(tr)), cfg.train_config(), va if len(va) else None)
    save_net(net, _target(cfg.checkpoint))
    with open(_out(cfg) / "train_log.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for epoch, tl, vl, lr in net.history:
            w.writerow([epoch, repr(tl), repr(vl), repr(lr)])
    err = evaluate(net, te) if len(te) else float("nan")
    print(f"epochs {net.meta.epochs}, best val loss {_fmt(net.meta.best_val_loss)}")
    print(f"test mean relative error {err:.4%}")
    _manifest(cfg, "train", epochs=net.meta.epochs, test_error=repr(err))


def cmd_hp_search(cfg: RunConfig) -> None:
    tr, va, _ = _load_splits(cfg)
    if not len(va):
        raise ConfigError("hyperparameter search needs val_fraction > 0")
    n = _grid_n(tr)
    res = hp_random_search(
        cfg.hp_space(), tr, va,
        lambda n_F, n_u, n_L, beta: make_network(cfg, n, n_F, n_u, n_L, beta),
        cfg.train_config(),
    )
    out = _out(cfg)
    with open(out / "hp_trials.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "alpha", "lambda_l2", "beta", "n_u", "n_F", "n_L", "val_loss", "error"])
        for i, t in enumerate(res.trials):
            w.writerow([i, repr(t.alpha), repr(t.lambda_l2), t.beta, t.n_u, t.n_F, t.n_L, repr(t.val_loss), t.error])
    b = res.best
    best = {"alpha": b.alpha, "lambda_l2": b.lambda_l2, "beta": b.beta, "n_u": b.n_u, "n_F": b.n_F,
            "n_L": b.n_L, "seed": res.best_config.seed}
    (out / "hp_best.cfg").write_text("".join(f"{k} = {v!r}\n" for k, v in best.items()))
    print("best trial: " + ", ".join(f"{k}={v}" for k, v in best.items()) + f", val loss {_fmt(b.val_loss)}")
    _manifest(cfg, "hp-search", **{f"best_{k}": v for k, v in best.items()})


def _uq_checks(cfg: RunConfig) -> None:
    if cfg.solver == "ann":
        _require(cfg.checkpoint, "checkpoint")


def cmd_uq(cfg: RunConfig) -> None:
    _uq_checks(cfg)
    res = run_uq(cfg.uq_config())
    _report(cfg, res, "uq")


def cmd_mc(cfg: RunConfig) -> None:
    _uq_checks(cfg)
    res = run_mc(cfg.uq_config(), cfg.n_samples)
    _report(cfg, res, "mc")


def _report(cfg: RunConfig, res: UQResult, prefix: str) -> None:
    write_result(res, _out(cfg), prefix, {"command": prefix, **cfg.entries()})
    print(f"{'property':>10} {'mean':>14} {'std':>14}")
    for name, m, s in zip(res.names, res.mean, res.std):
        print(f"{name:>10} {_fmt(m):>14} {_fmt(s):>14}")
    print(f"solver calls {res.meta['solver_calls']}, wall time {res.meta['wall_time']:.2f} s")


def _ann_for(cfg: RunConfig):
    """Timed network per size: the checkpoint when its grid matches, else a Glorot-initialised
    network of the same topology (inference cost does not depend on the weight values)."""
    ckpt = Path(cfg.checkpoint)
    trained = load_net(ckpt) if ckpt.is_file() else None

    def factory(n):
        net = trained if trained is not None and trained.grid_n == n else init_glorot(make_network(cfg, n), cfg.seed)
        g, mat_M, mat_I = bench_case(n)
        homog = AnnHomogenizer(net)
        return lambda: homog(g, mat_M, mat_I)
    return factory


def _fft_for(cfg: RunConfig):
    def factory(n):
        g, mat_M, mat_I = bench_case(n)
        scfg = cfg.solver_config()
        return lambda: fft.homogenize(g, mat_M, mat_I, scfg)
    return factory


def cmd_bench(cfg: RunConfig) -> None:
    solvers = {s.strip() for s in cfg.bench_solvers.split(",") if s.strip()}
    if not solvers or not solvers <= {"fft", "ann"}:
        raise ConfigError(f"bench_solvers must name fft and/or ann, got {cfg.bench_solvers!r}")
    if cfg.repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    rows = bench_timing(
        cfg.size_list(),
        _fft_for(cfg) if "fft" in solvers else None,
        _ann_for(cfg) if "ann" in solvers else None,
        cfg.repetitions,
    )

    def cell(v):
        return "" if v is None else repr(v)
    with open(_out(cfg) / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "fft_seconds", "ann_seconds", "ratio"])
        for r in rows:
            w.writerow([r.n, cell(r.fft_seconds), cell(r.ann_seconds), cell(r.ratio)])
    for r in rows:
        print(f"n={r.n} fft={cell(r.fft_seconds) or '-'} ann={cell(r.ann_seconds) or '-'} ratio={cell(r.ratio) or '-'}")
    _manifest(cfg, "bench")


def read_result(prefix: str) -> UQResult:
    """Rebuild a result from ``<prefix>_moments.csv`` and ``<prefix>_cdf.csv``."""
    mom = read_moments_csv(_require(f"{prefix}_moments.csv", "moments table"))
    cdf = read_cdf_csv(_require(f"{prefix}_cdf.csv", "CDF table"))
    names = list(mom)
    return UQResult(names, np.array([mom[k][0] for k in names]), np.array([mom[k][1] for k in names]), cdf)


def cmd_compare(cfg: RunConfig) -> None:
    a, b = read_result(cfg.result_a), read_result(cfg.result_b)
    rows = compare_results(a, b)
    write_compare_csv(_out(cfg) / "compare.csv", rows)
    print(f"{'property':>10} {'mean_rel':>12} {'std_rel':>12} {'ks':>12}")
    for r in rows:
        print(f"{r.name:>10} {_fmt(r.mean_rel_diff):>12} {_fmt(r.std_rel_diff):>12} {_fmt(r.ks_distance):>12}")
    _manifest(cfg, "compare")


COMMANDS = {
    "gen-micro": (cmd_gen_micro, "generate a voxel microstructure"),
    "homogenize": (cmd_homogenize, "effective 6x6 stiffness of one microstructure"),
    "gen-data": (cmd_gen_data, "generate a labeled training dataset"),
    "train": (cmd_train, "train the surrogate network"),
    "hp-search": (cmd_hp_search, "random hyperparameter search"),
    "uq": (cmd_uq, "polynomial chaos uncertainty propagation"),
    "mc": (cmd_mc, "Monte Carlo uncertainty propagation"),
    "bench": (cmd_bench, "time FFT and network homogenization"),
    "compare": (cmd_compare, "compare two uq/mc results"),
}


def build_parser() -> argparse.ArgumentParser:
    # suppressed defaults let the flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--threads", type=int, help="FFT worker threads (0 = all cores)")
    common.add_argument("--out", help="output directory for tables and manifests")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="microuq", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"microuq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, help=help_text, parents=[common])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = parse_assignments(getattr(args, "set", []), "--set")
    for key in ("seed", "threads", "out"):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    return load_config(getattr(args, "config", None), overrides)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        fft.workers = cfg.threads or os.cpu_count() or 1
        COMMANDS[args.command][0](cfg)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MicroUQError, RuntimeError, OSError, FloatingPointError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
