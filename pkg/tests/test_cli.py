import csv
import struct

import numpy as np
import pytest

from microuq import dataset as D
from microuq.ann import alexnet_lite, init_glorot, save
from microuq.cli import main
from microuq.config import load_config, parse_assignments
from microuq.dataset import N_NUMERIC
from microuq.errors import ConfigError
from microuq.tensor import MaterialParams, stiffness_of
from microuq.uq import read_manifest


def run(tmp_path, command, *sets, extra=()):
    argv = [command, "--out", str(tmp_path / "out"), *extra]
    for s in sets:
        argv += ["--set", s]
    return main(argv)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.muqd"
    assert main(["gen-data", "--out", str(path.parent), "--set", "n_s=96", "--set", "n=6",
                 "--set", f"dataset={path}", "--set", "c_f_hi=0.5"]) == 0
    return path


def test_config_parsing(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nn = 8   # grid\nkind=spheres\n\nkde = true\n")
    cfg = load_config(cfg_file, {"seed": 4})
    assert (cfg.n, cfg.kind, cfg.kde, cfg.seed) == (8, "spheres", True, 4)
    with pytest.raises(ConfigError):
        parse_assignments(["bogus = 1"])
    with pytest.raises(ConfigError):
        parse_assignments(["n = eight"])
    with pytest.raises(ConfigError):
        parse_assignments(["just text"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_gen_data_file_and_rerun(tmp_path):
    a, b = tmp_path / "a.muqd", tmp_path / "b.muqd"
    assert run(tmp_path, "gen-data", "n_s=12", "n=8", f"dataset={a}") == 0
    assert run(tmp_path, "gen-data", "n_s=12", "n=8", f"dataset={b}") == 0
    buf = a.read_bytes()
    version, n_s, n = struct.unpack_from("<III", buf, 4)
    assert (n_s, n) == (12, 8) and len(D.load(a)) == 12
    assert buf == b.read_bytes()
    manifest = read_manifest(tmp_path / "out" / "gen_data_manifest.txt")
    assert manifest["n_s"] == "12" and manifest["seed"] == "0" and "config_hash" in manifest


def test_gen_data_multiple_of_six(tmp_path, capsys):
    assert run(tmp_path, "gen-data", "n_s=10", "n=8") == 2
    assert "multiple of 6" in capsys.readouterr().err


def test_unknown_key_and_command(tmp_path):
    assert run(tmp_path, "uq", "nokey=1") == 2
    assert main(["nocommand"]) == 2
    assert main(["uq", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_homogenize_homogeneous(tmp_path, capsys):
    assert run(tmp_path, "homogenize", "n=6", "c_f=0", "matrix_p1=3000", "matrix_p2=0.3") == 0
    C = np.loadtxt(tmp_path / "out" / "homogenized_stiffness.csv", delimiter=",")
    assert np.allclose(C, stiffness_of(MaterialParams.from_e_nu(3000.0, 0.3)), rtol=1e-10)
    out = capsys.readouterr().out
    assert f"{C[0, 0]:.6g}" in out and "E1 = 3000" in out


def test_homogenize_errors(tmp_path):
    assert run(tmp_path, "homogenize", "n=6", "matrix_p2=0.6") == 2
    assert run(tmp_path, "homogenize", "n=8", "c_f=0.5", "max_iter=1", "rel_tol=1e-14") == 3
    assert run(tmp_path, "homogenize", "grid=/nonexistent.muqg") == 2


def test_gen_micro_then_homogenize(tmp_path):
    grid = tmp_path / "g.muqg"
    assert run(tmp_path, "gen-micro", "n=8", "kind=spheres", "c_f=0.2", f"grid={grid}") == 0
    assert run(tmp_path, "homogenize", f"grid={grid}") == 0


def test_train_outputs_and_determinism(tmp_path, tiny_dataset, capsys):
    common = [f"dataset={tiny_dataset}", "max_epochs=3", "n_F=2", "n_u=8", "n_L=1", "batch_size=16"]
    a, b = tmp_path / "a.muqm", tmp_path / "b.muqm"
    assert run(tmp_path, "train", *common, f"checkpoint={a}") == 0
    assert "test mean relative error" in capsys.readouterr().out
    assert run(tmp_path, "train", *common, f"checkpoint={b}") == 0
    assert a.read_bytes() == b.read_bytes()
    log = read_csv(tmp_path / "out" / "train_log.csv")
    assert log[0] == ["epoch", "train_loss", "val_loss", "lr"] and len(log) == 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(tmp_path, tiny_dataset):
    code = run(tmp_path, "train", f"dataset={tiny_dataset}", "max_epochs=50", "n_F=2", "n_u=8", "n_L=1",
               "alpha=1e200", "label_transform=none", f"checkpoint={tmp_path / 'x.muqm'}")
    assert code == 3


def test_train_missing_dataset(tmp_path):
    assert run(tmp_path, "train", f"dataset={tmp_path / 'none.muqd'}") == 2


def test_hp_search(tmp_path, tiny_dataset):
    assert run(tmp_path, "hp-search", f"dataset={tiny_dataset}", "trials=2", "max_epochs=2", "batch_size=16") == 0
    rows = read_csv(tmp_path / "out" / "hp_trials.csv")
    assert len(rows) == 3
    best = parse_assignments((tmp_path / "out" / "hp_best.cfg").read_text().splitlines())
    assert set(best) == {"alpha", "lambda_l2", "beta", "n_u", "n_F", "n_L", "seed"}


def test_uq_zero_std(tmp_path):
    assert run(tmp_path, "uq", "n=6", "c_f_std=0", "p1_std=0", "p2_std=0", "n_cdf=10") == 0
    rows = read_csv(tmp_path / "out" / "uq_moments.csv")
    assert rows[0] == ["output_name", "mean", "std"]
    assert all(float(r[2]) == 0.0 for r in rows[1:])


def test_uq_example1_style_records_1000_calls(tmp_path):
    ckpt = tmp_path / "n4.muqm"
    save(init_glorot(alexnet_lite(4, N_NUMERIC, n_F=2, n_u=8, n_L=1), 0), ckpt)
    assert run(tmp_path, "uq", "n=4", "solver=ann", f"checkpoint={ckpt}", "n_w=10", "n_pce=9", "n_cdf=1000") == 0
    assert read_manifest(tmp_path / "out" / "uq_manifest.txt")["solver_calls"] == "1000"


def test_uq_missing_checkpoint(tmp_path):
    assert run(tmp_path, "uq", "solver=ann", f"checkpoint={tmp_path / 'none.muqm'}") == 2


def test_mc_and_compare(tmp_path, capsys):
    assert run(tmp_path, "mc", "n=6", "n_samples=10") == 0
    rows = read_csv(tmp_path / "out" / "mc_cdf.csv")[1:]
    names = {r[0] for r in rows}
    assert len(names) == 6 and all(sum(r[0] == k for r in rows) == 10 for k in names)
    prefix = str(tmp_path / "out" / "mc")
    assert run(tmp_path, "compare", f"result_a={prefix}", f"result_b={prefix}") == 0
    cmp_rows = read_csv(tmp_path / "out" / "compare.csv")
    assert cmp_rows[0] == ["output_name", "mean_rel_diff", "std_rel_diff", "ks_distance"]
    assert all(float(x) == 0.0 for r in cmp_rows[1:] for x in r[1:])


def test_bench_fft_only(tmp_path):
    assert run(tmp_path, "bench", "sizes=8", "bench_solvers=fft", "repetitions=3") == 0
    rows = read_csv(tmp_path / "out" / "bench.csv")
    assert rows[0] == ["n", "fft_seconds", "ann_seconds", "ratio"] and len(rows) == 2
    assert rows[1][2] == "" and float(rows[1][1]) > 0


def test_bench_both_solvers(tmp_path):
    assert run(tmp_path, "bench", "sizes=16,32", "repetitions=1", "n_F=4", "n_u=16",
               f"checkpoint={tmp_path / 'none.muqm'}") == 0
    rows = read_csv(tmp_path / "out" / "bench.csv")[1:]
    assert len(rows) == 2 and all(len(r) == 4 and all(r) for r in rows)


def test_global_flags_before_or_after_command(tmp_path):
    assert main(["--seed", "3", "--out", str(tmp_path / "o1"), "gen-micro", "--set", "n=4"]) == 0
    assert main(["gen-micro", "--seed", "3", "--out", str(tmp_path / "o2"), "--set", "n=4"]) == 0
    a = read_manifest(tmp_path / "o1" / "gen_micro_manifest.txt")
    b = read_manifest(tmp_path / "o2" / "gen_micro_manifest.txt")
    assert a["seed"] == b["seed"] == "3"
