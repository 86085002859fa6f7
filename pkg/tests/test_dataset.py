from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microuq import dataset as D
from microuq.errors import BadFractions, CorruptFile, InvalidBounds
from microuq.fft import SolverConfig, stress_for_strain
from microuq.tensor import MaterialParams, Rep, convert_params, stiffness_of


@pytest.fixture(scope="module")
def small():
    return D.generate(12, D.SampleInputBounds(c_f=(0.0, 0.6)), 8, "fiber", 3)


def test_degenerate_bounds():
    b = D.SampleInputBounds(c_f=(0.3, 0.3), p1=(2000.0, 2000.0), p2=(0.25, 0.25))
    for k in range(5):
        s = D.sample_inputs(b, k, 0)
        assert s.c_f == 0.3
        assert s.mat_M == D.Sample(0.3, MaterialParams.from_e_nu(2000.0, 0.25), b.inclusion, 1, 0).mat_M


def test_poisson_draw_statistics():
    b = D.SampleInputBounds()
    nu = []
    for k in range(10_000):
        s = D.sample_inputs(b, k, 0)
        nu.append(convert_params(s.mat_M, Rep.E_NU).p2)
    nu = np.array(nu)
    assert nu.min() >= 0.1 - 1e-12 and nu.max() <= 0.48 + 1e-12
    assert abs(nu.mean() - 0.29) < 0.01


@pytest.mark.parametrize("kw", [dict(c_f=(0.5, 0.2)), dict(c_f=(0.0, 1.2)), dict(p2=(0.1, 0.5)), dict(p1=(0.0, 10.0))])
def test_invalid_bounds(kw):
    with pytest.raises(InvalidBounds):
        D.SampleInputBounds(**kw)


def test_strain_balance(small):
    assert len(small) == 12
    assert Counter(s.strain_index for s in small.samples) == {i: 2 for i in range(1, 7)}


def test_n_s_must_be_multiple_of_six():
    with pytest.raises(ValueError, match="multiple of 6"):
        D.generate(10, D.SampleInputBounds(), 8, "fiber", 0)


def test_zero_fraction_label_is_matrix_column():
    b = D.SampleInputBounds(c_f=(0.0, 0.0))
    ds = D.generate(6, b, 6, "fiber", 1)
    for s in ds.samples:
        assert np.allclose(s.label, stiffness_of(s.mat_M)[:, s.strain_index - 1], rtol=1e-12, atol=1e-9)


def test_inputs_within_bounds(small):
    for s in small.samples:
        assert 0.0 <= s.c_f <= 0.6
        p = convert_params(s.mat_M, Rep.E_NU)
        E, nu = p.p1, p.p2
        assert 1e3 - 1e-9 <= E <= 1e4 + 1e-9 and 0.1 - 1e-12 <= nu <= 0.48 + 1e-12


def test_regeneration_bit_identical(small):
    again = D.generate(12, D.SampleInputBounds(c_f=(0.0, 0.6)), 8, "fiber", 3)
    assert D.serialize(again) == D.serialize(small)


def test_label_rederivable(small):
    for i, s in enumerate(small.samples[:4]):
        y = stress_for_strain(small.grid(i), s.mat_M, s.mat_I, s.strain_index, SolverConfig())
        assert np.allclose(y, s.label, rtol=1e-10, atol=1e-10 * np.abs(s.label).max())


def test_split_examples(small):
    tr, va, te = D.split(small, (1.0, 0.0, 0.0), 0)
    assert len(tr) == 12 and len(va) == len(te) == 0
    ds = D.Dataset("fiber", 8, [small.samples[i % 12] for i in range(100)])
    parts = D.split(ds, (0.8, 0.1, 0.1), 5)
    assert [len(p) for p in parts] == [80, 10, 10]
    again = D.split(ds, (0.8, 0.1, 0.1), 5)
    assert all(a == b for a, b in zip(parts, again))
    with pytest.raises(BadFractions):
        D.split(ds, (0.8, 0.3, 0.1), 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 200), st.floats(0, 0.5), st.floats(0, 0.5), st.integers(0, 2**32 - 1))
def test_split_is_a_partition(n, f_val, f_test, seed):
    ds = D.Dataset("fiber", 8, [D.Sample(i / 1000, MaterialParams.from_k_g(1, 1), MaterialParams.from_k_g(2, 2), 1, i)
                                 for i in range(n)])
    parts = D.split(ds, (1 - f_val - f_test, f_val, f_test), seed)
    seeds = [s.grid_seed for p in parts for s in p.samples]
    assert sorted(seeds) == list(range(n))


def test_serialize_round_trip(small, tmp_path):
    D.save(small, tmp_path / "d.muqd")
    assert D.load(tmp_path / "d.muqd") == small
    empty = D.Dataset("spheres", 8, [])
    assert D.deserialize(D.serialize(empty)) == empty
    emb = D.Dataset("fiber", 8, small.samples[:3], True, [small.grid(i).data for i in range(3)])
    assert D.deserialize(D.serialize(emb)) == emb


def test_corrupt_files(small):
    buf = D.serialize(small)
    for bad in (buf[:-1], buf[:10], b"ABCD" + buf[4:]):
        with pytest.raises(CorruptFile):
            D.deserialize(bad)


def test_numeric_features_and_arrays(small):
    m = MaterialParams.from_k_g(5.0, 2.0)
    x = D.numeric_features(m, 3)
    assert x[0] == pytest.approx(np.log(5.0)) and x[1] == pytest.approx(np.log(2.0))
    assert list(x[2:]) == [0, 0, 1, 0, 0, 0]
    arr = D.to_arrays(small)
    assert arr.x1.shape == (12, D.N_NUMERIC) and arr.x2.shape == (12, 8, 8, 8) and arr.y.shape == (12, 6)
    assert np.array_equal(arr.x2[5], small.grid(5).data)
