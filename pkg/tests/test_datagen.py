import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppcurves import datagen, ot
from ppcurves.datagen import CurveModel, Dataset
from ppcurves.ot import DiscreteMeasure

seeds = st.integers(0, 2**31 - 1)


# ---------------------------------------------------------------- skeletons


def test_dataset1_skeleton_examples():
    np.testing.assert_array_equal(datagen.dataset1_skeleton(0.0), [[0, 1], [0, 1]])
    np.testing.assert_allclose(datagen.dataset1_skeleton(1.0), [[0, 0], [0, 0]])
    tip = 1 / math.sqrt(2)
    np.testing.assert_allclose(datagen.dataset1_skeleton(1 + math.sqrt(2)),
                               [[-1.0, -1.0], [1.0, -1.0]], atol=1e-12)
    np.testing.assert_allclose(datagen.dataset1_skeleton(2.0), [[-tip, -tip], [tip, -tip]])


def test_dataset2_skeleton_examples():
    np.testing.assert_allclose(datagen.dataset2_skeleton(1.05), [[0.75, 0.0], [0.75, 0.0]])
    np.testing.assert_allclose(datagen.dataset2_skeleton(2.1), [[0.5, 1.0], [2.5, 1.0]], atol=1e-12)
    np.testing.assert_allclose(datagen.dataset2_skeleton(0.25), [[0.0, 0.75], [0.0, 0.75]])


@given(st.floats(0, 1 + math.sqrt(2)), st.floats(0, 1 + math.sqrt(2)))
def test_dataset1_skeleton_is_continuous(a, b):
    d = np.abs(datagen.dataset1_skeleton(a) - datagen.dataset1_skeleton(b)).max()
    assert d <= abs(a - b) * 1.0 + 1e-12


def test_curve_model_validation():
    with pytest.raises(ValueError):
        CurveModel("spiral")
    with pytest.raises(ValueError):
        CurveModel("dataset1", sigma=-1.0)


# ---------------------------------------------------------------- sampling


def test_budget_semantics():
    ds = datagen.gen_dataset1(250, 10000, seed=1)
    assert len(ds) == 250
    assert all(b.size == 40 for b in ds.batches)
    assert datagen.gen_dataset1(3, 10, seed=0).batches[0].size == 3


def test_size_errors():
    with pytest.raises(ValueError):
        datagen.gen_dataset1(10, 5)
    with pytest.raises(ValueError):
        datagen.gen_dataset2(1, 5)
    with pytest.raises(ValueError):
        datagen.gen_euclidean_line(1)


@given(seeds)
def test_regeneration_is_bit_identical(seed):
    a = datagen.gen_dataset2(6, 30, seed=seed)
    b = datagen.gen_dataset2(6, 30, seed=seed)
    assert a.content_hash() == b.content_hash()
    np.testing.assert_array_equal(a.true_times(), b.true_times())


def test_sigma_zero_lies_on_skeleton():
    ds = datagen.gen_dataset1(20, 200, sigma=0.0, seed=3)
    for b, t in zip(ds.batches, ds.true_times()):
        skel = datagen.dataset1_skeleton(t)
        for x in b.support:
            assert min(np.abs(x - s).max() for s in skel) == 0.0


def test_times_in_domain_and_shuffled():
    ds = datagen.gen_dataset2(200, 400, seed=0)
    t = ds.true_times()
    assert t.min() >= 0 and t.max() <= 2.1
    assert not np.all(np.diff(t) > 0)


def test_grid_times_are_even():
    ds = datagen.gen_dataset1(5, 10, seed=0, grid=True)
    np.testing.assert_allclose(np.sort(ds.true_times()), np.linspace(0, 1 + math.sqrt(2), 5))


def test_start_batch_mean_near_skeleton():
    sigma, M = 0.1, 400
    means = []
    for seed in range(20):
        ds = datagen.gen_dataset1(2, 2 * M, sigma=sigma, seed=seed, grid=True)
        s, _ = ds.endpoints()
        means.append(ds.batches[s].mean())
    dev = np.abs(np.array(means) - [0.0, 1.0])
    assert np.all(dev <= 3 * sigma / math.sqrt(M) * 1.5)
    assert np.mean(dev) <= sigma / math.sqrt(M)


def test_dataset2_middle_regime_share():
    ds = datagen.gen_dataset2(21000, 21000, seed=5)
    t = ds.true_times()
    share = np.mean((t >= 1.0) & (t <= 1.1))
    assert share == pytest.approx(1 / 21, abs=4 * math.sqrt((1 / 21) * (20 / 21) / 21000))


def test_branches_chosen_per_atom():
    ds = datagen.gen_dataset1(50, 2000, sigma=0.0, seed=2)
    mixed = 0
    for b, t in zip(ds.batches, ds.true_times()):
        if t > 1.2:
            mixed += len(set(np.sign(b.support[:, 0]))) == 2
    assert mixed > 0


def test_truth_hidden_behind_accessor():
    ds = datagen.gen_euclidean_line(5, seed=0)
    t = ds.true_times()
    t[0] = 99.0
    assert ds.true_times()[0] != 99.0
    with pytest.raises(LookupError):
        Dataset([np.zeros(2)], {}).true_times()


def test_euclidean_line_examples():
    ds = datagen.gen_euclidean_line(30, seed=1)
    X = np.array(ds.batches)
    np.testing.assert_array_equal(X[:, 1], 0.0)
    np.testing.assert_array_equal(X[:, 0], ds.true_times())
    assert len(datagen.gen_euclidean_line(2, seed=0)) == 2
    assert ds.backend == "euclidean"


# ---------------------------------------------------------------- reads


def test_embed_simplex_is_on_simplex():
    ds = datagen.embed_simplex(datagen.gen_dataset1(5, 50, seed=0))
    assert all(datagen.on_simplex(b) for b in ds.batches)
    assert ds.batches[0].dim == 3


def test_reads_require_simplex():
    ds = datagen.gen_dataset1(5, 50, seed=0)
    with pytest.raises(ValueError):
        datagen.apply_reads(ds, 10)
    with pytest.raises(ValueError):
        datagen.apply_reads(ds, 0, embed=True)


def test_reads_vertex_support_unchanged():
    mu = DiscreteMeasure([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5])
    ds = Dataset([mu], {"model": "custom"})
    out = datagen.apply_reads(ds, 13, seed=0)
    np.testing.assert_array_equal(out.batches[0].support, mu.support)
    assert out.provenance["R"] == 13


def test_reads_single_read_gives_vertices():
    out = datagen.apply_reads(datagen.gen_dataset1(4, 40, seed=0), 1, seed=0, embed=True)
    for b in out.batches:
        assert np.all(np.isin(b.support, [0.0, 1.0]))


def test_reads_large_depth_is_close():
    clean = datagen.embed_simplex(datagen.gen_dataset1(5, 50, seed=0))
    noisy = datagen.apply_reads(clean, 10**6, seed=1)
    assert ot.nested_w1(clean.batches, noisy.batches, base="w1") < 1e-2


# ---------------------------------------------------------------- files


def test_save_load_roundtrip(tmp_path):
    ds = datagen.gen_dataset1(7, 35, seed=4)
    datagen.save_dataset(ds, tmp_path / "d")
    back = datagen.load_dataset(tmp_path / "d")
    assert back.content_hash() == ds.content_hash()
    np.testing.assert_array_equal(back.true_times(), ds.true_times())
    assert (tmp_path / "d" / "atoms.csv").read_text().splitlines()[0] == "batch_id,x1,x2,weight"


def test_save_without_truth(tmp_path):
    ds = datagen.gen_euclidean_line(4, seed=0)
    datagen.save_dataset(ds, tmp_path, write_truth=False)
    assert not (tmp_path / "truth.csv").exists()
    back = datagen.load_dataset(tmp_path)
    assert not back.has_truth()
    assert back.backend == "euclidean"
    np.testing.assert_array_equal(np.array(back.batches), np.array(ds.batches))


def test_saving_twice_is_identical(tmp_path):
    for d in ("a", "b"):
        datagen.save_dataset(datagen.gen_dataset2(5, 25, seed=9), tmp_path / d)
    for f in ("atoms.csv", "truth.csv", "provenance.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
