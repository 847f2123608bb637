import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pointvst.errors import DegenerateLabelsError, DegenerateVectorError
from pointvst.evaluation import (
    DEFAULT_THRESHOLDS,
    ProbeConfig,
    linear_probe,
    nrerr,
    threshold_accuracy,
    visibility_accuracy,
)
from pointvst.model import ModelConfig, extract_codewords, init_params

vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


def test_default_thresholds():
    assert len(DEFAULT_THRESHOLDS) == 13
    assert DEFAULT_THRESHOLDS[0] == 0.2 and DEFAULT_THRESHOLDS[-1] == 0.8 and 0.5 in DEFAULT_THRESHOLDS


def test_separable_toy_is_perfect(rng):
    x = np.concatenate([rng.normal(-3, 0.5, (40, 4)), rng.normal(3, 0.5, (40, 4))])
    y = np.repeat([0, 1], 40)
    idx = rng.permutation(80)
    tr, te = idx[:50], idx[50:]
    res = linear_probe(x[tr], y[tr], x[te], y[te], ProbeConfig(epochs=200))
    assert res.oacc == 1.0


def test_shuffled_labels_near_chance(rng):
    accs = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        x = r.normal(size=(300, 16))
        y = r.integers(0, 5, 300)
        accs.append(linear_probe(x[:200], y[:200], x[200:], y[200:], ProbeConfig(seed=seed)).oacc)
    assert abs(np.mean(accs) - 0.20) <= 0.10


def test_confusion_invariants(rng):
    x = rng.normal(size=(120, 6))
    y = rng.integers(0, 4, 120)
    x[:, 0] += y
    res = linear_probe(x[:80], y[:80], x[80:], y[80:])
    counts = np.bincount(y[80:], minlength=4)
    assert np.array_equal(res.confusion.sum(axis=1), counts)
    assert res.oacc == pytest.approx(np.trace(res.confusion) / res.confusion.sum())
    assert 0.0 <= res.oacc <= 1.0
    again = linear_probe(x[:80], y[:80], x[80:], y[80:])
    assert again.oacc == res.oacc and np.array_equal(again.confusion, res.confusion)
    assert res.confusion_csv().count("\n") == 4


def test_single_class_rejected(rng):
    with pytest.raises(DegenerateLabelsError):
        linear_probe(rng.normal(size=(5, 2)), np.zeros(5), rng.normal(size=(3, 2)), np.zeros(3))


def test_codewords_are_deterministic_and_invariant(rng):
    params = init_params(ModelConfig.desk(64), 0)
    clouds = rng.normal(size=(3, 50, 3))
    a = extract_codewords(params, clouds)
    assert a.shape == (3, 128)
    assert a.tobytes() == extract_codewords(params, clouds).tobytes()
    perm = rng.permutation(50)
    np.testing.assert_array_equal(extract_codewords(params, clouds[:, perm]), a)


# --- visibility accuracy ----------------------------------------------------------------------


def test_exact_scores_are_perfect(rng):
    truth = (rng.random((4, 2, 30)) < 0.3).astype(np.int8)
    assert set(threshold_accuracy(truth.astype(float), truth).values()) == {1.0}


def test_constant_half_score(rng):
    truth = (rng.random(500) < 0.3).astype(np.int8)
    acc = threshold_accuracy(np.full(500, 0.5), truth, thresholds=(0.6, 0.4))
    assert acc[0.6] == pytest.approx(1 - truth.mean())
    assert acc[0.4] == pytest.approx(truth.mean())


@given(st.integers(0, 2**32 - 1))
def test_trivial_thresholds(seed):
    r = np.random.default_rng(seed)
    truth = (r.random(200) < r.random()).astype(np.int8)
    scores = r.uniform(1e-6, 1 - 1e-6, 200)
    acc = threshold_accuracy(scores, truth, thresholds=(0.0, 1.0))
    assert acc[0.0] == pytest.approx(truth.mean())
    assert acc[1.0] == pytest.approx(1 - truth.mean())


def test_visibility_accuracy_on_dataset(tiny_dataset):
    _, _, ds = tiny_dataset
    acc = visibility_accuracy(init_params(ModelConfig.desk(64), 0), ds)
    assert sorted(acc) == list(DEFAULT_THRESHOLDS)
    assert all(0.0 <= a <= 1.0 for a in acc.values())


# --- normal error ------------------------------------------------------------------------------


def test_nrerr_examples():
    assert nrerr([1, 2, 3], [2, 4, 6]) == pytest.approx(0.0, abs=1e-15)
    assert nrerr([1, 2, 3], [-1, -2, -3]) == pytest.approx(0.0, abs=1e-15)
    assert nrerr([1, 0, 0], [0, 5, 0]) == 1.0
    with pytest.raises(DegenerateVectorError):
        nrerr([0, 0, 0], [1, 0, 0])


@given(vectors, vectors, st.floats(0.01, 100), st.floats(-100, -0.01))
def test_nrerr_symmetric_and_scale_invariant(a, b, s, t):
    e = nrerr(a, b)
    assert 0.0 <= e <= 1.0
    assert nrerr(b, a) == pytest.approx(e, abs=1e-12)
    assert nrerr(np.multiply(a, s), np.multiply(b, t)) == pytest.approx(e, abs=1e-9)
