from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldsb.datasets import LabeledDataset
from ldsb.exceptions import InsufficientData, InvalidInput, ShapeError
from ldsb.model import MLP, forward
from ldsb.orthop import (
    _cc_corr,
    _mist_div,
    cc_logit_corr,
    diversity_report,
    ensemble_logits,
    ensemble_predict,
    mistake_diversity,
    orthop_train,
    robustness_sweep,
    with_noise,
)
from ldsb.training import evaluate, preset


def lookup(logits, shift=None):
    """Net whose logits on the i-th one-hot input are ``logits[i]`` (plus ``shift``)."""
    L = np.asarray(logits, dtype=float)
    n, c = L.shape
    W, b, A = np.eye(n), np.zeros(n), L
    if shift is not None:
        W = np.vstack([W, np.zeros(n)])
        b = np.r_[b, 1.0]
        A = np.vstack([A, shift])
    return MLP(W, b, A, 1.0, "rich")


def onehot_data(y, c=2):
    y = np.asarray(y)
    return LabeledDataset(np.eye(len(y)), y, c)


def _logits_for(pred, c=2):
    L = np.zeros((len(pred), c))
    L[np.arange(len(pred)), pred] = 1.0
    return L


def test_mist_div_hand_example():
    y = np.zeros(8, dtype=int)
    pf = np.zeros(8, dtype=int)
    pg = np.zeros(8, dtype=int)
    pf[[1, 2, 3]] = 1
    pg[[2, 3, 4, 5]] = 1
    data = onehot_data(y)
    assert mistake_diversity(lookup(_logits_for(pf)), lookup(_logits_for(pg)), data) == pytest.approx(1 / 3)


def test_mist_div_extremes():
    y = np.array([0, 1, 0, 1, 0, 1])
    wrong = 1 - y
    pf = np.where(np.arange(6) < 3, wrong, y)
    pg = np.where(np.arange(6) >= 3, wrong, y)
    f, g = lookup(_logits_for(pf)), lookup(_logits_for(pg))
    data = onehot_data(y)
    assert mistake_diversity(f, f, data) == 0.0
    assert mistake_diversity(f, g, data) == 1.0
    perfect = lookup(_logits_for(y))
    assert _mist_div(y, pf, y) == (0.0, True)
    assert mistake_diversity(perfect, f, data) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=30))
def test_mist_div_range_and_symmetry(rows):
    y = np.zeros(len(rows), dtype=int)
    pf = np.array([int(a) for a, _ in rows])
    pg = np.array([int(b) for _, b in rows])
    v1, _ = _mist_div(pf, pg, y)
    v2, _ = _mist_div(pg, pf, y)
    assert 0.0 <= v1 <= 1.0 and v1 == v2


def test_cc_corr_self_and_affine(rng):
    y = np.repeat([0, 1], 10)
    L = rng.standard_normal((20, 2))
    f = lookup(L)
    data = onehot_data(y)
    assert cc_logit_corr(f, f, data) == pytest.approx(1.0, abs=1e-12)
    g = lookup(2 * L, shift=[3.0, 3.0])
    np.testing.assert_allclose(forward(g, data.X), 2 * L + 3)
    assert cc_logit_corr(f, g, data) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.integers(0, 2**31))
def test_cc_corr_affine_invariance(scale, shift, seed):
    r = np.random.default_rng(seed)
    y = np.repeat([0, 1, 2], 6)
    lf, lg = r.standard_normal((2, 18, 3))
    base, _ = _cc_corr(lf, lg, y, 3)
    moved, _ = _cc_corr(lf, scale * lg + shift, y, 3)
    assert moved == pytest.approx(base, abs=1e-9)


def test_cc_corr_independent_noise(rng):
    y = np.repeat([0, 1], 10_000)
    val, flag = _cc_corr(rng.standard_normal((20_000, 2)), rng.standard_normal((20_000, 2)), y, 2)
    assert abs(val) < 0.05 and not flag


def test_cc_corr_small_class():
    with pytest.raises(InsufficientData):
        _cc_corr(np.ones((4, 2)), np.ones((4, 2)), np.array([0, 0, 0, 1]), 2)


def test_cc_corr_constant_logits_flagged(rng):
    val, flag = _cc_corr(np.ones((6, 2)), rng.standard_normal((6, 2)), np.repeat([0, 1], 3), 2)
    assert np.isnan(val) and flag


def test_ensemble_examples(rng):
    f = lookup([[1.0, 0.0]])
    g = lookup([[0.0, 1.0]])
    assert ensemble_predict(f, g, np.eye(1))[0] == 0
    h = lookup(rng.standard_normal((12, 3)))
    X = np.eye(12)
    assert np.array_equal(ensemble_predict(h, h, X), np.argmax(forward(h, X), axis=1))
    k = lookup(rng.standard_normal((12, 3)))
    manual = np.argmax((forward(h, X) + forward(k, X)) / 2, axis=1)
    assert np.array_equal(ensemble_predict(h, k, X), manual)
    with pytest.raises(ShapeError):
        ensemble_logits(h, lookup(np.ones((12, 2))), X=X)
    with pytest.raises(InvalidInput):
        ensemble_logits(X=X)


@pytest.fixture(scope="module")
def orthop_run(rich_net, ifm_splits):
    f = rich_net[0]
    before = f.copy()
    g, P, log = orthop_train(f, ifm_splits["train"], 1, replace(preset("rich"), seed=2000))
    return f, before, g, P, log


def test_orthop_aligns_and_generalizes(orthop_run, ifm_splits):
    f, before, g, P, _ = orthop_run
    assert abs(P.Q[0, 0]) >= 0.9
    assert evaluate(g, ifm_splits["test"]) >= 0.95
    assert f.params_equal(before)


def test_orthop_ignores_projected_directions(orthop_run, ifm_splits):
    _, _, g, P, _ = orthop_run
    X = ifm_splits["test"].X
    assert np.max(np.abs(P.apply(P.apply_perp(X)))) < 1e-10
    np.testing.assert_allclose(forward(g, X), forward(g, P.apply_perp(X)), atol=1e-10)
    np.testing.assert_allclose(P.apply(g.W), 0, atol=1e-12)


def test_orthop_auto_rank(rich_net, ifm_splits):
    g, P, log = orthop_train(rich_net[0], ifm_splits["train"], "auto", preset("rich", steps=10), energy=0.5)
    assert P.k >= 1 and len(log.records) >= 1


def test_diversity_report_and_noise(orthop_run, rich_net, ifm_splits):
    f, _, g, _, _ = orthop_run
    te = ifm_splits["test"]
    noisy = with_noise(te, 1.0, 0)
    assert noisy.X.shape == te.X.shape and np.array_equal(noisy.y, te.y)
    rep = diversity_report(f, g, te, noisy)
    assert 0 <= rep.mist_div <= 1 and -1 <= rep.cc_logit_corr <= 1
    pct = rep.to_dict()["percent"]
    assert pct["mist_div"] == round(100 * rep.mist_div, 2)
    assert '"degenerate_flag"' in rep.to_json()


def test_robustness_sweep(orthop_run, ifm_splits):
    f, _, g, _, _ = orthop_run
    te = ifm_splits["test"]
    scale = np.abs(te.X).max()
    curve = robustness_sweep({"f": f, "g": g, "ens": (f, g)}, te, [0.0, 1e3 * scale], trials=3, rng=0)
    assert curve.accuracies["f"][0] == evaluate(f, te)
    assert curve.accuracies["g"][0] == evaluate(g, te)
    for name, acc in curve.accuracies.items():
        assert abs(acc[1] - 0.5) <= 0.05, name
        assert acc[0] >= acc[1]
    rows = curve.to_csv().splitlines()
    assert rows[0] == "sigma,model,accuracy" and len(rows) == 1 + 2 * 3


def test_robustness_validation(orthop_run, ifm_splits):
    f = orthop_run[0]
    with pytest.raises(InvalidInput):
        robustness_sweep({"f": f}, ifm_splits["test"], [-1.0])
    with pytest.raises(InvalidInput):
        robustness_sweep({"f": f}, ifm_splits["test"], [1.0], trials=0)
