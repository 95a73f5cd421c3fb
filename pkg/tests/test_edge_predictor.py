import numpy as np
import pytest
from sklearn.base import clone

import oracles
from eegrefine.edge_predictor import (
    MlpHead,
    TransformerEdgePredictor,
    pair_probabilities,
    predict_edge_prob,
    train_predictor,
)
from eegrefine.exceptions import DataError, NotFittedError
from eegrefine.signals import generate_synthetic

from conftest import small_spec

TINY = dict(patch_len=25, d_model=8, n_heads=2, feedforward_dim=16, hidden_dim=8, n_epochs=3, batch_size=4)


def test_zero_head_is_half(rng):
    head = MlpHead.zeros(4, 3)
    assert predict_edge_prob(rng.normal(size=4), rng.normal(size=4), head) == 0.5


def test_symmetric_average(rng):
    head = MlpHead.init(5, 7, rng)
    a, b = rng.normal(size=5), rng.normal(size=5)
    assert predict_edge_prob(a, b, head) == predict_edge_prob(b, a, head)
    emb = rng.normal(size=(2, 6, 5))
    p = pair_probabilities(emb, head)
    assert np.array_equal(p, p.transpose(0, 2, 1))
    assert p[1, 2, 4] == pytest.approx(predict_edge_prob(emb[1, 2], emb[1, 4], head), abs=1e-15)


def test_hand_set_head():
    w1 = np.array([[1.0, -1.0, 0.5, 0.0], [0.0, 2.0, -1.0, 1.0]])
    b1 = np.array([0.1, -0.2])
    w2 = np.array([0.7, -1.3])
    head = MlpHead(w1, b1, w2, 0.05)
    h_i, h_j = [0.3, -0.4], [1.1, 0.2]
    # hand computation
    want = oracles.head_prob(h_i, h_j, w1.tolist(), b1.tolist(), w2.tolist(), 0.05)
    assert predict_edge_prob(h_i, h_j, head, symmetric=False) == pytest.approx(want, abs=1e-12)


def test_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        predict_edge_prob(np.zeros(3), np.zeros(4), MlpHead.zeros(4, 2))


@pytest.fixture(scope="module")
def tiny_data():
    spec = small_spec(n_windows=12, seizure_schedule=[])
    return generate_synthetic(spec), spec.ground_truth()


def test_fit_predict_roundtrip(tiny_data, tmp_path):
    windows, gt = tiny_data
    model = TransformerEdgePredictor(**TINY).fit(windows, gt)
    assert len(model.loss_curve_) == 3
    probs = model.predict_proba(windows[:2])
    assert probs[0].probs.shape == (19, 19)
    graphs = model.predict(windows[:2])
    assert all(np.all((g.weights == 0) | (g.weights > 0.5)) for g in graphs)
    path = tmp_path / "model.json"
    model.save(path)
    back = TransformerEdgePredictor.load(path)
    assert np.array_equal(back.predict_proba(windows[:2])[1].probs, probs[1].probs)


def test_determinism(tiny_data):
    windows, gt = tiny_data
    a = TransformerEdgePredictor(**TINY).fit(windows, gt)
    b = clone(a).fit(windows, gt)
    assert a.loss_curve_ == b.loss_curve_
    assert all(np.array_equal(a.encoder_params_[k], b.encoder_params_[k]) for k in a.encoder_params_)


def test_loss_decreases_on_own_predictions(tiny_data):
    windows, _ = tiny_data
    first = TransformerEdgePredictor(**dict(TINY, n_epochs=1)).fit(windows, [np.zeros((19, 19))] * 12)
    labels = [g.weights > 0 for g in first.predict(windows)]
    model = TransformerEdgePredictor(**dict(TINY, n_epochs=6, learning_rate=0.01)).fit(windows, labels)
    curve = model.loss_curve_
    assert all(b <= a + 1e-9 for a, b in zip(curve, curve[1:]))


def test_estimator_api(tiny_data):
    model = TransformerEdgePredictor(**TINY)
    assert model.get_params()["d_model"] == 8
    with pytest.raises(NotFittedError):
        model.predict(tiny_data[0])
    with pytest.raises(DataError):
        model.fit([], [])
    with pytest.raises(DataError):
        model.fit(tiny_data[0], tiny_data[1][:3])


def test_functional_wrapper(tiny_data):
    from eegrefine.encoder import EncoderConfig

    params, head, curve = train_predictor(*tiny_data, EncoderConfig(d_model=8, n_heads=2, feedforward_dim=16),
                                          hidden_dim=4, n_epochs=2)
    assert head.w1.shape == (4, 16) and len(curve) == 2 and "in_w" in params
