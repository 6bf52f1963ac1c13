"""Hashed online logistic regression."""

import math

import numpy as np
import pytest

from rtbconfig.dataset import CampaignDataset, ImpressionRecord
from rtbconfig.exceptions import CheckpointError, InvalidArgument
from rtbconfig.cvr_model import (
    CvrModel,
    HashedRow,
    hash_dataset,
    hash_row,
    load_model,
    predict,
    predict_all,
    predict_probabilities,
    save_model,
    sgd_update,
    train,
)
from rtbconfig.metrics import evaluate_model
from rtbconfig.search import Configuration
from rtbconfig.synthetic import PlantedSegment, SyntheticSpec, generate_synthetic


def _record(values, conversion=0):
    return ImpressionRecord(0, 0, conversion, 1.0, tuple(values))


def _separable(rows, seed):
    """Conversion is decided by cat1 alone: values 0-4 always convert, 5-9 never."""
    segments = tuple(PlantedSegment(Configuration((0,), (v,)), conversion_rate=1.0) for v in range(5))
    return generate_synthetic(SyntheticSpec(n_rows=rows, segments=segments, background_rate=0.0, seed=seed))


def test_unsalted_hash_is_modulus():
    assert hash_row(_record([5] * 9), 2 ** 20).indices == (5,) * 9
    assert hash_row(_record([2 ** 20 + 3] * 9), 2 ** 20).indices[0] == 3


def test_salted_hash_is_stable_and_positional():
    first = hash_row(_record(range(9)), 2 ** 20, salted=True)
    assert first == hash_row(_record(range(9)), 2 ** 20, salted=True)
    same_value = hash_row(_record([7] * 9), 2 ** 20, salted=True).indices
    assert len(set(same_value)) > 1


def test_hash_dataset_matches_rows():
    d = CampaignDataset.from_arrays(np.arange(18).reshape(2, 9) * 1000, [1.0, 1.0])
    for salted in (False, True):
        slots = hash_dataset(d, 1024, salted)
        for index, record in enumerate(d):
            assert tuple(slots[index].tolist()) == hash_row(record, 1024, salted).indices


def test_predict():
    m = CvrModel(D=16)
    h = HashedRow(tuple(range(9)), 1)
    assert predict(m, h) == 0.5
    m.w[0] = math.log(3)
    assert predict(m, h) == pytest.approx(0.75, abs=1e-15)
    m.w[:9] = -50 / 9
    p = predict(m, h)
    assert 0.0 < p < 1e-20


def test_sgd_hand_checks():
    m = CvrModel(D=16, alpha=0.1)
    h = HashedRow(tuple(range(9)), 1)
    sgd_update(m, h, 0.5)
    assert np.all(np.abs(m.w[:9] - 0.05) <= 1e-12)
    assert m.n[:9].tolist() == [1] * 9

    before = m.w.copy()
    sgd_update(m, h, 1.0)
    assert np.array_equal(m.w, before)
    assert m.n[:9].tolist() == [2] * 9

    m = CvrModel(D=16, alpha=0.1)
    m.n[3] = 1
    sgd_update(m, HashedRow((3,), 0), 0.5)
    assert abs(m.w[3] - (-0.1 * 0.5 / math.sqrt(2))) <= 1e-12


def test_update_follows_log_loss_gradient():
    rng = np.random.default_rng(0)
    eps = 1e-6

    def loss(w, y):
        p = 1.0 / (1.0 + math.exp(-w))
        return -math.log(p) if y else -math.log(1.0 - p)

    for _ in range(100):
        w = float(rng.uniform(-3, 3))
        y = int(rng.integers(0, 2))
        m = CvrModel(D=4, alpha=0.1)
        m.w[1] = w
        h = HashedRow((1,), y)
        sgd_update(m, h, predict(m, h))
        gradient = (loss(w + eps, y) - loss(w - eps, y)) / (2 * eps)
        step = -(m.w[1] - w) / 0.1
        assert abs(step - gradient) <= 1e-4 * abs(gradient)


def test_update_moves_prediction_towards_label():
    rng = np.random.default_rng(7)
    for _ in range(200):
        m = CvrModel(D=32, alpha=float(rng.uniform(0.01, 1.0)))
        m.w[:] = rng.uniform(-2, 2, size=32)
        m.n[:] = rng.integers(0, 50, size=32)
        h = HashedRow(tuple(rng.integers(0, 32, size=9).tolist()), int(rng.integers(0, 2)))
        before = predict(m, h)
        after = predict(sgd_update(m, h, before), h)
        if h.label == 1:
            assert after >= before
        else:
            assert after <= before


def test_train_empty_and_single_row():
    m = CvrModel(D=64)
    result = train(m, CampaignDataset.from_arrays(np.empty((0, 9)), []))
    assert np.array_equal(result.model.w, m.w)
    assert result.window_losses == []

    one = CampaignDataset.from_arrays([[1, 2, 3, 4, 5, 6, 7, 8, 9]], [1.0], conversions=[1])
    trained = train(m, one).model
    assert int(trained.n.sum()) == 9
    assert trained.rows_trained == 1
    assert m.rows_trained == 0


def test_train_matches_row_by_row_updates():
    d = _separable(300, seed=4)
    reference = CvrModel(D=256)
    for record in d:
        h = hash_row(record, reference.D)
        sgd_update(reference, h, predict(reference, h))
    trained = train(CvrModel(D=256), d).model
    assert np.array_equal(trained.w, reference.w)
    assert np.array_equal(trained.n, reference.n)


@pytest.mark.parametrize("rows", [2, 17, 300])
def test_counts_total_nine_per_row(rows):
    trained = train(CvrModel(D=64), _separable(rows, seed=rows)).model
    assert int(trained.n.sum()) == 9 * rows
    assert trained.rows_trained == rows


def test_training_reduces_window_loss():
    result = train(CvrModel(D=2 ** 16, salted=True), _separable(10_000, seed=1), window=1_000)
    assert len(result.window_losses) == 10
    assert result.window_losses[-1] < result.window_losses[0]


def test_model_learns_planted_attribute():
    model = train(CvrModel(D=2 ** 20, salted=True), _separable(50_000, seed=7)).model
    test_set = _separable(20_000, seed=8)
    metrics = evaluate_model(model, test_set)
    assert metrics.auc >= 0.95
    rate = test_set.conversions.mean()
    assert metrics.log_loss < -(rate * math.log(rate) + (1 - rate) * math.log(1 - rate))


def test_predict_all_is_pure():
    d = _separable(500, seed=2)
    m = train(CvrModel(D=1024), d).model
    first = predict_all(m, d)
    assert np.array_equal(first.cvr, predict_all(m, d).cvr)
    assert first.profitability is None
    assert np.all(predict_probabilities(CvrModel(D=1024), d) == 0.5)
    for index in range(20):
        assert first.cvr[index] == pytest.approx(predict(m, hash_row(d[index], m.D)), rel=1e-12)


def test_checkpoint_round_trip(tmp_path):
    m = train(CvrModel(D=128, alpha=0.2, salted=True), _separable(200, seed=3)).model
    back = load_model(save_model(m, tmp_path / "model.bin"))
    assert (back.D, back.alpha, back.salted, back.rows_trained) == (128, 0.2, True, 200)
    assert np.array_equal(back.w, m.w)
    assert np.array_equal(back.n, m.n)


def test_corrupt_checkpoints(tmp_path):
    path = save_model(CvrModel(D=8), tmp_path / "model.bin")
    data = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(data[:-8])
    (tmp_path / "magic.bin").write_bytes(b"X" + data[1:])
    for name in ("short.bin", "magic.bin"):
        with pytest.raises(CheckpointError):
            load_model(tmp_path / name)


def test_model_validation():
    with pytest.raises(InvalidArgument):
        CvrModel(D=1000)
    with pytest.raises(InvalidArgument):
        CvrModel(D=16, alpha=0.0)
