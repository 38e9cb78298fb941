import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedrouter.adapter import (
    AdapterParams,
    TrainConfig,
    average_adapters,
    batch_indices,
    evaluate,
    init_adapter,
    load_adapter_csv,
    logits,
    loss_and_grad,
    predict,
    save_adapter_csv,
    train_sgd,
)
from oracles import finite_difference_grad, softmax_cross_entropy


def separable(n=200, seed=0, dim=4):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, dim)) * 0.3
    x[:, 0] += np.where(y == 1, 3.0, -3.0)
    return x, y


def test_init_is_zero_and_ignores_seed():
    a = init_adapter(2, 2, adapter_id=0, seed=1)
    b = init_adapter(2, 2, adapter_id=0, seed=99)
    assert np.array_equal(a.weights, np.zeros((2, 2))) and np.array_equal(a.bias, np.zeros(2))
    assert a.fingerprint() == b.fingerprint()
    np.testing.assert_allclose(predict(a, [3.0, -1.0]), [0.5, 0.5])


def test_init_rejects_bad_dims():
    with pytest.raises(ValueError):
        init_adapter(0, 2)
    with pytest.raises(ValueError):
        init_adapter(3, 0)


def test_zero_learning_rate_is_noop():
    x, y = separable()
    start = init_adapter(4, 2)
    start.weights += 0.25
    out = train_sgd(start, x, y, TrainConfig(learning_rate=0.0, steps_per_round=5))
    assert out.fingerprint() == start.fingerprint()


def test_separable_reaches_full_accuracy():
    x, y = separable()
    out = train_sgd(init_adapter(4, 2), x, y, TrainConfig(learning_rate=0.1, steps_per_round=200, batch_size=16, seed=3))
    acc, _ = evaluate(out, x, y)
    assert acc >= 0.99
    assert out.steps_trained == 200


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    y = rng.integers(0, 3, 4)
    a = AdapterParams(rng.normal(size=(3, 3)), rng.normal(size=3))
    _, gw, gb = loss_and_grad(a, x, y)
    fd = finite_difference_grad(lambda p: softmax_cross_entropy(p, x, y, 3), a.flat(), eps=1e-4)
    assert np.max(np.abs(np.concatenate([gw.ravel(), gb]) - fd)) < 1e-5


def test_loss_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(6, 5)), rng.integers(0, 4, 6)
    a = AdapterParams(rng.normal(size=(4, 5)), rng.normal(size=4))
    loss, _, _ = loss_and_grad(a, x, y)
    assert loss == pytest.approx(softmax_cross_entropy(a.flat(), x, y, 4), abs=1e-12)


def test_full_loss_drops_after_ten_steps():
    x, y = separable(seed=4)
    start = init_adapter(4, 2)
    out = train_sgd(start, x, y, TrainConfig(learning_rate=1e-2, steps_per_round=10, seed=2))
    assert loss_and_grad(out, x, y)[0] < loss_and_grad(start, x, y)[0]


def test_training_is_deterministic():
    x, y = separable(seed=5)
    cfg = TrainConfig(learning_rate=0.05, steps_per_round=30, seed=8)
    a = train_sgd(init_adapter(4, 2), x, y, cfg)
    b = train_sgd(init_adapter(4, 2), x, y, cfg)
    assert a.fingerprint() == b.fingerprint()


def test_train_errors():
    x, y = separable()
    with pytest.raises(ValueError):
        train_sgd(init_adapter(4, 2), x[:0], y[:0], TrainConfig())
    with pytest.raises(ValueError):
        train_sgd(init_adapter(4, 2), x, np.full(len(y), 2), TrainConfig())
    with pytest.raises(ValueError):
        train_sgd(init_adapter(5, 2), x, y, TrainConfig())


def test_batches_wrap_across_permutations():
    rng = np.random.default_rng(0)
    batches = list(batch_indices(10, 4, 4, rng))
    flat = np.concatenate(batches)
    assert all(len(b) == 4 for b in batches)
    assert sorted(flat[:10].tolist()) == list(range(10))  # first epoch is a full permutation
    assert flat.max() < 10


def test_on_batch_sees_every_batch():
    x, y = separable(n=20)
    seen = []
    train_sgd(init_adapter(4, 2), x, y, TrainConfig(steps_per_round=7, batch_size=6), on_batch=seen.append)
    assert len(seen) == 7 and all(len(b) == 6 for b in seen)


def _adapter(values, bias=(0.0,)):
    return AdapterParams(np.array([values], dtype=float), np.array(bias, dtype=float))


def test_average_examples():
    avg = average_adapters([_adapter([1, 3]), _adapter([3, 5])])
    np.testing.assert_array_equal(avg.weights, [[2, 4]])
    single = _adapter([7, 8], bias=(1.5,))
    assert average_adapters([single]).fingerprint() == single.fingerprint()
    first = average_adapters([_adapter([1, 3]), _adapter([3, 5])], weights=[1.0, 0.0])
    np.testing.assert_array_equal(first.weights, [[1, 3]])


def test_average_errors():
    with pytest.raises(ValueError):
        average_adapters([])
    with pytest.raises(ValueError):
        average_adapters([_adapter([1, 2]), _adapter([1, 2, 3])])
    with pytest.raises(ValueError):
        average_adapters([_adapter([1, 2]), _adapter([1, 2])], weights=[0.6, 0.6])
    with pytest.raises(ValueError):
        average_adapters([_adapter([1, 2]), _adapter([1, 2])], weights=[1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31), st.randoms(use_true_random=False))
def test_average_is_permutation_invariant_and_idempotent(m, seed, rnd):
    rng = np.random.default_rng(seed)
    items = [AdapterParams(rng.normal(size=(3, 2)), rng.normal(size=3)) for _ in range(m)]
    shuffled = items[:]
    rnd.shuffle(shuffled)
    a, b = average_adapters(items), average_adapters(shuffled)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-12, rtol=0)
    np.testing.assert_allclose(a.bias, b.bias, atol=1e-12, rtol=0)
    same = average_adapters([items[0]] * m)
    np.testing.assert_allclose(same.weights, items[0].weights, atol=1e-12, rtol=0)
    assert a.weights.shape == items[0].weights.shape


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_predict_normalized_and_argmax(seed):
    rng = np.random.default_rng(seed)
    a = AdapterParams(rng.normal(size=(5, 4)) * 3, rng.normal(size=5))
    x = rng.normal(size=4) * 5
    p = predict(a, x)
    assert abs(p.sum() - 1.0) < 1e-9
    z = [float(np.dot(a.weights[c], x) + a.bias[c]) for c in range(5)]
    assert int(np.argmax(p)) == z.index(max(z))


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        predict(init_adapter(3, 2), [1.0, 2.0])


def test_evaluate_examples():
    x, y = separable()
    trained = train_sgd(init_adapter(4, 2), x, y, TrainConfig(learning_rate=0.1, steps_per_round=200))
    assert evaluate(trained, x, y)[0] == 1.0
    rng = np.random.default_rng(0)
    y4 = rng.integers(0, 4, 2000)
    acc, loss = evaluate(init_adapter(4, 4), rng.normal(size=(2000, 4)), y4)
    assert acc == pytest.approx(0.25, abs=0.05)
    assert loss == pytest.approx(np.log(4))
    one = AdapterParams(np.array([[1.0], [-1.0]]), np.zeros(2))
    assert evaluate(one, [[2.0]], [0])[0] == 1.0
    with pytest.raises(ValueError):
        evaluate(one, np.zeros((0, 1)), [])


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    a = AdapterParams(rng.normal(size=(3, 5)), rng.normal(size=3), adapter_id=7, steps_trained=40)
    save_adapter_csv(a, tmp_path / "a.csv")
    b = load_adapter_csv(tmp_path / "a.csv")
    assert (b.adapter_id, b.steps_trained) == (7, 40)
    assert b.fingerprint() == a.fingerprint()
    assert (tmp_path / "a.csv").read_text().startswith("adapter_id,steps_trained\n7,40\n")
    assert np.array_equal(logits(a, np.ones(5)), logits(b, np.ones(5)))
