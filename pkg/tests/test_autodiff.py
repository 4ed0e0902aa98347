import numpy as np
import pytest

from src.autodiff.checkpoint import load_checkpoint, parameters_digest, restore_parameters, save_checkpoint
from src.autodiff.functional import (
    bce_with_logits, concat, dropout, embedding, l2_penalty, mse, segment_softmax, segment_sum, stack,
)
from src.autodiff.gradcheck import gradient_check
from src.autodiff.optim import Adam, adam_update
from src.autodiff.tensor import Tensor, no_grad
from src.errors import DataValidationError, ShapeError

TOLERANCE = 1e-4


def leaf(rng, *shape, positive=False):
    data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.mark.parametrize("name, build", [
    ("add_broadcast", lambda a, b, c: ((a + b[0]) * c).sum()),
    ("sub_div", lambda a, b, c: ((a - c) / (b * b + 1.0)).sum()),
    ("matmul", lambda a, b, c: (a @ b.T).tanh().sum()),
    ("pow_exp_log", lambda a, b, c: ((c ** 3).sum() + (a * 0.1).exp().sum() + c.log().sum())),
    ("sigmoid_relu", lambda a, b, c: (a.sigmoid() * b.relu()).sum() + (a - b).leaky_relu(0.1).sum()),
    ("softmax_mean", lambda a, b, c: (a.softmax(axis=-1) * b).mean(axis=0).sum()),
    ("index_reshape", lambda a, b, c: (a[np.array([0, 2, 0])].reshape(3, 4) * c[0]).sum()),
    ("transpose_sum", lambda a, b, c: (a.T.sum(axis=1, keepdims=True) * b[:, :1].T).sum()),
])
def test_elementary_gradients(rng, name, build):
    a, b, c = leaf(rng, 3, 4), leaf(rng, 3, 4), leaf(rng, 3, 4, positive=True)
    assert gradient_check(lambda: build(a, b, c), [a, b, c]) < TOLERANCE, name


def test_reused_node_accumulates(rng):
    a = leaf(rng, 2, 3)
    h = a * 2.0
    loss = (h * h).sum() + h.sum()
    loss.backward()
    np.testing.assert_allclose(a.grad, 8.0 * a.data + 2.0)
    assert gradient_check(lambda: ((a * 2.0) * (a * 2.0)).sum() + (a * 2.0).sum(), [a]) < TOLERANCE


def test_leaf_gradients_accumulate_until_zeroed(rng):
    a = leaf(rng, 3)
    (a * 3.0).sum().backward()
    (a * 3.0).sum().backward()
    np.testing.assert_allclose(a.grad, 6.0)
    a.zero_grad()
    assert a.grad is None


def test_functional_gradients(rng):
    values = leaf(rng, 5, 3)
    scores = leaf(rng, 5)
    table = leaf(rng, 4, 3)
    other = leaf(rng, 5, 2)
    segments = np.array([0, 2, 2, 1, 2])

    def loss():
        pooled = segment_sum(values * segment_softmax(scores, segments, 3).reshape(5, 1), segments, 3)
        rows = embedding(table, [1, 1, 3])
        joined = concat([values, other], axis=1)
        stacked = stack([values, values * 2.0], axis=0)
        return (pooled ** 2).sum() + rows.tanh().sum() + joined.sigmoid().sum() + stacked.mean() + l2_penalty([table])

    assert gradient_check(loss, [values, scores, table, other]) < TOLERANCE


def test_losses_match_closed_forms(rng):
    logits = leaf(rng, 6)
    targets = (rng.random(6) > 0.5).astype(float)
    expected = np.mean(np.log1p(np.exp(-logits.data)) + (1 - targets) * logits.data)
    assert bce_with_logits(logits, targets).item() == pytest.approx(expected)
    assert gradient_check(lambda: bce_with_logits(logits, targets), [logits]) < TOLERANCE

    predictions = leaf(rng, 4)
    target = rng.normal(size=4)
    assert mse(predictions, target).item() == pytest.approx(np.mean((predictions.data - target) ** 2))
    assert gradient_check(lambda: mse(predictions, target), [predictions]) < TOLERANCE


def test_segment_softmax_sums_to_one_per_segment(rng):
    segments = np.array([0, 0, 1, 2, 2, 2])
    out = segment_softmax(Tensor(rng.normal(size=6) * 50), segments, 4).data
    totals = np.zeros(4)
    np.add.at(totals, segments, out)
    np.testing.assert_allclose(totals, [1.0, 1.0, 1.0, 0.0])


def test_dropout_modes(rng):
    x = leaf(rng, 4, 4)
    assert dropout(x, 0.5) is x
    mask = np.eye(4, dtype=bool)
    out = dropout(x, 0.5, mask=mask)
    np.testing.assert_allclose(out.data, np.where(mask, 2.0 * x.data, 0.0))
    with pytest.raises(ValueError):
        dropout(x, 1.0, rng=rng)


def test_shape_errors_name_the_operation():
    with pytest.raises(ShapeError, match="matmul"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError, match="add"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ShapeError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)
    with pytest.raises(ValueError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_no_grad_records_nothing(rng):
    a = leaf(rng, 3)
    with no_grad():
        out = (a * 2.0).sum()
    assert not out.requires_grad
    out.backward()
    assert a.grad is None


def test_adam_update_matches_reference():
    param, grad = np.array([1.0, -2.0]), np.array([0.5, -0.1])
    m, v = np.zeros(2), np.zeros(2)
    adam_update(param, grad, m, v, step=1, lr=0.1)
    # first bias-corrected step moves each entry by lr * sign(grad)
    np.testing.assert_allclose(param, [0.9, -1.9], atol=1e-6)
    np.testing.assert_allclose(m, 0.1 * grad)
    np.testing.assert_allclose(v, 0.001 * grad * grad)


@pytest.mark.parametrize("lr", [0.0, -0.1])
def test_adam_update_rejects_nonpositive_learning_rate(lr):
    param, grad = np.array([1.0, -2.0]), np.array([0.5, -0.1])
    m, v = np.zeros(2), np.zeros(2)
    with pytest.raises(ValueError, match="learning rate must be positive"):
        adam_update(param, grad, m, v, step=1, lr=lr)
    assert param.tolist() == [1.0, -2.0]
    assert not m.any() and not v.any()


def test_adam_minimizes_a_quadratic_and_skips_unused_parameters():
    x = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    unused = Tensor(np.array([1.0]), requires_grad=True)
    optimizer = Adam({"x": x, "unused": unused}, lr=0.1)
    for _ in range(500):
        optimizer.zero_grad()
        ((x - 1.0) ** 2).sum().backward()
        optimizer.step()
    np.testing.assert_allclose(x.data, [1.0, 1.0], atol=1e-2)
    assert unused.data.tolist() == [1.0]
    assert not optimizer.v["unused"].any()
    with pytest.raises(ValueError):
        Adam({"x": x}, lr=0.0)


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"w": leaf(rng, 3, 2), "b": leaf(rng, 2)}
    optimizer = Adam(params, lr=0.01)
    (params["w"].sum() + params["b"].sum()).backward()
    optimizer.step()

    file = save_checkpoint(str(tmp_path / "model.npz"), params, optimizer)
    again = save_checkpoint(str(tmp_path / "again.npz"), params, optimizer)
    with open(file, "rb") as f1, open(again, "rb") as f2:
        assert f1.read() == f2.read()

    checkpoint = load_checkpoint(file)
    assert checkpoint.step == 1
    assert parameters_digest(checkpoint.params) == parameters_digest(params)

    fresh = {"w": Tensor(np.zeros((3, 2)), requires_grad=True), "b": Tensor(np.zeros(2), requires_grad=True)}
    restore_parameters(fresh, checkpoint.params)
    np.testing.assert_array_equal(fresh["w"].data, params["w"].data)
    restored = Adam(fresh, lr=0.01)
    restored.load_state(checkpoint.adam_m, checkpoint.adam_v, checkpoint.step)
    np.testing.assert_array_equal(restored.m["b"], optimizer.m["b"])
    assert restored.t == 1

    with pytest.raises(DataValidationError, match="shape"):
        restore_parameters({"w": Tensor(np.zeros((2, 2)))}, checkpoint.params)
    with pytest.raises(DataValidationError, match="no parameter"):
        restore_parameters({"missing": Tensor(np.zeros(1))}, checkpoint.params)
