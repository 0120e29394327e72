import json

import numpy as np
import pytest

from rdnn.autodiff import Tape, finite_diff_gradient
from rdnn.errors import ConfigurationError, ContractError
from rdnn.network import (
    NetworkConfig,
    NetworkParams,
    TapeNetwork,
    flatten,
    forward,
    from_checkpoint,
    init_params,
    parameter_count,
    to_checkpoint,
    unflatten,
    with_flat,
)


def _params(widths, weights, biases, **kw):
    return NetworkParams(tuple(widths), tuple(np.array(w, dtype=float) for w in weights),
                         tuple(np.array(b, dtype=float) for b in biases), **kw)


def test_parameter_count_and_flat_length():
    params = init_params((2, 128, 2), seed=0)
    assert parameter_count((2, 128, 2)) == 770
    assert params.n_params == 770
    assert flatten(params).size == 770


def test_init_is_deterministic_and_glorot_bounded():
    a = init_params((2, 128, 2), seed=5)
    b = init_params((2, 128, 2), seed=5)
    np.testing.assert_array_equal(flatten(a), flatten(b))
    assert not np.array_equal(flatten(a), flatten(init_params((2, 128, 2), seed=6)))
    assert np.all(np.abs(a.weights[0]) <= np.sqrt(6 / 130))
    assert np.all(np.abs(a.weights[1]) <= np.sqrt(6 / 130))
    assert all(np.all(b == 0) for b in a.biases)


@pytest.mark.parametrize("widths", [(), (2,), (2, 0, 2), ("a", 2)])
def test_invalid_widths(widths):
    with pytest.raises(ConfigurationError):
        init_params(widths, seed=0)


def test_forward_examples():
    zero = unflatten(np.zeros(770), (2, 128, 2))
    np.testing.assert_array_equal(forward(zero, [1.3, -0.2]), [0.0, 0.0])

    odd = _params((1, 2, 1), [[[1.0], [-1.0]], [[1.0, 1.0]]], [[0.0, 0.0], [0.0]])
    assert forward(odd, [0.5])[0] == pytest.approx(0.0, abs=1e-15)

    single = _params((1, 1, 1), [[[2.0]], [[3.0]]], [[0.0], [0.5]])
    assert forward(single, [0.25])[0] == pytest.approx(3 * np.tanh(0.5) + 0.5)
    assert forward(single, [0.25])[0] == pytest.approx(1.886667, abs=1e-6)


def test_forward_batches_columns():
    params = init_params((2, 16, 2), seed=1)
    X = np.random.default_rng(0).normal(size=(2, 5))
    batch = forward(params, X)
    assert batch.shape == (2, 5)
    for j in range(5):
        np.testing.assert_allclose(batch[:, j], forward(params, X[:, j]), rtol=1e-14)


def test_output_layer_is_unbounded():
    single = _params((1, 1, 1), [[[1.0]], [[40.0]]], [[0.0], [0.0]])
    assert forward(single, [3.0])[0] > 1.0


def test_forward_dimension_mismatch():
    params = init_params((2, 8, 2), seed=0)
    with pytest.raises(ContractError):
        forward(params, [1.0, 2.0, 3.0])


def test_time_dependent_network_appends_time():
    cfg = NetworkConfig(hidden=(4,), autonomous=False)
    assert cfg.widths(2) == (3, 4, 2)
    params = init_params(cfg.widths(2), seed=2, autonomous=False)
    W = params.weights[0]
    z = W[:, :2] @ np.array([0.1, 0.2]) + W[:, 2] * 0.7
    expected = params.weights[1] @ np.tanh(z)
    np.testing.assert_allclose(forward(params, [0.1, 0.2], 0.7), expected)

    taped = TapeNetwork(params, Tape())(np.array([[0.1], [0.2]]), np.array([0.7]))
    np.testing.assert_allclose(taped.value.ravel(), expected, rtol=1e-14)


def test_tape_network_matches_forward_and_finite_differences():
    params = init_params((2, 6, 2), seed=4)
    X = np.array([[0.3, -1.2], [0.8, 0.1]])

    tape = Tape()
    net = TapeNetwork(params, tape)
    out = net(X)
    np.testing.assert_allclose(out.value, forward(params, X), rtol=1e-14)

    root = out.square().sum()
    g = net.gradient(tape.backward(root.node))
    fd = finite_diff_gradient(lambda th: np.sum(forward(with_flat(params, th), X) ** 2), flatten(params))
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_flatten_round_trip_and_order():
    params = init_params((2, 5, 3, 2), seed=9)
    flat = flatten(params)
    back = unflatten(flat, params.widths)
    np.testing.assert_array_equal(flatten(back), flat)
    np.testing.assert_array_equal(flat[:10], params.weights[0].ravel())
    np.testing.assert_array_equal(flat[10:15], params.biases[0])


def test_unflatten_wrong_length():
    with pytest.raises(ContractError):
        unflatten(np.zeros(769), (2, 128, 2))


def test_checkpoint_round_trip_through_json():
    params = init_params((2, 8, 2), seed=3)
    payload = json.loads(json.dumps(to_checkpoint(params, {"kind": "recursive_rk4", "stages": 5}, step=10)))
    assert payload["scheme"] == {"kind": "recursive_rk4", "stages": 5}
    assert payload["step"] == 10
    back = from_checkpoint(payload)
    np.testing.assert_array_equal(flatten(back), flatten(params))
    assert back.widths == params.widths and back.seed == 3

    with pytest.raises(ContractError):
        from_checkpoint({**payload, "format": "other"})
