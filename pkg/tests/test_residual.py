import numpy as np
import pytest

from rdnn.autodiff import Tape, Var
from rdnn.errors import ConfigurationError, ContractError, DivergenceError
from rdnn.network import TapeNetwork, forward, init_params
from rdnn.residual import DataPair, ResidualScheme, SchemeKind, partition, residual, residual_terms, rollout
from rdnn.systems import reference_integrate, rhs_cubic

ALL_SCHEMES = [
    ResidualScheme("euler_forward"),
    ResidualScheme("euler_backward"),
    ResidualScheme("trapezoid"),
    ResidualScheme("recursive_euler", 3),
    ResidualScheme("recursive_rk4", 2),
]


def identity(phi, t):
    return phi


def zero(phi, t):
    return 0.0 * phi


def _col(x):
    return np.array([[x]], dtype=float)


@pytest.mark.parametrize("args, expected", [
    ((0.0, 1.0, 1), [0.0, 1.0]),
    ((0.0, 1.0, 4), [0.0, 0.25, 0.5, 0.75, 1.0]),
    ((0.5, 2.5, 2), [0.5, 1.5, 2.5]),
])
def test_partition_examples(args, expected):
    np.testing.assert_allclose(partition(*args), expected)
    assert partition(*args)[-1] == args[1]


@pytest.mark.parametrize("args", [(0.0, 1.0, 0), (1.0, 1.0, 2), (1.0, 0.5, 1)])
def test_partition_rejects_bad_arguments(args):
    with pytest.raises(ContractError):
        partition(*args)


def test_scheme_validation():
    assert str(ResidualScheme("recursive_rk4", 5)) == "recursive_rk4(M=5)"
    assert ResidualScheme.from_dict({"kind": "recursive_euler", "stages": 3}) == ResidualScheme(
        SchemeKind.RECURSIVE_EULER, 3)
    with pytest.raises(ConfigurationError):
        ResidualScheme("recursive_rk4", 0)
    with pytest.raises(ConfigurationError):
        ResidualScheme("trapezoid", 2)
    with pytest.raises(ConfigurationError):
        ResidualScheme("midpoint")


def test_rollout_with_zero_dynamics_keeps_state():
    phi = np.array([[1.0, -2.0], [0.5, 3.0]])
    for kind in ("recursive_euler", "recursive_rk4"):
        out = rollout(ResidualScheme(kind, 4), zero, phi, np.zeros(2), np.ones(2))
        np.testing.assert_array_equal(out, phi)


def test_rk4_rollout_matches_taylor_polynomial():
    one_step = rollout(ResidualScheme("recursive_rk4", 1), identity, _col(1.0), np.array([0.0]), np.array([0.1]))
    expected = 1 + 0.1 + 0.1**2 / 2 + 0.1**3 / 6 + 0.1**4 / 24
    assert one_step[0, 0] == pytest.approx(expected, abs=1e-15)
    assert one_step[0, 0] == pytest.approx(1.1051708333, abs=1e-10)

    two_steps = rollout(ResidualScheme("recursive_rk4", 2), identity, _col(1.0), np.array([0.0]), np.array([0.2]))
    assert two_steps[0, 0] == pytest.approx(expected**2, abs=1e-14)
    assert two_steps[0, 0] == pytest.approx(1.2214025931, abs=1e-9)


def test_rollout_needs_recursive_scheme():
    with pytest.raises(ContractError):
        rollout(ResidualScheme("trapezoid"), identity, _col(1.0), np.array([0.0]), np.array([1.0]))


def test_residual_examples():
    for scheme in ALL_SCHEMES:
        pair = DataPair([1.0, 2.0], 0.0, [1.5, 1.0], 0.3)
        np.testing.assert_allclose(residual(scheme, pair, zero), [0.5, -1.0])

    const = residual(ResidualScheme("euler_forward"), DataPair(0.0, 0.0, 0.5, 0.5), lambda phi, t: 1.0 + 0.0 * phi)
    assert const[0] == pytest.approx(0.0, abs=1e-15)

    exp_pair = DataPair(1.0, 0.0, np.exp(0.1), 0.1)
    r = residual(ResidualScheme("euler_forward"), exp_pair, identity)
    assert r[0] == pytest.approx(np.exp(0.1) - 1.1, abs=1e-15)
    assert r[0] == pytest.approx(0.0051709, abs=1e-7)

    backward = residual(ResidualScheme("euler_backward"), exp_pair, identity)
    assert backward[0] == pytest.approx(np.exp(0.1) - 1 - 0.1 * np.exp(0.1), abs=1e-15)
    trap = residual(ResidualScheme("trapezoid"), exp_pair, identity)
    assert trap[0] == pytest.approx(np.exp(0.1) - 1 - 0.05 * (1 + np.exp(0.1)), abs=1e-15)


def test_data_pair_contract():
    with pytest.raises(ContractError):
        DataPair([1.0], 1.0, [2.0], 1.0)
    with pytest.raises(ContractError):
        DataPair([1.0, 2.0], 0.0, [2.0], 1.0)
    assert DataPair([1.0], 0.5, [2.0], 2.0).h == 1.5


def test_rk4_rollout_agrees_with_reference_integrator():
    rng = np.random.default_rng(0)
    phi = rng.uniform(-2.5, 2.5, size=(2, 6))
    dt = 0.2
    for M in (1, 2, 5, 10):
        ours = rollout(ResidualScheme("recursive_rk4", M), rhs_cubic, phi, np.zeros(6), np.full(6, dt))
        ref = reference_integrate(rhs_cubic, phi, 0.0, dt, M)
        np.testing.assert_allclose(ours, ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("kind, order", [("recursive_euler", 1.0), ("recursive_rk4", 4.0)])
def test_order_of_accuracy(kind, order):
    pair = DataPair(1.0, 0.0, np.exp(0.1), 0.1)
    errors = [abs(residual(ResidualScheme(kind, M), pair, identity)[0]) for M in (1, 2, 4, 8, 16)]
    slopes = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    tol = 0.2 if order == 1.0 else 0.3
    assert np.all(np.abs(slopes - order) < tol), slopes


def test_residual_vanishes_with_the_lag():
    phi1 = np.array([1.2, -0.7])
    for scheme in (ResidualScheme("recursive_euler", 2), ResidualScheme("recursive_rk4", 2),
                   ResidualScheme("trapezoid")):
        norms = []
        for h in (1e-1, 1e-2, 1e-3):
            phi2 = reference_integrate(rhs_cubic, phi1, 0.0, h, 2000)
            norms.append(np.linalg.norm(residual(scheme, DataPair(phi1, 0.0, phi2, h), rhs_cubic)))
        assert norms[0] > norms[1] > norms[2]
        assert norms[2] < 1e-4


def test_trapezoid_is_exact_for_linear_flows():
    a, b = np.array([0.3, -1.0]), np.array([2.0, 0.5])
    drift = lambda phi, t: b.reshape(-1, 1) + 0.0 * phi  # noqa: E731
    for t1, t2 in ((0.0, 0.1), (1.0, 3.5), (-2.0, 7.0)):
        pair = DataPair(a + b * t1, t1, a + b * t2, t2)
        assert np.max(np.abs(residual(ResidualScheme("trapezoid"), pair, drift))) <= 1e-14


def test_divergence_reports_segment():
    blows_up = lambda phi, t: np.where(phi > 1.5, np.inf, phi)  # noqa: E731
    with pytest.raises(DivergenceError) as info:
        rollout(ResidualScheme("recursive_euler", 4), blows_up, _col(1.0), np.array([0.0]), np.array([1.0]))
    assert info.value.segment == 2


def test_batched_residual_matches_single_pairs():
    params = init_params((2, 8, 2), seed=1)
    rng = np.random.default_rng(3)
    phi1, phi2 = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    t1, t2 = np.zeros(4), np.array([0.1, 0.2, 0.3, 0.4])
    F = lambda phi, t: forward(params, phi, t)  # noqa: E731
    for scheme in ALL_SCHEMES:
        batch = residual_terms(scheme, F, phi1, t1, phi2, t2)
        for j in range(4):
            single = residual(scheme, DataPair(phi1[:, j], t1[j], phi2[:, j], t2[j]), F)
            np.testing.assert_allclose(batch[:, j], single, rtol=1e-13, atol=1e-15)


def test_tape_backed_residual_matches_plain():
    params = init_params((2, 8, 2), seed=2)
    pair = DataPair([0.4, -0.9], 0.0, [0.5, -1.0], 0.25)
    for scheme in ALL_SCHEMES:
        taped = residual(scheme, pair, TapeNetwork(params, Tape()))
        assert isinstance(taped, Var) and taped.shape == (2, 1)
        plain = residual(scheme, pair, lambda phi, t: forward(params, phi, t))
        np.testing.assert_allclose(taped.value.ravel(), plain, rtol=1e-13, atol=1e-15)
