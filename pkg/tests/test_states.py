import numpy as np
import pytest

from ddic.bell import chsh, tilted
from ddic.covering import Bipartition, Covering, full_covering, minimal_covering, ring_covering
from ddic.qcore import MixedState, PureState, Register, partial_trace, permute, purity
from ddic.states import (
    BiseparableModel,
    Component,
    WeightedGraph,
    biseparable_adversary,
    biseparable_product,
    ghz,
    linear_cluster,
    random_biseparable_model,
    saturating_biseparable,
    saturating_biseparable_model,
    state_amplitude_table,
    tilted_ghz,
    weighted_graph_state,
    white_noise,
    zero_state,
)
from ddic.utils.errors import InfeasibleConstruction, ValidationError


def test_ghz_amplitudes():
    state = ghz(3)
    assert state_amplitude_table(state) == [('000', pytest.approx(1 / np.sqrt(2))),
                                            ('111', pytest.approx(1 / np.sqrt(2)))]


def test_qubit_cap():
    with pytest.raises(ValidationError):
        ghz(13)
    with pytest.raises(ValidationError):
        ghz(1)


def test_tilted_ghz_amplitudes_and_range():
    theta = np.radians(15.0)
    state = tilted_ghz(3, theta)
    assert state.amplitudes[0] == pytest.approx(np.cos(theta))
    assert state.amplitudes[7] == pytest.approx(np.sin(theta))
    with pytest.raises(ValidationError):
        tilted_ghz(3, np.pi / 3)


@pytest.mark.parametrize('order', [[1, 0, 2, 3], [3, 2, 1, 0], [2, 0, 3, 1]])
def test_ghz_is_permutation_invariant(order):
    state = ghz(4)
    assert np.allclose(permute(state, order).amplitudes, state.amplitudes)


@pytest.mark.parametrize('theta_deg', [5.0, 15.0, 30.0, 45.0])
def test_tilted_ghz_single_party_marginals(theta_deg):
    theta = np.radians(theta_deg)
    state = tilted_ghz(3, theta)
    for party in range(3):
        marginal = partial_trace(state, [party]).matrix
        assert np.allclose(marginal, np.diag([np.cos(theta) ** 2, np.sin(theta) ** 2]), atol=1e-12)


def test_linear_cluster_four_parties():
    expected = np.zeros(16)
    expected[[0b0000, 0b0011, 0b1100]] = 0.5
    expected[0b1111] = -0.5
    np.testing.assert_allclose(linear_cluster(4).amplitudes, expected, atol=1e-12)


def test_weighted_graph_state_phases():
    graph = WeightedGraph(2, ((0, 1),), (np.pi / 2,))
    state = weighted_graph_state(graph)
    np.testing.assert_allclose(state.amplitudes, np.array([1, 1, 1, 1j]) / 2, atol=1e-12)
    assert WeightedGraph.path(4).neighbours(1) == {0, 2}
    with pytest.raises(ValidationError):
        WeightedGraph(2, ((0, 1),), (0.0,))
    with pytest.raises(ValidationError):
        WeightedGraph(2, ((0, 1), (1, 0)), (np.pi, np.pi))


def test_biseparable_product_is_product_across_last_party():
    state = biseparable_product(4)
    assert purity(partial_trace(state, [3])) == pytest.approx(1.0)
    assert purity(partial_trace(state, [0])) == pytest.approx(0.5)


def test_white_noise():
    rho = white_noise(ghz(2), 0.0)
    np.testing.assert_allclose(rho.matrix, np.eye(4) / 4, atol=1e-12)
    assert white_noise(ghz(2), 1.0).matrix[0, 3] == pytest.approx(0.5)
    with pytest.raises(ValidationError):
        white_noise(ghz(2), 1.2)


def test_component_joined_restores_party_order():
    component = Component(1.0, Bipartition.from_group(3, (0, 2)), (ghz(2), zero_state()))
    joined = component.joined()
    assert isinstance(joined, PureState)
    expected = np.zeros(8)
    expected[[0b000, 0b101]] = 1 / np.sqrt(2)
    np.testing.assert_allclose(joined.amplitudes, expected, atol=1e-12)


def test_component_rejects_mismatched_factor():
    with pytest.raises(ValidationError):
        Component(1.0, Bipartition.from_group(3, (0,)), (ghz(2), zero_state()))


def test_model_rejects_bad_weights_and_labels():
    bipartition = Bipartition.from_group(3, (0, 1))
    component = Component(0.5, bipartition, (ghz(2), zero_state()), label=0)
    with pytest.raises(ValidationError):
        BiseparableModel(3, (component,), label_dim=1)
    with pytest.raises(ValidationError):
        BiseparableModel(3, (Component(1.0, bipartition, (ghz(2), zero_state()), label=2),), label_dim=2)


def test_saturating_model_dense_state():
    rho = saturating_biseparable()
    assert isinstance(rho, MixedState)
    assert rho.register.dims == (6, 6, 6)
    model = saturating_biseparable_model()
    assert model.cut_fraction((0, 1)) == pytest.approx(2 / 3)
    with pytest.raises(ValidationError):
        saturating_biseparable_model((0, 1))


def test_model_filtering_keeps_model_biseparable():
    rng = np.random.default_rng(8)
    model = random_biseparable_model(4, rng)
    filters = [np.diag([1.0, 0.3])] * 4
    filtered = model.filtered(filters)
    assert sum(c.weight for c in filtered.components) == pytest.approx(1.0)
    for before, after in zip(model.components, filtered.components):
        assert before.bipartition == after.bipartition
    identity = model.filtered([np.eye(2)] * 4)
    assert [c.weight for c in identity.components] == pytest.approx([c.weight for c in model.components])


def test_model_filtering_dense_state_matches_filtered_density():
    rng = np.random.default_rng(9)
    model = random_biseparable_model(3, rng, mixed=True)
    k = np.array([[0.9, 0.1], [0.1, 0.5]])
    dense = model.to_mixed_state().matrix
    operator = np.kron(np.kron(k, k), k)
    image = operator @ dense @ operator.conj().T
    np.testing.assert_allclose(model.filtered([k] * 3).to_mixed_state().matrix, image / np.trace(image), atol=1e-10)


@pytest.mark.parametrize('covering, n_components', [
    (minimal_covering(4), 3),
    (full_covering(4), 4),
    (ring_covering(5), 5),
    (Covering(4, ((0, 1), (0, 2), (0, 3))), 3),
])
def test_adversary_components(covering, n_components):
    model = biseparable_adversary(covering, chsh())
    assert len(model.components) == n_components
    assert model.label_dim == n_components


def test_adversary_tilted_uses_tilted_groups():
    theta = np.radians(15.0)
    model = biseparable_adversary(minimal_covering(3), tilted(theta))
    factors = [f for c in model.components for f in c.factors if f.register.n_parties == 2]
    assert factors[0].amplitudes[0] == pytest.approx(np.cos(theta))


def test_adversary_infeasible_covering():
    covering = Covering(4, ((0, 1), (1, 2), (2, 3), (0, 2)))
    with pytest.raises(InfeasibleConstruction):
        biseparable_adversary(covering, chsh())


def test_random_model_register():
    model = random_biseparable_model(5, np.random.default_rng(1), n_components=4)
    assert len(model.components) == 4
    assert model.to_mixed_state().register == Register.qubits(5)
