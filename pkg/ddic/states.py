"""Constructors for the multipartite states and biseparable models the protocol is run on."""
import dataclasses
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import networkx as nx
import numpy as np
import numpy.typing as npt

from ddic.bell import BellInequality
from ddic.covering import Bipartition, Covering, mincut
from ddic.qcore import (
    CONSERVATION_TOL,
    CONSTRUCTION_TOL,
    HADAMARD,
    MAX_MIXED_DIM,
    ZERO_PROBABILITY,
    MixedState,
    PureState,
    Register,
    State,
    apply_local,
    basis_state,
    local_map,
    permute,
    random_mixed_state,
    random_pure_state,
    tensor,
)
from ddic.utils.errors import InfeasibleConstruction, NumericalError, ValidationError

logger = logging.getLogger(__name__)

MAX_QUBITS = 12
SATURATING_LABELS = (0, 1, 2)


def _check_qubit_count(n: int, minimum: int = 2) -> None:
    if n < minimum:
        raise ValidationError(f'at least {minimum} parties are required, got {n}')
    if n > MAX_QUBITS:
        raise ValidationError(f'{n} qubits exceed the dense-state cap of {MAX_QUBITS}')


def ghz(n: int) -> PureState:
    """``(|0...0> + |1...1>) / sqrt(2)`` on ``n`` qubits."""
    _check_qubit_count(n)
    vector = np.zeros(2 ** n, dtype=np.complex128)
    vector[0] = vector[-1] = 1 / np.sqrt(2)
    return PureState(Register.qubits(n), vector)


def tilted_ghz(n: int, theta: float) -> PureState:
    """``cos(theta)|0...0> + sin(theta)|1...1>`` with ``theta`` in ``[0, pi/4]``."""
    _check_qubit_count(n)
    if not -CONSTRUCTION_TOL <= theta <= np.pi / 4 + CONSTRUCTION_TOL:
        raise ValidationError(f'theta must lie in [0, pi/4], got {theta}')
    vector = np.zeros(2 ** n, dtype=np.complex128)
    vector[0], vector[-1] = np.cos(theta), np.sin(theta)
    return PureState(Register.qubits(n), vector)


def plus_state() -> PureState:
    return PureState(Register.qubits(1), np.array([1, 1]) / np.sqrt(2))


def zero_state(n: int = 1) -> PureState:
    return basis_state(Register.qubits(n), (0,) * n)


@dataclass(frozen=True)
class WeightedGraph:
    """Graph with a controlled-phase angle on every edge.

    Attributes
    ----------
    n_parties : int
        Number of vertices.
    edges : tuple[tuple[int, int], ...]
        Edges ``(i, j)`` with ``i < j``.
    phases : tuple[float, ...]
        Angle in ``(0, 2*pi]`` per edge; ``pi`` gives an ordinary graph state.
    """

    n_parties: int
    edges: tuple[tuple[int, int], ...]
    phases: tuple[float, ...]

    def __post_init__(self) -> None:
        _check_qubit_count(self.n_parties, minimum=1)
        if len(self.edges) != len(self.phases):
            raise ValidationError('one phase per edge is required')
        edges = []
        for i, j in self.edges:
            if i == j or not (0 <= i < self.n_parties and 0 <= j < self.n_parties):
                raise ValidationError(f'invalid edge {(i, j)}')
            edges.append((min(i, j), max(i, j)))
        if len(set(edges)) != len(edges):
            raise ValidationError('graph contains duplicate edges')
        for phase in self.phases:
            if not 0.0 < phase <= 2 * np.pi + CONSTRUCTION_TOL:
                raise ValidationError(f'edge phase {phase} outside (0, 2*pi]')
        object.__setattr__(self, 'edges', tuple(edges))
        object.__setattr__(self, 'phases', tuple(float(p) for p in self.phases))

    @classmethod
    def path(cls, n: int, phase: float = np.pi) -> 'WeightedGraph':
        return cls(n, tuple((i, i + 1) for i in range(n - 1)), (phase,) * (n - 1))

    def neighbours(self, party: int) -> set[int]:
        return {j if i == party else i for i, j in self.edges if party in (i, j)}


def weighted_graph_state(graph: WeightedGraph) -> PureState:
    """Controlled phases applied to ``|+>^n``.

    The amplitude of ``|x>`` is ``2**(-n/2) * exp(i * sum_e phi_e x_i x_j)``.
    """
    n = graph.n_parties
    bits = (np.arange(2 ** n)[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    phase = np.zeros(2 ** n)
    for (i, j), angle in zip(graph.edges, graph.phases):
        phase += angle * bits[:, i] * bits[:, j]
    return PureState(Register.qubits(n), np.exp(1j * phase) / 2 ** (n / 2))


def cluster_alignment(n: int) -> tuple[int, ...]:
    """Parties whose graph-state frame is rotated by a Hadamard in ``linear_cluster``."""
    return () if n == 2 else (0, n - 1)


def linear_cluster(n: int) -> PureState:
    """Linear cluster state with Hadamards on both ends.

    For four parties this is ``(|0000> + |0011> + |1100> - |1111>) / 2``.
    """
    _check_qubit_count(n)
    state = weighted_graph_state(WeightedGraph.path(n))
    return apply_local(state, {party: HADAMARD for party in cluster_alignment(n)})


def biseparable_product(n: int) -> PureState:
    """``GHZ_{n-1}`` on the first parties times ``|+>`` on the last one."""
    _check_qubit_count(n)
    head = plus_state() if n == 2 else ghz(n - 1)
    result = tensor(head, plus_state())
    assert isinstance(result, PureState)
    return result


def white_noise(state: State, visibility: float) -> MixedState:
    """``v rho + (1 - v) I / d``."""
    if not 0.0 <= visibility <= 1.0:
        raise ValidationError(f'visibility must lie in [0, 1], got {visibility}')
    rho = state.to_mixed()
    dim = state.register.total_dim
    return MixedState.from_matrix(state.register,
                                  visibility * rho.matrix + (1 - visibility) * np.eye(dim) / dim)


@dataclass(frozen=True, eq=False)
class Component:
    """One biseparable term of a model.

    Attributes
    ----------
    weight : float
        Mixture weight.
    bipartition : Bipartition
        Split the component factorizes across.
    factors : tuple[State, State]
        States of ``sorted(group1)`` and ``sorted(group2)`` in that party order.
    label : Optional[int]
        Classical label copied to every party, if the model is labelled.
    """

    weight: float
    bipartition: Bipartition
    factors: tuple[State, State]
    label: Optional[int] = None

    def __post_init__(self) -> None:
        for group, factor in zip((self.bipartition.group1, self.bipartition.group2), self.factors):
            if factor.register.n_parties != len(group):
                raise ValidationError(f'factor with {factor.register.n_parties} parties for a group of {len(group)}')

    @property
    def groups(self) -> tuple[list[int], list[int]]:
        return sorted(self.bipartition.group1), sorted(self.bipartition.group2)

    def factor_of(self, party: int) -> tuple[State, list[int]]:
        """Factor holding ``party`` and the global parties it covers."""
        for group, factor in zip(self.groups, self.factors):
            if party in group:
                return factor, group
        raise ValidationError(f'party {party} not in component')

    def joined(self) -> State:
        """Product of the factors with the parties back in global order."""
        first, second = self.groups
        combined = tensor(self.factors[0], self.factors[1])
        concatenated = first + second
        order = [concatenated.index(p) for p in range(len(concatenated))]
        return permute(combined, order)  # type: ignore[arg-type]


@dataclass(frozen=True, eq=False)
class BiseparableModel:
    """Explicit mixture of biseparable components.

    Attributes
    ----------
    n_parties : int
        Number of parties.
    components : tuple[Component, ...]
        Components whose weights sum to 1.
    label_dim : Optional[int]
        Size of the classical label space when every party also holds a copy
        of the component label; ``None`` for unlabelled models.
    """

    n_parties: int
    components: tuple[Component, ...]
    label_dim: Optional[int] = None

    def __post_init__(self) -> None:
        components = tuple(self.components)
        if not components:
            raise ValidationError('a model needs at least one component')
        weights = np.array([c.weight for c in components])
        if np.any(weights < -CONSTRUCTION_TOL) or abs(weights.sum() - 1.0) > CONSERVATION_TOL:
            raise ValidationError(f'component weights must be a probability vector, got {weights.tolist()}')
        for component in components:
            if component.bipartition.n_parties != self.n_parties:
                raise ValidationError('component bipartition does not match the model size')
            if self.label_dim is not None and (component.label is None
                                               or not 0 <= component.label < self.label_dim):
                raise ValidationError(f'component label {component.label} outside 0..{self.label_dim - 1}')
        object.__setattr__(self, 'components', components)

    def cut_fraction(self, edge: tuple[int, int]) -> float:
        """Total weight of components separating the two ends of ``edge``."""
        return float(sum(c.weight for c in self.components if c.bipartition.cuts(edge)))

    def filtered(self, filters: Sequence[npt.ArrayLike]) -> 'BiseparableModel':
        """Model conditioned on the local filter ``filters[p]`` passing on every party ``p``.

        Local filtering maps every component to a product across the same
        bipartition, so the result is again biseparable.
        """
        if len(filters) != self.n_parties:
            raise ValidationError(f'{len(filters)} filters for {self.n_parties} parties')
        kept = []
        for component in self.components:
            weight = component.weight
            factors: list[State] = []
            for factor, group in zip(component.factors, component.groups):
                image = local_map(factor, {k: filters[p] for k, p in enumerate(group)})
                if isinstance(factor, PureState):
                    passed = float(np.vdot(image, image).real)
                    weight *= passed
                    if passed > ZERO_PROBABILITY:
                        factors.append(PureState.from_vector(factor.register, image))
                else:
                    passed = float(np.trace(image).real)
                    weight *= passed
                    if passed > ZERO_PROBABILITY:
                        factors.append(MixedState.from_matrix(factor.register, image))
            if len(factors) == 2 and weight > ZERO_PROBABILITY:
                kept.append(dataclasses.replace(component, weight=weight, factors=(factors[0], factors[1])))
        total = sum(c.weight for c in kept)
        if total < ZERO_PROBABILITY:
            raise NumericalError('the filters never pass on this model')
        return BiseparableModel(self.n_parties,
                                tuple(dataclasses.replace(c, weight=c.weight / total) for c in kept),
                                self.label_dim)

    def to_mixed_state(self) -> MixedState:
        """Dense density operator, label systems merged into their party.

        A labelled party has local dimension ``d * label_dim`` with index
        ``label_dim * q + l`` for physical level ``q`` and label ``l``.
        """
        n = self.n_parties
        scale = self.label_dim or 1
        registers = {Register(tuple(d * scale for d in c.joined().register.dims)) for c in self.components}
        if len(registers) != 1:
            raise ValidationError('components live on different registers')
        register = registers.pop()
        if register.total_dim > MAX_MIXED_DIM:
            raise ValidationError(f'model dimension {register.total_dim} exceeds the mixed-state cap {MAX_MIXED_DIM}')
        matrix = np.zeros((register.total_dim, register.total_dim), dtype=np.complex128)
        for component in self.components:
            state = component.joined()
            if self.label_dim is not None:
                assert component.label is not None
                labels = basis_state(Register((self.label_dim,) * n), (component.label,) * n)
                state = permute(tensor(state, labels), [k for p in range(n) for k in (p, n + p)])  # type: ignore[arg-type]
            matrix += component.weight * state.to_mixed().matrix
        return MixedState.from_matrix(register, matrix)


def saturating_biseparable_model(labels: Sequence[int] = SATURATING_LABELS) -> BiseparableModel:
    """Three-party labelled mixture reaching the full-covering biseparable bound.

    Each component holds ``|Phi+>`` on one pair and ``|0>`` on the third party;
    ``labels[k]`` is the label of the component entangling pair ``k`` of
    ``AB, AC, BC``. Distinct labels let each edge's verifier pick the
    component's own optimal observables.
    """
    if len(labels) != 3:
        raise ValidationError('three labels are required')
    phi_plus = ghz(2)
    components = []
    for (i, j), label in zip(((0, 1), (0, 2), (1, 2)), labels):
        other = ({0, 1, 2} - {i, j}).pop()
        components.append(Component(
            weight=1 / 3,
            bipartition=Bipartition.from_group(3, (i, j)),
            factors=(phi_plus, zero_state()),
            label=int(label),
        ))
        logger.debug('component %d: Phi+ on %s, |0> on %d', label, (i, j), other)
    return BiseparableModel(3, tuple(components), label_dim=3)


def saturating_biseparable(labels: Sequence[int] = SATURATING_LABELS) -> MixedState:
    """Dense state of ``saturating_biseparable_model``: three parties of dimension 6."""
    return saturating_biseparable_model(labels).to_mixed_state()


def _adversary_bipartitions(covering: Covering) -> list[Bipartition]:
    n = covering.n_parties
    if covering.is_tree:
        graph = covering.graph()
        bipartitions = []
        for edge in covering.edges:
            graph.remove_edge(*edge)
            side = next(g for g in nx.connected_components(graph) if edge[0] in g)
            bipartitions.append(Bipartition.from_group(n, side))
            graph.add_edge(*edge)
        return bipartitions
    degrees = set(covering.degrees)
    if len(degrees) == 1 and mincut(covering) == degrees.pop():
        return [Bipartition.from_group(n, (p,)) for p in range(n)]
    raise InfeasibleConstruction(
        f'no bound-saturating biseparable model is known for this {covering.n_edges}-edge covering; '
        'supported are trees and regular coverings whose mincut equals the degree')


def biseparable_adversary(covering: Covering, ineq: BellInequality) -> BiseparableModel:
    """Labelled biseparable model reaching ``biseparable_bound(covering, ineq)``.

    Every component cuts exactly ``mincut`` edges and places a GHZ-type state
    on each group, so a label-aware verifier reaches ``beta_quantum`` on uncut
    edges and the deterministic value on cut ones.

    Raises
    ------
    InfeasibleConstruction
        When the covering is neither a tree nor regular with mincut equal to
        its degree.
    """
    if covering.n_parties < 3:
        raise ValidationError('an adversary needs at least three parties')
    bipartitions = _adversary_bipartitions(covering)

    def group_state(size: int) -> State:
        if size == 1:
            return zero_state()
        if ineq.name == 'tilted':
            assert ineq.theta is not None
            return tilted_ghz(size, ineq.theta)
        return ghz(size)

    components = tuple(
        Component(weight=1 / len(bipartitions), bipartition=b,
                  factors=(group_state(len(b.group1)), group_state(len(b.group2))), label=k)
        for k, b in enumerate(bipartitions)
    )
    return BiseparableModel(covering.n_parties, components, label_dim=len(components))


def random_biseparable_model(n: int, rng: np.random.Generator, n_components: int = 3,
                             mixed: bool = False) -> BiseparableModel:
    """Random unlabelled mixture of qubit product-across-a-cut states."""
    _check_qubit_count(n)
    weights = rng.dirichlet(np.ones(n_components))
    components = []
    for weight in weights:
        size = int(rng.integers(1, n))
        group = frozenset(int(p) for p in rng.choice(n, size=size, replace=False))
        bipartition = Bipartition.from_group(n, group)
        factors = []
        for part in (bipartition.group1, bipartition.group2):
            register = Register.qubits(len(part))
            factors.append(random_mixed_state(register, rng) if mixed else random_pure_state(register, rng))
        components.append(Component(float(weight), bipartition, (factors[0], factors[1])))
    return BiseparableModel(n, tuple(components))


def state_amplitude_table(state: PureState, threshold: float = 1e-12) -> list[tuple[str, complex]]:
    """Nonzero amplitudes keyed by their computational-basis label."""
    dims = state.register.dims
    rows = []
    for index, amplitude in enumerate(state.amplitudes):
        if abs(amplitude) > threshold:
            digits = np.unravel_index(index, dims)
            rows.append((''.join(str(int(d)) for d in digits), complex(amplitude)))
    return rows

