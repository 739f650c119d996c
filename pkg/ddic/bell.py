"""Two-party Bell inequalities, their default observables and local-bound oracles."""
import itertools
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from ddic.qcore import (
    CONSTRUCTION_TOL,
    HARD_TOL,
    IDENTITY2,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    Array,
    Observable,
    PureState,
    Register,
    State,
    expectation,
)
from ddic.utils.errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

CHSH_LOCAL = 2.0
CHSH_QUANTUM = 2.0 * np.sqrt(2.0)
TILTED_BETA_LOCAL = 0.952
BRUTEFORCE_SLACK = 1e-9

Term = tuple[Optional[int], Optional[int]]

# (source setting, sign) per setting of each side, applied on odd-parity branches
_ODD_RELABEL: dict[str, tuple[tuple[tuple[int, int], ...], tuple[tuple[int, int], ...]]] = {
    'chsh': (((0, 1), (1, -1)), ((0, 1), (1, 1))),
    'tilted': (((0, 1), (1, 1)), ((1, -1), (0, -1))),
}


@dataclass(frozen=True)
class BellInequality:
    """Linear Bell expression on two parties with binary outcomes.

    Attributes
    ----------
    name : str
        Family, ``'chsh'`` or ``'tilted'`` for the built-in ones.
    settings_a, settings_b : int
        Number of measurement settings of each side.
    coefficients : Mapping[tuple[Optional[int], Optional[int]], float]
        Weight per term. ``(x, y)`` is the correlator ``<A_x B_y>``, ``(x, None)``
        and ``(None, y)`` are marginals.
    beta_local : float
        Configured local bound.
    beta_quantum : float
        Quantum maximum, strictly larger than ``beta_local``.
    theta : Optional[float]
        Tilting angle in radians for the tilted family.
    """

    name: str
    settings_a: int
    settings_b: int
    coefficients: Mapping[Term, float] = field(hash=False)
    beta_local: float
    beta_quantum: float
    theta: Optional[float] = None

    def __post_init__(self) -> None:
        if self.settings_a < 1 or self.settings_b < 1:
            raise ValidationError('each side needs at least one setting')
        if not self.beta_quantum > self.beta_local:
            raise ValidationError(f'quantum bound {self.beta_quantum} must exceed local bound {self.beta_local}')
        for (x, y), value in self.coefficients.items():
            if x is None and y is None:
                raise ValidationError('constant terms are not allowed')
            if x is not None and not 0 <= x < self.settings_a:
                raise ValidationError(f'setting {x} of side A out of range')
            if y is not None and not 0 <= y < self.settings_b:
                raise ValidationError(f'setting {y} of side B out of range')
            if not np.isfinite(value):
                raise ValidationError(f'coefficient of term {(x, y)} is not finite')
        object.__setattr__(self, 'coefficients', dict(self.coefficients))

    @property
    def gap(self) -> float:
        return self.beta_quantum - self.beta_local


def chsh() -> BellInequality:
    return BellInequality(
        name='chsh',
        settings_a=2,
        settings_b=2,
        coefficients={(0, 0): 1.0, (0, 1): 1.0, (1, 0): 1.0, (1, 1): -1.0},
        beta_local=CHSH_LOCAL,
        beta_quantum=CHSH_QUANTUM,
    )


def tilted_angle(theta: float) -> float:
    """Angle ``b`` of the optimal side-B observables for the tilted expression."""
    cos2, sin2 = np.cos(2 * theta), np.sin(2 * theta)
    return float(np.arctan(np.sqrt((1.0 + 0.5 * cos2 ** 2) / sin2 ** 2)))


def tilted(theta: float, beta_local: Optional[float] = None) -> BellInequality:
    """Tilted expression self-testing ``cos(theta)|00> + sin(theta)|11>``.

    Parameters
    ----------
    theta : float
        Angle in ``(0, pi/4]``.
    beta_local : Optional[float]
        Local bound to configure, ``TILTED_BETA_LOCAL`` if omitted. The
        brute-force deterministic value is reported alongside it and never
        silently replaces it.

    Returns
    -------
    BellInequality
        Normalized so that its quantum maximum is 1. Side B settings ``0`` and
        ``1`` play the roles of the two tilted observables.
    """
    if theta <= 0.0:
        raise ValidationError('tilted expression is singular at theta = 0')
    if theta > np.pi / 4 + CONSTRUCTION_TOL:
        raise ValidationError(f'theta must lie in (0, pi/4], got {theta}')
    b = tilted_angle(theta)
    sin_b, cos_b = np.sin(b), np.cos(b)
    cos2, sin2 = np.cos(2 * theta), np.sin(2 * theta)
    coefficients = {
        (0, 0): 1.0 / (4 * sin_b),
        (0, 1): -1.0 / (4 * sin_b),
        (1, 0): sin2 / (4 * cos_b),
        (1, 1): sin2 / (4 * cos_b),
        (0, None): cos2 / 4,
        (None, 0): cos2 / (8 * sin_b),
        (None, 1): -cos2 / (8 * sin_b),
    }
    return BellInequality(
        name='tilted',
        settings_a=2,
        settings_b=2,
        coefficients=coefficients,
        beta_local=TILTED_BETA_LOCAL if beta_local is None else float(beta_local),
        beta_quantum=1.0,
        theta=float(theta),
    )


def tilted_printed_bound(theta: float) -> float:
    """Closed-form deterministic bound of the tilted expression."""
    cos2, cos4 = np.cos(2 * theta), np.cos(4 * theta)
    return float(0.25 * (cos2 + (2 + cos2) * np.sqrt((7 - cos4) / (5 + cos4))))


@dataclass(frozen=True, eq=False)
class ObservablePair:
    """Settings of both sides.

    Attributes
    ----------
    a_observables, b_observables : tuple[Observable, ...]
        Hermitian single-party observables with spectrum in ``[-1, 1]``.
    """

    a_observables: tuple[Observable, ...]
    b_observables: tuple[Observable, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, 'a_observables', tuple(self.a_observables))
        object.__setattr__(self, 'b_observables', tuple(self.b_observables))
        for side in (self.a_observables, self.b_observables):
            if not side:
                raise ValidationError('each side needs at least one observable')
            if len({o.register for o in side}) != 1 or side[0].register.n_parties != 1:
                raise ValidationError('observables of one side must act on the same single party')
            for observable in side:
                if observable.spectral_norm > 1.0 + CONSTRUCTION_TOL:
                    raise ValidationError('observable spectrum exceeds [-1, 1]')

    @property
    def dims(self) -> tuple[int, int]:
        return self.a_observables[0].register.dims[0], self.b_observables[0].register.dims[0]

    def conjugated(self, unitary_a: Array, unitary_b: Array) -> 'ObservablePair':
        return ObservablePair(tuple(o.conjugated(unitary_a) for o in self.a_observables),
                              tuple(o.conjugated(unitary_b) for o in self.b_observables))


@dataclass(frozen=True, eq=False)
class Relabel:
    """Branch-dependent adjustment of the default observables.

    Attributes
    ----------
    parity : int
        Outcome parity of the measured parties. Odd parity applies the
        family's classical relabelling of settings and outcome signs.
    frame : Optional[tuple[numpy.ndarray, numpy.ndarray]]
        Local unitaries ``(U_a, U_b)`` rotating the canonical pair state onto
        the branch state; observables become ``U O U^dagger``.
    """

    parity: int = 0
    frame: Optional[tuple[Array, Array]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, 'parity', int(self.parity) % 2)


def classical_relabel(ineq: BellInequality, parity: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Per side and setting, the ``(source setting, sign)`` the branch uses."""
    identity = (tuple((x, 1) for x in range(ineq.settings_a)), tuple((y, 1) for y in range(ineq.settings_b)))
    if parity % 2 == 0:
        return identity
    if ineq.name not in _ODD_RELABEL:
        raise ValidationError(f"no parity relabelling known for inequality '{ineq.name}'")
    return _ODD_RELABEL[ineq.name]


def _base_matrices(ineq: BellInequality) -> tuple[list[Array], list[Array]]:
    if ineq.name == 'chsh':
        return [PAULI_Z, PAULI_X], [(PAULI_Z + PAULI_X) / np.sqrt(2), (PAULI_Z - PAULI_X) / np.sqrt(2)]
    if ineq.name == 'tilted':
        assert ineq.theta is not None
        b = tilted_angle(ineq.theta)
        return [PAULI_Z, PAULI_X], [np.cos(b) * PAULI_X + np.sin(b) * PAULI_Z,
                                    np.cos(b) * PAULI_X - np.sin(b) * PAULI_Z]
    raise ValidationError(f"no default observables for inequality '{ineq.name}'")


def default_observables(ineq: BellInequality, relabel: Optional[Relabel] = None) -> ObservablePair:
    """Observables saturating ``ineq`` on its canonical two-qubit state.

    The canonical state is ``|Phi+>`` for CHSH and ``cos(theta)|00> + sin(theta)|11>``
    for the tilted family. Odd parity adapts them to the branch state obtained
    after an odd number of ``-`` outcomes; for both families this equals
    conjugation of one side by ``sigma_z``.

    Parameters
    ----------
    ineq : BellInequality
        Built-in inequality.
    relabel : Optional[Relabel]
        Branch adjustment, identity when omitted.

    Returns
    -------
    ObservablePair
        Two-qubit observables.
    """
    relabel = relabel or Relabel()
    base_a, base_b = _base_matrices(ineq)
    map_a, map_b = classical_relabel(ineq, relabel.parity)
    a_obs = tuple(Observable.local(sign * base_a[src]) for src, sign in map_a)
    b_obs = tuple(Observable.local(sign * base_b[src]) for src, sign in map_b)
    pair = ObservablePair(a_obs, b_obs)
    if relabel.frame is not None:
        pair = pair.conjugated(*relabel.frame)
    return pair


def score(ineq: BellInequality, state: State, observables: ObservablePair) -> float:
    """Value of ``ineq`` on a two-party state with the given observables."""
    if state.register.n_parties != 2:
        raise ValidationError(f'score needs a two-party state, got {state.register.n_parties} parties')
    if len(observables.a_observables) != ineq.settings_a or len(observables.b_observables) != ineq.settings_b:
        raise ValidationError('observable count does not match the inequality settings')
    if observables.dims != state.register.dims:
        raise ValidationError(f'observables act on {observables.dims}, state on {state.register.dims}')
    d_a, d_b = state.register.dims
    total = 0.0
    for (x, y), coefficient in ineq.coefficients.items():
        a = observables.a_observables[x].matrix if x is not None else np.eye(d_a)
        b = observables.b_observables[y].matrix if y is not None else np.eye(d_b)
        total += coefficient * expectation(state, Observable(state.register, np.kron(a, b)))
    return total


def _deterministic_optimum(ineq: BellInequality) -> tuple[float, tuple[int, ...], tuple[int, ...]]:
    best = -np.inf
    best_a: tuple[int, ...] = ()
    best_b: tuple[int, ...] = ()
    for signs_a in itertools.product((1, -1), repeat=ineq.settings_a):
        for signs_b in itertools.product((1, -1), repeat=ineq.settings_b):
            value = 0.0
            for (x, y), coefficient in ineq.coefficients.items():
                value += coefficient * (signs_a[x] if x is not None else 1) * (signs_b[y] if y is not None else 1)
            if value > best + CONSTRUCTION_TOL:
                best, best_a, best_b = value, signs_a, signs_b
    return float(best), best_a, best_b


def local_bound_bruteforce(ineq: BellInequality) -> float:
    """Maximum over all deterministic local strategies.

    A warning is logged when the configured ``beta_local`` lies below it.
    """
    value = _deterministic_optimum(ineq)[0]
    if value > ineq.beta_local + BRUTEFORCE_SLACK:
        logger.warning("configured local bound %.6f of '%s' is below the deterministic value %.6f",
                       ineq.beta_local, ineq.name, value)
    return value


def deterministic_observables(ineq: BellInequality, dims: tuple[int, int] = (2, 2)) -> ObservablePair:
    """Observables ``+-I`` realizing the best deterministic strategy."""
    _, signs_a, signs_b = _deterministic_optimum(ineq)
    return ObservablePair(tuple(Observable.local(s * np.eye(dims[0])) for s in signs_a),
                          tuple(Observable.local(s * np.eye(dims[1])) for s in signs_b))


def label_controlled(blocks: Sequence[ObservablePair]) -> ObservablePair:
    """Block-diagonal observables acting as ``blocks[l]`` when the local label reads ``l``.

    Local index ``L*q + l`` carries physical level ``q`` and label ``l``.
    """
    if not blocks:
        raise ValidationError('at least one label block is required')
    n_labels = len(blocks)
    projectors = [np.outer(np.eye(n_labels)[l], np.eye(n_labels)[l]) for l in range(n_labels)]

    def combine(side: int) -> tuple[Observable, ...]:
        sides = [block.a_observables if side == 0 else block.b_observables for block in blocks]
        if len({len(s) for s in sides}) != 1:
            raise ValidationError('label blocks disagree on the number of settings')
        return tuple(
            Observable.local(sum(np.kron(sides[l][x].matrix, projectors[l]) for l in range(n_labels)))
            for x in range(len(sides[0]))
        )

    return ObservablePair(combine(0), combine(1))


_PAULI_STACK = np.array([IDENTITY2, PAULI_X, PAULI_Y, PAULI_Z])
# _TWO_QUBIT_PAULIS[i, j] = s_i x s_j with s_0 = I
_TWO_QUBIT_PAULIS = np.einsum('iab,jcd->ijacbd', _PAULI_STACK, _PAULI_STACK).reshape(4, 4, 4, 4)


def correlation_data(state: State) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Correlation matrix ``T_ij = <s_i x s_j>`` and Bloch vectors of a two-qubit state."""
    if state.register != Register.qubits(2):
        raise ValidationError('correlation data needs a two-qubit state')
    if isinstance(state, PureState):
        rho = np.outer(state.amplitudes, state.amplitudes.conj())
    else:
        rho = state.matrix
    values = np.einsum('ijab,ba->ij', _TWO_QUBIT_PAULIS, rho)
    if np.max(np.abs(values.imag)) > HARD_TOL:
        raise NumericalError('two-qubit correlations have an imaginary residue')
    values = values.real
    return values[1:, 1:], values[1:, 0], values[0, 1:]


@dataclass(frozen=True)
class ChshOptimum:
    """Optimal CHSH value of a two-qubit state.

    Attributes
    ----------
    criterion : float
        ``2 sqrt(t1 + t2)`` from the two largest eigenvalues of ``T^T T``.
    achievable : float
        ``max(2, criterion)``, the value a verifier attains with the best
        projective or deterministic strategy.
    """

    criterion: float
    achievable: float


def optimal_chsh(state: State) -> ChshOptimum:
    t, _, _ = correlation_data(state)
    eigenvalues = np.sort(np.clip(np.linalg.eigvalsh(t.T @ t), 0.0, None))[::-1]
    criterion = float(2.0 * np.sqrt(eigenvalues[0] + eigenvalues[1]))
    return ChshOptimum(criterion, max(CHSH_LOCAL, criterion))


def _unit(angles: np.ndarray) -> np.ndarray:
    polar, azimuth = angles
    return np.array([np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth), np.cos(polar)])


def chsh_numerical_max(state: State, rng: np.random.Generator, restarts: int = 20) -> float:
    """CHSH maximum over projective qubit observables by multistart search.

    Side A is maximized in closed form; the search runs over the two side-B
    Bloch directions.
    """
    t, _, _ = correlation_data(state)

    def negative(x: np.ndarray) -> float:
        b0, b1 = _unit(x[:2]), _unit(x[2:])
        return -float(np.linalg.norm(t @ (b0 + b1)) + np.linalg.norm(t @ (b0 - b1)))

    best = -np.inf
    for _ in range(restarts):
        start = rng.uniform(0.0, 2 * np.pi, size=4)
        result = optimize.minimize(negative, start, method='BFGS', options={'gtol': 1e-10})
        best = max(best, -float(result.fun))
    return best


def optimal_score(ineq: BellInequality, state: State, rng: Optional[np.random.Generator] = None,
                  restarts: int = 8) -> float:
    """Best value of ``ineq`` on a two-qubit state.

    CHSH uses the closed-form optimum. Other expressions are maximized over
    projective observables by multistart search and floored by the best
    deterministic strategy.
    """
    if ineq.name == 'chsh':
        return optimal_chsh(state).achievable
    rng = rng if rng is not None else np.random.default_rng(0)
    t, bloch_a, bloch_b = correlation_data(state)
    n_a, n_b = ineq.settings_a, ineq.settings_b

    def negative(x: np.ndarray) -> float:
        a = [_unit(x[2 * i:2 * i + 2]) for i in range(n_a)]
        b = [_unit(x[2 * (n_a + j):2 * (n_a + j) + 2]) for j in range(n_b)]
        value = 0.0
        for (i, j), coefficient in ineq.coefficients.items():
            if i is not None and j is not None:
                value += coefficient * float(a[i] @ t @ b[j])
            elif i is not None:
                value += coefficient * float(a[i] @ bloch_a)
            else:
                value += coefficient * float(bloch_b @ b[j])
        return -value

    best = _deterministic_optimum(ineq)[0]
    for _ in range(restarts):
        start = rng.uniform(0.0, 2 * np.pi, size=2 * (n_a + n_b))
        result = optimize.minimize(negative, start, method='BFGS')
        best = max(best, -float(result.fun))
    return best


@dataclass(frozen=True)
class LocalBoundReport:
    """Configured local bound next to the independently computed ones.

    Attributes
    ----------
    configured : float
        ``beta_local`` used by certificates.
    bruteforce : float
        Deterministic maximum.
    closed_form : Optional[float]
        Closed-form expression, tilted family only.
    distinct : bool
        Whether the configured value differs from the brute-force one.
    """

    configured: float
    bruteforce: float
    closed_form: Optional[float]
    distinct: bool

    def to_dict(self) -> dict:
        return {'configured': self.configured, 'bruteforce': self.bruteforce,
                'closed_form': self.closed_form, 'distinct': self.distinct}


def local_bound_report(ineq: BellInequality) -> LocalBoundReport:
    bruteforce = local_bound_bruteforce(ineq)
    closed_form = tilted_printed_bound(ineq.theta) if ineq.name == 'tilted' and ineq.theta is not None else None
    return LocalBoundReport(ineq.beta_local, bruteforce, closed_form,
                            abs(bruteforce - ineq.beta_local) > 1e-6)


def canonical_pair_state(ineq: BellInequality) -> PureState:
    """Two-qubit state on which ``default_observables`` reach ``beta_quantum``."""
    if ineq.name == 'chsh':
        return PureState(Register.qubits(2), np.array([1, 0, 0, 1]) / np.sqrt(2))
    if ineq.name == 'tilted':
        assert ineq.theta is not None
        return PureState(Register.qubits(2), np.array([np.cos(ineq.theta), 0, 0, np.sin(ineq.theta)]))
    raise ValidationError(f"no canonical state for inequality '{ineq.name}'")


def is_two_qubit(state: State) -> bool:
    return state.register == Register.qubits(2)

