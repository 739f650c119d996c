"""Dense complex linear algebra over registers of finite local dimensions.

Party 0 occupies the most significant digit of the mixed-radix flattening of a
register; every module in the package shares this convention.
"""
import functools
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import numpy.typing as npt

from ddic.utils.errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

CONSTRUCTION_TOL = 1e-12
CONSERVATION_TOL = 1e-10
HARD_TOL = 1e-8
EIGENVALUE_FLOOR = -1e-10
ZERO_PROBABILITY = 1e-14

MAX_PURE_DIM = 4096
MAX_MIXED_DIM = 1024

Array = npt.NDArray[np.complex128]

IDENTITY2: Array = np.eye(2, dtype=np.complex128)
PAULI_X: Array = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y: Array = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z: Array = np.array([[1, 0], [0, -1]], dtype=np.complex128)
HADAMARD: Array = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)

for _matrix in (IDENTITY2, PAULI_X, PAULI_Y, PAULI_Z, HADAMARD):
    _matrix.flags.writeable = False


def _frozen(data: npt.ArrayLike) -> Array:
    array = np.array(data, dtype=np.complex128)
    array.flags.writeable = False
    return array


def _hermitian_part(matrix: Array) -> Array:
    return 0.5 * (matrix + matrix.conj().T)


@dataclass(frozen=True)
class Register:
    """Ordered local dimensions of a composite system.

    Attributes
    ----------
    dims : tuple[int, ...]
        Local dimension of every party, each at least 2.
    """

    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if not dims:
            raise ValidationError('register must contain at least one party')
        if any(d < 2 for d in dims):
            raise ValidationError(f'local dimensions must be >= 2, got {dims}')
        object.__setattr__(self, 'dims', dims)

    @classmethod
    def qubits(cls, n_parties: int) -> 'Register':
        return cls((2,) * n_parties)

    @property
    def n_parties(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims))

    def check_party(self, party: int) -> None:
        if not 0 <= party < self.n_parties:
            raise ValidationError(f'party index {party} out of range for {self.n_parties} parties')

    def restrict(self, parties: Sequence[int]) -> 'Register':
        for party in parties:
            self.check_party(party)
        return Register(tuple(self.dims[p] for p in parties))

    def concat(self, other: 'Register') -> 'Register':
        return Register(self.dims + other.dims)


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized state vector.

    Attributes
    ----------
    register : Register
        Hilbert-space structure.
    amplitudes : numpy.ndarray
        Complex vector of length ``register.total_dim`` with unit norm.
    """

    register: Register
    amplitudes: Array

    def __post_init__(self) -> None:
        amplitudes = _frozen(np.ravel(self.amplitudes))
        dim = self.register.total_dim
        if dim > MAX_PURE_DIM:
            raise ValidationError(f'pure-state register dimension {dim} exceeds cap {MAX_PURE_DIM}')
        if amplitudes.shape != (dim,):
            raise ValidationError(f'expected {dim} amplitudes, got {amplitudes.shape[0]}')
        norm = float(np.linalg.norm(amplitudes))
        if abs(norm - 1.0) > CONSTRUCTION_TOL:
            raise ValidationError(f'state vector norm {norm!r} differs from 1')
        object.__setattr__(self, 'amplitudes', amplitudes)

    @classmethod
    def from_vector(cls, register: Register, vector: npt.ArrayLike) -> 'PureState':
        """Normalizes ``vector`` and wraps it.

        Parameters
        ----------
        register : Register
            Register of the state.
        vector : array_like
            Unnormalized amplitudes.

        Returns
        -------
        PureState
            Normalized state.
        """
        array = np.array(vector, dtype=np.complex128).ravel()
        norm = np.linalg.norm(array)
        if norm < ZERO_PROBABILITY:
            raise NumericalError('cannot normalize a zero vector')
        return cls(register, array / norm)

    def to_mixed(self) -> 'MixedState':
        return MixedState.from_matrix(self.register, np.outer(self.amplitudes, self.amplitudes.conj()))


@dataclass(frozen=True, eq=False)
class MixedState:
    """Density operator.

    Attributes
    ----------
    register : Register
        Hilbert-space structure.
    matrix : numpy.ndarray
        Hermitian, unit-trace, positive semidefinite matrix.
    """

    register: Register
    matrix: Array

    def __post_init__(self) -> None:
        matrix = _frozen(self.matrix)
        dim = self.register.total_dim
        if dim > MAX_MIXED_DIM:
            raise ValidationError(f'mixed-state register dimension {dim} exceeds cap {MAX_MIXED_DIM}')
        if matrix.shape != (dim, dim):
            raise ValidationError(f'expected a {dim}x{dim} matrix, got {matrix.shape}')
        if np.max(np.abs(matrix - matrix.conj().T)) > CONSTRUCTION_TOL:
            raise ValidationError('density matrix is not Hermitian')
        trace = complex(np.trace(matrix))
        if abs(trace - 1.0) > CONSTRUCTION_TOL:
            raise ValidationError(f'density matrix trace {trace!r} differs from 1')
        smallest = float(np.linalg.eigvalsh(matrix)[0])
        if smallest < EIGENVALUE_FLOOR:
            raise ValidationError(f'density matrix has negative eigenvalue {smallest!r}')
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def from_matrix(cls, register: Register, matrix: npt.ArrayLike) -> 'MixedState':
        """Symmetrizes and trace-normalizes ``matrix`` before validation."""
        array = _hermitian_part(np.array(matrix, dtype=np.complex128))
        trace = float(np.trace(array).real)
        if trace < ZERO_PROBABILITY:
            raise NumericalError('cannot normalize an operator with zero trace')
        return cls(register, array / trace)

    @classmethod
    def maximally_mixed(cls, register: Register) -> 'MixedState':
        dim = register.total_dim
        return cls(register, np.eye(dim, dtype=np.complex128) / dim)

    def to_mixed(self) -> 'MixedState':
        return self


State = Union[PureState, MixedState]


@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian operator on a register.

    Attributes
    ----------
    register : Register
        Parties the operator acts on.
    matrix : numpy.ndarray
        Hermitian matrix.
    """

    register: Register
    matrix: Array

    def __post_init__(self) -> None:
        matrix = _frozen(self.matrix)
        dim = self.register.total_dim
        if matrix.shape != (dim, dim):
            raise ValidationError(f'expected a {dim}x{dim} operator, got {matrix.shape}')
        if np.max(np.abs(matrix - matrix.conj().T)) > CONSTRUCTION_TOL:
            raise ValidationError('observable is not Hermitian')
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def local(cls, matrix: npt.ArrayLike) -> 'Observable':
        """Single-party observable with the register inferred from the shape."""
        array = np.array(matrix, dtype=np.complex128)
        return cls(Register((array.shape[0],)), array)

    @classmethod
    def identity(cls, register: Register) -> 'Observable':
        return cls(register, np.eye(register.total_dim, dtype=np.complex128))

    def conjugated(self, unitary: npt.ArrayLike) -> 'Observable':
        """Returns ``U O U^dagger``."""
        u = np.array(unitary, dtype=np.complex128)
        return Observable(self.register, _hermitian_part(u @ self.matrix @ u.conj().T))

    def scaled(self, factor: float) -> 'Observable':
        return Observable(self.register, factor * self.matrix)

    @property
    def spectral_norm(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvalsh(self.matrix))))


@dataclass(frozen=True, eq=False)
class OutcomeBranchRaw:
    """One outcome of a projective measurement.

    Attributes
    ----------
    outcome_index : int
        Index of the basis vector.
    probability : float
        Occurrence probability.
    post_state : Optional[PureState | MixedState]
        Renormalized state of the remaining parties; ``None`` when the outcome
        has zero probability.
    """

    outcome_index: int
    probability: float
    post_state: Optional[State]

    @property
    def vanished(self) -> bool:
        return self.post_state is None


def tensor(a: Union[State, Observable], b: Union[State, Observable]) -> Union[State, Observable]:
    """Kronecker composition with ``a`` as the most significant factor.

    Parameters
    ----------
    a, b : PureState | MixedState | Observable
        Operands. Two pure states give a pure state, any state involving a
        mixed operand gives a mixed state, two observables give an observable.

    Returns
    -------
    PureState | MixedState | Observable
        Composite object on the concatenated register.
    """
    if isinstance(a, Observable) or isinstance(b, Observable):
        if not (isinstance(a, Observable) and isinstance(b, Observable)):
            raise ValidationError('cannot compose a state with an observable')
        return Observable(a.register.concat(b.register), np.kron(a.matrix, b.matrix))
    register = a.register.concat(b.register)
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(register, np.kron(a.amplitudes, b.amplitudes))
    return MixedState.from_matrix(register, np.kron(a.to_mixed().matrix, b.to_mixed().matrix))


def tensor_all(*items: Union[State, Observable]) -> Union[State, Observable]:
    if not items:
        raise ValidationError('nothing to compose')
    return functools.reduce(tensor, items)


def _check_keep(register: Register, keep: Iterable[int]) -> list[int]:
    parties = sorted(set(int(p) for p in keep))
    if not parties:
        raise ValidationError('keep set must not be empty')
    for party in parties:
        register.check_party(party)
    return parties


def partial_trace(rho: State, keep: Iterable[int]) -> State:
    """Reduced state on the parties in ``keep``.

    Parameters
    ----------
    rho : PureState | MixedState
        Input state.
    keep : Iterable[int]
        Parties to keep; the result lists them in their original order.

    Returns
    -------
    PureState | MixedState
        The input itself when every party is kept, otherwise the reduced
        density operator.
    """
    register = rho.register
    parties = _check_keep(register, keep)
    if len(parties) == register.n_parties:
        return rho
    dims = register.dims
    traced = [p for p in range(register.n_parties) if p not in parties]
    kept_register = register.restrict(parties)
    if isinstance(rho, PureState):
        psi = rho.amplitudes.reshape(dims).transpose(parties + traced)
        block = psi.reshape(kept_register.total_dim, -1)
        return MixedState.from_matrix(kept_register, block @ block.conj().T)
    n = register.n_parties
    rows = list(range(n))
    cols = [n + p for p in range(n)]
    for p in traced:
        cols[p] = rows[p]
    out = [rows[p] for p in parties] + [cols[p] for p in parties]
    reduced = np.einsum(rho.matrix.reshape(dims + dims), rows + cols, out)
    return MixedState.from_matrix(kept_register, reduced.reshape(kept_register.total_dim, -1))


def permute(state: State, order: Sequence[int]) -> State:
    """Reorders parties so that new party ``k`` is old party ``order[k]``."""
    register = state.register
    order = [int(p) for p in order]
    if sorted(order) != list(range(register.n_parties)):
        raise ValidationError(f'{order} is not a permutation of {register.n_parties} parties')
    new_register = register.restrict(order)
    if isinstance(state, PureState):
        amplitudes = state.amplitudes.reshape(register.dims).transpose(order).ravel()
        return PureState(new_register, amplitudes)
    n = register.n_parties
    tensor_ = state.matrix.reshape(register.dims + register.dims)
    matrix = tensor_.transpose(order + [n + p for p in order]).reshape(new_register.total_dim, -1)
    return MixedState(new_register, matrix)


def check_basis(basis: npt.ArrayLike, dim: int) -> Array:
    """Validates a measurement basis given as a matrix whose columns are the basis vectors."""
    matrix = np.array(basis, dtype=np.complex128)
    if matrix.shape != (dim, dim):
        raise ValidationError(f'basis must be a {dim}x{dim} matrix, got {matrix.shape}')
    if np.max(np.abs(matrix.conj().T @ matrix - np.eye(dim))) > CONSTRUCTION_TOL:
        raise ValidationError('measurement basis is not orthonormal')
    return matrix


def measure_party(state: State, party: int, basis: npt.ArrayLike) -> list[OutcomeBranchRaw]:
    """Projective measurement of one party.

    Parameters
    ----------
    state : PureState | MixedState
        Measured state, with at least two parties.
    party : int
        Measured party.
    basis : array_like
        Matrix whose columns form an orthonormal basis of the party's space.

    Returns
    -------
    list[OutcomeBranchRaw]
        One entry per basis vector, zero-probability outcomes included.
    """
    register = state.register
    register.check_party(party)
    if register.n_parties < 2:
        raise ValidationError('cannot measure the only party of a register')
    dim = register.dims[party]
    vectors = check_basis(basis, dim)
    rest = [p for p in range(register.n_parties) if p != party]
    rest_register = register.restrict(rest)
    branches = []
    if isinstance(state, PureState):
        psi = np.moveaxis(state.amplitudes.reshape(register.dims), party, 0).reshape(dim, -1)
        for k in range(dim):
            projected = vectors[:, k].conj() @ psi
            probability = float(np.vdot(projected, projected).real)
            post: Optional[State] = None
            if probability > ZERO_PROBABILITY:
                post = PureState.from_vector(rest_register, projected)
            branches.append(OutcomeBranchRaw(k, probability, post))
    else:
        n = register.n_parties
        blocks = np.moveaxis(state.matrix.reshape(register.dims + register.dims), [party, n + party], [0, 1])
        blocks = blocks.reshape(dim, dim, rest_register.total_dim, rest_register.total_dim)
        for k in range(dim):
            vector = vectors[:, k]
            projected = np.einsum('i,j,ijab->ab', vector.conj(), vector, blocks)
            probability = float(np.trace(projected).real)
            post = None
            if probability > ZERO_PROBABILITY:
                post = MixedState.from_matrix(rest_register, projected)
            branches.append(OutcomeBranchRaw(k, probability, post))
    total = sum(branch.probability for branch in branches)
    if abs(total - 1.0) > CONSERVATION_TOL:
        raise NumericalError(f'measurement probabilities sum to {total!r}')
    return branches


def expectation(state: State, observable: Observable) -> float:
    """Expectation value of a Hermitian observable.

    Parameters
    ----------
    state : PureState | MixedState
        State on the same register as the observable.
    observable : Observable
        Measured operator.

    Returns
    -------
    float
        Real expectation value.
    """
    if state.register != observable.register:
        raise ValidationError(f'register mismatch: state {state.register.dims}, '
                              f'observable {observable.register.dims}')
    if isinstance(state, PureState):
        value = complex(np.vdot(state.amplitudes, observable.matrix @ state.amplitudes))
    else:
        value = complex(np.einsum('ij,ji->', observable.matrix, state.matrix))
    if abs(value.imag) > HARD_TOL:
        raise NumericalError(f'expectation value has imaginary residue {value.imag!r}')
    if abs(value.imag) > CONSERVATION_TOL:
        logger.warning('discarding imaginary residue %.3e of an expectation value', value.imag)
    return value.real


def purity(state: State) -> float:
    if isinstance(state, PureState):
        return 1.0
    return float(np.einsum('ij,ji->', state.matrix, state.matrix).real)


def fidelity(target: PureState, state: State) -> float:
    """Overlap ``<psi|rho|psi>`` of ``state`` with a pure target."""
    if target.register != state.register:
        raise ValidationError('register mismatch')
    if isinstance(state, PureState):
        return float(abs(np.vdot(target.amplitudes, state.amplitudes)) ** 2)
    return float(np.vdot(target.amplitudes, state.matrix @ target.amplitudes).real)


def schmidt_decomposition(state: PureState) -> tuple[npt.NDArray[np.float64], Array, Array]:
    """Schmidt form ``sum_k s_k |a_k>|b_k>`` of a two-party pure state.

    Returns
    -------
    tuple
        Coefficients in decreasing order and the two local bases as matrices
        whose columns are ``a_k`` and ``b_k``.
    """
    if state.register.n_parties != 2:
        raise ValidationError('Schmidt decomposition needs a two-party state')
    d_a, d_b = state.register.dims
    u, s, vh = np.linalg.svd(state.amplitudes.reshape(d_a, d_b))
    return s, u, vh.T


def basis_state(register: Register, digits: Sequence[int]) -> PureState:
    """Computational basis vector with the given per-party digits."""
    if len(digits) != register.n_parties:
        raise ValidationError('one digit per party is required')
    index = int(np.ravel_multi_index(tuple(digits), register.dims))
    vector = np.zeros(register.total_dim, dtype=np.complex128)
    vector[index] = 1.0
    return PureState(register, vector)


def pauli_basis(label: str) -> Array:
    """Eigenbasis of a Pauli operator, +1 eigenvector first."""
    label = label.upper()
    if label == 'X':
        return HADAMARD.copy()
    if label == 'Y':
        return np.array([[1, 1], [1j, -1j]], dtype=np.complex128) / np.sqrt(2)
    if label == 'Z':
        return IDENTITY2.copy()
    raise ValidationError(f"unknown Pauli basis: '{label}'")


def random_pure_state(register: Register, rng: np.random.Generator) -> PureState:
    vector = rng.normal(size=register.total_dim) + 1j * rng.normal(size=register.total_dim)
    return PureState.from_vector(register, vector)


def random_mixed_state(register: Register, rng: np.random.Generator, rank: Optional[int] = None) -> MixedState:
    dim = register.total_dim
    rank = dim if rank is None else rank
    ginibre = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    return MixedState.from_matrix(register, ginibre @ ginibre.conj().T)


def random_unitary(dim: int, rng: np.random.Generator) -> Array:
    ginibre = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(ginibre)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _apply_to_axis(data: Array, operator: Array, axis: int) -> Array:
    moved = np.moveaxis(data, axis, 0)
    shape = moved.shape
    image = operator @ moved.reshape(shape[0], -1)
    return np.moveaxis(image.reshape(shape), 0, axis)


def local_map(state: State, operators: dict[int, npt.ArrayLike]) -> Array:
    """Unnormalized image of ``state`` under a product of local operators.

    Parameters
    ----------
    state : PureState | MixedState
        Input state.
    operators : dict[int, array_like]
        Operator per party; parties not listed are left untouched.

    Returns
    -------
    numpy.ndarray
        ``(K_1 x ... x K_N) psi`` for pure states, ``K rho K^dagger`` for mixed ones.
    """
    register = state.register
    dims = register.dims
    n = register.n_parties
    checked = {}
    for party, operator in operators.items():
        register.check_party(party)
        matrix = np.array(operator, dtype=np.complex128)
        if matrix.shape != (dims[party], dims[party]):
            raise ValidationError(f'operator for party {party} must be {dims[party]}x{dims[party]}')
        checked[party] = matrix
    if isinstance(state, PureState):
        data = state.amplitudes.reshape(dims)
        for party, matrix in checked.items():
            data = _apply_to_axis(data, matrix, party)
        return data.ravel()
    data = state.matrix.reshape(dims + dims)
    for party, matrix in checked.items():
        data = _apply_to_axis(data, matrix, party)
        data = _apply_to_axis(data, matrix.conj(), n + party)
    return data.reshape(register.total_dim, register.total_dim)


def apply_local(state: State, unitaries: dict[int, npt.ArrayLike]) -> State:
    """Applies local unitaries and returns a state of the same kind."""
    image = local_map(state, unitaries)
    if isinstance(state, PureState):
        return PureState.from_vector(state.register, image)
    return MixedState.from_matrix(state.register, image)
