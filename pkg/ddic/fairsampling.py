"""Lossy detection, weak fair sampling and the filter it induces.

A lossy measurement has a no-click element ``E_0``. When ``E_0`` is the same
for every setting, the click elements factor as ``E_a|x = K Ebar_a|x K`` with
``K = sqrt(I - E_0)``, so post-selecting on clicks equals measuring the ideal
``Ebar`` on the locally filtered state ``(x K) rho (x K)^dagger``.
"""
import itertools
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from ddic.qcore import CONSERVATION_TOL, CONSTRUCTION_TOL, Array, MixedState, State, local_map, random_unitary
from ddic.utils.errors import FairSamplingViolation, NumericalError, ValidationError

logger = logging.getLogger(__name__)

FAIR_SAMPLING_TOL = 1e-9
SUPPORT_TOL = 1e-12
MIN_SUCCESS = 1e-12


def _hermitian(matrix: npt.ArrayLike) -> Array:
    array = np.array(matrix, dtype=np.complex128)
    return 0.5 * (array + array.conj().T)


@dataclass(frozen=True, eq=False)
class Povm:
    """Single-party measurement with one POVM per setting.

    Attributes
    ----------
    elements : tuple[tuple[numpy.ndarray, ...], ...]
        ``elements[x][a]`` is the effect of outcome ``a`` under setting ``x``.
        With ``has_no_click`` the last effect of every setting is the no-click
        element.
    has_no_click : bool
        Whether the last outcome is the no-click event.
    support : Optional[numpy.ndarray]
        Projector the effects sum to; identity when omitted.
    """

    elements: tuple[tuple[Array, ...], ...]
    has_no_click: bool = True
    support: Optional[Array] = None

    def __post_init__(self) -> None:
        if not self.elements or not all(self.elements):
            raise ValidationError('a POVM needs at least one setting with at least one outcome')
        elements = tuple(tuple(_hermitian(e) for e in setting) for setting in self.elements)
        dim = elements[0][0].shape[0]
        target = np.eye(dim) if self.support is None else _hermitian(self.support)
        for x, setting in enumerate(elements):
            for a, effect in enumerate(setting):
                if effect.shape != (dim, dim):
                    raise ValidationError(f'effect ({x}, {a}) has shape {effect.shape}, expected {(dim, dim)}')
                if np.linalg.eigvalsh(effect)[0] < -CONSTRUCTION_TOL:
                    raise ValidationError(f'effect ({x}, {a}) is not positive semidefinite')
            if np.max(np.abs(sum(setting) - target)) > CONSERVATION_TOL:
                raise ValidationError(f'effects of setting {x} do not sum to the identity')
            if self.has_no_click and len(setting) < 2:
                raise ValidationError('a lossy setting needs a click outcome besides the no-click one')
        object.__setattr__(self, 'elements', elements)
        if self.support is not None:
            object.__setattr__(self, 'support', target)

    @property
    def dim(self) -> int:
        return self.elements[0][0].shape[0]

    @property
    def n_settings(self) -> int:
        return len(self.elements)

    def click_elements(self, setting: int) -> tuple[Array, ...]:
        effects = self.elements[setting]
        return effects[:-1] if self.has_no_click else effects

    def no_click(self, setting: int) -> Array:
        if not self.has_no_click:
            return np.zeros((self.dim, self.dim), dtype=np.complex128)
        return self.elements[setting][-1]


@dataclass(frozen=True)
class FairSamplingCheck:
    holds: bool
    deviation: float


def check_weak_fair_sampling(povm: Povm) -> FairSamplingCheck:
    """Largest spectral-norm distance between no-click elements of different settings."""
    deviation = 0.0
    for x, y in itertools.combinations(range(povm.n_settings), 2):
        deviation = max(deviation, float(np.linalg.norm(povm.no_click(x) - povm.no_click(y), 2)))
    return FairSamplingCheck(deviation <= FAIR_SAMPLING_TOL, deviation)


@dataclass(frozen=True, eq=False)
class FilterDecomposition:
    """Filter and ideal measurement behind a weakly fair-sampling POVM.

    Attributes
    ----------
    filter : numpy.ndarray
        ``K = sqrt(I - E_0)``.
    ideal : Povm
        Click-conditioned measurement ``Ebar_a|x = K^+ E_a|x K^+``, complete on
        the support of ``K``.
    excluded : numpy.ndarray
        Orthonormal columns spanning the directions that never click.
    """

    filter: Array
    ideal: Povm
    excluded: Array


def filter_decomposition(povm: Povm) -> FilterDecomposition:
    """Factors ``povm`` into a local filter and an ideal measurement.

    Raises
    ------
    FairSamplingViolation
        When the no-click element depends on the setting.
    ValidationError
        When no direction ever clicks.
    """
    check = check_weak_fair_sampling(povm)
    if not check.holds:
        raise FairSamplingViolation(f'no-click element depends on the setting (deviation {check.deviation:.3e})')
    values, vectors = np.linalg.eigh(np.eye(povm.dim) - povm.no_click(0))
    values = np.clip(values, 0.0, 1.0)
    supported = values > SUPPORT_TOL
    if not np.any(supported):
        raise ValidationError('the detector never clicks')
    roots = np.sqrt(values)
    k = (vectors * roots) @ vectors.conj().T
    inverse_roots = np.where(supported, 1.0 / np.where(supported, roots, 1.0), 0.0)
    k_plus = (vectors * inverse_roots) @ vectors.conj().T
    projector = vectors[:, supported] @ vectors[:, supported].conj().T
    ideal = Povm(
        tuple(tuple(_hermitian(k_plus @ e @ k_plus) for e in povm.click_elements(x)) for x in range(povm.n_settings)),
        has_no_click=False,
        support=projector,
    )
    if np.any(~supported):
        logger.info('%d direction(s) of the detector never click and are excluded', int(np.sum(~supported)))
    return FilterDecomposition(k, ideal, vectors[:, ~supported])


@dataclass(frozen=True, eq=False)
class FilteredState:
    state: MixedState
    success_probability: float


def filtered_state(rho: State, filters: Sequence[npt.ArrayLike]) -> FilteredState:
    """Normalized ``(x K_i) rho (x K_i)^dagger`` and the probability the filter passes.

    Raises
    ------
    NumericalError
        When the filter passes with probability below ``MIN_SUCCESS``.
    """
    register = rho.register
    if len(filters) != register.n_parties:
        raise ValidationError(f'{len(filters)} filters for {register.n_parties} parties')
    operators = {}
    for party, operator in enumerate(filters):
        k = np.array(operator, dtype=np.complex128)
        if k.shape != (register.dims[party], register.dims[party]):
            raise ValidationError(f'filter of party {party} has shape {k.shape}')
        if np.linalg.eigvalsh(k.conj().T @ k)[-1] > 1.0 + CONSERVATION_TOL:
            raise ValidationError(f'filter of party {party} is not a contraction')
        operators[party] = k
    image = local_map(rho.to_mixed(), operators)
    success = float(np.trace(image).real)
    if success < MIN_SUCCESS:
        raise NumericalError(f'filter success probability {success:.3e} is too small')
    return FilteredState(MixedState.from_matrix(register, image), success)


@dataclass(frozen=True)
class EquivalenceReport:
    """Comparison of post-selected lossy statistics with ideal statistics on the filtered state.

    Attributes
    ----------
    max_deviation : float
        Largest absolute difference over all settings and click outcomes.
    holds : bool
        Whether the deviation is within ``CONSERVATION_TOL``.
    success_probability : float
        Probability that the filter passes.
    """

    max_deviation: float
    holds: bool
    success_probability: float


def _joint_probability(rho: MixedState, effects: Sequence[Array]) -> float:
    operator = effects[0]
    for effect in effects[1:]:
        operator = np.kron(operator, effect)
    return float(np.einsum('ij,ji->', operator, rho.matrix).real)


def postselection_equivalence(rho: State, povms: Sequence[Povm]) -> EquivalenceReport:
    """Checks that click-conditioned lossy statistics match the ideal ones on the filtered state.

    Raises
    ------
    FairSamplingViolation
        When some party's no-click element depends on its setting.
    """
    register = rho.register
    if len(povms) != register.n_parties:
        raise ValidationError(f'{len(povms)} POVMs for {register.n_parties} parties')
    for party, povm in enumerate(povms):
        if povm.dim != register.dims[party]:
            raise ValidationError(f'POVM of party {party} acts on dimension {povm.dim}')
        check = check_weak_fair_sampling(povm)
        if not check.holds:
            raise FairSamplingViolation(f'party {party} violates weak fair sampling (deviation {check.deviation:.3e})')
    decompositions = [filter_decomposition(p) for p in povms]
    filtered = filtered_state(rho, [d.filter for d in decompositions])
    lossy = rho.to_mixed()
    deviation = 0.0
    for settings in itertools.product(*(range(p.n_settings) for p in povms)):
        click_probability = _joint_probability(lossy, [np.eye(p.dim) - p.no_click(x) for p, x in zip(povms, settings)])
        if click_probability < MIN_SUCCESS:
            raise NumericalError(f'settings {settings} never produce a coincidence')
        outcome_ranges = [range(len(p.click_elements(x))) for p, x in zip(povms, settings)]
        for outcomes in itertools.product(*outcome_ranges):
            conditioned = _joint_probability(
                lossy, [p.click_elements(x)[a] for p, x, a in zip(povms, settings, outcomes)]) / click_probability
            ideal = _joint_probability(
                filtered.state,
                [d.ideal.elements[x][a] for d, x, a in zip(decompositions, settings, outcomes)])
            deviation = max(deviation, abs(conditioned - ideal))
    return EquivalenceReport(deviation, deviation <= CONSERVATION_TOL, filtered.success_probability)


def projective_povm(bases: Sequence[npt.ArrayLike]) -> Povm:
    """Lossless measurement; each basis is a matrix whose columns are the outcome vectors."""
    settings = []
    for basis in bases:
        matrix = np.array(basis, dtype=np.complex128)
        settings.append(tuple(np.outer(matrix[:, a], matrix[:, a].conj()) for a in range(matrix.shape[1])))
    return Povm(tuple(settings), has_no_click=False)


def uniform_loss_povm(bases: Sequence[npt.ArrayLike], efficiency: float) -> Povm:
    """Every outcome detected with the same efficiency ``eta``; ``E_0 = (1 - eta) I``."""
    return detector_povm(bases, [efficiency] * np.array(bases[0]).shape[0])


def detector_povm(bases: Sequence[npt.ArrayLike], efficiencies: Sequence[float],
                  transmission: Optional[Sequence[float]] = None) -> Povm:
    """Detector per outcome port behind a diagonal transmission filter.

    Parameters
    ----------
    bases : Sequence[array_like]
        Analyzer basis per setting, outcome vectors as columns.
    efficiencies : Sequence[float]
        Detection efficiency of each outcome port. Unequal values make the
        no-click element depend on the setting.
    transmission : Optional[Sequence[float]]
        Intensity transmission per computational level before the analyzer,
        all ones when omitted.

    Returns
    -------
    Povm
        ``E_a|x = eta_a F |b_a><b_a| F`` plus the no-click remainder, with
        ``F = diag(sqrt(t))``.
    """
    dim = np.array(bases[0]).shape[0]
    etas = np.asarray(efficiencies, dtype=float)
    if etas.shape != (dim,) or np.any(etas < 0) or np.any(etas > 1):
        raise ValidationError('one efficiency in [0, 1] per outcome port is required')
    t = np.ones(dim) if transmission is None else np.asarray(transmission, dtype=float)
    if t.shape != (dim,) or np.any(t < 0) or np.any(t > 1):
        raise ValidationError('one transmission in [0, 1] per level is required')
    f = np.diag(np.sqrt(t)).astype(np.complex128)
    settings = []
    for basis in bases:
        matrix = np.array(basis, dtype=np.complex128)
        if matrix.shape != (dim, dim):
            raise ValidationError('all analyzer bases must have the same dimension')
        clicks = [etas[a] * f @ np.outer(matrix[:, a], matrix[:, a].conj()) @ f for a in range(dim)]
        settings.append(tuple(clicks) + (np.eye(dim) - sum(clicks),))
    return Povm(tuple(settings))


def random_fair_sampling_povm(dim: int, n_settings: int, rng: np.random.Generator,
                              max_loss: float = 0.9) -> Povm:
    """Random lossy projective measurements sharing one no-click element."""
    losses = rng.uniform(0.0, max_loss, size=dim)
    frame = random_unitary(dim, rng)
    no_click = (frame * losses) @ frame.conj().T
    values, vectors = np.linalg.eigh(np.eye(dim) - no_click)
    k = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.conj().T
    settings = []
    for _ in range(n_settings):
        basis = random_unitary(dim, rng)
        clicks = tuple(k @ np.outer(basis[:, a], basis[:, a].conj()) @ k for a in range(dim))
        settings.append(clicks + (no_click,))
    return Povm(tuple(settings))


def bases_from_observables(observables: Sequence[npt.ArrayLike]) -> list[Array]:
    """Eigenbases of two-outcome observables, ``+1`` eigenvector first."""
    bases = []
    for observable in observables:
        _, vectors = np.linalg.eigh(_hermitian(observable))
        bases.append(vectors[:, ::-1])
    return bases
