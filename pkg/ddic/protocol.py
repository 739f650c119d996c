"""Dissociated certification: per-edge branch preparation, scoring and the GME verdict.

For every edge of a covering the remaining parties are measured, leaving the
edge in one pair state per joint outcome (a branch). Each branch is scored with
a two-party Bell inequality, the probability-weighted mean over branches gives
the edge value, and the mean over edges is compared with the covering's
biseparable bound.
"""
import dataclasses
import itertools
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from tqdm.auto import tqdm

from ddic.bell import (
    BellInequality,
    LocalBoundReport,
    ObservablePair,
    Relabel,
    classical_relabel,
    default_observables,
    deterministic_observables,
    is_two_qubit,
    label_controlled,
    local_bound_report,
    optimal_score,
    score,
)
from ddic.covering import Covering, biseparable_bound, normalize_edge
from ddic.qcore import (
    CONSERVATION_TOL,
    MixedState,
    Observable,
    PureState,
    State,
    expectation,
    measure_party,
    partial_trace,
    pauli_basis,
    schmidt_decomposition,
    tensor,
)
from ddic.states import BiseparableModel, cluster_alignment, white_noise
from ddic.utils.counts import NO_BRANCH, CountCell, CountTable, branch_parity, format_edge, sample_cell_counts
from ddic.utils.errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

Edge = tuple[int, int]

VERDICT_SLACK = 1e-10
MODES = ('ghz-x', 'tilted-x', 'cluster-pauli', 'auto')
PARITY_MODES = ('ghz-x', 'tilted-x')
RULES = ('parity', 'frame', 'optimal')
SCORINGS = ('default', 'optimal', 'deterministic', 'counts')
MAX_AUTO_PARTIES = 8
OUTCOME_SYMBOLS = ('+', '-')

GME_CAVEAT = ('The GME-weight bound refers to the state that was actually measured. '
              'When counts are post-selected on detection under weak fair sampling, '
              'that is the locally filtered state, not the source state.')


@dataclass(frozen=True)
class EdgePlan:
    """What to measure before testing one edge.

    Attributes
    ----------
    edge : tuple[int, int]
        Tested pair ``(i, j)`` with ``i < j``; ``i`` plays side A.
    measured : tuple[int, ...]
        Parties measured to prepare the pair, ascending.
    bases : tuple[str, ...]
        Pauli basis label per measured party.
    rule : str
        How branch observables are chosen: ``'parity'`` relabelling,
        ``'frame'`` from the branch's Schmidt bases or ``'optimal'`` search.
    """

    edge: Edge
    measured: tuple[int, ...]
    bases: tuple[str, ...]
    rule: str

    def __post_init__(self) -> None:
        if len(self.measured) != len(self.bases):
            raise ValidationError('one basis per measured party is required')
        if len(set(self.measured)) != len(self.measured) or set(self.measured) & set(self.edge):
            raise ValidationError(f'invalid measured parties {self.measured} for edge {self.edge}')
        if self.rule not in RULES:
            raise ValidationError(f"unknown relabel rule '{self.rule}'")
        for label in self.bases:
            if label not in ('X', 'Y', 'Z'):
                raise ValidationError(f"unknown Pauli basis '{label}'")
        order = sorted(range(len(self.measured)), key=lambda k: self.measured[k])
        object.__setattr__(self, 'measured', tuple(self.measured[k] for k in order))
        object.__setattr__(self, 'bases', tuple(self.bases[k] for k in order))

    def to_dict(self) -> dict:
        return {'measured': [p + 1 for p in self.measured], 'bases': ''.join(self.bases), 'rule': self.rule}


@dataclass(frozen=True)
class MeasurementStrategy:
    """Per-edge measurement plans.

    Attributes
    ----------
    mode : str
        ``'ghz-x'`` and ``'tilted-x'`` measure every other party in X and
        relabel by outcome parity. ``'cluster-pauli'`` measures the graph
        neighbours of a graph edge in Z (X on Hadamard-aligned parties) and
        traces out the rest. ``'auto'`` tries every Pauli assignment on the
        other parties and keeps the best.
    graph_edges : tuple[tuple[int, int], ...]
        Graph of the state for ``'cluster-pauli'``.
    aligned : tuple[int, ...]
        Parties whose graph-state frame is Hadamard-rotated.
    optimize_branches : bool
        Score every branch with its optimal observables.
    max_auto_parties : int
        Largest party count for which ``'auto'`` enumerates Pauli assignments.
    """

    mode: str = 'auto'
    graph_edges: tuple[Edge, ...] = ()
    aligned: tuple[int, ...] = ()
    optimize_branches: bool = False
    max_auto_parties: int = MAX_AUTO_PARTIES

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValidationError(f"unknown measurement mode '{self.mode}', expected one of {MODES}")
        edges = tuple(sorted((min(e), max(e)) for e in self.graph_edges))
        object.__setattr__(self, 'graph_edges', edges)
        object.__setattr__(self, 'aligned', tuple(sorted(self.aligned)))

    @classmethod
    def linear_cluster(cls, n: int, **kwargs) -> 'MeasurementStrategy':
        """Cluster strategy matching ``states.linear_cluster(n)``."""
        return cls('cluster-pauli', tuple((i, i + 1) for i in range(n - 1)), cluster_alignment(n), **kwargs)

    def _check_parties(self, n_parties: int) -> None:
        referenced = {p for e in self.graph_edges for p in e} | set(self.aligned)
        outside = sorted(p for p in referenced if not 0 <= p < n_parties)
        if outside:
            raise ValidationError(f'strategy references parties {outside} missing from a {n_parties}-party state')

    def plans(self, edge: Sequence[int], n_parties: int) -> list[EdgePlan]:
        """Candidate plans for ``edge``; a single one unless the edge is handled by search."""
        edge = normalize_edge(edge, n_parties)
        self._check_parties(n_parties)
        others = tuple(p for p in range(n_parties) if p not in edge)
        if self.mode in PARITY_MODES:
            return [EdgePlan(edge, others, ('X',) * len(others), 'optimal' if self.optimize_branches else 'parity')]
        if self.mode == 'cluster-pauli' and edge in self.graph_edges:
            neighbours = sorted({p for e in self.graph_edges if set(e) & set(edge) for p in e} - set(edge))
            bases = tuple('X' if p in self.aligned else 'Z' for p in neighbours)
            return [EdgePlan(edge, tuple(neighbours), bases, 'optimal' if self.optimize_branches else 'frame')]
        if n_parties > self.max_auto_parties:
            raise ValidationError(f'automatic plan search is limited to {self.max_auto_parties} parties')
        return [EdgePlan(edge, others, bases, 'optimal') for bases in itertools.product('XYZ', repeat=len(others))]


@dataclass(frozen=True, eq=False)
class Branch:
    """One preparation branch of an edge.

    Attributes
    ----------
    edge : tuple[int, int]
        Tested pair.
    parties : tuple[int, ...]
        Measured parties.
    outcomes : tuple[str, ...]
        ``'+'`` or ``'-'`` per measured party.
    probability : float
        Branch probability.
    pair_state : Optional[PureState | MixedState]
        Conditional state of the edge, ``None`` when the branch never occurs
        or only counts are known.
    relabel : Optional[Relabel]
        Adjustment of the default observables.
    scoring : str
        ``'default'``, ``'optimal'``, ``'deterministic'`` or ``'counts'``.
    component : Optional[int]
        Model component the branch stems from.
    """

    edge: Edge
    parties: tuple[int, ...]
    outcomes: tuple[str, ...]
    probability: float
    pair_state: Optional[State]
    relabel: Optional[Relabel] = None
    scoring: str = 'default'
    component: Optional[int] = None

    def __post_init__(self) -> None:
        if self.scoring not in SCORINGS:
            raise ValidationError(f"unknown branch scoring '{self.scoring}'")

    @property
    def label(self) -> str:
        return ''.join(self.outcomes) or NO_BRANCH

    @property
    def vanished(self) -> bool:
        return self.pair_state is None and self.scoring != 'counts'


@dataclass(frozen=True, eq=False)
class EdgeResult:
    """Score of one edge.

    Attributes
    ----------
    edge : tuple[int, int]
        Tested pair.
    branches : tuple[Branch, ...]
        All branches, vanished ones included.
    branch_scores : tuple[float, ...]
        Score per branch, 0 for vanished branches.
    beta_e : float
        Probability-weighted mean of the branch scores.
    stderr : Optional[float]
        Statistical error when computed from counts.
    plan : Optional[EdgePlan]
        Plan that produced the branches.
    """

    edge: Edge
    branches: tuple[Branch, ...]
    branch_scores: tuple[float, ...]
    beta_e: float
    stderr: Optional[float] = None
    plan: Optional[EdgePlan] = None

    def to_dict(self) -> dict:
        result = {
            'edge': format_edge(self.edge),
            'beta_e': self.beta_e,
            'stderr': self.stderr,
            'branches': [
                {'label': b.label, 'probability': b.probability, 'score': s,
                 **({'component': b.component} if b.component is not None else {})}
                for b, s in zip(self.branches, self.branch_scores)
            ],
        }
        if self.plan is not None:
            result['plan'] = self.plan.to_dict()
        return result


@dataclass(frozen=True)
class GmeWeight:
    """Lower bound on the GME weight and the unclamped ratio it comes from."""

    value: float
    raw: float


def gme_weight(beta_bar: float, bound: float, beta_quantum: float) -> GmeWeight:
    """``(beta_bar - bound) / (beta_quantum - bound)`` clamped to ``[0, 1]``."""
    if not beta_quantum > bound:
        raise ValidationError(f'quantum bound {beta_quantum} must exceed the biseparable bound {bound}')
    raw = (beta_bar - bound) / (beta_quantum - bound)
    return GmeWeight(float(min(1.0, max(0.0, raw))), float(raw))


@dataclass(frozen=True, eq=False)
class Certificate:
    """Verdict of one protocol run.

    Attributes
    ----------
    covering : Covering
        Tested covering.
    inequality : BellInequality
        Inequality used on every edge.
    edge_results : tuple[EdgeResult, ...]
        One result per covering edge, in covering order.
    beta_bar : float
        Mean edge score.
    bound : float
        Biseparable bound of the covering.
    gme : bool
        Whether ``beta_bar`` exceeds ``bound`` by more than ``VERDICT_SLACK``.
    p_gme : float
        Clamped lower bound on the GME weight.
    p_gme_raw : float
        Unclamped ratio.
    beta_bar_stderr, p_gme_stderr : Optional[float]
        Statistical errors for count-based runs.
    local_bound : Optional[LocalBoundReport]
        Configured and computed local bounds of the inequality.
    """

    covering: Covering
    inequality: BellInequality
    edge_results: tuple[EdgeResult, ...]
    beta_bar: float
    bound: float
    gme: bool
    p_gme: float
    p_gme_raw: float
    beta_bar_stderr: Optional[float] = None
    p_gme_stderr: Optional[float] = None
    local_bound: Optional[LocalBoundReport] = None
    caveat: str = GME_CAVEAT

    def to_dict(self) -> dict:
        ineq = self.inequality
        return {
            'inequality': {
                'name': ineq.name,
                'theta_deg': None if ineq.theta is None else float(np.degrees(ineq.theta)),
                'beta_local': ineq.beta_local,
                'beta_quantum': ineq.beta_quantum,
            },
            'local_bound': None if self.local_bound is None else self.local_bound.to_dict(),
            'covering': {
                'name': self.covering.name,
                'n_parties': self.covering.n_parties,
                'edges': [format_edge(e) for e in self.covering.edges],
            },
            'edges': [r.to_dict() for r in self.edge_results],
            'beta_bar': self.beta_bar,
            'beta_bar_stderr': self.beta_bar_stderr,
            'bound': self.bound,
            'gme': self.gme,
            'p_gme': self.p_gme,
            'p_gme_raw': self.p_gme_raw,
            'p_gme_stderr': self.p_gme_stderr,
            'caveat': self.caveat,
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def _schmidt_frame(pair: State) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pair, MixedState):
        values, vectors = np.linalg.eigh(pair.matrix)
        pair = PureState.from_vector(pair.register, vectors[:, -1])
        if values[-1] < 1 - 1e-6:
            logger.debug('frame taken from the leading eigenvector of a mixed branch (weight %.4f)', values[-1])
    _, u, v = schmidt_decomposition(pair)
    return u, v


def prepare_branches(state: State, edge: Sequence[int], strategy: MeasurementStrategy,
                     plan: Optional[EdgePlan] = None) -> list[Branch]:
    """Measures the plan's parties and returns the edge's branches.

    Parameters
    ----------
    state : PureState | MixedState
        Multiqubit state.
    edge : Sequence[int]
        Tested pair.
    strategy : MeasurementStrategy
        Source of the plan when ``plan`` is omitted.
    plan : Optional[EdgePlan]
        Explicit plan, required when the strategy offers several.

    Returns
    -------
    list[Branch]
        One branch per joint outcome, ordered lexicographically with ``+``
        first; probabilities sum to 1.
    """
    n = state.register.n_parties
    edge = normalize_edge(edge, n)
    if plan is None:
        plans = strategy.plans(edge, n)
        if len(plans) != 1:
            raise ValidationError(f'{len(plans)} candidate plans for edge {format_edge(edge)}; pass one explicitly')
        plan = plans[0]
    if plan.edge != edge:
        raise ValidationError(f'plan for edge {plan.edge} used on edge {edge}')
    if any(not 0 <= p < n for p in plan.measured):
        raise ValidationError(f'plan measures parties outside the {n}-party state')
    keep = sorted(set(edge) | set(plan.measured))
    partial: list[tuple[tuple[str, ...], float, Optional[State]]] = [((), 1.0, partial_trace(state, keep))]
    for party, basis_label in sorted(zip(plan.measured, plan.bases), reverse=True):
        position = keep.index(party)
        basis = pauli_basis(basis_label)
        expanded = []
        for outcomes, probability, current in partial:
            if current is None:
                expanded.extend(((symbol,) + outcomes, 0.0, None) for symbol in OUTCOME_SYMBOLS)
                continue
            for raw in measure_party(current, position, basis):
                expanded.append(((OUTCOME_SYMBOLS[raw.outcome_index],) + outcomes,
                                 probability * raw.probability, raw.post_state))
        partial = expanded
    partial.sort(key=lambda item: item[0])

    branches = []
    for outcomes, probability, pair in partial:
        relabel: Optional[Relabel] = None
        scoring = 'optimal' if plan.rule == 'optimal' else 'default'
        if pair is not None and plan.rule == 'parity':
            relabel = Relabel(parity=outcomes.count('-'))
        elif pair is not None and plan.rule == 'frame':
            relabel = Relabel(frame=_schmidt_frame(pair))
        branches.append(Branch(edge, plan.measured, outcomes, probability, pair, relabel, scoring))
    total = sum(b.probability for b in branches)
    if abs(total - 1.0) > CONSERVATION_TOL:
        raise NumericalError(f'branch probabilities of edge {format_edge(edge)} sum to {total!r}')
    return branches


def _branch_score(branch: Branch, ineq: BellInequality, optimize: bool, rng: Optional[np.random.Generator]) -> float:
    pair = branch.pair_state
    assert pair is not None
    if branch.scoring == 'deterministic':
        return score(ineq, pair, deterministic_observables(ineq, pair.register.dims))
    if optimize or branch.scoring == 'optimal' or branch.relabel is None:
        if not is_two_qubit(pair):
            raise ValidationError('optimal branch scoring needs two-qubit pair states')
        return optimal_score(ineq, pair, rng)
    return score(ineq, pair, default_observables(ineq, branch.relabel))


def edge_score(branches: Sequence[Branch], ineq: BellInequality, strategy: Optional[MeasurementStrategy] = None,
               plan: Optional[EdgePlan] = None, rng: Optional[np.random.Generator] = None) -> EdgeResult:
    """Probability-weighted mean branch score.

    Branches are scored with the default observables under their relabelling;
    ``'auto'`` strategies and ``optimize_branches`` switch to optimal scoring.
    """
    if not branches:
        raise ValidationError('an edge needs at least one branch')
    edges = {b.edge for b in branches}
    if len(edges) != 1:
        raise ValidationError('branches of different edges cannot be scored together')
    optimize = strategy is not None and (strategy.mode == 'auto' or strategy.optimize_branches)
    scores = tuple(0.0 if b.vanished else _branch_score(b, ineq, optimize, rng) for b in branches)
    beta_e = float(sum(b.probability * s for b, s in zip(branches, scores)))
    return EdgeResult(edges.pop(), tuple(branches), scores, beta_e, plan=plan)


def best_edge_result(state: State, edge: Sequence[int], ineq: BellInequality, strategy: MeasurementStrategy,
                     rng: Optional[np.random.Generator] = None) -> EdgeResult:
    """Edge result of the strategy's best plan."""
    best: Optional[EdgeResult] = None
    for plan in strategy.plans(edge, state.register.n_parties):
        result = edge_score(prepare_branches(state, edge, strategy, plan), ineq, strategy, plan, rng)
        if best is None or result.beta_e > best.beta_e + 1e-12:
            best = result
    assert best is not None
    logger.debug('edge %s: beta_e = %.6f', format_edge(best.edge), best.beta_e)
    return best


def _component_strategy(strategy: MeasurementStrategy) -> MeasurementStrategy:
    if strategy.mode == 'cluster-pauli':
        return MeasurementStrategy('auto', max_auto_parties=strategy.max_auto_parties)
    return strategy


def model_edge_result(model: BiseparableModel, edge: Sequence[int], ineq: BellInequality,
                      strategy: MeasurementStrategy, rng: Optional[np.random.Generator] = None) -> EdgeResult:
    """Edge result of a biseparable model, evaluated component by component.

    The verifier knows the component label: edges a component cuts are tested
    with the best deterministic strategy, uncut edges with the strategy applied
    to the factor holding both ends.
    """
    edge = normalize_edge(edge, model.n_parties)
    i, j = edge
    branches: list[Branch] = []
    for k, component in enumerate(model.components):
        if component.bipartition.cuts(edge):
            factor_i, group_i = component.factor_of(i)
            factor_j, group_j = component.factor_of(j)
            pair = tensor(partial_trace(factor_i, [group_i.index(i)]), partial_trace(factor_j, [group_j.index(j)]))
            assert not isinstance(pair, Observable)
            branches.append(Branch(edge, (), (), component.weight, pair, scoring='deterministic', component=k))
            continue
        factor, group = component.factor_of(i)
        local = best_edge_result(factor, (group.index(i), group.index(j)), ineq, _component_strategy(strategy), rng)
        for branch in local.branches:
            branches.append(dataclasses.replace(
                branch,
                edge=edge,
                parties=tuple(group[p] for p in branch.parties),
                probability=component.weight * branch.probability,
                component=k,
            ))
    return edge_score(branches, ineq, strategy, rng=rng)


def label_controlled_score(model: BiseparableModel, edge: Sequence[int], ineq: BellInequality) -> float:
    """Score of the model's dense state with label-controlled observables.

    The block for label ``l`` is taken from the first component carrying it:
    the default observables in the factor's Schmidt frame when the component
    holds the edge as a pair, deterministic ones when it cuts the edge.
    """
    if model.label_dim is None:
        raise ValidationError('label-controlled scoring needs a labelled model')
    edge = normalize_edge(edge, model.n_parties)
    i, j = edge
    deterministic = deterministic_observables(ineq)
    blocks: list[ObservablePair] = [deterministic] * model.label_dim
    assigned: set[int] = set()
    for component in model.components:
        label = component.label
        assert label is not None
        if label in assigned:
            continue
        assigned.add(label)
        if component.bipartition.cuts(edge):
            continue
        factor, group = component.factor_of(i)
        if sorted(group) != [i, j] or not isinstance(factor, PureState):
            raise ValidationError(f'component {label} needs measurements beyond the edge {format_edge(edge)}')
        blocks[label] = default_observables(ineq, Relabel(frame=_schmidt_frame(factor)))
    pair = partial_trace(model.to_mixed_state(), edge)
    return score(ineq, pair, label_controlled(blocks))


def certify(covering: Covering, ineq: BellInequality, edge_results: Sequence[EdgeResult]) -> Certificate:
    """Aggregates edge results into a certificate."""
    if [r.edge for r in edge_results] != list(covering.edges):
        raise ValidationError('edge results do not match the covering')
    beta_bar = float(np.mean([r.beta_e for r in edge_results]))
    bound = biseparable_bound(covering, ineq)
    weight = gme_weight(beta_bar, bound, ineq.beta_quantum)
    beta_bar_stderr = p_gme_stderr = None
    if all(r.stderr is not None for r in edge_results):
        beta_bar_stderr = float(np.sqrt(sum(r.stderr ** 2 for r in edge_results)) / len(edge_results))  # type: ignore
        p_gme_stderr = beta_bar_stderr / (ineq.beta_quantum - bound)
    gme = beta_bar > bound + VERDICT_SLACK
    logger.info('beta_bar = %.6f, bound = %.6f, gme = %s', beta_bar, bound, gme)
    return Certificate(covering, ineq, tuple(edge_results), beta_bar, bound, gme, weight.value, weight.raw,
                       beta_bar_stderr, p_gme_stderr, local_bound_report(ineq))


def run_ddic(target: Union[State, BiseparableModel], covering: Covering, ineq: BellInequality,
             strategy: MeasurementStrategy, rng: Optional[np.random.Generator] = None,
             progress: bool = False) -> Certificate:
    """Runs the protocol on every covering edge.

    Parameters
    ----------
    target : PureState | MixedState | BiseparableModel
        State, or explicit biseparable model evaluated component by component.
    covering : Covering
        Edges to test; must span the same parties as ``target``.
    ineq : BellInequality
        Inequality tested on every edge.
    strategy : MeasurementStrategy
        Branch preparation.
    rng : Optional[numpy.random.Generator]
        Randomness for numerical branch optimization.
    progress : bool
        Show a progress bar over the edges.

    Returns
    -------
    Certificate
        Edge results, mean score, bound, verdict and GME weight.
    """
    n = target.n_parties if isinstance(target, BiseparableModel) else target.register.n_parties
    if n != covering.n_parties:
        raise ValidationError(f'covering spans {covering.n_parties} parties, state has {n}')
    results = []
    for edge in tqdm(covering.edges, desc='Edges', disable=not progress):
        if isinstance(target, BiseparableModel):
            results.append(model_edge_result(target, edge, ineq, strategy, rng))
        else:
            results.append(best_edge_result(target, edge, ineq, strategy, rng))
    return certify(covering, ineq, results)


@dataclass(frozen=True)
class VisibilityPoint:
    visibility: float
    beta_bar: float
    bound: float
    gme: bool


@dataclass(frozen=True)
class VisibilityResult:
    """Smallest white-noise visibility still certified as GME.

    Attributes
    ----------
    critical : float
        ``v*`` within the requested tolerance, from above.
    bound : float
        Biseparable bound used.
    sweep : tuple[VisibilityPoint, ...]
        Coarse sweep used for the monotonicity check.
    """

    critical: float
    bound: float
    sweep: tuple[VisibilityPoint, ...]


def visibility_sweep(state: State, covering: Covering, ineq: BellInequality, strategy: MeasurementStrategy,
                     points: int = 11, progress: bool = False) -> list[VisibilityPoint]:
    """Certificates on an even grid of visibilities in ``[0, 1]``."""
    if points < 2:
        raise ValidationError('a sweep needs at least two points')
    sweep = []
    for visibility in tqdm(np.linspace(0.0, 1.0, points), desc='Visibility sweep', disable=not progress):
        certificate = run_ddic(white_noise(state, float(visibility)), covering, ineq, strategy)
        sweep.append(VisibilityPoint(float(visibility), certificate.beta_bar, certificate.bound, certificate.gme))
    return sweep


def critical_visibility(state: State, covering: Covering, ineq: BellInequality, strategy: MeasurementStrategy,
                        tol: float = 1e-4, sweep_points: int = 11, progress: bool = False) -> VisibilityResult:
    """Bisects the white-noise visibility at which the verdict flips.

    Every branch is scored with its optimal observables.

    Raises
    ------
    NumericalError
        When the noiseless state is not certified.
    """
    strategy = dataclasses.replace(strategy, optimize_branches=True)

    def certified(visibility: float) -> bool:
        return run_ddic(white_noise(state, visibility), covering, ineq, strategy).gme

    sweep = visibility_sweep(state, covering, ineq, strategy, sweep_points, progress)
    if not sweep[-1].gme:
        raise NumericalError('the noiseless state is not certified; no critical visibility exists')
    for previous, current in zip(sweep, sweep[1:]):
        if current.beta_bar < previous.beta_bar - 1e-9:
            logger.warning('mean score decreases between visibilities %.2f and %.2f',
                           previous.visibility, current.visibility)
    low, high = 0.0, 1.0
    while high - low > tol:
        middle = 0.5 * (low + high)
        if certified(middle):
            high = middle
        else:
            low = middle
    return VisibilityResult(high, sweep[-1].bound, tuple(sweep))


def simulate_counts(state: State, covering: Covering, ineq: BellInequality, strategy: MeasurementStrategy,
                    shots: int, rng: np.random.Generator, progress: bool = False) -> CountTable:
    """Samples a count table as an experiment running the protocol would record it.

    Every setting pair of every edge gets ``shots`` events distributed over
    branches and outcomes. The physical settings are the default observables
    without relabelling; ingestion applies the parity relabelling.
    """
    if strategy.mode not in PARITY_MODES:
        raise ValidationError('count simulation supports the parity-relabelled modes only')
    if shots < 1:
        raise ValidationError('shots must be positive')
    settings = default_observables(ineq)
    cells: list[CountCell] = []
    for edge in tqdm(covering.edges, desc='Simulating edges', disable=not progress):
        branches = [b for b in prepare_branches(state, edge, strategy) if not b.vanished]
        for x, a_obs in enumerate(settings.a_observables):
            for y, b_obs in enumerate(settings.b_observables):
                projectors = [(np.eye(2) + s * a_obs.matrix) / 2 for s in (1, -1)]
                b_projectors = [(np.eye(2) + s * b_obs.matrix) / 2 for s in (1, -1)]
                probabilities = []
                for branch in branches:
                    assert branch.pair_state is not None
                    register = branch.pair_state.register
                    for p_a, p_b in itertools.product(projectors, b_projectors):
                        joint = expectation(branch.pair_state, Observable(register, np.kron(p_a, p_b)))
                        probabilities.append(branch.probability * joint)
                sampled = sample_cell_counts(np.array(probabilities), shots, rng).reshape(len(branches), 4)
                for branch, counts in zip(branches, sampled):
                    recorded = tuple(int(c) for c in counts) if counts.sum() > 0 else None
                    cells.append(CountCell(edge, branch.label, x, y, recorded))  # type: ignore[arg-type]
    return CountTable(tuple(cells))


def _term_from_counts(ineq: BellInequality, cells: dict[tuple[int, int], CountCell], pooled_a: dict[int, list],
                      pooled_b: dict[int, list], parity: int, where: str) -> tuple[float, float]:
    map_a, map_b = classical_relabel(ineq, parity)
    value = variance = 0.0
    for (x, y), coefficient in ineq.coefficients.items():
        if x is not None and y is not None:
            (sx, sign_x), (sy, sign_y) = map_a[x], map_b[y]
            cell = cells.get((sx, sy))
            if cell is None:
                raise ValidationError(f'{where}: counts for settings ({sx}, {sy}) are missing')
            mean, total, sign = cell.correlator, cell.total, sign_x * sign_y
        elif x is not None:
            sx, sign = map_a[x]
            if not pooled_a.get(sx):
                raise ValidationError(f'{where}: no counts for setting {sx} of side A')
            total = sum(c.total for c in pooled_a[sx])
            mean = sum(c.a_sum for c in pooled_a[sx]) / total
        else:
            assert y is not None
            sy, sign = map_b[y]
            if not pooled_b.get(sy):
                raise ValidationError(f'{where}: no counts for setting {sy} of side B')
            total = sum(c.total for c in pooled_b[sy])
            mean = sum(c.b_sum for c in pooled_b[sy]) / total
        value += coefficient * sign * mean
        variance += coefficient ** 2 * (1 - mean ** 2) / total
    return value, variance


def _usable(ineq: BellInequality, present: Sequence[CountCell], parity: int) -> bool:
    map_a, map_b = classical_relabel(ineq, parity)
    needed = {(map_a[x][0], map_b[y][0]) for x, y in ineq.coefficients if x is not None and y is not None}
    return needed <= {(c.setting_a, c.setting_b) for c in present}


def ingest_counts(table: Union[CountTable, str], ineq: BellInequality, relabel: str = 'parity',
                  n_parties: Optional[int] = None) -> Certificate:
    """Certificate from recorded coincidence counts.

    A branch lacking counts for a setting pair its correlators need is treated
    as vanished: it is dropped and the branch probabilities are estimated from
    the remaining branches of the edge.

    Parameters
    ----------
    table : CountTable | str
        Counts, or the path of a count file.
    ineq : BellInequality
        Inequality the settings refer to.
    relabel : str
        ``'parity'`` relabels branches by the parity of ``-`` outcomes in their
        label, ``'none'`` scores every branch with the raw settings.
    n_parties : Optional[int]
        Number of parties, inferred from the edges when omitted.

    Returns
    -------
    Certificate
        With standard errors propagated to ``beta_bar`` and ``p_gme``. The
        edge variance adds the binomial variance of every correlator and the
        multinomial variance of the branch frequencies, treated as independent.

    Raises
    ------
    ValidationError
        When an edge keeps no counts after dropping incomplete branches.
    """
    if relabel not in ('parity', 'none'):
        raise ValidationError(f"unknown relabel mode '{relabel}'")
    if isinstance(table, str):
        table = CountTable.from_csv(table)
    for cell in table.cells:
        if not (0 <= cell.setting_a < ineq.settings_a and 0 <= cell.setting_b < ineq.settings_b):
            raise ValidationError(f'edge {format_edge(cell.edge)}: setting pair '
                                  f'({cell.setting_a}, {cell.setting_b}) outside the inequality')
    covering = Covering(n_parties or table.n_parties, tuple(table.edges))
    results = []
    for edge in covering.edges:
        usable: dict[str, list[CountCell]] = {}
        for label in sorted({c.branch for c in table.for_edge(edge)}):
            present = [c for c in table.for_edge(edge) if c.branch == label and not c.missing]
            parity = branch_parity(label) if relabel == 'parity' else 0
            if _usable(ineq, present, parity):
                usable[label] = present
            else:
                logger.info('edge %s: branch %s lacks setting pairs and is dropped', format_edge(edge), label)
        edge_total = sum(c.total for present in usable.values() for c in present)
        if edge_total == 0:
            raise ValidationError(f'edge {format_edge(edge)}: total count zero')
        branches, scores = [], []
        variance_e = 0.0
        for label, present in usable.items():
            where = f'edge {format_edge(edge)}, branch {label}'
            probability = sum(c.total for c in present) / edge_total
            parity = branch_parity(label) if relabel == 'parity' else 0
            value, variance = _term_from_counts(
                ineq,
                {(c.setting_a, c.setting_b): c for c in present},
                {x: [c for c in present if c.setting_a == x] for x in range(ineq.settings_a)},
                {y: [c for c in present if c.setting_b == y] for y in range(ineq.settings_b)},
                parity, where,
            )
            outcomes = () if label == NO_BRANCH else tuple(label)
            branches.append(Branch(edge, (), outcomes, probability, None, Relabel(parity), 'counts'))
            scores.append(value)
            variance_e += probability ** 2 * variance
        beta_e = float(sum(b.probability * s for b, s in zip(branches, scores)))
        spread = sum(b.probability * s ** 2 for b, s in zip(branches, scores)) - beta_e ** 2
        variance_e += max(spread, 0.0) / edge_total
        results.append(EdgeResult(edge, tuple(branches), tuple(scores), beta_e, float(np.sqrt(variance_e))))
    return certify(covering, ineq, results)
