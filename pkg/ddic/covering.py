"""Covering graphs over the parties and their mincut-based biseparable bounds."""
import itertools
import logging
import re
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np
from tqdm.auto import tqdm

from ddic.bell import BellInequality, chsh
from ddic.utils.errors import ValidationError

logger = logging.getLogger(__name__)

MAX_AUDIT_PARTIES = 7
AUDIT_TOL = 1e-12

Edge = tuple[int, int]


def normalize_edge(edge: Iterable[int], n_parties: int) -> Edge:
    i, j = (int(p) for p in edge)
    if i == j:
        raise ValidationError(f'self-loop on party {i}')
    if not (0 <= i < n_parties and 0 <= j < n_parties):
        raise ValidationError(f'edge {(i, j)} references a party outside 0..{n_parties - 1}')
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Covering:
    """Connected simple graph on the parties.

    Attributes
    ----------
    n_parties : int
        Number of vertices, at least 2.
    edges : tuple[tuple[int, int], ...]
        Sorted edges ``(i, j)`` with ``i < j``.
    name : str
        Family the covering was built from, ``'custom'`` otherwise.
    """

    n_parties: int
    edges: tuple[Edge, ...]
    name: str = field(default='custom', compare=False)

    def __post_init__(self) -> None:
        if self.n_parties < 2:
            raise ValidationError('a covering needs at least two parties')
        edges = [normalize_edge(e, self.n_parties) for e in self.edges]
        if len(set(edges)) != len(edges):
            raise ValidationError('covering contains duplicate edges')
        object.__setattr__(self, 'edges', tuple(sorted(edges)))
        if not nx.is_connected(self.graph()):
            raise ValidationError('covering graph is not connected')

    def graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_parties))
        graph.add_edges_from(self.edges)
        return graph

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, party: int) -> int:
        return sum(party in e for e in self.edges)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(self.degree(p) for p in range(self.n_parties))

    @property
    def is_tree(self) -> bool:
        return self.n_edges == self.n_parties - 1

    def to_edge_list(self) -> str:
        """Text form: one ``i j`` pair per line, parties 1-indexed."""
        return ''.join(f'{i + 1} {j + 1}\n' for i, j in self.edges)

    @classmethod
    def from_edge_list(cls, text: str, n_parties: Optional[int] = None) -> 'Covering':
        """Parses the text form written by ``to_edge_list``.

        Blank lines and ``#`` comments are ignored; ``n_parties`` defaults to the
        largest party mentioned.
        """
        edges = []
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            parts = re.split(r'[\s,\-]+', line)
            if len(parts) != 2 or not all(p.isdigit() for p in parts):
                raise ValidationError(f'line {number}: expected two party numbers, got {line!r}')
            i, j = int(parts[0]), int(parts[1])
            if i < 1 or j < 1:
                raise ValidationError(f'line {number}: parties are numbered from 1')
            edges.append((i - 1, j - 1))
        if not edges:
            raise ValidationError('edge list is empty')
        n = n_parties if n_parties is not None else max(max(e) for e in edges) + 1
        return cls(n, tuple(edges))


def minimal_covering(n: int) -> Covering:
    """Path ``0-1-...-(n-1)``."""
    return Covering(n, tuple((i, i + 1) for i in range(n - 1)), name='minimal')


def full_covering(n: int) -> Covering:
    return Covering(n, tuple(itertools.combinations(range(n), 2)), name='full')


def ring_covering(n: int) -> Covering:
    """Cycle over all parties; coincides with the full covering for three parties."""
    if n < 3:
        raise ValidationError('a ring covering needs at least three parties')
    return Covering(n, tuple((i, (i + 1) % n) for i in range(n)), name='ring')


COVERING_FAMILIES = {
    'minimal': minimal_covering,
    'mini': minimal_covering,
    'full': full_covering,
    'ring': ring_covering,
}


def covering_family(name: str, n: int) -> Covering:
    try:
        factory = COVERING_FAMILIES[name]
    except KeyError:
        raise ValidationError(f"unknown covering family '{name}', expected one of {sorted(COVERING_FAMILIES)}")
    return factory(n)


@dataclass(frozen=True)
class Bipartition:
    """Split of the parties into two nonempty groups.

    Attributes
    ----------
    n_parties : int
        Total number of parties.
    group1, group2 : frozenset[int]
        Disjoint, nonempty, covering ``0..n_parties-1``.
    """

    n_parties: int
    group1: frozenset[int]
    group2: frozenset[int]

    def __post_init__(self) -> None:
        group1, group2 = frozenset(self.group1), frozenset(self.group2)
        if not group1 or not group2:
            raise ValidationError('both groups of a bipartition must be nonempty')
        if group1 & group2 or group1 | group2 != frozenset(range(self.n_parties)):
            raise ValidationError('groups must partition the parties')
        object.__setattr__(self, 'group1', group1)
        object.__setattr__(self, 'group2', group2)

    @classmethod
    def from_group(cls, n_parties: int, group: Iterable[int]) -> 'Bipartition':
        group1 = frozenset(group)
        return cls(n_parties, group1, frozenset(range(n_parties)) - group1)

    def cuts(self, edge: Edge) -> bool:
        i, j = edge
        return (i in self.group1) != (j in self.group1)

    def cut_edges(self, covering: Covering) -> tuple[Edge, ...]:
        return tuple(e for e in covering.edges if self.cuts(e))

    def group_of(self, party: int) -> frozenset[int]:
        return self.group1 if party in self.group1 else self.group2


def mincut_partition(covering: Covering) -> tuple[int, Bipartition]:
    """Global minimum cut by Stoer-Wagner."""
    value, (side, _) = nx.stoer_wagner(covering.graph())
    return int(value), Bipartition.from_group(covering.n_parties, side)


def mincut(covering: Covering) -> int:
    return mincut_partition(covering)[0]


def mincut_bruteforce(covering: Covering) -> int:
    """Minimum cut over all ``2**(n-1) - 1`` bipartitions."""
    n = covering.n_parties
    best = covering.n_edges
    for mask in range(1, 1 << (n - 1)):
        bipartition = Bipartition.from_group(n, (p for p in range(n - 1) if mask >> p & 1))
        best = min(best, len(bipartition.cut_edges(covering)))
    return best


def biseparable_bound(covering: Covering, ineq: BellInequality) -> float:
    """Largest mean edge score any biseparable state can reach on ``covering``.

    Parameters
    ----------
    covering : Covering
        Connected covering graph.
    ineq : BellInequality
        Inequality tested on every edge.

    Returns
    -------
    float
        ``beta_quantum - mincut / |E| * (beta_quantum - beta_local)``.
    """
    return ineq.beta_quantum - mincut(covering) / covering.n_edges * ineq.gap


def random_connected_covering(n: int, rng: np.random.Generator, extra_edge_probability: float = 0.3) -> Covering:
    """Random spanning tree plus independently added extra edges."""
    if n < 2:
        raise ValidationError('a covering needs at least two parties')
    order = rng.permutation(n)
    edges = {normalize_edge((int(order[k]), int(order[rng.integers(k)])), n) for k in range(1, n)}
    for edge in itertools.combinations(range(n), 2):
        if edge not in edges and rng.random() < extra_edge_probability:
            edges.add(edge)
    return Covering(n, tuple(edges))


def _popcount(values: np.ndarray) -> np.ndarray:
    v = values - ((values >> 1) & 0x55555555)
    v = (v & 0x33333333) + ((v >> 2) & 0x33333333)
    v = (v + (v >> 4)) & 0x0F0F0F0F
    return ((v * 0x01010101) & 0xFFFFFFFF) >> 24


@dataclass
class AuditReport:
    """Outcome of the exhaustive covering-optimality audit.

    Attributes
    ----------
    n_parties : int
        Number of parties audited.
    coverings_checked : int
        Connected edge sets examined.
    violations : list[tuple[tuple[int, int], ...]]
        Coverings whose biseparable bound lies below the full covering's.
    attainers : list[tuple[tuple[int, int], ...]]
        Coverings reaching the full-covering bound.
    """

    n_parties: int
    coverings_checked: int
    violations: list[tuple[Edge, ...]]
    attainers: list[tuple[Edge, ...]]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        def one_indexed(edges: tuple[Edge, ...]) -> list[list[int]]:
            return [[i + 1, j + 1] for i, j in edges]

        return {
            'n_parties': self.n_parties,
            'coverings_checked': self.coverings_checked,
            'passed': self.passed,
            'violations': [one_indexed(e) for e in self.violations],
            'attainers': [one_indexed(e) for e in self.attainers],
        }


def optimality_audit(n: int, ineq: Optional[BellInequality] = None, progress: bool = False,
                     chunk_bits: int = 16) -> AuditReport:
    """Checks every connected covering on ``n`` parties against the full covering.

    Edge sets are encoded as bit masks over all party pairs and processed in
    vectorized chunks.

    Parameters
    ----------
    n : int
        Number of parties, between 2 and ``MAX_AUDIT_PARTIES``.
    ineq : Optional[BellInequality]
        Inequality defining the bounds, CHSH by default.
    progress : bool
        Show a progress bar over the chunks.
    chunk_bits : int
        Base-2 logarithm of the chunk size.

    Returns
    -------
    AuditReport
        Checked count, violating coverings and coverings attaining the full bound.
    """
    if not 2 <= n <= MAX_AUDIT_PARTIES:
        raise ValidationError(f'audit supports 2..{MAX_AUDIT_PARTIES} parties, got {n}')
    ineq = ineq or chsh()
    pairs = list(itertools.combinations(range(n), 2))
    cut_masks = []
    for mask in range(1, 1 << (n - 1)):
        group = {p for p in range(n - 1) if mask >> p & 1}
        cut_masks.append(sum(1 << k for k, (i, j) in enumerate(pairs) if (i in group) != (j in group)))
    full_bound = ineq.beta_quantum - (n - 1) / len(pairs) * ineq.gap

    total = 1 << len(pairs)
    chunk = min(total, 1 << chunk_bits)
    checked = 0
    violations: list[tuple[Edge, ...]] = []
    attainers: list[tuple[Edge, ...]] = []
    for start in tqdm(range(0, total, chunk), desc=f'Auditing coverings (N={n})', disable=not progress):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        n_edges = _popcount(masks)
        cuts = np.full(masks.shape, len(pairs), dtype=np.int64)
        for cut_mask in cut_masks:
            np.minimum(cuts, _popcount(masks & cut_mask), out=cuts)
        connected = cuts > 0
        checked += int(np.count_nonzero(connected))
        bounds = np.full(masks.shape, np.inf)
        bounds[connected] = ineq.beta_quantum - cuts[connected] / n_edges[connected] * ineq.gap
        for flagged, target in ((connected & (bounds < full_bound - AUDIT_TOL), violations),
                                (connected & (np.abs(bounds - full_bound) <= AUDIT_TOL), attainers)):
            for value in masks[flagged]:
                target.append(tuple(pairs[k] for k in range(len(pairs)) if int(value) >> k & 1))
    if violations:
        logger.warning('%d coverings on %d parties fall below the full-covering bound', len(violations), n)
    return AuditReport(n, checked, violations, attainers)
