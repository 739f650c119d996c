"""Coincidence-count tables exchanged with experiments.

One row per edge, branch and setting pair::

    edge,branch_label,setting_a,setting_b,n_pp,n_pm,n_mp,n_mm
    AB,++,0,0,8328,1672,1673,8327

Edges are written as letter pairs (``AB``) or 1-indexed numbers (``1-2``).
A cell reading ``NA`` or ``missing`` marks a setting pair that was not
recorded; empty cells are rejected.
"""
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from ddic.utils.errors import ValidationError

COLUMNS = ['edge', 'branch_label', 'setting_a', 'setting_b', 'n_pp', 'n_pm', 'n_mp', 'n_mm']
COUNT_COLUMNS = COLUMNS[4:]
MISSING_MARKERS = frozenset({'na', 'missing'})
NO_BRANCH = 'none'


def parse_edge(text: str) -> tuple[int, int]:
    """``'AB'`` or ``'1-2'`` to the 0-indexed pair ``(0, 1)``."""
    text = text.strip()
    if re.fullmatch(r'[A-Za-z]{2}', text):
        i, j = (string.ascii_uppercase.index(c) for c in text.upper())
    else:
        match = re.fullmatch(r'(\d+)\s*[-:\s]\s*(\d+)', text)
        if match is None or int(match.group(1)) < 1 or int(match.group(2)) < 1:
            raise ValidationError(f"cannot parse edge '{text}'")
        i, j = int(match.group(1)) - 1, int(match.group(2)) - 1
    if i == j:
        raise ValidationError(f"edge '{text}' is a self-loop")
    return (i, j) if i < j else (j, i)


def format_edge(edge: tuple[int, int]) -> str:
    i, j = edge
    if j < len(string.ascii_uppercase):
        return string.ascii_uppercase[i] + string.ascii_uppercase[j]
    return f'{i + 1}-{j + 1}'


def branch_parity(label: str) -> int:
    """Parity of the number of ``-`` outcomes in a branch label."""
    return 0 if label == NO_BRANCH else label.count('-') % 2


@dataclass(frozen=True)
class CountCell:
    """Counts of one setting pair in one branch of one edge.

    Attributes
    ----------
    edge : tuple[int, int]
        0-indexed edge.
    branch : str
        Outcomes of the measured parties as ``+``/``-`` characters, ``'none'``
        when nothing was measured.
    setting_a, setting_b : int
        Settings of the two edge parties.
    counts : Optional[tuple[int, int, int, int]]
        ``(n_pp, n_pm, n_mp, n_mm)``, ``None`` for a missing cell.
    """

    edge: tuple[int, int]
    branch: str
    setting_a: int
    setting_b: int
    counts: Optional[tuple[int, int, int, int]]

    @property
    def missing(self) -> bool:
        return self.counts is None

    @property
    def total(self) -> int:
        return 0 if self.counts is None else sum(self.counts)

    @property
    def correlator(self) -> float:
        assert self.counts is not None
        pp, pm, mp, mm = self.counts
        return (pp + mm - pm - mp) / self.total

    @property
    def a_sum(self) -> int:
        """Sum of A outcomes, ``+1`` per ``+``."""
        assert self.counts is not None
        pp, pm, mp, mm = self.counts
        return pp + pm - mp - mm

    @property
    def b_sum(self) -> int:
        assert self.counts is not None
        pp, pm, mp, mm = self.counts
        return pp + mp - pm - mm


@dataclass(frozen=True)
class CountTable:
    """Validated collection of count cells."""

    cells: tuple[CountCell, ...]

    def __post_init__(self) -> None:
        seen = set()
        for cell in self.cells:
            key = (cell.edge, cell.branch, cell.setting_a, cell.setting_b)
            if key in seen:
                raise ValidationError(f'duplicate count row for edge {format_edge(cell.edge)}, '
                                      f'branch {cell.branch}, settings {cell.setting_a}{cell.setting_b}')
            seen.add(key)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted({cell.edge for cell in self.cells})

    @property
    def n_parties(self) -> int:
        return max(j for _, j in self.edges) + 1

    def for_edge(self, edge: tuple[int, int]) -> list[CountCell]:
        return [cell for cell in self.cells if cell.edge == edge]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cell in self.cells:
            counts = cell.counts if cell.counts is not None else ('NA',) * 4
            rows.append([format_edge(cell.edge), cell.branch, cell.setting_a, cell.setting_b, *counts])
        return pd.DataFrame(rows, columns=COLUMNS)

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'CountTable':
        missing_columns = [c for c in COLUMNS if c not in frame.columns]
        if missing_columns:
            raise ValidationError(f'count table lacks columns {missing_columns}')
        cells = []
        for row_number, row in enumerate(frame[COLUMNS].astype(str).itertuples(index=False), start=2):
            where = f'row {row_number}'
            values = [value.strip() for value in row]
            if any(not value for value in values):
                raise ValidationError(f'{where}: empty cell')
            edge = parse_edge(values[0])
            branch = values[1]
            if branch != NO_BRANCH and set(branch) - {'+', '-'}:
                raise ValidationError(f"{where}: branch label '{branch}' must consist of '+' and '-'")
            try:
                setting_a, setting_b = int(values[2]), int(values[3])
            except ValueError:
                raise ValidationError(f'{where}: settings must be integers')
            raw = values[4:]
            if all(value.lower() in MISSING_MARKERS for value in raw):
                counts = None
            else:
                try:
                    parsed = tuple(int(value) for value in raw)
                except ValueError:
                    raise ValidationError(f'{where}: counts must be nonnegative integers or NA')
                if any(value < 0 for value in parsed):
                    raise ValidationError(f'{where}: negative count')
                if sum(parsed) == 0:
                    raise ValidationError(f'{where}: setting pair with zero total counts')
                counts = (parsed[0], parsed[1], parsed[2], parsed[3])
            cells.append(CountCell(edge, branch, setting_a, setting_b, counts))
        if not cells:
            raise ValidationError('count table is empty')
        return cls(tuple(cells))

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> 'CountTable':
        """Reads a comma-, tab- or whitespace-delimited table."""
        try:
            frame = pd.read_csv(path, sep=None, engine='python', dtype=str, keep_default_na=False)
        except (OSError, pd.errors.ParserError) as e:
            raise ValidationError(f'cannot read count table {path}: {e}')
        return cls.from_frame(frame)


def sample_cell_counts(probabilities: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Multinomial draw of ``shots`` events; ``probabilities`` may carry rounding noise."""
    clipped = np.clip(probabilities, 0.0, None)
    return rng.multinomial(shots, clipped / clipped.sum())
