import numpy as np
import pandas as pd
import pytest

from ddic.utils.counts import (
    CountCell,
    CountTable,
    branch_parity,
    format_edge,
    parse_edge,
    sample_cell_counts,
)
from ddic.utils.errors import ValidationError

HEADER = 'edge,branch_label,setting_a,setting_b,n_pp,n_pm,n_mp,n_mm\n'


@pytest.mark.parametrize('text, edge', [('AB', (0, 1)), ('db', (1, 3)), ('1-2', (0, 1)), ('3 1', (0, 2))])
def test_parse_edge(text, edge):
    assert parse_edge(text) == edge


@pytest.mark.parametrize('text', ['AA', 'A', '0-1', 'x-y'])
def test_parse_edge_rejects(text):
    with pytest.raises(ValidationError):
        parse_edge(text)


def test_format_edge():
    assert format_edge((0, 3)) == 'AD'
    assert format_edge((2, 30)) == '3-31'


def test_branch_parity():
    assert branch_parity('++') == 0
    assert branch_parity('+-') == 1
    assert branch_parity('--') == 0
    assert branch_parity('none') == 0


def test_cell_statistics():
    cell = CountCell((0, 1), '+', 0, 0, (40, 10, 20, 30))
    assert cell.total == 100
    assert cell.correlator == pytest.approx(0.4)
    assert cell.a_sum == 0
    assert cell.b_sum == 20
    assert CountCell((0, 1), '+', 0, 1, None).missing


def test_read_table(tmp_path):
    path = tmp_path / 'counts.csv'
    path.write_text(HEADER + 'AB,++,0,0,10,0,0,10\nAB,++,0,1,NA,NA,NA,NA\n1-3,none,1,1,1,2,3,4\n')
    table = CountTable.from_csv(path)
    assert table.edges == [(0, 1), (0, 2)]
    assert table.n_parties == 3
    assert table.for_edge((0, 1))[1].missing
    assert table.to_frame()['edge'].tolist() == ['AB', 'AB', 'AC']


def test_read_tab_separated_table(tmp_path):
    path = tmp_path / 'counts.tsv'
    path.write_text(HEADER.replace(',', '\t') + 'AB\t++\t0\t0\t5\t1\t1\t5\n')
    assert CountTable.from_csv(path).cells[0].counts == (5, 1, 1, 5)


@pytest.mark.parametrize('row, message', [
    ('AB,++,0,0,1,2,3\n', 'row 2'),
    ('AB,++,0,0,1,-2,3,4\n', 'negative'),
    ('AB,++,0,0,0,0,0,0\n', 'zero total'),
    ('AB,+x,0,0,1,1,1,1\n', 'branch label'),
    ('AB,++,a,0,1,1,1,1\n', 'settings'),
    ('AB,++,0,0,1,1,1,1\nAB,++,0,0,1,1,1,1\n', 'duplicate'),
])
def test_read_table_rejects_malformed_rows(tmp_path, row, message):
    path = tmp_path / 'counts.csv'
    path.write_text(HEADER + row)
    with pytest.raises(ValidationError, match=message):
        CountTable.from_csv(path)


def test_table_requires_columns():
    with pytest.raises(ValidationError):
        CountTable.from_frame(pd.DataFrame({'edge': ['AB']}))


def test_table_write_read(tmp_path):
    table = CountTable((CountCell((0, 1), '+-', 1, 0, (3, 4, 5, 6)), CountCell((1, 2), 'none', 0, 0, None)))
    path = tmp_path / 'out.csv'
    table.to_csv(path)
    assert CountTable.from_csv(path) == table


def test_sample_cell_counts_sums_to_shots():
    counts = sample_cell_counts(np.array([0.5, 0.5 + 1e-15, -1e-16, 0.0]), 1000, np.random.default_rng(0))
    assert counts.sum() == 1000
    assert counts[2] == 0
