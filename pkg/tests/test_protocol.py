import json
from pathlib import Path

import numpy as np
import pytest

from ddic.bell import CHSH_QUANTUM, chsh, local_bound_bruteforce, tilted
from ddic.covering import Covering, biseparable_bound, full_covering, minimal_covering, ring_covering
from ddic.fairsampling import filtered_state
from ddic.protocol import (
    EdgePlan,
    MeasurementStrategy,
    best_edge_result,
    certify,
    critical_visibility,
    edge_score,
    gme_weight,
    ingest_counts,
    label_controlled_score,
    prepare_branches,
    run_ddic,
    simulate_counts,
)
from ddic.qcore import Register, permute, purity, random_pure_state, random_unitary
from ddic.states import (
    biseparable_adversary,
    biseparable_product,
    ghz,
    linear_cluster,
    random_biseparable_model,
    saturating_biseparable_model,
    tilted_ghz,
    white_noise,
)
from ddic.utils.counts import CountCell, CountTable
from ddic.utils.errors import NumericalError, ValidationError

SAMPLE_COUNTS = Path(__file__).resolve().parent.parent / 'data' / 'ghz4_full_counts.csv'
THETA = np.radians(15.0)
GHZ_X = MeasurementStrategy('ghz-x')
GHZ_X_OPTIMAL = MeasurementStrategy('ghz-x', optimize_branches=True)


def test_strategy_plans():
    assert len(MeasurementStrategy('auto').plans((0, 3), 4)) == 9
    plan, = GHZ_X.plans((2, 0), 4)
    assert plan.edge == (0, 2)
    assert plan.measured == (1, 3)
    assert plan.bases == ('X', 'X')
    with pytest.raises(ValidationError):
        MeasurementStrategy('auto', max_auto_parties=4).plans((0, 1), 5)
    with pytest.raises(ValidationError):
        MeasurementStrategy('everything')


def test_cluster_plan_measures_graph_neighbours():
    strategy = MeasurementStrategy.linear_cluster(5)
    plan, = strategy.plans((1, 2), 5)
    assert plan.measured == (0, 3)
    assert plan.bases == ('X', 'Z')
    assert plan.rule == 'frame'
    assert len(strategy.plans((0, 2), 5)) == 27


def test_edge_plan_validation():
    with pytest.raises(ValidationError):
        EdgePlan((0, 1), (1,), ('X',), 'parity')
    with pytest.raises(ValidationError):
        EdgePlan((0, 1), (2,), ('W',), 'parity')
    with pytest.raises(ValidationError):
        EdgePlan((0, 1), (2,), ('X',), 'guess')


@pytest.mark.parametrize('n, order', [(3, [2, 0, 1]), (4, [1, 3, 0, 2])])
def test_auto_score_is_invariant_under_party_relabelling(n, order):
    rng = np.random.default_rng(41)
    state = random_pure_state(Register.qubits(n), rng)
    strategy = MeasurementStrategy('auto')
    original = run_ddic(state, full_covering(n), chsh(), strategy)
    relabelled = run_ddic(permute(state, order), full_covering(n), chsh(), strategy)
    assert relabelled.beta_bar == pytest.approx(original.beta_bar, abs=1e-8)


def test_ghz_branches():
    branches = prepare_branches(ghz(4), (0, 1), GHZ_X)
    assert [b.label for b in branches] == ['++', '+-', '-+', '--']
    assert [b.probability for b in branches] == pytest.approx([0.25] * 4)
    assert [b.relabel.parity for b in branches] == [0, 1, 1, 0]


def test_prepare_branches_requires_single_plan():
    with pytest.raises(ValidationError):
        prepare_branches(ghz(3), (0, 1), MeasurementStrategy('auto'))


@pytest.mark.parametrize('seed', range(3))
def test_branches_of_pure_states_are_pure(seed):
    rng = np.random.default_rng(seed)
    state = random_pure_state(Register.qubits(5), rng)
    for edge in full_covering(5).edges:
        for branch in prepare_branches(state, edge, GHZ_X):
            if not branch.vanished:
                assert purity(branch.pair_state) > 1 - 1e-10
    cluster = linear_cluster(5)
    for edge in minimal_covering(5).edges:
        for branch in prepare_branches(cluster, edge, MeasurementStrategy.linear_cluster(5)):
            if not branch.vanished:
                assert purity(branch.pair_state) > 1 - 1e-10


def test_edge_score_rejects_mixed_edges():
    branches = prepare_branches(ghz(3), (0, 1), GHZ_X) + prepare_branches(ghz(3), (1, 2), GHZ_X)
    with pytest.raises(ValidationError):
        edge_score(branches, chsh())


def test_ideal_ghz_certificate():
    certificate = run_ddic(ghz(4), full_covering(4), chsh(), GHZ_X)
    assert certificate.beta_bar == pytest.approx(CHSH_QUANTUM, abs=1e-9)
    assert certificate.bound == pytest.approx(2.414214, abs=1e-6)
    assert certificate.gme
    assert certificate.p_gme == pytest.approx(1.0, abs=1e-9)
    assert not certificate.local_bound.distinct


def test_ideal_tilted_branches_score_one():
    ineq = tilted(THETA)
    certificate = run_ddic(tilted_ghz(3, THETA), full_covering(3), ineq, MeasurementStrategy('tilted-x'))
    for result in certificate.edge_results:
        for branch, value in zip(result.branches, result.branch_scores):
            if not branch.vanished:
                assert value == pytest.approx(1.0, abs=1e-9)
    assert certificate.bound == pytest.approx(0.968, abs=1e-9)
    assert certificate.gme
    assert certificate.local_bound.distinct


def test_linear_cluster_on_its_graph():
    certificate = run_ddic(linear_cluster(4), minimal_covering(4), chsh(), MeasurementStrategy.linear_cluster(4))
    assert certificate.beta_bar == pytest.approx(CHSH_QUANTUM, abs=1e-9)


def test_linear_cluster_full_covering_uses_search():
    certificate = run_ddic(linear_cluster(4), full_covering(4), chsh(), MeasurementStrategy.linear_cluster(4))
    assert certificate.gme
    searched = [r for r in certificate.edge_results if r.edge == (0, 3)][0]
    assert searched.plan.rule == 'optimal'


@pytest.mark.parametrize('beta_bar, bound, beta_quantum, expected', [
    (2.662, 2.414, 2 * np.sqrt(2), 0.598),
    (2.620, 2.414, 2 * np.sqrt(2), 0.497),
    (0.987, 0.968, 1.0, 0.594),
])
def test_gme_weight_arithmetic(beta_bar, bound, beta_quantum, expected):
    assert gme_weight(beta_bar, bound, beta_quantum).value == pytest.approx(expected, abs=0.002)


def test_gme_weight_clamps():
    weight = gme_weight(2.0, 2.414, 2 * np.sqrt(2))
    assert weight.value == 0.0
    assert weight.raw < 0.0
    with pytest.raises(ValidationError):
        gme_weight(1.0, 1.0, 1.0)


@pytest.mark.parametrize('bound, beta_quantum', [(2.414214, 2 * np.sqrt(2)), (2.552285, 2 * np.sqrt(2)),
                                                 (0.968, 1.0)])
def test_gme_weight_is_monotone_between_bound_and_maximum(bound, beta_quantum):
    assert gme_weight(bound, bound, beta_quantum).value == 0.0
    assert gme_weight(beta_quantum, bound, beta_quantum).value == pytest.approx(1.0)
    values = [gme_weight(b, bound, beta_quantum).value for b in np.linspace(bound - 0.5, beta_quantum + 0.5, 201)]
    assert all(later >= earlier for earlier, later in zip(values, values[1:]))


@pytest.mark.parametrize('edge', [(0, 1), (0, 2), (1, 2)])
def test_saturating_model_reaches_full_bound(edge):
    value = label_controlled_score(saturating_biseparable_model(), edge, chsh())
    assert value == pytest.approx((2 * np.sqrt(2) + 4) / 3, abs=1e-9)
    assert value == pytest.approx(biseparable_bound(full_covering(3), chsh()), abs=1e-9)


def test_repeated_labels_do_not_saturate():
    value = label_controlled_score(saturating_biseparable_model((1, 1, 2)), (0, 1), chsh())
    assert value == pytest.approx((2 * np.sqrt(2) + 2) / 3, abs=1e-9)
    assert value < biseparable_bound(full_covering(3), chsh())


@pytest.mark.parametrize('covering', [minimal_covering(4), full_covering(4)])
def test_biseparable_product_reaches_bound(covering):
    for strategy in (GHZ_X_OPTIMAL, MeasurementStrategy('auto')):
        certificate = run_ddic(biseparable_product(4), covering, chsh(), strategy)
        assert certificate.beta_bar == pytest.approx(certificate.bound, abs=1e-9)
        assert not certificate.gme


@pytest.mark.parametrize('covering', [
    minimal_covering(4),
    full_covering(4),
    ring_covering(5),
    Covering(5, ((0, 1), (0, 2), (0, 3), (3, 4))),
])
def test_adversary_reaches_bound(covering):
    certificate = run_ddic(biseparable_adversary(covering, chsh()), covering, chsh(), GHZ_X)
    assert certificate.beta_bar == pytest.approx(certificate.bound, abs=1e-9)
    assert not certificate.gme


def test_tilted_adversary_against_configured_and_deterministic_bounds():
    covering = full_covering(4)
    exact = tilted(THETA, beta_local=local_bound_bruteforce(tilted(THETA)))
    certificate = run_ddic(biseparable_adversary(covering, exact), covering, exact, MeasurementStrategy('tilted-x'))
    assert certificate.beta_bar == pytest.approx(certificate.bound, abs=1e-9)
    configured = tilted(THETA)
    certificate = run_ddic(biseparable_adversary(covering, configured), covering, configured,
                           MeasurementStrategy('tilted-x'))
    assert certificate.beta_bar > certificate.bound


def _random_filters(n, rng):
    filters = []
    for _ in range(n):
        k = random_unitary(2, rng) @ np.diag(rng.uniform(0.2, 1.0, size=2)) @ random_unitary(2, rng)
        filters.append(k)
    return filters


@pytest.mark.parametrize('family, seed', [(minimal_covering, 31), (full_covering, 32), (ring_covering, 33)])
def test_random_biseparable_states_never_exceed_bound(family, seed):
    rng = np.random.default_rng(seed)
    covering = family(4)
    ineq = chsh()
    for k in range(200):
        model = random_biseparable_model(4, rng, n_components=int(rng.integers(1, 4)), mixed=bool(k % 2))
        rho = model.to_mixed_state()
        if k % 4 >= 2:
            rho = filtered_state(rho, _random_filters(4, rng)).state
        certificate = run_ddic(rho, covering, ineq, GHZ_X_OPTIMAL, rng=rng)
        assert certificate.beta_bar <= certificate.bound + 1e-9


@pytest.mark.slow
@pytest.mark.parametrize('family, seed', [(minimal_covering, 34), (full_covering, 35), (ring_covering, 36)])
def test_random_biseparable_states_never_exceed_bound_with_plan_search(family, seed):
    rng = np.random.default_rng(seed)
    covering = family(4)
    strategy = MeasurementStrategy('auto')
    for k in range(20):
        rho = random_biseparable_model(4, rng, n_components=2, mixed=bool(k % 2)).to_mixed_state()
        rho = filtered_state(rho, _random_filters(4, rng)).state
        assert run_ddic(rho, covering, chsh(), strategy).beta_bar <= biseparable_bound(covering, chsh()) + 1e-9


def test_random_biseparable_models_tilted():
    rng = np.random.default_rng(21)
    ineq = tilted(THETA, beta_local=local_bound_bruteforce(tilted(THETA)))
    strategy = MeasurementStrategy('tilted-x', optimize_branches=True)
    for covering in (minimal_covering(3), full_covering(3)):
        for _ in range(10):
            model = random_biseparable_model(3, rng, n_components=2)
            certificate = run_ddic(model.to_mixed_state(), covering, ineq, strategy, rng=rng)
            assert certificate.beta_bar <= certificate.bound + 1e-9


def test_dense_evaluation_never_exceeds_componentwise():
    rng = np.random.default_rng(5)
    covering = full_covering(3)
    for _ in range(20):
        model = random_biseparable_model(3, rng)
        componentwise = run_ddic(model, covering, chsh(), GHZ_X_OPTIMAL)
        dense = run_ddic(model.to_mixed_state(), covering, chsh(), GHZ_X_OPTIMAL)
        assert dense.beta_bar <= componentwise.beta_bar + 1e-9
        assert componentwise.beta_bar <= componentwise.bound + 1e-9


def test_run_ddic_checks_party_count():
    with pytest.raises(ValidationError):
        run_ddic(ghz(3), full_covering(4), chsh(), GHZ_X)


def test_certify_checks_edges():
    result = best_edge_result(ghz(3), (0, 1), chsh(), GHZ_X)
    with pytest.raises(ValidationError):
        certify(full_covering(3), chsh(), [result])


def test_certificate_json_is_deterministic():
    certificate = run_ddic(ghz(3), full_covering(3), chsh(), GHZ_X)
    first = certificate.to_json(seed=0)
    assert first == certificate.to_json(seed=0)
    payload = json.loads(first)
    assert payload['covering']['edges'] == ['AB', 'AC', 'BC']
    assert payload['seed'] == 0
    assert payload['edges'][0]['plan']['measured'] == [3]


def test_critical_visibility_ghz4_full():
    result = critical_visibility(ghz(4), full_covering(4), chsh(), GHZ_X)
    assert result.critical == pytest.approx((1 + np.sqrt(2)) / (2 * np.sqrt(2)), abs=1e-3)
    assert result.critical == pytest.approx(0.8536, abs=1e-3)
    assert len(result.sweep) == 11


def test_critical_visibility_ghz4_minimal():
    result = critical_visibility(ghz(4), minimal_covering(4), chsh(), GHZ_X)
    assert result.critical == pytest.approx((1 + 2 * np.sqrt(2)) / (3 * np.sqrt(2)), abs=1e-3)
    assert result.critical > critical_visibility(ghz(4), full_covering(4), chsh(), GHZ_X).critical


def test_critical_visibility_requires_certified_state():
    with pytest.raises(NumericalError):
        critical_visibility(biseparable_product(4), full_covering(4), chsh(), GHZ_X)


def test_ingest_sample_counts():
    certificate = ingest_counts(str(SAMPLE_COUNTS), chsh())
    assert certificate.covering == full_covering(4)
    assert certificate.beta_bar == pytest.approx(2.662, abs=1e-9)
    assert certificate.p_gme == pytest.approx(0.598, abs=1e-3)
    assert certificate.gme
    assert 0.0 < certificate.beta_bar_stderr < 0.01
    raw = ingest_counts(str(SAMPLE_COUNTS), chsh(), relabel='none')
    assert raw.beta_bar == pytest.approx(2.662 / 2, abs=1e-9)


def test_ingest_drops_branch_missing_a_setting_pair(caplog):
    full = (10, 0, 0, 10)
    cells = [CountCell((0, 1), '+', x, y, full if (x, y) != (1, 1) else (0, 10, 10, 0))
             for x in range(2) for y in range(2)]
    cells += [CountCell((0, 1), '-', 0, 0, (3, 0, 0, 3)), CountCell((0, 1), '-', 0, 1, None)]
    with caplog.at_level('INFO', logger='ddic.protocol'):
        certificate = ingest_counts(CountTable(tuple(cells)), chsh())
    result, = certificate.edge_results
    assert [b.label for b in result.branches] == ['+']
    assert result.branches[0].probability == 1.0
    assert result.beta_e == pytest.approx(4.0)
    assert 'dropped' in caplog.text


def test_ingest_rejects_edge_without_complete_branch():
    cells = (
        CountCell((0, 1), 'none', 0, 0, (10, 0, 0, 10)),
        CountCell((0, 1), 'none', 0, 1, (10, 0, 0, 10)),
        CountCell((0, 1), 'none', 1, 0, (10, 0, 0, 10)),
        CountCell((0, 1), 'none', 1, 1, None),
    )
    with pytest.raises(ValidationError, match='total count zero'):
        ingest_counts(CountTable(cells), chsh())


def test_ingest_rejects_edge_with_only_missing_cells():
    cells = (
        CountCell((0, 1), '+', 0, 0, (10, 0, 0, 10)),
        CountCell((0, 1), '+', 0, 1, (10, 0, 0, 10)),
        CountCell((0, 1), '+', 1, 0, (10, 0, 0, 10)),
        CountCell((0, 1), '+', 1, 1, (10, 0, 0, 10)),
        CountCell((0, 2), '+', 0, 0, None),
        CountCell((1, 2), '+', 0, 0, (10, 0, 0, 10)),
    )
    with pytest.raises(ValidationError, match='edge AC: total count zero'):
        ingest_counts(CountTable(cells), chsh())


@pytest.mark.parametrize('shots', [20, 50])
def test_low_shot_simulations_can_be_ingested(shots):
    rng = np.random.default_rng(shots)
    covering = full_covering(4)
    table = simulate_counts(ghz(4), covering, chsh(), GHZ_X, shots, rng)
    certificate = ingest_counts(table, chsh())
    assert [r.edge for r in certificate.edge_results] == list(covering.edges)
    for result in certificate.edge_results:
        assert sum(b.probability for b in result.branches) == pytest.approx(1.0)
        assert abs(result.beta_e) <= 4.0 + 1e-12
    assert np.isfinite(certificate.beta_bar_stderr)


def test_single_shot_simulation_reports_empty_edges():
    table = simulate_counts(ghz(4), full_covering(4), chsh(), GHZ_X, 1, np.random.default_rng(0))
    with pytest.raises(ValidationError, match='total count zero'):
        ingest_counts(table, chsh())


def test_ingest_stderr_includes_branch_frequencies():
    balanced = [CountCell((0, 1), label, x, y, (40, 10, 10, 40) if label == '+' else (10, 40, 40, 10))
                for label in '+-' for x in range(2) for y in range(2)]
    certificate = ingest_counts(CountTable(tuple(balanced)), chsh(), relabel='none')
    result, = certificate.edge_results
    scores = np.array(result.branch_scores)
    correlator_only = np.sqrt(sum(0.5 ** 2 * 4 * (1 - 0.6 ** 2) / 100 for _ in scores))
    spread = (np.mean(scores ** 2) - np.mean(scores) ** 2) / 800
    assert result.stderr == pytest.approx(np.sqrt(correlator_only ** 2 + spread))
    assert result.stderr > correlator_only


def test_ingest_rejects_unknown_settings():
    cells = (CountCell((0, 1), 'none', 2, 0, (10, 0, 0, 10)),)
    with pytest.raises(ValidationError):
        ingest_counts(CountTable(cells), chsh())


def _ingested_error(shots, seed):
    rng = np.random.default_rng(seed)
    state = white_noise(ghz(4), 0.95)
    covering = full_covering(4)
    truth = run_ddic(state, covering, chsh(), GHZ_X).beta_bar
    certificate = ingest_counts(simulate_counts(state, covering, chsh(), GHZ_X, shots, rng), chsh())
    return certificate.beta_bar - truth, certificate.beta_bar_stderr


def test_simulated_truth():
    state = white_noise(ghz(4), 0.95)
    assert run_ddic(state, full_covering(4), chsh(), GHZ_X).beta_bar == pytest.approx(0.95 * CHSH_QUANTUM, abs=1e-9)


@pytest.mark.slow
@pytest.mark.parametrize('shots, seed', [(10 ** 4, 2023), (10 ** 6, 2024)])
def test_simulated_counts_match_truth(shots, seed):
    error, stderr = _ingested_error(shots, seed)
    assert abs(error) <= 5 * stderr


@pytest.mark.slow
def test_ingest_stderr_shrinks_with_shots():
    _, coarse = _ingested_error(10 ** 4, 7)
    _, fine = _ingested_error(10 ** 6, 8)
    assert 8.0 < coarse / fine < 12.0


def test_simulate_counts_requires_parity_mode():
    with pytest.raises(ValidationError):
        simulate_counts(ghz(3), full_covering(3), chsh(), MeasurementStrategy('auto'), 10, np.random.default_rng(0))
