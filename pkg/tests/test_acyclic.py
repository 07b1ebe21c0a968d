"""Tree protocol: K-slot increments, per-neighbor corrections, invariants."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dactd.errors import ConfigurationError
from dactd.protocol import (AcyclicProtocolDriver, acyclic_step,
                            build_acyclic_states, check_neighborhood_invariant,
                            make_acyclic_state, run_acyclic_exchange,
                            run_general_exchange)
from dactd.topology import GraphSchedule, latency_bound
from dactd.transport import Channel, ChannelModel


def _tree_from_parents(parents: dict[int, int], n: int) -> GraphSchedule:
    edges = set()
    for child, parent in parents.items():
        edges.add((child, parent))
        edges.add((parent, child))
    return GraphSchedule.static(n, edges)


# ---------------------------------------------------------------------------
# Applicability gate
# ---------------------------------------------------------------------------

def test_cycle_is_rejected():
    with pytest.raises(ConfigurationError):
        build_acyclic_states(GraphSchedule.ring(4), K=3)


def test_asymmetric_edges_are_rejected():
    g = GraphSchedule.static(2, {(1, 2)})
    with pytest.raises(ConfigurationError):
        build_acyclic_states(g, K=1)


def test_disconnected_forest_is_rejected():
    g = GraphSchedule.static(4, {(1, 2), (2, 1), (3, 4), (4, 3)})
    with pytest.raises(ConfigurationError):
        build_acyclic_states(g, K=3)


def test_time_varying_schedule_is_rejected():
    g = GraphSchedule(2, [{(1, 2), (2, 1)}, set()])
    with pytest.raises(ConfigurationError):
        build_acyclic_states(g, K=1)


def test_step_requires_exactly_the_neighbor_messages():
    st_ = make_acyclic_state(1, 2, K=1, neighbors=(2,))
    with pytest.raises(ValueError):
        acyclic_step(st_, 0.5, {})
    with pytest.raises(ValueError):
        acyclic_step(st_, 0.5, {2: np.zeros(1), 3: np.zeros(1)})


def test_increment_shape_is_checked():
    st_ = make_acyclic_state(1, 2, K=2, neighbors=(2,))
    with pytest.raises(ValueError):
        acyclic_step(st_, 0.5, {2: np.zeros(3)})


# ---------------------------------------------------------------------------
# Read-out values
# ---------------------------------------------------------------------------

def test_two_agents_reach_the_pair_mean_after_two_ticks():
    g = GraphSchedule.line(2)
    K = latency_bound(g, 0, 1)
    assert K == 1
    deltas = np.tile([0.7, -0.3], (6, 1))
    res = run_acyclic_exchange(g, deltas, K)
    assert res.readouts[K:] == pytest.approx(0.2, abs=1e-15)


def test_single_agent_reads_its_own_delayed_value():
    g = GraphSchedule.static(1, set())
    deltas = np.arange(5.0).reshape(5, 1)
    res = run_acyclic_exchange(g, deltas, K=1)
    assert res.readouts[0, 0] == 0.0
    assert (res.readouts[1:, 0] == deltas[:-1, 0]).all()


def test_line_of_five_matches_the_centralized_mean():
    g = GraphSchedule.line(5)
    K = latency_bound(g, 0, 1)
    deltas = np.random.default_rng(12).normal(size=(K + 10, 5))
    res = run_acyclic_exchange(g, deltas, K)
    assert np.abs(res.readouts[K:] - res.reference[K:, None]).max() <= 1e-12
    assert res.payload_slots == K


def test_vector_valued_payloads_match_too():
    g = GraphSchedule.star(4)
    K = latency_bound(g, 0, 1)
    deltas = np.random.default_rng(3).normal(size=(K + 5, 4, 6))
    res = run_acyclic_exchange(g, deltas, K)
    assert np.abs(res.readouts[K:] - res.reference[K:, None, :]).max() <= 1e-12


# ---------------------------------------------------------------------------
# Internal partial sums
# ---------------------------------------------------------------------------

def test_star_center_level_one_is_the_full_first_hop_sum():
    g = GraphSchedule.star(5)
    K = latency_bound(g, 0, 1)
    deltas = np.random.default_rng(8).normal(size=(6, 5))
    res = run_acyclic_exchange(g, deltas, K, collect_snapshots=True)
    for w in range(1, 6):
        level_sums, _ = res.snapshots[w][1]
        assert level_sums[1] == pytest.approx(deltas[w - 1].sum(), abs=1e-12)


def test_correction_toward_a_covering_neighbor_is_zero():
    # Line 1-2-3: everything agent 1 sees at distance 1 is already within
    # distance 0 of neighbor 2, so the overlap correction must vanish.
    g = GraphSchedule.line(3)
    K = latency_bound(g, 0, 1)
    deltas = np.random.default_rng(2).normal(size=(7, 3))
    res = run_acyclic_exchange(g, deltas, K, collect_snapshots=True)
    for snap in res.snapshots:
        _, corrections = snap[1]
        assert corrections[2][1] == pytest.approx(0.0, abs=1e-12)


def test_partial_sums_equal_neighborhood_sums_on_a_fixed_tree():
    parents = {2: 1, 3: 1, 4: 2, 5: 2, 6: 3, 7: 6}
    g = _tree_from_parents(parents, 7)
    K = latency_bound(g, 0, 1)
    deltas = np.random.default_rng(5).normal(size=(K + 6, 7))
    res = run_acyclic_exchange(g, deltas, K, collect_snapshots=True)
    worst = check_neighborhood_invariant(g, deltas, res.snapshots, K)
    assert worst <= 1e-9


@st.composite
def random_trees(draw):
    n = draw(st.integers(min_value=2, max_value=9))
    parents = {child: draw(st.integers(min_value=1, max_value=child - 1))
               for child in range(2, n + 1)}
    return _tree_from_parents(parents, n)


@settings(max_examples=25, deadline=None)
@given(random_trees(), st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_invariant_and_read_out_hold_on_random_trees(g, seed):
    K = latency_bound(g, 0, 1)
    deltas = np.random.default_rng(seed).normal(size=(K + 4, g.n_agents))
    res = run_acyclic_exchange(g, deltas, K, collect_snapshots=True)
    assert np.abs(res.readouts[K:] - res.reference[K:, None]).max() <= 1e-9
    assert check_neighborhood_invariant(g, deltas, res.snapshots, K) <= 1e-9


# ---------------------------------------------------------------------------
# Agreement with the windowed protocol
# ---------------------------------------------------------------------------

def test_both_protocols_agree_on_a_tree_with_unit_delay():
    parents = {2: 1, 3: 2, 4: 2, 5: 4}
    g = _tree_from_parents(parents, 5)
    K = latency_bound(g, 0, 1)
    deltas = np.random.default_rng(31).normal(size=(K + 8, 5))
    ch = Channel(ChannelModel(t1=0, t2=1, delay_law="fixed"), g)
    general = run_general_exchange(g, ch, deltas, K)
    acyclic = run_acyclic_exchange(g, deltas, K)
    assert np.abs(general.readouts - acyclic.readouts).max() <= 1e-12
    assert general.payload_slots == K * 5
    assert acyclic.payload_slots == K


def test_driver_snapshot_copies_do_not_alias_state():
    g = GraphSchedule.line(3)
    driver = AcyclicProtocolDriver(g, K=2)
    driver.tick(0, np.array([1.0, 2.0, 3.0]))
    snap = driver.snapshot()
    snap[1][0][:] = 99.0
    assert driver.states[1].level_sums[0] == 1.0
