from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nhsync.errors import DomainError, PreconditionError
from nhsync.network import (
    Edge,
    InputSignal,
    NetworkSpec,
    PhaseNode,
    PoincareNode,
    aggregate,
    all_to_all,
    collective_phase,
    effective_oscillator,
    find_clusters,
    simulate_network,
    sync_matrix,
    two_block_network,
)
from nhsync.sync import Locking, PhaseSeries, rotation_number
from nhsync.torus import TWO_PI

BLOCKS = [(0, 1, 2), (3, 4, 5)]


def test_spec_validation():
    with pytest.raises(DomainError):
        NetworkSpec((PhaseNode(1.0),), (Edge(0, 1, 0.1),))
    with pytest.raises(DomainError):
        NetworkSpec((PhaseNode(1.0), PhaseNode(1.0)), (Edge(0, 0, 0.1),))
    with pytest.raises(DomainError):
        NetworkSpec((PhaseNode(1.0), PoincareNode()), (Edge(0, 1, 0.1),))
    with pytest.raises(DomainError):
        NetworkSpec((PhaseNode(1.0),), input_gains=(1.0, 2.0))
    with pytest.raises(DomainError):
        InputSignal((1.0,), ())


def test_zero_coupling_poincare_rotation_numbers():
    omegas = (0.8, 1.0, 1.3)
    net = NetworkSpec(tuple(PoincareNode(w) for w in omegas), tuple(Edge(i, j, 0.0) for i in range(3) for j in range(3) if i != j))
    run = simulate_network(net, horizon=400.0)
    for i, w in enumerate(omegas):
        rho, _ = rotation_number(PhaseSeries(run.phases.times, run.phases.phases[i]))
        assert abs(rho - w / TWO_PI) < 1e-4


def test_zero_strength_decouples_exactly():
    nodes = (PoincareNode(1.0), PoincareNode(1.3))
    a = simulate_network(NetworkSpec(nodes, (Edge(0, 1, 0.0), Edge(1, 0, 0.0))), [1.0, 0.0, 0.5, 0.5], 20.0)
    b = simulate_network(NetworkSpec(nodes), [1.0, 0.0, 0.5, 0.5], 20.0)
    assert np.array_equal(a.trajectory.states, b.trajectory.states)


def test_identical_diffusive_pair_synchronises():
    nodes = (PoincareNode(1.0), PoincareNode(1.0))
    net = NetworkSpec(nodes, (Edge(0, 1, 0.3), Edge(1, 0, 0.3)))
    run = simulate_network(net, [1.0, 0.0, 0.0, 1.0], 60.0)
    d = run.phases.phases[1] - run.phases.phases[0]
    assert abs(math.remainder(d[-1], TWO_PI)) < 1e-6


def test_two_block_sync_matrix_and_clusters():
    run = simulate_network(two_block_network(), horizon=300.0)
    M = sync_matrix(run.phases, m_max=1, n_max=1)
    for i, j in itertools.combinations(range(6), 2):
        same = (i < 3) == (j < 3)
        assert (M[i][j] is not None) == same
        if same:
            assert (M[i][j].m, M[i][j].n) == (1, 1)
    assert find_clusters(M) == BLOCKS


def test_three_two_resonance_entry():
    nodes = (PhaseNode(1.0), PhaseNode(1.52))
    net = NetworkSpec(nodes, (Edge(1, 0, 0.1, (3, 2)), Edge(0, 1, 0.1, (2, 3))))
    run = simulate_network(net, horizon=400.0)
    M = sync_matrix(run.phases)
    assert (M[0][1].m, M[0][1].n) == (2, 3)
    assert (M[1][0].m, M[1][0].n) == (3, 2)


def test_all_identical_network_fully_locked():
    net = NetworkSpec(tuple(PhaseNode(1.0) for _ in range(4)), tuple(all_to_all(range(4), 0.2)))
    run = simulate_network(net, [0.0, 0.5, 1.0, 1.5], 200.0)
    M = sync_matrix(run.phases)
    assert all(M[i][j] == Locking(1, 1, M[i][j].residual) for i in range(4) for j in range(4) if i != j)
    assert find_clusters(M) == [(0, 1, 2, 3)]


def test_find_clusters_trivial_cases():
    empty = [[None] * 4 for _ in range(4)]
    assert find_clusters(empty) == [(0,), (1,), (2,), (3,)]
    M = [[None] * 3 for _ in range(3)]
    M[0][2] = M[2][0] = Locking(2, 3, 0.1)
    assert find_clusters(M) == [(0, 2), (1,)]
    assert find_clusters(M, require_ratio=(1, 1)) == [(0,), (1,), (2,)]


def _closure(adj):
    n = len(adj)
    reach = [[i == j or adj[i][j] for j in range(n)] for i in range(n)]
    for k, i, j in itertools.product(range(n), repeat=3):
        if reach[i][k] and reach[k][j]:
            reach[i][j] = True
    return sorted({tuple(j for j in range(n) if reach[i][j]) for i in range(n)})


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8).flatmap(lambda n: st.lists(st.booleans(), min_size=n * n, max_size=n * n)))
def test_property_find_clusters_is_transitive_closure(bits):
    n = int(round(math.sqrt(len(bits))))
    adj = [[False] * n for _ in range(n)]
    for i, j in itertools.product(range(n), repeat=2):
        if i < j and bits[i * n + j]:
            adj[i][j] = adj[j][i] = True
    M = [[Locking(1, 1, 0.0) if adj[i][j] else None for j in range(n)] for i in range(n)]
    assert find_clusters(M) == _closure(adj)


def test_collective_phase_circular_mean():
    t = np.linspace(0, 10, 101)
    ps = PhaseSeries(t, np.vstack([t, t + 0.2, t - 0.2]))
    assert np.allclose(collective_phase(ps, (0, 1, 2)), t, atol=1e-12)


def test_effective_oscillator_singleton_and_pair():
    net = NetworkSpec((PhaseNode(1.0), PhaseNode(1.0)), (Edge(0, 1, 0.2), Edge(1, 0, 0.2)))
    run = simulate_network(net, [0.0, 1.0], 300.0)
    single = effective_oscillator((0,), run.phases, net)
    rho, _ = rotation_number(PhaseSeries(run.phases.times, run.phases.phases[0]))
    assert abs(single.omega_hat - TWO_PI * rho) < 1e-12
    pair = effective_oscillator((0, 1), run.phases, net)
    assert abs(pair.omega_hat - 1.0) < 1e-3


def test_effective_oscillator_refuses_unlocked():
    run = simulate_network(two_block_network(), horizon=200.0)
    with pytest.raises(PreconditionError):
        effective_oscillator((0, 3), run.phases)


def test_effective_oscillator_input_response():
    u = InputSignal((0.05,), (0.3,))
    net = NetworkSpec((PhaseNode(1.0), PhaseNode(1.02)), tuple(all_to_all((0, 1), 0.3)), (1.0, 1.0), u)
    run = simulate_network(net, horizon=300.0)
    eo = effective_oscillator((0, 1), run.phases, net, fit_fraction=0.5)
    assert eo.r_squared >= 0.9
    assert abs(eo.input_response - 1.0) < 0.05


def test_aggregate_two_block():
    tree = aggregate(two_block_network(), horizon=300.0)
    assert tree.partitions == [BLOCKS]
    assert tree.levels[0].validated and tree.levels[0].validation_error <= 0.15
    assert tree.check_monotone()
    assert not tree.chimera


def test_aggregate_fully_locked_depth_one():
    net = NetworkSpec(tuple(PhaseNode(w) for w in (1.0, 1.01, 0.99)), tuple(all_to_all(range(3), 0.3)))
    tree = aggregate(net, horizon=200.0)
    assert tree.partitions == [[(0, 1, 2)]]


def test_aggregate_threshold_oracle():
    lv = aggregate(two_block_network(), horizon=300.0).levels[0]
    K, nu = lv.couplings, lv.intercepts
    # relative phase obeys an Adler equation; fitted couplings scale linearly with inter
    k_star = 0.02 * abs(nu[1] - nu[0]) / (K[0, 1] + K[1, 0])
    below = aggregate(two_block_network(inter=0.8 * k_star), horizon=300.0)
    above = aggregate(two_block_network(inter=1.2 * k_star), horizon=300.0)
    assert below.partitions == [BLOCKS]
    assert above.partitions == [BLOCKS, [(0, 1, 2, 3, 4, 5)]]


def test_aggregate_relabeling_equivariance():
    perm = [3, 0, 5, 1, 4, 2]
    net = two_block_network()
    tree = aggregate(net.permuted(perm), horizon=300.0)
    expected = sorted(tuple(sorted(perm[i] for i in b)) for b in BLOCKS)
    assert sorted(tree.partitions[0]) == expected


def test_aggregate_horizon_check():
    with pytest.raises(DomainError):
        aggregate(two_block_network(), horizon=40.0, validation_horizon=50.0)
