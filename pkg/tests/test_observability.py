import numpy as np
import pytest

from gridframe.dcmodel import build_model
from gridframe.netmodel import Injection, LineFlow
from gridframe.observability import (Cut, contract_once, critical_set_from_cut,
                                     find_cuts_contraction, half_partition, is_critical_set,
                                     is_observable, null_space_basis, rank_without)

BUS3_SET = "2-3,3-2,3-4,4-3,2,3,4"


@pytest.fixture(scope="module")
def cuts14(net14):
    return find_cuts_contraction(net14, 20000, 2024)


def test_bus3_set_is_critical(net14, model14):
    S = net14.meters(BUS3_SET)
    assert rank_without(model14, S) == 12
    assert is_critical_set(S, model14)
    for k in range(len(S)):
        assert not is_critical_set(S[:k] + S[k + 1:], model14)
    assert not is_critical_set([], model14)


def test_superset_not_critical(net14, model14):
    S = net14.meters(BUS3_SET + ",5")
    assert rank_without(model14, S) == 12
    assert not is_critical_set(S, model14)


def test_null_space_dimension_one(net14, model14):
    S = net14.meters(BUS3_SET)
    keep = np.setdiff1d(np.arange(model14.m), model14.rows(S))
    N = null_space_basis(model14.H[keep])
    assert N.shape == (13, 1)
    assert np.abs(model14.H[keep] @ N).max() < 1e-10
    # the lost direction moves bus 3 alone
    full = model14.full_state(N[:, 0])
    moved = np.flatnonzero(np.abs(full) > 1e-9)
    assert [net14.buses[k].name for k in moved] == [3]


def test_observable_helper(model14):
    assert is_observable(model14.H)
    assert not is_observable(model14.H[:0])
    assert not is_observable(model14.H[:12])


def test_contraction_gives_two_sides(net14):
    edges = np.array([(ln.from_bus, ln.to_bus) for ln in net14.lines])
    roots = contract_once(net14.n_buses, edges, np.random.default_rng(0))
    assert len(set(roots.tolist())) == 2


def test_cut_counts_and_uniqueness(net14, cuts14):
    assert len(cuts14) >= 100
    assert len({c.side_a for c in cuts14}) == len(cuts14)
    for c in cuts14:
        assert net14.reference_bus in c.side_a
        assert c.side_a | c.side_b == frozenset(range(14))
        assert c.sides_connected(net14)


def test_every_cut_set_is_critical(net14, model14, cuts14):
    for c in cuts14[:60]:
        assert is_critical_set(critical_set_from_cut(c, net14), model14)


def test_bus3_cut_found(net14, cuts14):
    b3 = net14.bus_by_name[3]
    c = next(c for c in cuts14 if c.side_b == frozenset({b3}))
    assert set(critical_set_from_cut(c, net14)) == set(net14.meters(BUS3_SET))


def test_cut_counts_118(net118):
    cuts = find_cuts_contraction(net118, 20000, 2024)
    assert len(cuts) >= 200
    b21 = net118.bus_by_name[21]
    side = frozenset({b21})
    assert any(c.side_b == side for c in cuts)


def test_bus21_set_critical(net118):
    m = build_model(net118)
    S = net118.meters("20-21,21-20,21-22,22-21,20,21,22")
    assert is_critical_set(S, m)


def test_half_partition_bus3(net14):
    b3 = net14.bus_by_name[3]
    c = Cut.from_side(net14, frozenset(range(14)) - {b3})
    S = critical_set_from_cut(c, net14)
    part = half_partition(S, c, net14)
    assert part.within_bound
    assert len(part.s1) == 4 and len(part.s2) == 3
    assert all(isinstance(m, LineFlow) for m in part.s1)
    assert set(part.s1) | set(part.s2) == set(S)


def test_cut_side_validation(net14):
    with pytest.raises(ValueError):
        Cut.from_side(net14, frozenset(range(14)))
    with pytest.raises(ValueError):
        Cut.from_side(net14, frozenset())


def test_disconnected_side_rejected(net14):
    b = net14.bus_by_name
    c = Cut.from_side(net14, frozenset(range(14)) - {b[3], b[8]})
    with pytest.raises(ValueError):
        critical_set_from_cut(c, net14)


def test_contraction_deterministic(net14):
    a = find_cuts_contraction(net14, 500, 7)
    b = find_cuts_contraction(net14, 500, 7)
    assert [c.side_a for c in a] == [c.side_a for c in b]
    with pytest.raises(ValueError):
        find_cuts_contraction(net14, 0, 7)


def test_injection_label_in_set(net14):
    S = net14.meters(BUS3_SET)
    assert Injection(net14.bus_by_name[3]) in S
