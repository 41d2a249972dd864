import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridframe.dcmodel import (LinearModel, UnobservableError, build_H, build_model,
                               noise_model, numerical_rank, simulate_dc, snr_to_ratio)
from gridframe.netmodel import (Bus, GridNetwork, Injection, Line, LineFlow, MeterLayout,
                                full_meter_layout)


def two_bus():
    return GridNetwork((Bus(0, 1), Bus(1, 2)), (Line(0, 1, 0.0, 0.2),), 0)


def test_two_bus_sign():
    net = two_bus()
    H = build_H(net, MeterLayout((LineFlow(0, 1), LineFlow(1, 0), Injection(0), Injection(1))))
    assert H.shape == (4, 1)
    assert H[:, 0] == pytest.approx([-5.0, 5.0, -5.0, 5.0])


def test_reactance_mode(net14):
    H = build_H(net14, susceptance="reactance")
    ln = net14.lines[3]
    row = 14 + 2 * 3
    full = np.zeros(14)
    full[net14.non_reference] = H[row]
    assert full[ln.from_bus] == pytest.approx(1.0 / ln.series_reactance)
    with pytest.raises(ValueError):
        build_H(net14, susceptance="bogus")


def test_injection_is_sum_of_outgoing(net14, model14):
    H = model14.H
    lay = model14.layout
    for i in range(14):
        out = [lay.row(LineFlow(i, j)) for j in net14.adjacency[i]]
        assert np.allclose(H[lay.row(Injection(i))], H[out].sum(axis=0), atol=1e-12)


def test_flow_rows(net14, model14, rng):
    x = rng.standard_normal(13)
    full = model14.full_state(x)
    z = model14.H @ x
    for k, ln in enumerate(net14.lines):
        want = ln.susceptance * (full[ln.from_bus] - full[ln.to_bus])
        assert z[14 + 2 * k] == pytest.approx(want, abs=1e-12)
        assert z[15 + 2 * k] == pytest.approx(-want, abs=1e-12)
        nnz = np.count_nonzero(model14.H[14 + 2 * k])
        touches_ref = net14.reference_bus in (ln.from_bus, ln.to_bus)
        assert nnz == (1 if touches_ref else 2)


def test_rank(model14):
    assert numerical_rank(model14.H) == 13
    assert model14.state_dim == 13


def test_unobservable_layout(net14):
    lay = MeterLayout(tuple(Injection(i) for i in range(5)))
    with pytest.raises(UnobservableError):
        build_H(net14, lay)


def test_sigma_bar_validation(net14, model14):
    with pytest.raises(ValueError):
        LinearModel(net14, model14.layout, model14.H, np.full(54, 0.5))
    with pytest.raises(ValueError):
        model14.with_noise(model14.sigma_bar, 0.0)
    assert model14.sigma_bar.sum() == pytest.approx(1.0, abs=1e-12)


def test_snr_ratio():
    assert snr_to_ratio(26) == pytest.approx(0.05012, abs=5e-6)
    assert snr_to_ratio(46) == pytest.approx(0.005012, abs=5e-7)


def test_noise_model_values():
    z = np.array([3.0, -4.0, 0.0, 5.0])
    sb, s2 = noise_model(4, 20.0, z)
    rms = np.sqrt(50.0 / 4)
    assert sb == pytest.approx(np.full(4, 0.25))
    assert s2 * sb[0] == pytest.approx((0.1 * rms) ** 2)
    sb, s2 = noise_model(4, 20.0, z, weights=np.array([1.0, 1.0, 1.0, 5.0]))
    assert sb.sum() == pytest.approx(1.0)
    assert sb[3] / sb[0] == pytest.approx(5.0)
    with pytest.raises(ValueError):
        noise_model(4, 20.0, np.zeros(4))
    with pytest.raises(ValueError):
        noise_model(4, float("inf"), z)


def test_simulate_dc_noiseless_limit(model14, rng):
    x = rng.standard_normal(13)
    m = model14.with_noise(model14.sigma_bar, 1e-30)
    assert np.allclose(simulate_dc(m, x, rng_seed=1), model14.H @ x, atol=1e-12)


def test_simulate_dc_variance(model14):
    sb = np.linspace(1.0, 3.0, 54)
    m = model14.with_noise(sb / sb.sum(), 2.0)
    rng = np.random.default_rng(5)
    draws = np.array([simulate_dc(m, np.zeros(13), rng_seed=rng) for _ in range(100_000)])
    ratio = draws.var(axis=0) / m.sigma
    assert np.all(np.abs(ratio - 1) < 0.05)


def test_simulate_dc_deterministic(model14):
    a = np.zeros(54)
    a[3] = 1.0
    z1 = simulate_dc(model14, np.ones(13), a, rng_seed=42)
    z2 = simulate_dc(model14, np.ones(13), a, rng_seed=42)
    assert np.array_equal(z1, z2)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=1e-3, max_value=10.0), st.floats(min_value=0.05, max_value=2.0))
def test_two_bus_scaling(x, r):
    net = GridNetwork((Bus(0, 1), Bus(1, 2)), (Line(0, 1, r, x),), 0)
    H = build_H(net, full_meter_layout(net))
    assert H[2, 0] == pytest.approx(-x / (r * r + x * x))
