import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from craoi.params import (
    LN2,
    ChannelActivity,
    OperatingPoint,
    ParameterError,
    RadioConfig,
    SdTraffic,
    dbm_to_watt,
    effective_noise,
    power_to_time,
    shannon_rate,
    time_to_power,
)


def fig3_radio():
    return RadioConfig(L=300.0)


def test_dbm_conversion():
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert dbm_to_watt(-110.0) == pytest.approx(1e-14, rel=1e-12)


@pytest.mark.parametrize(
    "L, expected",
    [(1.0, 1e-14), (250.0, 1.5625e-7), (300.0, 2.7e-7)],
)
def test_effective_noise_examples(L, expected):
    assert effective_noise(RadioConfig(L=L)) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("theta", [2.0, 3.0, 3.7])
def test_effective_noise_scales_as_L_to_theta(theta):
    a = effective_noise(RadioConfig(L=120.0, theta=theta))
    b = effective_noise(RadioConfig(L=240.0, theta=theta))
    assert b / a == pytest.approx(2.0**theta, rel=1e-13)


def test_unit_rate_gives_one_second():
    cfg = RadioConfig(L=1.0, B=1000.0)
    n0b = effective_noise(cfg) * cfg.B
    traffic = SdTraffic(lam=1.0, D=cfg.B)
    assert power_to_time(n0b, cfg, traffic) == pytest.approx(1.0, rel=1e-14)


def test_t_min_fig3_value():
    cfg, traffic = fig3_radio(), SdTraffic(lam=200.0, D=400.0)
    # independent evaluation: C = B log2(1 + Pmax / (N0 B)) with N0 = 1e-14 * 300**3
    n0 = 1e-14 * 300.0**3
    rate = 180e3 * math.log2(1 + 0.1 / (n0 * 180e3))
    assert power_to_time(0.1, cfg, traffic) == pytest.approx(400.0 / rate, rel=1e-12)
    assert power_to_time(0.1, cfg, traffic) == pytest.approx(0.0013782027381873414, rel=1e-12)


def test_round_trip_log_grid():
    cfg, traffic = fig3_radio(), SdTraffic(lam=200.0, D=400.0)
    Pt = np.geomspace(1e-9, cfg.Pmax, 20)
    back = time_to_power(power_to_time(Pt, cfg, traffic), cfg, traffic)
    np.testing.assert_allclose(back, Pt, rtol=1e-10)


def test_time_to_power_boundaries():
    cfg, traffic = fig3_radio(), SdTraffic(lam=200.0, D=400.0)
    tmin = power_to_time(cfg.Pmax, cfg, traffic)
    assert time_to_power(tmin, cfg, traffic) == pytest.approx(cfg.Pmax, rel=1e-12)
    p2 = time_to_power(2 * tmin, cfg, traffic)
    assert 0 < p2 < cfg.Pmax
    assert power_to_time(p2, cfg, traffic) == pytest.approx(2 * tmin, rel=1e-12)
    assert 0 < time_to_power(1e6, cfg, traffic) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(0.0, 4.0))
def test_identity_across_time_range(log_offset, span):
    cfg, traffic = fig3_radio(), SdTraffic(lam=200.0, D=400.0)
    tmin = power_to_time(cfg.Pmax, cfg, traffic)
    t = tmin * 10.0 ** (span * (1 + log_offset / 3) / 2)
    assert power_to_time(time_to_power(t, cfg, traffic), cfg, traffic) == pytest.approx(t, rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e-10, 10.0), min_size=2, max_size=30, unique=True))
def test_power_to_time_strictly_decreasing(powers):
    cfg, traffic = fig3_radio(), SdTraffic(lam=10.0, D=400.0)
    Pt = np.sort(np.array(powers))
    Pt = Pt[np.diff(Pt, prepend=0) > Pt * 1e-12]
    t = power_to_time(Pt, cfg, traffic)
    assert np.all(np.diff(t) < 0)


def test_operating_point_consistency():
    cfg, traffic = RadioConfig(L=250.0), SdTraffic(lam=10.0, D=400.0)
    a = OperatingPoint.from_power(0.03, cfg, traffic)
    b = OperatingPoint.from_time(a.tP, cfg, traffic)
    assert a.C == pytest.approx(float(shannon_rate(0.03, cfg)), rel=1e-12)
    assert a.tP == pytest.approx(traffic.D / a.C, rel=1e-12)
    assert b.Pt == pytest.approx(a.Pt, rel=1e-12)
    assert b.C == pytest.approx(a.C, rel=1e-12)


def test_feasibility_equivalence():
    cfg, traffic = RadioConfig(L=250.0), SdTraffic(lam=10.0, D=400.0)
    tmin = power_to_time(cfg.Pmax, cfg, traffic)
    for t in np.geomspace(tmin / 10, tmin * 10, 41):
        assert (time_to_power(t, cfg, traffic) <= cfg.Pmax * (1 + 1e-12)) == (t >= tmin * (1 - 1e-12))


def test_ratio_and_constructors():
    ch = ChannelActivity.from_ratio(2.0, 3.0)
    assert ch.v == 6.0 and ch.k == 3.0
    assert ChannelActivity(np.float64(1.0), np.int64(2)).k == 2.0


@pytest.mark.parametrize(
    "build",
    [
        lambda: ChannelActivity(0.0, 1.0),
        lambda: ChannelActivity(1.0, -1.0),
        lambda: ChannelActivity(1.0, math.inf),
        lambda: ChannelActivity(math.nan, 1.0),
        lambda: SdTraffic(0.0, 1.0),
        lambda: SdTraffic(1.0, 0.0),
        lambda: RadioConfig(L=0.0),
        lambda: RadioConfig(L=1.0, B=0.0),
        lambda: RadioConfig(L=1.0, Pmax=0.0),
        lambda: RadioConfig(L=1.0, Ps=-1e-3),
        lambda: RadioConfig(L=1.0, Pc=-1e-3),
        lambda: RadioConfig(L=1.0, theta=0.0),
        lambda: RadioConfig(L=1e200, theta=3.0),
    ],
)
def test_construction_rejects_invalid(build):
    with pytest.raises(ParameterError):
        build()


def test_rejects_nonpositive_power_and_time():
    cfg, traffic = RadioConfig(L=250.0), SdTraffic(lam=10.0, D=400.0)
    with pytest.raises(ParameterError):
        power_to_time(0.0, cfg, traffic)
    with pytest.raises(ParameterError):
        power_to_time(np.array([0.1, -1.0]), cfg, traffic)
    with pytest.raises(ParameterError):
        time_to_power(0.0, cfg, traffic)


def test_ln2_constant():
    assert LN2 == math.log(2)
