import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sorbkit.isotherms import R_GAS, evaluate
from sorbkit.thermo import ThermoError, affinity, invert, isosteric_heat, vant_hoff

# Two-point hand oracle: ln(K2/K1) = -dH/R (1/T2 - 1/T1) with K1 = 1 at 298 K, K2 = 0.5 at 323 K.
# 1/298 - 1/323 = 25/96254; dH = R ln 0.5 * 96254/25 = 8.314 * (-0.693147...) * 3850.16
TWO_POINT_DH = -22187.800839930722


def vant_hoff_k(t, dh=-8000.0, k0=2.0):
    return k0 * math.exp(-dh / (R_GAS * t))


def test_exact_recovery():
    temps = [273.0, 298.0, 323.0, 348.0]
    res = vant_hoff([(t, vant_hoff_k(t)) for t in temps])
    assert res.dH == pytest.approx(-8000.0, rel=1e-9)
    assert res.K0 == pytest.approx(2.0, rel=1e-9)
    assert res.dS == pytest.approx(R_GAS * math.log(2.0), rel=1e-9)
    assert res.n_temps == 4 and res.r2 == pytest.approx(1.0)
    for t, g in res.dG_at.items():
        assert g == pytest.approx(res.dH - t * res.dS, rel=1e-9)


def test_identical_affinities_give_zero_enthalpy():
    assert vant_hoff([(298.0, 0.3), (323.0, 0.3)]).dH == 0.0


def test_two_point_hand_oracle():
    res = vant_hoff([(298.0, 1.0), (323.0, 0.5)])
    assert res.dH == pytest.approx(TWO_POINT_DH, rel=1e-12)
    assert res.dH < 0


def test_errors():
    with pytest.raises(ThermoError):
        vant_hoff([(298.0, 1.0), (323.0, 0.0)])
    with pytest.raises(ThermoError):
        vant_hoff([(298.0, 1.0), (298.0, 2.0)])


@settings(max_examples=40, deadline=None)
@given(st.permutations([273.0, 290.0, 305.0, 330.0, 350.0]), st.floats(0.01, 100.0))
def test_order_invariance_and_constant_scaling(order, c):
    rng_k = {t: vant_hoff_k(t) * (1 + 0.05 * math.sin(t)) for t in order}
    a = vant_hoff([(t, rng_k[t]) for t in order])
    b = vant_hoff(sorted(rng_k.items()))
    assert a.dH == b.dH and a.K0 == b.K0
    scaled = vant_hoff([(t, c * k) for t, k in rng_k.items()])
    assert scaled.dH == pytest.approx(a.dH, rel=1e-9, abs=1e-6)
    assert scaled.K0 == pytest.approx(c * a.K0, rel=1e-9)


def langmuir_family(dh=-8000.0, q_max=1.0, temps=(273.15, 298.15, 323.15)):
    return {t: ("langmuir", [q_max, vant_hoff_k(t, dh, 1e-3)]) for t in temps}


def test_isosteric_heat_langmuir_identity():
    loadings = np.linspace(0.1, 0.8, 8)
    curve = isosteric_heat(langmuir_family(), loadings)
    np.testing.assert_allclose(curve.qst, 8000.0, rtol=5e-3)
    assert max(curve.residuals) < 1e-8
    assert curve.temps_used == [273.15, 298.15, 323.15]


def test_temperature_independent_isotherms_give_zero():
    same = {t: ("sips", [2.0, 0.1, 1.3]) for t in (280.0, 300.0, 320.0)}
    curve = isosteric_heat(same, [0.2, 0.5])
    np.testing.assert_allclose(curve.qst, 0.0, atol=1e-12)


def test_unreachable_loading():
    with pytest.raises(ThermoError):
        isosteric_heat(langmuir_family(), [1.5])
    with pytest.raises(ThermoError):
        isosteric_heat({300.0: ("langmuir", [1.0, 0.1])}, [0.5])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(1e-4, 10.0), st.floats(0.02, 0.95), st.sampled_from(["langmuir", "sips", "toth"]))
def test_inversion_residual(q_max, k, frac, kind):
    theta = {"langmuir": [q_max, k], "sips": [q_max, k, 1.5], "toth": [q_max, 1.0 / k, 0.8]}[kind]
    p = invert(kind, theta, frac * q_max, 300.0)
    assert abs(float(evaluate(kind, theta, p, 300.0)) - frac * q_max) < 1e-8


def test_affinity_lookup():
    assert affinity(("langmuir", [1.0, 0.3])) == 0.3
    assert affinity(("freundlich", [0.7, 2.0])) == 0.7
    with pytest.raises(ThermoError):
        affinity(("bet", [1.0, 10.0, 300.0]))
