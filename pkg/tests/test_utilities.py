import numpy as np
import pytest

from indiffmarket.utilities import (
    MakerPanel,
    UtilitySpec,
    exponential,
    panel,
    sum_of_exponentials,
)

MIX = sum_of_exponentials([1.0, 1.0], [1.0, 2.0])


def test_exponential_value_at_zero():
    assert exponential(1.0).value(0.0) == pytest.approx(-1.0)
    assert exponential(2.0).value(0.0) == pytest.approx(-0.5)


def test_mixture_value_direct_arithmetic():
    # -(w1 e^{-g1 x}/g1 + w2 e^{-g2 x}/g2) at x=1
    expected = -(np.exp(-1.0) + np.exp(-2.0) / 2.0)
    assert MIX.value(1.0) == pytest.approx(expected, rel=1e-15)


def test_exponential_risk_aversion_constant():
    spec = exponential(1.0)
    for x in (-4.0, 0.0, 3.0):
        assert spec.risk_aversion(x) == pytest.approx(1.0)


def test_exponential_marginal_at_zero():
    # u(x) = -e^{-2x}/2 so u'(0) = 1
    assert exponential(2.0).marginal(0.0) == pytest.approx(1.0)


def test_mixture_risk_aversion_at_zero():
    # u' = sum w_i e^{-g_i x}, u'' = -sum w_i g_i e^{-g_i x}:
    # a(0) = (1 + 2)/(1 + 1) for w=(1,1), g=(1,2)
    assert MIX.risk_aversion(0.0) == pytest.approx(3.0 / 2.0)


def test_inverse_marginal_fixed_points():
    assert exponential(1.0).inverse_marginal(1.0) == pytest.approx(0.0)
    assert exponential(2.0).inverse_marginal(1.0) == pytest.approx(0.0)
    # u'(0) = 1 + 1 = 2 for the mixture
    assert MIX.inverse_marginal(2.0) == pytest.approx(0.0, abs=1e-12)


def test_inverse_marginal_rejects_nonpositive():
    with pytest.raises(ValueError):
        exponential(1.0).inverse_marginal(0.0)
    with pytest.raises(ValueError):
        MIX.inverse_marginal(-2.0)


@pytest.mark.parametrize("spec", [
    exponential(1.0),
    exponential(2.0),
    exponential(0.5),
    MIX,
    sum_of_exponentials([0.3, 0.7, 1.1], [0.5, 1.0, 3.0]),
])
def test_sign_and_aversion_bounds(spec):
    rng = np.random.default_rng(0)
    x = rng.uniform(-20.0, 20.0, size=1000)
    c = spec.bound_constant
    assert np.all(spec.value(x) < 0)
    assert np.all(spec.marginal(x) > 0)
    assert np.all(spec.second_derivative(x) < 0)
    a = spec.risk_aversion(x)
    assert np.all(a >= 1.0 / c - 1e-12)
    assert np.all(a <= c + 1e-12)


@pytest.mark.parametrize("spec", [exponential(1.7), MIX])
def test_inverse_marginal_roundtrip(spec):
    rng = np.random.default_rng(1)
    x = rng.uniform(-8.0, 8.0, size=200)
    back = spec.inverse_marginal(spec.marginal(x))
    assert np.max(np.abs(back - x)) < 1e-10


@pytest.mark.parametrize("spec", [exponential(1.0), exponential(3.0), MIX])
def test_marginal_matches_finite_differences(spec):
    rng = np.random.default_rng(2)
    x = rng.uniform(-10.0, 10.0, size=50)
    h = 1e-5
    up = spec.marginal(x)
    fd = (spec.value(x + h) - spec.value(x - h)) / (2 * h)
    assert np.max(np.abs(up - fd) / (1.0 + np.abs(up))) < 1e-6


def test_utility_increases_to_zero():
    for spec in (exponential(1.0), exponential(2.5), MIX):
        x = np.linspace(-5.0, 30.0, 400)
        u = spec.value(x)
        assert np.all(np.diff(u) > 0)
    for g in (1.0, 1.5, 4.0):
        spec = exponential(g)
        assert spec.value(40.0) > -1e-10 * abs(spec.value(0.0))


@pytest.mark.parametrize("spec", [exponential(0.8), MIX])
def test_inverse_value_roundtrip(spec):
    rng = np.random.default_rng(3)
    x = rng.uniform(-6.0, 6.0, size=100)
    back = spec.inverse_value(spec.value(x))
    assert np.max(np.abs(back - x)) < 1e-10
    with pytest.raises(ValueError):
        spec.inverse_value(0.5)


def test_log_marginal_and_aversion_agree_with_direct():
    rng = np.random.default_rng(4)
    x = rng.uniform(-12.0, 12.0, size=300)
    lm, a = MIX.log_marginal_and_aversion(x)
    assert np.max(np.abs(lm - np.log(MIX.marginal(x)))) < 1e-12
    assert np.max(np.abs(a - MIX.risk_aversion(x))) < 1e-12
    # stays finite far outside the overflow range of the direct formula
    lm_far, a_far = MIX.log_marginal_and_aversion(np.array([-500.0, 500.0]))
    assert np.all(np.isfinite(lm_far)) and np.all(np.isfinite(a_far))


def test_marginal_and_aversion_pair():
    x = np.array([-1.0, 0.0, 2.0])
    up, a = MIX.marginal_and_aversion(x)
    assert np.allclose(up, MIX.marginal(x))
    assert np.allclose(a, MIX.risk_aversion(x))


def test_spec_validation():
    with pytest.raises(ValueError):
        UtilitySpec(weights=(1.0,), rates=(-1.0,))
    with pytest.raises(ValueError):
        UtilitySpec(weights=(1.0, 2.0), rates=(1.0,))
    with pytest.raises(ValueError):
        MIX.gamma


def test_bound_constant_symmetrized():
    # rates below one push c through the reciprocal
    assert exponential(0.25).bound_constant == pytest.approx(4.0)
    assert exponential(3.0).bound_constant == pytest.approx(3.0)
    assert MIX.bound_constant == pytest.approx(2.0)


def test_panel_properties():
    p = panel(exponential(1.0), exponential(2.0))
    assert p.size == 2
    assert p.all_exponential
    assert np.allclose(p.gammas, [1.0, 2.0])
    assert p.bound_constant == pytest.approx(2.0)
    q = panel(MIX, exponential(0.2))
    assert not q.all_exponential
    assert q.bound_constant == pytest.approx(5.0)
    with pytest.raises(ValueError):
        MakerPanel(makers=())
