import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from bvp_solver import PowerProfile2D
from objectives import (
    SCENARIOS,
    AsymmetryObjective,
    TargetDeviationObjective,
    WeightedExcursionObjective,
    WeightVector,
    asymmetry_at,
    asymmetry_per_channel,
    cost_breakdown,
    end_gain_deviation,
    flat_target,
    max_asymmetry,
    per_channel_excursion,
    power_excursion,
    sinusoidal_symmetric_target,
    spectrum_excursion,
    target_deviation,
    weighted_cost,
)
from utils import InvalidArgumentError, InvalidStateError

PURE_DECAY_ASYMMETRY = 1.0 - 10.0 ** -0.8


# ========================================================================
# WEIGHTS
# ========================================================================

def test_weight_vector_must_sum_to_one():
    WeightVector(m0=1.0, m1=0.0, m2=0.0)
    with pytest.raises(ValidationError):
        WeightVector(m0=0.5, m1=0.4, m2=0.0)
    with pytest.raises(ValidationError):
        WeightVector(m0=1.5, m1=-0.5, m2=0.0)


def test_weight_vector_parse():
    m = WeightVector.parse("2/3,1/6,1/6")
    assert_allclose(m.as_array(), SCENARIOS['m3'].as_array())
    exact = WeightVector.parse("0.5, 0.25, 0.25")
    assert_allclose(exact.as_array(), [0.5, 0.25, 0.25])
    # near-misses are rejected, not rescaled
    with pytest.raises(ValueError):
        WeightVector.parse("0.6667, 0.1667, 0.1667")
    with pytest.raises(ValueError):
        WeightVector.parse("1,0,0.0009")
    with pytest.raises(ValueError):
        WeightVector.parse("1,1,1")
    with pytest.raises(InvalidArgumentError):
        WeightVector.parse("1,0")


def test_scenarios():
    assert_allclose(SCENARIOS['m1'].as_array(), [1, 0, 0])
    assert_allclose(SCENARIOS['m2'].as_array(), [2 / 3, 1 / 3, 0])
    assert_allclose(SCENARIOS['m3'].as_array(), [2 / 3, 1 / 6, 1 / 6])


# ========================================================================
# EXCURSIONS
# ========================================================================

def test_excursions_of_small_profile(small_profile):
    assert power_excursion(small_profile) == pytest.approx(18.0)
    assert spectrum_excursion(small_profile) == pytest.approx(16.0)
    assert end_gain_deviation(small_profile) == pytest.approx(16.0)
    assert_allclose(per_channel_excursion(small_profile), [2.0, 2.0, 16.0])


def test_weighted_cost(small_profile):
    assert weighted_cost(small_profile, SCENARIOS['m1']) == pytest.approx(18.0)
    assert weighted_cost(small_profile, SCENARIOS['m3']) == pytest.approx(12.0 + 16.0 / 3.0)
    with pytest.raises(InvalidArgumentError):
        weighted_cost(small_profile, [1.0, 0.0, 0.0])


def test_flat_profile_costs_zero():
    flat = flat_target(level_dbm=-3.0)
    assert flat.shape == (40, 161)
    breakdown = cost_breakdown(flat, SCENARIOS['m3'])
    assert breakdown.j0 == breakdown.j1 == breakdown.j2 == 0.0
    assert breakdown.weighted == 0.0
    assert breakdown.max_asymmetry == pytest.approx(0.0, abs=1e-15)


def test_excursion_bounds_hold_for_random_profiles():
    rng = np.random.default_rng(0)
    for _ in range(20):
        values = rng.normal(0.0, 3.0, size=(6, 9))
        p = PowerProfile2D(values, np.arange(6) * 0.1 + 193.0, np.linspace(0, 80, 9))
        j0, j1, j2 = power_excursion(p), spectrum_excursion(p), end_gain_deviation(p)
        assert 0 <= j1 <= j0
        assert 0 <= j2 <= j0


def test_target_deviation(small_profile):
    target = small_profile.with_values(np.zeros(small_profile.shape))
    assert target_deviation(small_profile, target) == pytest.approx(16.0)
    other = PowerProfile2D(np.zeros((2, 5)), [193.0, 193.1], np.linspace(0, 80, 5))
    with pytest.raises(InvalidArgumentError):
        target_deviation(small_profile, other)


# ========================================================================
# ASYMMETRY
# ========================================================================

def test_pure_decay_asymmetry(decay_profile):
    assert_allclose(asymmetry_per_channel(decay_profile), PURE_DECAY_ASYMMETRY, rtol=1e-9)
    assert max_asymmetry(decay_profile) == pytest.approx(0.841511, abs=1e-5)


def test_symmetric_channels_have_zero_asymmetry(small_profile):
    asym = asymmetry_per_channel(small_profile)
    assert asym[0] == pytest.approx(0.0, abs=1e-15)
    assert asym[1] == pytest.approx(0.0, abs=1e-15)
    assert asym[2] > 0.5
    assert asymmetry_at(small_profile, 193.21) == asym[2]


def test_sinusoidal_target_is_symmetric():
    target = sinusoidal_symmetric_target()
    values = target.values_dbm
    assert values[0, 0] == 0.0 and values[0, -1] == 0.0
    assert values[0, 80] == pytest.approx(-4.0)
    assert_allclose(values, values[:, ::-1], atol=1e-12)
    assert max_asymmetry(target) < 1e-12


def test_asymmetry_needs_odd_symmetric_grid():
    even = PowerProfile2D(np.zeros((1, 4)), [193.0], [0.0, 1.0, 2.0, 3.0])
    with pytest.raises(InvalidArgumentError):
        asymmetry_per_channel(even)
    skewed = PowerProfile2D(np.zeros((1, 3)), [193.0], [0.0, 1.0, 3.0])
    with pytest.raises(InvalidArgumentError):
        asymmetry_per_channel(skewed)


def test_asymmetry_rejects_zero_power():
    dead = PowerProfile2D(np.full((1, 5), -np.inf), [193.0], np.linspace(0, 80, 5))
    with pytest.raises(InvalidStateError):
        asymmetry_per_channel(dead)


# ========================================================================
# BREAKDOWN + OBJECTIVES
# ========================================================================

def test_cost_breakdown_extremes(small_profile):
    breakdown = cost_breakdown(small_profile, SCENARIOS['m1'])
    extremes = breakdown.extremes()
    assert extremes['max_asymmetry_thz'] == pytest.approx(193.2)
    assert extremes['max_excursion_thz'] == pytest.approx(193.2)
    assert extremes['min_channel_excursion_db'] == pytest.approx(2.0)
    data = breakdown.to_dict()
    assert set(data) >= {'j0_db', 'j1_db', 'j2_db', 'weighted_db', 'max_asymmetry'}
    assert len(data['asymmetry_per_channel']) == 3


def test_cost_breakdown_without_asymmetry_grid():
    even = PowerProfile2D(np.zeros((2, 4)), [193.0, 193.1], [0.0, 1.0, 2.0, 3.0])
    breakdown = cost_breakdown(even)
    assert np.isnan(breakdown.max_asymmetry)
    assert np.isnan(breakdown.weighted)
    assert breakdown.j0 == 0.0


def test_objective_classes(small_profile, decay_profile):
    weighted = WeightedExcursionObjective(SCENARIOS['m1'])(small_profile)
    assert weighted.cost == pytest.approx(18.0)

    asym = AsymmetryObjective()(decay_profile)
    assert asym.cost == pytest.approx(PURE_DECAY_ASYMMETRY, rel=1e-9)
    assert asym.j0 == pytest.approx(16.0)

    target = decay_profile.with_values(np.zeros(decay_profile.shape))
    deviation = TargetDeviationObjective(target)(decay_profile)
    assert deviation.cost == pytest.approx(16.0)
