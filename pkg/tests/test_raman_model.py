import numpy as np
import pytest
from numpy.testing import assert_allclose
from pydantic import ValidationError

from raman_model import (
    Direction,
    FiberSpec,
    PumpConfig,
    RamanGainProfile,
    Role,
    Wave,
    WaveConfig,
    WaveSet,
    build_wave_set,
    coupled_rhs,
    photon_flux,
    pump_power_bounds,
    raman_gain,
    wavelength_to_frequency,
)
from utils import InvalidArgumentError, InvalidStateError, NotFoundError, db_to_neper


# ========================================================================
# UNIT CONVERSION + GAIN PROFILE
# ========================================================================

def test_wavelength_to_frequency_values():
    assert wavelength_to_frequency(1366.0) == pytest.approx(219.467, abs=1e-3)
    assert wavelength_to_frequency(1455.0) == pytest.approx(206.043, abs=1e-3)
    assert wavelength_to_frequency(299792.458) == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1450.0, float('nan')])
def test_wavelength_to_frequency_rejects_non_positive(bad):
    with pytest.raises(InvalidArgumentError):
        wavelength_to_frequency(bad)


def test_raman_gain_triangle():
    assert raman_gain(13.2) == pytest.approx(0.4125)
    assert raman_gain(6.6) == pytest.approx(0.20625)
    assert raman_gain(14.1) == pytest.approx(0.20625)
    assert raman_gain(0.0) == 0.0
    assert raman_gain(-3.0) == 0.0
    assert raman_gain(15.0) == 0.0
    assert raman_gain(20.0) == 0.0


def test_raman_gain_is_continuous_and_non_negative():
    shifts = np.linspace(-2.0, 18.0, 4001)
    gains = raman_gain(shifts)
    assert np.all(gains >= 0)
    assert np.max(np.abs(np.diff(gains))) < 0.01


def test_gain_profile_from_table(tmp_path):
    table = tmp_path / "silica.txt"
    table.write_text("0 0\n10 0.3\n13 0.45\n16 0\n")
    profile = RamanGainProfile.from_table(table)
    assert profile(10.0) == pytest.approx(0.3)
    assert profile(11.5) == pytest.approx(0.375)
    assert profile(17.0) == 0.0

    fiber = FiberSpec(raman_table=str(table))
    ws = build_wave_set(fiber, WaveConfig(n_channels=2))
    assert ws.gain(13.0) == pytest.approx(0.45)


def test_gain_profile_table_errors(tmp_path):
    with pytest.raises(NotFoundError):
        RamanGainProfile.from_table(tmp_path / "missing.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("0 0\n5 0.1\n4 0.2\n")
    with pytest.raises(InvalidArgumentError):
        RamanGainProfile.from_table(bad)


def test_fiber_spec_validation():
    with pytest.raises(ValidationError):
        FiberSpec(span_length=0.0)
    with pytest.raises(ValidationError):
        FiberSpec(alpha_signal=-0.2)
    with pytest.raises(ValidationError):
        FiberSpec(raman_peak_shift_thz=16.0, raman_cutoff_thz=15.0)


# ========================================================================
# WAVE SET
# ========================================================================

def test_default_wave_set_layout(wave_set):
    assert len(wave_set) == 48
    assert wave_set.n_signals == 40
    assert wave_set.n_pumps == 8
    assert_allclose(wave_set.signal_frequencies[[0, -1]], [192.0, 195.9])
    assert_allclose(np.diff(wave_set.signal_frequencies), 0.1, atol=1e-9)

    pumps = wave_set.waves[40:]
    assert [w.direction for w in pumps] == [Direction.FORWARD] * 4 + [Direction.BACKWARD] * 4
    assert pumps[0].role is Role.PUMP_SECOND_ORDER
    assert pumps[4].role is Role.PUMP_SECOND_ORDER
    assert_allclose(pumps[0].attenuation, db_to_neper(0.32))
    assert_allclose(pumps[2].attenuation, db_to_neper(0.25))
    assert_allclose(wave_set.waves[0].attenuation, 0.2 * np.log(10) / 10)


def test_wave_set_rejects_unsorted_signals():
    alpha = float(db_to_neper(0.2))
    waves = (
        Wave(194.0, Direction.FORWARD, alpha, Role.SIGNAL),
        Wave(193.0, Direction.FORWARD, alpha, Role.SIGNAL),
    )
    with pytest.raises(InvalidArgumentError):
        WaveSet(waves)


def test_coupling_matrix_photon_antisymmetry(wave_set):
    c = wave_set.coupling_matrix
    f = wave_set.frequencies
    # power j gives to i equals (f_j / f_i) times the power i drains from j
    i, j = 10, 43
    assert f[j] > f[i]
    assert c[i, j] > 0
    assert_allclose(c[j, i], -(f[j] / f[i]) * c[i, j])
    assert_allclose(np.diag(c), 0.0)


# ========================================================================
# RIGHT-HAND SIDE
# ========================================================================

def _lossless_forward_set(freqs):
    waves = [Wave(f, Direction.FORWARD, 0.0, Role.SIGNAL) for f in freqs[:-2]]
    waves += [Wave(f, Direction.FORWARD, 0.0, Role.PUMP_FIRST_ORDER) for f in freqs[-2:]]
    return WaveSet(tuple(waves))


def test_rhs_single_signal_is_pure_attenuation(fiber):
    ws = build_wave_set(fiber, signal_frequencies=[193.4], pumps=[])
    p = np.array([1e-3])
    assert_allclose(coupled_rhs(0.0, p, ws), -db_to_neper(0.2) * p)


def test_rhs_beyond_cutoff_is_pure_attenuation(fiber):
    ws = build_wave_set(fiber, signal_frequencies=[190.0],
                        pumps=[(1400.0, 'forward', 'pump_first_order')])
    assert ws.frequencies[1] - ws.frequencies[0] > 15.0
    p = np.array([0.1, 0.1])
    assert_allclose(coupled_rhs(0.0, p, ws), -ws.attenuation * p)


def test_rhs_sign_follows_direction(fiber):
    ws = build_wave_set(fiber, signal_frequencies=[193.4],
                        pumps=[(1455.0, 'backward', 'pump_first_order')])
    p = np.array([1e-3, 0.1])
    d = coupled_rhs(0.0, p, ws)
    # a counter-propagating pump grows toward z=0 going backwards: dP/dz > 0
    assert d[1] > 0
    assert d[0] > -ws.attenuation[0] * p[0]


def test_rhs_conserves_photon_flux_when_lossless():
    ws = _lossless_forward_set([192.5, 193.5, 194.5, 205.0, 210.0])
    p = np.array([1e-3, 2e-3, 1.5e-3, 0.4, 0.3])
    d = coupled_rhs(0.0, p, ws)
    assert abs(np.sum(d / ws.frequencies)) < 1e-12 * np.sum(np.abs(d) / ws.frequencies)
    assert photon_flux(p, ws) == pytest.approx(np.sum(p / ws.frequencies))


def test_photon_flux_sums_over_waves_per_position():
    ws = _lossless_forward_set([192.5, 193.5, 205.0, 210.0])
    grid = np.array([[1e-3, 2e-3, 3e-3, 4e-3],
                     [2e-3, 2e-3, 2e-3, 2e-3],
                     [0.3, 0.3, 0.3, 0.3],
                     [0.4, 0.3, 0.2, 0.1]])
    flux = photon_flux(grid, ws)
    assert flux.shape == (4,)
    assert_allclose(flux, [np.sum(grid[:, k] / ws.frequencies) for k in range(4)])


def test_rhs_is_homogeneous_in_each_power(wave_set):
    rng = np.random.default_rng(3)
    p = rng.uniform(1e-4, 0.3, len(wave_set))
    base = coupled_rhs(0.0, p, wave_set)
    scaled = p.copy()
    scaled[5] *= 3.0
    # d_i/P_i depends only on the other waves
    assert_allclose(coupled_rhs(0.0, scaled, wave_set)[5], 3.0 * base[5], rtol=1e-12)


def test_rhs_rejects_invalid_powers(wave_set):
    p = np.full(len(wave_set), 1e-3)
    p[3] = -1e-6
    with pytest.raises(InvalidStateError):
        coupled_rhs(0.0, p, wave_set)
    p[3] = np.nan
    with pytest.raises(InvalidStateError):
        coupled_rhs(0.0, p, wave_set)
    with pytest.raises(InvalidArgumentError):
        coupled_rhs(0.0, np.ones(3), wave_set)


# ========================================================================
# PUMPS
# ========================================================================

def test_pump_config_validation():
    pumps = PumpConfig([430, 45, 98, 12, 1150, 8, 12, 24])
    assert len(pumps) == 8
    assert_allclose(pumps.powers_w[0], 0.43)
    with pytest.raises(InvalidArgumentError):
        PumpConfig([100, 0, 5, 5, 200, 5, 5, 5])
    with pytest.raises(InvalidArgumentError):
        PumpConfig([])


def test_pump_power_bounds():
    lower, upper = pump_power_bounds()
    assert_allclose(lower, [200, 5, 5, 5, 200, 5, 5, 5])
    assert_allclose(upper, [1200, 150, 150, 150, 1200, 150, 150, 150])
    lower[0] = -1.0
    assert pump_power_bounds()[0][0] == 200.0
    assert PumpConfig([430, 45, 98, 12, 1150, 8, 12, 24]).within(*pump_power_bounds())
