"""
Raman model - fiber, pump and signal physics
- Wave bookkeeping (40 C-band channels + 8 bidirectional pumps)
- Raman efficiency profile (triangular silica approximation or tabulated)
- Coupled power-evolution right-hand side used by the BVP solver

Internal units are W and km; dBm only appears at the reporting boundary.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from utils import (
    SPEED_OF_LIGHT_NM_THZ,
    InvalidArgumentError,
    InvalidStateError,
    NotFoundError,
    db_to_neper,
)

logger = logging.getLogger(__name__)

# Pump power ranges [mW], ordered p1..p8 (p1-p4 co, p5-p8 counter)
PUMP_LOWER_MW = np.array([200.0, 5.0, 5.0, 5.0, 200.0, 5.0, 5.0, 5.0])
PUMP_UPPER_MW = np.array([1200.0, 150.0, 150.0, 150.0, 1200.0, 150.0, 150.0, 150.0])
N_PUMPS = 8


class Direction(str, Enum):
    FORWARD = 'forward'
    BACKWARD = 'backward'

    @property
    def sign(self):
        return 1.0 if self is Direction.FORWARD else -1.0


class Role(str, Enum):
    SIGNAL = 'signal'
    PUMP_FIRST_ORDER = 'pump_first_order'
    PUMP_SECOND_ORDER = 'pump_second_order'


# ========================================================================
# CONFIGURATION
# ========================================================================

class FiberSpec(BaseModel):
    """Single-mode fiber span; A_eff and gamma are recorded but unused"""
    span_length: float = Field(80.0, gt=0, description="km")
    alpha_signal: float = Field(0.2, gt=0, description="dB/km")
    alpha_pump_first: float = Field(0.25, gt=0, description="dB/km")
    alpha_pump_second: float = Field(0.32, gt=0, description="dB/km")
    raman_peak_efficiency: float = Field(0.4125, gt=0, description="1/(W km)")
    raman_peak_shift_thz: float = Field(13.2, gt=0)
    raman_cutoff_thz: float = Field(15.0, gt=0)
    effective_area: float = Field(80.0, description="um^2")
    nonlinear_coeff: float = Field(1.26, description="1/(W km)")
    raman_table: Optional[str] = None

    @model_validator(mode='after')
    def _check_profile_shape(self):
        if self.raman_cutoff_thz <= self.raman_peak_shift_thz:
            raise ValueError("raman_cutoff_thz must exceed raman_peak_shift_thz")
        return self


class WaveConfig(BaseModel):
    """Signal grid and pump layout; defaults reproduce the 40 + 8 wave setup"""
    n_channels: int = Field(40, ge=1)
    first_channel_thz: float = Field(192.0, gt=0)
    channel_spacing_ghz: float = Field(100.0, gt=0)
    pump_wavelengths_nm: list[float] = [1366.0, 1425.0, 1455.0, 1475.0] * 2
    pump_directions: list[Literal['forward', 'backward']] = ['forward'] * 4 + ['backward'] * 4
    pump_roles: list[Literal['pump_first_order', 'pump_second_order']] = (
        ['pump_second_order', 'pump_first_order', 'pump_first_order', 'pump_first_order'] * 2
    )

    @field_validator('pump_wavelengths_nm')
    @classmethod
    def _positive_wavelengths(cls, values):
        if any(v <= 0 for v in values):
            raise ValueError("pump wavelengths must be positive")
        return values

    @model_validator(mode='after')
    def _matching_lengths(self):
        n = len(self.pump_wavelengths_nm)
        if len(self.pump_directions) != n or len(self.pump_roles) != n:
            raise ValueError("pump wavelengths, directions and roles must have equal length")
        return self

    def signal_frequencies(self):
        spacing_thz = self.channel_spacing_ghz / 1000.0
        # rounding keeps 192.0 + 39 * 0.1 printable as 195.9
        return np.round(self.first_channel_thz + spacing_thz * np.arange(self.n_channels), 9)


# ========================================================================
# RAMAN GAIN PROFILE
# ========================================================================

def wavelength_to_frequency(lambda_nm):
    """Convert wavelength [nm] to frequency [THz]"""
    lam = np.asarray(lambda_nm, dtype=float)
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise InvalidArgumentError(f"wavelength must be positive, got {lambda_nm}")
    freq = SPEED_OF_LIGHT_NM_THZ / lam
    return float(freq) if freq.ndim == 0 else freq


@dataclass(frozen=True, eq=False)
class RamanGainProfile:
    """
    Piecewise-linear Raman efficiency versus frequency down-shift

    Linear interpolation between the break points, zero outside them and for
    any non-positive shift.
    """
    shifts_thz: np.ndarray
    efficiencies: np.ndarray

    @classmethod
    def triangular(cls, peak_efficiency=0.4125, peak_shift_thz=13.2, cutoff_thz=15.0):
        return cls(
            shifts_thz=np.array([0.0, peak_shift_thz, cutoff_thz]),
            efficiencies=np.array([0.0, peak_efficiency, 0.0]),
        )

    @classmethod
    def from_table(cls, path):
        """
        Load a two-column text table "delta_f_THz efficiency_per_W_km"

        Args:
            path: whitespace separated file, monotone in the first column

        Returns:
            RamanGainProfile
        """
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"Raman profile table not found: {path}")
        table = np.atleast_2d(np.loadtxt(path, dtype=float))
        if table.shape[1] != 2:
            raise InvalidArgumentError(f"{path}: expected 2 columns, got {table.shape[1]}")
        shifts, eff = table[:, 0], table[:, 1]
        if np.any(np.diff(shifts) <= 0):
            raise InvalidArgumentError(f"{path}: first column must be strictly increasing")
        if np.any(eff < 0):
            raise InvalidArgumentError(f"{path}: efficiencies must be non-negative")
        return cls(shifts_thz=shifts, efficiencies=eff)

    @classmethod
    def for_fiber(cls, fiber: FiberSpec):
        if fiber.raman_table:
            return cls.from_table(fiber.raman_table)
        return cls.triangular(
            fiber.raman_peak_efficiency, fiber.raman_peak_shift_thz, fiber.raman_cutoff_thz
        )

    def __call__(self, delta_f):
        delta_f = np.asarray(delta_f, dtype=float)
        gain = np.interp(delta_f, self.shifts_thz, self.efficiencies, left=0.0, right=0.0)
        gain = np.where(delta_f > 0, gain, 0.0)
        return float(gain) if gain.ndim == 0 else gain


_DEFAULT_PROFILE = RamanGainProfile.triangular()


def raman_gain(delta_f, profile=None):
    """Raman efficiency [1/(W km)] for a down-shift delta_f [THz]"""
    return (profile or _DEFAULT_PROFILE)(delta_f)


# ========================================================================
# WAVES
# ========================================================================

@dataclass(frozen=True)
class Wave:
    frequency: float
    direction: Direction
    attenuation: float
    role: Role

    def __post_init__(self):
        if not self.frequency > 0:
            raise InvalidArgumentError(f"wave frequency must be positive, got {self.frequency}")


@dataclass(frozen=True, eq=False)
class WaveSet:
    """
    Ordered propagating waves: signals (ascending frequency) then pumps

    The default layout holds 40 signals followed by co-pumps p1-p4 and
    counter-pumps p5-p8.
    """
    waves: tuple
    gain: RamanGainProfile = field(default=_DEFAULT_PROFILE)

    def __post_init__(self):
        roles = [w.role for w in self.waves]
        n_signals = sum(r is Role.SIGNAL for r in roles)
        if any(r is not Role.SIGNAL for r in roles[:n_signals]):
            raise InvalidArgumentError("signal waves must precede pump waves")
        freqs = [w.frequency for w in self.waves[:n_signals]]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise InvalidArgumentError("signal frequencies must be strictly ascending")

    def __len__(self):
        return len(self.waves)

    @cached_property
    def frequencies(self):
        return np.array([w.frequency for w in self.waves])

    @cached_property
    def attenuation(self):
        return np.array([w.attenuation for w in self.waves])

    @cached_property
    def signs(self):
        return np.array([w.direction.sign for w in self.waves])

    @cached_property
    def n_signals(self):
        return sum(w.role is Role.SIGNAL for w in self.waves)

    @property
    def n_pumps(self):
        return len(self.waves) - self.n_signals

    @cached_property
    def forward_mask(self):
        return self.signs > 0

    @property
    def signal_frequencies(self):
        return self.frequencies[:self.n_signals]

    @cached_property
    def coupling_matrix(self):
        """
        C[i, j] = g(f_j - f_i) for f_j > f_i, -(f_i / f_j) g(f_i - f_j) for f_j < f_i

        so that dP/dz = s * (-alpha * P + P * (C @ P)).
        """
        f = self.frequencies
        shift = f[None, :] - f[:, None]
        gain_in = self.gain(np.clip(shift, 0.0, None))
        depletion = (f[:, None] / f[None, :]) * self.gain(np.clip(-shift, 0.0, None))
        coupling = np.where(shift > 0, gain_in, 0.0) - np.where(shift < 0, depletion, 0.0)
        np.fill_diagonal(coupling, 0.0)
        return coupling

    def with_gain(self, gain):
        return WaveSet(waves=self.waves, gain=gain)


def build_wave_set(fiber: FiberSpec = None, waves: WaveConfig = None, signal_frequencies=None,
                   pumps=None):
    """
    Build the wave set for a fiber

    Args:
        fiber: FiberSpec (defaults to the 80 km span)
        waves: WaveConfig (defaults to 40 channels + 8 pumps)
        signal_frequencies: optional explicit signal grid [THz]
        pumps: optional list of (wavelength_nm, direction, role) overriding the config

    Returns:
        WaveSet
    """
    fiber = fiber or FiberSpec()
    waves = waves or WaveConfig()

    if signal_frequencies is None:
        signal_frequencies = waves.signal_frequencies()
    if pumps is None:
        pumps = list(zip(waves.pump_wavelengths_nm, waves.pump_directions, waves.pump_roles))

    alpha_signal = float(db_to_neper(fiber.alpha_signal))
    built = [
        Wave(float(f), Direction.FORWARD, alpha_signal, Role.SIGNAL)
        for f in np.atleast_1d(signal_frequencies)
    ]
    for wavelength, direction, role in pumps:
        role = Role(role)
        alpha_db = fiber.alpha_pump_second if role is Role.PUMP_SECOND_ORDER else fiber.alpha_pump_first
        built.append(Wave(
            frequency=wavelength_to_frequency(wavelength),
            direction=Direction(direction),
            attenuation=float(db_to_neper(alpha_db)),
            role=role,
        ))

    return WaveSet(waves=tuple(built), gain=RamanGainProfile.for_fiber(fiber))


# ========================================================================
# PUMPS
# ========================================================================

@dataclass(frozen=True, eq=False)
class PumpConfig:
    """Pump launch powers [mW] ordered p1..pn"""
    powers_mw: np.ndarray

    def __post_init__(self):
        powers = np.asarray(self.powers_mw, dtype=float).reshape(-1)
        if powers.size == 0 or np.any(~np.isfinite(powers)) or np.any(powers <= 0):
            raise InvalidArgumentError(f"pump powers must be positive and finite, got {powers}")
        object.__setattr__(self, 'powers_mw', powers)

    @property
    def powers_w(self):
        return self.powers_mw * 1e-3

    def __len__(self):
        return self.powers_mw.size

    def within(self, lower, upper):
        return bool(np.all(self.powers_mw >= lower) and np.all(self.powers_mw <= upper))


def pump_power_bounds():
    """Lower/upper pump power box [mW] used for data generation and random DE"""
    return PUMP_LOWER_MW.copy(), PUMP_UPPER_MW.copy()


# ========================================================================
# COUPLED EQUATIONS
# ========================================================================

def coupled_rhs(z, powers_w, wave_set: WaveSet):
    """
    dP/dz for every wave [W/km]

    s_i dP_i/dz = -alpha_i P_i + P_i sum_{f_j > f_i} g P_j - P_i sum_{f_j < f_i} (f_i/f_j) g P_j

    Args:
        z: position [km] (the system is autonomous; kept for integrator signatures)
        powers_w: power of every wave [W]
        wave_set: WaveSet

    Returns:
        np.ndarray of derivatives
    """
    powers_w = np.asarray(powers_w, dtype=float)
    if powers_w.shape != (len(wave_set),):
        raise InvalidArgumentError(
            f"expected {len(wave_set)} powers, got shape {powers_w.shape}"
        )
    if np.any(np.isnan(powers_w)) or np.any(powers_w < 0):
        raise InvalidStateError("powers must be non-negative and not NaN")
    return rhs_unchecked(powers_w, wave_set)


def rhs_unchecked(powers_w, wave_set: WaveSet):
    return wave_set.signs * powers_w * (wave_set.coupling_matrix @ powers_w - wave_set.attenuation)


def photon_flux(powers_w, wave_set: WaveSet):
    """Sum of P_i / f_i over the wave axis (axis 0); conserved when lossless and co-directional"""
    return np.sum(np.asarray(powers_w) / wave_set.frequencies.reshape(
        (-1,) + (1,) * (np.ndim(powers_w) - 1)), axis=0)
