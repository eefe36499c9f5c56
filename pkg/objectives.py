"""
Cost functionals and target profiles for 2D power evolution design
- Power excursion J0, spectrum excursion J1, 0 dB gain deviation J2
- Weighted-sum cost and asymmetry A(f) / max asymmetry
- Flat and sinusoidal-symmetric targets

Excursions work on dBm values, asymmetry on linear mW values.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.integrate import trapezoid

from bvp_solver import PowerProfile2D, z_grid
from raman_model import FiberSpec, WaveConfig
from utils import InvalidArgumentError, InvalidStateError, dbm_to_mw

logger = logging.getLogger(__name__)


# ========================================================================
# TYPES
# ========================================================================

class WeightVector(BaseModel):
    m0: float = Field(ge=0)
    m1: float = Field(ge=0)
    m2: float = Field(ge=0)

    @model_validator(mode='after')
    def _sums_to_one(self):
        total = self.m0 + self.m1 + self.m2
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {total!r}")
        return self

    @classmethod
    def parse(cls, text):
        """Parse "m0,m1,m2"; fractions like 2/3 are accepted"""
        parts = [p.strip() for p in str(text).split(',')]
        if len(parts) != 3:
            raise InvalidArgumentError(f"expected three comma-separated weights, got {text!r}")
        values = []
        for part in parts:
            if '/' in part:
                num, den = part.split('/', 1)
                values.append(float(num) / float(den))
            else:
                values.append(float(part))
        return cls(m0=values[0], m1=values[1], m2=values[2])

    def as_array(self):
        return np.array([self.m0, self.m1, self.m2])


SCENARIOS = {
    'm1': WeightVector(m0=1.0, m1=0.0, m2=0.0),
    'm2': WeightVector(m0=2 / 3, m1=1 / 3, m2=0.0),
    'm3': WeightVector(m0=2 / 3, m1=1 / 6, m2=1 / 6),
}


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    j0: float
    j1: float
    j2: float
    weighted: float
    asymmetry_per_channel: np.ndarray
    max_asymmetry: float
    cost: float
    per_channel_excursion: np.ndarray = field(default_factory=lambda: np.empty(0))
    freq_grid: np.ndarray = field(default_factory=lambda: np.empty(0))

    def extremes(self):
        """Frequencies of the largest/smallest asymmetry and per-channel excursion"""
        if self.freq_grid.size == 0:
            return {}
        out = {}
        if self.asymmetry_per_channel.size:
            out['max_asymmetry_thz'] = float(self.freq_grid[np.argmax(self.asymmetry_per_channel)])
            out['min_asymmetry_thz'] = float(self.freq_grid[np.argmin(self.asymmetry_per_channel)])
            out['min_asymmetry'] = float(np.min(self.asymmetry_per_channel))
        if self.per_channel_excursion.size:
            out['max_excursion_thz'] = float(self.freq_grid[np.argmax(self.per_channel_excursion)])
            out['min_excursion_thz'] = float(self.freq_grid[np.argmin(self.per_channel_excursion)])
            out['min_channel_excursion_db'] = float(np.min(self.per_channel_excursion))
        return out

    def to_dict(self):
        return {
            'j0_db': self.j0,
            'j1_db': self.j1,
            'j2_db': self.j2,
            'weighted_db': self.weighted,
            'max_asymmetry': self.max_asymmetry,
            'asymmetry_per_channel': self.asymmetry_per_channel.tolist(),
        }


# ========================================================================
# EXCURSIONS
# ========================================================================

def _values(p: PowerProfile2D):
    values = p.values_dbm
    if values.size == 0:
        raise InvalidArgumentError("empty profile")
    return values


def power_excursion(p: PowerProfile2D):
    """J0: max minus min over the whole frequency x distance plane [dB]"""
    values = _values(p)
    return float(values.max() - values.min())


def spectrum_excursion(p: PowerProfile2D):
    """J1: worst spectral spread over all distance points [dB]"""
    values = _values(p)
    return float(np.max(values.max(axis=0) - values.min(axis=0)))


def end_gain_deviation(p: PowerProfile2D):
    """J2: max over channels of |P(f, L) - P(f, 0)| [dB]"""
    values = _values(p)
    return float(np.max(np.abs(values[:, -1] - values[:, 0])))


def per_channel_excursion(p: PowerProfile2D):
    values = _values(p)
    return values.max(axis=1) - values.min(axis=1)


def weighted_cost(p: PowerProfile2D, m: WeightVector):
    if not isinstance(m, WeightVector):
        raise InvalidArgumentError(f"expected WeightVector, got {type(m).__name__}")
    j = np.array([power_excursion(p), spectrum_excursion(p), end_gain_deviation(p)])
    return float(m.as_array() @ j)


def target_deviation(p: PowerProfile2D, target: PowerProfile2D):
    """Max absolute dB difference from a target profile on the same grids"""
    if p.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch {p.shape} vs {target.shape}")
    return float(np.max(np.abs(_values(p) - _values(target))))


# ========================================================================
# ASYMMETRY
# ========================================================================

def _half_grid(p: PowerProfile2D):
    z = p.z_grid
    n = z.size
    if n < 3 or n % 2 == 0:
        raise InvalidArgumentError("asymmetry needs an odd number of distance points")
    mid = n // 2
    if not np.allclose(z[:mid + 1] + z[::-1][:mid + 1], z[-1] + z[0], atol=1e-9):
        raise InvalidArgumentError("distance grid is not symmetric about the span midpoint")
    return mid


def asymmetry_per_channel(p: PowerProfile2D):
    """
    A(f) = int_0^{L/2} |P(z) - P(L-z)| dz / int_0^{L/2} P(z) dz, P in mW

    Trapezoidal rule on the native half grid.
    """
    mid = _half_grid(p)
    linear = dbm_to_mw(_values(p))
    z_half = p.z_grid[:mid + 1]
    first_half = linear[:, :mid + 1]
    mirrored = linear[:, ::-1][:, :mid + 1]
    numerator = trapezoid(np.abs(first_half - mirrored), z_half, axis=1)
    denominator = trapezoid(first_half, z_half, axis=1)
    if np.any(denominator <= 0):
        raise InvalidStateError("zero signal power over the first half span")
    return numerator / denominator


def max_asymmetry(p: PowerProfile2D):
    return float(np.max(asymmetry_per_channel(p)))


def asymmetry_at(p: PowerProfile2D, frequency):
    """Asymmetry of the channel closest to `frequency` [THz]"""
    idx = int(np.argmin(np.abs(p.freq_grid - frequency)))
    return float(asymmetry_per_channel(p)[idx])


# ========================================================================
# TARGETS
# ========================================================================

def default_grids(fiber: FiberSpec = None, waves: WaveConfig = None, z_step=0.5):
    fiber = fiber or FiberSpec()
    waves = waves or WaveConfig()
    return waves.signal_frequencies(), z_grid(fiber.span_length, z_step)


def flat_target(level_dbm=0.0, freq_grid=None, z=None):
    if freq_grid is None or z is None:
        freq_grid, z = default_grids()
    return PowerProfile2D(np.full((len(freq_grid), len(z)), float(level_dbm)), freq_grid, z)


def sinusoidal_symmetric_target(freq_grid=None, z=None, amplitude_db=4.0):
    """P(f, z) = 4 sin(pi z / L + pi) dBm for every channel, endpoints included"""
    if freq_grid is None or z is None:
        freq_grid, z = default_grids()
    z = np.asarray(z, dtype=float)
    shape = amplitude_db * np.sin(np.pi * z / z[-1] + np.pi)
    # sin(pi) and sin(2 pi) are not exactly zero in floating point
    shape[0] = 0.0
    shape[-1] = 0.0
    return PowerProfile2D(np.tile(shape, (len(freq_grid), 1)), freq_grid, z)


# ========================================================================
# BREAKDOWN + OBJECTIVES
# ========================================================================

def cost_breakdown(p: PowerProfile2D, weights: Optional[WeightVector] = None, cost=None):
    """
    Every cost for one profile

    Args:
        p: profile
        weights: when given, `weighted` = m . [J0, J1, J2]
        cost: scalar the optimizer minimizes (defaults to `weighted`)
    """
    j0, j1, j2 = power_excursion(p), spectrum_excursion(p), end_gain_deviation(p)
    weighted = float(weights.as_array() @ np.array([j0, j1, j2])) if weights else float('nan')
    try:
        asym = asymmetry_per_channel(p)
    except (InvalidArgumentError, InvalidStateError) as exc:
        logger.debug("asymmetry unavailable: %s", exc)
        asym = np.full(p.shape[0], np.nan)
    max_asym = float(np.max(asym)) if asym.size else float('nan')
    return CostBreakdown(
        j0=j0, j1=j1, j2=j2,
        weighted=weighted,
        asymmetry_per_channel=asym,
        max_asymmetry=max_asym,
        cost=weighted if cost is None else float(cost),
        per_channel_excursion=per_channel_excursion(p),
        freq_grid=p.freq_grid,
    )


class WeightedExcursionObjective:
    """m0 J0 + m1 J1 + m2 J2 (flat designs)"""
    name = 'weighted'

    def __init__(self, weights: WeightVector):
        self.weights = weights

    def __call__(self, p: PowerProfile2D):
        return cost_breakdown(p, self.weights)


class AsymmetryObjective:
    """max_f A(f) (symmetric designs)"""
    name = 'asymmetry'

    def __call__(self, p: PowerProfile2D):
        breakdown = cost_breakdown(p)
        return _replace_cost(breakdown, breakdown.max_asymmetry)


class TargetDeviationObjective:
    """Max |P - P_target| in dB"""
    name = 'target'

    def __init__(self, target: PowerProfile2D):
        self.target = target

    def __call__(self, p: PowerProfile2D):
        return _replace_cost(cost_breakdown(p), target_deviation(p, self.target))


def _replace_cost(breakdown: CostBreakdown, cost):
    return replace(breakdown, cost=float(cost))
