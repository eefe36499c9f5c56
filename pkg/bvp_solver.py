"""
Bidirectional boundary value solver for the Raman power evolution
- Co-propagating waves are fixed at z=0, counter-propagating waves at z=L
- Alternating forward/backward frozen-field relaxation with fixed-step RK4
- Produces the 2D signal power profile P(f, z) in dBm
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, Field

from raman_model import FiberSpec, PumpConfig, WaveSet, build_wave_set
from utils import (
    POWER_FLOOR_W,
    InvalidArgumentError,
    dbm_to_mw,
    dbm_to_w,
    mw_to_dbm,
)

logger = logging.getLogger(__name__)


# ========================================================================
# TYPES
# ========================================================================

class SolverConfig(BaseModel):
    z_step: float = Field(0.5, gt=0, description="km")
    residual_threshold: float = Field(1e-6, gt=0)
    max_relaxation_iters: int = Field(100, ge=1)
    # undamped sweeps oscillate for strong counter-pumps near the top of their range
    damping: float = Field(0.5, gt=0, le=1)
    adaptive_damping: bool = True
    min_damping: float = Field(0.25, gt=0, le=1)
    rk_substeps: int = Field(1, ge=1)
    signal_launch_dbm: float = 0.0
    clamp_floor_w: float = Field(0.0, ge=0, description="value negative powers are clamped to")


@dataclass(frozen=True, eq=False)
class PowerProfile2D:
    """Signal power [dBm], rows = channels (ascending f), columns = distance"""
    values_dbm: np.ndarray
    freq_grid: np.ndarray
    z_grid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values_dbm, dtype=float)
        freq = np.asarray(self.freq_grid, dtype=float)
        z = np.asarray(self.z_grid, dtype=float)
        if values.shape != (freq.size, z.size):
            raise InvalidArgumentError(
                f"profile shape {values.shape} does not match grids ({freq.size}, {z.size})"
            )
        if np.any(np.diff(freq) <= 0) or np.any(np.diff(z) <= 0):
            raise InvalidArgumentError("frequency and distance grids must be strictly increasing")
        object.__setattr__(self, 'values_dbm', values)
        object.__setattr__(self, 'freq_grid', freq)
        object.__setattr__(self, 'z_grid', z)

    @property
    def shape(self):
        return self.values_dbm.shape

    @property
    def values_mw(self):
        return dbm_to_mw(self.values_dbm)

    @property
    def is_finite(self):
        return bool(np.all(np.isfinite(self.values_dbm)))

    def with_values(self, values_dbm):
        return PowerProfile2D(values_dbm, self.freq_grid, self.z_grid)


@dataclass(frozen=True, eq=False)
class SolveResult:
    signal_profile: PowerProfile2D
    pump_profiles: np.ndarray          # mW, (n_pumps, n_z)
    converged: bool
    iterations_used: int
    final_residual: float
    powers_w: np.ndarray               # every wave, (n_waves, n_z)
    signal_power_mw: np.ndarray
    clamp_count: int = 0
    residual_history: list = field(default_factory=list)
    final_damping: float = 1.0


# ========================================================================
# GRIDS + INITIAL GUESS
# ========================================================================

def z_grid(span_length, z_step):
    """Distance grid including both ends; z_step must divide the span exactly"""
    n_intervals = int(round(span_length / z_step))
    if n_intervals < 1 or abs(n_intervals * z_step - span_length) > 1e-9 * span_length:
        raise InvalidArgumentError(
            f"z_step={z_step} km does not divide span_length={span_length} km"
        )
    return np.linspace(0.0, span_length, n_intervals + 1)


def launch_powers_w(pumps: PumpConfig, wave_set: WaveSet, cfg: SolverConfig):
    if len(pumps) != wave_set.n_pumps:
        raise InvalidArgumentError(
            f"wave set has {wave_set.n_pumps} pumps, got {len(pumps)} pump powers"
        )
    signals = np.full(wave_set.n_signals, float(dbm_to_w(cfg.signal_launch_dbm)))
    return np.concatenate([signals, pumps.powers_w])


def _attenuation_only(launch_w, wave_set: WaveSet, z):
    """Every wave decays from its launch end: forward from z=0, backward from z=L"""
    distance = np.where(wave_set.forward_mask[:, None], z[None, :], z[-1] - z[None, :])
    return launch_w[:, None] * np.exp(-wave_set.attenuation[:, None] * distance)


# ========================================================================
# RELAXATION SWEEPS
# ========================================================================

def _sweep(powers, active, launch_w, wave_set: WaveSet, z, substeps, forward, floor=0.0):
    """
    Integrate the `active` waves across the span with the other waves frozen

    The frozen waves enter linearly, so their contribution C_af @ P_f is
    precomputed on the grid and interpolated linearly between grid points.

    Returns:
        (profile of the active waves, number of clamped negative entries)
    """
    coupling = wave_set.coupling_matrix
    frozen = ~active
    c_active = coupling[np.ix_(active, active)]
    if frozen.any():
        drive = coupling[np.ix_(active, frozen)] @ powers[frozen]
    else:
        drive = np.zeros((int(active.sum()), z.size))
    alpha = wave_set.attenuation[active]
    sign = wave_set.signs[active]

    def rhs(p, external):
        return sign * p * (c_active @ p + external - alpha)

    n_z = z.size
    start = 0 if forward else n_z - 1
    steps = range(n_z - 1) if forward else range(n_z - 1, 0, -1)

    out = np.empty((int(active.sum()), n_z))
    y = launch_w[active].copy()
    out[:, start] = launch_w[active]
    clamped = 0

    for k in steps:
        k_next = k + 1 if forward else k - 1
        h = (z[k_next] - z[k]) / substeps
        d0, d1 = drive[:, k], drive[:, k_next]
        for j in range(substeps):
            t_a, t_m, t_b = j / substeps, (j + 0.5) / substeps, (j + 1) / substeps
            e_a = d0 + t_a * (d1 - d0)
            e_m = d0 + t_m * (d1 - d0)
            e_b = d0 + t_b * (d1 - d0)
            k1 = rhs(y, e_a)
            k2 = rhs(y + 0.5 * h * k1, e_m)
            k3 = rhs(y + 0.5 * h * k2, e_m)
            k4 = rhs(y + h * k3, e_b)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            negative = y < 0
            if negative.any():
                clamped += int(negative.sum())
                y = np.where(negative, floor, y)
        out[:, k_next] = y

    return out, clamped


def _relative_change(new, old):
    return float(np.max(np.abs(new - old) / np.maximum(new, POWER_FLOOR_W)))


# ========================================================================
# SOLVE
# ========================================================================

def solve(pumps: PumpConfig, fiber: FiberSpec = None, wave_set: WaveSet = None,
          cfg: SolverConfig = None):
    """
    Solve the two-point boundary value problem for one pump configuration

    Args:
        pumps: PumpConfig with one power per pump in `wave_set`
        fiber: FiberSpec (span length)
        wave_set: WaveSet (built from `fiber` when omitted)
        cfg: SolverConfig

    Returns:
        SolveResult; non-convergence is reported through `converged`, never raised
    """
    fiber = fiber or FiberSpec()
    wave_set = wave_set or build_wave_set(fiber)
    cfg = cfg or SolverConfig()

    z = z_grid(fiber.span_length, cfg.z_step)
    launch = launch_powers_w(pumps, wave_set, cfg)
    forward = wave_set.forward_mask
    backward = ~forward
    start_idx = np.where(forward, 0, z.size - 1)
    rows = np.arange(len(wave_set))

    powers = _attenuation_only(launch, wave_set, z)
    residual = np.inf
    history = []
    damping = cfg.damping
    clamp_count = 0
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_relaxation_iters + 1):
        previous = powers.copy()

        if forward.any():
            powers[forward], clamped = _sweep(
                powers, forward, launch, wave_set, z, cfg.rk_substeps, forward=True, floor=cfg.clamp_floor_w)
            clamp_count += clamped
        if backward.any():
            powers[backward], clamped = _sweep(
                powers, backward, launch, wave_set, z, cfg.rk_substeps, forward=False, floor=cfg.clamp_floor_w)
            clamp_count += clamped

        if damping < 1.0:
            powers = damping * powers + (1.0 - damping) * previous
        # launches stay bit-exact whatever the damping
        powers[rows, start_idx] = launch

        residual = _relative_change(powers, previous)
        logger.debug("relaxation iteration %d residual %.3e damping %.3g", iteration, residual, damping)
        if residual <= cfg.residual_threshold:
            history.append(residual)
            converged = True
            break
        # a growing residual means the sweeps overshoot; halve the step
        if cfg.adaptive_damping and history and residual > history[-1] and damping > cfg.min_damping:
            damping = max(0.5 * damping, cfg.min_damping)
            logger.debug("residual grew at iteration %d, damping lowered to %.3g", iteration, damping)
        history.append(residual)

    if clamp_count:
        logger.warning("clamped %d negative power values during integration", clamp_count)
    if not converged:
        logger.warning(
            "BVP relaxation did not converge after %d iterations (residual %.3e)",
            iteration, residual,
        )

    signal_mw = powers[:wave_set.n_signals] * 1e3
    profile = PowerProfile2D(mw_to_dbm(signal_mw), wave_set.signal_frequencies, z)
    return SolveResult(
        signal_profile=profile,
        pump_profiles=powers[wave_set.n_signals:] * 1e3,
        converged=converged,
        iterations_used=iteration,
        final_residual=residual,
        powers_w=powers,
        signal_power_mw=signal_mw,
        clamp_count=clamp_count,
        residual_history=history,
        final_damping=damping,
    )


def solve_many(pump_sets, fiber: FiberSpec = None, wave_set: WaveSet = None,
               cfg: SolverConfig = None, n_jobs=1):
    """Independent solves fanned out over joblib workers, results in input order"""
    fiber = fiber or FiberSpec()
    wave_set = wave_set or build_wave_set(fiber)
    cfg = cfg or SolverConfig()
    pump_sets = [p if isinstance(p, PumpConfig) else PumpConfig(p) for p in pump_sets]
    if n_jobs == 1 or len(pump_sets) <= 1:
        return [solve(p, fiber, wave_set, cfg) for p in pump_sets]
    return Parallel(n_jobs=n_jobs)(delayed(solve)(p, fiber, wave_set, cfg) for p in pump_sets)


def signal_profile_dbm(result: SolveResult):
    """
    Rebuild the dBm profile from the linear signal powers

    Zero or negative linear power maps to the -inf sentinel and is flagged.
    """
    signal_mw = np.asarray(result.signal_power_mw, dtype=float)
    n_bad = int(np.sum(signal_mw <= 0))
    if n_bad:
        logger.warning("%d non-positive signal power entries mapped to -inf dBm", n_bad)
    profile = result.signal_profile
    return PowerProfile2D(mw_to_dbm(signal_mw), profile.freq_grid, profile.z_grid)


# ========================================================================
# TABULAR VIEWS
# ========================================================================

def channel_labels(freq_grid):
    return [f"ch{i}_{f:.1f}THz" for i, f in enumerate(freq_grid)]


def profile_to_frame(profile: PowerProfile2D):
    """One row per distance point: z_km, then one column per channel"""
    frame = pd.DataFrame(profile.values_dbm.T, columns=channel_labels(profile.freq_grid))
    frame.insert(0, 'z_km', profile.z_grid)
    return frame


def profile_from_frame(frame: pd.DataFrame):
    z = frame['z_km'].to_numpy(dtype=float)
    columns = [c for c in frame.columns if c != 'z_km']
    freq = np.array([float(c.split('_')[1].removesuffix('THz')) for c in columns])
    return PowerProfile2D(frame[columns].to_numpy(dtype=float).T, freq, z)
