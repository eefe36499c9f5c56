"""Shared fixtures: default physics, small grids, cheap analytic objectives"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from bvp_solver import PowerProfile2D, SolverConfig, z_grid  # noqa: E402
from raman_model import FiberSpec, WaveConfig, build_wave_set  # noqa: E402


@pytest.fixture
def fiber():
    return FiberSpec()


@pytest.fixture
def wave_set(fiber):
    return build_wave_set(fiber)


@pytest.fixture
def coarse_solver():
    return SolverConfig(z_step=1.0)


@pytest.fixture
def small_waves():
    """4 channels, default 8 pumps"""
    return WaveConfig(n_channels=4, first_channel_thz=193.0, channel_spacing_ghz=500.0)


@pytest.fixture
def small_profile():
    """3 channels x 5 distance points, values in dBm"""
    freq = np.array([193.0, 193.1, 193.2])
    z = np.linspace(0.0, 80.0, 5)
    values = np.array([
        [0.0, -1.0, -2.0, -1.0, 0.0],
        [0.0, 1.0, 2.0, 1.0, 0.0],
        [0.0, -4.0, -8.0, -12.0, -16.0],
    ])
    return PowerProfile2D(values, freq, z)


@pytest.fixture
def decay_profile():
    """Pure 0.2 dB/km decay over 80 km on the 161-point grid, two channels"""
    z = z_grid(80.0, 0.5)
    values = np.tile(-0.2 * z, (2, 1))
    return PowerProfile2D(values, np.array([193.0, 193.1]), z)


def sphere(center):
    center = np.asarray(center, dtype=float)

    def objective(x):
        return float(np.sum((np.asarray(x) - center) ** 2))
    return objective


@pytest.fixture
def sphere_objective():
    """Minimum 0 at [300, 50, 50, 50, 600, 50, 50, 50], inside the pump box"""
    return sphere([300.0, 50.0, 50.0, 50.0, 600.0, 50.0, 50.0, 50.0])
