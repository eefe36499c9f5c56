"""
Utility functions used across the package
- Unit conversions between linear power, dBm and attenuation units
- Error hierarchy shared by every module
- Logging setup (rich) and canonical JSON hashing
"""
import hashlib
import json
import logging

import numpy as np
from rich.logging import RichHandler

logger = logging.getLogger(__name__)

# Speed of light expressed in nm*THz so that c / lambda[nm] gives THz directly
SPEED_OF_LIGHT_NM_THZ = 299792.458

# Floor used when turning linear power into a relative measure
POWER_FLOOR_W = 1e-12


# ========================================================================
# ERRORS
# ========================================================================

class RamanDesignError(Exception):
    """Base class for every error raised by the package"""


class InvalidArgumentError(RamanDesignError, ValueError):
    """An argument violates the operation's precondition"""


class InvalidStateError(RamanDesignError, RuntimeError):
    """Data reached a state the operation cannot work with"""


class NotFoundError(RamanDesignError, FileNotFoundError):
    """A dataset, model or config file is missing"""


class ConvergenceError(InvalidStateError):
    """Boundary value solve did not reach its residual threshold"""


class TrainingDivergedError(InvalidStateError):
    """Validation loss became NaN during training"""


# ========================================================================
# UNIT CONVERSIONS
# ========================================================================

def db_to_neper(alpha_db_per_km):
    """Convert attenuation in dB/km to 1/km (natural units)"""
    return np.asarray(alpha_db_per_km, dtype=float) * np.log(10.0) / 10.0


def mw_to_dbm(power_mw):
    """
    Convert linear power in mW to dBm

    Non-positive entries map to -inf; callers decide whether that is an error.
    """
    power_mw = np.asarray(power_mw, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        dbm = 10.0 * np.log10(power_mw)
    return np.where(power_mw > 0, dbm, -np.inf)


def dbm_to_mw(power_dbm):
    """Convert dBm to linear power in mW"""
    return np.power(10.0, np.asarray(power_dbm, dtype=float) / 10.0)


def dbm_to_w(power_dbm):
    return dbm_to_mw(power_dbm) * 1e-3


# ========================================================================
# JSON + HASHING
# ========================================================================

def canonical_json(data):
    """Serialize with sorted keys and compact separators (stable across runs)"""
    return json.dumps(data, sort_keys=True, separators=(',', ':'), allow_nan=False)


def hash_payload(data, length=16):
    """Short SHA-256 digest of the canonical JSON form of `data`"""
    digest = hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()
    return digest[:length]


def to_jsonable(value):
    """Turn numpy scalars/arrays into plain Python values for json.dump"""
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


# ========================================================================
# LOGGING
# ========================================================================

def setup_logging(verbosity=0):
    """
    Install a rich handler on the root logger

    Args:
        verbosity: 0 -> WARNING, 1 -> INFO, 2+ -> DEBUG
    """
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG

    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)

    handler = RichHandler(rich_tracebacks=verbosity >= 2, show_path=verbosity >= 2)
    handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
    root.addHandler(handler)
    root.setLevel(level)
    return level
