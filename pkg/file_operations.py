"""
Artifact writers and readers
- CSVs (pandas) start with a "# config_hash: ..." comment line
- PGM heatmaps carry the hash and the dBm scale in header comments
- JSON documents are written with sorted keys so reruns are byte-identical
"""
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from bvp_solver import PowerProfile2D, profile_from_frame, profile_to_frame
from objectives import CostBreakdown
from utils import InvalidArgumentError, NotFoundError, to_jsonable

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.6f'
HASH_PREFIX = '# config_hash: '


# ========================================================================
# GENERIC
# ========================================================================

def save_csv(path, frame: pd.DataFrame, config_hash=None, float_format=FLOAT_FORMAT):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        if config_hash:
            fh.write(f"{HASH_PREFIX}{config_hash}\n")
        frame.to_csv(fh, index=False, float_format=float_format, lineterminator='\n')
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def load_csv(path):
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"file not found: {path}")
    return pd.read_csv(path, comment='#')


def read_config_hash(path):
    """Hash stamped on the first line of a CSV, None when absent"""
    with open(path, encoding='utf-8') as fh:
        first = fh.readline().rstrip('\n')
    return first[len(HASH_PREFIX):] if first.startswith(HASH_PREFIX) else None


def save_json(path, data, config_hash=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(data)
    if config_hash:
        payload['config_hash'] = config_hash
    path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + '\n',
                    encoding='utf-8')
    return path


def load_json(path):
    path = Path(path)
    if not path.exists():
        raise NotFoundError(f"file not found: {path}")
    return json.loads(path.read_text(encoding='utf-8'))


# ========================================================================
# PROFILES
# ========================================================================

def save_profile_csv(path, profile: PowerProfile2D, config_hash=None):
    """One row per distance point: z_km, then one dBm column per channel"""
    return save_csv(path, profile_to_frame(profile), config_hash)


def load_profile_csv(path):
    return profile_from_frame(load_csv(path))


def save_heatmap_pgm(path, profile: PowerProfile2D, config_hash=None):
    """
    Binary greyscale heatmap, rows = channels (ascending f), columns = distance

    Grey levels map linearly from min (0) to max (255) dBm of the profile.
    """
    values = profile.values_dbm
    if not profile.is_finite:
        raise InvalidArgumentError("cannot render a profile with non-finite entries")
    p_min, p_max = float(values.min()), float(values.max())
    if p_max > p_min:
        grey = np.rint((values - p_min) / (p_max - p_min) * 255.0)
    else:
        grey = np.zeros_like(values)
    height, width = values.shape

    header = "P5\n"
    if config_hash:
        header += f"# config_hash: {config_hash}\n"
    header += f"# pmin_dbm: {p_min:.6f} pmax_dbm: {p_max:.6f}\n"
    header += f"{width} {height}\n255\n"

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header.encode('ascii') + grey.astype(np.uint8).tobytes())
    return path


def load_heatmap_pgm(path):
    """Returns (grey levels [rows, cols] uint8, comment lines)"""
    data = Path(path).read_bytes()
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        end = data.index(b'\n', pos)
        line = data[pos:end].decode('ascii')
        pos = end + 1
        if line.startswith('#'):
            comments.append(line[1:].strip())
        else:
            tokens.extend(line.split())
    if tokens[0] != 'P5':
        raise InvalidArgumentError(f"{path}: not a binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos:pos + width * height], dtype=np.uint8)
    return pixels.reshape(height, width), comments


# ========================================================================
# COSTS + DESIGN RESULTS
# ========================================================================

def save_cost_json(path, breakdown: CostBreakdown, config_hash=None, extra=None):
    data = breakdown.to_dict()
    data['cost'] = breakdown.cost
    data.update(breakdown.extremes())
    if extra:
        data.update(extra)
    return save_json(path, data, config_hash)


def save_trace_csv(path, trace, config_hash=None):
    """eval_index, p1..p8, j0, j1, j2, weighted_or_asym, best_so_far"""
    return save_csv(path, trace.to_frame(), config_hash)


def save_curves_csv(path, curves: pd.DataFrame, config_hash=None):
    return save_csv(path, curves, config_hash)


def save_learning_curve_csv(path, curve: pd.DataFrame, config_hash=None):
    return save_csv(path, curve[['epoch', 'train_mse', 'val_mse']], config_hash,
                    float_format='%.8e')


def channel_analysis_frame(profile: PowerProfile2D, breakdown: CostBreakdown):
    values = profile.values_dbm
    return pd.DataFrame({
        'channel': np.arange(profile.shape[0]),
        'frequency_thz': profile.freq_grid,
        'excursion_db': values.max(axis=1) - values.min(axis=1),
        'end_gain_db': values[:, -1] - values[:, 0],
        'asymmetry': breakdown.asymmetry_per_channel,
    })


def save_channel_analysis_csv(path, profile: PowerProfile2D, breakdown: CostBreakdown,
                              config_hash=None):
    return save_csv(path, channel_analysis_frame(profile, breakdown), config_hash)


def pump_table(labels_to_powers):
    """{label: PumpConfig or array} -> {label: {p1: .., ..}} rounded to 0.1 mW"""
    table = {}
    for label, pumps in labels_to_powers.items():
        powers = getattr(pumps, 'powers_mw', pumps)
        table[label] = {f"p{k + 1}": round(float(v), 1) for k, v in enumerate(powers)}
    return table


def save_summary_json(path, scenario, models, config_hash=None, extra=None):
    """
    Per-model pump values and cost breakdown

    Args:
        scenario: scenario name (m1, m2, m3, symmetric, ...)
        models: {label: (pumps, CostBreakdown)}, e.g. "CNN" and "CNN+DE"
    """
    data = {
        'scenario': scenario,
        'pumps_mw': pump_table({k: v[0] for k, v in models.items()}),
        'costs': {k: {**v[1].to_dict(), 'cost': v[1].cost, **v[1].extremes()}
                  for k, v in models.items()},
    }
    if extra:
        data.update(extra)
    return save_json(path, data, config_hash)
