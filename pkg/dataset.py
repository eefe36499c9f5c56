"""
Training corpus: random pump configurations -> 2D signal profiles
- Uniform pump draws inside the pump power box, one solver run per sample
- Storage: manifest.json + samples.rrd (little-endian float32 records)
- Deterministic contiguous train/val/test split
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, Field, model_validator
from scipy import stats
from tqdm import tqdm

from bvp_solver import SolverConfig, solve
from raman_model import (
    FiberSpec,
    PumpConfig,
    WaveConfig,
    build_wave_set,
    pump_power_bounds,
)
from utils import InvalidArgumentError, InvalidStateError, NotFoundError, hash_payload

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
RECORDS_NAME = 'samples.rrd'
FLOAT_FORMAT = 'le_f32'
SPLIT_NAMES = ('train', 'val', 'test')


# ========================================================================
# TYPES
# ========================================================================

class DatasetConfig(BaseModel):
    count: int = Field(5100, ge=0)
    seed: int = 0
    split: dict[str, int] = {'train': 3500, 'val': 800, 'test': 800}
    max_failure_rate: float = Field(0.05, ge=0, le=1)
    max_redraws_per_sample: int = Field(20, ge=0)

    @model_validator(mode='after')
    def _split_names(self):
        if set(self.split) != set(SPLIT_NAMES):
            raise ValueError(f"split must define exactly {SPLIT_NAMES}")
        if any(v < 0 for v in self.split.values()):
            raise ValueError("split sizes must be non-negative")
        return self


class DatasetManifest(BaseModel):
    seed: int
    counts: dict[str, int]
    redraws: int
    config_hash: str
    record_bytes: int
    float_format: str = FLOAT_FORMAT
    n_records: int
    n_pumps: int
    n_channels: int
    n_z: int
    layout: str = "per record: pumps_mw[n_pumps] then profile_dbm[n_channels x n_z] row-major"

    @property
    def floats_per_record(self):
        return self.n_pumps + self.n_channels * self.n_z


@dataclass(frozen=True, eq=False)
class Sample:
    pumps_mw: np.ndarray
    profile_dbm: np.ndarray


def physics_hash(fiber: FiberSpec, waves: WaveConfig, solver_cfg: SolverConfig):
    """Hash of everything that changes the stored profiles"""
    return hash_payload({
        'fiber': fiber.model_dump(mode='json'),
        'waves': waves.model_dump(mode='json'),
        'solver': solver_cfg.model_dump(mode='json'),
    })


# ========================================================================
# SAMPLING
# ========================================================================

def sample_pump_config(rng, lower=None, upper=None):
    """
    Draw each pump independently and uniformly inside its range

    Args:
        rng: numpy Generator (anything with .random(n))
        lower, upper: box [mW], the full pump ranges by default

    Returns:
        PumpConfig
    """
    if lower is None or upper is None:
        lower, upper = pump_power_bounds()
    u = np.asarray(rng.random(len(lower)), dtype=float)
    return PumpConfig(lower + u * (upper - lower))


def _sample_seed(seed, index):
    return int(seed) ^ int(index)


def _generate_one(index, seed, fiber, wave_set, solver_cfg, max_redraws):
    """Draw and solve sample `index`; redraw from the same stream on failure"""
    rng = np.random.default_rng(_sample_seed(seed, index))
    redraws = 0
    while True:
        pumps = sample_pump_config(rng)
        result = solve(pumps, fiber, wave_set, solver_cfg)
        if result.converged and result.signal_profile.is_finite:
            return pumps.powers_mw, result.signal_profile.values_dbm, redraws
        redraws += 1
        logger.warning("sample %d: solver failed (residual %.2e), redrawing",
                       index, result.final_residual)
        if redraws > max_redraws:
            raise InvalidStateError(f"sample {index}: {redraws} consecutive solver failures")


def split_counts(n, split):
    """Scale the configured split to `n` records, remainder goes to train"""
    total = sum(split.values())
    if n == total:
        return dict(split)
    if total == 0:
        return {'train': n, 'val': 0, 'test': 0}
    counts = {name: int(n * split[name] // total) for name in ('val', 'test')}
    counts['train'] = n - counts['val'] - counts['test']
    return {name: counts[name] for name in SPLIT_NAMES}


# ========================================================================
# GENERATION
# ========================================================================

def generate(out_dir, n=None, seed=None, fiber: FiberSpec = None, waves: WaveConfig = None,
             solver_cfg: SolverConfig = None, dataset_cfg: DatasetConfig = None, n_jobs=1):
    """
    Generate `n` samples and write manifest + record file

    Per-sample sub-seeds (seed XOR index) make the content independent of the
    number of workers; writes happen in index order.

    Returns:
        DatasetManifest
    """
    fiber = fiber or FiberSpec()
    waves = waves or WaveConfig()
    solver_cfg = solver_cfg or SolverConfig()
    dataset_cfg = dataset_cfg or DatasetConfig()
    n = dataset_cfg.count if n is None else int(n)
    seed = dataset_cfg.seed if seed is None else int(seed)
    if n < 0:
        raise InvalidArgumentError(f"sample count must be non-negative, got {n}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wave_set = build_wave_set(fiber, waves)
    n_z = int(round(fiber.span_length / solver_cfg.z_step)) + 1

    jobs = (
        delayed(_generate_one)(i, seed, fiber, wave_set, solver_cfg,
                               dataset_cfg.max_redraws_per_sample)
        for i in range(n)
    )
    progress = tqdm(total=n, desc="Generating samples", unit="sample", disable=None)
    results = []
    if n_jobs == 1:
        for job in jobs:
            fn, args, kwargs = job
            results.append(fn(*args, **kwargs))
            progress.update(1)
    else:
        for item in Parallel(n_jobs=n_jobs, return_as='generator')(jobs):
            results.append(item)
            progress.update(1)
    progress.close()

    redraws = sum(r[2] for r in results)
    attempts = n + redraws
    if attempts and redraws / attempts > dataset_cfg.max_failure_rate:
        raise InvalidStateError(
            f"solver failure rate {redraws / attempts:.1%} exceeds "
            f"{dataset_cfg.max_failure_rate:.0%} ({redraws} of {attempts} draws)"
        )

    n_channels = wave_set.n_signals
    n_pumps = wave_set.n_pumps
    with open(out_dir / RECORDS_NAME, 'wb') as fh:
        for pumps_mw, profile, _ in results:
            record = np.concatenate([pumps_mw, profile.reshape(-1)]).astype('<f4')
            fh.write(record.tobytes())

    manifest = DatasetManifest(
        seed=seed,
        counts=split_counts(n, dataset_cfg.split),
        redraws=redraws,
        config_hash=physics_hash(fiber, waves, solver_cfg),
        record_bytes=4 * (n_pumps + n_channels * n_z),
        n_records=n,
        n_pumps=n_pumps,
        n_channels=n_channels,
        n_z=n_z,
    )
    write_manifest(out_dir, manifest)
    logger.info("wrote %d samples (%d redraws) to %s", n, redraws, out_dir)
    return manifest


def write_manifest(out_dir, manifest: DatasetManifest):
    text = json.dumps(manifest.model_dump(mode='json'), indent=2, sort_keys=True)
    (Path(out_dir) / MANIFEST_NAME).write_text(text + '\n', encoding='utf-8')


def read_manifest(data_dir):
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise NotFoundError(f"dataset manifest not found: {path}")
    manifest = DatasetManifest.model_validate_json(path.read_text(encoding='utf-8'))
    records = Path(data_dir) / RECORDS_NAME
    if not records.exists():
        raise NotFoundError(f"dataset records not found: {records}")
    expected = manifest.n_records * manifest.record_bytes
    if records.stat().st_size != expected:
        raise InvalidStateError(
            f"{records}: {records.stat().st_size} bytes, manifest expects {expected}"
        )
    if sum(manifest.counts.values()) != manifest.n_records:
        raise InvalidStateError("manifest split counts do not match the stored records")
    return manifest


# ========================================================================
# SPLIT + LOAD
# ========================================================================

def split(manifest: DatasetManifest, ratios=None):
    """
    Contiguous, disjoint index ranges per split name

    Args:
        manifest: DatasetManifest
        ratios: optional {train, val, test} sizes or fractions overriding the manifest

    Returns:
        dict name -> range
    """
    counts = manifest.counts
    if ratios is not None:
        if set(ratios) != set(SPLIT_NAMES):
            raise InvalidArgumentError(f"ratios must define {SPLIT_NAMES}")
        if all(isinstance(v, int) for v in ratios.values()):
            counts = dict(ratios)
        else:
            counts = split_counts(manifest.n_records, ratios)
        if sum(counts.values()) > manifest.n_records:
            raise InvalidArgumentError("split sizes exceed the number of stored records")

    ranges = {}
    start = 0
    for name in SPLIT_NAMES:
        ranges[name] = range(start, start + counts[name])
        start += counts[name]
    return ranges


def _read_block(data_dir, manifest: DatasetManifest, index_range: range):
    if len(index_range) == 0:
        return np.empty((0, manifest.floats_per_record), dtype='<f4')
    block = np.fromfile(
        Path(data_dir) / RECORDS_NAME,
        dtype='<f4',
        count=len(index_range) * manifest.floats_per_record,
        offset=index_range.start * manifest.record_bytes,
    )
    return block.reshape(len(index_range), manifest.floats_per_record)


def load_arrays(data_dir, split_name, ratios=None, limit=None):
    """
    Load one split as arrays

    Returns:
        (pumps [N, n_pumps] float32, profiles [N, n_channels, n_z] float32)
    """
    manifest = read_manifest(data_dir)
    ranges = split(manifest, ratios)
    if split_name not in ranges:
        raise NotFoundError(f"unknown split {split_name!r}; expected one of {SPLIT_NAMES}")
    index_range = ranges[split_name]
    if limit is not None:
        index_range = index_range[:limit]
    block = _read_block(data_dir, manifest, index_range)
    pumps = block[:, :manifest.n_pumps]
    profiles = block[:, manifest.n_pumps:].reshape(-1, manifest.n_channels, manifest.n_z)
    return pumps, profiles


def load(data_dir, split_name, ratios=None):
    """Iterate over the Samples of one split in stored order"""
    pumps, profiles = load_arrays(data_dir, split_name, ratios)
    for p, prof in zip(pumps, profiles):
        yield Sample(pumps_mw=p, profile_dbm=prof)


# ========================================================================
# SANITY CHECKS
# ========================================================================

def uniformity_report(pumps_mw, lower=None, upper=None):
    """Kolmogorov-Smirnov statistic and p-value of each pump against its uniform range"""
    if lower is None or upper is None:
        lower, upper = pump_power_bounds()
    pumps_mw = np.asarray(pumps_mw, dtype=float)
    if pumps_mw.ndim != 2 or pumps_mw.shape[1] != len(lower):
        raise InvalidArgumentError(f"expected shape (N, {len(lower)}), got {pumps_mw.shape}")
    report = []
    for k in range(pumps_mw.shape[1]):
        result = stats.kstest(pumps_mw[:, k], 'uniform', args=(lower[k], upper[k] - lower[k]))
        report.append({'pump': f"p{k + 1}", 'ks_statistic': float(result.statistic),
                       'p_value': float(result.pvalue)})
    return report


def ks_critical_value(n, alpha=0.01):
    """Asymptotic one-sample KS critical value"""
    return float(np.sqrt(-0.5 * np.log(alpha / 2.0)) / np.sqrt(n))
