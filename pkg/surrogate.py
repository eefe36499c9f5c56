"""
Convolutional inverse surrogate: 2D power profile -> 8 pump powers
- 4 x (3x3 conv + ReLU + 2x2 ceil-mode max pool), dense(64) + ReLU, dense(8) + logistic
- Training with minibatch Adam and early stopping on validation MSE
- Evaluation metrics: per-pump R^2 and E_max between true and re-solved profiles
- Model file: model.json manifest + weights.bin (little-endian float64)
"""
import copy
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field
from torch import nn
from tqdm import tqdm

from bvp_solver import PowerProfile2D
from raman_model import PumpConfig, pump_power_bounds
from utils import (
    InvalidArgumentError,
    NotFoundError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

MODEL_MANIFEST = 'model.json'
MODEL_WEIGHTS = 'weights.bin'
EVAL_CHUNK = 256


# ========================================================================
# CONFIGURATION
# ========================================================================

class NetworkSpec(BaseModel):
    input_shape: tuple[int, int] = (40, 161)
    conv_filters: list[int] = [8, 16, 16, 32]
    kernel_size: int = Field(3, ge=1)
    pool_size: int = Field(2, ge=1)
    dense_units: int = Field(64, ge=1)
    n_outputs: int = Field(8, ge=1)


class TrainConfig(BaseModel):
    batch_size: int = Field(32, ge=1)
    max_epochs: int = Field(500, ge=1)
    patience: int = Field(25, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    seed: int = 0


def flatten_length(spec: NetworkSpec):
    """Feature count after the conv/pool stack (ceil-mode pooling, same-padding convs)"""
    h, w = spec.input_shape
    for _ in spec.conv_filters:
        h = math.ceil(h / spec.pool_size)
        w = math.ceil(w / spec.pool_size)
    return h * w * spec.conv_filters[-1]


def build_network(spec: NetworkSpec, seed=0):
    """
    Layered CNN with fan-in scaled uniform initialization

    Args:
        spec: NetworkSpec
        seed: initialization seed

    Returns:
        nn.Sequential producing outputs in (0, 1)
    """
    layers = []
    in_channels = 1
    for filters in spec.conv_filters:
        layers += [
            nn.Conv2d(in_channels, filters, spec.kernel_size, stride=1, padding=spec.kernel_size // 2),
            nn.ReLU(),
            nn.MaxPool2d(spec.pool_size, stride=spec.pool_size, ceil_mode=True),
        ]
        in_channels = filters
    layers += [
        nn.Flatten(),
        nn.Linear(flatten_length(spec), spec.dense_units),
        nn.ReLU(),
        nn.Linear(spec.dense_units, spec.n_outputs),
        nn.Sigmoid(),
    ]
    model = nn.Sequential(*layers)

    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for module in model:
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                fan_in = module.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.uniform_(-bound, bound, generator=generator)
                module.bias.uniform_(-bound, bound, generator=generator)
    return model


# ========================================================================
# NORMALIZATION
# ========================================================================

@dataclass
class Normalizer:
    """Scalar standardization of dBm inputs, min/max scaling of pump outputs"""
    input_mean: float
    input_std: float
    output_lower: np.ndarray
    output_upper: np.ndarray

    @classmethod
    def fit(cls, train_profiles, lower=None, upper=None):
        if lower is None or upper is None:
            lower, upper = pump_power_bounds()
        values = np.asarray(train_profiles, dtype=np.float64)
        std = float(values.std())
        return cls(
            input_mean=float(values.mean()),
            input_std=std if std > 0 else 1.0,
            output_lower=np.asarray(lower, dtype=np.float64),
            output_upper=np.asarray(upper, dtype=np.float64),
        )

    def normalize_input(self, profiles_dbm):
        return (np.asarray(profiles_dbm, dtype=np.float64) - self.input_mean) / self.input_std

    def normalize_output(self, pumps_mw):
        span = self.output_upper - self.output_lower
        return (np.asarray(pumps_mw, dtype=np.float64) - self.output_lower) / span

    def denormalize_output(self, normalized):
        span = self.output_upper - self.output_lower
        return self.output_lower + np.asarray(normalized, dtype=np.float64) * span

    def to_dict(self):
        return {
            'input_mean': self.input_mean,
            'input_std': self.input_std,
            'output_lower': self.output_lower.tolist(),
            'output_upper': self.output_upper.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            input_mean=float(data['input_mean']),
            input_std=float(data['input_std']),
            output_lower=np.asarray(data['output_lower'], dtype=np.float64),
            output_upper=np.asarray(data['output_upper'], dtype=np.float64),
        )


# ========================================================================
# SURROGATE
# ========================================================================

def _as_batch(profiles, spec: NetworkSpec):
    if isinstance(profiles, PowerProfile2D):
        profiles = profiles.values_dbm
    array = np.asarray(profiles, dtype=np.float64)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3 or tuple(array.shape[1:]) != tuple(spec.input_shape):
        raise InvalidArgumentError(
            f"profile shape {array.shape[1:]} does not match network input {tuple(spec.input_shape)}"
        )
    return array


def _param_dtype(model):
    return next(model.parameters()).dtype


def run_model(model, inputs, chunk=EVAL_CHUNK):
    """Evaluate `model` on normalized inputs (N, H, W) without gradients"""
    dtype = _param_dtype(model)
    outputs = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(inputs), chunk):
            x = torch.as_tensor(inputs[start:start + chunk], dtype=dtype).unsqueeze(1)
            outputs.append(model(x).to(torch.float64).numpy())
    if not outputs:
        return np.empty((0, model[-2].out_features))
    return np.concatenate(outputs)


class InverseSurrogate:
    """Trained network + normalizer; maps target profiles to pump powers"""

    def __init__(self, spec: NetworkSpec, model: nn.Module, normalizer: Normalizer, seed=0):
        self.spec = spec
        self.model = model
        self.normalizer = normalizer
        self.seed = seed

    def forward(self, profiles):
        """Normalized pump vectors in (0, 1), shape (N, n_outputs)"""
        batch = _as_batch(profiles, self.spec)
        return run_model(self.model, self.normalizer.normalize_input(batch))

    def predict_pumps_mw(self, profiles):
        return self.normalizer.denormalize_output(self.forward(profiles))

    def predict_pumps(self, profile):
        """Single profile -> PumpConfig inside the output box"""
        return PumpConfig(self.predict_pumps_mw(profile)[0])


def forward(surrogate: InverseSurrogate, profile):
    return surrogate.forward(profile)[0]


def predict_pumps(surrogate: InverseSurrogate, profile):
    return surrogate.predict_pumps(profile)


def mse_loss(model, inputs, targets):
    dtype = _param_dtype(model)
    x = torch.as_tensor(np.asarray(inputs), dtype=dtype).unsqueeze(1)
    y = torch.as_tensor(np.asarray(targets), dtype=dtype)
    return F.mse_loss(model(x), y)


def gradients(model, inputs, targets):
    """
    Backpropagated gradients of the batch-mean squared error

    Returns:
        dict parameter name -> gradient tensor
    """
    if len(inputs) == 0:
        raise InvalidArgumentError("gradient batch must be non-empty")
    model.zero_grad(set_to_none=True)
    loss = mse_loss(model, inputs, targets)
    loss.backward()
    return {name: p.grad.detach().clone() for name, p in model.named_parameters()}


# ========================================================================
# GRADIENT CHECK
# ========================================================================

class _KinkRecorder:
    """Records ReLU sign patterns and max-pool argmax indices of a forward pass"""

    def __init__(self, model):
        self.patterns = []
        self.handles = []
        for module in model:
            if isinstance(module, nn.ReLU):
                self.handles.append(module.register_forward_hook(self._relu_hook))
            elif isinstance(module, nn.MaxPool2d):
                self.handles.append(module.register_forward_hook(self._pool_hook))

    def _relu_hook(self, module, inputs, output):
        self.patterns.append(output > 0)

    def _pool_hook(self, module, inputs, output):
        _, indices = F.max_pool2d(inputs[0], module.kernel_size, module.stride,
                                  ceil_mode=module.ceil_mode, return_indices=True)
        self.patterns.append(indices)

    def capture(self, fn):
        self.patterns = []
        value = fn()
        return value, self.patterns

    def close(self):
        for handle in self.handles:
            handle.remove()


def gradient_check(model, inputs, targets, n_probes=100, eps=1e-5, seed=0, floor=1e-6):
    """
    Compare autograd gradients with central finite differences

    Probes whose +/-eps perturbation flips a ReLU or moves a max-pool argmax are
    skipped: the loss is not differentiable across those kinks.

    Returns:
        np.ndarray of relative errors |a - n| / max(|a|, |n|, floor), one per probe
    """
    model = copy.deepcopy(model).double()
    analytic = gradients(model, inputs, targets)
    params = dict(model.named_parameters())
    names = list(params)
    sizes = np.array([params[n].numel() for n in names])
    rng = np.random.default_rng(seed)

    recorder = _KinkRecorder(model)
    errors = []
    attempts = 0
    try:
        while len(errors) < n_probes and attempts < 20 * n_probes:
            attempts += 1
            name = names[rng.choice(len(names), p=sizes / sizes.sum())]
            flat = params[name].data.view(-1)
            k = int(rng.integers(flat.numel()))
            original = flat[k].item()
            with torch.no_grad():
                flat[k] = original + eps
                loss_plus, pattern_plus = recorder.capture(
                    lambda: mse_loss(model, inputs, targets).item())
                flat[k] = original - eps
                loss_minus, pattern_minus = recorder.capture(
                    lambda: mse_loss(model, inputs, targets).item())
                flat[k] = original
            if any(not torch.equal(a, b) for a, b in zip(pattern_plus, pattern_minus)):
                continue
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            exact = analytic[name].view(-1)[k].item()
            errors.append(abs(exact - numeric) / max(abs(exact), abs(numeric), floor))
    finally:
        recorder.close()
    if len(errors) < n_probes:
        logger.warning("gradient check collected %d of %d probes", len(errors), n_probes)
    return np.array(errors)


# ========================================================================
# TRAINING
# ========================================================================

@dataclass
class TrainResult:
    surrogate: InverseSurrogate
    curve: pd.DataFrame
    best_val_mse: float
    best_epoch: int


def _mean_mse(model, inputs, targets):
    if len(inputs) == 0:
        return float('nan')
    outputs = run_model(model, inputs)
    return float(np.mean((outputs - targets) ** 2))


def train(train_data, val_data, spec: NetworkSpec = None, cfg: TrainConfig = None,
          normalizer: Normalizer = None, show_progress=True):
    """
    Train the inverse model, keeping the weights with the best validation MSE

    Args:
        train_data: (pumps_mw [N, 8], profiles_dbm [N, H, W])
        val_data: same layout; falls back to the training data when empty
        spec: NetworkSpec
        cfg: TrainConfig
        normalizer: reuse a fitted normalizer (fit on train profiles otherwise)

    Returns:
        TrainResult with the learning curve (epoch, train_mse, val_mse)
    """
    spec = spec or NetworkSpec()
    cfg = cfg or TrainConfig()
    train_pumps, train_profiles = train_data
    val_pumps, val_profiles = val_data
    if len(train_pumps) == 0:
        raise InvalidArgumentError("training split is empty")
    if len(val_pumps) == 0:
        logger.warning("validation split is empty; early stopping on training MSE")
        val_pumps, val_profiles = train_pumps, train_profiles

    _as_batch(train_profiles[:1], spec)
    normalizer = normalizer or Normalizer.fit(train_profiles)
    x_train = normalizer.normalize_input(train_profiles).astype(np.float32)
    y_train = normalizer.normalize_output(train_pumps).astype(np.float32)
    x_val = normalizer.normalize_input(val_profiles).astype(np.float32)
    y_val = normalizer.normalize_output(val_pumps).astype(np.float32)

    torch.manual_seed(cfg.seed)
    model = build_network(spec, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    shuffle = torch.Generator().manual_seed(int(cfg.seed))
    x_tensor = torch.from_numpy(x_train).unsqueeze(1)
    y_tensor = torch.from_numpy(y_train)

    rows = []
    best_val = math.inf
    best_epoch = 0
    best_state = copy.deepcopy(model.state_dict())
    epochs = tqdm(range(1, cfg.max_epochs + 1), desc="Training", unit="epoch",
                  disable=None if show_progress else True)
    for epoch in epochs:
        model.train()
        order = torch.randperm(len(x_tensor), generator=shuffle)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            optimizer.zero_grad(set_to_none=True)
            loss = F.mse_loss(model(x_tensor[idx]), y_tensor[idx])
            loss.backward()
            optimizer.step()

        train_mse = _mean_mse(model, x_train, y_train)
        val_mse = _mean_mse(model, x_val, y_val)
        if not np.isfinite(val_mse):
            raise TrainingDivergedError(f"validation MSE is {val_mse} at epoch {epoch}")

        if val_mse < best_val:
            best_val, best_epoch = val_mse, epoch
            best_state = copy.deepcopy(model.state_dict())
        rows.append({'epoch': epoch, 'train_mse': train_mse, 'val_mse': val_mse,
                     'best_val_mse': best_val})
        epochs.set_postfix(train=f"{train_mse:.2e}", val=f"{val_mse:.2e}")

        if epoch - best_epoch >= cfg.patience:
            logger.info("early stop at epoch %d (best epoch %d, val MSE %.3e)",
                        epoch, best_epoch, best_val)
            break

    model.load_state_dict(best_state)
    model.eval()
    surrogate = InverseSurrogate(spec, model, normalizer, seed=cfg.seed)
    return TrainResult(surrogate, pd.DataFrame(rows), best_val, best_epoch)


def train_size_sweep(train_data, val_data, sizes, spec: NetworkSpec = None,
                     cfg: TrainConfig = None):
    """
    Train on nested prefixes of the training split and report the best validation MSE

    Returns:
        DataFrame with columns train_size, best_val_mse, best_epoch
    """
    pumps, profiles = train_data
    rows = []
    for size in sorted(sizes):
        if size > len(pumps):
            logger.warning("train size %d exceeds %d available samples; skipped", size, len(pumps))
            continue
        result = train((pumps[:size], profiles[:size]), val_data, spec, cfg, show_progress=False)
        rows.append({'train_size': size, 'best_val_mse': result.best_val_mse,
                     'best_epoch': result.best_epoch})
        logger.info("train size %d: best val MSE %.3e", size, result.best_val_mse)
    return pd.DataFrame(rows, columns=['train_size', 'best_val_mse', 'best_epoch'])


# ========================================================================
# METRICS
# ========================================================================

def r_squared(predictions, truths):
    """Per-pump coefficient of determination on physical (mW) values"""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape or truths.ndim != 2:
        raise InvalidArgumentError(f"shape mismatch {predictions.shape} vs {truths.shape}")
    if truths.shape[0] < 2:
        raise InvalidArgumentError("R^2 needs at least two samples")
    ss_res = np.sum((truths - predictions) ** 2, axis=0)
    ss_tot = np.sum((truths - truths.mean(axis=0)) ** 2, axis=0)
    zero = ss_tot == 0
    if zero.any():
        logger.warning("zero-variance truth for pumps %s; R^2 undefined",
                       [f"p{i + 1}" for i in np.flatnonzero(zero)])
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(zero, np.nan, 1.0 - ss_res / np.where(zero, 1.0, ss_tot))


def e_max(true_profile, predicted_profile):
    """Max absolute dBm difference between two profiles on the same grids"""
    a = true_profile.values_dbm if isinstance(true_profile, PowerProfile2D) else np.asarray(true_profile)
    b = predicted_profile.values_dbm if isinstance(predicted_profile, PowerProfile2D) else np.asarray(predicted_profile)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))))


def e_max_histogram(values, bin_width=0.1):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {'bin_width_db': bin_width, 'edges': [], 'counts': [], 'mean_db': None, 'std_db': None}
    top = max(bin_width, math.ceil(values.max() / bin_width) * bin_width + bin_width)
    edges = np.arange(0.0, top + bin_width / 2, bin_width)
    counts, edges = np.histogram(values, bins=edges)
    return {
        'bin_width_db': bin_width,
        'edges': edges.round(10).tolist(),
        'counts': counts.tolist(),
        'mean_db': float(values.mean()),
        'std_db': float(values.std(ddof=1)) if values.size > 1 else 0.0,
    }


# ========================================================================
# PERSISTENCE
# ========================================================================

def save_model(surrogate: InverseSurrogate, model_dir, config_hash=None):
    """Write model.json + weights.bin (state_dict order, little-endian float64)"""
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    state = surrogate.model.state_dict()
    layers = [{'name': name, 'shape': list(t.shape)} for name, t in state.items()]
    blob = np.concatenate([
        t.detach().to(torch.float64).reshape(-1).numpy() for t in state.values()
    ]).astype('<f8')
    (model_dir / MODEL_WEIGHTS).write_bytes(blob.tobytes())
    manifest = {
        'spec': surrogate.spec.model_dump(mode='json'),
        'normalizer': surrogate.normalizer.to_dict(),
        'seed': surrogate.seed,
        'layers': layers,
        'weights_file': MODEL_WEIGHTS,
        'float_format': 'le_f64',
        'config_hash': config_hash,
    }
    (model_dir / MODEL_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n',
                                            encoding='utf-8')
    return model_dir


def load_model(model_dir):
    model_dir = Path(model_dir)
    manifest_path = model_dir / MODEL_MANIFEST
    if not manifest_path.exists():
        raise NotFoundError(f"model manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    weights_path = model_dir / manifest.get('weights_file', MODEL_WEIGHTS)
    if not weights_path.exists():
        raise NotFoundError(f"model weights not found: {weights_path}")

    spec = NetworkSpec.model_validate(manifest['spec'])
    model = build_network(spec, seed=manifest.get('seed', 0))
    blob = np.fromfile(weights_path, dtype='<f8')
    state = model.state_dict()
    offset = 0
    for layer in manifest['layers']:
        count = int(np.prod(layer['shape'])) if layer['shape'] else 1
        target = state[layer['name']]
        values = blob[offset:offset + count].reshape(layer['shape'])
        state[layer['name']] = torch.as_tensor(values, dtype=target.dtype)
        offset += count
    if offset != blob.size:
        raise InvalidArgumentError(f"{weights_path}: {blob.size} values, layers need {offset}")
    model.load_state_dict(state)
    model.eval()
    return InverseSurrogate(spec, model, Normalizer.from_dict(manifest['normalizer']),
                            seed=manifest.get('seed', 0))
