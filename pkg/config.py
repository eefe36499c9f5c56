"""
Run configuration: every section in one JSON document
- Missing sections take the default 80 km / 40 channel / 8 pump setup
- Precedence: CLI flag > environment (RPD_SEED, .env) > config file > defaults
- config_hash stamps every output artifact
"""
import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

from bvp_solver import SolverConfig
from dataset import DatasetConfig
from de_optimizer import DEParams
from raman_model import FiberSpec, WaveConfig
from surrogate import NetworkSpec, TrainConfig
from utils import InvalidArgumentError, NotFoundError, hash_payload

logger = logging.getLogger(__name__)

SEED_ENV = 'RPD_SEED'


class RunConfig(BaseModel):
    fiber: FiberSpec = Field(default_factory=FiberSpec)
    waves: WaveConfig = Field(default_factory=WaveConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    training: TrainConfig = Field(default_factory=TrainConfig)
    de: DEParams = Field(default_factory=DEParams)
    seed: int = 0
    out_dir: Optional[str] = None

    def with_seed(self, seed):
        """Propagate the global seed into every seeded section"""
        seed = int(seed)
        return self.model_copy(update={
            'seed': seed,
            'dataset': self.dataset.model_copy(update={'seed': seed}),
            'training': self.training.model_copy(update={'seed': seed}),
            'de': self.de.model_copy(update={'seed': seed}),
        })


def config_hash(cfg: RunConfig):
    """First 16 hex chars of the SHA-256 of the canonical JSON, output dir excluded"""
    return hash_payload(cfg.model_dump(mode='json', exclude={'out_dir'}))


def env_seed():
    load_dotenv()
    value = os.getenv(SEED_ENV)
    if value is None or value.strip() == '':
        return None
    try:
        return int(value)
    except ValueError:
        raise InvalidArgumentError(f"{SEED_ENV} must be an integer, got {value!r}")


def load_config(path=None, seed=None, out_dir=None):
    """
    Resolve the run configuration

    Args:
        path: JSON config file (defaults only when None)
        seed: CLI seed override
        out_dir: CLI output directory override

    Returns:
        RunConfig
    """
    if path is None:
        cfg = RunConfig()
    else:
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"config file not found: {path}")
        cfg = RunConfig.model_validate_json(path.read_text(encoding='utf-8'))

    from_env = env_seed()
    if seed is None and from_env is not None:
        logger.info("seed %d taken from %s", from_env, SEED_ENV)
        seed = from_env
    # the global seed drives the dataset, training and DE streams
    cfg = cfg.with_seed(cfg.seed if seed is None else seed)

    if out_dir is not None:
        cfg = cfg.model_copy(update={'out_dir': str(out_dir)})
    return cfg
