import configparser
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from deepboost.deepmodel import ModelConfig
from deepboost.filters import GaborParams
from utils.exceptions import ConfigError
from utils.logger import Logger

logger = Logger.get_logger(__name__)

SEED_ENV = 'DEEPBOOST_SEED'
DATASET_KINDS = ('dir', 'cifar10', 'synth-bars')
_SECTION = 'run'


def parse_rounds(value: Union[str, int, Tuple[int, ...]]) -> Tuple[int, ...]:
    """'50' or '50,30,30' -> per-layer boosting budgets"""
    if isinstance(value, int):
        return (value,)
    if isinstance(value, str):
        try:
            return tuple(int(part) for part in value.split(',') if part.strip())
        except ValueError:
            raise ConfigError(f"rounds: expected comma-separated integers, got '{value}'")
    return tuple(int(v) for v in value)


def parse_bool(value: Union[str, bool]) -> bool:
    if isinstance(value, bool):
        return value
    lowered = value.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError(f"Expected a boolean, got '{value}'")


@dataclass
class RunConfig:
    """Every knob of a training or evaluation run"""
    dataset: str = 'synth-bars'
    data_path: Optional[str] = None
    target_size: int = 32
    n_per_class: int = 100
    data_seed: Optional[int] = None
    distractor: float = 0.0
    layers: int = 1
    rounds: Tuple[int, ...] = (50,)
    lam: float = 0.1
    eta: float = 0.01
    grad_steps: int = 10
    outer_iters: int = 5
    tol: float = 1e-3
    bins: int = 50
    threshold: float = 0.7
    orientations: int = 16
    compress: bool = True
    raw_compose: bool = False
    max_candidates: int = 64
    seed: Optional[int] = None
    jobs: int = 1
    output_dir: str = 'output'
    config_file: Optional[str] = None

    def __post_init__(self):
        self.rounds = parse_rounds(self.rounds)

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def validate(self):
        """Raise ConfigError naming the first invalid field"""
        checks = [
            ('dataset', self.dataset in DATASET_KINDS, f"must be one of {', '.join(DATASET_KINDS)}"),
            ('data_path', self.dataset == 'synth-bars' or bool(self.data_path), "is required for this dataset"),
            ('target_size', self.target_size >= 8, "must be >= 8"),
            ('n_per_class', self.n_per_class >= 1, "must be >= 1"),
            ('distractor', 0.0 <= self.distractor <= 1.0, "must lie in [0, 1]"),
            ('layers', self.layers >= 1, "must be >= 1"),
            ('rounds', bool(self.rounds) and min(self.rounds) >= 1, "must be >= 1 for every layer"),
            ('lam', self.lam >= 0, "must be >= 0"),
            ('eta', self.eta > 0, "must be > 0"),
            ('grad_steps', self.grad_steps >= 0, "must be >= 0"),
            ('outer_iters', self.outer_iters >= 1, "must be >= 1"),
            ('tol', 0 < self.tol < 1, "must lie in (0, 1)"),
            ('bins', self.bins >= 1, "must be >= 1"),
            ('threshold', self.threshold >= 0, "must be >= 0"),
            ('orientations', self.orientations >= 1, "must be >= 1"),
            ('max_candidates', self.max_candidates >= 1, "must be >= 1"),
            ('seed', self.seed is not None, "is not set"),
            ('jobs', self.jobs >= 1, "must be >= 1"),
        ]
        for name, ok, message in checks:
            if not ok:
                raise ConfigError(f"{name} {message} (got {getattr(self, name)!r})")

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(
            layers=self.layers,
            rounds=self.rounds,
            lam=self.lam,
            eta=self.eta,
            grad_steps=self.grad_steps,
            outer_iters=self.outer_iters,
            tol=self.tol,
            bins=self.bins,
            threshold=self.threshold,
            compress=self.compress,
            raw_compose=self.raw_compose,
            gabor=GaborParams(orientations=self.orientations),
            max_candidates=self.max_candidates,
            seed=self.seed,
            jobs=self.jobs,
        )


_CONVERTERS = {
    'dataset': str,
    'data_path': str,
    'target_size': int,
    'n_per_class': int,
    'data_seed': int,
    'distractor': float,
    'layers': int,
    'rounds': parse_rounds,
    'lam': float,
    'eta': float,
    'grad_steps': int,
    'outer_iters': int,
    'tol': float,
    'bins': int,
    'threshold': float,
    'orientations': int,
    'compress': parse_bool,
    'raw_compose': parse_bool,
    'max_candidates': int,
    'seed': int,
    'jobs': int,
    'output_dir': str,
}


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse flat `key = value` lines into typed RunConfig values"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config_file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=('#', ';'))
    try:
        parser.read_string(f"[{_SECTION}]\n" + path.read_text())
    except configparser.Error as e:
        raise ConfigError(f"config_file {path} is malformed: {e}")

    values: Dict[str, Any] = {}
    for key, raw in parser.items(_SECTION):
        name = key.replace('-', '_')
        converter = _CONVERTERS.get(name)
        if converter is None:
            raise ConfigError(f"{name}: unknown setting in {path}")
        try:
            values[name] = converter(raw.strip())
        except ValueError:
            raise ConfigError(f"{name}: cannot parse '{raw}' in {path}")
    logger.debug(f"Read {len(values)} settings from {path}")
    return values


def build_run_config(overrides: Dict[str, Any], config_file: Optional[str] = None) -> RunConfig:
    """Defaults < config file < explicit overrides; seed falls back to DEEPBOOST_SEED"""
    values: Dict[str, Any] = {}
    if config_file:
        values.update(read_config_file(config_file))
    known = {f.name for f in fields(RunConfig)}
    values.update({k: v for k, v in overrides.items() if k in known and v is not None})
    values['config_file'] = config_file

    if values.get('seed') is None:
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None:
            try:
                values['seed'] = int(env_seed)
            except ValueError:
                raise ConfigError(f"seed: {SEED_ENV}='{env_seed}' is not an integer")
            logger.debug(f"Using seed {values['seed']} from {SEED_ENV}")
        else:
            values['seed'] = 0

    config = RunConfig(**values)
    config.validate()
    return config
