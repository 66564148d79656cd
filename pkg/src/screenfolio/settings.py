"""
Configuration and Settings Module

Handles loading, saving, and validating run configurations. Configurations
are JSON files; missing keys take defaults, invalid values are rejected with
a ConfigError naming the key. Relative paths resolve against the directory of
the configuration file.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Generic, List, Optional, Sequence, Type, TypeVar

from .errors import ConfigError

logger = logging.getLogger(__name__)

METHODS = ("nw", "rnw", "deep", "poet", "nls")
OBJECTIVES = ("gmv", "mv", "msr")
AGENTS = ("rules", "sentiment", "analyst", "logistic", "novymarx")
THEORY_ESTIMATORS = ("oracle",) + METHODS
SCREENINGS = ("sensible", "random")


def _is_valid_month_str(month_str: object) -> bool:
    """Validate a month string in YYYY-MM format."""
    if not isinstance(month_str, str):
        return False
    parts = month_str.split('-')
    if len(parts) != 2:
        return False
    year_str, month_str_ = parts
    if len(year_str) != 4 or len(month_str_) != 2:
        return False
    if not (year_str.isdigit() and month_str_.isdigit()):
        return False
    return 1 <= int(month_str_) <= 12


def _int(data: Dict, key: str, default: int, minimum: Optional[int] = None) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{key}' must be an integer, got {value!r}", key=key)
    if minimum is not None and value < minimum:
        raise ConfigError(f"'{key}' must be >= {minimum}, got {value}", key=key)
    return value


def _float(data: Dict, key: str, default: float, minimum: Optional[float] = None,
           strict: bool = False) -> float:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{key}' must be a number, got {value!r}", key=key)
    value = float(value)
    if value != value or value in (float("inf"), float("-inf")):
        raise ConfigError(f"'{key}' must be finite", key=key)
    if minimum is not None and (value <= minimum if strict else value < minimum):
        bound = ">" if strict else ">="
        raise ConfigError(f"'{key}' must be {bound} {minimum}, got {value}", key=key)
    return value


def _bool(data: Dict, key: str, default: bool) -> bool:
    value = data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"'{key}' must be true or false, got {value!r}", key=key)
    return value


def _choice(data: Dict, key: str, default: str, choices: Sequence[str]) -> str:
    value = data.get(key, default)
    if value not in choices:
        raise ConfigError(f"'{key}' must be one of {', '.join(choices)}; got {value!r}", key=key)
    return value


def _choices(data: Dict, key: str, default: Sequence[str], choices: Sequence[str],
             allow_empty: bool = False) -> List[str]:
    value = data.get(key, list(default))
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"'{key}' must be a list of names", key=key)
    bad = [v for v in value if v not in choices]
    if bad:
        raise ConfigError(f"'{key}' has unknown entries {bad}; expected {', '.join(choices)}", key=key)
    if not value and not allow_empty:
        raise ConfigError(f"'{key}' must not be empty", key=key)
    return list(dict.fromkeys(value))


def _month(data: Dict, key: str) -> Optional[str]:
    value = data.get(key)
    if value is None:
        return None
    if not _is_valid_month_str(value):
        raise ConfigError(f"'{key}' must be a YYYY-MM month, got {value!r}", key=key)
    return value


def _path(data: Dict, key: str, base_dir: Optional[Path], default: Optional[str] = None) -> Optional[Path]:
    value = data.get(key, default)
    if value is None:
        return None
    if not isinstance(value, str) or not value:
        raise ConfigError(f"'{key}' must be a file path", key=key)
    path = Path(value)
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    return path


def _reject_unknown(data: Dict, cls: type) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}", keys=unknown)


def _paths_to_str(data: Dict) -> Dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in data.items()}


@dataclass
class DeepFactorConfig:
    """Network and thresholding parameters of the deep-factor estimator."""
    hidden_layers: List[int] = field(default_factory=lambda: [32, 32])
    activation: str = "tanh"
    epochs: int = 500
    learning_rate: float = 1e-3
    batch_size: int = 32
    solver: str = "adam"
    threshold_c: float = 0.5
    beta: float = 2.0
    shared: bool = True
    min_observations: int = 50

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'DeepFactorConfig':
        """Create from dictionary."""
        if not isinstance(data, dict):
            raise ConfigError("'deep' must be an object")
        _reject_unknown(data, cls)
        defaults = cls()
        layers = data.get('hidden_layers', defaults.hidden_layers)
        if (not isinstance(layers, list) or not layers
                or not all(isinstance(u, int) and not isinstance(u, bool) and u > 0 for u in layers)):
            raise ConfigError("'hidden_layers' must be a non-empty list of positive integers", key='hidden_layers')
        return cls(
            hidden_layers=list(layers),
            activation=_choice(data, 'activation', defaults.activation, ("tanh", "relu", "logistic")),
            epochs=_int(data, 'epochs', defaults.epochs, minimum=1),
            learning_rate=_float(data, 'learning_rate', defaults.learning_rate, minimum=0.0, strict=True),
            batch_size=_int(data, 'batch_size', defaults.batch_size, minimum=1),
            solver=_choice(data, 'solver', defaults.solver, ("adam", "sgd")),
            threshold_c=_float(data, 'threshold_c', defaults.threshold_c, minimum=0.0),
            beta=_float(data, 'beta', defaults.beta, minimum=0.0, strict=True),
            shared=_bool(data, 'shared', defaults.shared),
            min_observations=_int(data, 'min_observations', defaults.min_observations, minimum=2),
        )


@dataclass
class BacktestConfig:
    """Rolling backtest configuration."""
    returns_path: Optional[Path] = None
    characteristics_path: Optional[Path] = None
    factors_path: Optional[Path] = None
    sentiment_path: Optional[Path] = None
    analyst_path: Optional[Path] = None
    rules_path: Optional[Path] = None
    benchmark_path: Optional[Path] = None
    output_dir: Path = Path("output")
    train_window: int = 180
    cost_bp: float = 10.0
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    objectives: List[str] = field(default_factory=lambda: list(OBJECTIVES))
    agents: List[str] = field(default_factory=lambda: ["rules", "sentiment"])
    fallback: str = "union"
    rho: float = 0.01
    out_sample_start: Optional[str] = None
    out_sample_end: Optional[str] = None
    seed: int = 0
    on_estimator_error: str = "skip"
    charge_initial_position: bool = True
    long_short: bool = False
    size_feature: str = "mve"
    sentiment_threshold: float = 0.1
    analyst_threshold: float = 0.5
    half_life_days: float = 7.0
    logistic_features: List[str] = field(default_factory=lambda: ["mve", "bm", "mom12m"])
    logistic_refit_month: int = 1
    profitability_feature: str = "gp"
    value_feature: str = "bm"
    poet_max_factors: int = 8
    diagonal_loading: bool = False
    deep: DeepFactorConfig = field(default_factory=DeepFactorConfig)

    @property
    def cost_rate(self) -> float:
        """Proportional cost per unit of turnover."""
        return self.cost_bp / 10_000.0

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        data = _paths_to_str({f.name: getattr(self, f.name) for f in fields(self) if f.name != 'deep'})
        data['deep'] = self.deep.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict, base_dir: Optional[Path] = None) -> 'BacktestConfig':
        """
        Create from dictionary.

        Args:
            data: Parsed configuration.
            base_dir: Directory relative paths resolve against.

        Raises:
            ConfigError: On unknown keys or invalid values.
        """
        if not isinstance(data, dict):
            raise ConfigError("Backtest configuration must be a JSON object")
        _reject_unknown(data, cls)
        defaults = cls()
        config = cls(
            returns_path=_path(data, 'returns_path', base_dir),
            characteristics_path=_path(data, 'characteristics_path', base_dir),
            factors_path=_path(data, 'factors_path', base_dir),
            sentiment_path=_path(data, 'sentiment_path', base_dir),
            analyst_path=_path(data, 'analyst_path', base_dir),
            rules_path=_path(data, 'rules_path', base_dir),
            benchmark_path=_path(data, 'benchmark_path', base_dir),
            output_dir=_path(data, 'output_dir', base_dir, default=str(defaults.output_dir)),
            train_window=_int(data, 'train_window', defaults.train_window, minimum=24),
            cost_bp=_float(data, 'cost_bp', defaults.cost_bp, minimum=0.0),
            methods=_choices(data, 'methods', defaults.methods, METHODS),
            objectives=_choices(data, 'objectives', defaults.objectives, OBJECTIVES),
            agents=_choices(data, 'agents', defaults.agents, AGENTS, allow_empty=True),
            fallback=_choice(data, 'fallback', defaults.fallback, ("union",) + AGENTS),
            rho=_float(data, 'rho', defaults.rho),
            out_sample_start=_month(data, 'out_sample_start'),
            out_sample_end=_month(data, 'out_sample_end'),
            seed=_int(data, 'seed', defaults.seed, minimum=0),
            on_estimator_error=_choice(data, 'on_estimator_error', defaults.on_estimator_error, ("skip", "abort")),
            charge_initial_position=_bool(data, 'charge_initial_position', defaults.charge_initial_position),
            long_short=_bool(data, 'long_short', defaults.long_short),
            size_feature=data.get('size_feature', defaults.size_feature),
            sentiment_threshold=_float(data, 'sentiment_threshold', defaults.sentiment_threshold, minimum=0.0),
            analyst_threshold=_float(data, 'analyst_threshold', defaults.analyst_threshold, minimum=0.0),
            half_life_days=_float(data, 'half_life_days', defaults.half_life_days, minimum=0.0, strict=True),
            logistic_features=data.get('logistic_features', defaults.logistic_features),
            logistic_refit_month=_int(data, 'logistic_refit_month', defaults.logistic_refit_month, minimum=1),
            profitability_feature=data.get('profitability_feature', defaults.profitability_feature),
            value_feature=data.get('value_feature', defaults.value_feature),
            poet_max_factors=_int(data, 'poet_max_factors', defaults.poet_max_factors, minimum=1),
            diagonal_loading=_bool(data, 'diagonal_loading', defaults.diagonal_loading),
            deep=DeepFactorConfig.from_dict(data.get('deep', {})),
        )
        config.validate()
        return config

    def validate(self) -> None:
        """
        Check cross-field constraints.

        Raises:
            ConfigError: If the configuration is inconsistent.
        """
        if self.train_window < 24:
            raise ConfigError(f"'train_window' must be >= 24, got {self.train_window}", key='train_window')
        if self.cost_bp < 0:
            raise ConfigError("'cost_bp' must be >= 0", key='cost_bp')
        if self.logistic_refit_month > 12:
            raise ConfigError("'logistic_refit_month' must be 1-12", key='logistic_refit_month')
        if len(self.agents) > 3:
            raise ConfigError("At most three agents can form a consensus", key='agents')
        if self.fallback != "union" and self.fallback not in self.agents:
            raise ConfigError(f"Fallback agent '{self.fallback}' is not in the ensemble", key='fallback')
        if (self.out_sample_start and self.out_sample_end
                and self.out_sample_start > self.out_sample_end):
            raise ConfigError("'out_sample_start' must not be after 'out_sample_end'", key='out_sample_start')
        for key in ('size_feature', 'profitability_feature', 'value_feature'):
            if not isinstance(getattr(self, key), str) or not getattr(self, key):
                raise ConfigError(f"'{key}' must be a feature name", key=key)
        if (not isinstance(self.logistic_features, list) or not self.logistic_features
                or not all(isinstance(f, str) for f in self.logistic_features)):
            raise ConfigError("'logistic_features' must be a non-empty list of feature names",
                              key='logistic_features')


@dataclass
class MarketConfig:
    """Factor-model market used by the theory harness."""
    factor_variances: List[float] = field(default_factory=lambda: [0.016, 0.008, 0.004])
    error_variance_low: float = 0.004
    error_variance_high: float = 0.02
    mean_low: float = 0.0
    mean_high: float = 0.02

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'MarketConfig':
        """Create from dictionary."""
        if not isinstance(data, dict):
            raise ConfigError("'market' must be an object")
        _reject_unknown(data, cls)
        defaults = cls()
        variances = data.get('factor_variances', defaults.factor_variances)
        if (not isinstance(variances, list) or not variances
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in variances)):
            raise ConfigError("'factor_variances' must be a non-empty list of positive numbers",
                              key='factor_variances')
        config = cls(
            factor_variances=[float(v) for v in variances],
            error_variance_low=_float(data, 'error_variance_low', defaults.error_variance_low,
                                      minimum=0.0, strict=True),
            error_variance_high=_float(data, 'error_variance_high', defaults.error_variance_high,
                                       minimum=0.0, strict=True),
            mean_low=_float(data, 'mean_low', defaults.mean_low),
            mean_high=_float(data, 'mean_high', defaults.mean_high),
        )
        if config.error_variance_low > config.error_variance_high or config.mean_low > config.mean_high:
            raise ConfigError("Market ranges must have low <= high")
        return config


@dataclass
class TheorySpec:
    """Monte-Carlo experiment for the screened Sharpe-ratio consistency check."""
    grid: List[int] = field(default_factory=lambda: [120, 360, 1080])
    replications: int = 50
    estimator: str = "nw"
    screening: str = "sensible"
    error_width: int = 1
    universe_multiplier: int = 3
    seed: int = 0
    max_failure_rate: float = 0.2
    workers: int = 1
    output_dir: Path = Path("theory_output")
    market: MarketConfig = field(default_factory=MarketConfig)

    @property
    def n_factors(self) -> int:
        return len(self.market.factor_variances)

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        data = _paths_to_str({f.name: getattr(self, f.name) for f in fields(self) if f.name != 'market'})
        data['market'] = self.market.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict, base_dir: Optional[Path] = None) -> 'TheorySpec':
        """Create from dictionary."""
        if not isinstance(data, dict):
            raise ConfigError("Theory spec must be a JSON object")
        _reject_unknown(data, cls)
        defaults = cls()
        grid = data.get('grid', defaults.grid)
        if (not isinstance(grid, list) or not grid
                or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 12 for n in grid)):
            raise ConfigError("'grid' must be a non-empty list of integers >= 12", key='grid')
        if grid != sorted(grid) or len(set(grid)) != len(grid):
            raise ConfigError("'grid' must be strictly ascending", key='grid')
        return cls(
            grid=list(grid),
            replications=_int(data, 'replications', defaults.replications, minimum=10),
            estimator=_choice(data, 'estimator', defaults.estimator, THEORY_ESTIMATORS),
            screening=_choice(data, 'screening', defaults.screening, SCREENINGS),
            error_width=_int(data, 'error_width', defaults.error_width, minimum=0),
            universe_multiplier=_int(data, 'universe_multiplier', defaults.universe_multiplier, minimum=2),
            seed=_int(data, 'seed', defaults.seed, minimum=0),
            max_failure_rate=_float(data, 'max_failure_rate', defaults.max_failure_rate, minimum=0.0),
            workers=_int(data, 'workers', defaults.workers, minimum=1),
            output_dir=_path(data, 'output_dir', base_dir, default=str(defaults.output_dir)),
            market=MarketConfig.from_dict(data.get('market', {})),
        )


@dataclass
class SyntheticSpec:
    """Shape and signal strength of a generated data bundle."""
    seed: int = 0
    n_assets: int = 100
    n_months: int = 240
    n_factors: int = 3
    start: str = "2005-01"
    predictive_strength: float = 0.5
    sentiment_strength: float = 0.5
    analyst_strength: float = 0.5
    articles_per_month: float = 3.0
    analyst_updates_per_month: float = 0.5
    missing_rate: float = 0.01
    output_dir: Path = Path("synthetic")

    def to_dict(self) -> Dict:
        """Convert to dictionary."""
        return _paths_to_str(asdict(self))

    @classmethod
    def from_dict(cls, data: Dict, base_dir: Optional[Path] = None) -> 'SyntheticSpec':
        """Create from dictionary."""
        if not isinstance(data, dict):
            raise ConfigError("Synthetic spec must be a JSON object")
        _reject_unknown(data, cls)
        defaults = cls()
        start = data.get('start', defaults.start)
        if not _is_valid_month_str(start):
            raise ConfigError(f"'start' must be a YYYY-MM month, got {start!r}", key='start')
        spec = cls(
            seed=_int(data, 'seed', defaults.seed, minimum=0),
            n_assets=_int(data, 'n_assets', defaults.n_assets, minimum=2),
            n_months=_int(data, 'n_months', defaults.n_months, minimum=36),
            n_factors=_int(data, 'n_factors', defaults.n_factors, minimum=1),
            start=start,
            predictive_strength=_float(data, 'predictive_strength', defaults.predictive_strength, minimum=0.0),
            sentiment_strength=_float(data, 'sentiment_strength', defaults.sentiment_strength, minimum=0.0),
            analyst_strength=_float(data, 'analyst_strength', defaults.analyst_strength, minimum=0.0),
            articles_per_month=_float(data, 'articles_per_month', defaults.articles_per_month, minimum=0.0),
            analyst_updates_per_month=_float(data, 'analyst_updates_per_month',
                                             defaults.analyst_updates_per_month, minimum=0.0),
            missing_rate=_float(data, 'missing_rate', defaults.missing_rate, minimum=0.0),
            output_dir=_path(data, 'output_dir', base_dir, default=str(defaults.output_dir)),
        )
        if spec.missing_rate >= 0.5:
            raise ConfigError("'missing_rate' must be below 0.5", key='missing_rate')
        return spec


ConfigT = TypeVar("ConfigT", BacktestConfig, TheorySpec, SyntheticSpec)


class SettingsManager(Generic[ConfigT]):
    """
    Manages configuration persistence.

    Reads a JSON configuration into its dataclass, applies command-line
    overrides and writes the effective configuration back out.
    """

    def __init__(self, settings_path: Path, kind: Type[ConfigT] = BacktestConfig):
        """
        Initialize the settings manager.

        Args:
            settings_path: Path to the JSON configuration file.
            kind: Configuration dataclass to parse into.
        """
        self._settings_path = Path(settings_path)
        self._kind = kind
        self._settings: ConfigT = kind()

    @property
    def settings(self) -> ConfigT:
        """Get the current settings."""
        return self._settings

    @property
    def settings_path(self) -> Path:
        return self._settings_path

    def load(self) -> ConfigT:
        """
        Load settings from file.

        Returns:
            Parsed and validated settings.

        Raises:
            ConfigError: If the file is missing, not JSON, or violates the schema.
        """
        if not self._settings_path.exists():
            raise ConfigError(f"Configuration file not found: {self._settings_path}",
                              path=str(self._settings_path))
        try:
            with open(self._settings_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ConfigError(f"Could not parse {self._settings_path}: {e}",
                              path=str(self._settings_path)) from e
        self._settings = self._kind.from_dict(data, base_dir=self._settings_path.parent.resolve())
        logger.debug("Loaded %s from %s", self._kind.__name__, self._settings_path)
        return self._settings

    def save(self, path: Optional[Path] = None) -> bool:
        """
        Save current settings to file.

        Returns:
            True if successful, False otherwise.
        """
        target = Path(path) if path else self._settings_path
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(self._settings.to_dict(), f, indent=2, sort_keys=True)
            return True
        except OSError as e:
            logger.error("Error saving settings to %s: %s", target, e)
            return False

    def apply_overrides(self, **kwargs: Any) -> ConfigT:
        """
        Override settings with the provided values; None values are ignored.

        Values go through the same validation as file contents.

        Raises:
            ConfigError: If a name is unknown or a value invalid.
        """
        data = self._settings.to_dict()
        for key, value in kwargs.items():
            if value is None:
                continue
            if key not in data:
                raise ConfigError(f"Unknown setting '{key}'", key=key)
            data[key] = str(value) if isinstance(value, Path) else value
        self._settings = self._kind.from_dict(data, base_dir=None)
        return self._settings
