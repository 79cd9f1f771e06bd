"""Multi-agent daily-bar trading backtester with reward-labeled
trajectory export."""

__version__ = "0.1.0"

from .backtest import RunArtifacts, replay, run_backtest
from .config import BacktestConfig, FeatureFlags, load_config
from .errors import DataError, InsufficientHistoryError, ParseError, ProviderError

__all__ = [
    "BacktestConfig",
    "DataError",
    "FeatureFlags",
    "InsufficientHistoryError",
    "ParseError",
    "ProviderError",
    "RunArtifacts",
    "load_config",
    "replay",
    "run_backtest",
    "__version__",
]
