from .config import ModelConfig, load_config, parse_config
from .constants import *
from .errors import ConfigError, EvolutionError, NumericalError
from .expression import Expression, parse_expression
from .model import EvolutionModel
from .table import ResultTable

__all__ = [
    "ModelConfig",
    "load_config",
    "parse_config",
    "ConfigError",
    "EvolutionError",
    "NumericalError",
    "Expression",
    "parse_expression",
    "EvolutionModel",
    "ResultTable",
    "TOOL_NAME",
    "TOOL_VERSION",
    "THREADS_ENV_VAR",
    "EXIT_OK",
    "EXIT_CONFIG_ERROR",
    "EXIT_NUMERICAL_ERROR",
    "PERIODIC",
    "PADDED",
]
