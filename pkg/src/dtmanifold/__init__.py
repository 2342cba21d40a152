"""Import all submodules and setup logging."""

from importlib.metadata import version

from . import pp, tl, utils
from ._io import (
    config_from_dict,
    export_results,
    parse_config,
    read_grid_csv,
    serialize_config,
)

__all__ = [
    "pp",
    "tl",
    "utils",
    "config_from_dict",
    "export_results",
    "parse_config",
    "read_grid_csv",
    "serialize_config",
]

__version__ = version("dtmanifold")

# Setup loguru logging
utils.setup_logging(log_level="INFO", log_file=None)
