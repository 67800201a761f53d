"""Local Implicit Transformer and its cascaded variant for arbitrary-scale super-resolution."""

from .cascade import CLIT, combine, multiscale_features
from .config import ModelConfig, RunConfig, TrainConfig, load_config, preset
from .coords import QueryBatch, hr_lattice, local_grid
from .encoder import Encoder
from .lit import LIT, cslab_attend, freq_encode, positional_bias

__version__ = "0.1.0"

__all__ = [
    "CLIT",
    "Encoder",
    "LIT",
    "ModelConfig",
    "QueryBatch",
    "RunConfig",
    "TrainConfig",
    "combine",
    "cslab_attend",
    "freq_encode",
    "hr_lattice",
    "load_config",
    "local_grid",
    "multiscale_features",
    "positional_bias",
    "preset",
]
