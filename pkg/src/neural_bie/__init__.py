"""Neural boundary-integral solvers for families of parametrized geometries."""

from .bie_engine import make_problem, mc_loss, relative_l2
from .config import RunConfig, load_config
from .operator_net import OperatorModel, build_model
from .trainer import Trainer

__all__ = [
    "OperatorModel",
    "RunConfig",
    "Trainer",
    "build_model",
    "load_config",
    "make_problem",
    "mc_loss",
    "relative_l2",
]
__version__ = "0.1.0"
