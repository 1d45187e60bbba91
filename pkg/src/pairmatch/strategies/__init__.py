"""Sequential pair-matching strategies."""

from .base import GC_DECAY_CONSTANT, AlgoConstants, ConstantsMode, StrategyOutcome
from .constrained import ScreeningState, constrained_schedule, run_constrained, screening
from .doubling import PathwiseCap, epochs, run_doubling
from .estimate import SEstimate, estimate_s
from .unconstrained import run_unconstrained, unconstrained_sizes
from .uniform import run_random

__all__ = [
    "GC_DECAY_CONSTANT",
    "AlgoConstants",
    "ConstantsMode",
    "PathwiseCap",
    "SEstimate",
    "ScreeningState",
    "StrategyOutcome",
    "constrained_schedule",
    "epochs",
    "estimate_s",
    "run_constrained",
    "run_doubling",
    "run_random",
    "run_unconstrained",
    "screening",
    "unconstrained_sizes",
]
