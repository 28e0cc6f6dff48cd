"""Factorized transducer toolkit with explicit internal-LM fusion and MWER training."""

from .errors import (
    DegenerateInputError,
    InvalidInputError,
    InvalidMaskError,
    PathCountError,
    TrainingDivergedError,
    UnsupportedOperationError,
)
from .factorization import (
    DEFAULT_DECODE_WEIGHTS,
    TRAINING_WEIGHTS,
    FTScores,
    FusionWeights,
    blank_logprob,
    build_lattice,
    build_training_lattice,
    nonblank_decode_score,
    nonblank_train_logprobs,
)
from .lattice import (
    BandMask,
    LogProbLattice,
    brute_force_loss,
    full_sum_loss,
    loss_gradients,
    restricted_full_sum_loss,
    restricted_loss_gradients,
)

__version__ = "0.1.0"
