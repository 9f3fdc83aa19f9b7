"""Online, memoryless training of recurrent dynamical systems: NoBackTrack, RTRL and truncated BPTT."""

from .data import CharStream, entropy_rate_anbn, entropy_rate_anbp, gen_anbn, load_text
from .dynsys import RecurrentNetwork, ToySystem, leaky_rnn, toy_system
from .errors import CheckFailure, ConfigError, DatasetError, DivergenceError, NoBackTrackError
from .estimators import (
    ALGORITHMS,
    InverseCovariance,
    NbtState,
    TrainingSchedule,
    invariant_scalings,
    kalman_rtrl_train,
    make_trainer,
    nbt_euclid_step,
    nbt_kalman_step,
    rtrl_step,
    tbptt_train,
)
from .rankone import RankOneDecomposition, reduce, reduce_rank_k, variance_hs
from .readout import SoftmaxReadout

__version__ = "0.1.0"
