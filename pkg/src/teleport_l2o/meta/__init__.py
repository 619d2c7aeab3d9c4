from .checkpoint import CheckpointError, load_checkpoint, loads_checkpoint, save_checkpoint, dumps_checkpoint
from .l2o import (
    VARIANTS,
    Carry,
    ConfigError,
    L2OConfig,
    MomentumSGD,
    TrainResult,
    evaluate,
    heldout_seeds,
    init_nets,
    inner_update,
    meta_gradient,
    meta_loss,
    train,
    training_seeds,
    trajectory_meta_loss,
    unroll_window,
)
from .lstm import LstmParams, MetaState, lstm_step, softplus_inverse
