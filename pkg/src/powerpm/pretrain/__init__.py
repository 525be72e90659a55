from powerpm.pretrain.contrastive import (
    ContrastiveConfig,
    WindowPool,
    sample_contrastive_batch,
)
from powerpm.pretrain.loop import (
    PretrainConfig,
    PretrainData,
    evaluate_masked_mse,
    pretrain_loop,
    write_trace,
)
from powerpm.pretrain.losses import loss_dvcl, loss_mse, pool_windows
from powerpm.pretrain.masking import CAUSAL, RANDOM, MaskSpec, make_mask
from powerpm.pretrain.reconstruction import reconstruct

__all__ = [
    "CAUSAL",
    "ContrastiveConfig",
    "MaskSpec",
    "PretrainConfig",
    "PretrainData",
    "RANDOM",
    "WindowPool",
    "evaluate_masked_mse",
    "loss_dvcl",
    "loss_mse",
    "make_mask",
    "pool_windows",
    "pretrain_loop",
    "reconstruct",
    "sample_contrastive_batch",
    "write_trace",
]
