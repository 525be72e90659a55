from powerpm.model.checkpoint import (
    CheckpointBundle,
    encoder_checksum,
    load_checkpoint,
    restore_encoder,
    save_checkpoint,
)
from powerpm.model.config import SCALE_TABLE, ModelConfig, PatchConfig
from powerpm.model.network import (
    Encoder,
    GraphIndex,
    RelationalGraphLayer,
    TransformerBlock,
    build_encoder,
    encode_batch,
    masks_to_tensors,
)
from powerpm.model.patching import coverage, patch, stitch_weights

__all__ = [
    "CheckpointBundle",
    "Encoder",
    "GraphIndex",
    "ModelConfig",
    "PatchConfig",
    "RelationalGraphLayer",
    "SCALE_TABLE",
    "TransformerBlock",
    "build_encoder",
    "coverage",
    "encode_batch",
    "encoder_checksum",
    "load_checkpoint",
    "masks_to_tensors",
    "patch",
    "restore_encoder",
    "save_checkpoint",
    "stitch_weights",
]
