"""Versioned binary checkpoint container.

Layout: 8-byte magic, little-endian uint64 header length, a UTF-8 JSON
header (configs, exogenous-schema digest, seed, tensor index), then the
named parameter tensors as raw little-endian bytes in header order. The
round trip is bit-exact for float32 and float64 parameters.
"""

from __future__ import annotations

import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from powerpm.data.series import ExogenousSchema
from powerpm.errors import CheckpointError
from powerpm.model.config import ModelConfig, PatchConfig
from powerpm.model.network import Encoder

MAGIC = b"PPMCKPT1"
FORMAT_VERSION = 1

_DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class CheckpointBundle:
    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def seed(self) -> int:
        return int(self.header["seed"])

    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.header["model_config"])

    def patch_config(self) -> PatchConfig:
        return PatchConfig(**self.header["patch_config"])

    def exo_schema(self) -> ExogenousSchema:
        return ExogenousSchema(
            variables=tuple((n, c) for n, c in self.header["exo_variables"])
        )


def save_checkpoint(path: str | Path, model: Encoder, seed: int, extra: dict | None = None) -> None:
    if sys.byteorder != "little":  # raw bytes are declared little-endian
        raise CheckpointError("checkpoint format requires a little-endian host")
    state = model.state_dict()
    index, blobs = [], []
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        if str(arr.dtype) not in _DTYPES:
            raise CheckpointError(f"unsupported parameter dtype {arr.dtype} for {name!r}")
        blob = np.ascontiguousarray(arr).tobytes()
        index.append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "nbytes": len(blob)}
        )
        blobs.append(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.model_cfg.to_dict(),
        "patch_config": model.patch_cfg.to_dict(),
        "window_len": model.window_len,
        "exo_schema_digest": model.exo_schema.digest(),
        "exo_variables": [list(v) for v in model.exo_schema.variables],
        "relations": list(model.relations),
        "seed": int(seed),
        "extra": extra or {},
        "tensors": index,
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version")
        tensors = {}
        for entry in header["tensors"]:
            blob = fh.read(entry["nbytes"])
            if len(blob) != entry["nbytes"]:
                raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
            arr = np.frombuffer(blob, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
            tensors[entry["name"]] = arr.copy()
    return CheckpointBundle(header=header, tensors=tensors)


def restore_encoder(bundle: CheckpointBundle) -> Encoder:
    """Rebuild an encoder with the exact parameters stored in a bundle."""
    model = Encoder(
        bundle.model_config(),
        bundle.patch_config(),
        window_len=int(bundle.header["window_len"]),
        exo_schema=bundle.exo_schema(),
        relations=tuple(bundle.header["relations"]),
    )
    dtypes = {str(a.dtype) for a in bundle.tensors.values()}
    if dtypes == {"float64"}:
        model = model.double()
    state = {name: torch.from_numpy(arr.copy()) for name, arr in bundle.tensors.items()}
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
    model.load_state_dict(state)
    return model


def encoder_checksum(model: Encoder, exclude: tuple[str, ...] = ()) -> str:
    """Order-stable digest of encoder parameters (for freeze contracts).

    ``exclude`` lists name prefixes to skip, e.g. the reconstruction head
    when it doubles as the trainable task head.
    """
    import hashlib

    digest = hashlib.sha256()
    for name, tensor in model.state_dict().items():
        if any(name.startswith(prefix) for prefix in exclude):
            continue
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
