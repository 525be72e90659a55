"""Masked-window reconstruction through the encoder and a per-patch head."""

from __future__ import annotations

import torch

from powerpm.data.series import WindowBatch
from powerpm.hierarchy.graph import HierGraph
from powerpm.model.network import Encoder, GraphIndex, encode_batch


def reconstruct(
    batch: WindowBatch,
    graph: HierGraph | None,
    model: Encoder,
    masks,
    *,
    use_hierarchy: bool = True,
    use_exogenous: bool = True,
    graph_index: GraphIndex | None = None,
    loss_nodes: set[str] | None = None,
    stop_grad_background: bool = False,
) -> torch.Tensor:
    """Reconstruct full windows from masked inputs; returns [N, T_w].

    Masked patches enter the encoder as the mask token, causal windows use
    causal attention, each patch representation maps linearly back to patch
    values, and overlapping patch predictions are averaged per timestamp.
    """
    z = encode_batch(
        model,
        batch,
        graph,
        graph_index=graph_index,
        masks=masks,
        use_hierarchy=use_hierarchy,
        use_exogenous=use_exogenous,
        loss_nodes=loss_nodes,
        stop_grad_background=stop_grad_background,
    )
    patch_preds = model.recon_head(z)
    return model.stitch(patch_preds)
