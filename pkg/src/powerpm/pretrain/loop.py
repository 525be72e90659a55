"""The self-supervised training loop: masked reconstruction + contrastive.

Per micro-step the total loss is l_mse + weight * l_dvcl; gradients are
accumulated over a fixed number of micro-steps per optimizer update, and a
reduce-on-plateau scheduler adjusts the learning rate from the running loss.
All randomness flows from one numpy generator seeded by the config.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from powerpm.data.series import ExogenousSchema, Window, WindowBatch, windows_to_batch
from powerpm.errors import BatchError, NumericError
from powerpm.hierarchy.graph import HierGraph
from powerpm.model.network import Encoder, GraphIndex
from powerpm.pretrain.contrastive import ContrastiveConfig, WindowPool, sample_contrastive_batch
from powerpm.pretrain.losses import loss_dvcl, loss_mse, pool_windows
from powerpm.pretrain.masking import make_mask
from powerpm.pretrain.reconstruction import reconstruct

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 200
    accumulation: int = 4
    contrastive_weight: float = 1.0
    learning_rate: float = 1e-3
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    plateau_every: int = 10
    mask_ratio: float = 0.4
    seed: int = 0
    groups_per_batch: int = 2
    contrastive_groups: int = 2
    random_mask_only: bool = False
    stop_grad_background: bool = False
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.accumulation < 1:
            raise ValueError("accumulation must be >= 1")
        if self.contrastive_weight < 0:
            raise ValueError("contrastive_weight must be >= 0")
        if not 0 < self.mask_ratio < 1:
            raise ValueError("mask_ratio must be in (0, 1)")


@dataclass
class PretrainData:
    """Normalized windows forming complete per-start snapshots, plus the graph."""

    windows: list[Window]
    schema: ExogenousSchema
    graph: HierGraph | None = None
    pool: WindowPool = field(init=False)
    starts: list[int] = field(init=False)

    def __post_init__(self):
        self.pool = WindowPool(self.windows)
        self.starts = sorted({w.t_start for w in self.windows})

    def windows_at(self, starts: set[int]) -> list[Window]:
        picked = [w for w in self.windows if w.t_start in starts]
        return sorted(picked, key=lambda w: (w.t_start, w.instance_id))


def _masked_step(
    model: Encoder,
    data: PretrainData,
    config: PretrainConfig,
    rng: np.random.Generator,
    graph_index: GraphIndex | None,
    use_hierarchy: bool,
    use_exogenous: bool,
) -> tuple[torch.Tensor, WindowBatch]:
    n_groups = min(config.groups_per_batch, len(data.starts))
    picked = rng.choice(len(data.starts), size=n_groups, replace=False)
    starts = {data.starts[i] for i in picked.tolist()}
    batch = windows_to_batch(data.windows_at(starts), data.schema)

    masks = []
    for _ in range(batch.num_windows):
        alpha = 0.0 if config.random_mask_only else float(rng.uniform())
        masks.append(
            make_mask(model.num_patches, config.mask_ratio, alpha, int(rng.integers(2**63 - 1)))
        )
    x_hat = reconstruct(
        batch,
        data.graph,
        model,
        masks,
        use_hierarchy=use_hierarchy,
        use_exogenous=use_exogenous,
        graph_index=graph_index,
        loss_nodes=set(batch.node_ids) if config.stop_grad_background else None,
        stop_grad_background=config.stop_grad_background,
    )
    x = torch.as_tensor(batch.x, dtype=x_hat.dtype)
    return loss_mse(x, x_hat), batch


def _contrastive_step(
    model: Encoder,
    data: PretrainData,
    config: PretrainConfig,
    contrastive: ContrastiveConfig,
    rng: np.random.Generator,
    graph_index: GraphIndex | None,
    use_hierarchy: bool,
    use_exogenous: bool,
) -> torch.Tensor:
    frequency = data.windows[0].frequency_seconds
    shift_seconds = contrastive.shift_points * frequency
    start_set = set(data.starts)
    anchor_starts = [t for t in data.starts if t + shift_seconds in start_set]
    if not anchor_starts:
        raise BatchError(
            f"no window start has a +{contrastive.shift_points}-point counterpart"
        )
    n_groups = min(config.contrastive_groups, len(anchor_starts))
    picked = rng.choice(len(anchor_starts), size=n_groups, replace=False)
    chosen_starts = {anchor_starts[i] for i in picked.tolist()}
    needed = chosen_starts | {t + shift_seconds for t in chosen_starts}
    restricted = WindowPool(data.windows_at(needed))

    anchors, positives = sample_contrastive_batch(
        restricted, contrastive.batch_size, contrastive.shift_points, rng
    )
    if use_hierarchy and data.graph is not None:
        encode_windows = data.windows_at(needed)
    else:
        seen, encode_windows = set(), []
        for w in anchors + positives:
            key = (w.instance_id, w.t_start)
            if key not in seen:
                seen.add(key)
                encode_windows.append(w)
    batch = windows_to_batch(encode_windows, data.schema)
    from powerpm.model.network import encode_batch  # local import to avoid cycles

    z = encode_batch(
        model,
        batch,
        data.graph if use_hierarchy else None,
        graph_index=graph_index if use_hierarchy else None,
        use_hierarchy=use_hierarchy,
        use_exogenous=use_exogenous,
    )
    pooled = pool_windows(z)
    row_of = {(n, int(t)): i for i, (n, t) in enumerate(zip(batch.node_ids, batch.t_start))}
    a_rows = torch.tensor([row_of[(w.instance_id, w.t_start)] for w in anchors])
    p_rows = torch.tensor([row_of[(w.instance_id, w.t_start)] for w in positives])
    return loss_dvcl(pooled[a_rows], pooled[p_rows], contrastive.temperature)


def pretrain_loop(
    config: PretrainConfig,
    data: PretrainData,
    model: Encoder,
    contrastive: ContrastiveConfig | None = None,
    *,
    use_hierarchy: bool = True,
    use_exogenous: bool = True,
    checkpoint_dir: str | Path | None = None,
    checkpoint_fn=None,
) -> tuple[Encoder, list[dict]]:
    """Run the pre-training schedule; returns the model and its loss trace."""
    if contrastive is None:
        contrastive = ContrastiveConfig()
    rng = np.random.default_rng(config.seed)
    graph_index = None
    if use_hierarchy and data.graph is not None:
        graph_index = GraphIndex(data.graph)

    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, factor=config.plateau_factor, patience=config.plateau_patience
    )

    trace: list[dict] = []
    updates = 0
    recent_losses: list[float] = []
    optimizer.zero_grad()
    model.train()
    for step in range(config.steps):
        l_mse, _ = _masked_step(
            model, data, config, rng, graph_index, use_hierarchy, use_exogenous
        )
        if config.contrastive_weight > 0:
            l_dvcl = _contrastive_step(
                model, data, config, contrastive, rng, graph_index,
                use_hierarchy, use_exogenous,
            )
        else:
            l_dvcl = torch.zeros((), dtype=l_mse.dtype)
        total = l_mse + config.contrastive_weight * l_dvcl
        if not torch.isfinite(total):
            raise NumericError(
                f"non-finite loss at step {step}: "
                f"l_mse={l_mse.item()}, l_dvcl={l_dvcl.item()}"
            )
        (total / config.accumulation).backward()
        trace.append(
            {
                "step": step,
                "l_mse": l_mse.item(),
                "l_dvcl": l_dvcl.item(),
                "total": total.item(),
                "lr": optimizer.param_groups[0]["lr"],
            }
        )
        recent_losses.append(total.item())
        if (step + 1) % config.accumulation == 0:
            optimizer.step()
            optimizer.zero_grad()
            updates += 1
            # One scheduler evaluation per plateau_every updates, on the
            # mean loss since the previous evaluation (per-step losses are
            # far too noisy to detect a plateau).
            if updates % config.plateau_every == 0:
                scheduler.step(sum(recent_losses) / len(recent_losses))
                recent_losses.clear()
            if (
                config.checkpoint_every
                and checkpoint_dir is not None
                and updates % config.checkpoint_every == 0
                and checkpoint_fn is not None
            ):
                checkpoint_fn(model, Path(checkpoint_dir) / f"update_{updates:06d}.ckpt")
    model.eval()
    return model, trace


def evaluate_masked_mse(
    model: Encoder,
    data: PretrainData,
    mask_ratio: float,
    seed: int,
    *,
    use_hierarchy: bool = True,
    use_exogenous: bool = True,
    random_mask_only: bool = False,
) -> float:
    """Deterministic reconstruction MSE over every snapshot in the data."""
    rng = np.random.default_rng(seed)
    batch = windows_to_batch(
        sorted(data.windows, key=lambda w: (w.t_start, w.instance_id)), data.schema
    )
    masks = []
    for _ in range(batch.num_windows):
        alpha = 0.0 if random_mask_only else float(rng.uniform())
        masks.append(make_mask(model.num_patches, mask_ratio, alpha, int(rng.integers(2**63 - 1))))
    model.eval()
    with torch.no_grad():
        x_hat = reconstruct(
            batch, data.graph, model, masks,
            use_hierarchy=use_hierarchy, use_exogenous=use_exogenous,
        )
        x = torch.as_tensor(batch.x, dtype=x_hat.dtype)
        return float(loss_mse(x, x_hat))


def write_trace(trace: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "l_mse", "l_dvcl", "total", "lr"])
        writer.writeheader()
        writer.writerows(trace)
