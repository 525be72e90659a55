"""Fine-tuning regimes and test-set evaluation for downstream tasks.

``full_ft`` trains the task head and the encoder; ``frozen`` trains only the
head and the encoder parameters are verified bit-identical afterwards. For
imputation the task head is the encoder's own reconstruction head, so the
freeze contract covers every other encoder parameter.

Few-shot runs take the chronologically earliest fraction of the train
windows, so the 10% subset is nested in the 30% subset and so on. When the
hierarchy is active, the selection is rounded down to whole aligned
snapshots so every batch still covers the graph.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from powerpm.data.series import ExogenousSchema, Window, windows_to_batch
from powerpm.errors import TaskError
from powerpm.hierarchy.graph import HierGraph
from powerpm.model.checkpoint import encoder_checksum
from powerpm.model.network import Encoder, GraphIndex, encode_batch
from powerpm.model.patching import coverage
from powerpm.downstream.heads import (
    ClassifyHead,
    ForecastHead,
    ImputeMask,
    impute_eval_positions,
    patches_touching,
)
from powerpm.downstream.metrics import metric_suite
from powerpm.downstream.tasks import (
    ANOMALY,
    CLASSIFY,
    FORECAST,
    FROZEN,
    IMPUTE,
    AblationFlags,
    TaskSpec,
)
from powerpm.pretrain.reconstruction import reconstruct


@dataclass
class TaskData:
    """Windows grouped into aligned snapshots plus per-window targets.

    ``targets`` maps (instance_id, window start) to a forecast target vector
    or an integer class label; only ``target_nodes`` windows are scored.
    """

    schema: ExogenousSchema
    graph: HierGraph | None
    train: list[Window]
    val: list[Window]
    test: list[Window]
    targets: dict[tuple[str, int], object]
    target_nodes: frozenset
    frequency_seconds: int


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 5
    learning_rate: float = 1e-3
    batch_groups: int = 4
    anomaly_threshold: float = 0.5
    anomaly_aggregate: str = "instance"


@dataclass
class FinetuneResult:
    task: TaskSpec
    flags: AblationFlags
    seed: int
    metrics: dict[str, float]
    n_train_windows: int
    encoder_unchanged: bool
    head: nn.Module | None = field(default=None, repr=False)


def select_fraction(
    train: list[Window], fraction: float, whole_snapshots: bool
) -> list[Window]:
    """Chronologically earliest fraction of the train windows."""
    ordered = sorted(train, key=lambda w: (w.t_start, w.instance_id))
    if fraction >= 1.0:
        return ordered
    target = math.floor(fraction * len(ordered))
    if target < 1:
        raise TaskError(f"fraction {fraction} of {len(ordered)} windows is empty")
    if not whole_snapshots:
        return ordered[:target]
    out: list[Window] = []
    i = 0
    while i < len(ordered):
        j = i
        while j < len(ordered) and ordered[j].t_start == ordered[i].t_start:
            j += 1
        if len(out) + (j - i) > target:
            break
        out.extend(ordered[i:j])
        i = j
    if not out:
        raise TaskError(
            f"fraction {fraction} is smaller than one aligned snapshot "
            f"({len(ordered)} windows)"
        )
    return out


def _start_chunks(windows: list[Window], groups: int, rng: np.random.Generator | None):
    starts = sorted({w.t_start for w in windows})
    order = list(range(len(starts)))
    if rng is not None:
        rng.shuffle(order)
    for i in range(0, len(order), groups):
        chunk = {starts[k] for k in order[i:i + groups]}
        yield [w for w in windows if w.t_start in chunk]


def _window_rng(seed: int, instance_id: str, t_start: int) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{instance_id}:{t_start}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _target_rows(batch, targets) -> list[int]:
    return [
        i
        for i, (node, t) in enumerate(zip(batch.node_ids, batch.t_start.tolist()))
        if (node, t) in targets
    ]


class _TaskRunner:
    def __init__(
        self,
        task: TaskSpec,
        model: Encoder,
        data: TaskData,
        flags: AblationFlags,
        seed: int,
        cfg: FinetuneConfig,
    ):
        self.task = task
        self.model = model
        self.data = data
        self.flags = flags
        self.seed = seed
        self.cfg = cfg
        self.use_hierarchy = not flags.no_hierarchy and data.graph is not None
        self.use_exogenous = not flags.no_exogenous
        self.graph_index = (
            GraphIndex(data.graph) if self.use_hierarchy else None
        )
        self.time_idx, self.valid = coverage(model.window_len, model.patch_cfg)
        torch.manual_seed(seed)
        self.head = self._build_head()

    def _build_head(self) -> nn.Module | None:
        if self.task.family == FORECAST:
            head = ForecastHead(self.model.num_patches, self.model.model_cfg.model_dim, self.task.horizon)
        elif self.task.family in (CLASSIFY, ANOMALY):
            head = ClassifyHead(self.model.model_cfg.model_dim, self.task.n_classes)
        else:
            return None  # imputation reuses the encoder's reconstruction head
        return head.to(self.model.param_dtype)

    def head_parameters(self):
        if self.task.family == IMPUTE:
            return list(self.model.recon_head.parameters())
        return list(self.head.parameters())

    def encoder_exclude(self) -> tuple[str, ...]:
        return ("recon_head.",) if self.task.family == IMPUTE else ()

    def _encode(self, windows: list[Window], masks=None) -> tuple:
        batch = windows_to_batch(windows, self.data.schema)
        z = encode_batch(
            self.model,
            batch,
            self.data.graph if self.use_hierarchy else None,
            graph_index=self.graph_index,
            masks=masks,
            use_hierarchy=self.use_hierarchy,
            use_exogenous=self.use_exogenous,
        )
        return batch, z

    def _impute_masks(self, batch, rng_or_seed) -> tuple[list, np.ndarray]:
        """Per-window block masks; non-target windows stay unmasked."""
        masks, positions = [], np.zeros((batch.num_windows, batch.window_len), dtype=bool)
        for i, (node, t) in enumerate(zip(batch.node_ids, batch.t_start.tolist())):
            if node not in self.data.target_nodes:
                masks.append(ImputeMask(masked_indices=()))
                continue
            rng = (
                _window_rng(rng_or_seed, node, t)
                if isinstance(rng_or_seed, int)
                else rng_or_seed
            )
            pos = impute_eval_positions(batch.window_len, self.task.mask_ratio, rng)
            positions[i] = pos
            masks.append(patches_touching(pos, self.time_idx, self.valid))
        return masks, positions

    def _step_loss(self, windows: list[Window], rng: np.random.Generator) -> torch.Tensor:
        if self.task.family == IMPUTE:
            batch = windows_to_batch(windows, self.data.schema)
            masks, positions = self._impute_masks(batch, rng)
            x_hat = reconstruct(
                batch,
                self.data.graph if self.use_hierarchy else None,
                self.model,
                masks,
                use_hierarchy=self.use_hierarchy,
                use_exogenous=self.use_exogenous,
                graph_index=self.graph_index,
            )
            scored = torch.as_tensor(positions)
            if not bool(scored.any()):
                raise TaskError("no masked positions to train on")
            x = torch.as_tensor(batch.x, dtype=x_hat.dtype)
            return ((x_hat - x)[scored] ** 2).mean()

        batch, z = self._encode(windows)
        rows = _target_rows(batch, self.data.targets)
        if not rows:
            raise TaskError("batch contains no target windows")
        keys = [(batch.node_ids[i], int(batch.t_start[i])) for i in rows]
        z_rows = z[torch.tensor(rows, dtype=torch.long)]
        if self.task.family == FORECAST:
            y = torch.as_tensor(
                np.stack([self.data.targets[k] for k in keys]), dtype=z.dtype
            )
            preds = self.head(z_rows)
            return ((preds - y) ** 2).mean()
        labels = torch.tensor([int(self.data.targets[k]) for k in keys], dtype=torch.long)
        logits = self.head(z_rows)
        return nn.functional.cross_entropy(logits, labels)

    def train(self, train_windows: list[Window], val_windows: list[Window]):
        params = self.head_parameters()
        if self.task.regime != FROZEN:
            if self.task.family == IMPUTE:
                params = list(self.model.parameters())
            else:
                params = params + list(self.model.parameters())
        frozen = []
        if self.task.regime == FROZEN:
            exclude = self.encoder_exclude()
            for name, p in self.model.named_parameters():
                if not any(name.startswith(e) for e in exclude):
                    if p.requires_grad:
                        frozen.append(p)
                        p.requires_grad_(False)
        optimizer = torch.optim.Adam(params, lr=self.cfg.learning_rate)
        rng = np.random.default_rng(self.seed)
        best_val, best_state = float("inf"), None
        for _ in range(self.cfg.epochs):
            self.model.train()
            for windows in _start_chunks(train_windows, self.cfg.batch_groups, rng):
                optimizer.zero_grad()
                loss = self._step_loss(windows, rng)
                loss.backward()
                optimizer.step()
            self.model.eval()
            val_loss = self._val_loss(val_windows)
            if val_loss is not None and val_loss < best_val:
                best_val = val_loss
                best_state = (
                    {k: v.detach().clone() for k, v in self.model.state_dict().items()},
                    None if self.head is None
                    else {k: v.detach().clone() for k, v in self.head.state_dict().items()},
                )
        if best_state is not None:
            self.model.load_state_dict(best_state[0])
            if self.head is not None:
                self.head.load_state_dict(best_state[1])
        self.model.eval()
        for p in frozen:
            p.requires_grad_(True)

    @torch.no_grad()
    def _val_loss(self, val_windows: list[Window]) -> float | None:
        """Task loss on the validation split (epoch selection)."""
        if not val_windows:
            return None
        total, count = 0.0, 0
        rng = np.random.default_rng(self.seed + 1)
        for chunk in _start_chunks(val_windows, self.cfg.batch_groups, None):
            try:
                loss = self._step_loss(chunk, rng)
            except TaskError:
                continue
            total += float(loss) * len(chunk)
            count += len(chunk)
        return total / count if count else None

    @torch.no_grad()
    def evaluate(self, windows: list[Window]) -> dict[str, float]:
        if self.task.family == IMPUTE:
            return self._evaluate_impute(windows)
        preds_all, y_all, prob_by_node = [], [], {}
        for chunk in _start_chunks(windows, self.cfg.batch_groups, None):
            batch, z = self._encode(chunk)
            rows = _target_rows(batch, self.data.targets)
            if not rows:
                continue
            keys = [(batch.node_ids[i], int(batch.t_start[i])) for i in rows]
            z_rows = z[torch.tensor(rows, dtype=torch.long)]
            if self.task.family == FORECAST:
                preds_all.append(self.head(z_rows).numpy())
                y_all.append(np.stack([self.data.targets[k] for k in keys]))
            else:
                probs = self.head.probabilities(z_rows).numpy()
                for (node, _), p in zip(keys, probs):
                    prob_by_node.setdefault(node, []).append(p)
                preds_all.append(probs.argmax(axis=1))
                y_all.append(np.array([int(self.data.targets[k]) for k in keys]))
        if self.task.family == FORECAST:
            if not y_all:
                raise TaskError("no scored test windows")
            return metric_suite(np.concatenate(y_all), np.concatenate(preds_all), self.task.metrics)
        if self.task.family == CLASSIFY:
            return metric_suite(np.concatenate(y_all), np.concatenate(preds_all), self.task.metrics)
        return self._evaluate_anomaly(prob_by_node)

    def _evaluate_anomaly(self, prob_by_node: dict) -> dict[str, float]:
        if not prob_by_node:
            raise TaskError("no scored test windows")
        if self.cfg.anomaly_aggregate == "instance":
            nodes = sorted(prob_by_node)
            probs = np.array([np.mean([p[1] for p in prob_by_node[n]]) for n in nodes])
            labels = np.array([self._node_label(n) for n in nodes])
        else:
            probs, labels = [], []
            for n in sorted(prob_by_node):
                probs.extend(p[1] for p in prob_by_node[n])
                labels.extend([self._node_label(n)] * len(prob_by_node[n]))
            probs, labels = np.array(probs), np.array(labels)
        preds = (probs > self.cfg.anomaly_threshold).astype(np.int64)
        return metric_suite(labels, preds, self.task.metrics)

    def _node_label(self, node: str) -> int:
        for (n, _), label in self.data.targets.items():
            if n == node:
                return int(label)
        raise TaskError(f"no label for node {node!r}")

    def _evaluate_impute(self, windows: list[Window]) -> dict[str, float]:
        truths, preds = [], []
        for chunk in _start_chunks(windows, self.cfg.batch_groups, None):
            batch = windows_to_batch(chunk, self.data.schema)
            masks, positions = self._impute_masks(batch, self.seed)
            if not positions.any():
                continue
            x_hat = reconstruct(
                batch,
                self.data.graph if self.use_hierarchy else None,
                self.model,
                masks,
                use_hierarchy=self.use_hierarchy,
                use_exogenous=self.use_exogenous,
                graph_index=self.graph_index,
            ).numpy()
            truths.append(batch.x[positions])
            preds.append(x_hat[positions])
        if not truths:
            raise TaskError("imputation scored zero masked points")
        return metric_suite(np.concatenate(truths), np.concatenate(preds), self.task.metrics)


def finetune(
    task: TaskSpec,
    model: Encoder,
    data: TaskData,
    flags: AblationFlags = AblationFlags(),
    seed: int = 0,
    cfg: FinetuneConfig = FinetuneConfig(),
) -> FinetuneResult:
    """Fit the task head (and optionally the encoder) and score the test set."""
    runner = _TaskRunner(task, model, data, flags, seed, cfg)
    train_windows = select_fraction(
        data.train, task.data_fraction, whole_snapshots=runner.use_hierarchy
    )
    if not train_windows:
        raise TaskError("no training windows after fraction selection")
    checksum_before = encoder_checksum(model, exclude=runner.encoder_exclude())
    runner.train(train_windows, data.val)
    checksum_after = encoder_checksum(model, exclude=runner.encoder_exclude())
    metrics = runner.evaluate(data.test)
    return FinetuneResult(
        task=task,
        flags=flags,
        seed=seed,
        metrics=metrics,
        n_train_windows=len(train_windows),
        encoder_unchanged=checksum_before == checksum_after,
        head=runner.head,
    )


def persistence_metrics(task: TaskSpec, data: TaskData) -> dict[str, float]:
    """Repeat-last-value forecast baseline over the same scored test rows."""
    if task.family != FORECAST:
        raise TaskError("persistence baseline applies to forecasting only")
    y_all, preds_all = [], []
    for w in data.test:
        key = (w.instance_id, w.t_start)
        if key not in data.targets:
            continue
        y_all.append(np.asarray(data.targets[key]))
        preds_all.append(np.full(task.horizon, w.values[-1]))
    if not y_all:
        raise TaskError("no scored test windows")
    return metric_suite(np.stack(y_all), np.stack(preds_all), task.metrics)
