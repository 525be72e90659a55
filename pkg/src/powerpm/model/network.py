"""The encoder network: patch embedding with exogenous variables, a pre-norm
transformer over patches, and relational message passing over the hierarchy.

A window batch flows as

    values -> patches -> patch embedding (+ positional row, + exogenous
    embedding mean per patch) -> transformer -> per-node relational layers

Masked patches are replaced by a learnable token (plus the positional row)
before the transformer, and causally-masked windows get a lower-triangular
attention mask so later patches cannot leak into earlier positions.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from powerpm.data.series import EMPTY_SCHEMA, ExogenousSchema, Level, WindowBatch
from powerpm.errors import GraphError, NumericError
from powerpm.hierarchy.graph import RELATIONS, USER_TO_CLUSTER, HierGraph
from powerpm.model.config import ModelConfig, PatchConfig
from powerpm.model.patching import coverage


class TransformerBlock(nn.Module):
    """Pre-norm multi-head self-attention + feed-forward residual block."""

    def __init__(self, dim: int, num_heads: int, ffn_dim: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.norm_attn = nn.LayerNorm(dim)
        self.norm_ffn = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim)
        )

    def forward(self, x: torch.Tensor, causal_rows: torch.Tensor | None = None) -> torch.Tensor:
        b, length, dim = x.shape
        a = self.norm_attn(x)
        qkv = self.qkv(a).view(b, length, 3, self.num_heads, self.head_dim)
        q, k, v = (t.transpose(1, 2) for t in qkv.unbind(dim=2))  # [b, H, L, dh]
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if causal_rows is not None and bool(causal_rows.any()):
            future = torch.triu(
                torch.ones(length, length, dtype=torch.bool, device=x.device), diagonal=1
            )
            scores = scores.masked_fill(causal_rows.view(b, 1, 1, 1) & future, float("-inf"))
        ctx = (torch.softmax(scores, dim=-1) @ v).transpose(1, 2).reshape(b, length, dim)
        x = x + self.proj(ctx)
        return x + self.ffn(self.norm_ffn(x))


class RelationalGraphLayer(nn.Module):
    """One round of typed message passing with mean-normalized aggregation.

    out_v = W_self z_v + sum_r sum_{u in N_r(v)} W_r z_u / |N_r(v)|
    """

    def __init__(self, dim: int, relations: tuple[str, ...]):
        super().__init__()
        self.self_loop = nn.Linear(dim, dim, bias=False)
        self.relation_weights = nn.ModuleDict(
            {rel: nn.Linear(dim, dim, bias=False) for rel in relations}
        )

    def forward(self, z: torch.Tensor, index: "GraphIndex") -> torch.Tensor:
        out = self.self_loop(z)
        for rel, linear in self.relation_weights.items():
            src, dst, inv_deg = index.per_relation[rel]
            if src.numel() == 0:
                continue
            msg = linear(z.index_select(-3, src))
            shape = [1] * (z.dim() - 3) + [len(src), 1, 1]
            msg = msg * inv_deg.to(z.dtype).view(shape)
            # Accumulate each relation separately so the normalized sum per
            # destination is independent of how it splits across edges.
            out = out + torch.zeros_like(out).index_add(-3, dst, msg)
        return out


class GraphIndex:
    """Tensorized adjacency over a fixed node-slot ordering."""

    def __init__(self, graph: HierGraph):
        self.graph = graph
        self.node_order = graph.node_ids
        self.slots = {node: i for i, node in enumerate(self.node_order)}
        self.real_nodes = [n for n, lv in graph.nodes if lv != Level.CLUSTER]

        degree: dict[tuple[str, str], int] = {}
        for src, dst, rel in graph.edges:
            degree[(rel, dst)] = degree.get((rel, dst), 0) + 1
        self.per_relation: dict[str, tuple[torch.Tensor, torch.Tensor, torch.Tensor]] = {}
        for rel in RELATIONS:
            srcs, dsts, invs = [], [], []
            for src, dst, erel in graph.edges:
                if erel != rel:
                    continue
                srcs.append(self.slots[src])
                dsts.append(self.slots[dst])
                invs.append(1.0 / degree[(rel, dst)])
            self.per_relation[rel] = (
                torch.tensor(srcs, dtype=torch.long),
                torch.tensor(dsts, dtype=torch.long),
                torch.tensor(invs, dtype=torch.float64),
            )

        # Cluster slot -> member user slots (sources of user->cluster edges).
        members: dict[str, list[str]] = {}
        for src, dst, rel in graph.edges:
            if rel == USER_TO_CLUSTER:
                members.setdefault(dst, []).append(src)
        self.cluster_members = {
            self.slots[c]: torch.tensor(sorted(self.slots[m] for m in ms), dtype=torch.long)
            for c, ms in members.items()
        }
        for node, level in graph.nodes:
            if level == Level.CLUSTER and self.slots[node] not in self.cluster_members:
                raise GraphError(f"cluster node {node!r} has no member users")


class Encoder(nn.Module):
    """Patch/exogenous embedding, temporal transformer, and relational stack."""

    def __init__(
        self,
        model_cfg: ModelConfig,
        patch_cfg: PatchConfig,
        window_len: int,
        exo_schema: ExogenousSchema = EMPTY_SCHEMA,
        relations: tuple[str, ...] = RELATIONS,
    ):
        super().__init__()
        self.model_cfg = model_cfg
        self.patch_cfg = patch_cfg
        self.window_len = window_len
        self.exo_schema = exo_schema
        self.relations = tuple(relations)
        self.num_patches = patch_cfg.num_patches(window_len)

        dim = model_cfg.model_dim
        time_idx, valid = coverage(window_len, patch_cfg)
        counts = np.zeros(window_len, dtype=np.float64)
        np.add.at(counts, time_idx[valid], 1.0)
        self.register_buffer("patch_time_idx", torch.from_numpy(time_idx), persistent=False)
        self.register_buffer("patch_valid", torch.from_numpy(valid), persistent=False)
        self.register_buffer(
            "patch_counts",
            torch.from_numpy(valid.sum(axis=1).astype(np.float64)),
            persistent=False,
        )
        self.register_buffer("time_coverage", torch.from_numpy(counts), persistent=False)
        self.register_buffer(
            "exo_offsets", torch.tensor(exo_schema.offsets, dtype=torch.long), persistent=False
        )

        self.patch_proj = nn.Linear(patch_cfg.patch_len, dim)
        self.positional = nn.Parameter(torch.empty(self.num_patches, dim))
        self.mask_token = nn.Parameter(torch.empty(dim))
        if exo_schema.total_rows > 0:
            self.exo_table = nn.Parameter(torch.empty(exo_schema.total_rows, dim))
        else:
            self.exo_table = None
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, model_cfg.num_heads, model_cfg.ffn_dim)
            for _ in range(model_cfg.num_layers)
        )
        self.final_norm = nn.LayerNorm(dim)
        self.rgcn = nn.ModuleList(
            RelationalGraphLayer(dim, self.relations) for _ in range(model_cfg.rgcn_layers)
        )
        self.recon_head = nn.Linear(dim, patch_cfg.patch_len)
        self.reset_embeddings()

    def reset_embeddings(self):
        nn.init.normal_(self.positional, std=0.02)
        nn.init.normal_(self.mask_token, std=0.02)
        if self.exo_table is not None:
            nn.init.normal_(self.exo_table, std=0.02)

    @property
    def param_dtype(self) -> torch.dtype:
        return self.patch_proj.weight.dtype

    def embed(
        self,
        x: torch.Tensor,
        codes: torch.Tensor | None = None,
        masked: torch.Tensor | None = None,
        use_exogenous: bool = True,
    ) -> torch.Tensor:
        """x: [B, T_w] values, codes: [B, T_w, K] ints, masked: [B, N_p] bools."""
        patches = x[:, self.patch_time_idx]
        h = self.patch_proj(patches) + self.positional
        if (
            use_exogenous
            and self.exo_table is not None
            and codes is not None
            and codes.shape[-1] > 0
        ):
            rows = self.exo_table[codes + self.exo_offsets]       # [B, T_w, K, d]
            per_step = rows.sum(dim=2)                            # [B, T_w, d]
            gathered = per_step[:, self.patch_time_idx]           # [B, N_p, P, d]
            weights = self.patch_valid.to(x.dtype)[..., None]
            pooled = (gathered * weights).sum(dim=2) / self.patch_counts.to(x.dtype)[:, None]
            h = h + pooled
        if masked is not None and bool(masked.any()):
            replacement = self.mask_token + self.positional        # [N_p, d]
            h = torch.where(masked[..., None], replacement, h)
        return h

    def temporal(self, u: torch.Tensor, causal_rows: torch.Tensor | None = None) -> torch.Tensor:
        x = u
        for i, block in enumerate(self.blocks):
            x = block(x, causal_rows)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations after transformer layer {i}")
        return self.final_norm(x)

    def hierarchical(self, z: torch.Tensor, index: GraphIndex) -> torch.Tensor:
        """Relational rounds; ReLU between rounds, linear output on the last."""
        for i, layer in enumerate(self.rgcn):
            z = layer(z, index)
            if i < len(self.rgcn) - 1:
                z = torch.relu(z)
            if not torch.isfinite(z).all():
                raise NumericError(f"non-finite activations after relational layer {i}")
        return z

    def stitch(self, patch_preds: torch.Tensor) -> torch.Tensor:
        """De-overlap [B, N_p, P] patch predictions into [B, T_w] by averaging."""
        flat_idx = self.patch_time_idx[self.patch_valid]
        vals = patch_preds[:, self.patch_valid]
        out = patch_preds.new_zeros(patch_preds.shape[0], self.window_len)
        out = out.index_add(1, flat_idx, vals)
        return out / self.time_coverage.to(patch_preds.dtype)


def masks_to_tensors(
    masks, num_windows: int, num_patches: int
) -> tuple[torch.Tensor | None, torch.Tensor | None]:
    """Convert per-window MaskSpec-likes to (masked [N, N_p] bool, causal [N] bool)."""
    if masks is None:
        return None, None
    if len(masks) != num_windows:
        raise ValueError(f"{len(masks)} masks for {num_windows} windows")
    masked = torch.zeros(num_windows, num_patches, dtype=torch.bool)
    causal = torch.zeros(num_windows, dtype=torch.bool)
    for i, spec in enumerate(masks):
        if spec is None:
            continue
        masked[i, list(spec.masked_indices)] = True
        causal[i] = spec.mode == "causal"
    return masked, causal


def _group_rows(batch: WindowBatch, index: GraphIndex) -> tuple[list[int], dict]:
    """Group batch rows into aligned snapshots keyed by window start time."""
    row_map: dict[tuple[int, str], int] = {}
    for row, (node, t0) in enumerate(zip(batch.node_ids, batch.t_start.tolist())):
        key = (t0, node)
        if key in row_map:
            raise GraphError(f"duplicate window for node {node!r} at start {t0}")
        row_map[key] = row
    by_start: dict[int, set[str]] = {}
    for t0, node in row_map:
        by_start.setdefault(t0, set()).add(node)
    starts = sorted(by_start)
    want = set(index.real_nodes)
    for t in starts:
        if by_start[t] != want:
            missing = sorted(want - by_start[t])[:3]
            extra = sorted(by_start[t] - want)[:3]
            raise GraphError(
                f"snapshot at start {t} does not cover the graph "
                f"(missing={missing}, unknown={extra})"
            )
    return starts, row_map


def encode_batch(
    model: Encoder,
    batch: WindowBatch,
    graph: HierGraph | None = None,
    graph_index: GraphIndex | None = None,
    masks=None,
    use_hierarchy: bool = True,
    use_exogenous: bool = True,
    loss_nodes: set[str] | None = None,
    stop_grad_background: bool = False,
) -> torch.Tensor:
    """Encode a window batch to [N, N_p, d] representations.

    With a graph, batch rows are grouped into aligned snapshots (one window
    per non-cluster node at each start time); cluster nodes enter as the mean
    of their member users' patch embeddings. ``stop_grad_background`` detaches
    the temporal representations of nodes outside ``loss_nodes`` before
    message passing.
    """
    dtype = model.param_dtype
    x = torch.as_tensor(batch.x, dtype=dtype)
    codes = None
    if batch.o.shape[-1] > 0:
        codes = torch.as_tensor(batch.o, dtype=torch.long)
    masked, causal = masks_to_tensors(masks, batch.num_windows, model.num_patches)
    u = model.embed(x, codes, masked, use_exogenous=use_exogenous)

    if not use_hierarchy or graph is None:
        return model.temporal(u, causal)

    index = graph_index if graph_index is not None else GraphIndex(graph)
    starts, row_map = _group_rows(batch, index)
    n_groups, n_slots = len(starts), len(index.node_order)

    slot_tensors, slot_causal = [], []
    row_grid: dict[str, list[int]] = {
        node: [row_map[(t, node)] for t in starts] for node in index.real_nodes
    }
    causal_full = causal if causal is not None else torch.zeros(batch.num_windows, dtype=torch.bool)
    for slot, node in enumerate(index.node_order):
        if node in row_grid:
            rows = torch.tensor(row_grid[node], dtype=torch.long)
            slot_tensors.append(u.index_select(0, rows))
            slot_causal.append(causal_full.index_select(0, rows))
        else:
            member_slots = index.cluster_members[slot]
            member_stack = [
                u.index_select(0, torch.tensor(row_grid[index.node_order[m]], dtype=torch.long))
                for m in member_slots.tolist()
            ]
            slot_tensors.append(torch.stack(member_stack, dim=0).mean(dim=0))
            slot_causal.append(torch.zeros(n_groups, dtype=torch.bool))
    u_nodes = torch.stack(slot_tensors, dim=1)          # [G, V, N_p, d]
    causal_nodes = torch.stack(slot_causal, dim=1)      # [G, V]

    z = model.temporal(
        u_nodes.reshape(n_groups * n_slots, model.num_patches, -1),
        causal_nodes.reshape(-1),
    ).reshape(n_groups, n_slots, model.num_patches, -1)

    if stop_grad_background and loss_nodes is not None:
        keep = torch.tensor(
            [node in loss_nodes for node in index.node_order], dtype=torch.bool
        ).view(1, n_slots, 1, 1)
        z = torch.where(keep, z, z.detach())

    z = model.hierarchical(z, index)

    group_pos = {t: g for g, t in enumerate(starts)}
    g_idx = torch.tensor(
        [group_pos[t] for t in batch.t_start.tolist()], dtype=torch.long
    )
    s_idx = torch.tensor([index.slots[n] for n in batch.node_ids], dtype=torch.long)
    return z[g_idx, s_idx]


def build_encoder(
    model_cfg: ModelConfig,
    patch_cfg: PatchConfig,
    window_len: int,
    exo_schema: ExogenousSchema = EMPTY_SCHEMA,
    relations: tuple[str, ...] = RELATIONS,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> Encoder:
    """Deterministically initialize an encoder from a seed."""
    torch.manual_seed(seed)
    model = Encoder(model_cfg, patch_cfg, window_len, exo_schema, relations)
    return model.to(dtype)
