"""Command-line entry points.

    powerpm synth    --config PATH [--set k=v ...] [--out DIR]
    powerpm ingest   --config PATH [--out DIR]
    powerpm pretrain --config PATH [--out DIR]
    powerpm finetune --config PATH --checkpoint PATH [--out DIR]
    powerpm ablate   --config PATH [--checkpoint PATH] [--out DIR]
    powerpm report   [--out DIR] FILES...

Exit codes: 0 success, 2 config schema violation, 3 missing checkpoint,
1 any other package error. Errors are emitted as one JSON line on stderr.
The POWERPM_CACHE environment variable sets the default dataset cache root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from powerpm.data.exogenous import ExogenousCoder
from powerpm.data.iso import load_iso_dataset
from powerpm.data.synthetic import (
    SynthConfig,
    SynthDataset,
    load_synth_dataset,
    read_exogenous_sidecar,
    synth_generate,
    write_synth_dataset,
)
from powerpm.downstream.finetune import FinetuneConfig, finetune, persistence_metrics
from powerpm.downstream.tasks import FORECAST, FROZEN, AblationFlags
from powerpm.errors import CheckpointError, ConfigError, PowerPMError
from powerpm.experiment import build_task_spec, derive_seed, dump_config, load_experiment
from powerpm.hierarchy.clustering import export_assignment
from powerpm.hierarchy.graph import RELATIONS, export_graph
from powerpm.model.checkpoint import load_checkpoint, restore_encoder, save_checkpoint
from powerpm.model.config import ModelConfig, PatchConfig
from powerpm.model.network import build_encoder
from powerpm.pipeline import (
    Corpus,
    build_pretrain_data,
    build_task_data,
    corpus_from_synth,
    prepare_corpus,
    scale_default_lr,
)
from powerpm.pretrain.contrastive import ContrastiveConfig
from powerpm.pretrain.loop import PretrainConfig, pretrain_loop, write_trace
from powerpm.report import generate_report

VARIANT_FLAGS = {
    "full": AblationFlags(),
    "-H": AblationFlags(no_hierarchy=True),
    "-M": AblationFlags(random_mask_only=True),
    "-C": AblationFlags(no_contrastive=True),
    "-E": AblationFlags(no_exogenous=True),
}


def _cache_root(config: dict) -> Path:
    env = os.environ.get("POWERPM_CACHE")
    return Path(env) if env else Path(config["output_dir"])


def _build_coder(config: dict) -> ExogenousCoder | None:
    exo = config["exogenous"]
    if not exo["enabled"]:
        return None
    return ExogenousCoder(
        weather_vocabulary=tuple(exo["weather_vocabulary"]),
        temp_lo=exo["temp_lo"],
        temp_hi=exo["temp_hi"],
    )


def _load_dataset(config: dict) -> SynthDataset:
    ds = config["dataset"]
    if ds["kind"] == "synth":
        synth_cfg = SynthConfig(seed=derive_seed(config["seed"], "synth"), **ds["synth"])
        return synth_generate(synth_cfg)
    if ds["kind"] == "synth_dir":
        return load_synth_dataset(ds["path"])
    instances = load_iso_dataset(ds["path"], ds["iso_schema"])
    exogenous = read_exogenous_sidecar(Path(ds["path"]) / "exogenous.csv")
    return SynthDataset(instances=instances, exogenous=exogenous, user_labels={})


def _build_corpus(config: dict) -> Corpus:
    dataset = _load_dataset(config)
    coder = _build_coder(config) if dataset.exogenous else None
    win = config["windows"]
    return corpus_from_synth(
        dataset,
        coder,
        window_len=win["window_len"],
        stride=win["stride"],
        ratios=tuple(float(r) for r in win["ratios"]),
        max_fill_fraction=win["max_fill_fraction"],
        num_clusters=config["clustering"]["num_clusters"],
        cluster_restarts=config["clustering"]["restarts"],
        cluster_band=config["clustering"]["band"],
        cluster_seed=derive_seed(config["seed"], "cluster"),
    )


def _model_config(config: dict) -> ModelConfig:
    model = config["model"]
    if model["scale"] == "custom":
        return ModelConfig(rgcn_layers=model["rgcn_layers"], **model["custom"])
    return ModelConfig.from_scale(model["scale"], rgcn_layers=model["rgcn_layers"])


def _pretrain_config(config: dict, variant: str = "full") -> PretrainConfig:
    pre = dict(config["pretrain"])
    checkpoint_every = pre.pop("checkpoint_every")
    lr = pre.pop("learning_rate")
    if lr is None:
        lr = scale_default_lr(config["model"]["scale"])
    flags = VARIANT_FLAGS[variant]
    return PretrainConfig(
        learning_rate=lr,
        seed=derive_seed(config["seed"], f"pretrain:{variant}"),
        random_mask_only=flags.random_mask_only,
        contrastive_weight=0.0 if flags.no_contrastive else pre.pop("contrastive_weight"),
        checkpoint_every=checkpoint_every,
        **{k: v for k, v in pre.items() if k != "contrastive_weight"},
    )


def _run_pretrain(config: dict, out: Path, variant: str = "full"):
    corpus = _build_corpus(config)
    flags = VARIANT_FLAGS[variant]
    model = build_encoder(
        _model_config(config),
        PatchConfig(**config["patch"]),
        window_len=config["windows"]["window_len"],
        exo_schema=corpus.schema,
        relations=RELATIONS,
        seed=derive_seed(config["seed"], f"init:{variant}"),
    )
    data = build_pretrain_data(corpus)
    contrastive = ContrastiveConfig(**config["contrastive"])
    pre_cfg = _pretrain_config(config, variant)
    out.mkdir(parents=True, exist_ok=True)
    model, trace = pretrain_loop(
        pre_cfg,
        data,
        model,
        contrastive,
        use_hierarchy=not flags.no_hierarchy,
        use_exogenous=not flags.no_exogenous,
        checkpoint_dir=out,
        checkpoint_fn=lambda m, p: save_checkpoint(p, m, seed=config["seed"]),
    )
    suffix = "" if variant == "full" else f"_{flags.label()}"
    ckpt_path = out / f"checkpoint{suffix}.ckpt"
    save_checkpoint(ckpt_path, model, seed=config["seed"])
    trace_path = out / f"trace{suffix}.csv"
    write_trace(trace, trace_path)
    if corpus.graph is not None:
        export_graph(corpus.graph, out / "graph.tsv")
    if corpus.assignment is not None:
        export_assignment(corpus.assignment, out / "assignment.csv")
    return corpus, ckpt_path, trace_path


def _run_tasks(config: dict, corpus: Corpus, checkpoint: Path, out: Path, variant: str):
    flags = VARIANT_FLAGS[variant]
    bundle = load_checkpoint(checkpoint)
    ft = config["finetune"]
    results = []
    out.mkdir(parents=True, exist_ok=True)
    for i, entry in enumerate(config["tasks"]):
        task = build_task_spec(entry)
        target_level = "user" if task.family in ("classify", "anomaly") else ft["target_level"]
        task_data = build_task_data(corpus, task, target_level)
        model = restore_encoder(bundle)
        result = finetune(
            task,
            model,
            task_data,
            flags=flags,
            seed=derive_seed(config["seed"], f"finetune:{variant}:{task.label()}"),
            cfg=FinetuneConfig(
                epochs=ft["epochs"],
                learning_rate=ft["learning_rate"],
                batch_groups=ft["batch_groups"],
                anomaly_threshold=ft["anomaly_threshold"],
            ),
        )
        if task.regime == FROZEN:
            state = "unchanged" if result.encoder_unchanged else "CHANGED"
            print(f"encoder frozen: checksum {state}")
        payload = {
            "task": {
                "family": task.family,
                "horizon": task.horizon,
                "mask_ratio": task.mask_ratio,
                "n_classes": task.n_classes,
                "regime": task.regime,
                "data_fraction": task.data_fraction,
            },
            "flags": asdict(flags),
            "variant": variant,
            "fraction": task.data_fraction,
            "seed": result.seed,
            "n_train_windows": result.n_train_windows,
            "encoder_unchanged": result.encoder_unchanged,
            "metrics": result.metrics,
        }
        if task.family == FORECAST:
            payload["baselines"] = {"persistence": persistence_metrics(task, task_data)}
        name = f"metrics_{variant.replace('-', '')}_{i:02d}_{task.label()}.json"
        path = out / name
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        print(f"wrote {path}")
        results.append(payload)
    return results


def cmd_synth(config: dict, out: str | None) -> int:
    out_dir = Path(out) if out else _cache_root(config) / "synth"
    dataset = _load_dataset({**config, "dataset": {**config["dataset"], "kind": "synth"}})
    write_synth_dataset(dataset, out_dir)
    print(f"wrote synthetic dataset to {out_dir}")
    return 0


def cmd_ingest(config: dict, out: str | None) -> int:
    out_dir = Path(out) if out else _cache_root(config) / "ingest"
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = _build_corpus(config)
    for split_name, windows in (("train", corpus.train), ("val", corpus.val), ("test", corpus.test)):
        np.savez(
            out_dir / f"{split_name}.npz",
            x=np.stack([w.values for w in windows]),
            node_ids=np.array([w.instance_id for w in windows]),
            t_start=np.array([w.t_start for w in windows], dtype=np.int64),
            t_end=np.array([w.t_end for w in windows], dtype=np.int64),
            o=(
                np.stack([w.codes for w in windows])
                if corpus.schema.num_variables
                else np.zeros((len(windows), corpus.window_len, 0), dtype=np.int64)
            ),
        )
    plan = {
        "ratios": list(corpus.plan.ratios),
        "train_end": corpus.plan.train_end,
        "val_end": corpus.plan.val_end,
        "norm_stats": {k: list(v) for k, v in sorted(corpus.plan.norm_stats.items())},
        "schema": [list(v) for v in corpus.schema.variables],
    }
    (out_dir / "split_plan.json").write_text(json.dumps(plan, indent=2, sort_keys=True))
    if corpus.graph is not None:
        export_graph(corpus.graph, out_dir / "graph.tsv")
    if corpus.assignment is not None:
        export_assignment(corpus.assignment, out_dir / "assignment.csv")
    print(f"wrote normalized dataset to {out_dir}")
    return 0


def cmd_pretrain(config: dict, out: str | None) -> int:
    out_dir = Path(out) if out else Path(config["output_dir"]) / "pretrain"
    _, ckpt_path, trace_path = _run_pretrain(config, out_dir)
    print(f"wrote checkpoint to {ckpt_path}")
    print(f"wrote loss trace to {trace_path}")
    return 0


def cmd_finetune(config: dict, checkpoint: str, out: str | None) -> int:
    out_dir = Path(out) if out else Path(config["output_dir"]) / "finetune"
    corpus = _build_corpus(config)
    _run_tasks(config, corpus, Path(checkpoint), out_dir, "full")
    return 0


def cmd_ablate(config: dict, checkpoint: str | None, out: str | None) -> int:
    out_dir = Path(out) if out else Path(config["output_dir"]) / "ablate"
    corpus = _build_corpus(config)
    for variant in config["ablation"]["variants"]:
        if variant == "full" and checkpoint:
            ckpt = Path(checkpoint)
        else:
            _, ckpt, _ = _run_pretrain(config, out_dir / "pretrain", variant)
        _run_tasks(config, corpus, ckpt, out_dir, variant)
    return 0


def cmd_report(files: list[str], out: str | None) -> int:
    out_dir = Path(out) if out else Path("report")
    metric_files = [f for f in files if f.endswith(".json")]
    trace_files = [f for f in files if f.endswith(".csv")]
    if not metric_files:
        raise PowerPMError("report needs at least one metrics JSON file")
    written = generate_report(metric_files, trace_files, out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powerpm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=False, default=None, help="experiment YAML")
            p.add_argument(
                "--set", dest="overrides", action="append", default=[],
                metavar="KEY=VALUE", help="override a config entry (flag wins)",
            )
        p.add_argument("--out", default=None, help="output directory")

    for name in ("synth", "ingest", "pretrain"):
        add_common(sub.add_parser(name))
    p_ft = sub.add_parser("finetune")
    add_common(p_ft)
    p_ft.add_argument("--checkpoint", required=True)
    p_ab = sub.add_parser("ablate")
    add_common(p_ab)
    p_ab.add_argument("--checkpoint", default=None)
    p_rep = sub.add_parser("report")
    p_rep.add_argument("files", nargs="+", help="metrics JSON and trace CSV files")
    p_rep.add_argument("--out", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.files, args.out)
        config = load_experiment(args.config, args.overrides)
        if args.command == "synth":
            return cmd_synth(config, args.out)
        if args.command == "ingest":
            return cmd_ingest(config, args.out)
        if args.command == "pretrain":
            return cmd_pretrain(config, args.out)
        if args.command == "finetune":
            return cmd_finetune(config, args.checkpoint, args.out)
        if args.command == "ablate":
            return cmd_ablate(config, args.checkpoint, args.out)
        raise PowerPMError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(
            json.dumps({"error": str(exc), "type": "ConfigError", "key_path": exc.key_path}),
            file=sys.stderr,
        )
        return 2
    except CheckpointError as exc:
        print(json.dumps({"error": str(exc), "type": "CheckpointError"}), file=sys.stderr)
        return 3
    except PowerPMError as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
