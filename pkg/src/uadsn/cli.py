"""Command-line entry point.

Subcommands: ``gen-data``, ``train``, ``eval``, ``predict``, ``ablate``.
Every run appends one record to ``<out>/run_manifest.jsonl`` holding the
command, the fully resolved configuration and its hash, the seed, the
written artifacts and start/end timestamps. Set ``UADSN_DETERMINISTIC=1``
to force deterministic torch kernels.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    apply_overrides,
    config_hash,
    load_config,
    phantom_spec_from,
    train_config_from,
)
from .grid import BinaryMask, Volume, binarize, connected_components, largest_component
from .io import load_grid, save_grid
from .metrics import aggregate_reports, write_reports, write_summary
from .phantom import generate_dataset, load_dataset
from .trainer import (
    apply_determinism_env,
    evaluate,
    load_checkpoint,
    predict_case,
    train,
)

ABLATION_ROWS = (
    # Table rows: which loss/architecture features each configuration enables
    ("a", "single 3D stream, overlap loss only", dict(alpha=0.0, use_sse=False, dual_stream=False)),
    ("b", "+ topology (centerline) loss", dict(use_sse=False, dual_stream=False)),
    ("c", "+ spatial attention gates", dict(dual_stream=False)),
    ("d", "full dual-stream with consistency", dict()),
)


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed, artifacts,
                    started: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "artifacts": [str(a) for a in artifacts],
        "started_at": started,
        "finished_at": time.time(),
    }
    with (out_dir / "run_manifest.jsonl").open("a") as fh:
        fh.write(json.dumps(record) + "\n")


def _resolved_config(args) -> dict:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg["data.seed"] = args.seed
        cfg["train.seed"] = args.seed
    return cfg


def cmd_gen_data(args) -> int:
    started = time.time()
    cfg = _resolved_config(args)
    out = Path(args.out)
    spec = phantom_spec_from(cfg, seed=cfg["data.seed"])
    manifest = generate_dataset(
        out, spec, cfg["data.n_train"], cfg["data.n_eval"], cfg["data.seed"]
    )
    print(f"wrote {len(manifest['cases'])} cases under {out}")
    _write_manifest(out, "gen-data", cfg, cfg["data.seed"],
                    [out / "manifest.json"], started)
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = _resolved_config(args)
    out = Path(args.out)
    train_samples, _ = load_dataset(args.data)
    result = train(train_samples, train_config_from(cfg), out)
    print(f"trained {result.iterations} iterations, final loss {result.final_loss:.4f}")
    print(f"checkpoint: {result.checkpoint_path}")
    _write_manifest(out, "train", cfg, cfg["train.seed"],
                    [result.checkpoint_path, result.log_path], started)
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    cfg = _resolved_config(args)
    if args.no_postprocess:
        cfg["eval.postprocess"] = False
    out = Path(args.out)
    _, eval_samples = load_dataset(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    reports, agg = evaluate(
        ckpt, eval_samples,
        postprocess=cfg["eval.postprocess"],
        overlap=cfg["eval.overlap"],
        combine_streams=cfg["eval.combine_streams"],
    )
    reports_path = out / "metrics.jsonl"
    summary_path = out / "metrics_summary.txt"
    write_reports(reports_path, reports)
    write_summary(summary_path, agg)
    for metric in ("dsc", "assd_mm", "ahd_mm", "cldice"):
        a = agg[metric]
        print(f"{metric}: {a['mean']:.4f} +/- {a['std']:.4f} "
              f"(n={a['n']}, flagged={a['n_flagged']})")
    _write_manifest(out, "eval", cfg, cfg["train.seed"],
                    [reports_path, summary_path], started)
    return 0


def cmd_predict(args) -> int:
    started = time.time()
    cfg = _resolved_config(args)
    out = Path(args.out)
    prefix = Path(args.input)
    volume = load_grid(prefix.parent, prefix.name)
    if isinstance(volume, BinaryMask):
        volume = Volume(volume.data.astype(np.float32), volume.spacing)
    ckpt = load_checkpoint(args.checkpoint)
    prob, mask = predict_case(
        ckpt, volume,
        overlap=cfg["eval.overlap"],
        combine_streams=cfg["eval.combine_streams"],
        postprocess=not args.no_postprocess,
    )
    name = prefix.name
    artifacts = [
        save_grid(out, f"{name}_prob", prob),
        save_grid(out, f"{name}_mask", mask),
    ]
    print(f"wrote {name}_prob and {name}_mask under {out}")
    _write_manifest(out, "predict", cfg, cfg["train.seed"], artifacts, started)
    return 0


def ablation_config(base, row_key: str):
    """Training configuration for one ablation row ('a'..'d')."""
    for key, _, changes in ABLATION_ROWS:
        if key == row_key:
            return replace(base, **changes)
    raise KeyError(row_key)


def run_ablation(data_dir, out_dir, cfg: dict) -> dict:
    """Train and evaluate the four feature configurations on shared seeds."""
    out_dir = Path(out_dir)
    train_samples, eval_samples = load_dataset(data_dir)
    base = train_config_from(cfg)
    rows = []
    for key, label, _ in ABLATION_ROWS:
        per_seed = []
        for seed in cfg["ablate.seeds"]:
            run_cfg = replace(ablation_config(base, key), seed=seed)
            run_dir = out_dir / f"config_{key}_seed{seed}"
            result = train(train_samples, run_cfg, run_dir)
            ckpt = load_checkpoint(result.checkpoint_path)
            _, agg = evaluate(
                ckpt, eval_samples,
                postprocess=cfg["eval.postprocess"],
                overlap=cfg["eval.overlap"],
            )
            per_seed.append({
                "seed": seed,
                "dsc": agg["dsc"]["mean"],
                "assd_mm": agg["assd_mm"]["mean"],
                "ahd_mm": agg["ahd_mm"]["mean"],
                "cldice": agg["cldice"]["mean"],
            })
        mean = {
            m: float(np.mean([s[m] for s in per_seed]))
            for m in ("dsc", "assd_mm", "ahd_mm", "cldice")
        }
        rows.append({"key": key, "label": label, "per_seed": per_seed, "mean": mean})
    return {"rows": rows, "seeds": list(cfg["ablate.seeds"])}


def _format_ablation_table(report: dict) -> str:
    lines = ["config\tDSC\tASSD_mm\tAHD_mm\tclDice"]
    for row in report["rows"]:
        m = row["mean"]
        lines.append(
            f"({row['key']}) {row['label']}\t{m['dsc']:.4f}\t{m['assd_mm']:.4f}"
            f"\t{m['ahd_mm']:.4f}\t{m['cldice']:.4f}"
        )
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    started = time.time()
    cfg = _resolved_config(args)
    out = Path(args.out)
    report = run_ablation(args.data, out, cfg)
    report_path = out / "ablation.json"
    table_path = out / "ablation.txt"
    out.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    table = _format_ablation_table(report)
    table_path.write_text(table)
    print(table, end="")
    _write_manifest(out, "ablate", cfg, cfg["ablate.seeds"],
                    [report_path, table_path], started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uadsn",
        description="uncertainty-aware dual-stream tubular segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, checkpoint=False):
        p.add_argument("--config", type=Path, default=None, help="JSON config file with flat dotted keys")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="seed for data and training")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        if data:
            p.add_argument("--data", type=Path, required=True, help="dataset directory")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint archive")

    p = sub.add_parser("gen-data", help="generate the phantom dataset")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the dual-stream model")
    common(p, data=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the eval split")
    common(p, data=True, checkpoint=True)
    p.add_argument("--no-postprocess", action="store_true",
                   help="skip largest-component post-processing")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one volume")
    common(p, checkpoint=True)
    p.add_argument("--input", type=Path, required=True,
                   help="container prefix, e.g. data/cases/eval_000/image")
    p.add_argument("--no-postprocess", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and compare the four feature configurations")
    common(p, data=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    apply_determinism_env()
    try:
        return args.func(args)
    except Exception as err:  # descriptive message, nonzero exit
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
