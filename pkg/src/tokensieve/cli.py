"""Command-line entry points tying scene generation, training, evaluation,
the encoder pipeline, and the FLOP report together.

Every command is deterministic given its seed: rerunning with identical
inputs produces byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .complexity import CostConfig, build_report, format_summary, write_sweep_csv
from .encoder import (
    DEFAULT_KEEP_SCHEDULES,
    EncoderConfig,
    init_encoder_params,
    render_trace_heatmaps,
    write_trace,
)
from .harness import (
    SceneSpec,
    evaluate_selection,
    generate_scenes,
    load_scene,
    load_scene_dir,
    metrics_csv_text,
    run_pipeline,
    save_scene,
    train_fts,
)
from .numerics import (
    load_checkpoint,
    make_rng,
    restore_parameters,
    save_checkpoint,
    write_tensor,
)
from .scoring import FtsParams, init_category_head, init_fts_params


def _load_json(path: str | None, default: dict | None = None) -> dict:
    if path is None:
        return dict(default or {})
    return json.loads(Path(path).read_text())


def _build_fts(config: dict) -> FtsParams:
    rng = make_rng(int(config["seed"]))
    return init_fts_params(
        channels=int(config["channels"]),
        num_levels=int(config["num_levels"]),
        rng=rng,
        hidden=tuple(config.get("hidden", [64])),
    )


def _restore_fts(ckpt_dir: str) -> FtsParams:
    arrays, manifest = load_checkpoint(ckpt_dir)
    params = _build_fts(manifest["config"])
    restore_parameters(params.parameters(), arrays)
    return params


def cmd_gen_data(args: argparse.Namespace) -> int:
    raw = _load_json(args.spec)
    raw["seed"] = args.seed
    spec = SceneSpec.from_jsonable(raw)
    scenes = generate_scenes(spec, args.n)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "spec.json").write_text(json.dumps(spec.to_jsonable(), indent=2, sort_keys=True))
    for i, scene in enumerate(scenes):
        save_scene(scene, outdir, f"scene_{i:04d}")
    print(f"wrote {len(scenes)} scenes to {outdir}")
    return 0


def cmd_train_fts(args: argparse.Namespace) -> int:
    config = _load_json(args.config, default={})
    scenes = load_scene_dir(args.data)
    geom = scenes[0].geometry
    config.setdefault("seed", 0)
    config.setdefault("hidden", [64])
    config.setdefault("lr", 0.5)
    config.setdefault("epochs", 120)
    config.setdefault("lambda_f", 1.5)
    config["channels"] = geom.channels
    config["num_levels"] = geom.num_levels

    params = _build_fts(config)
    params, curve = train_fts(
        scenes,
        params,
        epochs=int(config["epochs"]),
        lr=float(config["lr"]),
        lambda_f=float(config["lambda_f"]),
    )
    save_checkpoint(args.out, params.parameters(), seed=int(config["seed"]), config=config)
    print(f"trained {config['epochs']} epochs on {len(scenes)} scenes")
    print(f"loss: first={curve[0]:.6f} last={curve[-1]:.6f}")
    print(f"checkpoint: {args.out}")
    return 0


def cmd_eval_selection(args: argparse.Namespace) -> int:
    scenes = load_scene_dir(args.data)
    params = _restore_fts(args.ckpt)
    metrics = evaluate_selection(scenes, params, args.ratio)
    Path(args.csv).write_text(metrics_csv_text(metrics))
    print(
        f"ratio={metrics.ratio:g} scenes={metrics.num_scenes} "
        f"recall={metrics.recall:.4f} precision={metrics.precision:.4f}"
    )
    print(f"metrics: {args.csv}")
    return 0


def cmd_run_encoder(args: argparse.Namespace) -> int:
    scene = load_scene(args.scene)
    fts_params = _restore_fts(args.ckpt)
    config = _load_json(args.config, default={})
    geom = scene.geometry
    schedule = config.get("keep_schedule", list(DEFAULT_KEEP_SCHEDULES[0.3]))
    enc_config = EncoderConfig(
        num_layers=int(config.get("num_layers", len(schedule))),
        embed_dim=geom.channels,
        heads=int(config.get("heads", 8)),
        points=int(config.get("points", 4)),
        object_tokens=int(config.get("object_tokens", 8)),
        keep_schedule=tuple(schedule),
    )
    rng = make_rng(int(config.get("seed", 0)))
    head = init_category_head(
        geom.channels,
        int(config.get("num_classes", 2)),
        rng,
        hidden=tuple(config.get("category_hidden", [])),
    )
    enc_params = init_encoder_params(enc_config, geom.num_levels, rng)
    result = run_pipeline(
        scene,
        fts_params,
        enc_params,
        head,
        enc_config,
        eval_ratio=float(config.get("eval_ratio", 0.3)),
    )
    outdir = Path(args.trace)
    outdir.mkdir(parents=True, exist_ok=True)
    write_trace(result.trace, outdir / "trace.json")
    render_trace_heatmaps(result.trace, geom, outdir)
    (outdir / "metrics.csv").write_text(metrics_csv_text(result.metrics))
    write_tensor(outdir / "final_tokens.ftsr", result.tokens)
    print(f"encoded {geom.num_tokens} tokens over {enc_config.num_layers} layers")
    print(f"trace artifacts: {outdir}")
    return 0


def cmd_flops_report(args: argparse.Namespace) -> int:
    raw = _load_json(args.config, default={})
    overrides = {
        "points": args.points,
        "embed_dim": args.embed_dim,
        "heads": args.heads,
        "num_tokens": args.tokens,
        "decoder_queries": args.decoder_queries,
        "keep_ratio": args.gamma,
        "enhanced_tokens": args.enhanced_tokens,
        "encoder_layers": args.encoder_layers,
        "decoder_layers": args.decoder_layers,
    }
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    config = CostConfig.from_dict(raw)
    report = build_report(config)
    print(format_summary(report))
    if args.csv:
        write_sweep_csv(config, args.csv)
        print(f"sweep: {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokensieve",
        description="Token scoring, pruning, and dual-attention encoding toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic scenes")
    p.add_argument("--spec", help="scene spec JSON (defaults used when omitted)")
    p.add_argument("--n", type=int, required=True, help="number of scenes")
    p.add_argument("--seed", type=int, required=True, help="generator seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-fts", help="train the foreground token scorer")
    p.add_argument("--data", required=True, help="scene directory from gen-data")
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.set_defaults(func=cmd_train_fts)

    p = sub.add_parser("eval-selection", help="measure selection quality")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--ratio", type=float, required=True, help="keep ratio budget")
    p.add_argument("--csv", required=True, help="metrics CSV to write")
    p.set_defaults(func=cmd_eval_selection)

    p = sub.add_parser("run-encoder", help="run the dual-attention encoder on a scene")
    p.add_argument("--scene", required=True, help="a .scene.json file")
    p.add_argument("--ckpt", required=True, help="scorer checkpoint directory")
    p.add_argument("--config", help="encoder config JSON")
    p.add_argument("--trace", required=True, help="directory for trace artifacts")
    p.set_defaults(func=cmd_run_encoder)

    p = sub.add_parser("flops-report", help="closed-form FLOP model report")
    p.add_argument("--config", help="cost config JSON")
    p.add_argument("--csv", help="keep-ratio sweep CSV to write")
    p.add_argument("--points", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--tokens", type=float)
    p.add_argument("--decoder-queries", dest="decoder_queries", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--enhanced-tokens", dest="enhanced_tokens", type=int)
    p.add_argument("--encoder-layers", dest="encoder_layers", type=int)
    p.add_argument("--decoder-layers", dest="decoder_layers", type=int)
    p.set_defaults(func=cmd_flops_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
