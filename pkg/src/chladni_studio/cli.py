"""Operator command line: dataset generation, training, evaluation,
ablation, serving, benchmarking, and one-shot sonification.

Exit codes: 0 success, 1 runtime or data error, 2 usage error. Machine
readable results are printed as single JSON documents on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .audio import ToneSpec, render_tone, write_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import DatasetConfig, DatasetManifest, build_dataset, image_to_input
from .model import VARIANTS, ModelConfig
from .neural import softmax
from .registry import ModeRegistry
from .service import ServiceConfig, full_link_latency, serve
from .training import TrainConfig, benchmark_latency, evaluate, train

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("config file must hold a JSON object")
    return data


def _registry(args) -> ModeRegistry:
    if getattr(args, "modes", None):
        return ModeRegistry.from_file(args.modes)
    return ModeRegistry.default()


def _merged(section: dict, cls, **explicit):
    """Build a config dataclass from defaults < config file < explicit flags."""
    kwargs = {k: v for k, v in section.items()}
    kwargs.update({k: v for k, v in explicit.items() if v is not None})
    return cls(**kwargs)


def _dataset_image_size(dataset_dir: Path) -> int | None:
    cfg_path = dataset_dir / "dataset_config.json"
    if cfg_path.exists():
        with open(cfg_path, encoding="utf-8") as fh:
            return int(json.load(fh)["image_size"])
    return None


def _cmd_gen_dataset(args, file_cfg: dict) -> int:
    registry = _registry(args)
    cfg = _merged(
        file_cfg.get("dataset", {}),
        DatasetConfig,
        base_per_mode=args.base_per_mode,
        augment_factor=args.augment_factor,
        image_size=args.image_size,
        split_ratio=args.split_ratio,
        seed=args.seed,
    )
    manifest = build_dataset(registry, cfg, args.out)
    counts = manifest.class_counts()
    for mode_id in sorted(counts):
        per = counts[mode_id]
        print(f"mode {mode_id:2d}: train {per['train']:4d}  test {per['test']:4d}")
    print(json.dumps({
        "out": str(args.out),
        "total": len(manifest.entries),
        "train": len(manifest.split_entries("train")),
        "test": len(manifest.split_entries("test")),
    }))
    return 0


def _train_one(dataset_dir: Path, variant: str, image_size: int | None,
               file_cfg: dict, seed: int):
    manifest = DatasetManifest.load(dataset_dir)
    size = image_size or _dataset_image_size(dataset_dir) or 224
    model_cfg = _merged(
        file_cfg.get("model", {}),
        ModelConfig,
        variant=variant,
        image_size=size,
        num_classes=len(manifest.entries[0].one_hot),
    )
    train_cfg = _merged(file_cfg.get("train", {}), TrainConfig, seed=seed)
    return manifest, train(manifest, model_cfg, train_cfg)


def _cmd_train(args, file_cfg: dict) -> int:
    _, ckpt = _train_one(Path(args.dataset), args.variant, args.image_size,
                         file_cfg, args.seed)
    save_checkpoint(ckpt, args.out)
    history_path = Path(args.out).with_name("history.json")
    with open(history_path, "w", encoding="utf-8") as fh:
        json.dump(ckpt.history, fh, indent=2)
    last = ckpt.history[-1]
    best = min(h["val_loss"] for h in ckpt.history)
    print(json.dumps({
        "checkpoint": str(args.out),
        "history": str(history_path),
        "epochs": len(ckpt.history),
        "final_val_accuracy": last["val_accuracy"],
        "best_val_loss": best,
    }))
    return 0


def _cmd_eval(args, file_cfg: dict) -> int:
    ckpt = load_checkpoint(args.ckpt)
    manifest = DatasetManifest.load(args.dataset)
    report = evaluate(ckpt, manifest, split=args.split)
    print(json.dumps(report.to_dict()))
    return 0


def _cmd_ablate(args, file_cfg: dict) -> int:
    rows = []
    for variant in VARIANTS:
        manifest, ckpt = _train_one(Path(args.dataset), variant, args.image_size,
                                    file_cfg, args.seed)
        report = evaluate(ckpt, manifest, split="test")
        rows.append({
            "variant": variant,
            "accuracy_pct": 100.0 * report.top1_accuracy,
            "macro_f1": report.macro_f1,
            "mean_latency_ms": report.mean_latency_ms,
            "params": int(sum(p.size for p in ckpt.params.values())),
        })
    print(f"{'variant':<8} {'accuracy_pct':>12} {'macro_f1':>9} "
          f"{'mean_latency_ms':>16} {'params':>9}")
    for r in rows:
        print(f"{r['variant']:<8} {r['accuracy_pct']:>12.2f} {r['macro_f1']:>9.4f} "
              f"{r['mean_latency_ms']:>16.2f} {r['params']:>9d}")
    print(json.dumps(rows))
    return 0


def _cmd_serve(args, file_cfg: dict) -> int:
    try:
        cfg = _merged(
            file_cfg.get("service", {}),
            ServiceConfig,
            listen_port=args.listen_port,
            reply_port=args.reply_port,
            bridge_port=args.bridge_port,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    ckpt = load_checkpoint(args.ckpt)
    registry = _registry(args)
    print(f"serving on udp {cfg.host}:{cfg.listen_port} -> :{cfg.reply_port}, "
          f"bridge tcp :{cfg.bridge_port}; interrupt to stop")
    serve(cfg, ckpt, registry)
    return 0


def _cmd_bench_link(args, file_cfg: dict) -> int:
    cfg = _merged(
        file_cfg.get("service", {}),
        ServiceConfig,
        listen_port=args.listen_port,
        reply_port=args.reply_port,
        bridge_port=args.bridge_port,
    )
    ckpt = load_checkpoint(args.ckpt)
    registry = _registry(args)
    print(json.dumps(full_link_latency(cfg, ckpt, registry, frames=args.frames)))
    return 0


def _cmd_bench_infer(args, file_cfg: dict) -> int:
    ckpt = load_checkpoint(args.ckpt)
    print(json.dumps(benchmark_latency(ckpt, runs=args.runs, seed=args.seed)))
    return 0


def _cmd_sonify(args, file_cfg: dict) -> int:
    if args.duration <= 0:
        print("error: --duration must be positive", file=sys.stderr)
        return USAGE_ERROR
    ckpt = load_checkpoint(args.ckpt)
    registry = _registry(args)
    try:
        pixels = np.asarray(Image.open(args.image).convert("RGB"))
    except (OSError, UnidentifiedImageError) as exc:
        print(f"error: cannot read image {args.image}: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    model = ckpt.build()
    x = image_to_input(pixels, ckpt.config.image_size)[None]
    probs = softmax(model.logits(x))[0]
    mode_id = int(probs.argmax())
    entry = registry[mode_id]
    samples = render_tone(ToneSpec(frequency_hz=entry.frequency_hz,
                                   duration_s=args.duration))
    write_wav(samples, ToneSpec(entry.frequency_hz, args.duration).sample_rate,
              args.out)
    print(json.dumps({
        "mode_id": mode_id,
        "n": entry.order.n,
        "m": entry.order.m,
        "frequency_hz": entry.frequency_hz,
        "confidence": float(probs[mode_id]),
        "wav": str(args.out),
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chladni-studio",
        description="Plate-pattern dataset, recognizer, and sonification toolkit",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None,
                        help="JSON file overriding config defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", parents=[common],
                       help="render and split the labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--modes", default=None, help="calibration file (default bundled)")
    p.add_argument("--base-per-mode", type=int, default=None)
    p.add_argument("--augment-factor", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--split-ratio", type=float, default=None)
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("train", parents=[common], help="train one variant")
    p.add_argument("--dataset", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="cbam5")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", parents=[common],
                       help="train and compare all three variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--image-size", type=int, default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("serve", parents=[common], help="run the mapping service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--modes", default=None)
    p.add_argument("--listen-port", type=int, default=None)
    p.add_argument("--reply-port", type=int, default=None)
    p.add_argument("--bridge-port", type=int, default=None)
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("bench-link", parents=[common],
                       help="loopback full-link latency benchmark")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--modes", default=None)
    p.add_argument("--frames", type=int, default=1000)
    p.add_argument("--listen-port", type=int, default=None)
    p.add_argument("--reply-port", type=int, default=None)
    p.add_argument("--bridge-port", type=int, default=None)
    p.set_defaults(func=_cmd_bench_link)

    p = sub.add_parser("bench-infer", parents=[common],
                       help="single-image inference latency benchmark")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--runs", type=int, default=1000)
    p.set_defaults(func=_cmd_bench_infer)

    p = sub.add_parser("sonify", parents=[common],
                       help="classify one image and render its tone")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--modes", default=None)
    p.set_defaults(func=_cmd_sonify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_cfg = _load_config_file(args.config)
        return args.func(args, file_cfg)
    except KeyboardInterrupt:
        return 0
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
