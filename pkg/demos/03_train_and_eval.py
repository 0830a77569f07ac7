"""Build a small dataset, train the attention recognizer, and evaluate.

This is a scaled-down run (6 base images per mode, 48 px) so it finishes in
a couple of minutes on a laptop CPU; pass --desk for the full desk profile
used by the acceptance suite (20 base per mode at 64 px, minutes more).
"""

import sys
import tempfile
import time
from pathlib import Path

from chladni_studio import (
    DatasetConfig,
    ModelConfig,
    TrainConfig,
    build_dataset,
    evaluate,
    save_checkpoint,
    train,
)
from chladni_studio.registry import ModeRegistry

desk = "--desk" in sys.argv
size = 64 if desk else 48
base = 20 if desk else 6

registry = ModeRegistry.default()
root = Path(tempfile.mkdtemp(prefix="chladni_demo_"))
print(f"building dataset ({base} base images per mode at {size}px) in {root}")
config = DatasetConfig(base_per_mode=base, augment_factor=3, image_size=size,
                       seed=11)
manifest = build_dataset(registry, config, root)
print(f"{len(manifest.entries)} images, "
      f"{len(manifest.split_entries('train'))} train / "
      f"{len(manifest.split_entries('test'))} test")

model_config = ModelConfig(variant="cbam5", image_size=size)
train_config = TrainConfig(seed=11, max_epochs=50 if desk else 25)
print(f"training {model_config.variant} "
      f"({ModelConfig(variant='cbam5', image_size=size).head_inputs} head inputs)")
start = time.time()
ckpt = train(manifest, model_config, train_config)
print(f"trained {len(ckpt.history)} epochs in {time.time() - start:.0f}s; "
      f"best val loss {min(h['val_loss'] for h in ckpt.history):.4f}")

report = evaluate(ckpt, manifest, split="test")
print(f"test accuracy {report.top1_accuracy:.4f}, macro F1 {report.macro_f1:.4f}, "
      f"mean single-image latency {report.mean_latency_ms:.1f} ms")

out = root / "model.ckpt"
save_checkpoint(ckpt, out)
print(f"checkpoint written to {out}")
