"""Labeled pattern dataset: generation, manifest, and loading.

Builds per-mode sand images (base renders plus augmented copies), splits
them stratified per class, and materializes everything as PNG files plus a
JSON-lines manifest. Sub-seeds are derived per entry with a splittable
scheme so serial and parallel builds would produce identical bytes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .patterns import (
    SandImage,
    augment_color,
    augment_filter,
    augment_sand,
    render_pattern,
)
from .plate import DecayParams, amplitude_field, nodal_mask
from .registry import ModeRegistry

__all__ = [
    "DatasetConfig",
    "ManifestEntry",
    "DatasetManifest",
    "build_dataset",
    "load_split",
    "image_to_input",
    "pattern_for_mode",
]

_AUGMENT_FAMILIES = ("color", "sand", "filter")
_STYLIZE_KERNELS = ("edge_enhance", "blur", "emboss")


@dataclass(frozen=True)
class DatasetConfig:
    base_per_mode: int = 100
    augment_factor: int = 3
    image_size: int = 224
    split_ratio: float = 0.8
    seed: int = 0
    mask_resolution: int = 128
    particle_count: int = 0  # 0 means scale with image area
    quantile: float = 0.15
    central_decay: float = 0.5
    edge_damping: float = 0.3
    color_offset_range: float = 0.10
    sand_noise_intensity: float = 0.5

    def __post_init__(self):
        if self.base_per_mode < 1 or self.augment_factor < 1:
            raise ValueError("base_per_mode and augment_factor must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")

    def effective_particle_count(self) -> int:
        if self.particle_count:
            return self.particle_count
        return max(200, round(0.12 * self.image_size**2))


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    mode_id: int
    n: int
    m: int
    one_hot: list[int]
    split: str
    augmented: bool
    seed: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path | None = None

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def class_counts(self) -> dict[int, dict[str, int]]:
        counts: dict[int, dict[str, int]] = {}
        for e in self.entries:
            per = counts.setdefault(e.mode_id, {"train": 0, "test": 0})
            per[e.split] += 1
        return counts

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")

    @classmethod
    def load(cls, root: str | Path) -> "DatasetManifest":
        root = Path(root)
        entries = []
        with open(root / "manifest.jsonl", encoding="utf-8") as fh:
            for line in fh:
                d = json.loads(line)
                entries.append(ManifestEntry(**d))
        return cls(entries=entries, root=root)


def _entry_seed(seed: int, mode_id: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(mode_id, index))
    return int(ss.generate_state(1, np.uint64)[0])


def _split_rng(seed: int, mode_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(mode_id,)))


def build_dataset(registry: ModeRegistry, config: DatasetConfig,
                  out_dir: str | Path) -> DatasetManifest:
    """Generate, split, and write the dataset; returns the saved manifest.

    Per mode: base_per_mode clean renders and (augment_factor - 1) *
    base_per_mode augmented copies, each applying exactly one family (color,
    sand, or filter) chosen uniformly. Labels never change under
    augmentation. The split is stratified per class at split_ratio.
    """
    if len(registry) < 2:
        raise ValueError("registry must contain at least 2 modes")
    root = Path(out_dir)
    decay = DecayParams(config.central_decay, config.edge_damping)
    particles = config.effective_particle_count()
    num_classes = len(registry)
    per_class = config.base_per_mode * config.augment_factor
    n_train = math.floor(config.split_ratio * per_class + 0.5)

    entries: list[ManifestEntry] = []
    for mode in registry:
        field_grid = amplitude_field(mode.order, config.mask_resolution, decay)
        mask = nodal_mask(field_grid, config.quantile)

        images: list[SandImage] = []
        seeds: list[int] = []
        for index in range(per_class):
            seed = _entry_seed(config.seed, mode.mode_id, index)
            seeds.append(seed)
            if index < config.base_per_mode:
                images.append(render_pattern(mask, config.image_size, particles, seed))
                continue
            rng = np.random.default_rng(seed)
            family = _AUGMENT_FAMILIES[rng.integers(0, len(_AUGMENT_FAMILIES))]
            base_img = images[index % config.base_per_mode]
            if family == "color":
                img = augment_color(base_img, int(rng.integers(2**63)),
                                    config.color_offset_range)
            elif family == "sand":
                noisy = augment_sand(mask, config.sand_noise_intensity,
                                     int(rng.integers(2**63)))
                img = render_pattern(noisy, config.image_size, particles,
                                     int(rng.integers(2**63)))
            else:
                img = augment_filter(base_img, _STYLIZE_KERNELS[rng.integers(0, 3)])
            images.append(img)

        train_set = set(_split_rng(config.seed, mode.mode_id)
                        .permutation(per_class)[:n_train].tolist())
        one_hot = [0] * num_classes
        one_hot[mode.mode_id] = 1
        for index, (img, seed) in enumerate(zip(images, seeds)):
            split = "train" if index in train_set else "test"
            rel = f"{split}/mode_{mode.mode_id}/img_{index}.png"
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(img.pixels).save(path)
            entries.append(
                ManifestEntry(
                    image_path=rel,
                    mode_id=mode.mode_id,
                    n=mode.order.n,
                    m=mode.order.m,
                    one_hot=list(one_hot),
                    split=split,
                    augmented=index >= config.base_per_mode,
                    seed=seed,
                )
            )

    manifest = DatasetManifest(entries=entries, root=root)
    manifest.save(root / "manifest.jsonl")
    with open(root / "dataset_config.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
    return manifest


def pattern_for_mode(registry: ModeRegistry, mode_id: int, image_size: int,
                     seed: int, config: DatasetConfig | None = None):
    """Clean reference pattern for one registry mode, rendered with the same
    defaults the dataset builder uses."""
    cfg = config or DatasetConfig(image_size=image_size)
    entry = registry[mode_id]
    field_grid = amplitude_field(entry.order, cfg.mask_resolution,
                                 DecayParams(cfg.central_decay, cfg.edge_damping))
    mask = nodal_mask(field_grid, cfg.quantile)
    return render_pattern(mask, image_size, cfg.effective_particle_count(), seed)


def image_to_input(pixels: np.ndarray, image_size: int) -> np.ndarray:
    """Uint8 (H, W, 3) image to the (3, S, S) float32 tensor the model eats.

    Nearest-neighbor resize when dimensions differ, then scale to [0, 1].
    """
    h, w = pixels.shape[:2]
    if (h, w) != (image_size, image_size):
        ri = np.minimum((np.arange(image_size) * (h / image_size)).astype(np.int64), h - 1)
        ci = np.minimum((np.arange(image_size) * (w / image_size)).astype(np.int64), w - 1)
        pixels = pixels[ri][:, ci]
    return (pixels.astype(np.float32) / 255.0).transpose(2, 0, 1)


def load_split(manifest: DatasetManifest, split: str,
               image_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Load one split as (inputs, one_hot_labels, mode_ids)."""
    if manifest.root is None:
        raise ValueError("manifest has no root directory")
    chosen = manifest.split_entries(split)
    if not chosen:
        raise ValueError(f"manifest has no {split!r} entries")
    x = np.empty((len(chosen), 3, image_size, image_size), dtype=np.float32)
    y = np.zeros((len(chosen), len(chosen[0].one_hot)), dtype=np.float32)
    ids = np.empty(len(chosen), dtype=np.int64)
    for k, e in enumerate(chosen):
        pixels = np.asarray(Image.open(manifest.root / e.image_path).convert("RGB"))
        x[k] = image_to_input(pixels, image_size)
        y[k] = e.one_hot
        ids[k] = e.mode_id
    return x, y, ids
