"""Render sand patterns and show the three augmentation families side by
side: color gain, sand-grain randomization, and 3x3 filter stylization.

Writes demos/out/sand_patterns.png.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from chladni_studio import (
    DecayParams,
    amplitude_field,
    augment_color,
    augment_filter,
    augment_sand,
    nodal_mask,
    render_pattern,
    ssim,
)
from chladni_studio.registry import ModeRegistry

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

registry = ModeRegistry.default()
entry = registry[1]  # (3, 5)
mask = nodal_mask(amplitude_field(entry.order, 128, DecayParams()))

clean = render_pattern(mask, 224, 6000, seed=7)
variants = {
    "clean": clean,
    "color gain": augment_color(clean, seed=1),
    "sand noise": render_pattern(augment_sand(mask, 0.5, seed=2), 224, 6000, seed=7),
    "edge enhance": augment_filter(clean, "edge_enhance"),
    "blur": augment_filter(clean, "blur"),
    "emboss": augment_filter(clean, "emboss"),
}

fig, axes = plt.subplots(1, len(variants), figsize=(3 * len(variants), 3.4))
for ax, (name, img) in zip(axes, variants.items()):
    ax.imshow(img.pixels)
    score = ssim(clean, img)
    ax.set_title(f"{name}\nssim vs clean: {score:.3f}", fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
fig.suptitle(f"Mode ({entry.order.n},{entry.order.m}) at {entry.frequency_hz:.1f} Hz")
fig.tight_layout()
fig.savefig(OUT / "sand_patterns.png", dpi=120)
print(f"wrote {OUT / 'sand_patterns.png'}")
