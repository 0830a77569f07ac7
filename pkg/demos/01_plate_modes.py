"""Walk through the plate physics: stiffness, benchmark frequencies, and
how an antisymmetric mode shape turns into the mask where sand settles.

Writes demos/out/plate_modes.png with a field/mask pair per mode.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from chladni_studio import (
    DecayParams,
    PlateSpec,
    amplitude_field,
    bending_stiffness,
    nodal_line_count,
    nodal_mask,
)
from chladni_studio.registry import ModeRegistry

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

spec = PlateSpec()
print(f"plate: {spec.side_length * 1e3:.0f} mm side, "
      f"{spec.thickness * 1e3:.1f} mm thick stainless steel")
print(f"bending stiffness D = {bending_stiffness(spec):.4f} N*m")
print()

registry = ModeRegistry.default()
print(f"{'id':>2} {'(n,m)':>7} {'lambda':>10} {'f (Hz)':>9} {'lines':>5} source")
for entry in registry:
    print(f"{entry.mode_id:>2} ({entry.order.n},{entry.order.m})"
          f"{entry.lam:>11.4f} {entry.frequency_hz:>9.2f} "
          f"{entry.nodal_lines:>5} {entry.source}")

show = registry.entries[:4]
fig, axes = plt.subplots(2, len(show), figsize=(3 * len(show), 6))
for col, entry in enumerate(show):
    field = amplitude_field(entry.order, 256, DecayParams())
    mask = nodal_mask(field)
    axes[0, col].imshow(field.values.T, cmap="RdBu", origin="lower")
    axes[0, col].set_title(
        f"({entry.order.n},{entry.order.m})  {entry.frequency_hz:.1f} Hz"
    )
    axes[1, col].imshow(mask.cells.T, cmap="gray", origin="lower")
    axes[1, col].set_title(f"{nodal_line_count(mask)} line components")
    for ax in (axes[0, col], axes[1, col]):
        ax.set_xticks([])
        ax.set_yticks([])
fig.suptitle("Amplitude fields (top) and particle-accumulation masks (bottom)")
fig.tight_layout()
fig.savefig(OUT / "plate_modes.png", dpi=120)
print(f"\nwrote {OUT / 'plate_modes.png'}")
