"""Mode registry: the lookup table tying recognized mode ids to physics.

Each entry pairs a modal order (n, m) with its dimensionless frequency
coefficient and the benchmark frequency recomputed from plate theory.
Entries are loaded from a line-oriented calibration file so better
coefficients can be swapped in without touching code.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .plate import (
    DecayParams,
    ModeOrder,
    PlateSpec,
    amplitude_field,
    natural_frequency,
    nodal_line_count,
    nodal_mask,
)

__all__ = ["ModeEntry", "ModeRegistry", "map_mode_to_frequency"]

_VALID_SOURCES = ("paper", "derived")

# Grid used when deriving the per-mode nodal line count stored in the registry.
_LINE_COUNT_RESOLUTION = 128


@dataclass(frozen=True)
class ModeEntry:
    """One vibration mode of the benchmark plate."""

    mode_id: int
    order: ModeOrder
    lam: float
    frequency_hz: float
    nodal_lines: int
    source: str


class ModeRegistry:
    """Immutable, dense-id collection of modes.

    frequency_hz is always natural_frequency(spec, lam) evaluated in 64-bit
    arithmetic at load time, never a stored number, so the mapping layer is
    exact by construction.
    """

    def __init__(self, entries: list[ModeEntry], spec: PlateSpec):
        ids = [e.mode_id for e in entries]
        if sorted(ids) != list(range(len(entries))):
            raise ValueError("mode ids must be dense and unique starting at 0")
        self.entries = sorted(entries, key=lambda e: e.mode_id)
        self.spec = spec

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, mode_id: int) -> ModeEntry:
        if not 0 <= mode_id < len(self.entries):
            raise KeyError(f"unknown mode id {mode_id}")
        return self.entries[mode_id]

    def frequencies(self) -> list[float]:
        return [e.frequency_hz for e in self.entries]

    @classmethod
    def from_file(cls, path: str | Path, spec: PlateSpec = PlateSpec(),
                  decay: DecayParams = DecayParams()) -> "ModeRegistry":
        """Parse a calibration file: `mode_id,n,m,lambda,source` per line,
        `#` starts a comment."""
        entries = []
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            mode_id, n, m = int(parts[0]), int(parts[1]), int(parts[2])
            lam = float(parts[3])
            source = parts[4]
            if source not in _VALID_SOURCES:
                raise ValueError(f"{path}:{lineno}: unknown source {source!r}")
            order = ModeOrder(n=n, m=m)
            entries.append(
                ModeEntry(
                    mode_id=mode_id,
                    order=order,
                    lam=lam,
                    frequency_hz=natural_frequency(spec, lam),
                    nodal_lines=_count_lines(order, decay),
                    source=source,
                )
            )
        if not entries:
            raise ValueError(f"{path}: no mode entries")
        return cls(entries, spec)

    @classmethod
    def default(cls) -> "ModeRegistry":
        """The shipped 15-mode calibration."""
        with resources.as_file(resources.files("chladni_studio.data") / "modes.csv") as p:
            return cls.from_file(p)


def _count_lines(order: ModeOrder, decay: DecayParams) -> int:
    field = amplitude_field(order, _LINE_COUNT_RESOLUTION, decay)
    return nodal_line_count(nodal_mask(field))


def map_mode_to_frequency(mode_id: int, registry: ModeRegistry) -> dict:
    """Pure lookup from a recognized mode id to its creation-control parameters."""
    entry = registry[mode_id]
    return {
        "frequency_hz": entry.frequency_hz,
        "order": entry.order,
        "nodal_lines": entry.nodal_lines,
    }
