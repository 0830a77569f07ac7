"""Sand-pattern rendering and image-space augmentation.

Turns nodal masks into the particle images a camera would see, and applies
the three augmentation families used to harden the recognizer against
non-ideal captures: per-channel color gain, sand-grain randomization, and
fixed 3x3 filter kernels. Also provides the structural-similarity metric
used to score synthetic patterns against references.

Every randomized operation takes an explicit integer seed and is
byte-deterministic given identical inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .plate import NodalMask

__all__ = [
    "SandImage",
    "AugmentSpec",
    "FILTER_KERNELS",
    "render_pattern",
    "apply_channel_gains",
    "augment_color",
    "augment_sand",
    "augment_filter",
    "ssim",
    "luma",
]

BACKGROUND_RGB = (20, 20, 30)
SAND_RGB = (230, 225, 210)

# 3x3 stylization kernels, applied per channel with replicate padding.
FILTER_KERNELS = {
    "identity": np.array([[0, 0, 0], [0, 1, 0], [0, 0, 0]], dtype=np.float64),
    "blur": np.full((3, 3), 1.0 / 9.0, dtype=np.float64),
    "edge_enhance": np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]], dtype=np.float64),
    "emboss": np.array([[-2, -1, 0], [-1, 1, 1], [0, 1, 2]], dtype=np.float64),
}


@dataclass(frozen=True)
class SandImage:
    """Square 8-bit RGB image, pixels row-major with shape (H, W, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError("SandImage pixels must be (H, W, 3) uint8")
        if p.shape[0] != p.shape[1]:
            raise ValueError("SandImage must be square")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class AugmentSpec:
    """Knobs for one augmentation draw."""

    color_offset_range: float = 0.10
    sand_noise_intensity: float = 0.5
    filter_kernel_id: str = "edge_enhance"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.color_offset_range <= 0.5:
            raise ValueError("color_offset_range must lie in [0, 0.5]")
        if self.filter_kernel_id not in FILTER_KERNELS:
            raise ValueError(f"unknown filter kernel {self.filter_kernel_id!r}")


def render_pattern(mask: NodalMask, image_size: int, particle_count: int,
                   seed: int) -> SandImage:
    """Scatter sand grains over the marked cells of a nodal mask.

    Grains are 1 or 2 px light dots on a dark background, placed uniformly
    over true cells with uniform sub-cell jitter. Deterministic for a fixed
    (mask, image_size, particle_count, seed).
    """
    if image_size < 32:
        raise ValueError("image_size must be at least 32")
    if particle_count < 100:
        raise ValueError("particle_count must be at least 100")
    cells = np.argwhere(mask.cells)
    if len(cells) == 0:
        raise ValueError("mask has no cells to place sand on")

    rng = np.random.default_rng(seed)
    pick = rng.integers(0, len(cells), size=particle_count)
    jitter = rng.random((particle_count, 2))
    sizes = rng.integers(1, 3, size=particle_count)  # dot side in px

    scale = image_size / mask.resolution
    pos = (cells[pick] + jitter) * scale
    anchor = np.minimum(pos.astype(np.int64), image_size - 1)
    rows, cols = anchor[:, 0], anchor[:, 1]

    pixels = np.empty((image_size, image_size, 3), dtype=np.uint8)
    pixels[...] = BACKGROUND_RGB
    pixels[rows, cols] = SAND_RGB
    big = sizes == 2
    r1, c1 = rows[big], cols[big]
    r2 = np.minimum(r1 + 1, image_size - 1)
    c2 = np.minimum(c1 + 1, image_size - 1)
    pixels[r2, c1] = SAND_RGB
    pixels[r1, c2] = SAND_RGB
    pixels[r2, c2] = SAND_RGB
    return SandImage(pixels)


def apply_channel_gains(img: SandImage, gains) -> SandImage:
    """Multiply each RGB channel by its gain, round half-up, clamp to [0, 255]."""
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (3,):
        raise ValueError("expected one gain per RGB channel")
    scaled = np.floor(img.pixels.astype(np.float64) * gains + 0.5)
    return SandImage(np.clip(scaled, 0, 255).astype(np.uint8))


def augment_color(img: SandImage, seed: int, offset_range: float = 0.10) -> SandImage:
    """Independent random per-channel gain in [1 - offset_range, 1 + offset_range]."""
    rng = np.random.default_rng(seed)
    gains = rng.uniform(1.0 - offset_range, 1.0 + offset_range, size=3)
    return apply_channel_gains(img, gains)


# Ring of 8 neighbors around a cell, row-major order.
_NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)


def _ring_component_table() -> np.ndarray:
    """components-of-ring count for every 8-bit occupancy pattern of the
    neighbor ring, under 8-connectivity between ring cells."""
    adj = [
        [
            j
            for j in range(8)
            if j != i
            and max(
                abs(_NEIGHBOR_OFFSETS[i][0] - _NEIGHBOR_OFFSETS[j][0]),
                abs(_NEIGHBOR_OFFSETS[i][1] - _NEIGHBOR_OFFSETS[j][1]),
            )
            <= 1
        ]
        for i in range(8)
    ]
    table = np.zeros(256, dtype=np.int8)
    for config in range(256):
        occupied = [i for i in range(8) if config >> i & 1]
        seen: set[int] = set()
        count = 0
        for start in occupied:
            if start in seen:
                continue
            count += 1
            stack = [start]
            while stack:
                cur = stack.pop()
                if cur in seen:
                    continue
                seen.add(cur)
                stack.extend(j for j in adj[cur] if config >> j & 1 and j not in seen)
        table[config] = count
    return table


_RING_COMPONENTS = _ring_component_table()


def _ring_config(cells: np.ndarray, i: int, j: int) -> int:
    h, w = cells.shape
    config = 0
    for bit, (di, dj) in enumerate(_NEIGHBOR_OFFSETS):
        ni, nj = i + di, j + dj
        if 0 <= ni < h and 0 <= nj < w and cells[ni, nj]:
            config |= 1 << bit
    return config


def _poisson(rng: np.random.Generator, lam: float) -> int:
    """Inverse-transform Poisson draw (normal approximation above the range
    where exp(-lam) is representable)."""
    if lam <= 0:
        return 0
    if lam > 600:
        return max(0, int(round(rng.normal(lam, math.sqrt(lam)))))
    u = rng.random()
    k = 0
    p = math.exp(-lam)
    cum = p
    while u > cum:
        k += 1
        p *= lam / k
        cum += p
    return k


def augment_sand(mask: NodalMask, intensity: float, seed: int) -> NodalMask:
    """Randomize the sand-grain mask while keeping the line structure intact.

    Two disturbances, both scaled by intensity in [0, 1]:

    * local diffusion: each true cell attempts, with probability intensity/2,
      to migrate into a uniformly chosen free 8-neighbor. A move is applied
      only when it cannot split a line: the source's occupied ring must form
      a single connected arc and the target must stay attached to some other
      true cell.
    * spurious grains: Poisson(intensity * true_count * 0.05) extra cells are
      switched on, each 8-adjacent to an existing true cell.

    Consequently the count of connected components never increases.
    """
    if not 0.0 <= intensity <= 1.0:
        raise ValueError("intensity must lie in [0, 1]")
    cells = mask.cells.copy()
    if intensity == 0.0:
        return NodalMask(mask.resolution, cells, mask.quantile, mask.center_radius_norm)

    rng = np.random.default_rng(seed)
    sources = np.argwhere(cells)
    attempts = rng.random(len(sources)) < intensity / 2.0
    targets = rng.integers(0, 8, size=len(sources))
    size = mask.resolution
    for (i, j), move, pickdir in zip(sources, attempts, targets):
        if not move:
            continue
        di, dj = _NEIGHBOR_OFFSETS[pickdir]
        ti, tj = i + di, j + dj
        if not (0 <= ti < size and 0 <= tj < size) or cells[ti, tj]:
            continue
        if _RING_COMPONENTS[_ring_config(cells, i, j)] != 1:
            continue
        cells[i, j] = False
        if _RING_COMPONENTS[_ring_config(cells, ti, tj)] == 0:
            cells[i, j] = True  # target would be stranded, undo
            continue
        cells[ti, tj] = True

    spurious = _poisson(rng, intensity * len(sources) * 0.05)
    if spurious:
        anchors = np.argwhere(cells)
        picks = rng.integers(0, len(anchors), size=spurious)
        dirs = rng.integers(0, 8, size=spurious)
        for (i, j), d in zip(anchors[picks], dirs):
            di, dj = _NEIGHBOR_OFFSETS[d]
            ti, tj = i + di, j + dj
            if 0 <= ti < size and 0 <= tj < size:
                cells[ti, tj] = True

    return NodalMask(mask.resolution, cells, mask.quantile, mask.center_radius_norm)


def augment_filter(img: SandImage, kernel_id: str) -> SandImage:
    """Stylize with one of the predefined 3x3 kernels (replicate padding)."""
    if kernel_id not in FILTER_KERNELS:
        raise ValueError(f"unknown filter kernel {kernel_id!r}")
    kernel = FILTER_KERNELS[kernel_id]
    src = img.pixels.astype(np.float64)
    out = np.empty_like(src)
    for c in range(3):
        out[:, :, c] = ndimage.correlate(src[:, :, c], kernel, mode="nearest")
    return SandImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def luma(pixels: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of an (H, W, 3) array, float64."""
    p = pixels.astype(np.float64)
    return 0.299 * p[:, :, 0] + 0.587 * p[:, :, 1] + 0.114 * p[:, :, 2]


def ssim(a: SandImage, b: SandImage, window: int = 8, stride: int = 4) -> float:
    """Mean structural similarity over luma windows.

    8x8 windows at stride 4, stabilizers C1 = (0.01*255)^2 and
    C2 = (0.03*255)^2, population moments per window. Result lies in [-1, 1];
    ssim(x, x) == 1.0 exactly.
    """
    if a.pixels.shape != b.pixels.shape:
        raise ValueError("ssim requires images of equal dimensions")
    ya = luma(a.pixels)
    yb = luma(b.pixels)
    if ya.shape[0] < window or ya.shape[1] < window:
        raise ValueError(f"images must be at least {window}x{window}")
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    wa = sliding_window_view(ya, (window, window))[::stride, ::stride]
    wb = sliding_window_view(yb, (window, window))[::stride, ::stride]
    mu_a = wa.mean(axis=(2, 3))
    mu_b = wb.mean(axis=(2, 3))
    var_a = (wa * wa).mean(axis=(2, 3)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(2, 3)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(2, 3)) - mu_a * mu_b
    score = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(score.mean())
