"""Raster rendering of pathway images with optional attention overlays.

Cells become square blocks: padding in a distinct dark shade, events on a
grayscale ramp, and mask values blended in as a warm overlay. Zoomed renders
can annotate cells with their codes once blocks are large enough. Output is
binary PPM; PNG works when Pillow is installed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .pathway import CodeVocabulary

PAD_SHADE = (45, 45, 45)
GRAY_LOW, GRAY_HIGH = 110, 230
OVERLAY_COLOR = (255, 120, 0)
TEXT_COLOR = (0, 0, 0)
ANNOTATION_MIN_BLOCK = 12

# 5x7 glyphs, one int per row, low 5 bits used
_FONT = {
    "0": (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    "1": (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "2": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    "3": (0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E),
    "4": (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    "5": (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    "6": (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    "7": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    "8": (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    "9": (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
    "A": (0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11),
    "B": (0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E),
    "C": (0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E),
    "D": (0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C),
    "E": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F),
    "F": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10),
    "G": (0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F),
    "H": (0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "I": (0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "J": (0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C),
    "K": (0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11),
    "L": (0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F),
    "M": (0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11),
    "N": (0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11),
    "O": (0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "P": (0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10),
    "Q": (0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D),
    "R": (0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11),
    "S": (0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E),
    "T": (0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "U": (0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "V": (0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "W": (0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A),
    "X": (0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11),
    "Y": (0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04),
    "Z": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F),
    "-": (0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00),
    "_": (0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F),
    ":": (0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00),
    ".": (0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C),
    ">": (0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08),
}
_UNKNOWN_GLYPH = (0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F)
GLYPH_W, GLYPH_H = 5, 7


@dataclass
class RenderSpec:
    """What to draw: a cell grid, an optional aligned mask, an optional zoom."""

    grid: np.ndarray
    mask: np.ndarray | None = None
    zoom: tuple[tuple[int, int], tuple[int, int]] | None = None  # (r0, r1), (c0, c1); half-open
    block_size: int = 2
    vocab: CodeVocabulary | None = None
    annotate: bool = True

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        if self.grid.ndim != 2:
            raise DimensionError(f"render grid must be 2D, got shape {self.grid.shape}")
        if self.block_size < 1:
            raise ParameterError(f"block size must be positive, got {self.block_size}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.float64)
            if self.mask.shape != self.grid.shape:
                raise DimensionError(
                    f"mask shape {self.mask.shape} does not match grid {self.grid.shape}"
                )
        if self.zoom is not None:
            (r0, r1), (c0, c1) = self.zoom
            h, w = self.grid.shape
            if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
                raise DimensionError(f"zoom window {self.zoom} outside {h}x{w} grid")


def _draw_text(pixels: np.ndarray, text: str, top: int, left: int, limit_right: int) -> None:
    x = left
    for char in text.upper():
        if x + GLYPH_W > limit_right:
            break
        glyph = _FONT.get(char, _UNKNOWN_GLYPH)
        for gy, row_bits in enumerate(glyph):
            for gx in range(GLYPH_W):
                if row_bits & (1 << (GLYPH_W - 1 - gx)):
                    pixels[top + gy, x + gx] = TEXT_COLOR
        x += GLYPH_W + 1


def render_heatmap(spec: RenderSpec) -> np.ndarray:
    """Rasterize a pathway grid (and mask overlay) to an RGB pixel array."""
    grid = spec.grid
    mask = spec.mask
    if spec.zoom is not None:
        (r0, r1), (c0, c1) = spec.zoom
        grid = grid[r0:r1, c0:c1]
        mask = mask[r0:r1, c0:c1] if mask is not None else None

    top = int(grid.max()) if grid.size else 0
    cells = np.empty(grid.shape + (3,), dtype=np.float64)
    cells[:] = PAD_SHADE
    if top > 0:
        levels = GRAY_LOW + (GRAY_HIGH - GRAY_LOW) * (grid.astype(np.float64) / top)
        event = grid > 0
        for channel in range(3):
            cells[..., channel][event] = levels[event]

    if mask is not None:
        peak = mask.max()
        alpha = (mask / peak) if peak > 0 else np.zeros_like(mask)
        overlay = np.asarray(OVERLAY_COLOR, dtype=np.float64)
        cells = (1.0 - alpha[..., None]) * cells + alpha[..., None] * overlay

    bs = spec.block_size
    pixels = np.repeat(np.repeat(cells, bs, axis=0), bs, axis=1)
    pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)

    if spec.annotate and spec.vocab is not None and bs >= ANNOTATION_MIN_BLOCK:
        for row, col in np.argwhere(grid > 0):
            code = spec.vocab.entry(int(grid[row, col])).code
            _draw_text(
                pixels,
                code,
                top=row * bs + 2,
                left=col * bs + 2,
                limit_right=(col + 1) * bs - 1,
            )
    return pixels


def write_ppm(path, pixels: np.ndarray) -> None:
    """Binary (P6) portable pixmap."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DimensionError(f"pixel array must be H x W x 3, got {pixels.shape}")
    height, width = pixels.shape[:2]
    with open(path, "wb") as handle:
        handle.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        handle.write(pixels.tobytes())


def write_raster(path, pixels: np.ndarray) -> None:
    """Write PPM always; PNG when the filename asks for it and Pillow exists."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise FormatError("PNG output needs Pillow; use a .ppm filename instead") from exc
        Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(path)
        return
    write_ppm(path, pixels)


def parse_zoom(text: str) -> tuple[tuple[int, int], tuple[int, int]]:
    """Parse an 'r0:r1,c0:c1' window."""
    try:
        rows, cols = text.split(",")
        r0, r1 = (int(v) for v in rows.split(":"))
        c0, c1 = (int(v) for v in cols.split(":"))
    except ValueError as exc:
        raise ParameterError(f"zoom must look like r0:r1,c0:c1, got {text!r}") from exc
    return (r0, r1), (c0, c1)
