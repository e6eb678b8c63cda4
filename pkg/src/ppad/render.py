"""Deterministic scatter rasterisation of point sets.

The PNG writer is intentionally minimal (zlib-deflated RGB, filter 0) so
identical inputs always produce identical bytes; the resolved config can
be attached as a tEXt chunk since a PNG cannot begin with anything but
its signature.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .denoiser import GMMWorld
from .operators import LatentState

WORLD_EXTENT = 8.0
BACKGROUND = (255, 255, 255)
PALETTE = (
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
)

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _chunk(tag: bytes, data: bytes) -> bytes:
    return (struct.pack(">I", len(data)) + tag + data
            + struct.pack(">I", zlib.crc32(tag + data)))


def encode_png(rgb: np.ndarray, text: dict[str, str] | None = None) -> bytes:
    """RGB uint8 (H, W, 3) to PNG bytes; optional tEXt metadata after IHDR."""
    h, w, _ = rgb.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + rgb[row].tobytes() for row in range(h))
    out = [_PNG_SIG, _chunk(b"IHDR", ihdr)]
    for key, value in (text or {}).items():
        out.append(_chunk(b"tEXt", key.encode("latin-1") + b"\x00" + value.encode("latin-1")))
    out.append(_chunk(b"IDAT", zlib.compress(raw, 9)))
    out.append(_chunk(b"IEND", b""))
    return b"".join(out)


def render_preview(preview: LatentState, world: GMMWorld, size: int = 256,
                   extent: float = WORLD_EXTENT,
                   text: dict[str, str] | None = None) -> bytes:
    """Rasterise a point batch onto a size x size canvas, coloured by nearest component."""
    if size < 64:
        raise ValueError(f"raster size must be >= 64, got {size}")
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[:] = BACKGROUND
    pts = preview.x
    if len(pts):
        d2 = np.sum((pts[:, None, :] - world.means[None]) ** 2, axis=-1)
        comp = d2.argmin(axis=1)
        # world box [-extent, extent]^2, y up; points outside clamp to the border
        col = np.clip(((pts[:, 0] + extent) / (2 * extent) * (size - 1)).round(), 0, size - 1)
        row = np.clip(((extent - pts[:, 1]) / (2 * extent) * (size - 1)).round(), 0, size - 1)
        radius = max(1, size // 64)
        offsets = [(dr, dc) for dr in range(-radius, radius + 1)
                   for dc in range(-radius, radius + 1)
                   if dr * dr + dc * dc <= radius * radius]
        for r, c, k in zip(row.astype(int), col.astype(int), comp):
            color = PALETTE[int(k) % len(PALETTE)]
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < size and 0 <= cc < size:
                    canvas[rr, cc] = color
    return encode_png(canvas, text)
