"""Rasterization of stroke subsets.

Strokes are flattened to polylines by adaptive subdivision, drawn as
round-capped capsules at a supersampled resolution, and box-filtered
down to the output grid.  Per-stroke masks are cached so the 2^K - 2
subsets of a glyph share stroke rendering work; subsets composite by
pixelwise max.

Compositing from masks and rendering a subset directly agree to the
byte because both routes share the same integer coverage counts and
the count -> alpha quantization is monotone: max-then-quantize equals
quantize-then-max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptySubset, ZeroInkFull
from .glyphs import GlyphDef, StrokePath

# recursion guard for adaptive flattening; tolerance halves the error
# roughly 4x per split so this is never reached in practice
_MAX_SPLIT_DEPTH = 48


@dataclass(frozen=True)
class RasterConfig:
    """Rendering parameters.

    stroke_width is the pen diameter as a fraction of the larger
    viewbox dimension.  flatten_tol is the max chord deviation in
    glyph units.  ink_polarity gives the pixel value of full ink:
    255 draws ink on a 0 background (the scoring convention), 0
    inverts for display on white.
    """

    grid: int = 64
    supersample: int = 4
    stroke_width: float = 0.055
    flatten_tol: float = 0.1
    ink_polarity: int = 255

    def __post_init__(self) -> None:
        if self.grid < 8:
            raise ValueError(f"grid must be >= 8, got {self.grid}")
        if self.supersample < 1:
            raise ValueError(
                f"supersample must be >= 1, got {self.supersample}"
            )
        if not 0.0 < self.stroke_width < 1.0:
            raise ValueError(
                f"stroke_width must be in (0, 1), got {self.stroke_width}"
            )
        if not self.flatten_tol > 0.0:
            raise ValueError(
                f"flatten_tol must be > 0, got {self.flatten_tol}"
            )
        if self.ink_polarity not in (0, 255):
            raise ValueError(
                f"ink_polarity must be 0 or 255, got {self.ink_polarity}"
            )


@dataclass(frozen=True)
class StrokeMask:
    """Anti-aliased alpha of a single stroke on the output grid."""

    stroke_index: int
    alpha: np.ndarray  # uint8, (grid, grid), read-only


@dataclass(frozen=True)
class GlyphImage:
    """A rendered stroke subset plus the bitmask that produced it."""

    pixels: np.ndarray  # uint8, (grid, grid), read-only
    subset: int

    def __post_init__(self) -> None:
        if self.subset <= 0:
            raise EmptySubset(
                f"subset must have at least one stroke bit set, got {self.subset}"
            )
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise ValueError(f"pixels must be square, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {self.pixels.dtype}")


def full_subset(stroke_count: int) -> int:
    """Bitmask retaining every stroke of a K-stroke glyph."""
    if stroke_count < 1:
        raise ValueError(f"stroke count must be >= 1, got {stroke_count}")
    return (1 << stroke_count) - 1


def _point_segment_dist(px, py, ax, ay, bx, by) -> float:
    dx = bx - ax
    dy = by - ay
    length2 = dx * dx + dy * dy
    if length2 <= 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / length2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _deviation(seg) -> float:
    # control distance from the chord bounds the curve's distance from
    # it (the curve lies in the control hull, and distance-to-segment
    # is convex, so the hull's max is at a control point)
    (ax, ay), (bx, by) = seg.p0, seg.p3
    d1 = _point_segment_dist(seg.p1[0], seg.p1[1], ax, ay, bx, by)
    d2 = _point_segment_dist(seg.p2[0], seg.p2[1], ax, ay, bx, by)
    return max(d1, d2)


def _flatten_segment(seg, tol: float, out: list, depth: int) -> None:
    if depth >= _MAX_SPLIT_DEPTH or _deviation(seg) <= tol:
        out.append(seg.p3)
        return
    left, right = seg.split(0.5)
    _flatten_segment(left, tol, out, depth + 1)
    _flatten_segment(right, tol, out, depth + 1)


def flatten_stroke(stroke: StrokePath, tol: float) -> np.ndarray:
    """Flatten a stroke to an (N, 2) float64 polyline in glyph units.

    Deviation from the true curve is at most tol.  Purely recursive
    midpoint subdivision, so the result is deterministic and refining
    tol only ever adds points.
    """
    if not tol > 0.0:
        raise ValueError(f"tolerance must be > 0, got {tol}")
    pts: list[tuple[float, float]] = [stroke.segments[0].p0]
    for seg in stroke.segments:
        _flatten_segment(seg, tol, pts, 0)
    return np.asarray(pts, dtype=np.float64)


def _coverage_counts(
    poly_px: np.ndarray, radius_px: float, grid: int, supersample: int
) -> np.ndarray:
    """Subsample hit counts per output pixel for one capsule chain.

    poly_px is the flattened polyline in output pixel units.  Each
    polyline segment contributes a round-capped capsule of the given
    radius; a subsample counts as covered when its center lies in any
    capsule.  Returns int32 (grid, grid) counts in [0, supersample^2].
    """
    size = grid * supersample
    centers = (np.arange(size, dtype=np.float64) + 0.5) / supersample
    covered = np.zeros((size, size), dtype=bool)
    r2 = radius_px * radius_px

    if len(poly_px) == 1:
        starts = poly_px
        ends = poly_px
    else:
        starts = poly_px[:-1]
        ends = poly_px[1:]

    for (ax, ay), (bx, by) in zip(starts, ends):
        # clip to the capsule's bounding box; pure optimization, the
        # predicate itself decides coverage
        x0 = min(ax, bx) - radius_px
        x1 = max(ax, bx) + radius_px
        y0 = min(ay, by) - radius_px
        y1 = max(ay, by) + radius_px
        i0 = int(np.searchsorted(centers, x0, "left"))
        i1 = int(np.searchsorted(centers, x1, "right"))
        j0 = int(np.searchsorted(centers, y0, "left"))
        j1 = int(np.searchsorted(centers, y1, "right"))
        if i0 >= i1 or j0 >= j1:
            continue
        xs = centers[i0:i1][None, :]
        ys = centers[j0:j1][:, None]
        dx = bx - ax
        dy = by - ay
        length2 = dx * dx + dy * dy
        if length2 > 0.0:
            t = ((xs - ax) * dx + (ys - ay) * dy) / length2
            np.clip(t, 0.0, 1.0, out=t)
            d2 = (xs - (ax + t * dx)) ** 2 + (ys - (ay + t * dy)) ** 2
        else:
            d2 = (xs - ax) ** 2 + (ys - ay) ** 2
        covered[j0:j1, i0:i1] |= d2 <= r2

    return (
        covered.reshape(grid, supersample, grid, supersample)
        .sum(axis=(1, 3), dtype=np.int32)
    )


def _quantize(counts: np.ndarray, supersample: int) -> np.ndarray:
    # integer rounding, monotone in the count: this is what makes
    # per-stroke masks composable by max without byte drift
    total = supersample * supersample
    alpha = (counts.astype(np.int32) * 255 + total // 2) // total
    return alpha.astype(np.uint8)


def _scale(viewbox: tuple[float, float], cfg: RasterConfig) -> float:
    # uniform scale by the larger dimension preserves aspect; no
    # per-subset recentering, every subset stays in glyph position
    return cfg.grid / max(viewbox)


def _stroke_counts(
    stroke: StrokePath, viewbox: tuple[float, float], cfg: RasterConfig
) -> np.ndarray:
    s = _scale(viewbox, cfg)
    poly = flatten_stroke(stroke, cfg.flatten_tol) * s
    radius = cfg.stroke_width * max(viewbox) * s / 2.0
    return _coverage_counts(poly, radius, cfg.grid, cfg.supersample)


def _apply_polarity(alpha: np.ndarray, cfg: RasterConfig) -> np.ndarray:
    pixels = alpha if cfg.ink_polarity == 255 else 255 - alpha
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    pixels.setflags(write=False)
    return pixels


def render_stroke_mask(
    stroke: StrokePath, viewbox: tuple[float, float], cfg: RasterConfig
) -> StrokeMask:
    """Render one stroke to its cached alpha mask (polarity-free)."""
    alpha = _quantize(_stroke_counts(stroke, viewbox, cfg), cfg.supersample)
    alpha.setflags(write=False)
    return StrokeMask(stroke.index, alpha)


def build_stroke_masks(glyph: GlyphDef, cfg: RasterConfig) -> tuple[StrokeMask, ...]:
    """Per-stroke masks for a glyph, indexed by stroke order."""
    return tuple(
        render_stroke_mask(s, glyph.viewbox, cfg) for s in glyph.strokes
    )


def _check_subset(subset: int, stroke_count: int) -> None:
    if subset <= 0:
        raise EmptySubset("cannot render an empty stroke subset")
    if subset >> stroke_count:
        raise ValueError(
            f"subset {subset:#x} references strokes beyond index "
            f"{stroke_count - 1}"
        )


def composite(
    masks: tuple[StrokeMask, ...] | list[StrokeMask],
    subset: int,
    cfg: RasterConfig,
) -> GlyphImage:
    """Composite cached stroke masks into a subset image by pixel max."""
    _check_subset(subset, len(masks))
    selected = []
    for i in range(len(masks)):
        if subset >> i & 1:
            if masks[i].stroke_index != i:
                raise ValueError(
                    f"mask list out of order: position {i} holds stroke "
                    f"{masks[i].stroke_index}"
                )
            selected.append(masks[i].alpha)
    if len(selected) == 1:
        ink = selected[0].copy()
    else:
        ink = np.maximum.reduce(selected)
    return GlyphImage(_apply_polarity(ink, cfg), subset)


def render_subset(glyph: GlyphDef, subset: int, cfg: RasterConfig) -> GlyphImage:
    """Render a stroke subset in a single pass, without cached masks.

    Agrees byte-for-byte with compositing the per-stroke masks: the
    subsample counts are maxed before the one monotone quantization.
    """
    _check_subset(subset, glyph.stroke_count)
    total: np.ndarray | None = None
    for i, stroke in enumerate(glyph.strokes):
        if not subset >> i & 1:
            continue
        counts = _stroke_counts(stroke, glyph.viewbox, cfg)
        total = counts if total is None else np.maximum(total, counts)
    alpha = _quantize(total, cfg.supersample)
    return GlyphImage(_apply_polarity(alpha, cfg), subset)


def ink_proportion(
    image: GlyphImage, full: GlyphImage, threshold: int = 128
) -> float:
    """Fraction of the full image's ink pixels that survive in image.

    A pixel is ink when its value is >= threshold, so inputs are
    expected in the default polarity (ink high).  Raises ZeroInkFull
    when the reference image has no ink at all.
    """
    if not 0 < threshold <= 255:
        raise ValueError(f"threshold must be in 1..255, got {threshold}")
    if image.pixels.shape != full.pixels.shape:
        raise DimensionMismatch(
            f"image {image.pixels.shape} vs reference {full.pixels.shape}"
        )
    full_ink = int(np.count_nonzero(full.pixels >= threshold))
    if full_ink == 0:
        raise ZeroInkFull("reference image has no ink at this threshold")
    image_ink = int(np.count_nonzero(image.pixels >= threshold))
    return image_ink / full_ink


def write_pgm(image: GlyphImage, path) -> None:
    """Write the image as a binary PGM (P5) file."""
    h, w = image.pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.pixels.tobytes())


def write_png(image: GlyphImage, path) -> None:
    """Write the image as an 8-bit grayscale PNG file."""
    from PIL import Image

    Image.fromarray(np.asarray(image.pixels), mode="L").save(path, format="PNG")
