"""Subset search: optimal removals, sequences, tolerance, baselines.

The optimal k-removal of a K-stroke glyph keeps the retained subset
whose rendering scores the highest probability for the glyph's own
class.  Sequences evaluate every k = 1 .. K-1 independently (steps
need not be nested), which costs exactly 2^K - 2 scored images per
glyph.  Legibility is the raw posterior for the glyph's own class in
both the optimal and averaged modes, and comparisons are exact on the
computed doubles.

Determinism: subsets are enumerated in increasing numeric bitmask
order, work is chunked in that order, and the reduction (max by
legibility, ties to the smaller bitmask; means over the canonical
concatenation) is independent of chunk size and worker count.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import islice
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import BudgetExceeded, IncompleteSequence, OutOfRange
from .glyphs import GlyphDef
from .legibility import Backend, BackendDescriptor
from .raster import (
    RasterConfig,
    StrokeMask,
    build_stroke_masks,
    composite,
    full_subset,
    render_subset,
)

MAX_STROKES = 62  # bitmasks stay within a machine word for consumers

DEFAULT_BUDGET = 1 << 22  # scored images per glyph before refusing

DEFAULT_BATCH = 256


def evaluation_cost(stroke_count: int) -> int:
    """Scored images needed for a full sequence: 2^K - 2."""
    if not 1 <= stroke_count <= MAX_STROKES:
        raise OutOfRange(
            f"stroke count must be in 1..{MAX_STROKES}, got {stroke_count}"
        )
    return (1 << stroke_count) - 2


def enumerate_subsets(stroke_count: int, removed_count: int) -> Iterator[int]:
    """Retained-stroke bitmasks after removing removed_count strokes.

    Yields every K-bit mask with K - removed_count bits set, in
    strictly increasing numeric order (Gosper's hack).  Note this is
    not the order combinations of indices would give: among 4 strokes
    the pair {0, 3} is mask 9 and sorts after {1, 2} = mask 6.
    """
    if not 1 <= stroke_count <= MAX_STROKES:
        raise OutOfRange(
            f"stroke count must be in 1..{MAX_STROKES}, got {stroke_count}"
        )
    if not 1 <= removed_count <= stroke_count - 1:
        raise OutOfRange(
            f"removed count must be in 1..{stroke_count - 1}, "
            f"got {removed_count}"
        )
    return _gosper(stroke_count, stroke_count - removed_count)


def _gosper(width: int, bits: int) -> Iterator[int]:
    mask = (1 << bits) - 1
    limit = 1 << width
    while mask < limit:
        yield mask
        low = mask & -mask
        ripple = mask + low
        mask = (((ripple ^ mask) >> 2) // low) | ripple


def removed_indices(subset: int, stroke_count: int) -> list[int]:
    """Stroke indices absent from a retained-subset bitmask."""
    return [i for i in range(stroke_count) if not subset >> i & 1]


class FullScore(NamedTuple):
    """Score of the unmodified glyph."""

    legibility: float
    predicted: int
    correct: bool


@dataclass(frozen=True)
class SimplifiedGlyph:
    """Best retained subset for one glyph at one removal count."""

    glyph: GlyphDef
    subset: int
    removed_count: int
    legibility: float
    predicted: int
    correct: bool

    def __post_init__(self) -> None:
        count = self.glyph.stroke_count
        if not 1 <= self.removed_count <= count - 1:
            raise ValueError(
                f"removed count must be in 1..{count - 1}, "
                f"got {self.removed_count}"
            )
        if bin(self.subset).count("1") != count - self.removed_count:
            raise ValueError(
                f"subset {self.subset:#x} does not retain "
                f"{count - self.removed_count} of {count} strokes"
            )
        if not 0.0 <= self.legibility <= 1.0:
            raise ValueError(f"legibility out of [0, 1]: {self.legibility}")

    @property
    def removed(self) -> list[int]:
        return removed_indices(self.subset, self.glyph.stroke_count)


@dataclass(frozen=True)
class RemovalSequence:
    """Optimal (or beam) subsets for every k = 1 .. K-1 of one glyph."""

    steps: tuple[SimplifiedGlyph, ...]
    backend: BackendDescriptor
    exhaustive: bool

    def __post_init__(self) -> None:
        if not self.steps:
            raise IncompleteSequence("sequence has no steps")
        glyph = self.steps[0].glyph
        count = glyph.stroke_count
        if len(self.steps) != count - 1:
            raise IncompleteSequence(
                f"sequence must hold {count - 1} steps for a "
                f"{count}-stroke glyph, got {len(self.steps)}"
            )
        for i, step in enumerate(self.steps):
            if step.glyph is not glyph and step.glyph != glyph:
                raise IncompleteSequence("steps mix different glyphs")
            if step.removed_count != i + 1:
                raise IncompleteSequence(
                    f"step {i} removes {step.removed_count} strokes, "
                    f"expected {i + 1}"
                )

    @property
    def glyph(self) -> GlyphDef:
        return self.steps[0].glyph


@dataclass(frozen=True)
class ToleranceReport:
    """Sum of per-k optimal legibility; in [0, K-1] by construction."""

    class_label: int
    stroke_count: int
    tolerance: float
    per_k: tuple[float, ...]

    def __post_init__(self) -> None:
        if abs(self.tolerance - math.fsum(self.per_k)) > 1e-9:
            raise ValueError("tolerance disagrees with its per-k terms")
        if not -1e-9 <= self.tolerance <= self.stroke_count - 1 + 1e-9:
            raise ValueError(
                f"tolerance {self.tolerance} outside [0, {self.stroke_count - 1}]"
            )


class RandomRemovalResult(NamedTuple):
    """Exact mean (and extremes) of legibility over all k-removals."""

    removed_count: int
    mean: float
    minimum: float
    maximum: float


def _chunked(it: Iterator[int], size: int) -> Iterator[list[int]]:
    while True:
        block = list(islice(it, size))
        if not block:
            return
        yield block


def _ordered_map(worker, items: Iterator, threads: int) -> Iterator:
    """Apply worker to items, yielding results in submission order.

    Bounded lookahead keeps memory flat; output order is independent
    of scheduling, so downstream reductions are deterministic.
    """
    if threads <= 1:
        for item in items:
            yield worker(item)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        window: deque = deque()
        for item in items:
            window.append(pool.submit(worker, item))
            while len(window) > threads * 2:
                yield window.popleft().result()
        while window:
            yield window.popleft().result()


class _ChunkScores(NamedTuple):
    subsets: list[int]
    legibility: np.ndarray
    predicted: np.ndarray


def _score_subsets(
    chunk: list[int],
    masks: Sequence[StrokeMask],
    cfg: RasterConfig,
    backend: Backend,
    class_id: int,
) -> _ChunkScores:
    images = [composite(masks, subset, cfg) for subset in chunk]
    scored = backend.score_batch(images)
    legs = np.fromiter(
        (float(cp.probs[class_id]) for cp in scored),
        dtype=np.float64,
        count=len(scored),
    )
    preds = np.fromiter(
        (cp.predicted for cp in scored), dtype=np.int64, count=len(scored)
    )
    return _ChunkScores(chunk, legs, preds)


def _scan(
    glyph: GlyphDef,
    removed_count: int,
    backend: Backend,
    cfg: RasterConfig,
    masks: Sequence[StrokeMask],
    threads: int,
    batch_size: int,
    keep_values: bool,
):
    class_id = backend.class_id(glyph.class_label)
    chunks = _chunked(
        enumerate_subsets(glyph.stroke_count, removed_count), batch_size
    )

    def worker(chunk: list[int]) -> _ChunkScores:
        return _score_subsets(chunk, masks, cfg, backend, class_id)

    best: tuple[float, int, int] | None = None  # (leg, subset, predicted)
    kept: list[np.ndarray] = []
    for scores in _ordered_map(worker, chunks, threads):
        # first argmax = smallest subset within the ascending chunk
        i = int(np.argmax(scores.legibility))
        cand = (
            float(scores.legibility[i]),
            scores.subsets[i],
            int(scores.predicted[i]),
        )
        if (
            best is None
            or cand[0] > best[0]
            or (cand[0] == best[0] and cand[1] < best[1])
        ):
            best = cand
        if keep_values:
            kept.append(scores.legibility)
    values = np.concatenate(kept) if keep_values else None
    return best, values


def score_full_glyph(
    glyph: GlyphDef,
    backend: Backend,
    cfg: RasterConfig,
    *,
    masks: Sequence[StrokeMask] | None = None,
) -> FullScore:
    """Score the unmodified glyph against its own class."""
    class_id = backend.class_id(glyph.class_label)
    everything = full_subset(glyph.stroke_count)
    if masks is None:
        image = render_subset(glyph, everything, cfg)
    else:
        image = composite(masks, everything, cfg)
    scored = backend.score_batch([image])[0]
    legibility = float(scored.probs[class_id])
    return FullScore(legibility, scored.predicted, scored.predicted == class_id)


def optimal_removal(
    glyph: GlyphDef,
    removed_count: int,
    backend: Backend,
    cfg: RasterConfig,
    *,
    masks: Sequence[StrokeMask] | None = None,
    threads: int = 1,
    batch_size: int = DEFAULT_BATCH,
) -> SimplifiedGlyph:
    """Exhaustive best k-removal: scores all C(K, k) retained subsets."""
    if masks is None:
        masks = build_stroke_masks(glyph, cfg)
    class_id = backend.class_id(glyph.class_label)
    best, _ = _scan(
        glyph, removed_count, backend, cfg, masks, threads, batch_size, False
    )
    legibility, subset, predicted = best
    return SimplifiedGlyph(
        glyph, subset, removed_count, legibility, predicted,
        predicted == class_id,
    )


def optimal_sequence(
    glyph: GlyphDef,
    backend: Backend,
    cfg: RasterConfig,
    *,
    masks: Sequence[StrokeMask] | None = None,
    budget: int = DEFAULT_BUDGET,
    threads: int = 1,
    batch_size: int = DEFAULT_BATCH,
) -> RemovalSequence:
    """Independent exhaustive optima for every k = 1 .. K-1.

    Refuses with BudgetExceeded when 2^K - 2 exceeds the budget; use
    beam_approximate_sequence for glyphs past the exhaustive range.
    """
    count = glyph.stroke_count
    if count < 2:
        raise OutOfRange("sequences need a glyph with at least 2 strokes")
    cost = evaluation_cost(count)
    if cost > budget:
        raise BudgetExceeded(
            f"{count}-stroke glyph needs {cost} scored images, over the "
            f"budget of {budget}; raise the budget or use the beam search"
        )
    if masks is None:
        masks = build_stroke_masks(glyph, cfg)
    steps = tuple(
        optimal_removal(
            glyph, k, backend, cfg,
            masks=masks, threads=threads, batch_size=batch_size,
        )
        for k in range(1, count)
    )
    return RemovalSequence(steps, backend.descriptor, exhaustive=True)


def random_removal_average(
    glyph: GlyphDef,
    removed_count: int,
    backend: Backend,
    cfg: RasterConfig,
    *,
    masks: Sequence[StrokeMask] | None = None,
    budget: int = DEFAULT_BUDGET,
    threads: int = 1,
    batch_size: int = DEFAULT_BATCH,
) -> RandomRemovalResult:
    """Exact mean legibility over all C(K, k) subsets, no sampling.

    The baseline for comparing optimal removal against uninformed
    removal; by construction it never exceeds the optimal value for
    the same glyph and k.
    """
    count = glyph.stroke_count
    cases = math.comb(count, removed_count)
    if cases > budget:
        raise BudgetExceeded(
            f"averaging k={removed_count} over a {count}-stroke glyph "
            f"needs {cases} scored images, over the budget of {budget}"
        )
    if masks is None:
        masks = build_stroke_masks(glyph, cfg)
    _, values = _scan(
        glyph, removed_count, backend, cfg, masks, threads, batch_size, True
    )
    # mean over the canonical-order concatenation: identical array for
    # any chunking, so the reduction is schedule-independent
    mean = float(values.sum()) / values.size
    return RandomRemovalResult(
        removed_count, mean, float(values.min()), float(values.max())
    )


def removal_tolerance(sequence: RemovalSequence) -> ToleranceReport:
    """Total legibility retained across a glyph's removal sequence."""
    per_k = tuple(step.legibility for step in sequence.steps)
    glyph = sequence.glyph
    return ToleranceReport(
        glyph.class_label, glyph.stroke_count, math.fsum(per_k), per_k
    )


def beam_approximate_sequence(
    glyph: GlyphDef,
    beam_width: int,
    backend: Backend,
    cfg: RasterConfig,
    *,
    masks: Sequence[StrokeMask] | None = None,
    threads: int = 1,
    batch_size: int = DEFAULT_BATCH,
) -> RemovalSequence:
    """Beam search over removal levels, clearly labeled approximate.

    Level k scores every single-stroke removal from the surviving beam
    of level k-1 (deduplicated, canonical order) and keeps the best
    beam_width subsets.  Width 1 is greedy nested removal; a width of
    at least C(K, floor(K/2)) reproduces the exhaustive optimum at
    every k because no truncation ever occurs.
    """
    if beam_width < 1:
        raise OutOfRange(f"beam width must be >= 1, got {beam_width}")
    count = glyph.stroke_count
    if count < 2:
        raise OutOfRange("sequences need a glyph with at least 2 strokes")
    if masks is None:
        masks = build_stroke_masks(glyph, cfg)
    class_id = backend.class_id(glyph.class_label)

    def worker(chunk: list[int]) -> _ChunkScores:
        return _score_subsets(chunk, masks, cfg, backend, class_id)

    beam = [full_subset(count)]
    steps = []
    for k in range(1, count):
        seen = {
            subset & ~(1 << i)
            for subset in beam
            for i in range(count)
            if subset >> i & 1
        }
        candidates = sorted(seen)
        legs = []
        preds = []
        for scores in _ordered_map(
            worker, _chunked(iter(candidates), batch_size), threads
        ):
            legs.append(scores.legibility)
            preds.append(scores.predicted)
        legibility = np.concatenate(legs)
        predicted = np.concatenate(preds)
        # stable sort on descending legibility keeps ascending-mask
        # order among ties, the same rule the exhaustive scan uses
        order = np.argsort(-legibility, kind="stable")
        top = int(order[0])
        steps.append(
            SimplifiedGlyph(
                glyph,
                candidates[top],
                k,
                float(legibility[top]),
                int(predicted[top]),
                int(predicted[top]) == class_id,
            )
        )
        beam = [candidates[int(i)] for i in order[:beam_width]]
    return RemovalSequence(tuple(steps), backend.descriptor, exhaustive=False)
