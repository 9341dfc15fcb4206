"""Aggregate analyses and report emission.

Turns per-glyph removal sequences into the corpus-level artifacts:
legibility curves (optimal and random baseline), the fraction of
glyphs still fully legible per k, tolerance rankings, ink-proportion
curves against the (K - k) / K reference line, sequence sheets as
standalone SVG, and a versioned JSON report with CSV side files.

Reports are plain JSON-native dicts so that emit followed by parse is
the identity; all numbers are Python floats/ints, never numpy types.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence
from xml.sax.saxutils import escape

from .errors import EmptyInput, SchemaVersionMismatch
from .glyphs import serialize_path_data
from .legibility import BackendDescriptor
from .raster import RasterConfig, StrokeMask, composite, full_subset, ink_proportion
from .search import (
    FullScore,
    RandomRemovalResult,
    RemovalSequence,
    ToleranceReport,
)

REPORT_SCHEMA = "strokesimp-report/1"

# "legibility exactly 1" in doubles: at least 1 - FULL_LEGIBILITY_EPS
FULL_LEGIBILITY_EPS = 1e-4

# red-flag threshold for effectively illegible renderings
LEGIBILITY_FLOOR = 0.01


class CurvePoint(NamedTuple):
    removed_count: int
    mean: float
    minimum: float
    maximum: float


@dataclass(frozen=True)
class CurveSummary:
    """Per-k legibility statistics across glyphs of one stroke count."""

    stroke_count: int
    optimal: tuple[CurvePoint, ...]
    baseline: tuple[CurvePoint, ...] | None


class RankingEntry(NamedTuple):
    rank: int
    class_label: int
    tolerance: float


class RankingResult(NamedTuple):
    full: tuple[RankingEntry, ...]
    top: tuple[RankingEntry, ...]
    bottom: tuple[RankingEntry, ...]


class PixelPoint(NamedTuple):
    removed_count: int
    fraction: float
    reference: float  # (K - k) / K, equal average-share line


@dataclass(frozen=True)
class PixelCurve:
    """Ink retained by one glyph's optimal subsets, k = 0 .. K-1."""

    class_label: int
    stroke_count: int
    points: tuple[PixelPoint, ...]


class PixelSummaryPoint(NamedTuple):
    removed_count: int
    mean: float
    minimum: float
    maximum: float
    reference: float


@dataclass(frozen=True)
class PixelCurveSummary:
    stroke_count: int
    points: tuple[PixelSummaryPoint, ...]


def aggregate_curves(
    results: Sequence[RemovalSequence],
    stroke_count: int,
    baselines: Mapping[int, Sequence[RandomRemovalResult]] | None = None,
) -> CurveSummary:
    """Mean/min/max optimal legibility per k over same-K sequences.

    When baselines are given (per class label, any k order), the
    random-removal curve aggregates each glyph's exact per-k mean the
    same way.
    """
    if not results:
        raise EmptyInput("no sequences to aggregate")
    for seq in results:
        if seq.glyph.stroke_count != stroke_count:
            raise ValueError(
                f"sequence for U+{seq.glyph.class_label:04X} has "
                f"{seq.glyph.stroke_count} strokes, expected {stroke_count}"
            )
    optimal = []
    for k in range(1, stroke_count):
        values = [seq.steps[k - 1].legibility for seq in results]
        optimal.append(
            CurvePoint(k, sum(values) / len(values), min(values), max(values))
        )

    baseline_points = None
    if baselines is not None:
        per_label: list[dict[int, float]] = []
        for seq in results:
            label = seq.glyph.class_label
            if label not in baselines:
                raise ValueError(f"no baseline for U+{label:04X}")
            by_k = {r.removed_count: r.mean for r in baselines[label]}
            missing = set(range(1, stroke_count)) - set(by_k)
            if missing:
                raise ValueError(
                    f"baseline for U+{label:04X} lacks k={sorted(missing)}"
                )
            per_label.append(by_k)
        baseline_points = []
        for k in range(1, stroke_count):
            values = [by_k[k] for by_k in per_label]
            baseline_points.append(
                CurvePoint(k, sum(values) / len(values), min(values), max(values))
            )
        baseline_points = tuple(baseline_points)

    return CurveSummary(stroke_count, tuple(optimal), baseline_points)


def proportion_fully_legible(
    results: Sequence[RemovalSequence],
    removed_count: int,
    epsilon: float = FULL_LEGIBILITY_EPS,
) -> float:
    """Fraction of glyphs whose optimal k-removal scores >= 1 - epsilon."""
    if not results:
        raise EmptyInput("no sequences to aggregate")
    for seq in results:
        if not 1 <= removed_count <= len(seq.steps):
            raise ValueError(
                f"k={removed_count} out of range for "
                f"U+{seq.glyph.class_label:04X}"
            )
    hits = sum(
        1
        for seq in results
        if seq.steps[removed_count - 1].legibility >= 1.0 - epsilon
    )
    return hits / len(results)


def tolerance_ranking(
    reports: Sequence[ToleranceReport], top_n: int
) -> RankingResult:
    """Rank glyphs by tolerance, most tolerant first.

    Ties break toward the lower codepoint.  Returns the full ranking
    plus the top_n head and the bottom_n tail (both in ranking order).
    """
    if not reports:
        raise EmptyInput("no tolerance reports to rank")
    if not 1 <= top_n <= len(reports):
        raise ValueError(
            f"top_n must be in 1..{len(reports)}, got {top_n}"
        )
    ordered = sorted(reports, key=lambda r: (-r.tolerance, r.class_label))
    full = tuple(
        RankingEntry(i + 1, r.class_label, r.tolerance)
        for i, r in enumerate(ordered)
    )
    return RankingResult(full, full[:top_n], full[-top_n:])


def pixel_curve(
    sequence: RemovalSequence,
    masks: Sequence[StrokeMask],
    cfg: RasterConfig,
    threshold: int = 128,
) -> PixelCurve:
    """Ink fraction of each optimal subset relative to the full glyph.

    Includes the k = 0 anchor at exactly 1.  The reference column is
    (K - k) / K, the share a uniform-ink glyph would keep.
    """
    glyph = sequence.glyph
    count = glyph.stroke_count
    full_image = composite(masks, full_subset(count), cfg)
    points = [PixelPoint(0, 1.0, 1.0)]
    for step in sequence.steps:
        frac = ink_proportion(
            composite(masks, step.subset, cfg), full_image, threshold
        )
        k = step.removed_count
        points.append(PixelPoint(k, frac, (count - k) / count))
    return PixelCurve(glyph.class_label, count, tuple(points))


def aggregate_pixel_curves(
    curves: Sequence[PixelCurve], stroke_count: int
) -> PixelCurveSummary:
    """Mean/min/max ink fraction per k over same-K pixel curves."""
    if not curves:
        raise EmptyInput("no pixel curves to aggregate")
    for curve in curves:
        if curve.stroke_count != stroke_count:
            raise ValueError(
                f"curve for U+{curve.class_label:04X} has "
                f"{curve.stroke_count} strokes, expected {stroke_count}"
            )
    points = []
    for k in range(stroke_count):
        values = [c.points[k].fraction for c in curves]
        points.append(
            PixelSummaryPoint(
                k,
                sum(values) / len(values),
                min(values),
                max(values),
                (stroke_count - k) / stroke_count,
            )
        )
    return PixelCurveSummary(stroke_count, tuple(points))


# --- sequence sheets ---

_INK = "#1a1a1a"
_FRAME_OK = "#2e8b57"
_FRAME_BAD = "#c0392b"
_FRAME_NEUTRAL = "#999999"
_SHADE_BAD = "#f6d5d0"
_CAPTION = "#444444"


def export_sequence_sheet(
    sequences: Sequence[RemovalSequence],
    cfg: RasterConfig,
    out_path: str | Path,
    *,
    fulls: Mapping[int, FullScore] | None = None,
    labels_of: Callable[[int], int] | None = None,
    floor: float = LEGIBILITY_FLOOR,
) -> Path:
    """Draw removal sequences as a standalone SVG contact sheet.

    One row per glyph: the original, then each k in order, drawn as
    vector stroke paths (not rasterized).  Frames are green when the
    subset still classifies as the glyph, red with the predicted
    character annotated otherwise; cells whose legibility drops below
    the floor get a shaded background.  labels_of maps backend class
    ids to codepoints for the annotations (identity when omitted).
    """
    if not sequences:
        raise EmptyInput("no sequences to draw")
    if labels_of is None:
        labels_of = lambda cid: cid  # noqa: E731

    cell = max(
        max(seq.glyph.viewbox) for seq in sequences
    )
    pad = cell * 0.08
    caption_h = cell * 0.16
    step_x = cell + pad
    step_y = cell + pad + caption_h
    columns = max(seq.glyph.stroke_count for seq in sequences)
    width = pad + columns * step_x
    height = pad + len(sequences) * step_y

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>\n',
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{width:g}" height="{height:g}" '
        f'viewBox="0 0 {width:g} {height:g}">\n',
        f'<rect width="{width:g}" height="{height:g}" fill="#ffffff"/>\n',
    ]

    for row, seq in enumerate(sequences):
        glyph = seq.glyph
        pen = cfg.stroke_width * max(glyph.viewbox)
        y = pad + row * step_y
        full = fulls.get(glyph.class_label) if fulls else None
        cells: list[tuple[int, float | None, int | None, bool | None]] = [
            (
                full_subset(glyph.stroke_count),
                full.legibility if full else None,
                labels_of(full.predicted) if full else None,
                full.correct if full else None,
            )
        ]
        for step in seq.steps:
            cells.append(
                (
                    step.subset,
                    step.legibility,
                    labels_of(step.predicted),
                    step.correct,
                )
            )
        for col, (subset, legibility, predicted, correct) in enumerate(cells):
            x = pad + col * step_x
            shaded = legibility is not None and legibility < floor
            fill = _SHADE_BAD if shaded else "#ffffff"
            if correct is None:
                frame = _FRAME_NEUTRAL
            else:
                frame = _FRAME_OK if correct else _FRAME_BAD
            parts.append(f'<g transform="translate({x:g},{y:g})">\n')
            parts.append(
                f'<rect width="{cell:g}" height="{cell:g}" fill="{fill}"/>\n'
            )
            for i, stroke in enumerate(glyph.strokes):
                if not subset >> i & 1:
                    continue
                d = serialize_path_data(stroke.segments)
                parts.append(
                    f'<path d="{escape(d)}" fill="none" stroke="{_INK}" '
                    f'stroke-width="{pen:g}" stroke-linecap="round" '
                    f'stroke-linejoin="round"/>\n'
                )
            parts.append(
                f'<rect width="{cell:g}" height="{cell:g}" fill="none" '
                f'stroke="{frame}" stroke-width="1.5"/>\n'
            )
            caption = f"k={col}"
            if legibility is not None:
                caption += f" p={legibility:.3f}"
            parts.append(
                f'<text x="0" y="{cell + caption_h * 0.7:g}" '
                f'font-family="sans-serif" font-size="{caption_h * 0.55:g}" '
                f'fill="{_CAPTION}">{escape(caption)}</text>\n'
            )
            if correct is False and predicted is not None:
                parts.append(
                    f'<text x="{cell:g}" y="{cell + caption_h * 0.7:g}" '
                    f'text-anchor="end" font-family="sans-serif" '
                    f'font-size="{caption_h * 0.55:g}" fill="{_FRAME_BAD}">'
                    f"{escape('→' + chr(predicted))}</text>\n"
                )
            parts.append("</g>\n")

    parts.append("</svg>\n")
    out_path = Path(out_path)
    out_path.write_text("".join(parts), encoding="utf-8")
    return out_path


# --- report document ---


def step_entry(step, descriptor: BackendDescriptor) -> dict:
    """JSON-native record of one removal step."""
    return {
        "k": step.removed_count,
        "removed": [int(i) for i in step.removed],
        "legibility": float(step.legibility),
        "predicted": int(descriptor.class_labels[step.predicted]),
        "correct": bool(step.correct),
    }


def glyph_entry(
    sequence: RemovalSequence,
    tolerance: ToleranceReport | None,
    descriptor: BackendDescriptor,
) -> dict:
    """JSON-native record of one glyph's sequence and tolerance."""
    glyph = sequence.glyph
    return {
        "codepoint": int(glyph.class_label),
        "K": int(glyph.stroke_count),
        "tolerance": None if tolerance is None else float(tolerance.tolerance),
        "steps": [step_entry(s, descriptor) for s in sequence.steps],
    }


def curve_block(summary: CurveSummary) -> dict:
    block = {
        "K": summary.stroke_count,
        "points": [
            {
                "k": p.removed_count,
                "mean": float(p.mean),
                "min": float(p.minimum),
                "max": float(p.maximum),
            }
            for p in summary.optimal
        ],
        "baseline": None,
    }
    if summary.baseline is not None:
        block["baseline"] = [
            {
                "k": p.removed_count,
                "mean": float(p.mean),
                "min": float(p.minimum),
                "max": float(p.maximum),
            }
            for p in summary.baseline
        ]
    return block


def pixel_block(summary: PixelCurveSummary) -> dict:
    return {
        "K": summary.stroke_count,
        "points": [
            {
                "k": p.removed_count,
                "mean": float(p.mean),
                "min": float(p.minimum),
                "max": float(p.maximum),
                "reference": float(p.reference),
            }
            for p in summary.points
        ],
    }


def build_report(
    *,
    backend: BackendDescriptor,
    backend_params: dict | None,
    cfg: RasterConfig,
    corpus_count: int,
    corpus_hash: str,
    glyphs: Sequence[dict],
    curves: Sequence[CurveSummary],
    fully_legible: Sequence[tuple[int, list[tuple[int, float]]]],
    rankings: Sequence[tuple[int, RankingResult]],
    pixel_curves: Sequence[PixelCurveSummary],
    misclassified_full: Sequence[tuple[int, int]],
) -> dict:
    """Assemble the versioned report dict from computed pieces.

    fully_legible: per stroke count, (k, fraction) pairs.
    misclassified_full: per stroke count, how many glyphs were dropped
    from the aggregates because the unmodified glyph already
    misclassifies (their per-glyph records stay in "glyphs").
    """
    backend_block: dict = {
        "kind": backend.kind,
        "class_count": backend.class_count,
    }
    if backend_params:
        backend_block["params"] = dict(backend_params)
    return {
        "schema": REPORT_SCHEMA,
        "backend": backend_block,
        "raster": {
            "grid": cfg.grid,
            "supersample": cfg.supersample,
            "stroke_width": cfg.stroke_width,
            "flatten_tol": cfg.flatten_tol,
        },
        "corpus": {"count": int(corpus_count), "hash": corpus_hash},
        "glyphs": sorted(glyphs, key=lambda g: g["codepoint"]),
        "aggregates": {
            "curves": [curve_block(c) for c in curves],
            "fully_legible": [
                {
                    "K": int(count),
                    "epsilon": FULL_LEGIBILITY_EPS,
                    "points": [
                        {"k": int(k), "fraction": float(f)} for k, f in pairs
                    ],
                }
                for count, pairs in fully_legible
            ],
            "ranking": [
                {
                    "K": int(count),
                    "entries": [
                        {
                            "rank": e.rank,
                            "codepoint": e.class_label,
                            "tolerance": float(e.tolerance),
                        }
                        for e in result.full
                    ],
                }
                for count, result in rankings
            ],
            "pixel_curves": [pixel_block(p) for p in pixel_curves],
            "misclassified_full": [
                {"K": int(count), "count": int(n)}
                for count, n in misclassified_full
            ],
        },
    }


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def emit_report(
    report: dict,
    out_dir: str | Path,
    formats: Sequence[str] = ("json", "csv"),
) -> dict[str, Path]:
    """Write the report files; returns the paths by artifact name.

    json: report.json, the full document.  csv: one file per
    statistic, rows derived from the report itself so the two formats
    can never disagree.  The curve CSVs hold one row per (K, k) with
    k = 1 .. K-1; pixel curve rows include the k = 0 anchor.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    unknown = set(formats) - {"json", "csv"}
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    paths: dict[str, Path] = {}

    if "json" in formats:
        path = out_dir / "report.json"
        path.write_text(
            json.dumps(report, indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        paths["report"] = path

    if "csv" in formats:
        agg = report["aggregates"]

        rows = []
        baseline_rows = []
        for block in agg["curves"]:
            for p in block["points"]:
                rows.append([block["K"], p["k"], p["mean"], p["min"], p["max"]])
            if block.get("baseline"):
                for p in block["baseline"]:
                    baseline_rows.append(
                        [block["K"], p["k"], p["mean"], p["min"], p["max"]]
                    )
        path = out_dir / "curves_optimal.csv"
        _write_csv(path, ["K", "k", "mean", "min", "max"], rows)
        paths["curves_optimal"] = path
        if baseline_rows:
            path = out_dir / "curves_baseline.csv"
            _write_csv(path, ["K", "k", "mean", "min", "max"], baseline_rows)
            paths["curves_baseline"] = path

        rows = [
            [block["K"], p["k"], p["fraction"]]
            for block in agg["fully_legible"]
            for p in block["points"]
        ]
        path = out_dir / "fully_legible.csv"
        _write_csv(path, ["K", "k", "fraction"], rows)
        paths["fully_legible"] = path

        rows = [
            [block["K"], e["rank"], "U+%04X" % e["codepoint"], e["tolerance"]]
            for block in agg["ranking"]
            for e in block["entries"]
        ]
        path = out_dir / "ranking.csv"
        _write_csv(path, ["K", "rank", "codepoint", "tolerance"], rows)
        paths["ranking"] = path

        rows = [
            [block["K"], p["k"], p["mean"], p["min"], p["max"], p["reference"]]
            for block in agg["pixel_curves"]
            for p in block["points"]
        ]
        path = out_dir / "pixel_curves.csv"
        _write_csv(
            path, ["K", "k", "mean", "min", "max", "reference"], rows
        )
        paths["pixel_curves"] = path

    return paths


def parse_report(path: str | Path) -> dict:
    """Read back a report.json, checking the schema version."""
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    schema = report.get("schema") if isinstance(report, dict) else None
    if schema != REPORT_SCHEMA:
        raise SchemaVersionMismatch(
            f"expected schema {REPORT_SCHEMA!r}, found {schema!r}"
        )
    return report
