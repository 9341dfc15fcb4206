"""Command-line pipeline.

Subcommands: corpus (inspect and pin an input corpus), simplify
(optimal removal sequences and the full report), baseline (exact
random-removal averages), render (one subset to an image file),
protocol-check (handshake and probe an external classifier).

Options can come from a TOML config file (--config); explicit flags
win over the file, the file wins over built-in defaults.  Exit codes:
0 success, 2 bad configuration or input, 3 external backend failure,
4 scoring budget exceeded.

Long runs stream one JSON line per finished (glyph, k) into the output
directory; rerunning resumes from those lines and, because scoring is
deterministic, a resumed run emits byte-identical reports.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import analysis
from .errors import (
    BackendFailure,
    BudgetExceeded,
    ConfigError,
    StrokeSimpError,
)
from .glyphs import (
    Corpus,
    GlyphDef,
    corpus_hash,
    filter_corpus_cjk,
    glyph_files,
    load_glyphs,
    parse_glyph_svg,
    stroke_count_histogram,
)
from .legibility import (
    DEFAULT_BLUR_RADIUS,
    DEFAULT_FEATURE_SIDE,
    DEFAULT_TEMPERATURE,
    Backend,
    ExternalBackend,
    build_prototype_classifier,
    parse_codepoint_token,
)
from .raster import (
    RasterConfig,
    build_stroke_masks,
    full_subset,
    render_subset,
    write_pgm,
    write_png,
)
from .search import (
    DEFAULT_BATCH,
    DEFAULT_BUDGET,
    FullScore,
    RandomRemovalResult,
    RemovalSequence,
    SimplifiedGlyph,
    beam_approximate_sequence,
    evaluation_cost,
    optimal_removal,
    random_removal_average,
    removal_tolerance,
    score_full_glyph,
)

BASELINE_SCHEMA = "strokesimp-baseline/1"

_DEFAULTS: dict = {
    "input": None,
    "classifier": "prototype",
    "k": None,
    "beam": 0,
    "budget": DEFAULT_BUDGET,
    "threads": 1,
    "batch": DEFAULT_BATCH,
    "out": "out",
    "format": "both",
    "grid": 64,
    "supersample": 4,
    "stroke_width": 0.055,
    "flatten_tol": 0.1,
    "strokes": [],
    "with_baseline": False,
    "codepoint_from_filename": False,
    "seed": 0,
    "feature_side": DEFAULT_FEATURE_SIDE,
    "blur_radius": DEFAULT_BLUR_RADIUS,
    "temperature": DEFAULT_TEMPERATURE,
    "timeout": 60.0,
    "top_n": 5,
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved options for the compute subcommands."""

    input: Path
    classifier: str
    external_command: str | None
    k: int | None
    beam: int
    budget: int
    threads: int
    batch: int
    out: Path
    format: str
    raster: RasterConfig
    strokes: tuple[int, ...]
    with_baseline: bool
    codepoint_from_filename: bool
    seed: int
    feature_side: int
    blur_radius: float
    temperature: float
    timeout: float
    top_n: int


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    unknown = set(data) - set(_DEFAULTS)
    if unknown:
        raise ConfigError(
            f"config file {path}: unknown keys {sorted(unknown)}"
        )
    return data


def _merge(args: argparse.Namespace) -> dict:
    merged = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        merged.update(_load_config_file(config_path))
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and value != []:
            merged[key] = value
    return merged


def _require_int(merged: dict, key: str, minimum: int) -> int:
    value = merged[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _require_float(merged: dict, key: str) -> float:
    value = merged[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _resolve(args: argparse.Namespace) -> RunConfig:
    merged = _merge(args)

    if not merged["input"]:
        raise ConfigError("an input path is required (--input or config)")

    classifier = merged["classifier"]
    external_command = None
    if classifier == "prototype":
        pass
    elif isinstance(classifier, str) and classifier.startswith("external:"):
        external_command = classifier[len("external:") :].strip()
        if not external_command:
            raise ConfigError("external classifier command is empty")
        classifier = "external"
    else:
        raise ConfigError(
            f"classifier must be 'prototype' or 'external:COMMAND', "
            f"got {classifier!r}"
        )

    k = merged["k"]
    if k is not None:
        if isinstance(k, bool) or not isinstance(k, int) or k < 1:
            raise ConfigError(f"k must be a positive integer, got {k!r}")

    strokes = merged["strokes"]
    if not isinstance(strokes, (list, tuple)) or any(
        isinstance(s, bool) or not isinstance(s, int) for s in strokes
    ):
        raise ConfigError(f"strokes must be a list of integers, got {strokes!r}")
    if any(s < 2 for s in strokes):
        raise ConfigError("stroke-count groups must be >= 2 strokes")

    fmt = merged["format"]
    if fmt not in ("json", "csv", "both"):
        raise ConfigError(f"format must be json, csv, or both, got {fmt!r}")

    timeout = _require_float(merged, "timeout")
    if timeout <= 0:
        raise ConfigError(f"timeout must be > 0, got {timeout}")

    try:
        raster = RasterConfig(
            grid=_require_int(merged, "grid", 8),
            supersample=_require_int(merged, "supersample", 1),
            stroke_width=_require_float(merged, "stroke_width"),
            flatten_tol=_require_float(merged, "flatten_tol"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    return RunConfig(
        input=Path(merged["input"]),
        classifier=classifier,
        external_command=external_command,
        k=k,
        beam=_require_int(merged, "beam", 0),
        budget=_require_int(merged, "budget", 1),
        threads=_require_int(merged, "threads", 1),
        batch=_require_int(merged, "batch", 1),
        out=Path(merged["out"]),
        format=fmt,
        raster=raster,
        strokes=tuple(sorted(set(strokes))),
        with_baseline=bool(merged["with_baseline"]),
        codepoint_from_filename=bool(merged["codepoint_from_filename"]),
        seed=_require_int(merged, "seed", 0),
        feature_side=_require_int(merged, "feature_side", 1),
        blur_radius=_require_float(merged, "blur_radius"),
        temperature=_require_float(merged, "temperature"),
        timeout=timeout,
        top_n=_require_int(merged, "top_n", 1),
    )


def _load_corpus(rc: RunConfig) -> tuple[Corpus, int]:
    try:
        glyphs = load_glyphs(
            rc.input, codepoint_from_filename=rc.codepoint_from_filename
        )
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    corpus = filter_corpus_cjk(glyphs)
    if len(corpus) == 0:
        raise ConfigError(f"no CJK glyphs found under {rc.input}")
    return corpus, len(glyphs) - len(corpus)


def _make_backend(rc: RunConfig, corpus: Corpus) -> Backend:
    if rc.classifier == "external":
        return ExternalBackend.start(
            rc.external_command, grid=rc.raster.grid, timeout=rc.timeout
        )
    try:
        return build_prototype_classifier(
            corpus,
            rc.raster,
            feature_side=rc.feature_side,
            blur_radius=rc.blur_radius,
            temperature=rc.temperature,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _select_targets(rc: RunConfig, corpus: Corpus) -> list[GlyphDef]:
    targets = [g for g in corpus.glyphs if g.stroke_count >= 2]
    single = len(corpus) - len(targets)
    if single:
        print(
            f"note: skipping {single} single-stroke glyph(s)", file=sys.stderr
        )
    if rc.strokes:
        targets = [g for g in targets if g.stroke_count in rc.strokes]
    if not targets:
        raise ConfigError("no glyphs match the requested stroke counts")
    return targets


class _Checkpoint:
    """Append-only JSONL of finished work units, keyed (codepoint, k).

    Torn trailing lines from an interrupted run are skipped on load;
    duplicate keys keep the latest line.
    """

    def __init__(self, path: Path, fields: tuple[str, ...]) -> None:
        self.path = path
        self.fields = fields
        self.records: dict[tuple[int, int], dict] = {}
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if not isinstance(rec, dict):
                    continue
                if any(f not in rec for f in ("codepoint", "k", *fields)):
                    continue
                self.records[(rec["codepoint"], rec["k"])] = rec

    def get(self, codepoint: int, k: int) -> dict | None:
        return self.records.get((codepoint, k))

    def add(self, rec: dict) -> None:
        self.records[(rec["codepoint"], rec["k"])] = rec
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            fh.flush()


def _step_record(step: SimplifiedGlyph, labels: tuple[int, ...]) -> dict:
    return {
        "codepoint": step.glyph.class_label,
        "k": step.removed_count,
        "subset": step.subset,
        "legibility": step.legibility,
        "predicted": labels[step.predicted],
        "correct": step.correct,
    }


def _budget_check(rc: RunConfig, glyph: GlyphDef) -> None:
    count = glyph.stroke_count
    if rc.k is not None:
        cost = math.comb(count, rc.k)
    else:
        cost = evaluation_cost(count)
    if cost > rc.budget:
        raise BudgetExceeded(
            f"U+{glyph.class_label:04X} ({count} strokes) needs {cost} "
            f"scored images, over the budget of {rc.budget}; raise "
            f"--budget or use --beam"
        )


def cmd_corpus(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    corpus, dropped = _load_corpus(rc)
    hist = stroke_count_histogram(corpus.glyphs)
    digest = corpus_hash(corpus.glyphs)

    print("strokes  glyphs")
    for count, n in hist.items():
        print(f"{count:7d}  {n:6d}")
    print(f"total: {len(corpus)} glyphs ({dropped} dropped outside CJK)")
    print(f"hash: {digest}")

    by_strokes: dict[str, list[int]] = {}
    for g in corpus.glyphs:
        by_strokes.setdefault(str(g.stroke_count), []).append(g.class_label)
    manifest = {
        "schema": "strokesimp-corpus/1",
        "count": len(corpus),
        "hash": digest,
        "stroke_counts": {str(c): n for c, n in hist.items()},
        "by_strokes": by_strokes,
    }
    out = Path(args.manifest_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    print(f"manifest: {out}")
    return 0


def _compute_steps(
    rc: RunConfig,
    glyph: GlyphDef,
    ks: list[int],
    backend: Backend,
    ck: _Checkpoint,
) -> None:
    """Ensure checkpoint lines exist for k=0 and every requested k."""
    cp = glyph.class_label
    labels = backend.descriptor.class_labels
    needed = [k for k in ks if ck.get(cp, k) is None]
    if ck.get(cp, 0) is None or needed:
        masks = build_stroke_masks(glyph, rc.raster)
        if ck.get(cp, 0) is None:
            fs = score_full_glyph(glyph, backend, rc.raster, masks=masks)
            ck.add(
                {
                    "codepoint": cp,
                    "k": 0,
                    "subset": full_subset(glyph.stroke_count),
                    "legibility": fs.legibility,
                    "predicted": labels[fs.predicted],
                    "correct": fs.correct,
                }
            )
        if needed and rc.beam > 0:
            seq = beam_approximate_sequence(
                glyph, rc.beam, backend, rc.raster,
                masks=masks, threads=rc.threads, batch_size=rc.batch,
            )
            for step in seq.steps:
                if step.removed_count in needed:
                    ck.add(_step_record(step, labels))
        else:
            for k in needed:
                step = optimal_removal(
                    glyph, k, backend, rc.raster,
                    masks=masks, threads=rc.threads, batch_size=rc.batch,
                )
                ck.add(_step_record(step, labels))


def _replay_step(
    glyph: GlyphDef, rec: dict, backend: Backend
) -> SimplifiedGlyph:
    predicted = backend.class_id(rec["predicted"])
    return SimplifiedGlyph(
        glyph,
        rec["subset"],
        rec["k"],
        rec["legibility"],
        predicted,
        rec["correct"],
    )


def cmd_simplify(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    corpus, dropped = _load_corpus(rc)
    backend = _make_backend(rc, corpus)
    try:
        return _run_simplify(rc, corpus, dropped, backend)
    finally:
        backend.close()


def _run_simplify(
    rc: RunConfig, corpus: Corpus, dropped: int, backend: Backend
) -> int:
    targets = _select_targets(rc, corpus)
    rc.out.mkdir(parents=True, exist_ok=True)
    ck = _Checkpoint(
        rc.out / "steps.jsonl",
        ("subset", "legibility", "predicted", "correct"),
    )
    bk = None
    if rc.with_baseline:
        bk = _Checkpoint(rc.out / "baseline.jsonl", ("mean", "min", "max"))

    labels = backend.descriptor.class_labels
    sequences: dict[int, RemovalSequence] = {}
    fulls: dict[int, FullScore] = {}
    baselines: dict[int, list[RandomRemovalResult]] = {}
    glyph_dicts: list[dict] = []

    for i, glyph in enumerate(targets):
        cp = glyph.class_label
        count = glyph.stroke_count
        if rc.k is not None and rc.k > count - 1:
            raise ConfigError(
                f"--k {rc.k} is out of range for U+{cp:04X} ({count} strokes)"
            )
        ks = [rc.k] if rc.k is not None else list(range(1, count))
        if rc.beam == 0:
            _budget_check(rc, glyph)
        print(
            f"[{i + 1}/{len(targets)}] U+{cp:04X} K={count}", file=sys.stderr
        )
        _compute_steps(rc, glyph, ks, backend, ck)
        if bk is not None:
            for k in ks:
                if bk.get(cp, k) is None:
                    cases = math.comb(count, k)
                    if cases > rc.budget:
                        raise BudgetExceeded(
                            f"baseline k={k} for U+{cp:04X} needs {cases} "
                            f"scored images, over the budget of {rc.budget}"
                        )
                    r = random_removal_average(
                        glyph, k, backend, rc.raster,
                        budget=rc.budget, threads=rc.threads,
                        batch_size=rc.batch,
                    )
                    bk.add(
                        {
                            "codepoint": cp,
                            "k": k,
                            "mean": r.mean,
                            "min": r.minimum,
                            "max": r.maximum,
                        }
                    )
            baselines[cp] = [
                RandomRemovalResult(
                    k, bk.get(cp, k)["mean"], bk.get(cp, k)["min"],
                    bk.get(cp, k)["max"],
                )
                for k in ks
            ]

        full_rec = ck.get(cp, 0)
        fulls[cp] = FullScore(
            full_rec["legibility"],
            backend.class_id(full_rec["predicted"]),
            full_rec["correct"],
        )
        steps = [_replay_step(glyph, ck.get(cp, k), backend) for k in ks]
        if rc.k is None:
            seq = RemovalSequence(
                tuple(steps), backend.descriptor, exhaustive=(rc.beam == 0)
            )
            sequences[cp] = seq
            glyph_dicts.append(
                analysis.glyph_entry(
                    seq, removal_tolerance(seq), backend.descriptor
                )
            )
        else:
            glyph_dicts.append(
                {
                    "codepoint": cp,
                    "K": count,
                    "tolerance": None,
                    "steps": [
                        analysis.step_entry(s, backend.descriptor)
                        for s in steps
                    ],
                }
            )

    curves = []
    fully = []
    rankings = []
    pixels = []
    mis: list[tuple[int, int]] = []
    sheets: list[Path] = []
    if rc.k is None:
        by_count: dict[int, list[int]] = {}
        for cp in sequences:
            by_count.setdefault(sequences[cp].glyph.stroke_count, []).append(cp)
        masks_cache: dict[int, tuple] = {}

        def masks_of(label: int):
            if label not in masks_cache:
                masks_cache[label] = build_stroke_masks(
                    corpus.by_label(label), rc.raster
                )
            return masks_cache[label]

        for count in sorted(by_count):
            members = sorted(by_count[count])
            usable = [cp for cp in members if fulls[cp].correct]
            mis.append((count, len(members) - len(usable)))
            seqs = [sequences[cp] for cp in usable]
            if seqs:
                base_map = (
                    {cp: baselines[cp] for cp in usable}
                    if rc.with_baseline
                    else None
                )
                curves.append(analysis.aggregate_curves(seqs, count, base_map))
                fully.append(
                    (
                        count,
                        [
                            (k, analysis.proportion_fully_legible(seqs, k))
                            for k in range(1, count)
                        ],
                    )
                )
                tols = [removal_tolerance(s) for s in seqs]
                rankings.append(
                    (
                        count,
                        analysis.tolerance_ranking(
                            tols, min(rc.top_n, len(tols))
                        ),
                    )
                )
                pixels.append(
                    analysis.aggregate_pixel_curves(
                        [
                            analysis.pixel_curve(
                                s, masks_of(s.glyph.class_label), rc.raster
                            )
                            for s in seqs
                        ],
                        count,
                    )
                )
            sheet = analysis.export_sequence_sheet(
                [sequences[cp] for cp in members],
                rc.raster,
                rc.out / f"sheet_k{count}.svg",
                fulls=fulls,
                labels_of=lambda cid: labels[cid],
            )
            sheets.append(sheet)

    params = None
    if rc.classifier == "prototype":
        params = {
            "feature_side": rc.feature_side,
            "blur_radius": rc.blur_radius,
            "temperature": rc.temperature,
        }
    report = analysis.build_report(
        backend=backend.descriptor,
        backend_params=params,
        cfg=rc.raster,
        corpus_count=len(corpus),
        corpus_hash=corpus_hash(corpus.glyphs),
        glyphs=glyph_dicts,
        curves=curves,
        fully_legible=fully,
        rankings=rankings,
        pixel_curves=pixels,
        misclassified_full=mis,
    )
    formats = ("json", "csv") if rc.format == "both" else (rc.format,)
    paths = analysis.emit_report(report, rc.out, formats)

    print(
        f"processed {len(targets)} glyphs over {len(labels)} classes "
        f"({dropped} dropped outside CJK)"
    )
    for name, path in paths.items():
        print(f"{name}: {path}")
    for sheet in sheets:
        print(f"sheet: {sheet}")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    rc = _resolve(args)
    corpus, dropped = _load_corpus(rc)
    backend = _make_backend(rc, corpus)
    try:
        return _run_baseline(rc, corpus, dropped, backend)
    finally:
        backend.close()


def _run_baseline(
    rc: RunConfig, corpus: Corpus, dropped: int, backend: Backend
) -> int:
    targets = _select_targets(rc, corpus)
    rc.out.mkdir(parents=True, exist_ok=True)
    bk = _Checkpoint(rc.out / "baseline.jsonl", ("mean", "min", "max"))

    glyph_blocks = []
    by_count: dict[int, dict[int, list[dict]]] = {}
    for i, glyph in enumerate(targets):
        cp = glyph.class_label
        count = glyph.stroke_count
        if rc.k is not None and rc.k > count - 1:
            raise ConfigError(
                f"--k {rc.k} is out of range for U+{cp:04X} ({count} strokes)"
            )
        ks = [rc.k] if rc.k is not None else list(range(1, count))
        print(
            f"[{i + 1}/{len(targets)}] U+{cp:04X} K={count}", file=sys.stderr
        )
        for k in ks:
            if bk.get(cp, k) is None:
                cases = math.comb(count, k)
                if cases > rc.budget:
                    raise BudgetExceeded(
                        f"baseline k={k} for U+{cp:04X} needs {cases} "
                        f"scored images, over the budget of {rc.budget}"
                    )
                r = random_removal_average(
                    glyph, k, backend, rc.raster,
                    budget=rc.budget, threads=rc.threads, batch_size=rc.batch,
                )
                bk.add(
                    {
                        "codepoint": cp, "k": k, "mean": r.mean,
                        "min": r.minimum, "max": r.maximum,
                    }
                )
        points = [
            {
                "k": k,
                "mean": bk.get(cp, k)["mean"],
                "min": bk.get(cp, k)["min"],
                "max": bk.get(cp, k)["max"],
            }
            for k in ks
        ]
        glyph_blocks.append({"codepoint": cp, "K": count, "points": points})
        by_count.setdefault(count, {})[cp] = points

    curve_blocks = []
    for count in sorted(by_count):
        per_glyph = by_count[count]
        ks = sorted({p["k"] for pts in per_glyph.values() for p in pts})
        points = []
        for k in ks:
            means = [
                next(p["mean"] for p in pts if p["k"] == k)
                for pts in per_glyph.values()
            ]
            points.append(
                {
                    "k": k,
                    "mean": sum(means) / len(means),
                    "min": min(means),
                    "max": max(means),
                }
            )
        curve_blocks.append({"K": count, "points": points})

    doc = {
        "schema": BASELINE_SCHEMA,
        "backend": {
            "kind": backend.descriptor.kind,
            "class_count": backend.descriptor.class_count,
        },
        "raster": {
            "grid": rc.raster.grid,
            "supersample": rc.raster.supersample,
            "stroke_width": rc.raster.stroke_width,
            "flatten_tol": rc.raster.flatten_tol,
        },
        "corpus": {"count": len(corpus), "hash": corpus_hash(corpus.glyphs)},
        "glyphs": glyph_blocks,
        "aggregates": {"curves": curve_blocks},
    }
    out_json = rc.out / "baseline.json"
    out_json.write_text(
        json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    import csv as _csv
    import io as _io

    buf = _io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(["K", "k", "mean", "min", "max"])
    for block in curve_blocks:
        for p in block["points"]:
            writer.writerow([block["K"], p["k"], p["mean"], p["min"], p["max"]])
    out_csv = rc.out / "curves_baseline.csv"
    out_csv.write_text(buf.getvalue(), encoding="utf-8")

    print(
        f"baseline over {len(targets)} glyphs "
        f"({dropped} dropped outside CJK)"
    )
    print(f"baseline: {out_json}")
    print(f"curves_baseline: {out_csv}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    try:
        raster = RasterConfig(
            grid=args.grid if args.grid is not None else 64,
            supersample=args.supersample if args.supersample is not None else 4,
            stroke_width=(
                args.stroke_width if args.stroke_width is not None else 0.055
            ),
            flatten_tol=(
                args.flatten_tol if args.flatten_tol is not None else 0.1
            ),
            ink_polarity=0 if args.on_white else 255,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    path = Path(args.input)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    override = None
    if args.codepoint:
        override = parse_codepoint_token(args.codepoint)
    elif args.codepoint_from_filename:
        files = glyph_files(path)
        if len(files) != 1:
            raise ConfigError("render expects a single SVG file")
        override = int(files[0].stem.split("-", 1)[0], 16)
    glyph = parse_glyph_svg(path.read_bytes(), codepoint=override)

    count = glyph.stroke_count
    subset = full_subset(count)
    if args.remove:
        indices = []
        for token in args.remove.split(","):
            token = token.strip()
            if not token:
                continue
            try:
                indices.append(int(token))
            except ValueError:
                raise ConfigError(f"bad stroke index {token!r}") from None
        if len(set(indices)) != len(indices):
            raise ConfigError("duplicate stroke indices in --remove")
        for idx in indices:
            if not 0 <= idx < count:
                raise ConfigError(
                    f"stroke index {idx} out of range 0..{count - 1}"
                )
            subset &= ~(1 << idx)
        if subset == 0:
            raise ConfigError("cannot remove every stroke")

    image = render_subset(glyph, subset, raster)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".png":
        write_png(image, out)
    elif out.suffix == ".pgm":
        write_pgm(image, out)
    else:
        raise ConfigError(f"output must end in .png or .pgm, got {out.name}")
    kept = bin(subset).count("1")
    print(f"wrote {out} (kept {kept} of {count} strokes)")
    return 0


def cmd_protocol_check(args: argparse.Namespace) -> int:
    grid = args.grid if args.grid is not None else 64
    timeout = args.timeout if args.timeout is not None else 60.0
    with ExternalBackend.start(
        args.command, grid=grid, timeout=timeout
    ) as backend:
        descriptor = backend.descriptor
        print(f"handshake ok: {descriptor.class_count} classes")

        ys, xs = np.mgrid[0:grid, 0:grid]
        center = (grid - 1) / 2.0
        disc = (
            ((ys - center) ** 2 + (xs - center) ** 2) <= (grid / 3.0) ** 2
        ).astype(np.uint8) * 255
        blank = np.zeros((grid, grid), dtype=np.uint8)
        scored = backend.score_batch([disc, blank])
        for name, cp in zip(("disc", "blank"), scored):
            label = descriptor.class_labels[cp.predicted]
            print(
                f"probe {name}: predicted U+{label:04X} "
                f"p={cp.predicted_prob:.4f}"
            )
    print("protocol ok")
    return 0


def _add_raster_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, help="output grid size (default 64)")
    p.add_argument(
        "--supersample", type=int,
        help="subsamples per pixel edge (default 4)",
    )
    p.add_argument(
        "--stroke-width", type=float, dest="stroke_width",
        help="pen diameter as a fraction of the viewbox (default 0.055)",
    )
    p.add_argument(
        "--flatten-tol", type=float, dest="flatten_tol",
        help="curve flattening tolerance in glyph units (default 0.1)",
    )


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="corpus directory, SVG file, or file list")
    p.add_argument("--config", help="TOML config file; flags win over it")
    p.add_argument(
        "--codepoint-from-filename",
        action="store_const", const=True, dest="codepoint_from_filename",
        help="take codepoints from file stems instead of kvg ids",
    )
    _add_raster_flags(p)


def _add_compute_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--classifier",
        help="'prototype' (default) or 'external:COMMAND'",
    )
    p.add_argument(
        "--k", type=int, help="single removal count (default: all k)"
    )
    p.add_argument(
        "--budget", type=int,
        help=f"max scored images per glyph (default {DEFAULT_BUDGET})",
    )
    p.add_argument("--threads", type=int, help="worker threads (default 1)")
    p.add_argument(
        "--batch", type=int,
        help=f"images per scoring batch (default {DEFAULT_BATCH})",
    )
    p.add_argument("--out", help="output directory (default ./out)")
    p.add_argument(
        "--format", choices=("json", "csv", "both"),
        help="report formats to write (default both)",
    )
    p.add_argument(
        "--strokes", type=int, action="append",
        help="restrict to glyphs with this stroke count (repeatable)",
    )
    p.add_argument(
        "--seed", type=int, help="reserved for sampled modes (recorded only)"
    )
    p.add_argument(
        "--feature-side", type=int, dest="feature_side",
        help=f"prototype feature grid (default {DEFAULT_FEATURE_SIDE})",
    )
    p.add_argument(
        "--blur-radius", type=float, dest="blur_radius",
        help=f"prototype blur radius in pixels (default {DEFAULT_BLUR_RADIUS})",
    )
    p.add_argument(
        "--temperature", type=float,
        help=f"prototype softmax temperature (default {DEFAULT_TEMPERATURE})",
    )
    p.add_argument(
        "--timeout", type=float,
        help="external classifier deadline in seconds (default 60)",
    )
    p.add_argument(
        "--top-n", type=int, dest="top_n",
        help="entries in the tolerance ranking extremes (default 5)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strokesimp",
        description=(
            "Simplify multi-stroke characters by removing strokes and "
            "scoring what remains with a legibility classifier."
        ),
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser(
        "corpus", help="inspect an input corpus and write its manifest"
    )
    _add_common_flags(p)
    p.add_argument(
        "--manifest-out", default="corpus-manifest.json",
        help="manifest path (default corpus-manifest.json)",
    )
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser(
        "simplify",
        help="compute optimal removal sequences and the full report",
    )
    _add_common_flags(p)
    _add_compute_flags(p)
    p.add_argument(
        "--beam", type=int,
        help="beam width for approximate search (default 0 = exhaustive)",
    )
    p.add_argument(
        "--with-baseline",
        action="store_const", const=True, dest="with_baseline",
        help="also compute exact random-removal baselines",
    )
    p.set_defaults(func=cmd_simplify)

    p = sub.add_parser(
        "baseline",
        help="compute exact random-removal averages only",
    )
    _add_common_flags(p)
    _add_compute_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("render", help="render one stroke subset to a file")
    p.add_argument("--input", required=True, help="a single glyph SVG file")
    p.add_argument(
        "--remove", help="comma-separated stroke indices to drop"
    )
    p.add_argument("--out", required=True, help="output image (.png or .pgm)")
    p.add_argument(
        "--codepoint", help="codepoint override (U+4E00, 0x4E00, decimal)"
    )
    p.add_argument(
        "--codepoint-from-filename",
        action="store_const", const=True, dest="codepoint_from_filename",
        help="take the codepoint from the file stem",
    )
    p.add_argument(
        "--on-white", action="store_true", dest="on_white",
        help="dark ink on white background instead of ink-high",
    )
    _add_raster_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser(
        "protocol-check",
        help="handshake and probe an external classifier command",
    )
    p.add_argument("command", help="external classifier command line")
    p.add_argument("--grid", type=int, help="image size to send (default 64)")
    p.add_argument(
        "--timeout", type=float, help="response deadline in seconds"
    )
    p.set_defaults(func=cmd_protocol_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BudgetExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except BackendFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StrokeSimpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
