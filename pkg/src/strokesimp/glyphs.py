"""Glyph ingestion: SVG path parsing, glyph documents, corpus handling.

Supports the KanjiVG conventions: one <path> element per stroke in
stroke order, a 109x109 viewbox, and codepoints embedded in kvg: id
attributes.  The path profile is deliberately narrow: absolute and
relative moveto (first command only), cubics (C/c), smooth cubics
(S/s), and lines (L/l).  Lines become degenerate cubics with collinear
control points at the third points, so every stroke is a connected
chain of cubic segments.  Anything else is a hard error, not a warning:
a glyph outside the profile must not silently render wrong.
"""

from __future__ import annotations

import hashlib
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    EmptyPath,
    MalformedNumber,
    MissingCodepoint,
    NoStrokes,
    OutOfRange,
    UnsupportedCommand,
    XmlError,
)

Point = tuple[float, float]

CJK_FIRST = 0x4E00
CJK_LAST = 0x9FFF

# endpoint connectivity tolerance within a stroke chain
ENDPOINT_TOL = 1e-9

_SEP_RE = re.compile(r"[ \t\r\n,]*")
_NUM_RE = re.compile(
    r"[+-]?(?:[0-9]+(?:\.[0-9]*)?|\.[0-9]+)(?:[eE][+-]?[0-9]+)?"
)
_KVG_ID_RE = re.compile(
    r"kvg:(?:kanji_|StrokePaths_|StrokeNumbers_)?([0-9A-Fa-f]{4,6})"
)


def _is_scalar_codepoint(value: int) -> bool:
    return 0 < value <= 0x10FFFF and not 0xD800 <= value <= 0xDFFF


@dataclass(frozen=True)
class CubicSegment:
    """One cubic Bezier arc: endpoints p0/p3, control points p1/p2."""

    p0: Point
    p1: Point
    p2: Point
    p3: Point

    def split(self, t: float = 0.5) -> tuple["CubicSegment", "CubicSegment"]:
        """de Casteljau subdivision at parameter t."""
        a = _lerp(self.p0, self.p1, t)
        b = _lerp(self.p1, self.p2, t)
        c = _lerp(self.p2, self.p3, t)
        ab = _lerp(a, b, t)
        bc = _lerp(b, c, t)
        mid = _lerp(ab, bc, t)
        return (
            CubicSegment(self.p0, a, ab, mid),
            CubicSegment(mid, bc, c, self.p3),
        )


def _lerp(a: Point, b: Point, t: float) -> Point:
    return (a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)


@dataclass(frozen=True)
class StrokePath:
    """An ordered stroke: a connected chain of cubic segments."""

    index: int
    segments: tuple[CubicSegment, ...]

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"stroke index must be >= 0, got {self.index}")
        if not self.segments:
            raise ValueError("stroke must contain at least one segment")
        for prev, cur in zip(self.segments, self.segments[1:]):
            dx = cur.p0[0] - prev.p3[0]
            dy = cur.p0[1] - prev.p3[1]
            if max(abs(dx), abs(dy)) > ENDPOINT_TOL:
                raise ValueError(
                    f"stroke {self.index}: segment chain is disconnected "
                    f"({prev.p3} -> {cur.p0})"
                )


@dataclass(frozen=True)
class GlyphDef:
    """One character: class label, ordered strokes, source viewbox."""

    class_label: int
    strokes: tuple[StrokePath, ...]
    viewbox: tuple[float, float]

    def __post_init__(self) -> None:
        if not _is_scalar_codepoint(self.class_label):
            raise ValueError(
                f"class label {self.class_label!r} is not a Unicode scalar value"
            )
        if not self.strokes:
            raise ValueError("glyph must contain at least one stroke")
        for i, stroke in enumerate(self.strokes):
            if stroke.index != i:
                raise ValueError(
                    f"stroke order broken: position {i} holds index {stroke.index}"
                )
        w, h = self.viewbox
        if not (w > 0 and h > 0):
            raise ValueError(f"viewbox must be positive, got {self.viewbox}")

    @property
    def stroke_count(self) -> int:
        return len(self.strokes)


@dataclass(frozen=True)
class Corpus:
    """A set of glyphs with unique class labels and dense class ids.

    Glyphs are kept sorted by codepoint; class_index maps codepoint to
    its position in that order, so ids are a bijection onto [0, C).
    """

    glyphs: tuple[GlyphDef, ...]
    class_index: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.glyphs, key=lambda g: g.class_label))
        labels = [g.class_label for g in ordered]
        if len(set(labels)) != len(labels):
            dupes = sorted({x for x in labels if labels.count(x) > 1})
            raise ValueError(
                f"duplicate class labels: {['U+%04X' % d for d in dupes]}"
            )
        object.__setattr__(self, "glyphs", ordered)
        object.__setattr__(
            self, "class_index", {lab: i for i, lab in enumerate(labels)}
        )

    def __len__(self) -> int:
        return len(self.glyphs)

    def __iter__(self):
        return iter(self.glyphs)

    @property
    def class_labels(self) -> tuple[int, ...]:
        return tuple(g.class_label for g in self.glyphs)

    def by_label(self, label: int) -> GlyphDef:
        return self.glyphs[self.class_index[label]]


def parse_path_data(d: str) -> list[CubicSegment]:
    """Parse an SVG path d-attribute into a connected cubic chain.

    Profile: one leading M/m, then any mix of C/c, S/s, L/l with SVG
    argument repetition (extra coordinate pairs after M continue as
    lines).  Lines become degenerate cubics with control points at the
    third points of the chord.  Raises UnsupportedCommand for anything
    else (A, Q, Z, H, V, mid-path moveto), MalformedNumber for broken
    numeric arguments, EmptyPath when no segments result.
    """
    if d is None or not d.strip():
        raise EmptyPath("path data is empty")

    pos = 0
    end = len(d)
    cmd: str | None = None
    current: Point | None = None
    prev_ctrl2: Point | None = None  # reflection basis for S/s
    segments: list[CubicSegment] = []

    def skip_sep(p: int) -> int:
        return _SEP_RE.match(d, p).end()

    def read_number(p: int) -> tuple[float, int]:
        p = skip_sep(p)
        m = _NUM_RE.match(d, p)
        if not m:
            found = d[p : p + 8] or "<end of data>"
            raise MalformedNumber(
                f"expected a number at offset {p}, found {found!r}"
            )
        return float(m.group(0)), m.end()

    def read_pair(p: int) -> tuple[Point, int]:
        x, p = read_number(p)
        y, p = read_number(p)
        return (x, y), p

    while True:
        pos = skip_sep(pos)
        if pos >= end:
            break
        ch = d[pos]
        if ch.isalpha():
            if ch not in "MmCcSsLl":
                raise UnsupportedCommand(
                    f"path command {ch!r} is outside the supported profile"
                )
            if ch in "Mm":
                if current is not None:
                    raise UnsupportedCommand(
                        "moveto is only supported as the first command; "
                        "a stroke must be one connected chain"
                    )
            elif current is None:
                raise UnsupportedCommand(
                    f"path must begin with a moveto, not {ch!r}"
                )
            cmd = ch
            pos += 1
        else:
            # implicit argument repetition; extra M pairs become lines
            if cmd is None:
                raise UnsupportedCommand("path must begin with a moveto")
            if cmd == "M":
                cmd = "L"
            elif cmd == "m":
                cmd = "l"

        if cmd in ("M", "m"):
            # first command; relative m from the origin is absolute
            current, pos = read_pair(pos)
            prev_ctrl2 = None
        elif cmd in ("L", "l"):
            target, pos = read_pair(pos)
            if cmd == "l":
                target = (current[0] + target[0], current[1] + target[1])
            segments.append(_line_segment(current, target))
            current = target
            prev_ctrl2 = None
        elif cmd in ("C", "c"):
            c1, pos = read_pair(pos)
            c2, pos = read_pair(pos)
            target, pos = read_pair(pos)
            if cmd == "c":
                c1 = (current[0] + c1[0], current[1] + c1[1])
                c2 = (current[0] + c2[0], current[1] + c2[1])
                target = (current[0] + target[0], current[1] + target[1])
            segments.append(CubicSegment(current, c1, c2, target))
            prev_ctrl2 = c2
            current = target
        else:  # S / s
            c2, pos = read_pair(pos)
            target, pos = read_pair(pos)
            if cmd == "s":
                c2 = (current[0] + c2[0], current[1] + c2[1])
                target = (current[0] + target[0], current[1] + target[1])
            if prev_ctrl2 is None:
                c1 = current
            else:
                c1 = (
                    2.0 * current[0] - prev_ctrl2[0],
                    2.0 * current[1] - prev_ctrl2[1],
                )
            segments.append(CubicSegment(current, c1, c2, target))
            prev_ctrl2 = c2
            current = target

    if not segments:
        raise EmptyPath("path contains no curve segments")
    return segments


def _line_segment(a: Point, b: Point) -> CubicSegment:
    # control points at the chord thirds keep the cubic exactly linear
    c1 = ((2.0 * a[0] + b[0]) / 3.0, (2.0 * a[1] + b[1]) / 3.0)
    c2 = ((a[0] + 2.0 * b[0]) / 3.0, (a[1] + 2.0 * b[1]) / 3.0)
    return CubicSegment(a, c1, c2, b)


def serialize_path_data(segments: Sequence[CubicSegment]) -> str:
    """Serialize a connected cubic chain back to absolute M/C path data.

    Uses repr formatting, so parse(serialize(x)) reproduces coordinates
    exactly; chains that were connected within tolerance come back
    connected exactly (each segment starts at the previous endpoint).
    """
    if not segments:
        raise EmptyPath("cannot serialize an empty segment list")
    x0, y0 = segments[0].p0
    parts = [f"M{x0!r},{y0!r}"]
    for seg in segments:
        (x1, y1), (x2, y2), (x3, y3) = seg.p1, seg.p2, seg.p3
        parts.append(f"C{x1!r},{y1!r} {x2!r},{y2!r} {x3!r},{y3!r}")
    return " ".join(parts)


def _local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_viewbox(root: ET.Element) -> tuple[float, float]:
    vb = root.get("viewBox")
    if vb is not None:
        nums = _NUM_RE.findall(vb)
        if len(nums) != 4:
            raise XmlError(f"viewBox must hold four numbers, got {vb!r}")
        ox, oy, w, h = (float(t) for t in nums)
        if ox != 0.0 or oy != 0.0:
            raise XmlError(f"viewBox origin must be 0 0, got {vb!r}")
        if w <= 0 or h <= 0:
            raise XmlError(f"viewBox size must be positive, got {vb!r}")
        return (w, h)
    width = root.get("width")
    height = root.get("height")
    if width is None or height is None:
        raise XmlError("document has neither viewBox nor width/height")
    try:
        w = float(_NUM_RE.match(width.strip()).group(0))
        h = float(_NUM_RE.match(height.strip()).group(0))
    except AttributeError:
        raise XmlError(f"unparseable width/height: {width!r} x {height!r}")
    if w <= 0 or h <= 0:
        raise XmlError(f"width/height must be positive, got {width!r} x {height!r}")
    return (w, h)


def _find_codepoint(root: ET.Element) -> int | None:
    for el in root.iter():
        ident = el.get("id")
        if not ident:
            continue
        m = _KVG_ID_RE.search(ident)
        if m:
            value = int(m.group(1), 16)
            if _is_scalar_codepoint(value):
                return value
    return None


def parse_glyph_svg(
    document: str | bytes, *, codepoint: int | None = None
) -> GlyphDef:
    """Parse one SVG document into a GlyphDef.

    Strokes are the <path> elements in document order.  The codepoint
    comes from the explicit argument when given, otherwise from the
    first kvg-style id attribute found in document order.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise XmlError(f"not well-formed XML: {exc}") from exc

    viewbox = _parse_viewbox(root)

    paths = [el for el in root.iter() if _local_name(el.tag) == "path"]
    if not paths:
        raise NoStrokes("document contains no path elements")

    strokes = []
    for i, el in enumerate(paths):
        d = el.get("d")
        if d is None:
            raise XmlError(f"path element {i} has no d attribute")
        strokes.append(StrokePath(i, tuple(parse_path_data(d))))

    if codepoint is None:
        codepoint = _find_codepoint(root)
        if codepoint is None:
            raise MissingCodepoint(
                "no codepoint argument and no kvg-style id attribute found"
            )
    if not _is_scalar_codepoint(codepoint):
        raise MissingCodepoint(
            f"codepoint {codepoint!r} is not a Unicode scalar value"
        )

    return GlyphDef(codepoint, tuple(strokes), viewbox)


def _codepoint_from_stem(stem: str) -> int:
    # KanjiVG file names: zero-padded hex, variants suffixed "-Kaisho" etc.
    head = stem.split("-", 1)[0]
    try:
        value = int(head, 16)
    except ValueError:
        raise MissingCodepoint(
            f"file stem {stem!r} does not start with a hex codepoint"
        )
    if not _is_scalar_codepoint(value):
        raise MissingCodepoint(f"file stem {stem!r} is not a scalar codepoint")
    return value


def glyph_files(input_path: str | Path) -> list[Path]:
    """Resolve an input to a sorted list of SVG files.

    Accepts a directory (all *.svg inside, non-recursive), a single
    .svg file, or a manifest text file with one SVG path per line
    (relative paths resolved against the manifest's directory; blank
    lines and #-comments skipped).
    """
    input_path = Path(input_path)
    if input_path.is_dir():
        return sorted(p for p in input_path.iterdir() if p.suffix == ".svg")
    if not input_path.exists():
        raise FileNotFoundError(f"input path does not exist: {input_path}")
    if input_path.suffix == ".svg":
        return [input_path]
    files = []
    base = input_path.parent
    for line in input_path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        files.append(p if p.is_absolute() else base / p)
    return files


def load_glyphs(
    input_path: str | Path, *, codepoint_from_filename: bool = False
) -> list[GlyphDef]:
    """Load every glyph under an input path, one glyph per codepoint.

    When several files map to the same codepoint (variant files), the
    one with the shortest file stem wins, ties broken lexicographically;
    KanjiVG names variants by suffixing the base stem, so the base file
    is kept.
    """
    chosen: dict[int, tuple[tuple[int, str], Path]] = {}
    for path in glyph_files(input_path):
        key = (len(path.stem), path.stem)
        cp = _codepoint_from_stem(path.stem) if codepoint_from_filename else None
        glyph_cp = cp
        if glyph_cp is None:
            glyph_cp = _peek_codepoint(path)
        if glyph_cp in chosen and chosen[glyph_cp][0] <= key:
            continue
        chosen[glyph_cp] = (key, path)

    out = []
    for cp, (_, path) in sorted(chosen.items()):
        override = cp if codepoint_from_filename else None
        out.append(
            parse_glyph_svg(path.read_bytes(), codepoint=override)
        )
    return out


def _peek_codepoint(path: Path) -> int:
    try:
        root = ET.fromstring(path.read_bytes())
    except ET.ParseError as exc:
        raise XmlError(f"{path}: not well-formed XML: {exc}") from exc
    cp = _find_codepoint(root)
    if cp is None:
        raise MissingCodepoint(f"{path}: no kvg-style id attribute found")
    return cp


def filter_corpus_cjk(glyphs: Iterable[GlyphDef]) -> Corpus:
    """Keep glyphs in the CJK Unified Ideographs block, U+4E00..U+9FFF."""
    kept = tuple(
        g for g in glyphs if CJK_FIRST <= g.class_label <= CJK_LAST
    )
    return Corpus(kept)


def select_by_stroke_count(corpus: Corpus, stroke_count: int) -> Corpus:
    """Glyphs of the corpus with exactly the given stroke count."""
    if stroke_count < 1:
        raise OutOfRange(f"stroke count must be >= 1, got {stroke_count}")
    return Corpus(
        tuple(g for g in corpus.glyphs if g.stroke_count == stroke_count)
    )


def stroke_count_histogram(glyphs: Iterable[GlyphDef]) -> dict[int, int]:
    hist: dict[int, int] = {}
    for g in glyphs:
        hist[g.stroke_count] = hist.get(g.stroke_count, 0) + 1
    return dict(sorted(hist.items()))


def corpus_hash(glyphs: Iterable[GlyphDef]) -> str:
    """Order-independent content hash of a glyph set (hex sha256).

    Covers codepoints, stroke counts, and exact stroke geometry, so a
    corpus snapshot can be pinned in reports and compared across runs.
    """
    h = hashlib.sha256()
    for g in sorted(glyphs, key=lambda g: g.class_label):
        line = "U+%04X:%d:%s\n" % (
            g.class_label,
            g.stroke_count,
            "|".join(serialize_path_data(s.segments) for s in g.strokes),
        )
        h.update(line.encode("utf-8"))
    return h.hexdigest()
