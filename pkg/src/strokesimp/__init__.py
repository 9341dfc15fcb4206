"""Simplify multi-stroke characters by removing strokes.

The pipeline: parse vector glyphs (KanjiVG conventions), rasterize
stroke subsets from cached per-stroke masks, score each subset with a
legibility classifier, and search the subsets for the removals that
keep the character most recognizable.  See the README for the command
line and the external classifier protocol.
"""

from .errors import (
    BackendFailure,
    BackendTimeout,
    BudgetExceeded,
    ClassSpaceMismatch,
    ConfigError,
    DimensionMismatch,
    EmptyCorpus,
    EmptyInput,
    EmptyPath,
    EmptySubset,
    GlyphDocumentError,
    IncompleteSequence,
    MalformedNumber,
    MissingCodepoint,
    NonzeroExit,
    NoStrokes,
    OutOfRange,
    PathDataError,
    ProtocolError,
    SchemaVersionMismatch,
    StrokeSimpError,
    UnsupportedCommand,
    XmlError,
    ZeroInkFull,
)
from .glyphs import (
    CubicSegment,
    Corpus,
    GlyphDef,
    StrokePath,
    corpus_hash,
    filter_corpus_cjk,
    load_glyphs,
    parse_glyph_svg,
    parse_path_data,
    select_by_stroke_count,
    serialize_path_data,
)
from .raster import (
    GlyphImage,
    RasterConfig,
    StrokeMask,
    build_stroke_masks,
    composite,
    flatten_stroke,
    full_subset,
    ink_proportion,
    render_stroke_mask,
    render_subset,
    write_pgm,
    write_png,
)
from .legibility import (
    Backend,
    BackendDescriptor,
    ClassProbabilities,
    CountingBackend,
    ExternalBackend,
    PrototypeBackend,
    build_prototype_classifier,
    evaluate_backend_accuracy,
)
from .search import (
    DEFAULT_BUDGET,
    FullScore,
    RandomRemovalResult,
    RemovalSequence,
    SimplifiedGlyph,
    ToleranceReport,
    beam_approximate_sequence,
    enumerate_subsets,
    evaluation_cost,
    optimal_removal,
    optimal_sequence,
    random_removal_average,
    removal_tolerance,
    score_full_glyph,
)
from .analysis import (
    CurveSummary,
    PixelCurve,
    RankingResult,
    aggregate_curves,
    aggregate_pixel_curves,
    emit_report,
    export_sequence_sheet,
    parse_report,
    pixel_curve,
    proportion_fully_legible,
    tolerance_ranking,
)

__version__ = "0.1.0"
