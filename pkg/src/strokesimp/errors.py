"""Exception types raised across the package.

Grouped by the stage that raises them.  Everything derives from
StrokeSimpError so callers can catch the whole family; most conditions
also derive from ValueError or RuntimeError to keep duck-typed callers
working.
"""


class StrokeSimpError(Exception):
    """Base class for all errors raised by this package."""


# --- path data / SVG ingestion ---

class PathDataError(StrokeSimpError, ValueError):
    """A path d-attribute violates the supported profile or grammar."""


class EmptyPath(PathDataError):
    """Path data is empty or contains no drawable curve segments."""


class MalformedNumber(PathDataError):
    """A numeric argument is missing or cannot be parsed."""


class UnsupportedCommand(PathDataError):
    """A path command outside the supported M/C/S/L profile."""


class GlyphDocumentError(StrokeSimpError, ValueError):
    """An SVG glyph document is structurally unusable."""


class XmlError(GlyphDocumentError):
    """Document is not well-formed XML or lacks required structure."""


class NoStrokes(GlyphDocumentError):
    """Document contains no path elements."""


class MissingCodepoint(GlyphDocumentError):
    """No codepoint could be derived for the glyph."""


# --- rasterization ---

class EmptySubset(StrokeSimpError, ValueError):
    """A stroke subset with no bits set was asked to render."""


class ZeroInkFull(StrokeSimpError, ValueError):
    """Ink proportion is undefined: the reference image has no ink."""


class DimensionMismatch(StrokeSimpError, ValueError):
    """Image dimensions disagree with what the consumer expects."""


# --- legibility backends ---

class EmptyCorpus(StrokeSimpError, ValueError):
    """A classifier was requested over zero classes."""


class ClassSpaceMismatch(StrokeSimpError, ValueError):
    """A glyph's class is not present in the backend's class space."""


class BackendFailure(StrokeSimpError, RuntimeError):
    """An external classifier process failed to deliver usable scores."""


class ProtocolError(BackendFailure):
    """The external process sent output that violates the protocol."""


class BackendTimeout(BackendFailure):
    """The external process did not respond within the deadline."""


class NonzeroExit(BackendFailure):
    """The external process terminated with a nonzero status."""


# --- subset search ---

class OutOfRange(StrokeSimpError, ValueError):
    """A stroke count or removal count outside the supported range."""


class BudgetExceeded(StrokeSimpError):
    """The exhaustive scan would exceed the configured scoring budget."""


class IncompleteSequence(StrokeSimpError, ValueError):
    """A removal sequence does not cover k = 1 .. K-1 exactly once."""


# --- analysis / reporting ---

class EmptyInput(StrokeSimpError, ValueError):
    """An aggregate was requested over zero results."""


class SchemaVersionMismatch(StrokeSimpError, ValueError):
    """A report file declares a schema this version does not read."""


# --- command line ---

class ConfigError(StrokeSimpError, ValueError):
    """Invalid command-line arguments or config file contents."""
