"""Legibility scoring backends.

A backend maps rendered glyph images to probability distributions over
the corpus classes.  Two implementations:

* PrototypeBackend: nearest-template classifier built from the corpus
  itself.  Each class prototype is the blurred, downsampled, L2
  normalized rendering of the full glyph; scores are a softmax over
  negative squared distances.  Fully deterministic, pure numpy.

* ExternalBackend: line-delimited JSON over a subprocess's stdin and
  stdout, so a stronger model can be plugged in without this package
  importing it.

Scoring is stateless with respect to batches: scoring images together
or one at a time yields bit-identical probabilities (the prototype
backend computes per image with fixed shapes; the protocol requires
the same of external processes).
"""

from __future__ import annotations

import base64
import json
import math
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    BackendTimeout,
    ClassSpaceMismatch,
    DimensionMismatch,
    EmptyCorpus,
    NonzeroExit,
    ProtocolError,
)
from .glyphs import Corpus
from .raster import GlyphImage, RasterConfig, full_subset, render_subset

PROB_SUM_TOL = 1e-6

DEFAULT_FEATURE_SIDE = 16
DEFAULT_BLUR_RADIUS = 1.5
DEFAULT_TEMPERATURE = 40.0


@dataclass(frozen=True, eq=False)
class ClassProbabilities:
    """A probability distribution over class ids.

    predicted is the argmax; ties resolve to the lowest class id.
    """

    probs: np.ndarray  # float64, (C,), read-only
    predicted: int
    predicted_prob: float

    @classmethod
    def from_probs(cls, probs) -> "ClassProbabilities":
        arr = np.asarray(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError(f"probabilities must be a non-empty vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError("probabilities must be finite and non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        predicted = int(np.argmax(arr))  # first occurrence = lowest id
        return cls(arr, predicted, float(arr[predicted]))


@dataclass(frozen=True)
class BackendDescriptor:
    """Identity of a scoring backend: kind and ordered class labels."""

    kind: str
    class_labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValueError("class labels must be unique")
        if not self.class_labels:
            raise EmptyCorpus("backend needs at least one class")

    @property
    def class_count(self) -> int:
        return len(self.class_labels)


def _image_pixels(image, grid: int) -> np.ndarray:
    pixels = image.pixels if isinstance(image, GlyphImage) else np.asarray(image)
    if pixels.shape != (grid, grid):
        raise DimensionMismatch(
            f"expected a {grid}x{grid} image, got {pixels.shape}"
        )
    if pixels.dtype != np.uint8:
        raise DimensionMismatch(f"expected uint8 pixels, got {pixels.dtype}")
    return pixels


class Backend:
    """Common surface of scoring backends."""

    descriptor: BackendDescriptor
    grid: int

    def __init__(self, descriptor: BackendDescriptor, grid: int) -> None:
        self.descriptor = descriptor
        self.grid = grid
        self._label_ids = {
            lab: i for i, lab in enumerate(descriptor.class_labels)
        }

    def class_id(self, label: int) -> int:
        try:
            return self._label_ids[label]
        except KeyError:
            raise ClassSpaceMismatch(
                f"class U+{label:04X} is not in the backend's class space"
            ) from None

    def score_batch(self, images: Sequence) -> list[ClassProbabilities]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _blur_matrix(grid: int, radius: float) -> np.ndarray:
    """Banded 1-D Gaussian convolution matrix with zero padding.

    Blur of an image X is B @ X @ B.T; a plain matmul keeps the whole
    feature path inside numpy with no optional dependencies and makes
    the result bit-reproducible for a fixed grid.
    """
    if radius <= 0.0:
        return np.eye(grid, dtype=np.float64)
    reach = max(1, int(math.ceil(4.0 * radius)))
    taps = np.exp(
        -np.arange(-reach, reach + 1, dtype=np.float64) ** 2
        / (2.0 * radius * radius)
    )
    taps /= taps.sum()
    mat = np.zeros((grid, grid), dtype=np.float64)
    for offset, weight in zip(range(-reach, reach + 1), taps):
        rows = np.arange(max(0, offset), min(grid, grid + offset))
        mat[rows, rows - offset] = weight
    return mat


class PrototypeBackend(Backend):
    """Nearest-prototype classifier over blurred downsampled features."""

    def __init__(
        self,
        descriptor: BackendDescriptor,
        grid: int,
        prototypes: np.ndarray,
        blur: np.ndarray,
        feature_side: int,
        blur_radius: float,
        temperature: float,
    ) -> None:
        super().__init__(descriptor, grid)
        self._prototypes = prototypes
        self._blur = blur
        self.feature_side = feature_side
        self.blur_radius = blur_radius
        self.temperature = temperature

    def _feature(self, pixels: np.ndarray) -> np.ndarray:
        x = pixels.astype(np.float64) / 255.0
        x = self._blur @ x @ self._blur.T
        step = self.grid // self.feature_side
        f = x.reshape(self.feature_side, step, self.feature_side, step)
        f = f.mean(axis=(1, 3)).ravel()
        norm = math.sqrt(float(np.dot(f, f)))
        if norm > 0.0:
            f = f / norm
        return f

    def score_batch(self, images: Sequence) -> list[ClassProbabilities]:
        if not images:
            raise ValueError("score_batch needs at least one image")
        out = []
        # strictly per-image: fixed shapes keep batch splits bit-identical
        for image in images:
            f = self._feature(_image_pixels(image, self.grid))
            diff = self._prototypes - f
            d2 = np.einsum("cf,cf->c", diff, diff)
            logits = -self.temperature * d2
            logits -= logits.max()
            p = np.exp(logits)
            p /= p.sum()
            out.append(ClassProbabilities.from_probs(p))
        return out


def build_prototype_classifier(
    corpus: Corpus,
    cfg: RasterConfig,
    *,
    feature_side: int = DEFAULT_FEATURE_SIDE,
    blur_radius: float = DEFAULT_BLUR_RADIUS,
    temperature: float = DEFAULT_TEMPERATURE,
) -> PrototypeBackend:
    """Build the prototype backend from full renders of a corpus.

    One prototype per class, in class-id order.  Multiplying the
    temperature by any positive constant preserves every argmax, so
    rankings are temperature-invariant; the value only shapes how
    peaked the probabilities are.
    """
    if len(corpus) == 0:
        raise EmptyCorpus("cannot build a classifier from an empty corpus")
    if feature_side < 1 or cfg.grid % feature_side != 0:
        raise ValueError(
            f"feature_side must divide the grid ({cfg.grid}), got {feature_side}"
        )
    if temperature <= 0.0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if blur_radius < 0.0:
        raise ValueError(f"blur_radius must be >= 0, got {blur_radius}")
    if cfg.ink_polarity != 255:
        raise ValueError("classifier features require ink-high polarity")

    descriptor = BackendDescriptor("prototype", corpus.class_labels)
    blur = _blur_matrix(cfg.grid, blur_radius)
    backend = PrototypeBackend(
        descriptor,
        cfg.grid,
        np.zeros((len(corpus), feature_side * feature_side)),
        blur,
        feature_side,
        blur_radius,
        temperature,
    )
    protos = np.stack(
        [
            backend._feature(
                render_subset(g, full_subset(g.stroke_count), cfg).pixels
            )
            for g in corpus.glyphs
        ]
    )
    backend._prototypes = protos
    return backend


class CountingBackend(Backend):
    """Wrapper that counts how many images the inner backend scored."""

    def __init__(self, inner: Backend) -> None:
        super().__init__(inner.descriptor, inner.grid)
        self.inner = inner
        self.calls = 0

    def score_batch(self, images: Sequence) -> list[ClassProbabilities]:
        result = self.inner.score_batch(images)
        self.calls += len(images)
        return result

    def close(self) -> None:
        self.inner.close()


def parse_codepoint_token(token) -> int:
    """Read one handshake class token as a codepoint.

    Accepted forms, in precedence order: "U+4E00" / "0x4E00" hex,
    all-decimal strings as decimal, a single character as its ordinal,
    4-6 hex digits as hex.  Integers pass through.
    """
    if isinstance(token, int) and not isinstance(token, bool):
        value = token
    elif isinstance(token, str):
        t = token.strip()
        if t[:2] in ("U+", "u+", "0x", "0X") and len(t) > 2:
            try:
                value = int(t[2:], 16)
            except ValueError:
                raise ProtocolError(f"bad codepoint token {token!r}") from None
        elif t.isascii() and t.isdigit():
            value = int(t, 10)
        elif len(t) == 1:
            value = ord(t)
        else:
            try:
                if not (4 <= len(t) <= 6):
                    raise ValueError
                value = int(t, 16)
            except ValueError:
                raise ProtocolError(f"bad codepoint token {token!r}") from None
    else:
        raise ProtocolError(f"bad codepoint token {token!r}")
    if not 0 < value <= 0x10FFFF or 0xD800 <= value <= 0xDFFF:
        raise ProtocolError(f"codepoint {value:#x} is not a scalar value")
    return value


_EOF = object()


class ExternalBackend(Backend):
    """Classifier in a subprocess, speaking line-delimited JSON.

    Handshake: the process prints {"classes": [...]} once at startup.
    Requests: {"id": n, "w": g, "h": g, "pixels": base64} per image,
    raw row-major bytes, 0 = background, 255 = full ink.  Responses
    carry either "probs" (dense) or "top" + "rest_mass" (sparse, the
    remainder split uniformly over unlisted classes), and may arrive
    in any order.  The facade is thread-safe; batches are serialized.
    """

    def __init__(
        self,
        proc: subprocess.Popen,
        descriptor: BackendDescriptor,
        grid: int,
        timeout: float,
        lines: "queue.Queue",
    ) -> None:
        super().__init__(descriptor, grid)
        self._proc = proc
        self._timeout = timeout
        self._lines = lines
        self._lock = threading.Lock()
        self._next_id = 0

    @classmethod
    def start(
        cls,
        command: str | Sequence[str],
        *,
        grid: int = 64,
        timeout: float = 60.0,
    ) -> "ExternalBackend":
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        lines: queue.Queue = queue.Queue()

        def pump() -> None:
            for line in proc.stdout:
                lines.put(line)
            lines.put(_EOF)

        threading.Thread(target=pump, daemon=True).start()

        try:
            line = cls._take_line(lines, proc, time.monotonic() + timeout)
            try:
                hello = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"handshake is not JSON: {line!r}") from exc
            if not isinstance(hello, dict) or "classes" not in hello:
                raise ProtocolError(f"handshake must carry 'classes': {line!r}")
            tokens = hello["classes"]
            if not isinstance(tokens, list) or not tokens:
                raise ProtocolError("handshake 'classes' must be a non-empty list")
            labels = tuple(parse_codepoint_token(t) for t in tokens)
            if len(set(labels)) != len(labels):
                raise ProtocolError("handshake lists a duplicate class")
        except BaseException:
            # no backend object exists yet to own the child; reap it here
            proc.kill()
            proc.wait()
            raise
        return cls(
            proc, BackendDescriptor("external", labels), grid, timeout, lines
        )

    @staticmethod
    def _take_line(lines: "queue.Queue", proc: subprocess.Popen, deadline: float):
        remaining = deadline - time.monotonic()
        try:
            item = lines.get(timeout=max(0.0, remaining))
        except queue.Empty:
            raise BackendTimeout(
                "external classifier did not respond before the deadline"
            ) from None
        if item is _EOF:
            rc = proc.wait(timeout=5.0)
            if rc != 0:
                raise NonzeroExit(f"external classifier exited with status {rc}")
            raise ProtocolError(
                "external classifier closed its output stream mid-protocol"
            )
        return item

    def _expand(self, obj: dict) -> np.ndarray:
        count = self.descriptor.class_count
        if "probs" in obj:
            probs = obj["probs"]
            if not isinstance(probs, list) or len(probs) != count:
                raise ProtocolError(
                    f"'probs' must list {count} values, got "
                    f"{len(probs) if isinstance(probs, list) else type(probs).__name__}"
                )
            return np.asarray(probs, dtype=np.float64)
        if "top" in obj:
            top = obj["top"]
            rest = obj.get("rest_mass", 0.0)
            if not isinstance(top, list):
                raise ProtocolError("'top' must be a list of [class, prob] pairs")
            if not isinstance(rest, (int, float)) or rest < -PROB_SUM_TOL:
                raise ProtocolError(f"bad rest_mass {rest!r}")
            listed: dict[int, float] = {}
            for pair in top:
                if not isinstance(pair, list) or len(pair) != 2:
                    raise ProtocolError(f"bad 'top' entry {pair!r}")
                cid, p = pair
                if not isinstance(cid, int) or not 0 <= cid < count:
                    raise ProtocolError(f"class id {cid!r} out of range")
                if cid in listed:
                    raise ProtocolError(f"class id {cid} listed twice")
                listed[cid] = float(p)
            unlisted = count - len(listed)
            if unlisted == 0:
                if rest > PROB_SUM_TOL:
                    raise ProtocolError(
                        "rest_mass must be ~0 when every class is listed"
                    )
                fill = 0.0
            else:
                fill = max(0.0, float(rest)) / unlisted
            probs = np.full(count, fill, dtype=np.float64)
            for cid, p in listed.items():
                probs[cid] = p
            return probs
        raise ProtocolError("response carries neither 'probs' nor 'top'")

    def score_batch(self, images: Sequence) -> list[ClassProbabilities]:
        if not images:
            raise ValueError("score_batch needs at least one image")
        with self._lock:
            return self._score_locked(images)

    def _score_locked(self, images: Sequence) -> list[ClassProbabilities]:
        first = self._next_id
        self._next_id += len(images)
        pending = {first + i: i for i in range(len(images))}
        payloads = []
        for offset, image in enumerate(images):
            pixels = _image_pixels(image, self.grid)
            payloads.append(
                json.dumps(
                    {
                        "id": first + offset,
                        "w": self.grid,
                        "h": self.grid,
                        "pixels": base64.b64encode(
                            np.ascontiguousarray(pixels).tobytes()
                        ).decode("ascii"),
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )

        # writing from a side thread while the main thread drains
        # stdout avoids deadlock when the child interleaves replies
        failure: list[BaseException] = []

        def feed() -> None:
            try:
                for payload in payloads:
                    self._proc.stdin.write(payload)
                self._proc.stdin.flush()
            except BaseException as exc:  # surfaced via EOF handling
                failure.append(exc)

        writer = threading.Thread(target=feed, daemon=True)
        writer.start()

        results: list[ClassProbabilities | None] = [None] * len(images)
        deadline = time.monotonic() + self._timeout
        while pending:
            line = self._take_line(self._lines, self._proc, deadline)
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"response is not JSON: {line!r}") from exc
            if not isinstance(obj, dict) or not isinstance(obj.get("id"), int):
                raise ProtocolError(f"response lacks an integer id: {line!r}")
            rid = obj["id"]
            if rid not in pending:
                raise ProtocolError(f"response for unknown or duplicate id {rid}")
            position = pending.pop(rid)
            probs = self._expand(obj)
            try:
                results[position] = ClassProbabilities.from_probs(probs)
            except ValueError as exc:
                raise ProtocolError(f"invalid probabilities for id {rid}: {exc}") from exc
        writer.join(timeout=5.0)
        return results  # type: ignore[return-value]

    def close(self) -> None:
        proc = self._proc
        if proc.poll() is None:
            try:
                if proc.stdin and not proc.stdin.closed:
                    proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                proc.terminate()
                try:
                    proc.wait(timeout=2.0)
                except subprocess.TimeoutExpired:
                    proc.kill()
                    proc.wait()


def evaluate_backend_accuracy(
    backend: Backend,
    corpus: Corpus,
    cfg: RasterConfig,
    *,
    batch_size: int = 256,
) -> float:
    """Top-1 accuracy of a backend on full renders of a corpus."""
    if len(corpus) == 0:
        raise EmptyCorpus("cannot evaluate on an empty corpus")
    ids = [backend.class_id(g.class_label) for g in corpus.glyphs]
    correct = 0
    for start in range(0, len(corpus), batch_size):
        chunk = corpus.glyphs[start : start + batch_size]
        images = [
            render_subset(g, full_subset(g.stroke_count), cfg) for g in chunk
        ]
        for cp, want in zip(backend.score_batch(images), ids[start : start + len(chunk)]):
            if cp.predicted == want:
                correct += 1
    return correct / len(corpus)
