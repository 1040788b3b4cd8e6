"""File formats: annotations, frame scores, frame labels, WAV, model weights.

Annotation file (UTF-8, one utterance per line)::

    <utt_id> <start>-<end>-<T|F>[ <start>-<end>-<T|F>]...

Times are seconds with exactly two decimals; ``T`` is genuine, ``F`` fake.
Regions must start at 0.00 and be contiguous.  Blank lines are ignored.

Score file (UTF-8 TSV)::

    #polarity=higher_is_genuine
    #resolution_ms=160
    utt_id<TAB>frame<TAB>score
    u1<TAB>0<TAB>0.912345678

Scores are written positionally with at most 9 significant digits.  Frame
indices start at 0 and are contiguous per utterance; each utterance occupies
one contiguous block of lines.

Label file (UTF-8)::

    #kind=class            (or #kind=joint)
    #resolution_ms=20
    u1 RRRFFR              (class: one R/F character per frame)
    u1 RS RE FS FM FE RU   (joint: one class+position token per frame)

Model file (binary, little-endian)::

    magic b"SALTOY\\x00\\x01" | uint32 raw_dim, context, hidden_dim, n_joint
    | float64 arrays w_enc, b_enc, w_bin, b_bin, w_spl, b_spl, w_tr, b_tr
      (row-major, in that order)
"""

from __future__ import annotations

import io as _stdio
import math
import re
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Union

import numpy as np

from .labelcore import (
    FAKE,
    REAL,
    FrameClass,
    FrameClassSeq,
    JointLabelSeq,
    LabelError,
    Position,
    Region,
    TimeAnnotation,
)
from .metrics import Polarity
from .toymodel import NUM_JOINT, PARAM_NAMES, ToyModelParams

PathLike = Union[str, Path]


class FormatError(ValueError):
    """Malformed file content.  ``line``/``column`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class AnnotationFormatError(FormatError):
    pass


class ScoreFormatError(FormatError):
    pass


class LabelFormatError(FormatError):
    pass


class WavFormatError(FormatError):
    pass


class ModelFormatError(FormatError):
    pass


def _decode(data: str | bytes, err: type[FormatError]) -> str:
    if isinstance(data, str):
        return data
    try:
        return bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise err(f"not valid UTF-8 at byte {exc.start}") from None


def _lines(text: str):
    """Yield (line_number, line) splitting on ``\\n`` only."""
    for i, line in enumerate(text.split("\n"), start=1):
        yield i, line.rstrip("\r")


# -- annotations ---------------------------------------------------------------

_UTT_RE = re.compile(r"\S+")
_REGION_RE = re.compile(r"(\d+)\.(\d\d)-(\d+)\.(\d\d)-([TF])")


def _centis(whole: str, frac: str) -> int:
    return int(whole) * 100 + int(frac)


def parse_annotation(data: str | bytes) -> list[TimeAnnotation]:
    text = _decode(data, AnnotationFormatError)
    out: list[TimeAnnotation] = []
    seen: set[str] = set()
    for lineno, line in _lines(text):
        if not line.strip():
            continue
        tokens = [(m.start() + 1, m.group()) for m in _UTT_RE.finditer(line)]
        col, utt = tokens[0]
        if utt in seen:
            raise AnnotationFormatError(f"duplicate utterance id {utt!r}", lineno, col)
        if len(tokens) < 2:
            raise AnnotationFormatError(f"utterance {utt!r} has no regions", lineno, col + len(utt))
        regions = []
        cursor = 0
        for col, tok in tokens[1:]:
            m = _REGION_RE.fullmatch(tok)
            if m is None:
                raise AnnotationFormatError(
                    f"malformed region {tok!r}; expected <start>-<end>-<T|F> with 2-decimal times", lineno, col
                )
            start = _centis(m.group(1), m.group(2))
            end = _centis(m.group(3), m.group(4))
            if start != cursor:
                kind = "gap" if start > cursor else "overlap"
                raise AnnotationFormatError(
                    f"{kind}: region starts at {start / 100:.2f}s, previous region ends at {cursor / 100:.2f}s",
                    lineno,
                    col,
                )
            if end <= start:
                raise AnnotationFormatError(f"region {tok!r} is empty or reversed", lineno, col)
            cls = REAL if m.group(5) == "T" else FAKE
            regions.append(Region(start / 100, end / 100, cls))
            cursor = end
        seen.add(utt)
        out.append(TimeAnnotation(utt, tuple(regions), cursor / 100))
    return out


def _fmt_time(seconds: float) -> str:
    centis = round(seconds * 100)
    if abs(centis - seconds * 100) > 1e-4:
        raise AnnotationFormatError(f"time {seconds!r} is not on the 10 ms grid")
    return f"{centis // 100}.{centis % 100:02d}"


def serialize_annotation(annotations: Iterable[TimeAnnotation]) -> str:
    lines = []
    for ann in annotations:
        if not ann.utt_id or any(ch.isspace() for ch in ann.utt_id):
            raise AnnotationFormatError(f"utterance id {ann.utt_id!r} must be non-empty without whitespace")
        parts = [ann.utt_id]
        for s, e, c in ann.regions:
            parts.append(f"{_fmt_time(s)}-{_fmt_time(e)}-{'F' if c == FAKE else 'T'}")
        lines.append(" ".join(parts) + "\n")
    return "".join(lines)


def read_annotation(path: PathLike) -> list[TimeAnnotation]:
    return parse_annotation(Path(path).read_bytes())


def write_annotation(path: PathLike, annotations: Iterable[TimeAnnotation]) -> None:
    Path(path).write_bytes(serialize_annotation(annotations).encode("utf-8"))


# -- numbers -------------------------------------------------------------------


def format_score(x: float) -> str:
    """Positional decimal with at most 9 significant digits, trailing zeros trimmed."""
    if not math.isfinite(x):
        raise ScoreFormatError(f"non-finite score {x!r}")
    s = np.format_float_positional(float(x), precision=9, unique=False, fractional=False, trim="-")
    return "0" if s == "-0" else s


def format_number(x: float) -> str:
    """Shortest round-trip positional form, e.g. ``160`` or ``12.5``."""
    return np.format_float_positional(float(x), trim="-")


_NUMBER_RE = re.compile(r"-?\d+(\.\d+)?([eE][-+]?\d+)?")


def _parse_float(tok: str, err: type[FormatError], line: int, col: int) -> float:
    if not _NUMBER_RE.fullmatch(tok):
        raise err(f"not a decimal number: {tok!r}", line, col)
    val = float(tok)
    if not math.isfinite(val):
        raise err(f"non-finite number {tok!r}", line, col)
    return val


def _parse_meta(lineno: int, line: str, err: type[FormatError]) -> tuple[str, str]:
    body = line[1:]
    if "=" not in body:
        raise err("metadata line must look like #key=value", lineno, 1)
    key, value = body.split("=", 1)
    return key.strip(), value.strip()


# -- score files ---------------------------------------------------------------


@dataclass
class ScoreFile:
    polarity: Polarity
    resolution_ms: float
    scores: dict[str, np.ndarray] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, ScoreFile):
            return NotImplemented
        return (
            self.polarity == other.polarity
            and self.resolution_ms == other.resolution_ms
            and list(self.scores) == list(other.scores)
            and all(np.array_equal(self.scores[k], other.scores[k]) for k in self.scores)
        )


SCORE_HEADER = "utt_id\tframe\tscore"


def parse_scores(data: str | bytes) -> ScoreFile:
    text = _decode(data, ScoreFormatError)
    meta: dict[str, str] = {}
    header_seen = False
    blocks: dict[str, list[float]] = {}
    current = None
    for lineno, line in _lines(text):
        if not line:
            continue
        if line.startswith("#"):
            if header_seen:
                raise ScoreFormatError("metadata after the header line", lineno, 1)
            key, value = _parse_meta(lineno, line, ScoreFormatError)
            if key in meta:
                raise ScoreFormatError(f"duplicate metadata key {key!r}", lineno, 2)
            meta[key] = value
            continue
        if not header_seen:
            if line != SCORE_HEADER:
                raise ScoreFormatError(f"expected header {SCORE_HEADER!r}", lineno, 1)
            header_seen = True
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ScoreFormatError(f"expected 3 tab-separated fields, got {len(cols)}", lineno, 1)
        utt, frame_tok, score_tok = cols
        frame_col = len(utt) + 2
        score_col = frame_col + len(frame_tok) + 1
        if not utt or any(ch.isspace() for ch in utt):
            raise ScoreFormatError(f"bad utterance id {utt!r}", lineno, 1)
        if not frame_tok.isdigit() or not frame_tok.isascii():
            raise ScoreFormatError(f"frame index {frame_tok!r} is not a non-negative integer", lineno, frame_col)
        frame = int(frame_tok)
        score = _parse_float(score_tok, ScoreFormatError, lineno, score_col)
        if utt != current:
            if utt in blocks:
                raise ScoreFormatError(f"utterance {utt!r} appears in more than one block", lineno, 1)
            blocks[utt] = []
            current = utt
        expected = len(blocks[utt])
        if frame != expected:
            kind = "duplicate" if frame < expected else "missing"
            raise ScoreFormatError(
                f"{kind} frame for {utt!r}: got index {frame}, expected {expected}", lineno, frame_col
            )
        blocks[utt].append(score)
    if "polarity" not in meta:
        raise ScoreFormatError("missing #polarity metadata")
    if "resolution_ms" not in meta:
        raise ScoreFormatError("missing #resolution_ms metadata")
    try:
        polarity = Polarity(meta["polarity"])
    except ValueError:
        raise ScoreFormatError(f"unknown polarity {meta['polarity']!r}") from None
    res = _parse_float(meta["resolution_ms"], ScoreFormatError, None, None)  # type: ignore[arg-type]
    if res <= 0:
        raise ScoreFormatError(f"resolution_ms must be positive, got {res}")
    if not header_seen:
        raise ScoreFormatError("missing header line")
    return ScoreFile(polarity, res, {k: np.array(v) for k, v in blocks.items()})


def serialize_scores(sf: ScoreFile) -> str:
    out = [
        f"#polarity={Polarity(sf.polarity).value}\n",
        f"#resolution_ms={format_number(sf.resolution_ms)}\n",
        SCORE_HEADER + "\n",
    ]
    for utt, scores in sf.scores.items():
        if not utt or any(ch.isspace() for ch in utt):
            raise ScoreFormatError(f"utterance id {utt!r} must be non-empty without whitespace")
        for i, s in enumerate(np.asarray(scores, dtype=np.float64)):
            out.append(f"{utt}\t{i}\t{format_score(s)}\n")
    return "".join(out)


def read_scores(path: PathLike) -> ScoreFile:
    return parse_scores(Path(path).read_bytes())


def write_scores(path: PathLike, sf: ScoreFile) -> None:
    Path(path).write_bytes(serialize_scores(sf).encode("utf-8"))


# -- label files ---------------------------------------------------------------

LabelSeq = Union[FrameClassSeq, JointLabelSeq]
_JOINT_TOKENS = {
    FrameClass(c).symbol + Position(p).symbol: (c, p) for c in range(2) for p in range(4)
}


def parse_labels(data: str | bytes) -> dict[str, LabelSeq]:
    text = _decode(data, LabelFormatError)
    meta: dict[str, str] = {}
    out: dict[str, LabelSeq] = {}
    body_started = False
    for lineno, line in _lines(text):
        if not line.strip():
            continue
        if line.startswith("#"):
            if body_started:
                raise LabelFormatError("metadata after label lines", lineno, 1)
            key, value = _parse_meta(lineno, line, LabelFormatError)
            meta[key] = value
            continue
        if not body_started:
            if meta.get("kind") not in ("class", "joint"):
                raise LabelFormatError("missing or unknown #kind (class|joint)", lineno, 1)
            if "resolution_ms" not in meta:
                raise LabelFormatError("missing #resolution_ms metadata", lineno, 1)
            res = _parse_float(meta["resolution_ms"], LabelFormatError, lineno, 1)
            body_started = True
        parts = line.split(" ")
        utt = parts[0]
        if not utt or len(parts) < 2:
            raise LabelFormatError("expected '<utt_id> <labels>'", lineno, 1)
        if utt in out:
            raise LabelFormatError(f"duplicate utterance id {utt!r}", lineno, 1)
        col = len(utt) + 2
        try:
            if meta["kind"] == "class":
                if len(parts) != 2:
                    raise LabelFormatError("class labels must be one R/F string", lineno, col)
                bad = next((i for i, ch in enumerate(parts[1]) if ch not in "RF"), None)
                if bad is not None:
                    raise LabelFormatError(f"unexpected class symbol {parts[1][bad]!r}", lineno, col + bad)
                out[utt] = FrameClassSeq.from_string(parts[1], res)
            else:
                cls, pos = [], []
                for tok in parts[1:]:
                    if tok not in _JOINT_TOKENS:
                        raise LabelFormatError(f"unknown joint label {tok!r}", lineno, col)
                    c, p = _JOINT_TOKENS[tok]
                    cls.append(c)
                    pos.append(p)
                    col += len(tok) + 1
                out[utt] = JointLabelSeq(np.array(cls, dtype=np.int8), np.array(pos, dtype=np.int8), res)
        except LabelError as exc:
            raise LabelFormatError(str(exc), lineno, len(utt) + 2) from None
    if not body_started and meta:
        if meta.get("kind") not in ("class", "joint") or "resolution_ms" not in meta:
            raise LabelFormatError("incomplete metadata")
    return out


def serialize_labels(labels: Mapping[str, LabelSeq]) -> str:
    items = list(labels.items())
    if not items:
        raise LabelFormatError("no label sequences to write")
    kinds = {type(v) for _, v in items}
    if len(kinds) != 1:
        raise LabelFormatError("cannot mix class and joint label sequences in one file")
    resolutions = {v.resolution_ms for _, v in items}
    if len(resolutions) != 1:
        raise LabelFormatError(f"inconsistent resolutions {sorted(resolutions)}")
    kind = "joint" if kinds == {JointLabelSeq} else "class"
    out = [f"#kind={kind}\n", f"#resolution_ms={format_number(resolutions.pop())}\n"]
    for utt, seq in items:
        if not utt or any(ch.isspace() for ch in utt) or utt.startswith("#"):
            raise LabelFormatError(f"bad utterance id {utt!r}")
        body = " ".join(seq.tokens()) if kind == "joint" else seq.to_string()
        out.append(f"{utt} {body}\n")
    return "".join(out)


def read_labels(path: PathLike) -> dict[str, LabelSeq]:
    return parse_labels(Path(path).read_bytes())


def write_labels(path: PathLike, labels: Mapping[str, LabelSeq]) -> None:
    Path(path).write_bytes(serialize_labels(labels).encode("utf-8"))


# -- WAV -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WavAudio:
    """Mono PCM16 audio."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.ndim != 1:
            raise WavFormatError(f"mono required: samples have shape {arr.shape}")
        if arr.dtype != np.int16:
            raise WavFormatError(f"PCM16 samples must be int16, got {arr.dtype}")
        if self.sample_rate <= 0:
            raise WavFormatError(f"sample rate must be positive, got {self.sample_rate}")

    def to_float(self) -> np.ndarray:
        return self.samples.astype(np.float64) / 32768.0

    @classmethod
    def from_float(cls, wav: np.ndarray, sample_rate: int = 16000) -> "WavAudio":
        return cls(float_to_pcm16(wav), sample_rate)

    def __eq__(self, other):
        if not isinstance(other, WavAudio):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)


def float_to_pcm16(wav: np.ndarray) -> np.ndarray:
    """Scale by 32768 and round; values exactly on the PCM grid map back losslessly."""
    x = np.round(np.asarray(wav, dtype=np.float64) * 32768.0)
    return np.clip(x, -32768, 32767).astype(np.int16)


def decode_wav(data: bytes) -> WavAudio:
    try:
        with wave.open(_stdio.BytesIO(bytes(data)), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            nframes = w.getnframes()
            payload = w.readframes(nframes)
    except WavFormatError:
        raise
    # chunk.Chunk.skip raises a bare RuntimeError when a chunk size runs past the data
    except (wave.Error, EOFError, struct.error, ValueError, OverflowError, RuntimeError) as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise WavFormatError(f"PCM16 required ({msg})") from None
        raise WavFormatError(f"invalid WAV data: {msg or type(exc).__name__}") from None
    if channels != 1:
        raise WavFormatError(f"mono required, file has {channels} channels")
    if width != 2:
        raise WavFormatError(f"PCM16 required, file has {8 * width}-bit samples")
    if rate <= 0:
        raise WavFormatError(f"invalid sample rate {rate}")
    if len(payload) != 2 * nframes:
        raise WavFormatError(f"header declares {nframes} frames but payload holds {len(payload) // 2}")
    return WavAudio(np.frombuffer(payload, dtype="<i2").astype(np.int16), rate)


def encode_wav(audio: WavAudio) -> bytes:
    buf = _stdio.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(audio.sample_rate))
        w.writeframes(audio.samples.astype("<i2").tobytes())
    return buf.getvalue()


def read_wav(path: PathLike) -> WavAudio:
    return decode_wav(Path(path).read_bytes())


def write_wav(path: PathLike, audio: WavAudio) -> None:
    Path(path).write_bytes(encode_wav(audio))


# -- model weights -------------------------------------------------------------

MODEL_MAGIC = b"SALTOY\x00\x01"
_MODEL_HEAD = struct.Struct("<8s4I")


def encode_model(params: ToyModelParams) -> bytes:
    head = _MODEL_HEAD.pack(MODEL_MAGIC, params.raw_dim, params.context, params.hidden_dim, NUM_JOINT)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays().values())
    return head + body


def decode_model(data: bytes) -> ToyModelParams:
    data = bytes(data)
    if len(data) < _MODEL_HEAD.size:
        raise ModelFormatError("file too short for model header")
    magic, raw_dim, context, hidden, n_joint = _MODEL_HEAD.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if n_joint != NUM_JOINT:
        raise ModelFormatError(f"expected {NUM_JOINT} joint classes, file has {n_joint}")
    if raw_dim < 1 or hidden < 1 or raw_dim * (2 * context + 1) * hidden > 1 << 28:
        raise ModelFormatError("implausible model dimensions")
    d = raw_dim * (2 * context + 1)
    shapes = {
        "w_enc": (d, hidden),
        "b_enc": (hidden,),
        "w_bin": (hidden,),
        "b_bin": (1,),
        "w_spl": (hidden, NUM_JOINT),
        "b_spl": (NUM_JOINT,),
        "w_tr": (hidden,),
        "b_tr": (1,),
    }
    need = _MODEL_HEAD.size + 8 * sum(math.prod(s) for s in shapes.values())
    if len(data) != need:
        raise ModelFormatError(f"payload is {len(data)} bytes, dimensions require {need}")
    arrays = {}
    off = _MODEL_HEAD.size
    for name in PARAM_NAMES:
        shape = shapes[name]
        count = math.prod(shape)
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
    try:
        return ToyModelParams(raw_dim=raw_dim, context=context, **arrays)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def read_model(path: PathLike) -> ToyModelParams:
    return decode_model(Path(path).read_bytes())


def write_model(path: PathLike, params: ToyModelParams) -> None:
    Path(path).write_bytes(encode_model(params))
