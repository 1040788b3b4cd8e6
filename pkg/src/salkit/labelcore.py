"""Frame label algebra: runs, positional (SPL) labels, transitions, resampling.

Classes are stored as small integers (``REAL = 0``, ``FAKE = 1``) in read-only
numpy arrays.  The joint SPL label of a frame is ``4 * class + position``,
giving the eight classes ``R-S, R-M, R-E, R-U, F-S, F-M, F-E, F-U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class LabelError(ValueError):
    """Raised when a label structure violates its invariants."""


class FrameClass(IntEnum):
    REAL = 0
    FAKE = 1

    @property
    def symbol(self) -> str:
        return "R" if self is FrameClass.REAL else "F"


class Position(IntEnum):
    START = 0
    MIDDLE = 1
    END = 2
    UNIT = 3

    @property
    def symbol(self) -> str:
        return "SMEU"[self]


class PoolPolicy(str, Enum):
    """How a coarse frame is labelled from the finer material it covers."""

    ANY_FAKE = "any-fake"
    MAJORITY = "majority"


NUM_JOINT = 8
REAL = FrameClass.REAL
FAKE = FrameClass.FAKE


def joint_index(cls: int, pos: int) -> int:
    return 4 * int(cls) + int(pos)


def joint_symbol(index: int) -> str:
    return FrameClass(index // 4).symbol + Position(index % 4).symbol


def _frozen(values, dtype=np.int8) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_resolution(resolution_ms: float) -> float:
    r = float(resolution_ms)
    if not math.isfinite(r) or r <= 0:
        raise LabelError(f"resolution_ms must be a positive finite number, got {resolution_ms!r}")
    return r


@dataclass(frozen=True, eq=False)
class FrameClassSeq:
    """Per-frame Real/Fake classes at a fixed frame resolution."""

    classes: np.ndarray
    resolution_ms: float = 20.0

    def __post_init__(self):
        arr = np.asarray(self.classes)
        if arr.ndim != 1 or arr.size < 1:
            raise LabelError(f"classes must be a non-empty 1-D sequence, got shape {arr.shape}")
        if arr.dtype.kind not in "biu":
            raise LabelError(f"classes must be integers, got dtype {arr.dtype}")
        if np.any((arr != 0) & (arr != 1)):
            raise LabelError("classes must only contain 0 (Real) or 1 (Fake)")
        object.__setattr__(self, "classes", _frozen(arr))
        object.__setattr__(self, "resolution_ms", _check_resolution(self.resolution_ms))

    @classmethod
    def from_string(cls, text: str, resolution_ms: float = 20.0) -> "FrameClassSeq":
        """Build from a compact string such as ``"RRFFR"``."""
        bad = set(text) - {"R", "F"}
        if bad:
            raise LabelError(f"unexpected class symbols {sorted(bad)}")
        return cls(np.array([c == "F" for c in text], dtype=np.int8), resolution_ms)

    def to_string(self) -> str:
        return "".join("F" if c else "R" for c in self.classes)

    def __len__(self) -> int:
        return int(self.classes.size)

    @property
    def T(self) -> int:
        return len(self)

    def __eq__(self, other):
        if not isinstance(other, FrameClassSeq):
            return NotImplemented
        return self.resolution_ms == other.resolution_ms and np.array_equal(self.classes, other.classes)

    def __hash__(self):
        return hash((self.classes.tobytes(), self.resolution_ms))

    def __repr__(self):
        return f"FrameClassSeq({self.to_string()!r}, resolution_ms={self.resolution_ms:g})"


class Segment(NamedTuple):
    start_frame: int
    end_frame_exclusive: int
    cls: FrameClass

    def __len__(self):  # type: ignore[override]
        return self.end_frame_exclusive - self.start_frame


@dataclass(frozen=True)
class SegmentList:
    """Canonical maximal-run decomposition of a frame sequence."""

    segments: tuple[Segment, ...]
    total_frames: int

    def validate(self) -> None:
        if self.total_frames < 1:
            raise LabelError(f"total_frames must be >= 1, got {self.total_frames}")
        if not self.segments:
            raise LabelError("segment list is empty")
        cursor = 0
        prev_cls = None
        for i, seg in enumerate(self.segments):
            if seg.start_frame != cursor:
                kind = "gap" if seg.start_frame > cursor else "overlap"
                raise LabelError(f"segment {i} starts at frame {seg.start_frame}, expected {cursor} ({kind})")
            if seg.end_frame_exclusive <= seg.start_frame:
                raise LabelError(f"segment {i} is empty or reversed: {seg.start_frame}..{seg.end_frame_exclusive}")
            if seg.cls not in (0, 1):
                raise LabelError(f"segment {i} has invalid class {seg.cls!r}")
            if prev_cls is not None and int(seg.cls) == prev_cls:
                raise LabelError(f"segments {i - 1} and {i} share class {FrameClass(seg.cls).name}; runs must be maximal")
            prev_cls = int(seg.cls)
            cursor = seg.end_frame_exclusive
        if cursor != self.total_frames:
            raise LabelError(f"segments end at frame {cursor}, expected total_frames={self.total_frames}")


@dataclass(frozen=True, eq=False)
class JointLabelSeq:
    """Per-frame (class, position) pairs; the 8-way SPL supervision target."""

    classes: np.ndarray
    positions: np.ndarray
    resolution_ms: float = 20.0

    def __post_init__(self):
        cls_seq = FrameClassSeq(self.classes, self.resolution_ms)
        pos = np.asarray(self.positions)
        if pos.shape != cls_seq.classes.shape:
            raise LabelError(f"positions shape {pos.shape} != classes shape {cls_seq.classes.shape}")
        object.__setattr__(self, "classes", cls_seq.classes)
        object.__setattr__(self, "resolution_ms", cls_seq.resolution_ms)
        object.__setattr__(self, "positions", _frozen(pos))
        expected = _positions(cls_seq.classes)
        if not np.array_equal(self.positions, expected):
            bad = int(np.flatnonzero(self.positions != expected)[0])
            raise LabelError(
                f"positional label at frame {bad} is {self.positions[bad]}, run structure requires {expected[bad]}"
            )

    @classmethod
    def from_joint(cls, joint: Iterable[int], resolution_ms: float = 20.0) -> "JointLabelSeq":
        j = np.asarray(list(joint) if not isinstance(joint, np.ndarray) else joint)
        if j.size and (j.min() < 0 or j.max() >= NUM_JOINT):
            raise LabelError("joint indices must lie in [0, 8)")
        return cls(j // 4, j % 4, resolution_ms)

    @property
    def joint(self) -> np.ndarray:
        """Joint class index ``4 * class + position`` per frame."""
        return (4 * self.classes.astype(np.int64) + self.positions).astype(np.int64)

    @property
    def frame_classes(self) -> FrameClassSeq:
        return FrameClassSeq(self.classes, self.resolution_ms)

    def pairs(self) -> list[tuple[FrameClass, Position]]:
        return [(FrameClass(c), Position(p)) for c, p in zip(self.classes, self.positions)]

    def tokens(self) -> list[str]:
        return [joint_symbol(j) for j in self.joint]

    def __len__(self) -> int:
        return int(self.classes.size)

    @property
    def T(self) -> int:
        return len(self)

    def __eq__(self, other):
        if not isinstance(other, JointLabelSeq):
            return NotImplemented
        return (
            self.resolution_ms == other.resolution_ms
            and np.array_equal(self.classes, other.classes)
            and np.array_equal(self.positions, other.positions)
        )

    def __hash__(self):
        return hash((self.joint.tobytes(), self.resolution_ms))

    def __repr__(self):
        return f"JointLabelSeq({' '.join(self.tokens())}, resolution_ms={self.resolution_ms:g})"


class Region(NamedTuple):
    start_s: float
    end_s: float
    cls: FrameClass


TILE_TOL_S = 1e-6


@dataclass(frozen=True)
class TimeAnnotation:
    """Time-stamped Real/Fake regions tiling one utterance."""

    utt_id: str
    regions: tuple[Region, ...]
    duration_s: float

    def __post_init__(self):
        object.__setattr__(
            self, "regions", tuple(Region(float(s), float(e), FrameClass(c)) for s, e, c in self.regions)
        )
        object.__setattr__(self, "duration_s", float(self.duration_s))
        self.validate()

    def validate(self) -> None:
        if not self.regions:
            raise LabelError(f"{self.utt_id}: annotation has no regions")
        cursor = 0.0
        for i, (s, e, _) in enumerate(self.regions):
            if not (math.isfinite(s) and math.isfinite(e)):
                raise LabelError(f"{self.utt_id}: region {i} has non-finite times")
            if abs(s - cursor) > TILE_TOL_S:
                kind = "gap" if s > cursor else "overlap"
                raise LabelError(f"{self.utt_id}: {kind} before region {i} ({cursor:.6f}s vs {s:.6f}s)")
            if e <= s:
                raise LabelError(f"{self.utt_id}: region {i} is empty or reversed ({s}..{e})")
            cursor = e
        if abs(cursor - self.duration_s) > TILE_TOL_S:
            raise LabelError(f"{self.utt_id}: regions end at {cursor:.6f}s but duration is {self.duration_s:.6f}s")


def _run_bounds(classes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start indices and exclusive end indices of maximal runs."""
    T = classes.size
    change = np.flatnonzero(classes[1:] != classes[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [T]))
    return starts, ends


def _positions(classes: np.ndarray) -> np.ndarray:
    starts, ends = _run_bounds(classes)
    pos = np.full(classes.size, Position.MIDDLE, dtype=np.int8)
    pos[ends - 1] = Position.END
    pos[starts] = Position.START
    single = starts[(ends - starts) == 1]
    pos[single] = Position.UNIT
    return pos


def segments_from_frames(frames: FrameClassSeq) -> SegmentList:
    starts, ends = _run_bounds(frames.classes)
    segs = tuple(
        Segment(int(s), int(e), FrameClass(int(frames.classes[s]))) for s, e in zip(starts, ends)
    )
    return SegmentList(segs, frames.T)


def frames_from_segments(segs: SegmentList, resolution_ms: float = 20.0) -> FrameClassSeq:
    segs.validate()
    out = np.empty(segs.total_frames, dtype=np.int8)
    for seg in segs.segments:
        out[seg.start_frame : seg.end_frame_exclusive] = int(seg.cls)
    return FrameClassSeq(out, resolution_ms)


def spl_encode(frames: FrameClassSeq) -> JointLabelSeq:
    """Label every frame with its class and its position inside its run.

    Runs of length one get ``Unit``; longer runs get ``Start``, ``Middle`` ...
    ``End``.  Utterance edges are treated like any other run edge.

    >>> spl_encode(FrameClassSeq.from_string("RFFFRR")).tokens()
    ['RU', 'FS', 'FM', 'FE', 'RS', 'RE']
    """
    return JointLabelSeq(frames.classes, _positions(frames.classes), frames.resolution_ms)


def transition_labels(frames: FrameClassSeq) -> np.ndarray:
    """Boolean flags for the two frames on either side of every class change."""
    c = frames.classes
    flags = np.zeros(c.size, dtype=bool)
    change = c[1:] != c[:-1]
    flags[1:] |= change
    flags[:-1] |= change
    return flags


def _annotation_frame_count(duration_s: float, resolution_ms: float) -> int:
    exact = duration_s * 1000.0 / resolution_ms
    # duration 0.48 s at 160 ms must give 3 frames, not 4 from float noise
    n = math.ceil(exact - 1e-9)
    return max(n, 1)


def labels_from_annotation(
    ann: TimeAnnotation, resolution_ms: float, policy: PoolPolicy | str = PoolPolicy.ANY_FAKE
) -> FrameClassSeq:
    """Rasterise a time annotation onto a frame grid.

    Frame ``t`` covers ``[t*r, (t+1)*r)`` clipped to the utterance duration.
    Region edges lying exactly on a frame edge contribute nothing to the
    earlier frame.
    """
    policy = PoolPolicy(policy)
    r = _check_resolution(resolution_ms)
    if not ann.regions:
        raise LabelError(f"{ann.utt_id}: cannot rasterise an empty annotation")
    T = _annotation_frame_count(ann.duration_s, r)
    frame_start = np.arange(T) * r / 1000.0
    frame_end = np.minimum((np.arange(T) + 1) * r / 1000.0, ann.duration_s)
    fake_overlap = np.zeros(T)
    for s, e, c in ann.regions:
        if c != FAKE:
            continue
        fake_overlap += np.clip(np.minimum(frame_end, e) - np.maximum(frame_start, s), 0.0, None)
    eps = 1e-9
    if policy is PoolPolicy.ANY_FAKE:
        fake = fake_overlap > eps
    else:
        span = frame_end - frame_start
        fake = 2.0 * fake_overlap >= span - eps
    return FrameClassSeq(fake.astype(np.int8), r)


def downsample_labels(
    frames: FrameClassSeq, factor: int, policy: PoolPolicy | str = PoolPolicy.ANY_FAKE
) -> FrameClassSeq:
    """Pool groups of ``factor`` frames into one coarser frame.

    A trailing partial group is kept.  Under ``MAJORITY`` a tie counts as Fake.
    """
    policy = PoolPolicy(policy)
    if int(factor) != factor or factor < 1:
        raise LabelError(f"factor must be an integer >= 1, got {factor!r}")
    factor = int(factor)
    T = frames.T
    groups = math.ceil(T / factor)
    padded = np.zeros(groups * factor, dtype=np.int64)
    padded[:T] = frames.classes
    fake_count = padded.reshape(groups, factor).sum(axis=1)
    sizes = np.full(groups, factor)
    sizes[-1] = T - (groups - 1) * factor
    if policy is PoolPolicy.ANY_FAKE:
        fake = fake_count > 0
    else:
        fake = 2 * fake_count >= sizes
    return FrameClassSeq(fake.astype(np.int8), frames.resolution_ms * factor)


def frames_to_annotation(utt_id: str, frames: FrameClassSeq) -> TimeAnnotation:
    """Inverse rasterisation: one region per maximal run."""
    r = frames.resolution_ms
    regions = [
        Region(seg.start_frame * r / 1000.0, seg.end_frame_exclusive * r / 1000.0, seg.cls)
        for seg in segments_from_frames(frames).segments
    ]
    return TimeAnnotation(utt_id, tuple(regions), frames.T * r / 1000.0)


def concat_runs(lengths: Sequence[int], first: int = 0, resolution_ms: float = 20.0) -> FrameClassSeq:
    """Build alternating runs of the given lengths, starting with class ``first``."""
    parts = [np.full(n, (first + i) % 2, dtype=np.int8) for i, n in enumerate(lengths)]
    return FrameClassSeq(np.concatenate(parts), resolution_ms)
