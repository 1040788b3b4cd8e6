"""Frame-level EER, F1, DET points and position-wise error breakdown.

Scores are normalised to *genuineness* (higher = more genuine) before any
computation.  A frame is decided genuine iff ``score >= threshold``.

* FAR: fraction of fake frames accepted as genuine.
* FRR: fraction of genuine frames rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .labelcore import FAKE, FrameClassSeq, segments_from_frames


class MetricError(ValueError):
    """Raised when a metric is undefined for the given pool."""


class Polarity(str, Enum):
    HIGHER_IS_GENUINE = "higher_is_genuine"
    HIGHER_IS_FAKE = "higher_is_fake"

    def flipped(self) -> "Polarity":
        if self is Polarity.HIGHER_IS_GENUINE:
            return Polarity.HIGHER_IS_FAKE
        return Polarity.HIGHER_IS_GENUINE


@dataclass(frozen=True, eq=False)
class ScoreSeq:
    scores: np.ndarray
    polarity: Polarity = Polarity.HIGHER_IS_GENUINE

    def __post_init__(self):
        arr = np.array(self.scores, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise MetricError(f"scores must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise MetricError("scores must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)
        object.__setattr__(self, "polarity", Polarity(self.polarity))

    def genuineness(self) -> np.ndarray:
        if self.polarity is Polarity.HIGHER_IS_GENUINE:
            return self.scores
        return -self.scores

    def __len__(self):
        return int(self.scores.size)


@dataclass(frozen=True)
class EvalPair:
    utt_id: str
    scores: ScoreSeq
    reference: FrameClassSeq

    def __post_init__(self):
        if len(self.scores) != self.reference.T:
            raise MetricError(
                f"{self.utt_id}: {len(self.scores)} scores for {self.reference.T} reference frames"
            )


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    far: float
    frr: float


def _threshold_in_genuineness(threshold: float, polarity: Polarity) -> float:
    return threshold if polarity is Polarity.HIGHER_IS_GENUINE else -threshold


def pool(pairs: Iterable[EvalPair]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate genuineness scores and fake flags over all pairs."""
    pairs = list(pairs)
    if not pairs:
        raise MetricError("no evaluation pairs")
    resolutions = {p.reference.resolution_ms for p in pairs}
    if len(resolutions) > 1:
        raise MetricError(f"inconsistent resolutions in pool: {sorted(resolutions)}")
    polarities = {p.scores.polarity for p in pairs}
    if len(polarities) > 1:
        raise MetricError("mixed score polarities in one pool")
    scores = np.concatenate([p.scores.genuineness() for p in pairs])
    fake = np.concatenate([p.reference.classes == FAKE for p in pairs])
    return scores, fake


def _sweep(scores: np.ndarray, fake: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FAR/FRR at each distinct score (ascending) and at +inf."""
    n_fake = int(fake.sum())
    n_gen = fake.size - n_fake
    if n_fake == 0 or n_gen == 0:
        raise MetricError("pool needs both genuine and fake frames")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    f = fake[order]
    thr, first = np.unique(s, return_index=True)
    # frames strictly below thr[k] are those before index first[k]
    fake_below = np.concatenate(([0], np.cumsum(f)))[first]
    gen_below = first - fake_below
    far = (n_fake - fake_below) / n_fake
    frr = gen_below / n_gen
    thr = np.append(thr, np.inf)
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    return thr, far, frr


def _interpolated_crossing(thr: np.ndarray, far: np.ndarray, frr: np.ndarray) -> tuple[float, float]:
    d = far - frr
    k = int(np.argmax(d <= 0))
    if d[k] == 0 or k == 0:
        return float(far[k]), float(thr[k])
    d0, d1 = d[k - 1], d[k]
    alpha = d0 / (d0 - d1)
    eer = far[k - 1] + alpha * (far[k] - far[k - 1])
    t0, t1 = thr[k - 1], thr[k]
    if math.isinf(t1):
        threshold = t0
    else:
        threshold = t0 + alpha * (t1 - t0)
    return float(eer), float(threshold)


def frame_eer(pairs: Sequence[EvalPair]) -> tuple[float, float]:
    """Pooled (micro) frame EER and the interpolated threshold.

    The sweep runs over sorted distinct pooled scores plus a +inf sentinel.
    Between the two sweep points that bracket the sign change of FAR - FRR,
    the crossing is linearly interpolated.  When the upper bracket is the
    sentinel, the returned threshold is the finite endpoint.  The threshold
    is reported in the pairs' own polarity.
    """
    pairs = list(pairs)
    scores, fake = pool(pairs)
    thr, far, frr = _sweep(scores, fake)
    eer, t = _interpolated_crossing(thr, far, frr)
    if pairs[0].scores.polarity is Polarity.HIGHER_IS_FAKE:
        t = -t
    return eer, t


def macro_frame_eer(pairs: Sequence[EvalPair]) -> float:
    """Mean of per-utterance EERs over utterances holding both classes."""
    values = []
    for p in pairs:
        has_fake = bool(np.any(p.reference.classes == FAKE))
        if has_fake and not np.all(p.reference.classes == FAKE):
            values.append(frame_eer([p])[0])
    if not values:
        raise MetricError("no utterance contains both genuine and fake frames")
    return float(np.mean(values))


def det_curve(pairs: Sequence[EvalPair]) -> list[DetPoint]:
    """DET points from -inf to +inf; the lowest distinct score merges into -inf."""
    pairs = list(pairs)
    scores, fake = pool(pairs)
    thr, far, frr = _sweep(scores, fake)
    thr = thr.copy()
    thr[0] = -np.inf
    if pairs[0].scores.polarity is Polarity.HIGHER_IS_FAKE:
        thr = -thr
    return [DetPoint(float(t), float(a), float(r)) for t, a, r in zip(thr, far, frr)]


@dataclass(frozen=True)
class F1Report:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    tn: int
    degenerate: bool


def frame_f1_report(pairs: Sequence[EvalPair], threshold: float = 0.5) -> F1Report:
    """Counts and F1 with Fake as the positive class.

    A frame is predicted Fake iff its genuineness is below the threshold.
    ``degenerate`` marks the P + R = 0 case, where F1 is reported as 0.
    """
    pairs = list(pairs)
    scores, fake = pool(pairs)
    if scores.size == 0:
        raise MetricError("empty pool")
    t = _threshold_in_genuineness(threshold, pairs[0].scores.polarity)
    pred_fake = scores < t
    tp = int(np.sum(pred_fake & fake))
    fp = int(np.sum(pred_fake & ~fake))
    fn = int(np.sum(~pred_fake & fake))
    tn = int(np.sum(~pred_fake & ~fake))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return F1Report(0.0, precision, recall, tp, fp, fn, tn, True)
    f1 = 2 * precision * recall / (precision + recall)
    return F1Report(f1, precision, recall, tp, fp, fn, tn, False)


def frame_f1(pairs: Sequence[EvalPair], threshold: float = 0.5) -> float:
    return frame_f1_report(pairs, threshold).f1


class PositionCategory(str, Enum):
    FULL_UTTERANCE = "full_utterance"
    START_EDGE = "start_edge"
    END_EDGE = "end_edge"
    MIDDLE = "middle"


CATEGORIES = tuple(PositionCategory)


def classify_fake_segment(start: int, end: int, T: int) -> PositionCategory:
    if start == 0 and end == T:
        return PositionCategory.FULL_UTTERANCE
    if start == 0:
        return PositionCategory.START_EDGE
    if end == T:
        return PositionCategory.END_EDGE
    return PositionCategory.MIDDLE


@dataclass
class CategoryStats:
    segments: int = 0
    fake_frames: int = 0
    errors: int = 0

    @property
    def error_rate(self) -> float:
        return self.errors / self.fake_frames if self.fake_frames else float("nan")


@dataclass
class PositionReport:
    stats: dict[PositionCategory, CategoryStats] = field(
        default_factory=lambda: {c: CategoryStats() for c in CATEGORIES}
    )

    @property
    def total_segments(self) -> int:
        return sum(s.segments for s in self.stats.values())

    @property
    def total_fake_frames(self) -> int:
        return sum(s.fake_frames for s in self.stats.values())

    def share(self, category: PositionCategory) -> float:
        total = self.total_segments
        return self.stats[category].segments / total if total else float("nan")

    def error_rate(self, category: PositionCategory) -> float:
        return self.stats[category].error_rate

    def rows(self) -> list[dict]:
        return [
            {
                "category": c.value,
                "segments": self.stats[c].segments,
                "segment_share": self.share(c),
                "fake_frames": self.stats[c].fake_frames,
                "errors": self.stats[c].errors,
                "error_rate": self.stats[c].error_rate,
            }
            for c in CATEGORIES
        ]


def position_breakdown(pairs: Sequence[EvalPair], threshold: float = 0.5) -> PositionReport:
    """Per-position distribution of fake segments and their frame error rate.

    A fake frame counts as an error when it is decided genuine at
    ``threshold`` (genuineness >= threshold).
    """
    pairs = list(pairs)
    if not pairs:
        raise MetricError("no evaluation pairs")
    report = PositionReport()
    for p in pairs:
        genuine = p.scores.genuineness()
        t = _threshold_in_genuineness(threshold, p.scores.polarity)
        missed = genuine >= t
        T = p.reference.T
        for seg in segments_from_frames(p.reference).segments:
            if seg.cls != FAKE:
                continue
            cat = classify_fake_segment(seg.start_frame, seg.end_frame_exclusive, T)
            st = report.stats[cat]
            st.segments += 1
            st.fake_frames += seg.end_frame_exclusive - seg.start_frame
            st.errors += int(missed[seg.start_frame : seg.end_frame_exclusive].sum())
    return report
