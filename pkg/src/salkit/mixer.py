"""Cross-segment mixing (CSM): splice two utterances at a shared crossover.

Indexing convention
-------------------
The crossover ``lambda_c`` counts frames taken from the first utterance.  The
mask is 1 on 0-based frames ``0 .. lambda_c - 1`` and 0 afterwards, which is
the same set as the 1-based ``t <= lambda_c``.  ``lambda_c`` is drawn
uniformly from ``{1, ..., T - 1}`` so that both parts are non-empty.

After splicing, positional labels are recomputed from the spliced class
channel.  A junction between two runs of the same class therefore merges into
one run and gets no new Start/End pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .labelcore import FrameClassSeq, JointLabelSeq, spl_encode


class MixError(ValueError):
    """Raised for incompatible mixing inputs or configuration."""


@dataclass(frozen=True, eq=False)
class MixSample:
    """Signal plus frame labels, aligned at ``samples_per_frame`` samples per frame.

    ``waveform`` is normally 1-D audio in [-1, 1].  A 2-D array whose first
    axis is the sample axis (e.g. a ``T x d`` per-frame feature matrix with
    ``samples_per_frame=1``) is also accepted so the same splice applies in
    feature space; the amplitude bound is only enforced for 1-D audio.
    """

    waveform: np.ndarray
    labels: FrameClassSeq
    samples_per_frame: int = 1

    def __post_init__(self):
        wav = np.asarray(self.waveform)
        if wav.ndim not in (1, 2):
            raise MixError(f"waveform must be 1-D or 2-D, got shape {wav.shape}")
        spf = int(self.samples_per_frame)
        if spf != self.samples_per_frame or spf < 1:
            raise MixError(f"samples_per_frame must be a positive integer, got {self.samples_per_frame!r}")
        if wav.shape[0] != self.labels.T * spf:
            raise MixError(
                f"waveform length {wav.shape[0]} != T * samples_per_frame = {self.labels.T} * {spf}"
            )
        if wav.ndim == 1 and wav.size and (np.max(np.abs(wav)) > 1.0 or not np.all(np.isfinite(wav))):
            raise MixError("audio amplitudes must be finite and within [-1, 1]")
        wav = np.array(wav, copy=True)
        wav.setflags(write=False)
        object.__setattr__(self, "waveform", wav)
        object.__setattr__(self, "samples_per_frame", spf)

    @property
    def T(self) -> int:
        return self.labels.T

    def __eq__(self, other):
        if not isinstance(other, MixSample):
            return NotImplemented
        return (
            self.samples_per_frame == other.samples_per_frame
            and self.labels == other.labels
            and self.waveform.dtype == other.waveform.dtype
            and np.array_equal(self.waveform, other.waveform)
        )


@dataclass(frozen=True)
class CrossoverMask:
    T: int
    lambda_c: int

    def __post_init__(self):
        if not 1 <= self.lambda_c <= self.T - 1:
            raise MixError(f"crossover {self.lambda_c} outside [1, {self.T - 1}] for T={self.T}")

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.T, dtype=np.int8)
        m[: self.lambda_c] = 1
        return m


@dataclass(frozen=True)
class MixConfig:
    """Batch augmentation settings.

    ``probability`` gates each original sample once; a selected sample is
    mixed exactly ``rounds`` times in sequence.
    """

    probability: float = 0.2
    rounds: int = 2
    seed: int = 0
    allow_self_partner: bool = False

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise MixError(f"probability must be in [0, 1], got {self.probability}")
        if int(self.rounds) != self.rounds or self.rounds < 0:
            raise MixError(f"rounds must be a non-negative integer, got {self.rounds}")


def sample_crossover(T: int, rng: np.random.Generator) -> int:
    if T < 2:
        raise MixError(f"cannot split a sequence of T={T} frames")
    return int(rng.integers(1, T))


def build_mask(T: int, lambda_c: int) -> CrossoverMask:
    return CrossoverMask(int(T), int(lambda_c))


def _check_compatible(a: MixSample, b: MixSample) -> None:
    if a.T != b.T:
        raise MixError(f"frame count mismatch: {a.T} vs {b.T}")
    if a.samples_per_frame != b.samples_per_frame:
        raise MixError(f"samples_per_frame mismatch: {a.samples_per_frame} vs {b.samples_per_frame}")
    if a.labels.resolution_ms != b.labels.resolution_ms:
        raise MixError(f"resolution mismatch: {a.labels.resolution_ms} ms vs {b.labels.resolution_ms} ms")
    if a.waveform.shape != b.waveform.shape:
        raise MixError(f"waveform shape mismatch: {a.waveform.shape} vs {b.waveform.shape}")


def mix_pair(a: MixSample, b: MixSample, lambda_c: int) -> tuple[MixSample, JointLabelSeq]:
    """Take the first ``lambda_c`` frames from ``a`` and the rest from ``b``."""
    _check_compatible(a, b)
    mask = build_mask(a.T, lambda_c)
    cut = mask.lambda_c * a.samples_per_frame
    wav = np.concatenate((a.waveform[:cut], b.waveform[cut:]), axis=0)
    classes = np.concatenate((a.labels.classes[: mask.lambda_c], b.labels.classes[mask.lambda_c :]))
    labels = FrameClassSeq(classes, a.labels.resolution_ms)
    return MixSample(wav, labels, a.samples_per_frame), spl_encode(labels)


def item_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for batch item ``index``; order-free by construction."""
    return np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(index),)))


@dataclass
class _Plan:
    partners: list[int] = field(default_factory=list)
    crossovers: list[int] = field(default_factory=list)


def _plan_item(index: int, n: int, T: int, cfg: MixConfig) -> _Plan | None:
    rng = item_rng(cfg.seed, index)
    if not rng.random() < cfg.probability:
        return None
    plan = _Plan()
    for _ in range(cfg.rounds):
        if cfg.allow_self_partner:
            j = int(rng.integers(0, n))
        else:
            j = int(rng.integers(0, n - 1))
            if j >= index:
                j += 1
        plan.partners.append(j)
        plan.crossovers.append(sample_crossover(T, rng))
    return plan


def augment_batch(batch: list[MixSample], cfg: MixConfig) -> list[tuple[MixSample, JointLabelSeq]]:
    """Return the originals followed by the augmented samples.

    Each original is selected with ``cfg.probability``; a selected sample is
    mixed ``cfg.rounds`` times, each round with a freshly drawn partner from
    the batch and a fresh crossover.  The running result is always the prefix
    side of the splice.  With ``rounds == 0`` nothing is appended.
    """
    batch = list(batch)
    if not batch:
        return []
    for other in batch[1:]:
        _check_compatible(batch[0], other)
    n = len(batch)
    needs_partner = cfg.probability > 0 and cfg.rounds > 0
    if needs_partner and not cfg.allow_self_partner and n < 2:
        raise MixError("batch needs at least 2 samples when self-partnering is disallowed")
    if needs_partner and batch[0].T < 2:
        raise MixError(f"cannot mix utterances of T={batch[0].T} frames")

    out = [(s, spl_encode(s.labels)) for s in batch]
    if not needs_partner:
        return out
    for i, sample in enumerate(batch):
        plan = _plan_item(i, n, sample.T, cfg)
        if plan is None:
            continue
        current = sample
        joint = None
        for j, lam in zip(plan.partners, plan.crossovers):
            current, joint = mix_pair(current, batch[j], lam)
        out.append((current, joint))
    return out
