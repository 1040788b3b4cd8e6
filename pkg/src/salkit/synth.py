"""Synthetic corpora.

``gen_feature_corpus`` builds per-frame feature sequences whose layout is:

* column 0: class content, ``Normal(+margin/2, sigma)`` for Real frames and
  ``Normal(-margin/2, sigma)`` for Fake frames,
* column 1: boundary artifact, ``spike + Normal(0, sigma)`` on frames next to a
  class change and ``Normal(0, sigma)`` elsewhere, for both classes,
* remaining columns: ``Normal(0, sigma)`` noise.

``splice_wav_corpus`` cuts excerpts from real/fake audio pools and joins them
(optionally with an equal-power crossfade) into partially spoofed utterances
with matching time annotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labelcore import (
    FAKE,
    REAL,
    FrameClassSeq,
    JointLabelSeq,
    Region,
    TimeAnnotation,
    spl_encode,
    transition_labels,
)
from .toymodel import FrameFeatureSeq

CONTENT_COL = 0
ARTIFACT_COL = 1


class SynthError(ValueError):
    pass


def _stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(index),)))


@dataclass(frozen=True)
class SynthConfig:
    num_utterances: int = 200
    frames: int = 50
    feature_dim: int = 4
    content_margin: float = 2.0
    boundary_spike: float = 0.0
    noise_sigma: float = 0.5
    min_run: int = 1
    max_run: int = 30
    continue_prob: float = 0.9
    resolution_ms: float = 160.0
    seed: int = 0

    def validate(self) -> None:
        if self.frames < 2:
            raise SynthError(f"frames must be >= 2, got {self.frames}")
        if self.num_utterances < 1:
            raise SynthError("num_utterances must be >= 1")
        if self.feature_dim < 2:
            raise SynthError("feature_dim must be >= 2 (content + artifact columns)")
        if not self.noise_sigma > 0:
            raise SynthError(f"noise_sigma must be > 0, got {self.noise_sigma}")
        if self.content_margin < 0 or self.boundary_spike < 0:
            raise SynthError("content_margin and boundary_spike must be >= 0")
        if self.min_run < 1 or self.max_run < self.min_run:
            raise SynthError(f"infeasible run lengths: min_run={self.min_run}, max_run={self.max_run}")
        if not 0.0 <= self.continue_prob < 1.0:
            raise SynthError(f"continue_prob must be in [0, 1), got {self.continue_prob}")


def run_length_pmf(min_run: int, max_run: int, continue_prob: float) -> np.ndarray:
    """Truncated geometric pmf over ``min_run .. max_run``."""
    k = np.arange(max_run - min_run + 1)
    w = (1.0 - continue_prob) * continue_prob**k
    return w / w.sum()


def sample_classes(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Alternating runs with truncated-geometric lengths; the last run is cut at T."""
    pmf = run_length_pmf(cfg.min_run, cfg.max_run, cfg.continue_prob)
    out = np.empty(cfg.frames, dtype=np.int8)
    cls = int(rng.integers(0, 2))
    pos = 0
    while pos < cfg.frames:
        n = cfg.min_run + int(rng.choice(pmf.size, p=pmf))
        out[pos : pos + n] = cls
        pos += n
        cls = 1 - cls
    return out


def gen_utterance(cfg: SynthConfig, index: int) -> tuple[FrameFeatureSeq, JointLabelSeq]:
    rng = _stream(cfg.seed, index)
    frames = FrameClassSeq(sample_classes(cfg, rng), cfg.resolution_ms)
    sigma = cfg.noise_sigma
    feats = rng.normal(0.0, sigma, size=(cfg.frames, cfg.feature_dim))
    sign = np.where(frames.classes == REAL, 1.0, -1.0)
    feats[:, CONTENT_COL] += sign * cfg.content_margin / 2.0
    feats[:, ARTIFACT_COL] += cfg.boundary_spike * transition_labels(frames)
    return FrameFeatureSeq(feats, cfg.resolution_ms), spl_encode(frames)


def gen_feature_corpus(cfg: SynthConfig) -> list[tuple[FrameFeatureSeq, JointLabelSeq]]:
    cfg.validate()
    return [gen_utterance(cfg, i) for i in range(cfg.num_utterances)]


@dataclass(frozen=True)
class SpliceConfig:
    duration_s: float = 4.0
    crossfade_ms: float = 0.0
    min_segment_s: float = 0.3
    max_segment_s: float = 1.2
    fake_ratio: float = 0.4
    num_utterances: int = 10
    sample_rate: int = 16000
    seed: int = 0

    def validate(self) -> None:
        if self.sample_rate % 100:
            raise SynthError("sample_rate must be a multiple of 100 so boundaries sit on the 10 ms grid")
        if not (self.duration_s > 0 and self.min_segment_s > 0 and self.max_segment_s >= self.min_segment_s):
            raise SynthError("durations must be positive with max_segment_s >= min_segment_s")
        if self.crossfade_ms < 0 or self.crossfade_ms / 1000.0 >= self.min_segment_s:
            raise SynthError("crossfade must be >= 0 and shorter than the minimum segment")
        if not 0.0 <= self.fake_ratio <= 1.0:
            raise SynthError(f"fake_ratio must be in [0, 1], got {self.fake_ratio}")
        if self.num_utterances < 1:
            raise SynthError("num_utterances must be >= 1")

    @property
    def grid(self) -> int:
        """Samples per 10 ms."""
        return self.sample_rate // 100

    def crossfade_samples(self) -> int:
        n = int(round(self.crossfade_ms * self.sample_rate / 1000.0))
        return n + (n % 2)


@dataclass(frozen=True)
class SplicedUtterance:
    utt_id: str
    waveform: np.ndarray
    annotation: TimeAnnotation


def _partition(total: int, lo: int, hi: int, rng: np.random.Generator) -> list[int]:
    """Split ``total`` grid units into pieces in ``[lo, hi]``; the last piece may reach ``2*lo - 1``."""
    pieces = []
    rest = total
    while rest >= 2 * lo:
        top = min(hi, rest - lo)
        d = int(rng.integers(lo, top + 1))
        pieces.append(d)
        rest -= d
    pieces.append(rest)
    return pieces


def _fades(length: int, cf: int, fade_in: bool, fade_out: bool) -> np.ndarray:
    g = np.ones(length)
    if cf:
        r = (np.arange(cf) + 0.5) / cf
        if fade_in:
            g[:cf] *= np.sqrt(r)
        if fade_out:
            g[length - cf :] *= np.sqrt(1.0 - r)
    return g


def splice_utterance(
    real_pool: list[np.ndarray], fake_pool: list[np.ndarray], cfg: SpliceConfig, index: int
) -> SplicedUtterance:
    rng = _stream(cfg.seed, index)
    g = cfg.grid
    total_units = max(1, int(round(cfg.duration_s * 100)))
    lo = max(1, int(round(cfg.min_segment_s * 100)))
    hi = max(lo, int(round(cfg.max_segment_s * 100)))
    pieces = _partition(total_units, lo, hi, rng)
    classes = [FAKE if rng.random() < cfg.fake_ratio else REAL for _ in pieces]
    cf = cfg.crossfade_samples() if len(pieces) > 1 else 0
    half = cf // 2
    n_samples = total_units * g
    out = np.zeros(n_samples)
    start_unit = 0
    for k, (units, cls) in enumerate(zip(pieces, classes)):
        first, last = k == 0, k == len(pieces) - 1
        s = start_unit * g - (0 if first else half)
        e = (start_unit + units) * g + (0 if last else half)
        need = e - s
        pool = fake_pool if cls == FAKE else real_pool
        usable = [i for i, a in enumerate(pool) if a.size >= need]
        if not usable:
            raise SynthError(
                f"no {cls.name.lower()} source has {need} samples for a {units * 10} ms segment"
            )
        src = pool[usable[int(rng.integers(0, len(usable)))]]
        off = int(rng.integers(0, src.size - need + 1))
        excerpt = src[off : off + need]
        if cf:
            excerpt = excerpt * _fades(need, cf, not first, not last)
        out[s:e] += excerpt
        start_unit += units

    regions = []
    unit = 0
    for units, cls in zip(pieces, classes):
        if regions and regions[-1][2] == cls:
            regions[-1][1] = unit + units
        else:
            regions.append([unit, unit + units, cls])
        unit += units
    utt_id = f"splice_{index:05d}"
    ann = TimeAnnotation(
        utt_id, tuple(Region(a / 100, b / 100, c) for a, b, c in regions), total_units / 100
    )
    return SplicedUtterance(utt_id, np.clip(out, -1.0, 1.0), ann)


def splice_wav_corpus(
    real_pool: list[np.ndarray], fake_pool: list[np.ndarray], cfg: SpliceConfig
) -> list[SplicedUtterance]:
    """Build ``cfg.num_utterances`` partially spoofed utterances from audio pools.

    Pools hold mono float arrays at ``cfg.sample_rate``.  Annotation
    boundaries sit on the 10 ms grid, at the crossfade midpoint when
    crossfading.
    """
    cfg.validate()
    min_samples = int(round(cfg.min_segment_s * cfg.sample_rate))
    for name, pool, used in (("real", real_pool, cfg.fake_ratio < 1), ("fake", fake_pool, cfg.fake_ratio > 0)):
        if used and not pool:
            raise SynthError(f"{name} pool is empty")
        for i, a in enumerate(pool):
            a = np.asarray(a)
            if a.ndim != 1:
                raise SynthError(f"{name} pool item {i} is not mono")
            if a.size < min_samples:
                raise SynthError(f"{name} pool item {i} has {a.size} samples, shorter than the minimum segment")
    real_pool = [np.asarray(a, dtype=np.float64) for a in real_pool]
    fake_pool = [np.asarray(a, dtype=np.float64) for a in fake_pool]
    return [splice_utterance(real_pool, fake_pool, cfg, i) for i in range(cfg.num_utterances)]


def tone_noise_pools(
    n_each: int, seconds: float, sample_rate: int, seed: int
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Placeholder pools: harmonic tones as 'real', smoothed noise as 'fake'.

    Values are quantised to the PCM16 grid so WAV round trips are exact.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    real, fake = [], []
    for _ in range(n_each):
        f0 = rng.uniform(100, 300)
        sig = sum(0.3 / k * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) for k in range(1, 4))
        real.append(np.round(sig * 32767) / 32768)
        noise = np.convolve(rng.normal(0, 0.2, n), np.ones(8) / 8, mode="same")
        fake.append(np.round(np.clip(noise, -1, 1) * 32767) / 32768)
    return real, fake
