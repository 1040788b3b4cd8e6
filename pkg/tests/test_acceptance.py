"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed as the tests run and again in the terminal summary.
"""

import itertools
import time

import numpy as np
import pytest

from fuzz import random_annotation_text, random_labels, random_score_file, random_wav
from gradcheck import numeric_gradients, random_case, relative_error
from oracles import eer_oracle_broadcast, spl_oracle
from pipeline import SUBCOMMANDS, run_pipeline, snapshot
from salkit.experiments import BASELINE, SAL, run_shortcut_comparison
from salkit.io import (
    decode_wav,
    encode_wav,
    parse_annotation,
    parse_labels,
    parse_scores,
    serialize_annotation,
    serialize_labels,
    serialize_scores,
)
from salkit.labelcore import (
    FrameClassSeq,
    Region,
    TimeAnnotation,
    downsample_labels,
    frames_from_segments,
    labels_from_annotation,
    segments_from_frames,
    spl_encode,
)
from salkit.metrics import EvalPair, Polarity, ScoreSeq, frame_eer
from salkit.mixer import MixConfig, MixSample, augment_batch, item_rng, mix_pair, sample_crossover
from salkit.synth import SynthConfig, gen_feature_corpus
from salkit.toymodel import LossMode, TrainConfig, forward, gradients, loss_parts, predict_scores, train
from verdicts import record

POSITION_CODES = {"S": 0, "M": 1, "E": 2, "U": 3}


def _joint_oracle(classes):
    return [4 * c + POSITION_CODES[p] for c, p in spl_oracle(classes)]


def _label_case_ok(classes) -> bool:
    f = FrameClassSeq(np.asarray(classes, dtype=np.int8))
    if frames_from_segments(segments_from_frames(f)) != f:
        return False
    return spl_encode(f).joint.tolist() == _joint_oracle(list(classes))


def _runs_sequence(rng, T):
    """Alternating runs with geometric lengths, so long runs appear at large T."""
    out, cls = [], int(rng.integers(0, 2))
    while len(out) < T:
        out += [cls] * int(rng.geometric(float(rng.choice([0.5, 0.1, 0.02]))))
        cls = 1 - cls
    return out[:T]


def test_criterion_1_label_algebra():
    t0 = time.perf_counter()
    bad, n = 0, 0
    for T in range(1, 13):
        for bits in itertools.product((0, 1), repeat=T):
            bad += not _label_case_ok(bits)
            n += 1
    rng = np.random.default_rng(101)
    for i in range(10_000):
        T = int(rng.integers(1, 513))
        classes = rng.integers(0, 2, T).tolist() if i % 2 else _runs_sequence(rng, T)
        bad += not _label_case_ok(classes)
        n += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 10.0
    assert record(1, ok, f"{n} sequences ({n - 10_000} exhaustive T<=12), {bad} mismatches, {elapsed:.2f} s (< 10 s)")


def _random_sample(rng, T, spf):
    classes = rng.integers(0, 2, T).astype(np.int8) if rng.random() < 0.5 else np.array(_runs_sequence(rng, T), np.int8)
    return MixSample(rng.uniform(-1, 1, T * spf), FrameClassSeq(classes), spf)


def test_criterion_2_csm_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    checked = bad = 0
    # direct pairs
    while checked < 7_000:
        T, spf = int(rng.integers(2, 65)), int(rng.integers(1, 5))
        a, b = _random_sample(rng, T, spf), _random_sample(rng, T, spf)
        lam = sample_crossover(T, rng)
        out, joint = mix_pair(a, b, lam)
        spliced = np.concatenate([a.labels.classes[:lam], b.labels.classes[lam:]])
        wave = np.concatenate([a.waveform[: lam * spf], b.waveform[lam * spf :]])
        bad += not (
            joint.joint.tobytes() == spl_encode(FrameClassSeq(spliced)).joint.tobytes()
            and out.labels.classes.tobytes() == spliced.tobytes()
            and out.waveform.tobytes() == wave.tobytes()
        )
        checked += 1
    # batches, each augmented output replayed from its item stream by manual slicing
    while checked < 10_000:
        n, T, spf = int(rng.integers(2, 9)), int(rng.integers(2, 40)), int(rng.integers(1, 4))
        batch = [_random_sample(rng, T, spf) for _ in range(n)]
        cfg = MixConfig(float(rng.choice([0.2, 0.5, 1.0])), int(rng.integers(1, 4)), int(rng.integers(1 << 31)))
        out = augment_batch(batch, cfg)
        expected = []
        for i, s in enumerate(batch):
            r = item_rng(cfg.seed, i)
            if not r.random() < cfg.probability:
                continue
            wave, cls = s.waveform.copy(), s.labels.classes.copy()
            for _ in range(cfg.rounds):
                j = int(r.integers(0, n - 1))
                j = j + 1 if j >= i else j
                lam = int(r.integers(1, T))
                wave = np.concatenate([wave[: lam * spf], batch[j].waveform[lam * spf :]])
                cls = np.concatenate([cls[:lam], batch[j].labels.classes[lam:]])
            expected.append((wave, cls))
        bad += len(out) != n + len(expected)
        for (s, joint), (wave, cls) in zip(out[n:], expected):
            bad += not (
                joint.joint.tobytes() == spl_encode(FrameClassSeq(cls)).joint.tobytes()
                and s.waveform.tobytes() == wave.tobytes()
            )
            checked += 1
        for (s, joint), orig in zip(out[:n], batch):
            bad += not (s == orig and joint == spl_encode(orig.labels))
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 10.0
    assert record(2, ok, f"{checked} mixed outputs, {bad} mismatches, {elapsed:.2f} s (< 10 s)")


def test_criterion_3_crossover_uniformity():
    rng = np.random.default_rng(303)
    draws = np.array([sample_crossover(10, rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=10)[1:] / draws.size
    dev = float(np.max(np.abs(freq - 1 / 9)))
    ok = draws.min() >= 1 and draws.max() <= 9 and dev <= 0.01
    assert record(3, ok, f"1e5 draws at T=10, max |freq - 1/9| = {dev:.5f} (<= 0.01)")


def _eer_pool(rng, n):
    labels = rng.integers(0, 2, n)
    labels[rng.choice(n, 2, replace=False)] = [0, 1]
    kind = rng.integers(0, 3)
    if kind == 0:
        scores = rng.normal(size=n) + rng.uniform(0, 2) * (1 - labels)
    elif kind == 1:
        scores = rng.integers(0, int(rng.integers(2, 30)), n) / 7.0  # heavy ties
    else:
        scores = np.where(labels == 0, rng.uniform(0.3, 1, n), rng.uniform(0, 0.7, n))
    cuts = np.sort(rng.choice(np.arange(1, n), size=min(int(rng.integers(0, 6)), n - 1), replace=False))
    pairs = []
    for k, (a, b) in enumerate(zip(np.r_[0, cuts], np.r_[cuts, n])):
        ref = FrameClassSeq(labels[a:b].astype(np.int8), 20.0)
        pairs.append(EvalPair(f"u{k}", ScoreSeq(scores[a:b]), ref))
    return pairs, scores, labels


def test_criterion_4_eer_oracle():
    rng = np.random.default_rng(404)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 2001))
        pairs, scores, labels = _eer_pool(rng, n)
        eer, thr = frame_eer(pairs)
        o_eer, o_thr = eer_oracle_broadcast(scores[labels == 0], scores[labels == 1])
        worst = max(worst, abs(eer - o_eer), abs(thr - o_thr))
    flip_bad = mono_bad = 0
    transforms = [lambda x: 2.0 * x, np.exp, lambda x: x**3]
    for i in range(100):
        pairs, scores, _ = _eer_pool(rng, int(rng.integers(2, 800)))
        eer, thr = frame_eer(pairs)
        flipped = [EvalPair(p.utt_id, ScoreSeq(-p.scores.scores, Polarity.HIGHER_IS_FAKE), p.reference) for p in pairs]
        e2, t2 = frame_eer(flipped)
        flip_bad += not (e2 == eer and t2 == -thr)
        fn = transforms[i % 3]
        mapped = fn(scores)
        # a strictly increasing map must not merge distinct floats, else the pool really changed
        assert np.unique(mapped).size == np.unique(scores).size
        warped = [EvalPair(p.utt_id, ScoreSeq(fn(p.scores.scores)), p.reference) for p in pairs]
        mono_bad += frame_eer(warped)[0] != eer
    ok = worst <= 1e-9 and flip_bad == 0 and mono_bad == 0
    assert record(
        4, ok, f"500 pools, max |fast - oracle| = {worst:.2e} (<= 1e-9); flip failures {flip_bad}/100, "
        f"monotone failures {mono_bad}/100"
    )


def test_criterion_5_gradients():
    rng = np.random.default_rng(505)
    worst_grad = worst_split = 0.0
    modes = [LossMode.BINARY_ONLY, LossMode.BINARY_PLUS_SPL, LossMode.BINARY_PLUS_TRANSITION]
    for i in range(100):
        params, feats, labels, cfg = random_case(rng, modes[i % 3])
        params = params.with_arrays({k: a / 10 for k, a in params.arrays().items()})
        g = gradients(params, feats, labels, cfg)
        n = numeric_gradients(params, feats, labels, cfg, h=1e-5)
        worst_grad = max(worst_grad, max(relative_error(g[k], n[k]) for k in g))
        parts = loss_parts(forward(params, feats), labels, cfg)
        worst_split = max(worst_split, abs((parts.total - parts.bce) - cfg.lam * parts.aux))
    ok = worst_grad < 1e-4 and worst_split <= 1e-12
    assert record(
        5, ok, f"100 configs, max relative gradient error {worst_grad:.2e} (< 1e-4), "
        f"max |L - L_bce - lam*L_aux| = {worst_split:.1e} (<= 1e-12)"
    )


def test_criterion_6_toy_training():
    t0 = time.perf_counter()
    kw = dict(num_utterances=200, frames=50, content_margin=2.0, boundary_spike=0.0, noise_sigma=0.5)
    train_set = gen_feature_corpus(SynthConfig(seed=11, **kw))
    test_set = gen_feature_corpus(SynthConfig(seed=12, **kw))
    params, _ = train(train_set, TrainConfig(loss_mode=LossMode.BINARY_PLUS_SPL, lam=0.1, seed=0))
    pairs = [EvalPair(str(i), ScoreSeq(predict_scores(params, f)), l.frame_classes) for i, (f, l) in enumerate(test_set)]
    eer, _ = frame_eer(pairs)
    elapsed = time.perf_counter() - t0
    ok = eer < 0.05 and elapsed < 60.0
    assert record(6, ok, f"held-out frame EER {eer:.4f} (< 0.05), {elapsed:.1f} s (< 60 s)")


@pytest.mark.slow
def test_criterion_7_shortcut_analog(tmp_path):
    t0 = time.perf_counter()
    result = run_shortcut_comparison(seeds=range(10))
    csv_path = tmp_path / "position_breakdown.csv"
    result.write_csv(csv_path)
    base, sal = result.median_middle_error(BASELINE), result.median_middle_error(SAL)
    wins = int(np.sum(result.middle_errors(SAL) <= result.middle_errors(BASELINE)))
    text = csv_path.read_text()
    ok = sal <= base and "middle_gap" in text
    assert record(
        7, ok, f"median Middle error sal {sal:.4f} vs binary_only {base:.4f} (gap {base - sal:+.4f}), "
        f"sal <= baseline on {wins}/10 seeds, {time.perf_counter() - t0:.0f} s; CSV {csv_path}"
    )


def test_criterion_8_format_round_trips():
    rng = np.random.default_rng(808)
    bad = 0
    for _ in range(1000):
        text = random_annotation_text(rng)
        bad += serialize_annotation(parse_annotation(text)) != text
        sf = random_score_file(rng)
        s = serialize_scores(sf)
        bad += not (parse_scores(s) == sf and serialize_scores(parse_scores(s)) == s)
        labs = random_labels(rng, "joint" if rng.random() < 0.5 else "class")
        s = serialize_labels(labs)
        bad += not (parse_labels(s) == labs and serialize_labels(parse_labels(s)) == s)
        wav = random_wav(rng)
        data = encode_wav(wav)
        bad += not (decode_wav(data) == wav and encode_wav(decode_wav(data)) == data)
    pool_bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        edges = np.cumsum(np.r_[0, rng.integers(1, 40, n)]) * 20  # ms on the 20 ms grid
        c0 = int(rng.integers(0, 2))
        ann = TimeAnnotation(
            "u", tuple(Region(edges[i] / 1000, edges[i + 1] / 1000, (c0 + i) % 2) for i in range(n)), edges[-1] / 1000
        )
        for policy in ("any-fake", "majority"):
            fine = labels_from_annotation(ann, 20, policy)
            pool_bad += downsample_labels(fine, 8, policy) != labels_from_annotation(ann, 160, policy)
    ok = bad == 0 and pool_bad == 0
    assert record(
        8, ok, f"1000 each annotation/score/label/WAV files, {bad} round-trip failures; "
        f"2000 pooling checks (20 ms -> /8 vs 160 ms), {pool_bad} mismatches"
    )


def test_criterion_9_cli_determinism(tmp_path):
    codes_a = run_pipeline(tmp_path / "a")
    codes_b = run_pipeline(tmp_path / "b")
    sa, sb = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    differing = sorted(k for k in sa.keys() | sb.keys() if sa.get(k) != sb.get(k))
    ran = sorted({k.split(":")[1] for k in codes_a})
    ok = (
        all(c == 0 for c in codes_a.values())
        and codes_a == codes_b
        and not differing
        and ran == SUBCOMMANDS
        and len(SUBCOMMANDS) == 9
    )
    assert record(
        9, ok, f"{len(ran)} subcommands x 2 runs, {len(sa)} output files, {len(differing)} differ"
        + (f": {differing[:5]}" if differing else "")
    )
