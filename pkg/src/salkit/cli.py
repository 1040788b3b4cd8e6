"""Command-line front end.

Every subcommand writes its outputs plus ``manifest.json`` (the resolved
arguments) into ``--out-dir``.  Exit codes: 0 success, 1 usage error, 2 data or
format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import io as fio
from .labelcore import (
    FrameClassSeq,
    JointLabelSeq,
    LabelError,
    PoolPolicy,
    frames_to_annotation,
    labels_from_annotation,
    spl_encode,
)
from .metrics import (
    EvalPair,
    MetricError,
    ScoreSeq,
    det_curve,
    frame_eer,
    frame_f1_report,
    macro_frame_eer,
    position_breakdown,
)
from .mixer import MixConfig, MixError, MixSample, augment_batch, item_rng, mix_pair, sample_crossover
from .synth import SpliceConfig, SynthConfig, SynthError, gen_feature_corpus, splice_wav_corpus, tone_noise_pools
from .toymodel import (
    FrameFeatureSeq,
    LossMode,
    ModelError,
    NumericError,
    Optimizer,
    TrainConfig,
    forward,
    saliency,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- helpers -------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args) -> None:
    resolved = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir")}
    manifest = {"tool": "salkit", "version": __version__, "command": args.command, "args": resolved}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, float):
        return fio.format_score(v) if np.isfinite(v) else ("nan" if np.isnan(v) else ("inf" if v > 0 else "-inf"))
    return v


def _class_labels(path: Path) -> dict[str, FrameClassSeq]:
    labels = fio.read_labels(path)
    return {k: (v.frame_classes if isinstance(v, JointLabelSeq) else v) for k, v in labels.items()}


def _reference(args, resolution_ms: float) -> dict[str, FrameClassSeq]:
    if args.labels:
        refs = _class_labels(args.labels)
        for utt, seq in refs.items():
            if seq.resolution_ms != resolution_ms:
                raise DataError(f"{utt}: label resolution {seq.resolution_ms} ms != score resolution {resolution_ms} ms")
        return refs
    if args.annotation:
        return {
            a.utt_id: labels_from_annotation(a, resolution_ms, args.label_policy)
            for a in fio.read_annotation(args.annotation)
        }
    raise UsageError("one of --annotation or --labels is required")


def _eval_pairs(args) -> list[EvalPair]:
    sf = fio.read_scores(args.scores)
    if args.resolution_ms is not None and args.resolution_ms != sf.resolution_ms:
        raise DataError(f"--resolution-ms {args.resolution_ms} disagrees with score file ({sf.resolution_ms} ms)")
    refs = _reference(args, sf.resolution_ms)
    pairs = []
    for utt, scores in sf.scores.items():
        if utt not in refs:
            raise DataError(f"no reference labels for utterance {utt!r}")
        ref = refs[utt]
        if ref.T != scores.size:
            raise DataError(f"{utt}: {scores.size} scores vs {ref.T} reference frames")
        pairs.append(EvalPair(utt, ScoreSeq(scores, sf.polarity), ref))
    if not pairs:
        raise DataError("score file holds no utterances")
    return pairs


def _resolution(args, default: float) -> float:
    return float(args.resolution_ms) if args.resolution_ms is not None else default


def _load_feature_corpus(path: Path) -> tuple[list[str], list[FrameFeatureSeq], list[JointLabelSeq | None]]:
    feats_path = path / "features.npy" if path.is_dir() else path
    labels_path = feats_path.parent / "labels.txt"
    try:
        arr = np.load(feats_path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read features from {feats_path}: {exc}") from None
    if arr.ndim != 3:
        raise DataError(f"features.npy must be (utterances, frames, dim), got shape {arr.shape}")
    if labels_path.exists():
        labels = _class_labels(labels_path)
        if len(labels) != arr.shape[0]:
            raise DataError(f"{len(labels)} label rows vs {arr.shape[0]} feature sequences")
        ids = list(labels)
        res = next(iter(labels.values())).resolution_ms
        joints = [spl_encode(labels[u]) for u in ids]
    else:
        ids = [f"utt_{i:05d}" for i in range(arr.shape[0])]
        res = 20.0
        joints = [None] * arr.shape[0]
    feats = [FrameFeatureSeq(arr[i], res) for i in range(arr.shape[0])]
    return ids, feats, joints


# -- subcommands ---------------------------------------------------------------


def cmd_spl_encode(args) -> int:
    out = _out_dir(args)
    if args.labels:
        classes = _class_labels(args.labels)
    elif args.annotation:
        if args.resolution_ms is None:
            raise UsageError("--resolution-ms is required with --annotation")
        classes = {
            a.utt_id: labels_from_annotation(a, args.resolution_ms, args.label_policy)
            for a in fio.read_annotation(args.annotation)
        }
    else:
        raise UsageError("one of --labels or --annotation is required")
    if not classes:
        raise DataError("no utterances in input")
    joint = {u: spl_encode(c) for u, c in classes.items()}
    fio.write_labels(out / "joint_labels.txt", joint)
    _write_manifest(out, args)
    print(f"encoded {len(joint)} utterances")
    return EXIT_OK


def _wav_sample(wav_path: Path, ann, resolution_ms: float) -> MixSample:
    audio = fio.read_wav(wav_path)
    spf_exact = audio.sample_rate * resolution_ms / 1000.0
    spf = int(round(spf_exact))
    if abs(spf - spf_exact) > 1e-9 or spf < 1:
        raise DataError(f"{resolution_ms} ms is not a whole number of samples at {audio.sample_rate} Hz")
    labels = labels_from_annotation(ann, resolution_ms, PoolPolicy.ANY_FAKE)
    wav = audio.to_float()
    need = labels.T * spf
    if wav.size > need:
        raise DataError(f"{wav_path.name}: audio has {wav.size} samples, annotation covers {need}")
    wav = np.pad(wav, (0, need - wav.size))
    return MixSample(wav, labels, spf)


def cmd_mix(args) -> int:
    out = _out_dir(args)
    res = _resolution(args, 160.0)
    if args.wav_a or args.wav_b:
        if not (args.wav_a and args.wav_b and args.annotation):
            raise UsageError("--wav-a, --wav-b and --annotation are required together")
        anns = {a.utt_id: a for a in fio.read_annotation(args.annotation)}
        ids = []
        for p in (args.wav_a, args.wav_b):
            if p.stem not in anns:
                raise DataError(f"no annotation for {p.stem!r}")
            ids.append(p.stem)
        rate = fio.read_wav(args.wav_a).sample_rate
        if fio.read_wav(args.wav_b).sample_rate != rate:
            raise DataError("sample rate mismatch between inputs")
        a = _wav_sample(args.wav_a, anns[ids[0]], res)
        b = _wav_sample(args.wav_b, anns[ids[1]], res)
    elif args.labels_a and args.labels_b:
        la = _class_labels(args.labels_a)
        lb = _class_labels(args.labels_b)
        if not la or not lb:
            raise DataError("empty label file")
        ids = [next(iter(la)), next(iter(lb))]
        a = MixSample(np.zeros(la[ids[0]].T), la[ids[0]], 1)
        b = MixSample(np.zeros(lb[ids[1]].T), lb[ids[1]], 1)
        rate = None
    else:
        raise UsageError("give --wav-a/--wav-b/--annotation or --labels-a/--labels-b")
    if a.T != b.T or a.waveform.shape != b.waveform.shape:
        raise DataError(
            f"dimension mismatch: {ids[0]} has {a.T} frames ({a.waveform.shape[0]} samples), "
            f"{ids[1]} has {b.T} frames ({b.waveform.shape[0]} samples)"
        )
    lam = args.crossover if args.crossover is not None else sample_crossover(a.T, item_rng(args.seed, 0))
    mixed, joint = mix_pair(a, b, lam)
    name = args.name or f"{ids[0]}__{ids[1]}"
    fio.write_labels(out / "mixed_labels.txt", {name: mixed.labels})
    fio.write_labels(out / "mixed_joint_labels.txt", {name: joint})
    if rate is not None:
        fio.write_wav(out / f"{name}.wav", fio.WavAudio.from_float(mixed.waveform, rate))
        fio.write_annotation(out / "mixed_annotation.txt", [frames_to_annotation(name, mixed.labels)])
    _write_manifest(out, args)
    print(f"crossover {lam} of {a.T} frames")
    return EXIT_OK


def cmd_augment(args) -> int:
    out = _out_dir(args)
    classes = _class_labels(args.labels)
    if not classes:
        raise DataError("no utterances in label file")
    ids = list(classes)
    if args.wav_dir:
        rates = set()
        samples = []
        for u in ids:
            audio = fio.read_wav(args.wav_dir / f"{u}.wav")
            rates.add(audio.sample_rate)
            seq = classes[u]
            spf = int(round(audio.sample_rate * seq.resolution_ms / 1000.0))
            wav = audio.to_float()
            if wav.size > seq.T * spf:
                raise DataError(f"{u}: audio longer than its {seq.T} label frames")
            samples.append(MixSample(np.pad(wav, (0, seq.T * spf - wav.size)), seq, spf))
        if len(rates) != 1:
            raise DataError(f"mixed sample rates {sorted(rates)}")
        rate = rates.pop()
    else:
        samples = [MixSample(np.zeros(classes[u].T), classes[u], 1) for u in ids]
        rate = None
    cfg = MixConfig(args.probability, args.rounds, args.seed, args.allow_self_partner)
    result = augment_batch(samples, cfg)
    names = ids + [f"aug_{i:05d}" for i in range(len(result) - len(ids))]
    fio.write_labels(out / "augmented_labels.txt", {n: s.labels for n, (s, _) in zip(names, result)})
    fio.write_labels(out / "augmented_joint_labels.txt", {n: j for n, (_, j) in zip(names, result)})
    if rate is not None:
        wav_out = out / "wav"
        wav_out.mkdir(exist_ok=True)
        for n, (s, _) in zip(names[len(ids) :], result[len(ids) :]):
            fio.write_wav(wav_out / f"{n}.wav", fio.WavAudio.from_float(s.waveform, rate))
    _write_manifest(out, args)
    print(f"{len(ids)} originals, {len(result) - len(ids)} augmented")
    return EXIT_OK


def cmd_score(args) -> int:
    out = _out_dir(args)
    pairs = _eval_pairs(args)
    if args.average == "macro":
        eer, eer_thr = macro_frame_eer(pairs), float("nan")
    else:
        eer, eer_thr = frame_eer(pairs)
    f1 = frame_f1_report(pairs, args.threshold)
    det = det_curve(pairs)
    _write_csv(out / "det.csv", ["threshold", "far", "frr"], [(p.threshold, p.far, p.frr) for p in det])
    _write_csv(
        out / "metrics.csv",
        ["metric", "value"],
        [
            ("eer", eer),
            ("eer_threshold", eer_thr),
            ("f1", f1.f1),
            ("precision", f1.precision),
            ("recall", f1.recall),
            ("f1_threshold", float(args.threshold)),
            ("f1_degenerate", int(f1.degenerate)),
        ],
    )
    _write_manifest(out, args)
    print(f"EER {eer:.6f}")
    print(f"F1 {f1.f1:.6f}" + (" (degenerate: no predicted or reference fakes)" if f1.degenerate else ""))
    return EXIT_OK


def cmd_breakdown(args) -> int:
    out = _out_dir(args)
    pairs = _eval_pairs(args)
    report = position_breakdown(pairs, args.threshold)
    header = ["system", "category", "segments", "segment_share", "fake_frames", "errors", "error_rate"]
    _write_csv(out / "breakdown.csv", header, [[args.system] + list(r.values()) for r in report.rows()])
    _write_manifest(out, args)
    for r in report.rows():
        print(f"{r['category']:<15} share {r['segment_share']:.4f}  error {r['error_rate']:.4f}")
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    out = _out_dir(args)
    if args.kind == "features":
        cfg = SynthConfig(
            num_utterances=args.num_utterances,
            frames=args.frames,
            feature_dim=args.feature_dim,
            content_margin=args.content_margin,
            boundary_spike=args.boundary_spike,
            noise_sigma=args.noise_sigma,
            min_run=args.min_run,
            max_run=args.max_run,
            continue_prob=args.continue_prob,
            resolution_ms=_resolution(args, 160.0),
            seed=args.seed,
        )
        corpus = gen_feature_corpus(cfg)
        np.save(out / "features.npy", np.stack([f.features for f, _ in corpus]), allow_pickle=False)
        fio.write_labels(out / "labels.txt", {f"syn_{i:05d}": l.frame_classes for i, (_, l) in enumerate(corpus)})
        print(f"wrote {len(corpus)} feature utterances")
    else:
        cfg = SpliceConfig(
            duration_s=args.duration,
            crossfade_ms=args.crossfade_ms,
            min_segment_s=args.min_segment,
            max_segment_s=args.max_segment,
            fake_ratio=args.fake_ratio,
            num_utterances=args.num_utterances,
            sample_rate=args.sample_rate,
            seed=args.seed,
        )
        if args.real_dir and args.fake_dir:
            real = _wav_pool(args.real_dir, cfg.sample_rate)
            fake = _wav_pool(args.fake_dir, cfg.sample_rate)
        elif args.real_dir or args.fake_dir:
            raise UsageError("--real-dir and --fake-dir go together")
        else:
            real, fake = tone_noise_pools(4, cfg.max_segment_s * 2 + 1.0, cfg.sample_rate, args.seed)
        utts = splice_wav_corpus(real, fake, cfg)
        wav_dir = out / "wav"
        wav_dir.mkdir(exist_ok=True)
        for u in utts:
            fio.write_wav(wav_dir / f"{u.utt_id}.wav", fio.WavAudio.from_float(u.waveform, cfg.sample_rate))
        fio.write_annotation(out / "annotations.txt", [u.annotation for u in utts])
        print(f"wrote {len(utts)} spliced utterances")
    _write_manifest(out, args)
    return EXIT_OK


def _wav_pool(directory: Path, rate: int) -> list[np.ndarray]:
    pool = []
    for p in sorted(directory.glob("*.wav")):
        audio = fio.read_wav(p)
        if audio.sample_rate != rate:
            raise DataError(f"{p.name}: {audio.sample_rate} Hz, expected {rate} Hz")
        pool.append(audio.to_float())
    if not pool:
        raise DataError(f"no .wav files in {directory}")
    return pool


def cmd_train(args) -> int:
    out = _out_dir(args)
    ids, feats, joints = _load_feature_corpus(args.corpus)
    if any(j is None for j in joints):
        raise DataError("training corpus needs labels.txt next to features.npy")
    cfg = TrainConfig(
        lam=args.lam,
        loss_mode=LossMode(args.loss_mode),
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        context=args.context,
        hidden_dim=args.hidden_dim,
        optimizer=Optimizer(args.optimizer),
    )
    mix_cfg = MixConfig(args.probability, args.rounds, args.seed) if args.csm else None
    params, hist = train(list(zip(feats, joints)), cfg, mix_cfg)
    fio.write_model(out / "model.bin", params)
    _write_csv(
        out / "history.csv",
        ["epoch", "loss", "bce", "aux"],
        [(i, a, b, c) for i, (a, b, c) in enumerate(zip(hist.epoch_loss, hist.epoch_bce, hist.epoch_aux))],
    )
    _write_manifest(out, args)
    if hist.epoch_loss:
        print(f"final training loss {hist.epoch_loss[-1]:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    out = _out_dir(args)
    params = fio.read_model(args.model)
    ids, feats, _ = _load_feature_corpus(args.corpus)
    scores = {u: forward(params, f).p_genuine for u, f in zip(ids, feats)}
    sf = fio.ScoreFile(fio.Polarity.HIGHER_IS_GENUINE, feats[0].resolution_ms, scores)
    fio.write_scores(out / "scores.tsv", sf)
    _write_manifest(out, args)
    print(f"scored {len(ids)} utterances")
    return EXIT_OK


def cmd_saliency(args) -> int:
    out = _out_dir(args)
    params = fio.read_model(args.model)
    ids, feats, _ = _load_feature_corpus(args.corpus)
    rows = []
    for u, f in zip(ids, feats):
        att = saliency(params, f)
        p = forward(params, f).p_genuine
        rows.extend((u, t, float(att[t]), float(p[t])) for t in range(f.T))
    _write_csv(out / "saliency.csv", ["utt_id", "frame", "attribution", "p_genuine"], rows)
    _write_manifest(out, args)
    print(f"attributions for {len(ids)} utterances")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--resolution-ms", type=float, default=None, help="frame resolution in milliseconds")
    common.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory")

    parser = _Parser(prog="salkit", description="Segment-aware partial-spoof localisation toolkit")
    parser.add_argument("--version", action="version", version=f"salkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    def reference_args(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--annotation", type=Path)
        g.add_argument("--labels", type=Path)
        p.add_argument("--label-policy", choices=[x.value for x in PoolPolicy], default=PoolPolicy.ANY_FAKE.value)

    p = add("spl-encode", cmd_spl_encode, "class labels -> joint (class, position) labels")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--labels", type=Path)
    g.add_argument("--annotation", type=Path)
    p.add_argument("--label-policy", choices=[x.value for x in PoolPolicy], default=PoolPolicy.ANY_FAKE.value)

    p = add("mix", cmd_mix, "splice two utterances at one crossover")
    p.add_argument("--wav-a", type=Path)
    p.add_argument("--wav-b", type=Path)
    p.add_argument("--annotation", type=Path)
    p.add_argument("--labels-a", type=Path)
    p.add_argument("--labels-b", type=Path)
    p.add_argument("--crossover", type=int, default=None, help="frames taken from A (default: sampled)")
    p.add_argument("--name", default=None)

    p = add("augment", cmd_augment, "batch cross-segment mixing")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--wav-dir", type=Path, default=None)
    p.add_argument("--probability", type=float, default=0.2)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--allow-self-partner", action="store_true")

    p = add("score", cmd_score, "frame-level EER / F1 / DET points")
    p.add_argument("--scores", type=Path, required=True)
    reference_args(p)
    p.add_argument("--threshold", type=float, default=0.5, help="F1 operating point (default 0.5)")
    p.add_argument("--average", choices=["micro", "macro"], default="micro")

    p = add("breakdown", cmd_breakdown, "position-wise fake segment error report")
    p.add_argument("--scores", type=Path, required=True)
    reference_args(p)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--system", default="system")

    p = add("gen-synth", cmd_gen_synth, "synthetic feature or WAV corpora")
    p.add_argument("kind", choices=["features", "wav"])
    p.add_argument("--num-utterances", type=int, default=200)
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--feature-dim", type=int, default=4)
    p.add_argument("--content-margin", type=float, default=2.0)
    p.add_argument("--boundary-spike", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.5)
    p.add_argument("--min-run", type=int, default=1)
    p.add_argument("--max-run", type=int, default=30)
    p.add_argument("--continue-prob", type=float, default=0.9)
    p.add_argument("--duration", type=float, default=4.0)
    p.add_argument("--crossfade-ms", type=float, default=0.0)
    p.add_argument("--min-segment", type=float, default=0.3)
    p.add_argument("--max-segment", type=float, default=1.2)
    p.add_argument("--fake-ratio", type=float, default=0.4)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--real-dir", type=Path, default=None)
    p.add_argument("--fake-dir", type=Path, default=None)

    p = add("train", cmd_train, "train the toy multi-task model")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--loss-mode", choices=[m.value for m in LossMode], default=LossMode.BINARY_PLUS_SPL.value)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--context", type=int, default=0, help="context frames stacked per side")
    p.add_argument("--hidden-dim", type=int, default=16)
    p.add_argument("--optimizer", choices=[o.value for o in Optimizer], default=Optimizer.SGD.value)
    p.add_argument("--csm", action="store_true", help="apply cross-segment mixing to each mini-batch")
    p.add_argument("--probability", type=float, default=0.2)
    p.add_argument("--rounds", type=int, default=2)

    p = add("predict", cmd_predict, "model + features -> score file")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)

    p = add("saliency", cmd_saliency, "model + features -> per-frame attribution CSV")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, fio.FormatError, LabelError, MetricError, MixError, ModelError, SynthError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
