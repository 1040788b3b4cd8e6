import io as stdio
import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzz import random_annotation_text, random_labels, random_score_file, random_wav
from salkit.io import (
    MODEL_MAGIC,
    AnnotationFormatError,
    FormatError,
    LabelFormatError,
    ModelFormatError,
    ScoreFormatError,
    WavAudio,
    WavFormatError,
    decode_model,
    decode_wav,
    encode_model,
    encode_wav,
    format_score,
    parse_annotation,
    parse_labels,
    parse_scores,
    read_annotation,
    read_labels,
    read_model,
    read_scores,
    read_wav,
    serialize_annotation,
    serialize_labels,
    serialize_scores,
    write_annotation,
    write_labels,
    write_model,
    write_scores,
    write_wav,
)
from salkit.labelcore import FAKE, REAL, FrameClassSeq, Region
from salkit.metrics import Polarity
from salkit.toymodel import init_params


# -- annotations ------------------------------------------------------------------


def test_annotation_example():
    (a,) = parse_annotation("u1 0.00-1.23-T 1.23-2.50-F\n")
    assert a.utt_id == "u1" and a.duration_s == 2.5
    assert a.regions == (Region(0.0, 1.23, REAL), Region(1.23, 2.5, FAKE))
    assert serialize_annotation([a]) == "u1 0.00-1.23-T 1.23-2.50-F\n"


def test_annotation_gap_error_has_position():
    with pytest.raises(AnnotationFormatError, match="gap") as ei:
        parse_annotation("u1 0.00-1.00-T 1.10-2.00-F\n")
    assert ei.value.line == 1 and ei.value.column == 16


@pytest.mark.parametrize(
    "text,needle",
    [
        ("u1 0.00-1.00-T 0.90-2.00-F", "overlap"),
        ("u1 0.00-1.0-T", "line 1"),
        ("u1 0.00-1.00-X", "line 1"),
        ("u1 0.10-1.00-T", "0.00"),
        ("u1", "no regions"),
        ("u1 0.00-1.00-T\nu1 0.00-1.00-F", "duplicate"),
        ("u1 0.00-0.00-T", "line 1"),
    ],
)
def test_annotation_errors(text, needle):
    with pytest.raises(AnnotationFormatError, match=needle):
        parse_annotation(text)


def test_annotation_fuzz_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        text = random_annotation_text(rng)
        anns = parse_annotation(text)
        assert serialize_annotation(anns) == text
        assert parse_annotation(serialize_annotation(anns)) == anns


def test_annotation_file_io(tmp_path):
    anns = parse_annotation("a 0.00-0.50-F 0.50-3.20-T\nb 0.00-1.00-T\n")
    write_annotation(tmp_path / "x.txt", anns)
    assert read_annotation(tmp_path / "x.txt") == anns
    assert (tmp_path / "x.txt").read_bytes() == b"a 0.00-0.50-F 0.50-3.20-T\nb 0.00-1.00-T\n"


# -- scores -------------------------------------------------------------------------


def test_score_example():
    text = "#polarity=higher_is_fake\n#resolution_ms=160\nutt_id\tframe\tscore\na\t0\t0.5\na\t1\t-2\n"
    sf = parse_scores(text)
    assert sf.polarity is Polarity.HIGHER_IS_FAKE and sf.resolution_ms == 160
    assert sf.scores["a"].tolist() == [0.5, -2.0]
    assert serialize_scores(sf) == text


def test_format_score_precision():
    assert format_score(1 / 3) == "0.333333333"
    assert format_score(123456789012.0) == "123456789000"
    assert format_score(-0.0) == "0"
    assert float(format_score(np.pi)) == pytest.approx(np.pi, rel=5e-9)


@pytest.mark.parametrize(
    "text,needle",
    [
        ("utt_id\tframe\tscore\na\t0\t1\n", "polarity"),
        ("#polarity=higher_is_genuine\n#resolution_ms=20\nutt_id\tframe\tscore\na\t1\t1\n", "frame"),
        ("#polarity=higher_is_genuine\n#resolution_ms=20\nutt_id\tframe\tscore\na\t0\t1\na\t0\t2\n", "frame"),
        ("#polarity=higher_is_genuine\n#resolution_ms=20\nutt_id\tframe\tscore\na\t0\tnan\n", "number"),
        ("#polarity=higher_is_genuine\n#resolution_ms=20\nutt_id\tframe\tscore\na\t0\t1\nb\t0\t1\na\t1\t1\n", "more than one block"),
        ("#polarity=sideways\n#resolution_ms=20\nutt_id\tframe\tscore\n", "polarity"),
    ],
)
def test_score_errors(text, needle):
    with pytest.raises(ScoreFormatError, match=needle):
        parse_scores(text)


def test_score_fuzz_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    for i in range(1000):
        sf = random_score_file(rng)
        text = serialize_scores(sf)
        back = parse_scores(text)
        assert back == sf  # zero drift
        assert serialize_scores(back) == text
    write_scores(tmp_path / "s.tsv", sf)
    assert read_scores(tmp_path / "s.tsv") == sf


def test_score_arbitrary_floats_drift_bounded():
    rng = np.random.default_rng(2)
    for _ in range(200):
        x = rng.normal(0, 10.0 ** rng.integers(-8, 8))
        y = float(format_score(x))
        assert abs(y - x) <= 5e-9 * abs(x)
        assert format_score(y) == format_score(x)


# -- labels -------------------------------------------------------------------------


def test_label_examples():
    text = "#kind=joint\n#resolution_ms=20\nu1 RS RE FS FM FE RU\n"
    labs = parse_labels(text)
    assert labs["u1"].tokens() == ["RS", "RE", "FS", "FM", "FE", "RU"]
    assert serialize_labels(labs) == text
    labs = parse_labels("#kind=class\n#resolution_ms=160\nu1 RRRFFR\n")
    assert labs["u1"] == FrameClassSeq.from_string("RRRFFR", 160)


@pytest.mark.parametrize(
    "text",
    [
        "#kind=class\n#resolution_ms=20\nu1 RRX\n",
        "#kind=joint\n#resolution_ms=20\nu1 RS RS\n",
        "#kind=maybe\n#resolution_ms=20\nu1 R\n",
        "#kind=class\nu1 R\n",
        "#kind=class\n#resolution_ms=20\nu1 R\nu1 F\n",
    ],
)
def test_label_errors(text):
    with pytest.raises(LabelFormatError):
        parse_labels(text)


@pytest.mark.parametrize("kind", ["class", "joint"])
def test_label_fuzz_round_trip(kind, tmp_path):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        labs = random_labels(rng, kind)
        text = serialize_labels(labs)
        back = parse_labels(text)
        assert back == labs and serialize_labels(back) == text
    write_labels(tmp_path / "l.txt", labs)
    assert read_labels(tmp_path / "l.txt") == labs


# -- WAV --------------------------------------------------------------------------


def test_wav_sine_round_trip(tmp_path):
    t = np.arange(16000) / 16000
    audio = WavAudio.from_float(0.5 * np.sin(2 * np.pi * 440 * t))
    write_wav(tmp_path / "a.wav", audio)
    back = read_wav(tmp_path / "a.wav")
    assert back == audio and back.sample_rate == 16000


def test_wav_fuzz_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        a = random_wav(rng)
        data = encode_wav(a)
        back = decode_wav(data)
        assert back == a and encode_wav(back) == data


def _raw_wav(channels, width, frames=b"\x00\x00\x00\x00"):
    buf = stdio.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(16000)
        w.writeframes(frames)
    return buf.getvalue()


def test_wav_rejects_stereo_and_non_pcm16():
    with pytest.raises(WavFormatError, match="mono required"):
        decode_wav(_raw_wav(2, 2))
    with pytest.raises(WavFormatError, match="PCM16 required"):
        decode_wav(_raw_wav(1, 1))
    with pytest.raises(WavFormatError):
        decode_wav(b"RIFF\x00\x00")
    with pytest.raises(WavFormatError, match="mono required"):
        WavAudio(np.zeros((2, 2), np.int16))


# -- model ------------------------------------------------------------------------


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    p = init_params(3, 7, 2, rng)
    data = encode_model(p)
    assert data.startswith(MODEL_MAGIC)
    assert decode_model(data) == p
    write_model(tmp_path / "m.bin", p)
    assert read_model(tmp_path / "m.bin") == p
    with pytest.raises(ModelFormatError):
        decode_model(data[:-1])
    with pytest.raises(ModelFormatError):
        decode_model(b"XXXXXXXX" + data[8:])
    with pytest.raises(ModelFormatError):
        decode_model(data + b"\x00")


# -- totality and canonical form ---------------------------------------------------

PARSERS = [parse_annotation, parse_scores, parse_labels, decode_wav, decode_model]


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_parsers_total_on_random_bytes(data):
    for parse in PARSERS:
        try:
            parse(data)
        except FormatError:
            pass


def _mutations(rng, valid: bytes, n):
    for _ in range(n):
        b = bytearray(valid)
        for _ in range(int(rng.integers(1, 4))):
            op = rng.integers(0, 3)
            i = int(rng.integers(0, len(b) + 1))
            if op == 0 and b:
                del b[min(i, len(b) - 1)]
            elif op == 1:
                b.insert(i, int(rng.integers(0, 256)))
            elif b:
                b[min(i, len(b) - 1)] = int(rng.integers(0, 256))
        yield bytes(b)


def test_parsers_total_on_mutated_valid_files():
    rng = np.random.default_rng(6)
    seeds = [
        (parse_annotation, random_annotation_text(rng).encode()),
        (parse_scores, serialize_scores(random_score_file(rng)).encode()),
        (parse_labels, serialize_labels(random_labels(rng, "joint")).encode()),
        (parse_labels, serialize_labels(random_labels(rng, "class")).encode()),
        (decode_wav, encode_wav(random_wav(rng))),
        (decode_model, encode_model(init_params(2, 3, 1, rng))),
    ]
    for parse, valid in seeds:
        for data in _mutations(rng, valid, 400):
            try:
                parse(data)
            except FormatError:
                pass


def test_canonical_serialization():
    # non-canonical but valid spellings normalise, and reparse to the same value
    cases = [
        (parse_annotation, serialize_annotation, "u1   0.00-1.00-T\t1.00-2.00-F\r\n\n"),
        (parse_scores, serialize_scores, "#resolution_ms=20\n#polarity=higher_is_genuine\nutt_id\tframe\tscore\na\t0\t0.50\n"),
        (parse_labels, serialize_labels, "#resolution_ms=20.0\n#kind=class\n\nu1 RF\n"),
    ]
    for parse, ser, text in cases:
        once = parse(text)
        assert parse(ser(once)) == once
        assert ser(parse(ser(once))) == ser(once)


def test_model_header_layout():
    p = init_params(2, 3, 1, np.random.default_rng(0))
    magic, raw_dim, ctx, hidden, n_joint = struct.unpack_from("<8s4I", encode_model(p))
    assert (magic, raw_dim, ctx, hidden, n_joint) == (MODEL_MAGIC, 2, 1, 3, 8)
