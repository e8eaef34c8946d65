import io
import json

import numpy as np
import pytest

import octgate
from octgate.gating import frame_ascan, read_frames, run_gate
from octgate.mahal import UncalibratedModelError


def stream_of(scans, extra=None) -> io.BytesIO:
    buf = io.BytesIO()
    for lab in scans:
        for row in lab.mscan.samples:
            buf.write(frame_ascan(row))
    if extra:
        buf.write(extra)
    buf.seek(0)
    return buf


def records(output: io.StringIO):
    return [json.loads(line) for line in output.getvalue().splitlines()]


def test_frame_roundtrip(rng):
    ascan = rng.uniform(0, 255, size=674).astype(np.float32)
    framed = frame_ascan(ascan)
    assert len(framed) == 4 + 674 * 4
    stream = io.BytesIO(framed)
    ((back, err),) = list(read_frames(stream, 674))
    assert err is None
    assert back.tobytes() == ascan.tobytes()


def test_read_frames_reports_bad_length_and_resyncs(rng):
    good = frame_ascan(rng.uniform(0, 1, size=8).astype(np.float32))
    bad = b"\x99\x00\x00\x00" + b"\xaa" * 7  # wrong prefix + garbage
    stream = io.BytesIO(good + bad + good)
    out = list(read_frames(stream, 8))
    oks = [a for a, e in out if e is None]
    errors = [e for a, e in out if e is not None]
    assert len(oks) == 2
    assert any("bad frame length" in e for e in errors)


def test_read_frames_truncated_payload(rng):
    ascan = rng.uniform(0, 1, size=8).astype(np.float32)
    framed = frame_ascan(ascan)
    stream = io.BytesIO(framed[:20])
    out = list(read_frames(stream, 8))
    assert out[-1][1] is not None and "truncated" in out[-1][1]


def test_gate_accepts_clean_and_rejects_injected_stripe(calibrated_model, builtin_extractor):
    clean = octgate.synth_dataset(6, seed=606)
    # Corrupt the fourth window with a stripe.
    target = octgate.corrupt(
        octgate.rescale_to_byte_range(clean[3].mscan),
        octgate.CorruptionSpec(kind="stripes", seed=1),
    )
    scans = [lab.mscan for lab in clean]
    scans[3] = target
    buf = io.BytesIO()
    for m in scans:
        for row in m.samples:
            buf.write(frame_ascan(row))
    buf.seek(0)
    out = io.StringIO()
    n = run_gate(buf, out, calibrated_model, extractor=builtin_extractor)
    recs = records(out)
    assert n == 6
    assert len(recs) == 6
    decisions = [r["decision"] for r in recs]
    assert decisions[3] == "reject"
    assert all(r["latency_us"] >= 0 for r in recs)
    assert all(
        (r["decision"] == "reject") == (r["score"] > r["tau"]) for r in recs
    )
    assert [r["ascan_range"] for r in recs] == [[i * 10, i * 10 + 10] for i in range(6)]


def test_gate_bulk_vs_single_byte_feed_identical(calibrated_model, builtin_extractor):
    scans = octgate.synth_dataset(4, seed=42)
    payload = stream_of(scans).getvalue()

    class OneByteStream:
        def __init__(self, data):
            self.data = data
            self.pos = 0

        def read(self, n):
            if self.pos >= len(self.data):
                return b""
            chunk = self.data[self.pos : self.pos + 1]  # ignore n: dribble
            self.pos += 1
            return chunk

    out_bulk = io.StringIO()
    run_gate(io.BytesIO(payload), out_bulk, calibrated_model, extractor=builtin_extractor)
    out_dribble = io.StringIO()
    run_gate(OneByteStream(payload), out_dribble, calibrated_model, extractor=builtin_extractor)
    bulk = [{k: v for k, v in r.items() if k != "latency_us"} for r in records(out_bulk)]
    dribble = [
        {k: v for k, v in r.items() if k != "latency_us"} for r in records(out_dribble)
    ]
    assert bulk == dribble


def test_gate_error_record_then_continues(calibrated_model, builtin_extractor):
    scans = octgate.synth_dataset(2, seed=3)
    good = stream_of(scans).getvalue()
    p = scans[0].mscan.p
    # A corrupted prefix mid-stream: gate must emit an error record, resync,
    # and still gate the remaining full windows.
    garbage = b"\x01\x02\x03\x04" + b"\x00" * 10
    half = len(good) // (2 * (4 + 4 * p)) * (4 + 4 * p)
    stream = io.BytesIO(good[:half] + garbage + good[half:])
    out = io.StringIO()
    run_gate(stream, out, calibrated_model, extractor=builtin_extractor, depth=p)
    recs = records(out)
    errors = [r for r in recs if "error" in r]
    verdicts = [r for r in recs if "decision" in r]
    assert len(errors) >= 1
    assert len(verdicts) >= 1


def test_gate_stride_larger_than_window(calibrated_model, builtin_extractor):
    scans = octgate.synth_dataset(3, seed=8)
    stream = stream_of(scans)
    out = io.StringIO()
    n = run_gate(
        stream, out, calibrated_model, window=10, stride=15, extractor=builtin_extractor
    )
    recs = records(out)
    assert n == 2
    assert [r["ascan_range"] for r in recs] == [[0, 10], [15, 25]]


def test_gate_sliding_stride(calibrated_model, builtin_extractor):
    scans = octgate.synth_dataset(2, seed=9)
    out = io.StringIO()
    n = run_gate(
        stream_of(scans), out, calibrated_model, window=10, stride=5,
        extractor=builtin_extractor,
    )
    assert n == 3  # windows at 0, 5, 10
    assert [r["ascan_range"] for r in records(out)] == [[0, 10], [5, 15], [10, 20]]


def test_gate_requires_calibration(fitted_model, builtin_extractor):
    with pytest.raises(UncalibratedModelError):
        run_gate(io.BytesIO(b""), io.StringIO(), fitted_model, extractor=builtin_extractor)


def test_gate_never_drops_windows(calibrated_model, builtin_extractor):
    scans = octgate.synth_dataset(7, seed=12)
    out = io.StringIO()
    n = run_gate(stream_of(scans), out, calibrated_model, extractor=builtin_extractor)
    verdicts = [r for r in records(out) if "decision" in r]
    assert n == len(verdicts) == 7
    assert [r["window_index"] for r in verdicts] == list(range(7))
