"""Real-time windowed gating over a framed A-scan byte stream.

Frames are length-prefixed: a 4-byte little-endian unsigned length followed by
the A-scan payload as f32 little-endian samples; the length must equal 4 * P
for the gating model's P. Incoming A-scans are windowed positionally (window /
stride), each window is scored against a calibrated detector, and one NDJSON
verdict record is emitted per window - accepted or rejected, never dropped.
A malformed frame produces an error record and the reader resynchronizes at
the next plausible frame boundary instead of halting: a safety gate fails
loud per window but keeps running.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from .features import extractor_for_descriptor
from .mahal import DetectorModel, UncalibratedModelError, distances_for
from .preprocess import preprocess_mscan
from .scan import MScan

LENGTH_PREFIX = struct.Struct("<I")


@dataclass(frozen=True)
class GateVerdictRecord:
    """One gating decision: reject iff score > tau."""

    window_index: int
    score: float
    tau: float
    decision: str  # "accept" | "reject"
    latency_us: int
    ascan_start: int
    ascan_end: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "window_index": self.window_index,
                "score": self.score,
                "tau": self.tau,
                "decision": self.decision,
                "latency_us": self.latency_us,
                "ascan_range": [self.ascan_start, self.ascan_end],
            },
            sort_keys=True,
        )


def frame_ascan(ascan: np.ndarray) -> bytes:
    """Encode one A-scan as a length-prefixed f32 little-endian frame."""
    payload = np.ascontiguousarray(ascan, dtype="<f4").tobytes()
    return LENGTH_PREFIX.pack(len(payload)) + payload


def read_frames(stream: BinaryIO, p: int) -> Iterator[tuple[np.ndarray | None, str | None]]:
    """Yield (ascan, None) per good frame or (None, reason) per malformed one.

    The expected length prefix is ``4 * p``. On a bad prefix the reader scans
    forward one byte at a time for the expected prefix bytes (the next frame
    boundary) and resumes there; on a truncated payload it reports and stops.
    """
    expected = 4 * p
    expected_prefix = LENGTH_PREFIX.pack(expected)
    buffer = b""
    while True:
        while len(buffer) < 4:
            chunk = stream.read(4 - len(buffer))
            if not chunk:
                if buffer:
                    yield None, f"trailing {len(buffer)} bytes at end of stream"
                return
            buffer += chunk
        (length,) = LENGTH_PREFIX.unpack(buffer[:4])
        if length != expected:
            # Resync: drop one byte, pull one more, look for the known prefix.
            yield None, (
                f"bad frame length {length} (expected {expected}); resyncing"
            )
            buffer = buffer[1:]
            while buffer != expected_prefix:
                chunk = stream.read(1)
                if not chunk:
                    return
                buffer = (buffer + chunk)[-4:]
            continue
        buffer = b""
        payload = b""
        while len(payload) < expected:
            chunk = stream.read(expected - len(payload))
            if not chunk:
                yield None, (
                    f"truncated payload: got {len(payload)} of {expected} bytes"
                )
                return
            payload += chunk
        yield np.frombuffer(payload, dtype="<f4").copy(), None


def run_gate(
    input_stream: BinaryIO,
    output_stream,
    model: DetectorModel,
    window: int = 10,
    stride: int = 10,
    extractor=None,
    depth: int | None = None,
) -> int:
    """Gate a framed A-scan stream; returns the number of windows emitted.

    Windowing is purely positional, so decisions are identical whether
    A-scans arrive one by one or in bulk. Latency is measured per window from
    the arrival of its last A-scan to verdict emission and is carried in
    every record, keeping the acquisition-rate budget observable. When
    ``depth`` is not given, the expected frame size locks onto the first
    frame's declared length.
    """
    if not model.is_calibrated:
        raise UncalibratedModelError("gating requires a calibrated model")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    ext = extractor if extractor is not None else extractor_for_descriptor(model.extractor)
    tau = float(model.tau)
    # Multi-threaded BLAS handoffs cost far more than these tiny matmuls and
    # show up as multi-ms latency spikes; the gate runs single-core.
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - environment dependent
        from contextlib import nullcontext

        thread_guard = nullcontext()
    else:
        thread_guard = threadpool_limits(limits=1)
    with thread_guard:
        return _gate_loop(
            input_stream, output_stream, model, ext, tau, window, stride, depth
        )


def _gate_loop(input_stream, output_stream, model, ext, tau, window, stride, depth):
    buffer: list[np.ndarray] = []
    absolute_index = 0  # stream index of buffer[0] (or of the next arrival)
    skip = 0  # arrivals still to discard when stride > window
    window_index = 0
    frames = (
        read_frames(input_stream, depth)
        if depth is not None
        else _frames_any_depth(input_stream)
    )
    warmed = False
    for ascan, error in frames:
        if error is not None:
            output_stream.write(json.dumps({"error": error}, sort_keys=True) + "\n")
            continue
        if not warmed:
            # Prime resampling caches and BLAS paths while the first window
            # is still filling, so no live window pays one-time setup costs.
            warm = MScan(np.tile(ascan, (window, 1)))
            for _ in range(2):
                distances_for(
                    ext.extract(preprocess_mscan(warm, model.preproc)), model
                )
            warmed = True
        if skip:
            # absolute_index already jumped by the full stride at emit time.
            skip -= 1
            continue
        buffer.append(ascan)
        while len(buffer) >= window:
            t0 = time.perf_counter_ns()
            mscan = MScan(np.stack(buffer[:window]))
            prepped = preprocess_mscan(mscan, model.preproc)
            distances = distances_for(ext.extract(prepped), model)
            score = float(distances.sum())
            record = GateVerdictRecord(
                window_index=window_index,
                score=score,
                tau=tau,
                decision="reject" if score > tau else "accept",
                latency_us=max(0, (time.perf_counter_ns() - t0) // 1000),
                ascan_start=absolute_index,
                ascan_end=absolute_index + window,
            )
            output_stream.write(record.to_json() + "\n")
            window_index += 1
            n_drop = min(stride, len(buffer))
            buffer = buffer[n_drop:]
            skip += stride - n_drop
            absolute_index += stride
    return window_index


def _frames_any_depth(stream: BinaryIO) -> Iterator[tuple[np.ndarray | None, str | None]]:
    """Frame reader that locks onto the first frame's depth.

    The first 4 bytes declare the length; all subsequent frames must match it
    (a gate serves one probe with one fixed P).
    """
    head = b""
    while len(head) < 4:
        chunk = stream.read(4 - len(head))
        if not chunk:
            if head:
                yield None, f"trailing {len(head)} bytes at end of stream"
            return
        head += chunk
    (length,) = LENGTH_PREFIX.unpack(head)
    if length % 4 != 0 or length == 0:
        yield None, f"initial frame length {length} is not a valid f32 payload size"
        return
    p = length // 4
    stream = _Prepend(head, stream)
    yield from read_frames(stream, p)


class _Prepend:
    """Minimal binary-stream wrapper that replays already-consumed bytes."""

    def __init__(self, head: bytes, stream: BinaryIO):
        self._head = head
        self._stream = stream

    def read(self, n: int) -> bytes:
        if self._head:
            out, self._head = self._head[:n], self._head[n:]
            if len(out) < n:
                out += self._stream.read(n - len(out))
            return out
        return self._stream.read(n)
