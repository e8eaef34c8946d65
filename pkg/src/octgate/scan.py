"""M-scan data model, binary container I/O, CSV ingestion and stream windowing.

An A-scan is a single 1D depth profile (length ``P`` pixels); an M-scan is a
window of ``W`` consecutive A-scans from a stationary beam, stored as a
``(W, P)`` float32 array with acquisition metadata. M-scans are the unit of
OoD scoring throughout the library.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_ACQUISITION_HZ = 700.0
DEFAULT_DEPTH_RESOLUTION_UM = 3.7
DEFAULT_WINDOW = 10

CONTAINER_MAGIC = b"MSCN"
CONTAINER_VERSION = 1
# magic (4) + u16 version + u32 n + u32 W + u32 P
_HEADER = struct.Struct("<4sHIII")
HEADER_SIZE = _HEADER.size


class ContainerFormatError(ValueError):
    """Malformed ``.mscn`` container; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class MScan:
    """A window of W consecutive A-scans, shape ``(W, P)``, temporal order preserved."""

    samples: np.ndarray
    acquisition_hz: float = DEFAULT_ACQUISITION_HZ
    depth_resolution_um: float = DEFAULT_DEPTH_RESOLUTION_UM

    def __post_init__(self):
        arr = np.asarray(self.samples)
        if arr.dtype != np.float32 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float32)
        elif arr.flags.writeable:
            # Never freeze (or alias) a caller-owned writable buffer.
            arr = arr.copy()
        if arr.ndim != 2:
            raise ValueError(f"M-scan samples must be 2D (W, P), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"M-scan needs W >= 1 and P >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("M-scan samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def w(self) -> int:
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    def ascan(self, j: int) -> np.ndarray:
        """The j-th A-scan as a read-only 1D view."""
        return self.samples[j]

    def with_samples(self, samples: np.ndarray) -> "MScan":
        """Same metadata, new sample grid."""
        return MScan(samples, self.acquisition_hz, self.depth_resolution_um)


def window_stream(
    ascans: np.ndarray | Sequence[np.ndarray],
    window: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_WINDOW,
    acquisition_hz: float = DEFAULT_ACQUISITION_HZ,
    depth_resolution_um: float = DEFAULT_DEPTH_RESOLUTION_UM,
) -> list[MScan]:
    """Slice a stream of A-scans into M-scans of ``window`` consecutive A-scans.

    Window i covers A-scan indices ``[i*stride, i*stride + window)``; a trailing
    remainder shorter than ``window`` is dropped. Empty input gives an empty list.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    arr = np.asarray(ascans, dtype=np.float32)
    if arr.size == 0:
        return []
    if arr.ndim != 2:
        raise ValueError(f"expected a (n, P) stream of A-scans, got shape {arr.shape}")
    n = arr.shape[0]
    out = []
    for start in range(0, n - window + 1, stride):
        out.append(
            MScan(arr[start : start + window], acquisition_hz, depth_resolution_um)
        )
    return out


def write_mscan_container(path: str | Path, mscans: Sequence[MScan]) -> None:
    """Write M-scans to a ``.mscn`` binary container (f32 little-endian payload).

    All M-scans must share the same W and P. The format round-trips bit-exactly
    through :func:`read_mscan_container`.
    """
    mscans = list(mscans)
    if not mscans:
        raise ValueError("cannot write an empty container")
    w, p = mscans[0].w, mscans[0].p
    for i, m in enumerate(mscans):
        if (m.w, m.p) != (w, p):
            raise ValueError(
                f"heterogeneous shapes: scan 0 is {w}x{p} but scan {i} is {m.w}x{m.p}"
            )
    payload = np.stack([m.samples for m in mscans]).astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CONTAINER_MAGIC, CONTAINER_VERSION, len(mscans), w, p))
        fh.write(payload.tobytes())


def read_mscan_container(
    path: str | Path,
    acquisition_hz: float = DEFAULT_ACQUISITION_HZ,
    depth_resolution_um: float = DEFAULT_DEPTH_RESOLUTION_UM,
) -> list[MScan]:
    """Read every M-scan from a ``.mscn`` container.

    Raises :class:`ContainerFormatError` with the failing byte offset on bad
    magic, unsupported version, or a payload that does not match the declared
    ``n * W * P`` float32 sample count.
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise ContainerFormatError("file shorter than container header", len(data))
    magic, version, n, w, p = _HEADER.unpack_from(data, 0)
    if magic != CONTAINER_MAGIC:
        raise ContainerFormatError(f"bad magic {magic!r}", 0)
    if version != CONTAINER_VERSION:
        raise ContainerFormatError(f"unsupported container version {version}", 4)
    if w < 1 or p < 1:
        raise ContainerFormatError(f"invalid declared shape W={w}, P={p}", 6)
    expected_end = HEADER_SIZE + n * w * p * 4
    if len(data) < expected_end:
        raise ContainerFormatError(
            f"truncated payload: declared {n} scans of {w}x{p} "
            f"need {expected_end} bytes, file has {len(data)}",
            len(data),
        )
    if len(data) > expected_end:
        raise ContainerFormatError(
            f"trailing data after declared payload of {n} scans", expected_end
        )
    flat = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE)
    scans = flat.reshape(n, w, p)
    return [
        MScan(scans[i], acquisition_hz, depth_resolution_um) for i in range(n)
    ]


def read_csv_ascans(path: str | Path) -> np.ndarray:
    """Read a CSV of A-scans (one A-scan per row, P columns) as a (n, P) array."""
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return arr.astype(np.float32)
