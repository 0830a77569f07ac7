"""Datagram wire formats for the recognition link.

A frame (one RGB image) travels as a sequence of chunked datagrams small
enough to dodge IP fragmentation; results come back in a single fixed-size
datagram. All multi-byte integers are little-endian.

Frame chunk:   magic "CHLF", version u8, frame_id u32, chunk_index u16,
               chunk_count u16, payload_len u16, payload (<= 1400 bytes).
               The reassembled byte stream starts with width u16, height
               u16, channels u8, then row-major RGB8 pixels.
Result:        magic "CHLR", version u8, frame_id u32, status u8, mode_id
               u8, n u8, m u8, frequency_hz f32, confidence f32,
               nodal_lines u8, inference_ms f32.

The reassembler tolerates duplicates and arbitrary arrival order, flags
frames whose chunks disagree on chunk_count, and expires incomplete frames
after a deadline; it either reproduces the exact bytes or drops the frame,
never a corrupted image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FRAME_MAGIC",
    "RESULT_MAGIC",
    "WIRE_VERSION",
    "MAX_CHUNK_PAYLOAD",
    "STATUS_OK",
    "STATUS_DECODE_ERROR",
    "STATUS_LOW_CONFIDENCE",
    "FrameChunk",
    "ResultMessage",
    "MalformedDatagram",
    "encode_frame",
    "decode_chunk",
    "encode_result",
    "decode_result",
    "FrameAssembler",
]

FRAME_MAGIC = b"CHLF"
RESULT_MAGIC = b"CHLR"
WIRE_VERSION = 1
MAX_CHUNK_PAYLOAD = 1400
MAX_IMAGE_SIDE = 512

STATUS_OK = 0
STATUS_DECODE_ERROR = 1
STATUS_LOW_CONFIDENCE = 2

_CHUNK_HEADER = struct.Struct("<4sBIHHH")
_IMAGE_HEADER = struct.Struct("<HHB")
_RESULT = struct.Struct("<4sBIBBBBffBf")


class MalformedDatagram(ValueError):
    """Datagram failed structural validation."""


@dataclass(frozen=True)
class FrameChunk:
    frame_id: int
    chunk_index: int
    chunk_count: int
    payload: bytes


@dataclass(frozen=True)
class ResultMessage:
    frame_id: int
    status: int
    mode_id: int = 0
    n: int = 0
    m: int = 0
    frequency_hz: float = 0.0
    confidence: float = 0.0
    nodal_lines: int = 0
    inference_ms: float = 0.0


def encode_frame(pixels: np.ndarray, frame_id: int) -> list[bytes]:
    """Split an (H, W, 3) uint8 image into chunk datagrams."""
    if pixels.ndim != 3 or pixels.dtype != np.uint8:
        raise ValueError("expected an (H, W, C) uint8 image")
    h, w, c = pixels.shape
    if h > MAX_IMAGE_SIDE or w > MAX_IMAGE_SIDE:
        raise ValueError(f"image exceeds {MAX_IMAGE_SIDE}px limit")
    stream = _IMAGE_HEADER.pack(w, h, c) + np.ascontiguousarray(pixels).tobytes()
    count = -(-len(stream) // MAX_CHUNK_PAYLOAD)
    datagrams = []
    for index in range(count):
        payload = stream[index * MAX_CHUNK_PAYLOAD:(index + 1) * MAX_CHUNK_PAYLOAD]
        datagrams.append(
            _CHUNK_HEADER.pack(FRAME_MAGIC, WIRE_VERSION, frame_id, index, count,
                               len(payload))
            + payload
        )
    return datagrams


def decode_chunk(datagram: bytes) -> FrameChunk:
    if len(datagram) < _CHUNK_HEADER.size:
        raise MalformedDatagram("datagram shorter than chunk header")
    magic, version, frame_id, index, count, payload_len = _CHUNK_HEADER.unpack_from(
        datagram
    )
    if magic != FRAME_MAGIC:
        raise MalformedDatagram(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise MalformedDatagram(f"unsupported wire version {version}")
    payload = datagram[_CHUNK_HEADER.size:]
    if len(payload) != payload_len or payload_len > MAX_CHUNK_PAYLOAD:
        raise MalformedDatagram("payload length mismatch")
    if count == 0 or index >= count:
        raise MalformedDatagram("chunk index outside chunk count")
    return FrameChunk(frame_id, index, count, payload)


def _decode_image(stream: bytes) -> np.ndarray:
    if len(stream) < _IMAGE_HEADER.size:
        raise MalformedDatagram("image stream shorter than its header")
    w, h, c = _IMAGE_HEADER.unpack_from(stream)
    expected = _IMAGE_HEADER.size + w * h * c
    if c != 3 or w == 0 or h == 0 or len(stream) != expected:
        raise MalformedDatagram(
            f"image header {w}x{h}x{c} does not match {len(stream)} bytes"
        )
    return np.frombuffer(stream, dtype=np.uint8, offset=_IMAGE_HEADER.size).reshape(
        h, w, c
    ).copy()


def encode_result(msg: ResultMessage) -> bytes:
    return _RESULT.pack(
        RESULT_MAGIC, WIRE_VERSION, msg.frame_id, msg.status, msg.mode_id, msg.n,
        msg.m, msg.frequency_hz, msg.confidence, msg.nodal_lines, msg.inference_ms,
    )


def decode_result(datagram: bytes) -> ResultMessage:
    if len(datagram) != _RESULT.size:
        raise MalformedDatagram("result datagram has wrong size")
    magic, version, frame_id, status, mode_id, n, m, freq, conf, lines, ms = (
        _RESULT.unpack(datagram)
    )
    if magic != RESULT_MAGIC or version != WIRE_VERSION:
        raise MalformedDatagram("bad result magic or version")
    return ResultMessage(frame_id, status, mode_id, n, m, freq, conf, lines, ms)


@dataclass
class _Pending:
    chunk_count: int
    first_seen: float
    source: object
    chunks: dict[int, bytes] = field(default_factory=dict)


@dataclass
class AssembledFrame:
    frame_id: int
    source: object
    pixels: np.ndarray | None  # None when the frame failed to decode
    error: str | None = None


class FrameAssembler:
    """Order- and duplicate-tolerant chunk reassembly with expiry."""

    def __init__(self, timeout_ms: float = 200.0):
        self.timeout_s = timeout_ms / 1000.0
        self._pending: dict[int, _Pending] = {}
        self.dropped_frames = 0

    def add(self, chunk: FrameChunk, now: float,
            source: object = None) -> AssembledFrame | None:
        """Insert one chunk; returns the finished frame when complete, an
        AssembledFrame with error set when the frame is inconsistent."""
        entry = self._pending.get(chunk.frame_id)
        if entry is None:
            entry = _Pending(chunk.chunk_count, now, source)
            self._pending[chunk.frame_id] = entry
        if chunk.chunk_count != entry.chunk_count:
            del self._pending[chunk.frame_id]
            return AssembledFrame(chunk.frame_id, entry.source, None,
                                  error="inconsistent chunk count")
        entry.chunks.setdefault(chunk.chunk_index, chunk.payload)
        if len(entry.chunks) < entry.chunk_count:
            return None
        del self._pending[chunk.frame_id]
        stream = b"".join(entry.chunks[i] for i in range(entry.chunk_count))
        try:
            pixels = _decode_image(stream)
        except MalformedDatagram as exc:
            return AssembledFrame(chunk.frame_id, entry.source, None, error=str(exc))
        return AssembledFrame(chunk.frame_id, entry.source, pixels)

    def purge(self, now: float) -> int:
        """Drop frames whose first chunk is older than the timeout."""
        stale = [fid for fid, e in self._pending.items()
                 if now - e.first_seen > self.timeout_s]
        for fid in stale:
            del self._pending[fid]
        self.dropped_frames += len(stale)
        return len(stale)

    def pending_count(self) -> int:
        return len(self._pending)
