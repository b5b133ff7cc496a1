"""Event stream file formats: ``x,y,t,p`` CSV and N-MNIST style 40-bit AER records."""
from __future__ import annotations

import io
from typing import BinaryIO

import numpy as np

from .events import EventStream, validate_stream

CSV_HEADER = "x,y,t,p"
NMNIST_SIZE = 34
_NMNIST_MAX_T = (1 << 23) - 1


class EventFormatError(ValueError):
    """Malformed or out-of-contract event data."""


def _as_binary(source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source)
    if isinstance(source, str):
        return open(source, "rb")
    return source


def read_csv(source, width: int, height: int, allow_unsorted: bool = False) -> EventStream:
    """Parse a ``x,y,t,p`` CSV; line numbers in errors are 1-based including the header."""
    fh = _as_binary(source)
    try:
        text = fh.read()
    finally:
        if isinstance(source, str):
            fh.close()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise EventFormatError(f"header mismatch: expected {CSV_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.strip().split(",")
        if len(parts) != 4:
            raise EventFormatError(f"malformed line {lineno}: {line!r}")
        try:
            x, y, t, p = (int(v) for v in parts)
        except ValueError:
            raise EventFormatError(f"malformed line {lineno}: {line!r}") from None
        if p not in (1, -1):
            raise EventFormatError(f"invalid polarity at line {lineno}")
        if not (0 <= x < width and 0 <= y < height):
            raise EventFormatError(f"out-of-bounds coordinate at line {lineno}")
        if t < 0:
            raise EventFormatError(f"negative timestamp at line {lineno}")
        rows.append((x, y, t, p))
    stream = EventStream.from_events(rows, width, height)
    report = validate_stream(stream)
    if not report.ok:
        if allow_unsorted:
            return stream.sorted_by_time()
        index, reason = report.violations[0]
        raise EventFormatError(f"{reason} timestamps at line {index + 2}")
    return stream


def write_csv(stream: EventStream, sink=None) -> bytes | None:
    """Write ``stream`` as CSV; returns the bytes when ``sink`` is None."""
    out = [CSV_HEADER]
    out.extend(f"{x},{y},{t},{p}" for x, y, t, p in zip(*(c.tolist() for c in stream.columns())))
    data = ("\n".join(out) + "\n").encode("utf-8")
    if sink is None:
        return data
    if isinstance(sink, str):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return None


def read_nmnist_bin(source) -> EventStream:
    """Decode 5-byte records: x, y, polarity bit + 23-bit big-endian timestamp."""
    fh = _as_binary(source)
    try:
        raw = fh.read()
    finally:
        if isinstance(source, str):
            fh.close()
    if len(raw) % 5:
        raise EventFormatError("truncated record")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x, y = rec[:, 0], rec[:, 1]
    if len(rec) and (x.max() >= NMNIST_SIZE or y.max() >= NMNIST_SIZE):
        bad = int(np.flatnonzero((x >= NMNIST_SIZE) | (y >= NMNIST_SIZE))[0])
        raise EventFormatError(f"coordinate out of range in record {bad}")
    p = np.where(rec[:, 2] & 0x80, 1, -1)
    t = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    return EventStream(x, y, t, p, NMNIST_SIZE, NMNIST_SIZE)


def write_nmnist_bin(stream: EventStream, sink=None) -> bytes | None:
    """Inverse of :func:`read_nmnist_bin`; the stream must fit the 34x34 / 23-bit layout."""
    x, y, t, p = stream.columns()
    if len(x) and (x.max() >= NMNIST_SIZE or y.max() >= NMNIST_SIZE or x.min() < 0 or y.min() < 0):
        raise EventFormatError("coordinates do not fit the 34x34 sensor")
    if len(t) and (t.min() < 0 or t.max() > _NMNIST_MAX_T):
        raise EventFormatError("timestamp does not fit 23 bits")
    rec = np.empty((len(x), 5), dtype=np.uint8)
    rec[:, 0] = x
    rec[:, 1] = y
    rec[:, 2] = ((p > 0).astype(np.int64) << 7) | (t >> 16)
    rec[:, 3] = (t >> 8) & 0xFF
    rec[:, 4] = t & 0xFF
    data = rec.tobytes()
    if sink is None:
        return data
    if isinstance(sink, str):
        with open(sink, "wb") as fh:
            fh.write(data)
    else:
        sink.write(data)
    return None
