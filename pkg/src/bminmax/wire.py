"""Fixed-width binary format for one site's transmission.

Layout (little-endian)::

    0   4s   magic b"BMMX"
    4   u32  format version (1)
    8   u32  site id
    12  u32  flags (bit 0: values are pre-divided by p)
    16  u64  dimension d
    24  f64  threshold C
    32  f64  expected sample size n
    40  u64  entry count
    48  3f64 summary (v_bar, b_bar, v_bar_mm)
    72  entries: (u64 key, f64 value) * count

so an encoded payload is exactly ``72 + 16 * count`` bytes.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .aggregation import SiteSummary, compute_site_summary
from .exceptions import PayloadError

MAGIC = b"BMMX"
VERSION = 1
FLAG_PRESCALED = 0x1
_KNOWN_FLAGS = FLAG_PRESCALED

_PREFIX = struct.Struct("<4sI")
_HEADER = struct.Struct("<IIQddQ")
_SUMMARY = struct.Struct("<3d")
PREFIX_SIZE = _PREFIX.size
HEADER_SIZE = _HEADER.size
SUMMARY_SIZE = _SUMMARY.size
FIXED_SIZE = PREFIX_SIZE + HEADER_SIZE + SUMMARY_SIZE
ENTRY_DTYPE = np.dtype([("key", "<u8"), ("value", "<f8")])
ENTRY_SIZE = ENTRY_DTYPE.itemsize

assert (PREFIX_SIZE, HEADER_SIZE, SUMMARY_SIZE, ENTRY_SIZE) == (8, 40, 24, 16)


@dataclass(eq=False)
class SitePayload:
    site_id: int
    dim: int
    threshold: float
    summary: SiteSummary
    keys: npt.NDArray[np.uint64]
    values: npt.NDArray[np.float64]
    target_n: float = 0.0
    prescaled: bool = False

    def __post_init__(self) -> None:
        self.keys = np.ascontiguousarray(self.keys, dtype=np.uint64).ravel()
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).ravel()
        if self.keys.shape != self.values.shape:
            raise PayloadError("keys and values differ in length")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SitePayload):
            return NotImplemented
        return encode_payload(self) == encode_payload(other)

    @property
    def nbytes(self) -> int:
        return FIXED_SIZE + ENTRY_SIZE * self.keys.size


def encoded_size(entry_count: int) -> int:
    return FIXED_SIZE + ENTRY_SIZE * entry_count


def _validate_entries(keys: np.ndarray, values: np.ndarray) -> None:
    if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
        raise PayloadError("entries must have strictly increasing keys")
    if not np.all(np.isfinite(values)):
        raise PayloadError("corrupt value: non-finite entry")


def encode_payload(payload: SitePayload) -> bytes:
    _validate_entries(payload.keys, payload.values)
    flags = FLAG_PRESCALED if payload.prescaled else 0
    s = payload.summary
    entries = np.empty(payload.keys.size, dtype=ENTRY_DTYPE)
    entries["key"] = payload.keys
    entries["value"] = payload.values
    return b"".join((
        _PREFIX.pack(MAGIC, VERSION),
        _HEADER.pack(payload.site_id, flags, payload.dim, payload.threshold,
                     payload.target_n, payload.keys.size),
        _SUMMARY.pack(s.v_bar, s.b_bar, s.v_bar_mm),
        entries.tobytes(),
    ))


def decode_payload(buf: bytes) -> SitePayload:
    """Parse and validate one encoded payload.

    Raises:
        PayloadError: wrong magic or version ("unsupported format"), short
            buffer ("truncated payload"), trailing bytes, unknown flags,
            unsorted keys or a non-finite number ("corrupt value").
    """
    buf = memoryview(buf)
    if len(buf) < PREFIX_SIZE:
        raise PayloadError("truncated payload")
    magic, version = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC or version != VERSION:
        raise PayloadError("unsupported format")
    if len(buf) < FIXED_SIZE:
        raise PayloadError("truncated payload")
    site_id, flags, dim, threshold, target_n, count = _HEADER.unpack_from(buf, PREFIX_SIZE)
    if flags & ~_KNOWN_FLAGS:
        raise PayloadError(f"unknown flag bits 0x{flags:08x}")
    expected = encoded_size(count)
    if len(buf) < expected:
        raise PayloadError("truncated payload")
    if len(buf) > expected:
        raise PayloadError(f"{len(buf) - expected} trailing bytes after payload")
    for name, value in (("threshold", threshold), ("sample size", target_n)):
        if not math.isfinite(value) or value < 0:
            raise PayloadError(f"corrupt value: {name} = {value}")
    summary = SiteSummary(*_SUMMARY.unpack_from(buf, PREFIX_SIZE + HEADER_SIZE))
    entries = np.frombuffer(buf, dtype=ENTRY_DTYPE, count=count, offset=FIXED_SIZE)
    keys = entries["key"].astype(np.uint64)
    values = entries["value"].astype(np.float64)
    _validate_entries(keys, values)
    return SitePayload(site_id, dim, threshold, summary, keys, values, target_n,
                       bool(flags & FLAG_PRESCALED))


def effective_compression(payload: SitePayload) -> tuple[float, float]:
    """``(d / n, 8 d / encoded bytes)``.

    The nominal ratio uses the expected sample size the sender targeted; the
    byte ratio compares against shipping the dense float64 vector and so
    includes header, summary and key overhead.
    """
    if payload.dim <= 0:
        raise PayloadError("dimension must be positive")
    nominal = payload.dim / payload.target_n if payload.target_n > 0 else math.inf
    return nominal, payload.dim * 8 / payload.nbytes


def write_payload(path: str | os.PathLike, payload: SitePayload) -> int:
    data = encode_payload(payload)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_payload(path: str | os.PathLike) -> SitePayload:
    with open(path, "rb") as fh:
        return decode_payload(fh.read())


def build_payload(vector, plan, draw, summary: SiteSummary | None = None,
                  prescaled: bool = False) -> SitePayload:
    """Assemble the payload a site sends for one draw.

    With ``prescaled`` the entries carry ``x / p`` (classic MinMax form);
    otherwise they carry the raw sampled values.
    """
    if summary is None:
        summary = compute_site_summary(vector, plan)
    values = draw.values
    if prescaled:
        pos = np.searchsorted(plan.keys, draw.keys)
        values = values / plan.probs[pos]
    return SitePayload(vector.site_id, vector.dim, plan.threshold, summary,
                       draw.keys, values, plan.target_n, prescaled)
