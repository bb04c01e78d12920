"""Precomputed representation stores and their on-disk format.

File layout (all integers little-endian)::

    b"DBOW" | u16 version | u16 reserved | u32 meta_len | meta (JSON, UTF-8)
    u64 n_records
    n_records x ( u32 id_len | id (UTF-8) | u32 count
                  | count varints: first index, then successive gaps
                  | count x f32 weight )
    u32 CRC32 over everything from meta_len up to here

Postings are held in memory as CSR arrays (``indptr``/``indices``/
``weights``) so the batch scorer can run over them without copies.
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from ._accel import HAS_NUMBA, njit
from .bow import SparseBoW, SparseBoWError

log = logging.getLogger(__name__)

MAGIC = b"DBOW"
FORMAT_VERSION = 1


class StoreError(Exception):
    pass


class StoreIntegrityError(StoreError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class StoreVersionError(StoreError):
    pass


# -- varint kernels ---------------------------------------------------------

@njit(cache=True)
def _encode_records_nb(id_bytes, id_ptr, indptr, indices, wbits):
    n = id_ptr.shape[0] - 1
    size = 0
    for r in range(n):
        size += 8 + (id_ptr[r + 1] - id_ptr[r])
        prev = 0
        for t in range(indptr[r], indptr[r + 1]):
            gap = indices[t] - prev
            prev = indices[t]
            size += 1
            while gap >= 128:
                gap >>= 7
                size += 1
            size += 4
    out = np.empty(size, dtype=np.uint8)
    o = 0
    for r in range(n):
        L = id_ptr[r + 1] - id_ptr[r]
        for b in range(4):
            out[o + b] = (L >> (8 * b)) & 0xFF
        o += 4
        for b in range(L):
            out[o + b] = id_bytes[id_ptr[r] + b]
        o += L
        cnt = indptr[r + 1] - indptr[r]
        for b in range(4):
            out[o + b] = (cnt >> (8 * b)) & 0xFF
        o += 4
        prev = 0
        for t in range(indptr[r], indptr[r + 1]):
            gap = indices[t] - prev
            prev = indices[t]
            while gap >= 128:
                out[o] = (gap & 0x7F) | 0x80
                gap >>= 7
                o += 1
            out[o] = gap
            o += 1
        for t in range(indptr[r], indptr[r + 1]):
            w = wbits[t]
            for b in range(4):
                out[o + b] = (w >> (8 * b)) & 0xFF
            o += 4
    return out


@njit(cache=True)
def _decode_records_nb(buf, off, n):
    """Returns (id_start, id_len, indptr, indices, wbits, end, err, err_off).

    err: 0 ok, 1 truncated, 2 indices not strictly increasing, 3 varint overflow.
    """
    end = buf.shape[0]
    id_start = np.zeros(n, dtype=np.int64)
    id_len = np.zeros(n, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    cap = 16
    indices = np.empty(cap, dtype=np.int64)
    wbits = np.empty(cap, dtype=np.uint32)
    total = 0
    for r in range(n):
        if off + 4 > end:
            return id_start, id_len, indptr, indices[:total], wbits[:total], off, 1, off
        L = np.int64(buf[off]) | (np.int64(buf[off + 1]) << 8) | (np.int64(buf[off + 2]) << 16) | (np.int64(buf[off + 3]) << 24)
        off += 4
        if off + L + 4 > end:
            return id_start, id_len, indptr, indices[:total], wbits[:total], off, 1, off
        id_start[r] = off
        id_len[r] = L
        off += L
        cnt = np.int64(buf[off]) | (np.int64(buf[off + 1]) << 8) | (np.int64(buf[off + 2]) << 16) | (np.int64(buf[off + 3]) << 24)
        off += 4
        if total + cnt > cap:
            while total + cnt > cap:
                cap *= 2
            grown = np.empty(cap, dtype=np.int64)
            grown[:total] = indices[:total]
            indices = grown
            grown_w = np.empty(cap, dtype=np.uint32)
            grown_w[:total] = wbits[:total]
            wbits = grown_w
        prev = np.int64(0)
        for t in range(cnt):
            val = np.int64(0)
            shift = 0
            while True:
                if off >= end:
                    return id_start, id_len, indptr, indices[:total], wbits[:total], off, 1, off
                byte = np.int64(buf[off])
                off += 1
                val |= (byte & 0x7F) << shift
                if byte < 128:
                    break
                shift += 7
                if shift > 56:
                    return id_start, id_len, indptr, indices[:total], wbits[:total], off, 3, off
            if t > 0 and val == 0:
                return id_start, id_len, indptr, indices[:total], wbits[:total], off, 2, off
            prev += val
            indices[total + t] = prev
        if off + 4 * cnt > end:
            return id_start, id_len, indptr, indices[:total], wbits[:total], off, 1, off
        for t in range(cnt):
            wbits[total + t] = np.uint32(buf[off]) | (np.uint32(buf[off + 1]) << 8) | (np.uint32(buf[off + 2]) << 16) | (np.uint32(buf[off + 3]) << 24)
            off += 4
        total += cnt
        indptr[r + 1] = total
    return id_start, id_len, indptr, indices[:total], wbits[:total], off, 0, off


def varint_encode(values: np.ndarray) -> bytes:
    """LEB128-style varints, vectorized over a non-negative int array."""
    u = np.asarray(values, dtype=np.uint64)
    if len(u) == 0:
        return b""
    nbytes = np.ones(len(u), dtype=np.int64)
    for k in range(1, 10):
        nbytes += u >= (np.uint64(1) << np.uint64(7 * k))
    pos = np.r_[0, np.cumsum(nbytes)[:-1]]
    out = np.zeros(int(nbytes.sum()), dtype=np.uint8)
    for k in range(int(nbytes.max())):
        sel = nbytes > k
        chunk = (u[sel] >> np.uint64(7 * k)) & np.uint64(0x7F)
        cont = (nbytes[sel] > k + 1).astype(np.uint64) << np.uint64(7)
        out[pos[sel] + k] = (chunk | cont).astype(np.uint8)
    return out.tobytes()


def varint_decode(buf, off: int, count: int) -> tuple[np.ndarray, int]:
    """Decode ``count`` varints starting at ``off``; returns (values, new offset)."""
    if count == 0:
        return np.zeros(0, dtype=np.int64), off
    window = np.frombuffer(buf, dtype=np.uint8, count=min(len(buf) - off, 10 * count), offset=off)
    stops = np.flatnonzero(window < 0x80)
    if len(stops) < count:
        raise StoreIntegrityError("truncated varint run", off + len(window))
    used = int(stops[count - 1]) + 1
    b = window[:used].astype(np.uint64)
    group = np.r_[0, np.cumsum(b[:-1] < 0x80)]
    starts = np.r_[0, stops[:count - 1] + 1]
    shift = (np.arange(used) - starts[group]) * 7
    if shift.max() > 56:
        raise StoreIntegrityError("varint overflow", off)
    vals = np.zeros(count, dtype=np.uint64)
    np.add.at(vals, group, (b & np.uint64(0x7F)) << shift.astype(np.uint64))
    return vals.astype(np.int64), off + used


def _encode_records_np(id_bytes, id_ptr, indptr, indices, wbits):
    parts = []
    for r in range(len(id_ptr) - 1):
        ident = bytes(id_bytes[id_ptr[r]:id_ptr[r + 1]])
        idx = indices[indptr[r]:indptr[r + 1]]
        gaps = np.diff(idx, prepend=0)
        parts.append(struct.pack("<I", len(ident)) + ident + struct.pack("<I", len(idx)))
        parts.append(varint_encode(gaps))
        parts.append(wbits[indptr[r]:indptr[r + 1]].astype("<u4").tobytes())
    return np.frombuffer(b"".join(parts), dtype=np.uint8)


def _decode_records_np(buf, off, n):
    raw = buf.tobytes()
    end = len(raw)
    id_start, id_len = np.zeros(n, np.int64), np.zeros(n, np.int64)
    indptr = np.zeros(n + 1, np.int64)
    idx_parts, w_parts = [], []
    for r in range(n):
        if off + 4 > end:
            return id_start, id_len, indptr, None, None, off, 1, off
        (L,) = struct.unpack_from("<I", raw, off)
        off += 4
        if off + L + 4 > end:
            return id_start, id_len, indptr, None, None, off, 1, off
        id_start[r], id_len[r] = off, L
        off += L
        (cnt,) = struct.unpack_from("<I", raw, off)
        off += 4
        try:
            gaps, off = varint_decode(raw, off, cnt)
        except StoreIntegrityError as exc:
            return id_start, id_len, indptr, None, None, exc.offset, 1, exc.offset
        if cnt > 1 and (gaps[1:] == 0).any():
            return id_start, id_len, indptr, None, None, off, 2, off
        if off + 4 * cnt > end:
            return id_start, id_len, indptr, None, None, off, 1, off
        idx_parts.append(np.cumsum(gaps))
        w_parts.append(np.frombuffer(raw, dtype="<u4", count=cnt, offset=off))
        off += 4 * cnt
        indptr[r + 1] = indptr[r] + cnt
    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)  # noqa: E731
    return id_start, id_len, indptr, cat(idx_parts, np.int64), cat(w_parts, np.uint32), off, 0, off


if HAS_NUMBA:
    _encode_records, _decode_records = _encode_records_nb, _decode_records_nb
else:
    _encode_records, _decode_records = _encode_records_np, _decode_records_np


# -- store ------------------------------------------------------------------

@dataclass
class BoWStore:
    side: str
    ids: list[str]
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    metadata: dict = field(default_factory=dict)
    duplicates: int = 0
    skipped: int = 0

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float32)
        self._rows = {ident: r for r, ident in enumerate(self.ids)}
        if len(self._rows) != len(self.ids):
            raise StoreError("duplicate ids in store")

    @classmethod
    def from_entries(cls, side: str, entries, metadata: dict | None = None) -> "BoWStore":
        """Build from (id, SparseBoW) pairs; a repeated id keeps its last entry."""
        latest: dict[str, SparseBoW] = {}
        dups = 0
        for ident, bow in entries:
            if ident in latest:
                dups += 1
            latest[ident] = bow.validate()
        if dups:
            log.warning("store %s: %d duplicate ids, last write wins", side, dups)
        ids = list(latest)
        lens = np.array([len(latest[i]) for i in ids], dtype=np.int64)
        indptr = np.r_[0, np.cumsum(lens)].astype(np.int64)
        indices = np.concatenate([latest[i].indices for i in ids]) if ids else np.zeros(0, np.int64)
        weights = np.concatenate([latest[i].weights for i in ids]) if ids else np.zeros(0, np.float32)
        meta = {"side": side, "created": datetime.now(timezone.utc).isoformat(timespec="seconds")}
        meta.update(metadata or {})
        return cls(side, ids, indptr, indices, weights, meta, duplicates=dups)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, ident: str) -> bool:
        return ident in self._rows

    def row(self, ident: str) -> int:
        try:
            return self._rows[ident]
        except KeyError:
            raise KeyError(f"id {ident!r} not in {self.side} store") from None

    def get(self, ident: str) -> SparseBoW:
        r = self.row(ident)
        a, b = self.indptr[r], self.indptr[r + 1]
        return SparseBoW(self.indices[a:b], self.weights[a:b])

    def items(self):
        for ident in self.ids:
            yield ident, self.get(ident)

    def support_sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoWStore):
            return NotImplemented
        return (self.side == other.side and self.ids == other.ids and self.metadata == other.metadata
                and np.array_equal(self.indptr, other.indptr) and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.weights.view(np.uint32), other.weights.view(np.uint32)))

    def validate(self, n_tokens: int | None = None) -> None:
        for r, ident in enumerate(self.ids):
            a, b = self.indptr[r], self.indptr[r + 1]
            try:
                SparseBoW(self.indices[a:b], self.weights[a:b]).validate(n_tokens)
            except SparseBoWError as exc:
                raise StoreError(f"entry {ident!r}: {exc}") from exc

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = dict(self.metadata)
        meta["side"] = self.side
        meta_b = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
        encoded_ids = [i.encode("utf-8") for i in self.ids]
        id_bytes = np.frombuffer(b"".join(encoded_ids), dtype=np.uint8)
        id_ptr = np.r_[0, np.cumsum([len(b) for b in encoded_ids])].astype(np.int64)
        records = _encode_records(id_bytes, id_ptr, self.indptr, self.indices, self.weights.view(np.uint32))
        payload = struct.pack("<I", len(meta_b)) + meta_b + struct.pack("<Q", len(self.ids)) + bytes(records)
        head = MAGIC + struct.pack("<HH", FORMAT_VERSION, 0)
        return head + payload + struct.pack("<I", zlib.crc32(payload))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "BoWStore":
        if len(data) < 20:
            raise StoreIntegrityError("file too short for a store header", len(data))
        if data[:4] != MAGIC:
            raise StoreIntegrityError("bad magic, not a DeepBoW store", 0)
        version, _ = struct.unpack_from("<HH", data, 4)
        if version != FORMAT_VERSION:
            raise StoreVersionError(f"store format version {version} unsupported (expected {FORMAT_VERSION})")
        payload = data[8:-4]
        (crc,) = struct.unpack_from("<I", data, len(data) - 4)
        if zlib.crc32(payload) != crc:
            raise StoreIntegrityError("checksum mismatch", len(data) - 4)
        (meta_len,) = struct.unpack_from("<I", data, 8)
        meta_end = 12 + meta_len
        if meta_end + 8 > len(data) - 4:
            raise StoreIntegrityError("metadata block overruns file", 8)
        try:
            meta = json.loads(data[12:meta_end].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise StoreIntegrityError(f"unreadable metadata: {exc}", 12) from exc
        (n,) = struct.unpack_from("<Q", data, meta_end)
        body = np.frombuffer(data[:-4], dtype=np.uint8)
        id_start, id_len, indptr, indices, wbits, end, err, err_off = _decode_records(body, meta_end + 8, n)
        if err == 1:
            raise StoreIntegrityError("truncated record", int(err_off))
        if err == 2:
            raise StoreIntegrityError("posting indices not strictly increasing", int(err_off))
        if err == 3:
            raise StoreIntegrityError("varint overflow", int(err_off))
        if end != len(data) - 4:
            raise StoreIntegrityError(f"{len(data) - 4 - end} unexpected bytes after records", int(end))
        ids = [data[s:s + k].decode("utf-8") for s, k in zip(id_start.tolist(), id_len.tolist())]
        store = cls(meta.get("side", ""), ids, indptr, indices, wbits.view(np.float32), meta)
        store.validate()
        return store

    @classmethod
    def load(cls, path) -> "BoWStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def save(store: BoWStore, path) -> None:
    store.save(path)


def load(path) -> BoWStore:
    return BoWStore.load(path)


def precompute(texts, model, side: str, mode: str = "q_synonym", truncation=None,
               batch_size: int = 64) -> BoWStore:
    """Encode ``(id, text)`` pairs through the side's head into a store.

    Texts with no tokens are skipped and counted; empty representations
    after truncation are kept (they score 0 against everything).
    """
    from .inference import NO_TRUNCATION

    truncation = truncation or NO_TRUNCATION
    pairs = list(texts)
    encoded = model.run([t for _, t in pairs], batch_size=batch_size)
    entries, skipped = [], 0
    for (ident, _), enc in zip(pairs, encoded):
        if enc is None:
            skipped += 1
            continue
        entries.append((ident, model.represent(enc, side, mode, truncation)))
    if skipped:
        log.info("precompute %s: skipped %d empty texts", side, skipped)
    meta = {
        "vocab_hash": model.vocab.digest,
        "model_hash": model.model_hash,
        "truncation": truncation.to_dict(),
        "mode": mode,
        "representation": "tw" if (side == "query" and mode == "q_weight") else "se",
    }
    store = BoWStore.from_entries(side, entries, meta)
    store.skipped = skipped
    return store
