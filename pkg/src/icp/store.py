"""The packed container: one data file of concatenated image records plus an
index file mapping filename hashes to (offset, length).

Reading a single image is one seek+read; scanning the whole container opens
two files total, which is what makes it beat per-file reads at scale.  A
store is single-writer; once loaded it can serve any number of readers.

Index file layout (little-endian)::

    magic "BIGX" | version u8=1 | entry_count u64 |
    per entry: id u64 | start_offset u64 | record_length u64 |
               filename_len u16 | filename UTF-8

File naming: ``<name>.bigdata`` / ``<name>.bigidx``; rollover siblings insert
a numeric suffix before the extension (``<name>.1.bigdata``, ...).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from . import pimage
from .errors import (
    BadMagic,
    BadVersion,
    CorruptRecord,
    DuplicateFilename,
    IcpError,
    IndexDataMismatch,
    NotFound,
    ThresholdExceeded,
)
from .pimage import MIN_RECORD, PImage

INDEX_MAGIC = b"BIGX"
INDEX_VERSION = 1
_IDX_HEAD = struct.Struct("<4sBQ")      # magic, version, entry_count
_IDX_ENTRY = struct.Struct("<QQQH")     # id, start_offset, record_length, filename_len

DATA_SUFFIX = ".bigdata"
INDEX_SUFFIX = ".bigidx"

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def filename_id(name: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 filename."""
    h = FNV64_OFFSET
    for b in name.encode("utf-8"):
        h = ((h ^ b) * FNV64_PRIME) & _U64
    return h


@dataclass(frozen=True)
class IndexEntry:
    id: int
    start_offset: int
    record_length: int
    filename: str


class MemoryByteStore:
    """Appendable in-memory byte store."""

    def __init__(self, data: bytes = b""):
        self._buf = bytearray(data)

    @property
    def size(self) -> int:
        return len(self._buf)

    def append(self, data: bytes) -> None:
        self._buf += data

    def read_at(self, offset: int, length: int) -> bytes:
        return bytes(self._buf[offset : offset + length])

    def close(self) -> None:
        pass


class FileByteStore:
    """Byte store over a single file handle, opened lazily.

    Not thread-safe: the seek+read pair races if shared.  Concurrent readers
    each construct their own instance over the same path.
    """

    def __init__(self, path: str | os.PathLike, writable: bool = False):
        self.path = Path(path)
        self.writable = writable
        self._fh = None
        if writable:
            self._size = self.path.stat().st_size if self.path.exists() else 0
        else:
            self._size = self.path.stat().st_size

    @property
    def size(self) -> int:
        return self._size

    def _handle(self):
        if self._fh is None:
            self._fh = open(self.path, "a+b" if self.writable else "rb")
        return self._fh

    def append(self, data: bytes) -> None:
        if not self.writable:
            raise IcpError(f"{self.path} opened read-only")
        fh = self._handle()
        fh.write(data)
        self._size += len(data)

    def read_at(self, offset: int, length: int) -> bytes:
        fh = self._handle()
        if self.writable:
            fh.flush()
        fh.seek(offset)
        return fh.read(length)

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class BigImage:
    """Container of image records with an in-memory (id, offset) index.

    ``threshold`` caps the data size: an append that would cross it raises
    ThresholdExceeded so the caller can roll over to a sibling store.  A
    single record larger than the threshold is still accepted into an empty
    store, otherwise it could never be stored at all.
    """

    def __init__(self, data_store=None, threshold: int | None = None):
        self.entries: list[IndexEntry] = []
        self.data = data_store if data_store is not None else MemoryByteStore()
        self.threshold = threshold
        self.data_size = 0
        self._by_name: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.entries)

    # --- write path ---

    def append(self, img: PImage) -> IndexEntry:
        record = pimage.encode_record(img)
        if img.filename in self._by_name:
            raise DuplicateFilename(img.filename)
        if (
            self.threshold is not None
            and self.entries
            and self.data_size + len(record) > self.threshold
        ):
            raise ThresholdExceeded(
                f"{self.data_size} + {len(record)} bytes exceeds threshold {self.threshold}"
            )
        entry = IndexEntry(
            id=filename_id(img.filename),
            start_offset=self.data_size,
            record_length=len(record),
            filename=img.filename,
        )
        self.data.append(record)
        self._by_name[img.filename] = len(self.entries)
        self.entries.append(entry)
        self.data_size += len(record)
        return entry

    # --- read path ---

    def lookup(self, name: str) -> PImage:
        """One seek+read of exactly record_length bytes, then decode.

        Keyed by the stored filename, so two names colliding on the 64-bit
        id can never shadow each other.
        """
        idx = self._by_name.get(name)
        if idx is None:
            raise NotFound(name)
        entry = self.entries[idx]
        raw = self.data.read_at(entry.start_offset, entry.record_length)
        try:
            img = pimage.decode_record(raw)
        except IcpError as exc:
            raise CorruptRecord(
                f"record for {name!r} at offset {entry.start_offset}: {exc}",
                offset=entry.start_offset,
                filename=name,
            ) from exc
        return img

    def iterate(self) -> Iterator[PImage]:
        """Yield every stored image in insertion order (one sequential pass)."""
        for entry in self.entries:
            raw = self.data.read_at(entry.start_offset, entry.record_length)
            try:
                yield pimage.decode_record(raw)
            except IcpError as exc:
                raise CorruptRecord(
                    f"record for {entry.filename!r} at offset {entry.start_offset}: {exc}",
                    offset=entry.start_offset,
                    filename=entry.filename,
                ) from exc

    # --- invariants ---

    def verify(self) -> None:
        """Check the offset chain, id consistency, and filename uniqueness."""
        expected = 0
        seen: set[str] = set()
        for i, e in enumerate(self.entries):
            if e.start_offset != expected:
                raise IndexDataMismatch(
                    f"entry {i} starts at {e.start_offset}, offset chain expects {expected}"
                )
            if e.record_length < MIN_RECORD:
                raise IndexDataMismatch(
                    f"entry {i} record_length {e.record_length} < minimum {MIN_RECORD}"
                )
            if e.id != filename_id(e.filename):
                raise IndexDataMismatch(f"entry {i} id does not hash its filename")
            if e.filename in seen:
                raise IndexDataMismatch(f"duplicate filename {e.filename!r}")
            seen.add(e.filename)
            expected += e.record_length
        if expected != self.data_size:
            raise IndexDataMismatch(
                f"entry lengths sum to {expected}, data_size is {self.data_size}"
            )
        if self.data_size != self.data.size:
            raise IndexDataMismatch(
                f"data_size {self.data_size} != byte store size {self.data.size}"
            )

    # --- persistence ---

    def save(self, base: str | os.PathLike) -> tuple[Path, Path]:
        """Write ``<base>.bigdata`` and ``<base>.bigidx``; returns both paths.

        The index is rewritten in full.  For a file-backed store created by
        this process the data bytes are already on disk and only flushed.
        """
        base = Path(base)
        data_path = base.with_name(base.name + DATA_SUFFIX)
        index_path = base.with_name(base.name + INDEX_SUFFIX)
        if isinstance(self.data, FileByteStore) and self.data.path == data_path:
            self.data.flush()
        else:
            with open(data_path, "wb") as fh:
                chunk = 1 << 22
                pos = 0
                while pos < self.data_size:
                    n = min(chunk, self.data_size - pos)
                    fh.write(self.data.read_at(pos, n))
                    pos += n
        with open(index_path, "wb") as fh:
            fh.write(_IDX_HEAD.pack(INDEX_MAGIC, INDEX_VERSION, len(self.entries)))
            for e in self.entries:
                raw_name = e.filename.encode("utf-8")
                fh.write(_IDX_ENTRY.pack(e.id, e.start_offset, e.record_length, len(raw_name)))
                fh.write(raw_name)
        return data_path, index_path

    @classmethod
    def load(cls, data_path: str | os.PathLike, index_path: str | os.PathLike) -> "BigImage":
        """Load and verify a saved store; malformed input never yields a store."""
        data_path = Path(data_path)
        index_path = Path(index_path)
        raw = index_path.read_bytes()
        if len(raw) < _IDX_HEAD.size:
            raise IndexDataMismatch(f"index file is {len(raw)} bytes, header needs {_IDX_HEAD.size}")
        magic, version, count = _IDX_HEAD.unpack_from(raw)
        if magic != INDEX_MAGIC:
            raise BadMagic(f"index magic {magic!r} != {INDEX_MAGIC!r}")
        if version != INDEX_VERSION:
            raise BadVersion(f"index version {version} not supported")
        entries: list[IndexEntry] = []
        pos = _IDX_HEAD.size
        for i in range(count):
            if len(raw) < pos + _IDX_ENTRY.size:
                raise IndexDataMismatch(f"index truncated inside entry {i}")
            eid, start, length, name_len = _IDX_ENTRY.unpack_from(raw, pos)
            pos += _IDX_ENTRY.size
            if len(raw) < pos + name_len:
                raise IndexDataMismatch(f"index truncated inside entry {i} filename")
            try:
                name = raw[pos : pos + name_len].decode("utf-8")
            except UnicodeDecodeError:
                raise IndexDataMismatch(f"entry {i} filename is not valid UTF-8") from None
            pos += name_len
            entries.append(IndexEntry(eid, start, length, name))
        if pos != len(raw):
            raise IndexDataMismatch(f"{len(raw) - pos} trailing bytes after last index entry")
        try:
            data = FileByteStore(data_path)
        except OSError as exc:
            raise IndexDataMismatch(f"cannot stat data file: {exc}") from None
        store = cls(data_store=data)
        store.entries = entries
        store.data_size = sum(e.record_length for e in entries)
        store._by_name = {}
        for i, e in enumerate(entries):
            if e.filename in store._by_name:
                raise IndexDataMismatch(f"duplicate filename {e.filename!r}")
            store._by_name[e.filename] = i
        store.verify()
        return store

    @classmethod
    def load_base(cls, base: str | os.PathLike) -> "BigImage":
        base = Path(base)
        return cls.load(
            base.with_name(base.name + DATA_SUFFIX),
            base.with_name(base.name + INDEX_SUFFIX),
        )

    def close(self) -> None:
        self.data.close()


def rollover_base(base: Path, n: int) -> Path:
    """Sibling store name: base for n=0, then base.1, base.2, ..."""
    return base if n == 0 else base.with_name(f"{base.name}.{n}")


def pack_directory(
    directory: str | os.PathLike,
    out_base: str | os.PathLike,
    threshold: int | None = None,
) -> tuple[list[tuple[Path, Path]], list[tuple[str, IcpError]]]:
    """Pack every decodable PNM file in a directory into one or more stores.

    Files are processed in lexicographic filename order; a store rolls over
    to a numbered sibling when the threshold would be crossed.  Per-file
    decode failures are collected and returned, not fatal.
    """
    directory = Path(directory)
    out_base = Path(out_base)
    stores: list[tuple[Path, Path]] = []
    failures: list[tuple[str, IcpError]] = []
    current = BigImage(threshold=threshold)
    n = 0

    def finish(store: BigImage) -> None:
        nonlocal n
        if store.entries:
            stores.append(store.save(rollover_base(out_base, n)))
            n += 1

    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        try:
            img = pimage.decode_pnm(path.read_bytes(), path.name)
        except IcpError as exc:
            failures.append((path.name, exc))
            continue
        try:
            current.append(img)
        except ThresholdExceeded:
            finish(current)
            current = BigImage(threshold=threshold)
            current.append(img)
    finish(current)
    return stores, failures
