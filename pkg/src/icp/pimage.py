"""Compact image records: PNM decoding, grey conversion, binary round trip.

A record keeps only what downstream processing needs -- filename, dimensions
and raw pixels -- so a container of them can be written and re-read without
ever touching the original encoded files again.

Record layout (all integers little-endian)::

    magic "PIMG" | version u8=1 | filename_len u16 | filename UTF-8 |
    width u32 | height u32 | mode u8 (0=grey, 1=rgb) | pixel bytes

Pixels are row-major; RGB is interleaved R,G,B per pixel, one byte per
sample.  The minimum legal record is 18 bytes (1-byte filename, one grey
pixel).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadHeader,
    BadMagic,
    BadVersion,
    FilenameTooLong,
    TruncatedInput,
    UnsupportedFormat,
)

RECORD_MAGIC = b"PIMG"
RECORD_VERSION = 1
_HEAD = struct.Struct("<4sBH")   # magic, version, filename_len
_DIMS = struct.Struct("<IIB")    # width, height, mode
RECORD_OVERHEAD = _HEAD.size + _DIMS.size   # 16 bytes of fixed fields
MIN_RECORD = RECORD_OVERHEAD + 2            # shortest filename + one pixel

MAX_FILENAME_BYTES = 0xFFFF
_FORBIDDEN_FILENAME_CHARS = ("/", "\\", "\x00")

# Grey weights, in ten-thousandths: round_half_up(0.2989 R + 0.5870 G + 0.1140 B)
# computed exactly in integer arithmetic.
_GREY_WEIGHTS = (2989, 5870, 1140)


class ColorMode(enum.IntEnum):
    GREY = 0
    RGB = 1

    @property
    def channels(self) -> int:
        return 1 if self is ColorMode.GREY else 3


@dataclass(frozen=True, eq=False)
class PixelMatrix:
    """Row-major uint8 pixel block: (h, w) for grey, (h, w, 3) for RGB."""

    mode: ColorMode
    pixels: np.ndarray

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.mode.channels

    def tobytes(self) -> bytes:
        return np.ascontiguousarray(self.pixels).tobytes()

    def validate(self) -> None:
        p = self.pixels
        if p.dtype != np.uint8:
            raise BadHeader(f"pixel dtype must be uint8, got {p.dtype}")
        expect_ndim = 2 if self.mode is ColorMode.GREY else 3
        if p.ndim != expect_ndim or (self.mode is ColorMode.RGB and p.shape[2] != 3):
            raise BadHeader(f"pixel shape {p.shape} does not match mode {self.mode.name}")
        if self.width < 1 or self.height < 1:
            raise BadHeader(f"dimensions must be >= 1, got {self.width}x{self.height}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelMatrix):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.pixels.shape == other.pixels.shape
            and self.tobytes() == other.tobytes()
        )


@dataclass(frozen=True, eq=False)
class PImage:
    filename: str
    matrix: PixelMatrix

    @property
    def width(self) -> int:
        return self.matrix.width

    @property
    def height(self) -> int:
        return self.matrix.height

    @property
    def mode(self) -> ColorMode:
        return self.matrix.mode

    def validate(self) -> None:
        validate_filename(self.filename)
        self.matrix.validate()

    def __eq__(self, other) -> bool:
        if not isinstance(other, PImage):
            return NotImplemented
        return self.filename == other.filename and self.matrix == other.matrix


def validate_filename(name: str) -> None:
    raw = name.encode("utf-8")
    if len(raw) < 1:
        raise BadHeader("filename must not be empty")
    if len(raw) > MAX_FILENAME_BYTES:
        raise FilenameTooLong(
            f"filename is {len(raw)} bytes, limit {MAX_FILENAME_BYTES}"
        )
    for ch in _FORBIDDEN_FILENAME_CHARS:
        if ch in name:
            raise BadHeader(f"filename contains forbidden character {ch!r}")


def from_array(filename: str, pixels: np.ndarray) -> PImage:
    """Wrap a uint8 array ((h,w) grey or (h,w,3) RGB) as a validated PImage."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    mode = ColorMode.GREY if pixels.ndim == 2 else ColorMode.RGB
    img = PImage(filename, PixelMatrix(mode, pixels))
    img.validate()
    return img


# --- PNM (binary P5/P6, maxval 255) ---

_WS = b" \t\r\n\v\f"


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c in (b"#",):
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c in _WS:
            pos += 1
        else:
            break
    if pos >= n:
        raise TruncatedInput("PNM header ends before all fields are present")
    start = pos
    while pos < n and data[pos : pos + 1] not in _WS and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def _header_int(data: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, pos = _next_token(data, pos)
    if not tok.isdigit():
        raise BadHeader(f"PNM {what} is not a decimal integer: {tok[:16]!r}")
    return int(tok), pos


def decode_pnm(data: bytes, filename: str) -> PImage:
    """Decode a binary PNM stream (P5 grey / P6 RGB, maxval 255).

    Reads exactly width*height*channels pixel bytes after the single
    whitespace byte that terminates the maxval field; trailing bytes are
    ignored.
    """
    if len(data) < 2:
        raise TruncatedInput("input shorter than a PNM magic number")
    magic = data[:2]
    if magic == b"P5":
        mode = ColorMode.GREY
    elif magic == b"P6":
        mode = ColorMode.RGB
    else:
        raise UnsupportedFormat(f"not a binary PNM stream (magic {magic!r})")
    width, pos = _header_int(data, 2, "width")
    height, pos = _header_int(data, pos, "height")
    maxval, pos = _header_int(data, pos, "maxval")
    if width < 1 or height < 1:
        raise BadHeader(f"nonpositive dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} not supported (only 255)")
    if pos >= len(data):
        raise TruncatedInput("header ends before pixel data")
    if data[pos : pos + 1] not in _WS:
        raise BadHeader("maxval not followed by a whitespace byte")
    pos += 1
    count = width * height * mode.channels
    raw = data[pos : pos + count]
    if len(raw) < count:
        raise TruncatedInput(f"expected {count} pixel bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8).copy()
    shape = (height, width) if mode is ColorMode.GREY else (height, width, 3)
    return PImage(filename, PixelMatrix(mode, pixels.reshape(shape)))


def encode_pnm(img: PImage) -> bytes:
    """Inverse of decode_pnm; used by the benchmark dataset generator."""
    magic = b"P5" if img.mode is ColorMode.GREY else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.matrix.tobytes()


# --- grey conversion ---

def to_grey(img: PImage) -> PImage:
    """Convert RGB to grey with round-half-up weights 0.2989/0.5870/0.1140.

    Exact integer arithmetic: grey = (2989 R + 5870 G + 1140 B + 5000) // 10000,
    which is round-half-up of the decimal formula (weights sum to 0.9999, so
    the result never exceeds 255).  Grey images pass through unchanged.
    """
    if img.mode is ColorMode.GREY:
        return img
    rgb = img.matrix.pixels.astype(np.uint32)
    wr, wg, wb = _GREY_WEIGHTS
    acc = rgb[..., 0] * wr + rgb[..., 1] * wg + rgb[..., 2] * wb + 5000
    grey = (acc // 10000).astype(np.uint8)
    return PImage(img.filename, PixelMatrix(ColorMode.GREY, grey))


# --- binary record codec ---

def encode_record(img: PImage) -> bytes:
    img.validate()
    raw_name = img.filename.encode("utf-8")
    if len(raw_name) > MAX_FILENAME_BYTES:
        raise FilenameTooLong(f"filename is {len(raw_name)} bytes, limit {MAX_FILENAME_BYTES}")
    return b"".join(
        (
            _HEAD.pack(RECORD_MAGIC, RECORD_VERSION, len(raw_name)),
            raw_name,
            _DIMS.pack(img.width, img.height, int(img.mode)),
            img.matrix.tobytes(),
        )
    )


def record_length(img: PImage) -> int:
    raw_name = img.filename.encode("utf-8")
    return RECORD_OVERHEAD + len(raw_name) + img.width * img.height * img.mode.channels


def decode_record(data: bytes) -> PImage:
    """Decode one record from the head of ``data``; trailing bytes ignored."""
    if len(data) < _HEAD.size:
        raise TruncatedInput(f"record header needs {_HEAD.size} bytes, got {len(data)}")
    magic, version, name_len = _HEAD.unpack_from(data)
    if magic != RECORD_MAGIC:
        raise BadMagic(f"record magic {magic!r} != {RECORD_MAGIC!r}")
    if version != RECORD_VERSION:
        raise BadVersion(f"record version {version} not supported")
    pos = _HEAD.size
    if len(data) < pos + name_len + _DIMS.size:
        raise TruncatedInput("record cut inside filename or dimension fields")
    try:
        filename = data[pos : pos + name_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BadHeader(f"filename is not valid UTF-8: {exc}") from None
    pos += name_len
    width, height, mode_byte = _DIMS.unpack_from(data, pos)
    pos += _DIMS.size
    try:
        mode = ColorMode(mode_byte)
    except ValueError:
        raise BadHeader(f"unknown color mode byte {mode_byte:#04x}") from None
    if width < 1 or height < 1:
        raise BadHeader(f"nonpositive dimensions {width}x{height}")
    validate_filename(filename)
    count = width * height * mode.channels
    raw = data[pos : pos + count]
    if len(raw) < count:
        raise TruncatedInput(f"expected {count} pixel bytes, found {len(raw)}")
    pixels = np.frombuffer(raw, dtype=np.uint8).copy()
    shape = (height, width) if mode is ColorMode.GREY else (height, width, 3)
    return PImage(filename, PixelMatrix(mode, pixels.reshape(shape)))
