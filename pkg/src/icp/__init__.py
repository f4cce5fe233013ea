"""Image cloud processing toolkit.

Packed image containers, a block-partitioned map/reduce feature-extraction
engine, a TCP dispatch service, and benchmark harnesses.
"""

from __future__ import annotations

from .errors import IcpError
from .pimage import ColorMode, PImage, PixelMatrix, decode_pnm, decode_record, encode_record, to_grey
from .store import BigImage, IndexEntry, filename_id, pack_directory

__version__ = "0.1.0"

__all__ = [
    "IcpError",
    "ColorMode",
    "PImage",
    "PixelMatrix",
    "decode_pnm",
    "decode_record",
    "encode_record",
    "to_grey",
    "BigImage",
    "IndexEntry",
    "filename_id",
    "pack_directory",
    "__version__",
]
