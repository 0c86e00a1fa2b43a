"""In-memory images and the PPM/PGM/PNG codecs used throughout the toolkit.

Samples are 8-bit, stored as a ``(height, width, channels)`` uint8 array, which
is row-major and channel-interleaved (R, G, B) when flattened.
"""

from __future__ import annotations

import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    FormatChannelMismatch,
    MalformedFile,
    OutOfRange,
    UnsupportedColorType,
    UnsupportedDepth,
)

PathLike = Union[str, Path]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
FORMATS = ("ppm", "pgm", "png")
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")

# refuse absurd headers before allocating
_MAX_PIXELS = 1 << 28


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Raster:
    """An 8-bit image with 1 (gray) or 3 (RGB) channels."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("raster must be at least 1x1")
        if px.dtype != np.uint8:
            if not np.issubdtype(px.dtype, np.integer):
                raise TypeError(f"raster samples must be integers, got {px.dtype}")
            if px.min() < 0 or px.max() > 255:
                raise OutOfRange("raster samples must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(px.copy()))

    @classmethod
    def from_samples(cls, width: int, height: int, channels: int, samples) -> "Raster":
        flat = np.asarray(samples)
        if flat.size != width * height * channels:
            raise ValueError(
                f"expected {width * height * channels} samples, got {flat.size}")
        return cls(flat.reshape(height, width, channels))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def samples(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (self.pixels.shape == other.pixels.shape
                and bool(np.array_equal(self.pixels, other.pixels)))

    __hash__ = None

    def __repr__(self):
        return f"Raster({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True, eq=False)
class GrayMap:
    """Single-channel float image sitting between grayscale conversion and quantization."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"expected (H, W) values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("gray map values must be finite")
        object.__setattr__(self, "values", _frozen(v.copy()))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayMap):
            return NotImplemented
        return (self.values.shape == other.values.shape
                and bool(np.array_equal(self.values, other.values)))

    __hash__ = None

    def __repr__(self):
        return f"GrayMap({self.width}x{self.height})"


def quantize(gray: GrayMap) -> Raster:
    """Round a gray map to 8-bit samples, ties away from zero.

    Values must already be clamped to [0, 255].
    """
    v = gray.values
    if v.min() < 0.0 or v.max() > 255.0:
        raise OutOfRange("gray map values outside [0, 255]; clamp before quantizing")
    lo = np.floor(v)
    # v - floor(v) is exact for v in [0, 256), so the tie test is exact too
    out = lo + (v - lo >= 0.5)
    return Raster(out.astype(np.uint8))


# ---------------------------------------------------------------------------
# PPM / PGM

_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n\r]*[\n\r])*(\d+)")


def _decode_pnm(data: bytes) -> Raster:
    magic = data[:2]
    channels = 3 if magic == b"P6" else 1
    pos = 2
    fields = []
    for _ in range(3):
        if pos >= len(data) or not (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            raise MalformedFile("PNM header fields must be separated by whitespace")
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise MalformedFile("truncated or malformed PNM header")
        fields.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = fields
    if width < 1 or height < 1 or width * height > _MAX_PIXELS:
        raise MalformedFile(f"bad PNM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedDepth(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MalformedFile("missing whitespace after PNM maxval")
    pos += 1
    expected = width * height * channels
    payload = data[pos:]
    if len(payload) != expected:
        raise MalformedFile(f"PNM payload is {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Raster(arr)


def _encode_pnm(img: Raster, magic: bytes) -> bytes:
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.pixels.tobytes()


# ---------------------------------------------------------------------------
# PNG

def _chunk(kind: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(kind + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", crc)


def _encode_png(img: Raster) -> bytes:
    color_type = 2 if img.channels == 3 else 0
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, color_type, 0, 0, 0)
    rows = img.pixels.reshape(img.height, img.width * img.channels)
    # filter type 0 on every row
    raw = np.hstack([np.zeros((img.height, 1), np.uint8), rows]).tobytes()
    return (PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(raw, 6)) + _chunk(b"IEND", b""))


def _iter_chunks(data: bytes):
    pos = len(PNG_SIGNATURE)
    while True:
        if pos + 8 > len(data):
            raise MalformedFile("truncated PNG chunk header")
        (length,) = struct.unpack_from(">I", data, pos)
        kind = data[pos + 4:pos + 8]
        end = pos + 12 + length
        if length > 0x7FFFFFFF or end > len(data):
            raise MalformedFile("truncated PNG chunk")
        payload = data[pos + 8:pos + 8 + length]
        (crc,) = struct.unpack_from(">I", data, pos + 8 + length)
        if zlib.crc32(kind + payload) & 0xFFFFFFFF != crc:
            raise MalformedFile(f"CRC mismatch in {kind!r} chunk")
        yield kind, payload
        pos = end
        if kind == b"IEND":
            if pos != len(data):
                raise MalformedFile("data after IEND")
            return


def _unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    out = np.empty((height, stride), dtype=np.uint8)
    prior = np.zeros(stride, dtype=np.uint8)
    for y in range(height):
        start = y * (stride + 1)
        ftype = raw[start]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=start + 1)
        if ftype == 0:
            cur = line.copy()
        elif ftype == 1:
            cols = line.reshape(-1, bpp).astype(np.uint64)
            cur = (np.cumsum(cols, axis=0) % 256).astype(np.uint8).reshape(-1)
        elif ftype == 2:
            cur = line + prior  # uint8 wraps mod 256
        elif ftype in (3, 4):
            cur = _unfilter_sequential(ftype, line.tobytes(), prior.tobytes(), bpp)
        else:
            raise MalformedFile(f"unknown PNG filter type {ftype}")
        out[y] = cur
        prior = out[y]
    return out


def _unfilter_sequential(ftype: int, line: bytes, prior: bytes, bpp: int) -> np.ndarray:
    cur = bytearray(line)
    n = len(cur)
    if ftype == 3:
        for i in range(n):
            left = cur[i - bpp] if i >= bpp else 0
            cur[i] = (cur[i] + ((left + prior[i]) >> 1)) & 0xFF
    else:
        for i in range(n):
            if i >= bpp:
                a, c = cur[i - bpp], prior[i - bpp]
            else:
                a = c = 0
            b = prior[i]
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            if pa <= pb and pa <= pc:
                pred = a
            elif pb <= pc:
                pred = b
            else:
                pred = c
            cur[i] = (cur[i] + pred) & 0xFF
    return np.frombuffer(bytes(cur), dtype=np.uint8)


def _decode_png(data: bytes) -> Raster:
    chunks = _iter_chunks(data)
    kind, ihdr = next(chunks)
    if kind != b"IHDR" or len(ihdr) != 13:
        raise MalformedFile("PNG must start with a 13-byte IHDR chunk")
    width, height, depth, color_type, comp, filt, interlace = struct.unpack(">IIBBBBB", ihdr)
    if width < 1 or height < 1 or width * height > _MAX_PIXELS:
        raise MalformedFile(f"bad PNG dimensions {width}x{height}")
    allowed = {0: (1, 2, 4, 8, 16), 2: (8, 16), 3: (1, 2, 4, 8), 4: (8, 16), 6: (8, 16)}
    if color_type not in allowed or depth not in allowed[color_type]:
        raise MalformedFile(f"invalid PNG depth/color type {depth}/{color_type}")
    if comp != 0 or filt != 0 or interlace not in (0, 1):
        raise MalformedFile("invalid PNG compression, filter or interlace method")
    if color_type in (3, 4, 6):
        raise UnsupportedColorType(f"PNG color type {color_type} (palette/alpha) is not supported")
    if depth != 8:
        raise UnsupportedDepth(f"only 8-bit PNG is supported, got {depth}-bit")
    if interlace:
        raise UnsupportedColorType("interlaced PNG is not supported")

    idat = []
    seen_end = False
    for kind, payload in chunks:
        if kind == b"IDAT":
            idat.append(payload)
        elif kind == b"IEND":
            seen_end = True
        elif kind == b"IHDR" or not kind[:1].isalpha():
            raise MalformedFile(f"unexpected PNG chunk {kind!r}")
        elif kind[:1].isupper() and kind != b"PLTE":
            raise MalformedFile(f"unknown critical PNG chunk {kind!r}")
    if not seen_end:
        raise MalformedFile("PNG has no IEND chunk")
    if not idat:
        raise MalformedFile("PNG has no IDAT chunk")

    channels = 3 if color_type == 2 else 1
    stride = width * channels
    expected = height * (stride + 1)
    try:
        inflater = zlib.decompressobj()
        raw = inflater.decompress(b"".join(idat), expected + 1)
        if not inflater.eof:
            raise MalformedFile("truncated or oversized PNG image data")
    except zlib.error as exc:
        raise MalformedFile(f"corrupt PNG image data: {exc}") from None
    if len(raw) != expected:
        raise MalformedFile(f"PNG image data is {len(raw)} bytes, expected {expected}")
    rows = _unfilter(raw, height, stride, channels)
    return Raster(rows.reshape(height, width, channels))


# ---------------------------------------------------------------------------
# public codec surface

def decode_image(data: bytes) -> Raster:
    """Decode a P6/P5 netpbm or 8-bit gray/RGB PNG stream."""
    data = bytes(data)
    if data.startswith(PNG_SIGNATURE):
        return _decode_png(data)
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data)
    raise MalformedFile("unrecognized image format (bad magic)")


def encode_image(img: Raster, fmt: str) -> bytes:
    fmt = fmt.lower()
    if fmt == "pgm":
        if img.channels != 1:
            raise FormatChannelMismatch("pgm requires a single-channel raster")
        return _encode_pnm(img, b"P5")
    if fmt == "ppm":
        if img.channels != 3:
            raise FormatChannelMismatch("ppm requires a three-channel raster")
        return _encode_pnm(img, b"P6")
    if fmt == "png":
        return _encode_png(img)
    raise ValueError(f"unknown image format {fmt!r}; expected one of {FORMATS}")


def format_for_path(path: PathLike) -> str:
    suffix = Path(path).suffix.lower()
    if suffix not in IMAGE_SUFFIXES:
        raise ValueError(f"cannot infer image format from {str(path)!r}")
    return suffix[1:]


def read_image(path: PathLike) -> Raster:
    return decode_image(Path(path).read_bytes())


def write_image(path: PathLike, img: Raster, fmt: str | None = None) -> None:
    path = Path(path)
    path.write_bytes(encode_image(img, fmt or format_for_path(path)))
