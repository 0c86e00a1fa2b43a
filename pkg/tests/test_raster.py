import struct
import zlib
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irforge.errors import (
    FormatChannelMismatch,
    IrforgeError,
    MalformedFile,
    OutOfRange,
    UnsupportedColorType,
    UnsupportedDepth,
)
from irforge.raster import GrayMap, Raster, decode_image, encode_image, quantize

from conftest import pil_decode, pil_png, random_raster


def round_half_away(v: float) -> int:
    # exact decimal expansion of the float, so no binary rounding sneaks in
    return int(Decimal(v).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def png_with_filters(arr: np.ndarray, filters, color_type=None, depth=8, extra_chunks=()) -> bytes:
    """Reference PNG writer applying the given per-row filter types."""
    h, w, c = arr.shape
    bpp = c
    rows = arr.reshape(h, w * c).astype(int)
    raw = bytearray()
    prior = [0] * (w * c)
    for y in range(h):
        ft = filters[y % len(filters)]
        line = rows[y].tolist()
        out = []
        for i, x in enumerate(line):
            a = line[i - bpp] if i >= bpp else 0
            b = prior[i]
            cc = prior[i - bpp] if i >= bpp else 0
            if ft == 0:
                pred = 0
            elif ft == 1:
                pred = a
            elif ft == 2:
                pred = b
            elif ft == 3:
                pred = (a + b) // 2
            else:
                p = a + b - cc
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - cc)
                pred = a if pa <= pb and pa <= pc else (b if pb <= pc else cc)
            out.append((x - pred) % 256)
        raw.append(ft)
        raw.extend(out)
        prior = line

    def chunk(kind, data):
        return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(kind + data))

    ct = (2 if c == 3 else 0) if color_type is None else color_type
    ihdr = struct.pack(">IIBBBBB", w, h, depth, ct, 0, 0, 0)
    body = b"".join(chunk(k, d) for k, d in extra_chunks)
    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + body
            + chunk(b"IDAT", zlib.compress(bytes(raw))) + chunk(b"IEND", b""))


class TestDecodeEncode:
    def test_p6_example(self):
        r = decode_image(b"P6 2 1 255\n" + bytes([0, 0, 0, 255, 255, 255]))
        assert (r.width, r.height, r.channels) == (2, 1, 3)
        assert r.samples.tolist() == [0, 0, 0, 255, 255, 255]

    def test_p5_example(self):
        r = decode_image(b"P5 1 1 255\n" + bytes([128]))
        assert (r.width, r.height, r.channels) == (1, 1, 1)
        assert r.samples.tolist() == [128]

    def test_pgm_encoding_bytes(self):
        img = Raster.from_samples(1, 1, 1, [7])
        assert encode_image(img, "pgm") == b"P5\n1 1\n255\n\x07"

    def test_pnm_header_comments(self):
        r = decode_image(b"P5\n# made by hand\n2 1\n# max\n255\n\x01\x02")
        assert r.samples.tolist() == [1, 2]

    def test_png_from_reference_encoder(self, rng):
        arr = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        assert np.array_equal(decode_image(pil_png(arr)).pixels, arr)

    def test_png_decodes_under_reference_decoder(self, rng):
        img = random_raster(rng, 3, 2, 3)
        assert np.array_equal(pil_decode(encode_image(img, "png")), img.pixels)

    @pytest.mark.parametrize("filters", [[0], [1], [2], [3], [4], [0, 1, 2, 3, 4]])
    @pytest.mark.parametrize("channels", [1, 3])
    def test_png_every_filter_type(self, rng, filters, channels):
        arr = rng.integers(0, 256, (9, 7, channels), dtype=np.uint8)
        assert np.array_equal(decode_image(png_with_filters(arr, filters)).pixels, arr)

    def test_png_skips_ancillary_chunks(self, rng):
        arr = rng.integers(0, 256, (3, 3, 3), dtype=np.uint8)
        data = png_with_filters(arr, [0], extra_chunks=[(b"tEXt", b"Comment\x00hi")])
        assert np.array_equal(decode_image(data).pixels, arr)

    @pytest.mark.parametrize("fmt,channels", [("ppm", 3), ("pgm", 1), ("png", 1), ("png", 3)])
    @given(data=st.data())
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, fmt, channels, data):
        w = data.draw(st.integers(1, 12))
        h = data.draw(st.integers(1, 12))
        raw = data.draw(st.binary(min_size=w * h * channels, max_size=w * h * channels))
        img = Raster.from_samples(w, h, channels, np.frombuffer(raw, np.uint8))
        assert decode_image(encode_image(img, fmt)) == img

    def test_format_channel_mismatch(self, rng):
        with pytest.raises(FormatChannelMismatch):
            encode_image(random_raster(rng, 2, 2, 3), "pgm")
        with pytest.raises(FormatChannelMismatch):
            encode_image(random_raster(rng, 2, 2, 1), "ppm")


class TestDecodeErrors:
    def test_bad_magic(self):
        with pytest.raises(MalformedFile):
            decode_image(b"GIF89a")

    def test_pnm_maxval(self):
        with pytest.raises(UnsupportedDepth):
            decode_image(b"P5 1 1 65535\n\x00\x01")

    def test_pnm_short_payload(self):
        with pytest.raises(MalformedFile):
            decode_image(b"P6 2 1 255\n\x00\x00\x00")

    def test_png_16bit_rejected(self, rng):
        arr = rng.integers(0, 256, (2, 2, 1), dtype=np.uint8)
        with pytest.raises(UnsupportedDepth):
            decode_image(png_with_filters(arr, [0], depth=16))

    @pytest.mark.parametrize("ct", [3, 4, 6])
    def test_png_palette_alpha_rejected(self, rng, ct):
        arr = rng.integers(0, 256, (2, 2, 1), dtype=np.uint8)
        with pytest.raises(UnsupportedColorType):
            decode_image(png_with_filters(arr, [0], color_type=ct))

    def test_png_bad_crc(self, rng):
        data = bytearray(encode_image(random_raster(rng, 4, 4, 3), "png"))
        data[20] ^= 0xFF  # inside IHDR payload
        with pytest.raises(MalformedFile):
            decode_image(bytes(data))

    def test_fuzz_truncated_and_corrupted(self, rng):
        # every failure must be one of ours, never a partial raster
        for fmt, ch in [("png", 3), ("png", 1), ("ppm", 3), ("pgm", 1)]:
            good = encode_image(random_raster(rng, 6, 5, ch), fmt)
            for cut in range(len(good)):
                with pytest.raises(IrforgeError):
                    decode_image(good[:cut])
            for _ in range(200):
                bad = bytearray(good)
                for pos in rng.integers(0, len(bad), 3):
                    bad[pos] = int(rng.integers(0, 256))
                try:
                    r = decode_image(bytes(bad))
                except IrforgeError:
                    continue
                assert r.samples.size == r.width * r.height * r.channels


class TestQuantize:
    def test_tie_and_endpoints(self):
        g = GrayMap(np.array([[59.5, 0.0, 255.0, 0.5, 254.5]]))
        assert quantize(g).samples.tolist() == [60, 0, 255, 1, 255]

    def test_matches_scalar_oracle(self, rng):
        v = rng.uniform(0, 255, 1000)
        v[:50] = np.floor(v[:50]) + 0.5  # force ties
        v[50:60] = np.nextafter(np.floor(v[50:60]) + 0.5, 0)  # just below ties
        got = quantize(GrayMap(v.reshape(10, 100))).samples
        assert got.tolist() == [round_half_away(x) for x in v]

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            quantize(GrayMap(np.array([[255.5]])))
        with pytest.raises(OutOfRange):
            quantize(GrayMap(np.array([[-0.1]])))

    @given(st.lists(st.floats(0, 255), min_size=2, max_size=50))
    def test_monotone(self, values):
        v = np.sort(np.array(values))
        q = quantize(GrayMap(v[None, :])).samples.astype(int)
        assert np.all(np.diff(q) >= 0)


class TestTypes:
    def test_raster_invariants(self):
        with pytest.raises(ValueError):
            Raster(np.zeros((2, 2, 2), np.uint8))
        with pytest.raises(OutOfRange):
            Raster(np.full((1, 1, 1), 256))
        with pytest.raises(ValueError):
            Raster.from_samples(2, 2, 1, [0, 1, 2])

    def test_raster_immutable(self, rng):
        r = random_raster(rng, 2, 2, 3)
        with pytest.raises(ValueError):
            r.pixels[0, 0, 0] = 1

    def test_graymap_finite(self):
        with pytest.raises(ValueError):
            GrayMap(np.array([[np.nan]]))
