"""Binary PPM (P6) / PGM (P5) and a raw float32 map format.

PGM probability maps are quantized as floor(255 * p + 0.5) (round half up,
so 0.5 -> 128); the raw format keeps the exact 32-bit values, NaN included,
and is what metrics should be computed from.
"""
import struct

import numpy as np

RAW_MAGIC = b"AEROMAP1"


class FormatError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def _header(data, magic):
    """Parse 'magic width height maxval' with comments; return fields and data offset."""
    if data[:2] != magic:
        raise FormatError(f"expected magic {magic!r}, found {data[:2]!r}", 0)
    pos = 2
    vals = []
    while len(vals) < 3:
        start = pos
        # whitespace and comments
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        if pos == start and vals:
            raise FormatError("expected whitespace between header fields", pos)
        tok = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if tok == pos:
            raise FormatError("expected a decimal header field", tok)
        vals.append(int(data[tok:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("header must end with one whitespace byte", pos)
    w, h, maxval = vals
    if w < 1 or h < 1:
        raise FormatError(f"bad size {w}x{h}", 2)
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}", tok)
    return w, h, pos + 1


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def decode_pnm(data):
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"not a binary PGM/PPM: magic {magic!r}", 0)
    w, h, off = _header(data, magic)
    ch = 3 if magic == b"P6" else 1
    need = w * h * ch
    if len(data) - off < need:
        raise FormatError(f"truncated pixel data: need {need} bytes, have {len(data) - off}", off)
    if len(data) - off > need:
        raise FormatError("trailing bytes after pixel data", off + need)
    arr = np.frombuffer(data, np.uint8, need, off)
    return arr.reshape(h, w, 3) if ch == 3 else arr.reshape(h, w)


def encode_pnm(arr):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise TypeError("PNM encoding takes uint8 arrays")
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"expected H x W or H x W x 3, got {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes()


def to_bytes(x):
    """[0, 1] reals -> uint8 with round half up."""
    x = np.asarray(x, np.float64)
    return np.floor(np.clip(x, 0, 1) * 255 + 0.5).astype(np.uint8)


def load_image(path):
    """RGB image as H x W x 3 float64 in [0, 1]."""
    arr = decode_pnm(_read(path))
    if arr.ndim != 3:
        raise FormatError(f"{path}: expected a P6 colour image", 0)
    return arr / 255.0


def save_image(path, image):
    with open(path, "wb") as f:
        f.write(encode_pnm(to_bytes(image)))


def load_mask(path):
    """P5 with {0, 255} (any non-zero byte counts as 1) -> uint8 {0, 1}."""
    arr = decode_pnm(_read(path))
    if arr.ndim != 2:
        raise FormatError(f"{path}: expected a P5 grey image", 0)
    return (arr > 0).astype(np.uint8)


def save_mask(path, mask):
    with open(path, "wb") as f:
        f.write(encode_pnm(np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)))


def save_prob_pgm(path, prob):
    """Human-viewable quantized map; NaN (no-data) is written as 0."""
    p = np.nan_to_num(np.asarray(prob, np.float64), nan=0.0)
    with open(path, "wb") as f:
        f.write(encode_pnm(to_bytes(p)))


def load_prob_pgm(path):
    return decode_pnm(_read(path)) / 255.0


def encode_raw(arr):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"raw maps are 2-D, got {arr.shape}")
    h, w = arr.shape
    return RAW_MAGIC + struct.pack("<II", h, w) + np.asarray(arr, "<f4").tobytes()


def decode_raw(data):
    if data[:8] != RAW_MAGIC:
        raise FormatError(f"bad raw map magic {data[:8]!r}", 0)
    if len(data) < 16:
        raise FormatError("truncated raw map header", len(data))
    h, w = struct.unpack_from("<II", data, 8)
    need = 4 * h * w
    if len(data) - 16 != need:
        raise FormatError(f"raw map body is {len(data) - 16} bytes, expected {need}", 16)
    return np.frombuffer(data, "<f4", h * w, 16).reshape(h, w).astype(np.float32)


def save_raw(path, arr):
    with open(path, "wb") as f:
        f.write(encode_raw(arr))


def load_raw(path):
    return decode_raw(_read(path))
