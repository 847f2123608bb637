"""Binary portable graymap (P5) images.

Binary masks are stored at maxval 255 (0 -> 0, 1 -> 255). Depth images are
stored at maxval 65535, two bytes per sample, most significant byte first,
sample = round(depth * 65535).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import FormatError

BINARY_MAXVAL = 255
DEPTH_MAXVAL = 65535


def encode(image, kind=None) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"expected a 2-D image, got shape {img.shape}")
    if kind is None:
        kind = "depth" if img.dtype.kind == "f" else "binary"
    h, w = img.shape
    if kind == "binary":
        if not np.isin(img, (0, 1)).all():
            raise FormatError("binary image must contain only 0 and 1")
        header = f"P5\n{w} {h}\n{BINARY_MAXVAL}\n".encode("ascii")
        return header + (img.astype(np.uint8) * 255).tobytes()
    if kind == "depth":
        if img.size and (img.min() < 0.0 or img.max() > 1.0):
            raise FormatError("depth values must lie in [0, 1]")
        q = np.rint(img.astype(np.float64) * DEPTH_MAXVAL).astype(">u2")
        header = f"P5\n{w} {h}\n{DEPTH_MAXVAL}\n".encode("ascii")
        return header + q.tobytes()
    raise ValueError(f"unknown image kind {kind!r}")


def _header_tokens(buf: bytes):
    tokens, pos = [], 0
    while len(tokens) < 4:
        if pos >= len(buf):
            raise FormatError("truncated header")
        c = buf[pos:pos + 1]
        if c == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise FormatError("unterminated comment in header")
            pos = end + 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos:pos + 1].isspace():
                pos += 1
            tokens.append(buf[start:pos])
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after maxval")
    return tokens, pos + 1


def decode(buf: bytes):
    if not buf.startswith(b"P5"):
        raise FormatError("bad magic, expected P5")
    tokens, offset = _header_tokens(buf)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"non-integer header fields {tokens[1:]}") from None
    if w <= 0 or h <= 0:
        raise FormatError(f"bad image size {w}x{h}")
    if maxval == BINARY_MAXVAL:
        need = w * h
        if len(buf) - offset < need:
            raise FormatError(f"truncated payload: {len(buf) - offset} of {need} bytes")
        raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=offset).reshape(h, w)
        if not np.isin(raw, (0, 255)).all():
            raise FormatError("binary image samples must be 0 or 255")
        return (raw // 255).astype(np.uint8)
    if maxval == DEPTH_MAXVAL:
        need = 2 * w * h
        if len(buf) - offset < need:
            raise FormatError(f"truncated payload: {len(buf) - offset} of {need} bytes")
        raw = np.frombuffer(buf, dtype=">u2", count=w * h, offset=offset).reshape(h, w)
        return raw.astype(np.float64) / DEPTH_MAXVAL
    raise FormatError(f"unsupported maxval {maxval}")


def write_image(path, image, kind=None):
    data = encode(image, kind)
    with open(path, "wb") as fh:
        fh.write(data)
    return os.fspath(path)


def read_image(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
