"""Binary PPM (P6, maxval 255) image reading and writing.

The format is bit-exact and dependency-free, which is all the synthetic
glyph images need. Pixels are returned as float32 in [0, 1], RGB, row-major.
"""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    pass


def _read_token(buf, pos):
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated header")
    return buf[start:pos], pos


def load_ppm(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        magic, pos = _read_token(buf, 0)
        if magic != b"P6":
            raise ImageFormatError(f"bad magic {magic!r}, expected b'P6'")
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        max_tok, pos = _read_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ImageFormatError as e:
        raise ImageFormatError(f"{path}: {e}") from None
    except ValueError:
        raise ImageFormatError(f"{path}: non-numeric header fields") from None
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after the header
    need = width * height * 3
    raster = buf[pos:pos + need]
    if len(raster) != need:
        raise ImageFormatError(f"{path}: truncated raster, expected {need} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float32) / 255.0


def write_ppm(path, image):
    """image: (H, W, 3) floats in [0, 1]; values are rounded to 8-bit."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"expected (H, W, 3) image, got shape {arr.shape}")
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
