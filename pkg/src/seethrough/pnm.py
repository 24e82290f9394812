"""Minimal binary PNM reader/writer (P5 grayscale, P6 color).

Kept in-repo so that output bytes are stable across library versions:
the pipeline promises byte-identical artifacts for identical inputs.
16-bit P5 uses big-endian samples as required by the format.
"""

import numpy as np


def _read_header(data):
    # returns (magic, width, height, maxval, offset of pixel data)
    pos = 0
    fields = []
    while len(fields) < 4:
        if pos >= len(data):
            raise ValueError("truncated PNM header")
        if data[pos:pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
            continue
        if data[pos:pos + 1].isspace():
            pos += 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace byte after maxval
    magic = fields[0].decode("ascii")
    width, height, maxval = (int(f) for f in fields[1:])
    return magic, width, height, maxval, pos


def read_pnm(path):
    """Read a binary PGM/PPM file.

    Returns (h, w) uint8 or uint16 for P5, (h, w, 3) uint8 for P6.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    magic, width, height, maxval, pos = _read_header(data)
    if magic == "P5":
        if maxval > 255:
            n = width * height * 2
            img = np.frombuffer(data[pos:pos + n], dtype=">u2")
            return img.reshape(height, width).astype(np.uint16)
        n = width * height
        return np.frombuffer(data[pos:pos + n], dtype=np.uint8).reshape(height, width).copy()
    if magic == "P6":
        if maxval > 255:
            raise ValueError("16-bit P6 not supported")
        n = width * height * 3
        return np.frombuffer(data[pos:pos + n], dtype=np.uint8).reshape(height, width, 3).copy()
    raise ValueError(f"unsupported PNM magic {magic!r}")


def write_pgm(path, image):
    """Write (h, w) uint8 or uint16 as binary P5 (16-bit written big-endian)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("P5 wants a 2-d array")
    h, w = image.shape
    if image.dtype == np.uint8:
        maxval, payload = 255, image.tobytes()
    elif image.dtype == np.uint16:
        maxval, payload = 65535, image.astype(">u2").tobytes()
    else:
        raise ValueError(f"unsupported dtype {image.dtype} for P5")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(payload)


def write_ppm(path, image):
    """Write (h, w, 3) uint8 as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("P6 wants (h, w, 3) uint8")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())
