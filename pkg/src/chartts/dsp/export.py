"""Matrix export as CSV and 8-bit PGM images."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def write_csv(path, matrix: np.ndarray) -> None:
    """One row per line, six significant digits, UTF-8."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in matrix:
            f.write(",".join(f"{v:.6g}" for v in row))
            f.write("\n")


def read_csv(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if not rows:
        raise ValueError(f"{path}: no rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows")
    return np.array(rows)


def write_pgm(path, matrix: np.ndarray) -> None:
    """Binary P5 image, one pixel per entry, each row scaled by its own max."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    m = m - np.minimum(m.min(axis=1, keepdims=True), 0.0)
    peak = m.max(axis=1, keepdims=True)
    peak[peak <= 0] = 1.0
    pix = np.round(255.0 * m / peak).clip(0, 255).astype(np.uint8)
    h, w = pix.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
