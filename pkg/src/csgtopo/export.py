"""File formats: PGM design images, raw field dumps and the iteration history CSV."""
from __future__ import annotations

import csv
from dataclasses import astuple, fields
from pathlib import Path

import numpy as np

from .optimizer import IterationRecord

HISTORY_HEADER = [f.name for f in fields(IterationRecord)]


def _as_image(x: np.ndarray, nelx: int, nely: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size != nelx * nely:
        raise ValueError(f"field of size {x.size} does not match a {nely}x{nelx} mesh")
    return np.reshape(x, (nely, nelx), order="F")


def export_design(x: np.ndarray, nelx: int, nely: int, path: str | Path) -> None:
    """Binary PGM with gray level ``255 * (1 - x)``: solid is black, void is white."""
    img = _as_image(x, nelx, nely)
    if img.min() < 0 or img.max() > 1:
        raise ValueError("densities must lie in [0, 1]")
    pix = np.rint(255.0 * (1.0 - img)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nelx} {nely}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5" or maxval != 255:
        raise ValueError(f"unsupported image format {magic} / maxval {maxval}")
    pix = np.frombuffer(data[pos + 1: pos + 1 + w * h], dtype=np.uint8)
    if pix.size != w * h:
        raise ValueError("truncated image data")
    return pix.reshape(h, w)


def parse_design(path: str | Path) -> np.ndarray:
    """Inverse of :func:`export_design`, returning the element field in mesh order."""
    img = 1.0 - read_pgm(path) / 255.0
    return np.ravel(img, order="F")


def write_field(x: np.ndarray, nelx: int, nely: int, path: str | Path) -> None:
    """One density per line in image row-major order (top row first)."""
    img = _as_image(x, nelx, nely)
    np.savetxt(path, img.ravel(order="C"), fmt="%.17g")


def read_field(path: str | Path, nelx: int, nely: int) -> np.ndarray:
    v = np.loadtxt(path, dtype=float, ndmin=1)
    if v.size != nelx * nely:
        raise ValueError(f"{path}: {v.size} values, expected {nelx * nely}")
    return np.ravel(v.reshape(nely, nelx), order="F")


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.17g}"


class HistoryWriter:
    """Appends one CSV row per iteration and flushes so partial runs survive."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(HISTORY_HEADER)
        self._fh.flush()

    def write(self, rec: IterationRecord) -> None:
        self._w.writerow([_fmt(v) for v in astuple(rec)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def export_history(records, path: str | Path) -> None:
    with HistoryWriter(path) as w:
        for rec in records:
            w.write(rec)


def read_history(path: str | Path) -> list[IterationRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != HISTORY_HEADER:
            raise ValueError(f"unexpected history header {header}")
        return [IterationRecord(int(r[0]), *(float(v) for v in r[1:])) for r in reader]
