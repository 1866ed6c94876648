"""Netpbm image I/O and CSV traces."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import List

import numpy as np

from .applications import ImageGrid
from .baselines import IterationRecord, SolveTrace

TRACE_COLUMNS = ["k", "objective", "violation", "lambda_gap", "ek_norm",
                 "accepted_source", "t_used", "psnr", "wall_ms"]

_FORMATS = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


class _HeaderReader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def token(self) -> bytes:
        d, n = self.data, len(self.data)
        while self.pos < n:
            ch = d[self.pos:self.pos + 1]
            if ch == b"#":
                while self.pos < n and d[self.pos:self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif ch.isspace():
                self.pos += 1
            else:
                break
        start = self.pos
        while self.pos < n and not d[self.pos:self.pos + 1].isspace() and d[self.pos:self.pos + 1] != b"#":
            self.pos += 1
        if start == self.pos:
            raise ValueError(f"{self.path}: truncated header")
        return d[start:self.pos]

    def integer(self, what: str) -> int:
        tok = self.token()
        try:
            return int(tok)
        except ValueError:
            raise ValueError(f"{self.path}: bad {what} {tok!r}") from None


def read_image(path) -> ImageGrid:
    """Read a P2/P3/P5/P6 file into ``[0, 1]`` intensities.

    Supports maxval up to 65535 (two bytes per sample, big-endian, in the
    binary formats) and ``#`` comments in the header.
    """
    path = Path(path)
    data = path.read_bytes()
    magic = data[:2]
    if magic not in _FORMATS:
        raise ValueError(f"{path}: unsupported magic {magic!r}; expected P2, P3, P5 or P6")
    channels, binary = _FORMATS[magic]
    hdr = _HeaderReader(data, path)
    hdr.pos = 2
    width = hdr.integer("width")
    height = hdr.integer("height")
    maxval = hdr.integer("maxval")
    if width < 1 or height < 1:
        raise ValueError(f"{path}: non-positive dimensions {width}x{height}")
    if not 1 <= maxval <= 65535:
        raise ValueError(f"{path}: maxval {maxval} outside [1, 65535]")
    count = width * height * channels
    if binary:
        start = hdr.pos + 1  # exactly one whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = data[start:start + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise ValueError(f"{path}: truncated pixel data ({len(raw)} of "
                             f"{count * dtype.itemsize} bytes)")
        vals = np.frombuffer(raw, dtype=dtype).astype(float)
    else:
        toks = data[hdr.pos:].split()
        if len(toks) < count:
            raise ValueError(f"{path}: expected {count} samples, found {len(toks)}")
        try:
            vals = np.array([int(t) for t in toks[:count]], dtype=float)
        except ValueError as exc:
            raise ValueError(f"{path}: non-integer sample ({exc})") from None
    return ImageGrid(width, height, channels, np.clip(vals / maxval, 0.0, 1.0))


def quantize(pixels) -> np.ndarray:
    """Clamp to ``[0, 1]`` and map to 0..255 rounding half up."""
    v = np.clip(np.asarray(pixels, dtype=float), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_image(img: ImageGrid, path, fmt: str = None) -> None:
    """Write binary P5 (one channel) or P6 (three channels) with maxval 255."""
    if fmt is not None and fmt not in ("P5", "P6"):
        raise ValueError(f"unsupported output format {fmt!r}")
    if img.channels == 1:
        magic = b"P5"
    elif img.channels == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write an image with {img.channels} channels")
    if fmt is not None and fmt.encode() != magic:
        raise ValueError(f"{fmt} cannot hold a {img.channels}-channel image")
    header = magic + f"\n{img.width} {img.height}\n255\n".encode()
    Path(path).write_bytes(header + quantize(img.pixels).tobytes())


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_trace(trace: SolveTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACE_COLUMNS)
        for r in trace.records:
            wr.writerow([r.k, _fmt(r.objective), _fmt(r.violation), _fmt(r.lambda_gap),
                         _fmt(r.ek_norm), r.accepted_source, r.t_used,
                         "" if r.psnr is None else _fmt(r.psnr), _fmt(r.wall_ms)])


def read_trace(path) -> List[IterationRecord]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        out = []
        for row in rd:
            if len(row) != len(TRACE_COLUMNS):
                raise ValueError(f"{path}: malformed row {row}")
            out.append(IterationRecord(
                k=int(row[0]), objective=float(row[1]), violation=float(row[2]),
                lambda_gap=float(row[3]), ek_norm=float(row[4]), accepted_source=row[5],
                t_used=int(row[6]), psnr=None if row[7] == "" else float(row[7]),
                wall_ms=float(row[8])))
    return out
