"""Semantic label maps and their on-disk formats.

Two encodings are supported:

``SLM1`` (binary, little-endian)::

    b"SLM1" | width u32 | height u32 | num_classes u16 | labels u16[width*height]

``SLMA`` (ASCII, LF line endings)::

    SLMA <width> <height> <num_classes>
    <width space-separated labels>      (repeated height times)

Labels are row-major, top row first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._io import Reader
from .errors import FormatError

BINARY_MAGIC = b"SLM1"
ASCII_MAGIC = b"SLMA"
MAX_CLASSES = 0xFFFF

_HEADER = struct.Struct("<4sIIH")


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Dense 2D grid of class ids with shape ``(height, width)``."""

    labels: NDArray[np.uint16]
    num_classes: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"labels must be 2D (height, width), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"width and height must be >= 1, got shape {arr.shape}")
        if not 1 <= int(self.num_classes) <= MAX_CLASSES:
            raise ValueError(f"num_classes must be in [1, {MAX_CLASSES}], got {self.num_classes}")
        if arr.dtype.kind not in "iu":
            raise ValueError(f"labels must be integers, got dtype {arr.dtype}")
        if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
            bad = int(np.flatnonzero((arr < 0) | (arr >= self.num_classes))[0])
            raise ValueError(
                f"label {int(arr.flat[bad])} at pixel {bad} outside [0, {self.num_classes})")
        arr = np.array(arr, dtype=np.uint16, order="C")
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @classmethod
    def from_list(cls, width: int, height: int, num_classes: int, labels: ArrayLike) -> LabelMap:
        flat = np.asarray(labels, dtype=np.int64)
        if flat.size != width * height:
            raise ValueError(f"expected {width * height} labels, got {flat.size}")
        return cls(flat.reshape(height, width), num_classes)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and self.labels.shape == other.labels.shape
                and bool(np.array_equal(self.labels, other.labels)))

    def __hash__(self) -> int:
        return hash((self.num_classes, self.labels.shape, self.labels.tobytes()))

    def __repr__(self) -> str:
        return f"LabelMap(width={self.width}, height={self.height}, num_classes={self.num_classes})"


def load_label_map(data: bytes) -> LabelMap:
    """Decode an SLM1 or SLMA stream, dispatching on the 4-byte magic."""
    magic = bytes(data[:4])
    if magic == BINARY_MAGIC:
        return _load_binary(data)
    if magic == ASCII_MAGIC:
        return _load_ascii(data)
    raise FormatError(f"unknown magic {magic!r}", 0)


def _check_dims(width, height, num_classes, position, unit):
    if width < 1 or height < 1:
        raise FormatError(f"width and height must be >= 1, got {width}x{height}", position, unit)
    if not 1 <= num_classes <= MAX_CLASSES:
        raise FormatError(f"num_classes must be in [1, {MAX_CLASSES}], got {num_classes}",
                          position, unit)


def _load_binary(data: bytes) -> LabelMap:
    reader = Reader(data)
    reader.expect_magic(BINARY_MAGIC)
    width, height, num_classes = reader.unpack("<IIH", "header")
    _check_dims(width, height, num_classes, 4, "byte")
    start = reader.pos
    raw = reader.take(2 * width * height, "labels")
    reader.finish()
    labels = np.frombuffer(raw, dtype="<u2")
    if labels.size and labels.max() >= num_classes:
        i = int(np.flatnonzero(labels >= num_classes)[0])
        raise FormatError(f"label {int(labels[i])} >= num_classes {num_classes}", start + 2 * i)
    return LabelMap(labels.reshape(height, width).astype(np.uint16), num_classes)


def _parse_int(token: str, what: str, line: int) -> int:
    if not token.isdigit():
        raise FormatError(f"{what} {token!r} is not a non-negative integer", line, "line")
    return int(token)


def _load_ascii(data: bytes) -> LabelMap:
    try:
        text = bytes(data).decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("SLMA stream is not ASCII", exc.start) from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = lines[0].split(" ")
    if len(header) != 4:
        raise FormatError("header must be 'SLMA <width> <height> <num_classes>'", 1, "line")
    width, height, num_classes = (_parse_int(t, name, 1) for t, name in
                                  zip(header[1:], ("width", "height", "num_classes")))
    _check_dims(width, height, num_classes, 1, "line")
    if len(lines) - 1 < height:
        raise FormatError(f"expected {height} label rows, got {len(lines) - 1}", len(lines), "line")
    if len(lines) - 1 > height:
        raise FormatError("trailing content after label rows", height + 2, "line")
    labels = np.empty((height, width), dtype=np.uint16)
    for row in range(height):
        lineno = row + 2
        tokens = lines[row + 1].split(" ")
        if len(tokens) != width:
            raise FormatError(f"expected {width} labels, got {len(tokens)}", lineno, "line")
        for col, tok in enumerate(tokens):
            value = _parse_int(tok, "label", lineno)
            if value >= num_classes:
                raise FormatError(
                    f"label {value} out of range for num_classes {num_classes}", lineno, "line")
            labels[row, col] = value
    return LabelMap(labels, num_classes)


def save_label_map(label_map: LabelMap, format: str = "binary") -> bytes:
    """Encode a label map; ``format`` is ``"binary"`` (SLM1) or ``"ascii"`` (SLMA).

    The ASCII form separates lines with LF and carries no trailing newline.
    """
    if format == "binary":
        header = _HEADER.pack(BINARY_MAGIC, label_map.width, label_map.height,
                              label_map.num_classes)
        return header + label_map.labels.astype("<u2").tobytes()
    if format == "ascii":
        lines = [f"SLMA {label_map.width} {label_map.height} {label_map.num_classes}"]
        lines.extend(" ".join(str(int(v)) for v in row) for row in label_map.labels)
        return "\n".join(lines).encode("ascii")
    raise ValueError(f"unknown format {format!r}; expected 'binary' or 'ascii'")


def cell_edges(size: int, cells: int) -> NDArray[np.int64]:
    """Boundaries ``floor(i * size / cells)`` for ``i = 0..cells``."""
    return (np.arange(cells + 1, dtype=np.int64) * size) // cells


def cell_histograms(label_map: LabelMap, cells_x: int, cells_y: int) -> NDArray[np.int64]:
    """Per-cell class counts, shape ``(cells_y, cells_x, num_classes)``.

    Cells follow :func:`cell_edges` along each axis.
    """
    h, w, c = label_map.height, label_map.width, label_map.num_classes
    col_cell = np.searchsorted(cell_edges(w, cells_x), np.arange(w), side="right") - 1
    row_cell = np.searchsorted(cell_edges(h, cells_y), np.arange(h), side="right") - 1
    cell = row_cell[:, None] * cells_x + col_cell[None, :]
    keys = cell.ravel() * c + label_map.labels.ravel().astype(np.int64)
    counts = np.bincount(keys, minlength=cells_x * cells_y * c)
    return counts.reshape(cells_y, cells_x, c)


def downsample_mode(label_map: LabelMap, out_w: int, out_h: int) -> LabelMap:
    """Shrink a map by taking the most frequent class in each source cell.

    Ties go to the lowest class id.
    """
    if not (1 <= out_w <= label_map.width and 1 <= out_h <= label_map.height):
        raise ValueError(
            f"output size {out_w}x{out_h} must be within 1..{label_map.width} x "
            f"1..{label_map.height}")
    counts = cell_histograms(label_map, out_w, out_h)
    # argmax returns the first maximum, i.e. the lowest class id
    return LabelMap(np.argmax(counts, axis=2).astype(np.uint16), label_map.num_classes)
