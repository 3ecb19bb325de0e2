"""Haar wavelet codec between return sequences and rectangular coefficient images.

A length-T sequence is decomposed into detail series d^1..d^L and a single
final mean a^L. Odd-length levels are padded by repeating their last element
before pairing, so the extra detail coefficient is zero. Every series is then
stretched by element repetition to the length of d^1 and stacked as columns of
an image, zero padded to a fixed shape (152 x 16 for T = 300).

All functions accept arrays with arbitrary leading batch dimensions; the time
axis is always the last one (the row axis for images).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT2 = math.sqrt(2.0)
DEFAULT_COLS = 16
ROW_MULTIPLE = 8


class LayoutError(ValueError):
    pass


def level_input_lengths(T: int) -> list[int]:
    """Lengths of the sequence entering each pairing level (before odd padding)."""
    if T < 2:
        raise ValueError(f"need at least 2 samples, got T={T}")
    lengths = []
    n = T
    while n > 1:
        lengths.append(n)
        n = (n + 1) // 2
    return lengths


@dataclass
class CoefficientPyramid:
    details: list[np.ndarray]
    approx: np.ndarray
    origin_length: int
    level_lengths: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.level_lengths:
            self.level_lengths = [d.shape[-1] for d in self.details] + [self.approx.shape[-1]]

    @property
    def n_levels(self) -> int:
        return len(self.details)

    def series(self) -> list[np.ndarray]:
        """Columns in image order: d^1, ..., d^L, a^L."""
        return [*self.details, self.approx]

    def allclose(self, other: "CoefficientPyramid", atol: float = 0.0) -> bool:
        if self.level_lengths != other.level_lengths:
            return False
        return all(np.allclose(a, b, rtol=0.0, atol=atol) for a, b in zip(self.series(), other.series()))


def haar_forward(series) -> CoefficientPyramid:
    x = np.asarray(series, dtype=float)
    T = x.shape[-1]
    level_input_lengths(T)  # validates T
    details = []
    a = x
    while a.shape[-1] > 1:
        if a.shape[-1] % 2:
            a = np.concatenate([a, a[..., -1:]], axis=-1)
        even, odd = a[..., 0::2], a[..., 1::2]
        details.append((even - odd) / SQRT2)
        a = (even + odd) / SQRT2
    return CoefficientPyramid(details=details, approx=a, origin_length=T)


def haar_inverse(pyr: CoefficientPyramid) -> np.ndarray:
    inputs = level_input_lengths(pyr.origin_length)
    expected = [(n + 1) // 2 for n in inputs] + [1]
    actual = [s.shape[-1] for s in pyr.series()]
    if actual != expected:
        raise LayoutError(f"level lengths {actual} inconsistent with T={pyr.origin_length} (expected {expected})")
    a = pyr.approx
    for d, n in zip(reversed(pyr.details), reversed(inputs)):
        out = np.empty(a.shape[:-1] + (2 * a.shape[-1],), dtype=np.result_type(a, d))
        out[..., 0::2] = (a + d) / SQRT2
        out[..., 1::2] = (a - d) / SQRT2
        a = out[..., :n]
    return a


@dataclass(frozen=True)
class ImageLayout:
    """Where each pyramid level lives inside the padded image."""

    origin_length: int
    rows: int
    cols: int
    valid_rows: int
    # (level index, repetition factor, valid length); level index n_levels is the final mean
    columns: tuple[tuple[int, int, int], ...]

    @classmethod
    def for_length(cls, T: int, shape: tuple[int, int] | None = None) -> "ImageLayout":
        inputs = level_input_lengths(T)
        lengths = [(n + 1) // 2 for n in inputs] + [1]
        valid_rows = lengths[0]
        if shape is None:
            rows = -(-valid_rows // ROW_MULTIPLE) * ROW_MULTIPLE
            cols = DEFAULT_COLS
        else:
            rows, cols = shape
        if len(lengths) > cols:
            raise LayoutError(f"T={T} needs {len(lengths)} columns but capacity is {cols}")
        if valid_rows > rows:
            raise LayoutError(f"T={T} needs {valid_rows} rows but capacity is {rows}")
        columns = tuple((m, -(-valid_rows // n), n) for m, n in enumerate(lengths))
        return cls(T, rows, cols, valid_rows, columns)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def to_dict(self) -> dict:
        return {
            "origin_length": self.origin_length,
            "rows": self.rows,
            "cols": self.cols,
            "valid_rows": self.valid_rows,
            "columns": [list(c) for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageLayout":
        layout = cls(
            int(d["origin_length"]), int(d["rows"]), int(d["cols"]), int(d["valid_rows"]),
            tuple(tuple(int(v) for v in c) for c in d["columns"]),
        )
        if layout != cls.for_length(layout.origin_length, layout.shape):
            raise LayoutError("layout descriptor does not match its origin length")
        return layout


@dataclass
class WaveletImage:
    values: np.ndarray
    layout: ImageLayout


def embed_image(pyr: CoefficientPyramid, shape: tuple[int, int] | None = None) -> WaveletImage:
    layout = ImageLayout.for_length(pyr.origin_length, shape)
    levels = pyr.series()
    batch = levels[0].shape[:-1]
    values = np.zeros(batch + layout.shape, dtype=float)
    R = layout.valid_rows
    for (m, rep, n), seq in zip(layout.columns, levels):
        if seq.shape[-1] != n:
            raise LayoutError(f"level {m} has length {seq.shape[-1]}, expected {n}")
        values[..., :R, m] = np.repeat(seq, rep, axis=-1)[..., :R]
    return WaveletImage(values, layout)


def extract_pyramid(img: WaveletImage) -> CoefficientPyramid:
    layout = img.layout
    values = np.asarray(img.values, dtype=float)
    if values.shape[-2:] != layout.shape:
        raise LayoutError(f"image shape {values.shape[-2:]} does not match layout {layout.shape}")
    R = layout.valid_rows
    levels = []
    for m, rep, n in layout.columns:
        starts = np.arange(n) * rep
        sizes = np.minimum(starts + rep, R) - starts
        col = values[..., :R, m]
        levels.append(np.add.reduceat(col, starts, axis=-1) / sizes)
    return CoefficientPyramid(details=levels[:-1], approx=levels[-1], origin_length=layout.origin_length)


def encode(series, shape: tuple[int, int] | None = None) -> WaveletImage:
    return embed_image(haar_forward(series), shape)


def decode(values, layout: ImageLayout) -> np.ndarray:
    return haar_inverse(extract_pyramid(WaveletImage(np.asarray(values), layout)))


def dump_image_csv(img: WaveletImage, path) -> None:
    """Write a single image as a CSV matrix (debugging aid)."""
    if img.values.ndim != 2:
        raise ValueError("dump_image_csv expects a single image")
    np.savetxt(path, img.values, delimiter=",", fmt="%.17g")
