"""Cartesian undersampling: mask generation, application, zero-filling.

Masks select whole phase-encode columns.  A contiguous, fully sampled
center of round(P * center_fraction) lines is always kept; the remaining
lines are Bernoulli-sampled so the acceleration factor is met in
expectation.  The generator is numpy's PCG64 seeded directly, and masks
round-trip through the MSK1 file format so experiments stay reproducible
independent of the generator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError
from .fourier import IMAGE, KSPACE, ComplexImage, ifft2c

_MAGIC = b"MSK1"


@dataclass
class Mask:
    """Binary phase-line sampling pattern with its generation metadata."""

    values: np.ndarray
    center_fraction: float | None = None
    acceleration: float | None = None
    seed: int | None = None
    line_probability: float | None = None
    warning: str | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.ndim != 1:
            raise ShapeError(f"Mask values must be 1-D, got shape {self.values.shape}")
        if not np.isin(self.values, (0, 1)).all():
            raise ValueError("Mask values must be 0 or 1")
        if self.values.sum() == 0:
            raise ValueError("Mask must sample at least one line")

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_sampled(self):
        return int(self.values.sum())

    def as_bool(self):
        return self.values.astype(bool)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(self)))
            fh.write(self.values.tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != _MAGIC:
            raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
        if len(blob) < 8:
            raise FormatError(f"{path}: truncated MSK1 header")
        (p,) = struct.unpack("<I", blob[4:8])
        if len(blob) != 8 + p:
            raise FormatError(f"{path}: expected {8 + p} bytes, got {len(blob)}")
        return cls(np.frombuffer(blob[8:], dtype=np.uint8).copy())


def center_line_count(p, center_fraction):
    """round(P * center_fraction), half away from zero."""
    return int(np.floor(p * center_fraction + 0.5))


def generate_random_mask(p, center_fraction, acceleration, seed) -> Mask:
    """Random Cartesian mask: fully sampled center plus Bernoulli lines.

    Each non-center line is kept with probability
    (P/acceleration - n_center) / (P - n_center), so the expected sampled
    count hits the acceleration budget.  A negative numerator clamps the
    probability to zero and is reported in the mask's ``warning`` field.
    """
    if p < 4 or p % 2:
        raise ValueError(f"P must be even and >= 4, got {p}")
    if not 0 < center_fraction <= 1:
        raise ValueError(f"center_fraction must be in (0, 1], got {center_fraction}")
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")

    n_center = center_line_count(p, center_fraction)
    warning = None
    if n_center >= p:
        prob = 0.0
        n_center = p
    else:
        prob = (p / acceleration - n_center) / (p - n_center)
        if prob < 0:
            warning = (
                f"center lines ({n_center}) already exceed the sampling budget "
                f"P/AF = {p / acceleration:.2f}; clamping line probability to 0"
            )
            prob = 0.0
        prob = min(prob, 1.0)

    rng = np.random.Generator(np.random.PCG64(seed))
    values = (rng.random(p) < prob).astype(np.uint8)
    pad = (p - n_center + 1) // 2
    values[pad : pad + n_center] = 1
    return Mask(
        values,
        center_fraction=center_fraction,
        acceleration=acceleration,
        seed=seed,
        line_probability=prob,
        warning=warning,
    )


def _mask_values(mask):
    return mask.values if isinstance(mask, Mask) else np.asarray(mask, dtype=np.uint8)


def apply_mask(k: ComplexImage, mask) -> ComplexImage:
    """Zero out unsampled columns; sampled columns pass through bit-identical."""
    values = _mask_values(mask)
    if values.shape[0] != k.width:
        raise ShapeError(f"mask length {values.shape[0]} != k-space width {k.width}")
    keep = values.astype(bool)
    return ComplexImage(
        np.where(keep, k.re, 0.0).astype(k.re.dtype, copy=False),
        np.where(keep, k.im, 0.0).astype(k.im.dtype, copy=False),
        KSPACE,
    )


def zero_fill(k_masked: ComplexImage) -> ComplexImage:
    """Inverse transform of (masked) k-space: the baseline reconstruction."""
    return ifft2c(k_masked)
