"""Centered orthonormal 2D Fourier transforms between image and k-space.

Convention: zero frequency sits at (H//2, W//2) via an ifftshift /
transform / fftshift sandwich, with unitary 1/sqrt(H*W) scaling, so
Parseval holds exactly and data-consistency modules are scale free.
The FFT kernels come from scipy.fft (which preserves single precision);
tests check them against a direct O(N^2)-per-output DFT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as _fft

from .errors import ShapeError
from .tensor import Tensor, _accum, _make

IMAGE = "image"
KSPACE = "kspace"


def _shift(z, inverse=False):
    fn = _fft.ifftshift if inverse else _fft.fftshift
    return fn(z, axes=(-2, -1))


def fft2c_array(z):
    """Centered orthonormal 2D FFT over the last two axes of a complex array."""
    return _shift(_fft.fft2(_shift(z, inverse=True), axes=(-2, -1), norm="ortho"))


def ifft2c_array(z):
    """Inverse of :func:`fft2c_array`."""
    return _shift(_fft.ifft2(_shift(z, inverse=True), axes=(-2, -1), norm="ortho"))


@dataclass
class ComplexImage:
    """H x W complex field stored as two real planes, tagged with its domain."""

    re: np.ndarray
    im: np.ndarray
    domain: str = IMAGE

    def __post_init__(self):
        self.re = np.asarray(self.re)
        self.im = np.asarray(self.im)
        if self.re.shape != self.im.shape:
            raise ShapeError(f"ComplexImage planes differ: {self.re.shape} vs {self.im.shape}")
        if self.domain not in (IMAGE, KSPACE):
            raise ValueError(f"unknown domain tag {self.domain!r}")

    @property
    def shape(self):
        return self.re.shape

    @property
    def height(self):
        return self.re.shape[-2]

    @property
    def width(self):
        return self.re.shape[-1]

    @classmethod
    def from_complex(cls, z, domain=IMAGE):
        z = np.asarray(z)
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag), domain)

    def to_complex(self):
        return self.re + 1j * self.im

    def magnitude(self):
        return np.abs(self.to_complex())


def fft2c(x: ComplexImage) -> ComplexImage:
    """Image domain -> k-space."""
    if x.domain != IMAGE:
        raise ValueError(f"fft2c expects an image-domain input, got {x.domain!r}")
    return ComplexImage.from_complex(fft2c_array(x.to_complex()), KSPACE)


def ifft2c(k: ComplexImage) -> ComplexImage:
    """k-space -> image domain."""
    if k.domain != KSPACE:
        raise ValueError(f"ifft2c expects a k-space input, got {k.domain!r}")
    return ComplexImage.from_complex(ifft2c_array(k.to_complex()), IMAGE)


def _paired_to_complex(data):
    return data[:, 0::2] + 1j * data[:, 1::2]


def _complex_to_paired(z, dtype):
    out = np.empty(
        (z.shape[0], 2 * z.shape[1]) + z.shape[2:], dtype=dtype
    )
    out[:, 0::2] = z.real
    out[:, 1::2] = z.imag
    return out


def channel_paired_transform(x: Tensor, direction: str) -> Tensor:
    """Apply fft2c ("fwd") or ifft2c ("inv") to each (re, im) channel pair.

    Channels (2k, 2k+1) of an [N,C,H,W] tensor are read as the real and
    imaginary planes of complex plane k.  Differentiable; since the map is
    unitary, the gradient is the opposite transform of the upstream
    gradient.
    """
    if direction not in ("fwd", "inv"):
        raise ValueError(f"direction must be 'fwd' or 'inv', got {direction!r}")
    if x.data.ndim != 4:
        raise ShapeError(f"channel_paired_transform: expected [N,C,H,W], got {x.data.shape}")
    if x.data.shape[1] % 2:
        raise ShapeError(
            f"channel_paired_transform: channel count must be even, got {x.data.shape[1]}"
        )
    fwd = fft2c_array if direction == "fwd" else ifft2c_array
    adj = ifft2c_array if direction == "fwd" else fft2c_array
    dtype = x.data.dtype
    data = _complex_to_paired(fwd(_paired_to_complex(x.data)), dtype)

    def backward(g):
        _accum(x, _complex_to_paired(adj(_paired_to_complex(g)), dtype))

    return _make(data, (x,), backward, f"cpt_{direction}")
