"""Orthonormal Haar wavelet pooling and its exact inverse.

Kernel naming: in ``K_XY`` the first filter ``X`` runs along rows (the
vertical axis) and ``Y`` along columns (the horizontal axis), so
``K_XY[r, s] = X[r] * Y[s]``. With this convention pooling the 2x2 block
``[[1, 2], [3, 4]]`` gives ``LL=5, LH=1, HL=2, HH=0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator

import numpy as np

from .tensor import GeometryError, ShapeError, Tensor, add, as_tensor, conv2d, mul, reshape

BAND_NAMES = ("ll", "lh", "hl", "hh")


@dataclass(frozen=True)
class HaarFilters:
    """Low-pass ``(1, 1)/sqrt(2)`` and high-pass ``(-1, 1)/sqrt(2)`` filters and their 2x2 products."""

    low_sign: tuple = (1.0, 1.0)
    high_sign: tuple = (-1.0, 1.0)

    @property
    def low(self) -> np.ndarray:
        return np.array(self.low_sign) / np.sqrt(2.0)

    @property
    def high(self) -> np.ndarray:
        return np.array(self.high_sign) / np.sqrt(2.0)

    @property
    def kernels(self) -> Dict[str, np.ndarray]:
        # 0.5 * sign pattern is the outer product exactly; (1/sqrt(2))**2 rounds to 0.5 + 1ulp
        f = {"l": np.array(self.low_sign), "h": np.array(self.high_sign)}
        return {name: 0.5 * np.outer(f[name[0]], f[name[1]]) for name in BAND_NAMES}


HAAR = HaarFilters()


@dataclass
class WaveletBands:
    """The four half-resolution bands of one pooling step."""

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {b.shape for b in self}
        if len(shapes) != 1:
            raise ShapeError(f"wavelet bands disagree in shape: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 4:
            raise ShapeError(f"wavelet bands must be (N, C, H, W), got {shape}")

    def __iter__(self) -> Iterator[Tensor]:
        return iter((self.ll, self.lh, self.hl, self.hh))

    @property
    def shape(self):
        return self.ll.shape

    @property
    def high(self):
        return self.lh, self.hl, self.hh


def wavelet_pool(x: Tensor) -> WaveletBands:
    """Split each channel of ``x`` into LL, LH, HL, HH bands with stride-2 Haar kernels."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if h % 2:
        raise GeometryError(f"wavelet_pool needs an even height, got {h}")
    if w % 2:
        raise GeometryError(f"wavelet_pool needs an even width, got {w}")
    # depthwise: fold channels into the batch axis
    flat = reshape(x, (n * c, 1, h, w))
    bands = {}
    for name, k in HAAR.kernels.items():
        y = conv2d(flat, Tensor(k.reshape(1, 1, 2, 2)), stride=2, pad=0)
        bands[name] = reshape(y, (n, c, h // 2, w // 2))
    return WaveletBands(**bands)


def wavelet_unpool(bands: WaveletBands) -> Tensor:
    """Invert :func:`wavelet_pool`: every 2x2 output block is ``sum_b band_b * K_b``."""
    n, c, h, w = bands.shape
    out = None
    for name, band in zip(BAND_NAMES, bands):
        k = Tensor(HAAR.kernels[name].reshape(1, 1, 1, 2, 1, 2))
        term = mul(reshape(band, (n, c, h, 1, w, 1)), k)
        out = term if out is None else add(out, term)
    return reshape(out, (n, c, 2 * h, 2 * w))


def wavelet_energy(bands: WaveletBands) -> float:
    """Sum of squared entries over all four bands."""
    return float(sum(np.sum(b.data * b.data) for b in bands))
