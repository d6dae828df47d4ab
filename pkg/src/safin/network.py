"""Wavelet encoder-decoder with two SAFIN modules.

Data flow for ``stylize``::

    encoder:  conv1 -> tap1 -> pool1 -> conv2 -> tap2 -> pool2 -> conv3 -> tap3 -> pool3 -> conv4 -> tap4
    tap4            --SAFIN-LL-->  decoder input
    pool3 LH/HL/HH  --SAFIN-HF-->  high bands for unpool3  (one module, three passes)
    pool2, pool1 LH/HL/HH --AdaIN--> high bands for unpool2, unpool1
    decoder:  conv4 -> unpool3 -> conv3 -> unpool2 -> conv2 -> unpool1 -> conv1 (linear) -> clamp[0, 1]

Each encoder block continues from the LL band of the previous pooling.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .stylization import EPSILON, SafinWeights, adain, safin_forward
from .tensor import GeometryError, ShapeError, Tensor, as_tensor, clamp, conv2d, relu
from .wavelet import WaveletBands, wavelet_pool, wavelet_unpool

DEFAULT_WIDTHS = (8, 16, 32, 64)
ENCODER_SEED = 19


@dataclass
class StylizationConfig:
    epsilon: float = EPSILON
    attention_enabled: bool = True
    widths: Tuple[int, int, int, int] = DEFAULT_WIDTHS
    encoder_seed: int = ENCODER_SEED

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ValueError(f"need four positive channel widths, got {self.widths}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def check_image_size(size: int, multiple: int = 8) -> None:
    if size < multiple or size % multiple:
        raise GeometryError(f"image size {size} must be a positive multiple of {multiple}")


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """A rows x cols matrix with orthonormal rows (or columns, if rows > cols)."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q.T if rows <= cols else q


class EncoderNet:
    """Frozen four-block encoder with random orthogonal 3x3 filters."""

    def __init__(self, widths=DEFAULT_WIDTHS, seed: int = ENCODER_SEED):
        rng = np.random.default_rng(seed)
        self.widths = tuple(widths)
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        c_in = 3
        for c_out in self.widths:
            w = _orthogonal(rng, c_out, c_in * 9).reshape(c_out, c_in, 3, 3)
            self.weights.append(Tensor(w))
            self.biases.append(Tensor(np.zeros(c_out)))
            c_in = c_out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for t in self.weights + self.biases:
            h.update(t.data.tobytes())
        return h.hexdigest()


@dataclass
class Encoding:
    """Activations at ReLU_1_1 .. ReLU_4_1 and the three poolings between blocks."""

    taps: List[Tensor]
    bands: List[WaveletBands] = field(default_factory=list)


def encode(x: Tensor, enc: EncoderNet) -> Encoding:
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"expected an (N, 3, H, W) image batch, got {x.shape}")
    for axis, extent in zip(("height", "width"), x.shape[2:]):
        if extent % 8 or extent == 0:
            raise GeometryError(f"image {axis} {extent} is not a multiple of 8")
    taps, bands = [], []
    h = x
    for i, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        h = relu(conv2d(h, w, stride=1, pad=1, bias=b))
        taps.append(h)
        if i < 3:
            pooled = wavelet_pool(h)
            bands.append(pooled)
            h = pooled.ll
    return Encoding(taps=taps, bands=bands)


class DecoderNet:
    """Mirror of the encoder; ``convs[i]`` maps ``widths[i]`` back to ``widths[i-1]`` (3 for i=0)."""

    def __init__(self, widths=DEFAULT_WIDTHS, rng: np.random.Generator = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = tuple(widths)
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        outs = (3,) + self.widths[:-1]
        for c_in, c_out in zip(self.widths, outs):
            bound = 1.0 / np.sqrt(c_in * 9)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (c_out, c_in, 3, 3)), requires_grad=True))
            self.biases.append(Tensor(np.zeros(c_out), requires_grad=True))
        # start the linear output layer mid-range so the clamp is inactive
        self.biases[0].data[:] = 0.5

    def parameters(self) -> Dict[str, Tensor]:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"conv{i + 1}.weight"] = w
            params[f"conv{i + 1}.bias"] = b
        return params

    def __call__(self, x: Tensor, high_bands: List[Tuple[Tensor, Tensor, Tensor]]) -> Tensor:
        """Decode from the deepest feature, re-inserting ``high_bands[i]`` at unpooling ``i``."""
        h = x
        for i in (3, 2, 1):
            h = relu(conv2d(h, self.weights[i], stride=1, pad=1, bias=self.biases[i]))
            h = wavelet_unpool(WaveletBands(h, *high_bands[i - 1]))
        return conv2d(h, self.weights[0], stride=1, pad=1, bias=self.biases[0])


class SafinNet:
    """All weights of the stylization pipeline; only decoder and SAFIN weights learn."""

    def __init__(self, cfg: StylizationConfig = None, seed: int = 0):
        self.cfg = cfg if cfg is not None else StylizationConfig()
        rng = np.random.default_rng(seed)
        w = self.cfg.widths
        self.encoder = EncoderNet(w, self.cfg.encoder_seed)
        self.decoder = DecoderNet(w, rng)
        self.safin_ll = SafinWeights.init(w[3], rng)
        self.safin_hf = SafinWeights.init(w[2], rng)

    def parameters(self) -> Dict[str, Tensor]:
        params = {f"decoder.{k}": v for k, v in self.decoder.parameters().items()}
        params.update({f"safin_ll.{k}": v for k, v in self.safin_ll.parameters().items()})
        params.update({f"safin_hf.{k}": v for k, v in self.safin_hf.parameters().items()})
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def stylize_encoded(content: Encoding, style: Encoding, net: SafinNet) -> Tensor:
    """Stylize from precomputed encodings of the content and style images."""
    cfg = net.cfg
    eps = cfg.epsilon
    deep = safin_forward(content.taps[3], style.taps[3], net.safin_ll, eps, cfg.attention_enabled)
    highs = []
    for level, (bc, bs) in enumerate(zip(content.bands, style.bands)):
        if level == 2:
            bands = tuple(
                safin_forward(c, s, net.safin_hf, eps, cfg.attention_enabled) for c, s in zip(bc.high, bs.high)
            )
        else:
            bands = tuple(adain(c, s, eps) for c, s in zip(bc.high, bs.high))
        highs.append(bands)
    return clamp(net.decoder(deep, highs), 0.0, 1.0)


def stylize(content: Tensor, style: Tensor, net: SafinNet) -> Tensor:
    """Render ``content`` in the style of ``style``; output matches the content's shape."""
    content, style = as_tensor(content), as_tensor(style)
    if content.shape[0] != style.shape[0]:
        raise ShapeError(f"content batch {content.shape[0]} and style batch {style.shape[0]} differ")
    return stylize_encoded(encode(content, net.encoder), encode(style, net.encoder), net)
