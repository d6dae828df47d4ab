"""Instance normalization, factorized instance normalization and its attention-driven parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    conv2d,
    div,
    instance_moments,
    matmul,
    mul,
    relu,
    reshape,
    softmax_rows,
    sub,
    transpose,
)

EPSILON = 1e-5


@dataclass
class FinParams:
    """Style-independent channel affine (gamma_ind, beta_ind), each shaped (C,)."""

    gamma_ind: Tensor
    beta_ind: Tensor

    @property
    def channels(self) -> int:
        return self.gamma_ind.shape[0]


@dataclass
class StyleParams:
    """Style-dependent, spatially varying scale and shift shaped like the content map."""

    gamma_s: Tensor
    beta_s: Tensor


@dataclass
class SafinWeights:
    """Learnable parameters of one SAFIN module bound to ``C`` channels."""

    fin: FinParams
    w_f: Tensor
    w_g: Tensor
    w_h: Tensor
    w_gamma: Tensor
    w_beta: Tensor

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator) -> "SafinWeights":
        """Identity FIN affine; 1x1 projections uniform in +-1/sqrt(fan_in)."""
        reduced = max(1, channels // 8)
        bound = 1.0 / np.sqrt(channels)

        def proj(c_out):
            return Tensor(rng.uniform(-bound, bound, size=(c_out, channels, 1, 1)), requires_grad=True)

        return cls(
            fin=FinParams(
                gamma_ind=Tensor(np.ones(channels), requires_grad=True),
                beta_ind=Tensor(np.zeros(channels), requires_grad=True),
            ),
            w_f=proj(reduced),
            w_g=proj(reduced),
            w_h=proj(channels),
            w_gamma=proj(channels),
            w_beta=proj(channels),
        )

    @property
    def channels(self) -> int:
        return self.fin.channels

    def parameters(self) -> Dict[str, Tensor]:
        return {
            "gamma_ind": self.fin.gamma_ind,
            "beta_ind": self.fin.beta_ind,
            "w_f": self.w_f,
            "w_g": self.w_g,
            "w_h": self.w_h,
            "w_gamma": self.w_gamma,
            "w_beta": self.w_beta,
        }


def _expand(moment: Tensor) -> Tensor:
    n, c = moment.shape
    return reshape(moment, (n, c, 1, 1))


def instance_normalize(x: Tensor, epsilon: float = EPSILON) -> Tensor:
    """Standardize every (instance, channel) slice over its spatial grid."""
    m = instance_moments(x, epsilon)
    return div(sub(x, _expand(m.mean)), _expand(m.std))


def fin_apply(f_c_bar: Tensor, fin: FinParams, style: StyleParams) -> Tensor:
    """gamma_s * (gamma_ind * f_c_bar + beta_ind) + beta_s."""
    f_c_bar = as_tensor(f_c_bar)
    c = f_c_bar.shape[1]
    if fin.channels != c:
        raise ShapeError(f"FIN bound to {fin.channels} channels, feature map has {c}")
    for name, t in (("gamma_s", style.gamma_s), ("beta_s", style.beta_s)):
        if t.shape != f_c_bar.shape:
            raise ShapeError(f"{name} shape {t.shape} does not match feature map {f_c_bar.shape}")
    g_ind = reshape(fin.gamma_ind, (1, c, 1, 1))
    b_ind = reshape(fin.beta_ind, (1, c, 1, 1))
    return add(mul(style.gamma_s, add(mul(g_ind, f_c_bar), b_ind)), style.beta_s)


def _check_pair(f_c: Tensor, f_s: Tensor, w: SafinWeights) -> None:
    if f_c.ndim != 4 or f_s.ndim != 4:
        raise ShapeError(f"expected (N, C, H, W) maps, got {f_c.shape} and {f_s.shape}")
    if f_c.shape[:2] != f_s.shape[:2]:
        raise ShapeError(f"content {f_c.shape} and style {f_s.shape} differ in batch or channels")
    if f_c.shape[1] != w.channels:
        raise ShapeError(f"SAFIN bound to {w.channels} channels, feature maps have {f_c.shape[1]}")


def attention_map(f_c_bar: Tensor, f_s_bar: Tensor, w: SafinWeights) -> Tensor:
    """Row-stochastic (N, H_c*W_c, H_s*W_s) weights of style positions per content position."""
    _check_pair(f_c_bar, f_s_bar, w)
    n = f_c_bar.shape[0]
    q = conv2d(f_c_bar, w.w_f)
    k = conv2d(f_s_bar, w.w_g)
    q = transpose(reshape(q, (n, q.shape[1], -1)), (0, 2, 1))
    k = reshape(k, (n, k.shape[1], -1))
    return softmax_rows(matmul(q, k))


def self_attention(f_c_bar: Tensor, f_s_bar: Tensor, w: SafinWeights) -> Tensor:
    """Per content position, the attention-weighted average of projected style features."""
    a = attention_map(f_c_bar, f_s_bar, w)
    n, c, h, wd = f_c_bar.shape
    v = conv2d(f_s_bar, w.w_h)
    v = transpose(reshape(v, (n, c, -1)), (0, 2, 1))
    out = matmul(a, v)  # (N, H_c*W_c, C)
    return reshape(transpose(out, (0, 2, 1)), (n, c, h, wd))


def safin_params(f_c_bar: Tensor, f_s_bar: Tensor, w: SafinWeights) -> StyleParams:
    s = self_attention(f_c_bar, f_s_bar, w)
    return StyleParams(gamma_s=relu(conv2d(s, w.w_gamma)), beta_s=relu(conv2d(s, w.w_beta)))


def fin_style_params(f_c_bar: Tensor, f_s: Tensor, w: SafinWeights, epsilon: float = EPSILON) -> StyleParams:
    """Attention-free style parameters, constant over space.

    The style map's channel standard deviation feeds the scale projection and
    its channel mean feeds the shift projection. With identity projections
    and identity FIN affine this reduces to AdaIN.
    """
    _check_pair(f_c_bar, f_s, w)
    m = instance_moments(f_s, epsilon)
    spread = Tensor(np.ones((1, 1) + f_c_bar.shape[2:]))
    gamma = relu(conv2d(_expand(m.std), w.w_gamma))
    beta = relu(conv2d(_expand(m.mean), w.w_beta))
    return StyleParams(gamma_s=mul(gamma, spread), beta_s=mul(beta, spread))


def safin_forward(
    f_c: Tensor,
    f_s: Tensor,
    w: SafinWeights,
    epsilon: float = EPSILON,
    attention_enabled: bool = True,
) -> Tensor:
    """Normalize content and style, derive style parameters, apply FIN.

    ``attention_enabled=False`` swaps the attention generator for
    :func:`fin_style_params` and changes nothing else.
    """
    f_c, f_s = as_tensor(f_c), as_tensor(f_s)
    _check_pair(f_c, f_s, w)
    f_c_bar = instance_normalize(f_c, epsilon)
    if attention_enabled:
        style = safin_params(f_c_bar, instance_normalize(f_s, epsilon), w)
    else:
        style = fin_style_params(f_c_bar, f_s, w, epsilon)
    return fin_apply(f_c_bar, w.fin, style)


def adain(f_c: Tensor, f_s: Tensor, epsilon: float = EPSILON) -> Tensor:
    """Re-style ``f_c`` with the per-channel mean and standard deviation of ``f_s``."""
    f_c, f_s = as_tensor(f_c), as_tensor(f_s)
    if f_c.ndim != 4 or f_s.ndim != 4 or f_c.shape[:2] != f_s.shape[:2]:
        raise ShapeError(f"adain needs matching batch and channels, got {f_c.shape} and {f_s.shape}")
    m = instance_moments(f_s, epsilon)
    return add(mul(instance_normalize(f_c, epsilon), _expand(m.std)), _expand(m.mean))
