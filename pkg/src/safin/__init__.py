"""Self-attentive factorized instance normalization for style transfer, in float64 numpy."""

from .losses import LossReport, LossWeights, content_loss, style_loss, total_loss
from .network import DecoderNet, EncoderNet, SafinNet, StylizationConfig, encode, stylize
from .stylization import (
    FinParams,
    SafinWeights,
    StyleParams,
    adain,
    fin_apply,
    instance_normalize,
    safin_forward,
    safin_params,
    self_attention,
)
from .tensor import Tensor, backward, grad_check
from .wavelet import WaveletBands, wavelet_energy, wavelet_pool, wavelet_unpool

__version__ = "0.1.0"
