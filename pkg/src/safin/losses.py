"""Content and style losses on the LL bands of encoder activations.

Both use true Euclidean norms (not squared, not averaged over entries) and
average the per-instance values over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

from .stylization import EPSILON
from .tensor import ShapeError, Tensor, add, instance_moments, l2_norm, mean, mul, sub
from .wavelet import wavelet_pool


@dataclass
class LossWeights:
    lambda_s: float = 10.0

    def __post_init__(self):
        if self.lambda_s < 0:
            raise ValueError(f"lambda_s must be non-negative, got {self.lambda_s}")


@dataclass
class LossReport:
    content: float
    style: float
    per_layer_style: Tuple[float, float, float, float]
    total: float

    def tsv(self, step: int) -> str:
        return f"{step}\t{self.content:.10g}\t{self.style:.10g}\t{self.total:.10g}"


def ll_of_tap(feature: Tensor) -> Tensor:
    return wavelet_pool(feature).ll


def _per_instance_norm(diff: Tensor) -> Tensor:
    n = diff.shape[0]
    return l2_norm(diff.reshape(n, -1), axis=1)


def content_loss(taps_out: Sequence[Tensor], taps_content: Sequence[Tensor]) -> Tensor:
    """Euclidean distance between the LL bands of the deepest taps, batch-averaged."""
    a, b = ll_of_tap(taps_out[3]), ll_of_tap(taps_content[3])
    if a.shape != b.shape:
        raise ShapeError(f"content taps differ in shape: {a.shape} vs {b.shape}")
    return mean(_per_instance_norm(sub(a, b)))


def style_loss(
    taps_out: Sequence[Tensor], taps_style: Sequence[Tensor], epsilon: float = EPSILON
) -> Tuple[Tensor, List[Tensor]]:
    """Sum over the four taps of mean and std distances between LL-band moments.

    Returns the total and the four per-layer terms.
    """
    layers = []
    for k, (out, ref) in enumerate(zip(taps_out, taps_style)):
        if out.shape[:2] != ref.shape[:2]:
            raise ShapeError(f"tap {k + 1}: batch/channels differ, {out.shape} vs {ref.shape}")
        mo = instance_moments(ll_of_tap(out), epsilon)
        mr = instance_moments(ll_of_tap(ref), epsilon)
        term = add(
            l2_norm(sub(mo.mean, mr.mean), axis=1),
            l2_norm(sub(mo.std, mr.std), axis=1),
        )
        layers.append(mean(term))
    total = layers[0]
    for t in layers[1:]:
        total = add(total, t)
    return total, layers


def total_loss(content: Union[Tensor, float], style: Union[Tensor, float], w: LossWeights) -> Union[Tensor, float]:
    if isinstance(content, Tensor) or isinstance(style, Tensor):
        return add(content, mul(style, w.lambda_s))
    return content + w.lambda_s * style
