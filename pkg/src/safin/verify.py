"""Invariant suites behind ``safin verify``.

Each suite returns a list of :class:`Check` rows: a measured worst-case
value and the bound it must stay under.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from . import tensor as T
from .losses import LossWeights, content_loss, style_loss, total_loss
from .network import SafinNet, StylizationConfig, stylize
from .stylization import (
    FinParams,
    SafinWeights,
    StyleParams,
    attention_map,
    fin_apply,
    instance_normalize,
    safin_forward,
    safin_params,
)
from .tensor import Tensor, grad_check
from .trainer import compute_losses
from .wavelet import wavelet_energy, wavelet_pool, wavelet_unpool

GRAD_STEP = 1e-5


@dataclass
class Check:
    name: str
    value: float
    bound: float
    op: str = "<"

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return {
            "<": self.value < self.bound,
            "<=": self.value <= self.bound,
            ">": self.value > self.bound,
            ">=": self.value >= self.bound,
        }[self.op]

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} {self.op} {self.bound:.0e}"


def off_kink(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform samples from [-2, -0.1] U [0.1, 2]."""
    mag = rng.uniform(0.1, 2.0, shape)
    return np.where(rng.random(shape) < 0.5, -mag, mag)


def wavelet_suite(seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    roundtrip = energy = linear = 0.0
    for _ in range(100):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 9))) + (int(rng.choice([4, 8, 16])),) * 2
        x = rng.standard_normal(shape)
        bands = wavelet_pool(Tensor(x))
        roundtrip = max(roundtrip, float(np.abs(wavelet_unpool(bands).data - x).max()))
        energy = max(energy, abs(wavelet_energy(bands) - float(np.sum(x * x))) / max(1.0, float(np.sum(x * x))))
        y = rng.standard_normal(shape)
        a, b = rng.standard_normal(2)
        lhs = wavelet_pool(Tensor(a * x + b * y))
        py = wavelet_pool(Tensor(y))
        for l, bx, by in zip(lhs, bands, py):
            linear = max(linear, float(np.abs(l.data - (a * bx.data + b * by.data)).max()))

    golden = wavelet_pool(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
    got = np.array([b.data.item() for b in golden])
    const = wavelet_pool(Tensor(np.full((1, 2, 4, 4), 3.0)))
    const_err = max(float(np.abs(const.ll.data - 6.0).max()), *(float(np.abs(b.data).max()) for b in const.high))
    return [
        Check("wavelet roundtrip max |unpool(pool(x)) - x|", roundtrip, 1e-12),
        Check("wavelet energy relative error", energy, 1e-9),
        Check("wavelet linearity max error", linear, 1e-12),
        Check("wavelet golden [[1,2],[3,4]] -> (5,1,2,0)", float(np.abs(got - [5, 1, 2, 0]).max()), 1e-12),
        Check("wavelet golden energy 30", abs(wavelet_energy(golden) - 30.0), 1e-9),
        Check("wavelet constant annihilation", const_err, 0.0, "<="),
    ]


def _primitive_cases(rng: np.random.Generator) -> Dict[str, Callable[[], float]]:
    def unary(op):
        return lambda: grad_check(lambda a: T.sum_(op(a) * w1), Tensor(off_kink(rng, (3, 4))), GRAD_STEP)

    w1 = Tensor(rng.standard_normal((3, 4)))

    def binary(op, bshape):
        a, b = Tensor(off_kink(rng, (2, 3, 4))), Tensor(off_kink(rng, bshape))
        wr = Tensor(rng.standard_normal((2, 3, 4)))
        return lambda: grad_check(lambda a, b: T.sum_(op(a, b) * wr), [a, b], GRAD_STEP)

    def conv(k, stride, pad, h):
        x = Tensor(off_kink(rng, (2, 3, h, h)))
        wt = Tensor(off_kink(rng, (4, 3, k, k)))
        bias = Tensor(off_kink(rng, (4,)))
        ho = (h + 2 * pad - k) // stride + 1
        wr = Tensor(rng.standard_normal((2, 4, ho, ho)))
        return lambda: grad_check(
            lambda x, wt, bias: T.sum_(T.conv2d(x, wt, stride, pad, bias) * wr), [x, wt, bias], GRAD_STEP
        )

    def matmul_case():
        a, b = Tensor(off_kink(rng, (3, 4))), Tensor(off_kink(rng, (4, 2)))
        wr = Tensor(rng.standard_normal((3, 2)))
        return lambda: grad_check(lambda a, b: T.sum_(T.matmul(a, b) * wr), [a, b], GRAD_STEP)

    def softmax_case():
        x = Tensor(off_kink(rng, (3, 5)))
        wr = Tensor(rng.standard_normal((3, 5)))
        return lambda: grad_check(lambda x: T.sum_(T.softmax_rows(x) * wr), x, GRAD_STEP)

    def norm_case():
        x = Tensor(off_kink(rng, (2, 3, 4, 4)))
        wr = Tensor(rng.standard_normal((2, 3, 4, 4)))
        return lambda: grad_check(lambda x: T.sum_(instance_normalize(x) * wr), x, GRAD_STEP)

    def moments_case():
        x = Tensor(off_kink(rng, (2, 3, 4, 4)))
        wm, ws = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3)))

        def f(x):
            m = T.instance_moments(x, 1e-5)
            return T.add(T.sum_(m.mean * wm), T.sum_(m.std * ws))

        return lambda: grad_check(f, x, GRAD_STEP)

    def l2_case():
        x = Tensor(off_kink(rng, (3, 4)))
        return lambda: grad_check(lambda x: T.sum_(T.l2_norm(x, axis=1)), x, GRAD_STEP)

    def wavelet_case():
        x = Tensor(off_kink(rng, (1, 2, 4, 4)))
        wr = [Tensor(rng.standard_normal((1, 2, 2, 2))) for _ in range(4)]
        wo = Tensor(rng.standard_normal((1, 2, 4, 4)))

        def f(x):
            bands = wavelet_pool(x)
            s = T.sum_(wavelet_unpool(bands) * wo)
            for b, w in zip(bands, wr):
                s = T.add(s, T.sum_(b * w))
            return s

        return lambda: grad_check(f, x, GRAD_STEP)

    return {
        "add": binary(T.add, (1, 3, 1)),
        "sub": binary(T.sub, (3, 4)),
        "mul": binary(T.mul, (2, 1, 4)),
        "div": binary(T.div, (2, 3, 4)),
        "relu": unary(T.relu),
        "square": unary(T.square),
        "sqrt": lambda: grad_check(
            lambda a: T.sum_(T.sqrt(a) * w1), Tensor(rng.uniform(0.1, 2.0, (3, 4))), GRAD_STEP
        ),
        "matmul": matmul_case(),
        "conv2d k1": conv(1, 1, 0, 4),
        "conv2d k2 stride2": conv(2, 2, 0, 4),
        "conv2d k3 pad1": conv(3, 1, 1, 4),
        "conv2d k3 stride2 pad1": conv(3, 2, 1, 5),
        "softmax_rows": softmax_case(),
        "instance_moments": moments_case(),
        "instance_normalize": norm_case(),
        "l2_norm": l2_case(),
        "wavelet pool/unpool": wavelet_case(),
    }


def _safin_composite(rng: np.random.Generator, attention: bool) -> float:
    c = 8
    w = SafinWeights.init(c, rng)
    w.fin.gamma_ind.data[:] = rng.uniform(0.5, 1.5, c)
    w.fin.beta_ind.data[:] = rng.uniform(-0.5, 0.5, c)
    f_c = Tensor(rng.standard_normal((2, c, 4, 4)))
    f_s = Tensor(rng.standard_normal((2, c, 2, 3)))
    wr = Tensor(rng.standard_normal((2, c, 4, 4)))
    params = list(w.parameters().values())
    return grad_check(
        lambda *_: T.sum_(safin_forward(f_c, f_s, w, 1e-5, attention) * wr), params, GRAD_STEP
    )


def reduced_net(attention: bool, seed: int = 3) -> SafinNet:
    """Widths (2, 4, 4, 4) with biases and FIN affine moved off their zero/one initial values.

    At small sizes the deepest features normalize to exactly zero, so zero
    biases would put decoder ReLUs exactly on their kinks.
    """
    rng = np.random.default_rng(seed + 1000)
    net = SafinNet(StylizationConfig(attention_enabled=attention, widths=(2, 4, 4, 4)), seed=seed)
    for b in net.decoder.biases[1:]:
        b.data[:] = off_kink(rng, b.shape) * 0.25
    net.decoder.biases[0].data[:] = rng.uniform(0.3, 0.7, 3)
    for w in (net.safin_ll, net.safin_hf):
        w.fin.gamma_ind.data[:] = rng.uniform(0.5, 1.5, w.channels)
        w.fin.beta_ind.data[:] = off_kink(rng, w.channels) * 0.5
    return net


def stylize_grad_error(attention: bool, size: int = 8, seed: int = 3) -> float:
    """Gradient check of a random linear readout of ``stylize`` w.r.t. every learnable."""
    rng = np.random.default_rng(seed)
    net = reduced_net(attention, seed)
    content = Tensor(rng.uniform(0, 1, (1, 3, size, size)))
    style = Tensor(rng.uniform(0, 1, (1, 3, size, size)))
    wr = Tensor(rng.standard_normal((1, 3, size, size)))
    params = list(net.parameters().values())
    return grad_check(lambda *_: T.sum_(stylize(content, style, net) * wr), params, GRAD_STEP)


def total_loss_grad_error(attention: bool, size: int = 16, seed: int = 3) -> float:
    """Gradient check of the full stylize + total loss graph w.r.t. every learnable."""
    rng = np.random.default_rng(seed)
    net = reduced_net(attention, seed)
    content = Tensor(rng.uniform(0, 1, (2, 3, size, size)))
    style = Tensor(rng.uniform(0, 1, (2, 3, size, size)))
    params = list(net.parameters().values())
    weights = LossWeights(10.0)
    return grad_check(lambda *_: compute_losses(net, content, style, weights)[0], params, GRAD_STEP)


def primitive_grad_errors(rng: np.random.Generator) -> Dict[str, float]:
    return {name: fn() for name, fn in _primitive_cases(rng).items()}


def grad_suite(seed: int = 0, attention: bool = True) -> List[Check]:
    rng = np.random.default_rng(seed)
    prim = max(primitive_grad_errors(rng).values())
    tag = "" if attention else " (attention off)"
    return [
        Check("primitive ops max relative error", prim, 1e-6),
        Check(f"safin_forward composite{tag}", _safin_composite(rng, attention), 1e-4),
        Check(f"stylize graph, size 8{tag}", stylize_grad_error(attention, 8), 1e-4),
        Check(f"stylize + total loss, size 16{tag}", total_loss_grad_error(attention, 16), 1e-4),
    ]


def norm_suite(seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    mean_err = std_err = 0.0
    for _ in range(100):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 9)), int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        x = rng.normal(rng.uniform(-3, 3), rng.uniform(0.5, 3), shape)
        y = instance_normalize(Tensor(x), 1e-5).data
        mean_err = max(mean_err, float(np.abs(y.mean(axis=(2, 3))).max()))
        std_err = max(std_err, float(np.abs(y.std(axis=(2, 3)) - 1.0).max()))

    f = Tensor(rng.standard_normal((2, 3, 4, 4)))
    ident = FinParams(Tensor(np.ones(3)), Tensor(np.zeros(3)))
    one = StyleParams(Tensor(np.ones((2, 3, 4, 4))), Tensor(np.zeros((2, 3, 4, 4))))
    ident_err = float(np.abs(fin_apply(f, ident, one).data - f.data).max())
    scalar = fin_apply(
        Tensor(np.full((1, 1, 1, 1), 0.5)),
        FinParams(Tensor([2.0]), Tensor([1.0])),
        StyleParams(Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor(np.full((1, 1, 1, 1), -1.0))),
    ).data.item()

    row_err, min_param = 0.0, np.inf
    for _ in range(100):
        c = int(rng.integers(1, 17))
        w = SafinWeights.init(c, rng)
        fc = instance_normalize(Tensor(rng.standard_normal((2, c, 3, 4))))
        fs = instance_normalize(Tensor(rng.standard_normal((2, c, 2, 5))))
        a = attention_map(fc, fs, w).data
        row_err = max(row_err, float(np.abs(a.sum(axis=-1) - 1.0).max()))
        p = safin_params(fc, fs, w)
        min_param = min(min_param, float(p.gamma_s.data.min()), float(p.beta_s.data.min()))
    w = SafinWeights.init(8, rng)
    single = attention_map(Tensor(rng.standard_normal((1, 8, 1, 1))), Tensor(rng.standard_normal((1, 8, 1, 1))), w)
    return [
        Check("instance_normalize max |mean|", mean_err, 1e-9),
        Check("instance_normalize max |std - 1|", std_err, 1e-3),
        Check("FIN identity parameters max deviation", ident_err, 0.0, "<="),
        Check("FIN scalar case |out - 5|", abs(scalar - 5.0), 0.0, "<="),
        Check("attention row-sum error", row_err, 1e-9),
        Check("min entry of gamma_s, beta_s", min_param, 0.0, ">="),
        Check("1x1 attention |A - 1|", abs(single.data.item() - 1.0), 0.0, "<="),
    ]


def loss_suite(seed: int = 0) -> List[Check]:
    rng = np.random.default_rng(seed)
    net = SafinNet(StylizationConfig(), seed=seed)
    from .network import encode

    img = Tensor(rng.uniform(0, 1, (2, 3, 32, 32)))
    other = Tensor(rng.uniform(0, 1, (2, 3, 32, 32)))
    taps = encode(img, net.encoder).taps
    taps_other = encode(other, net.encoder).taps
    lc_same = content_loss(taps, taps).item()
    ls_same, layers_same = style_loss(taps, taps)
    lc, ls = content_loss(taps, taps_other).item(), style_loss(taps, taps_other)[0].item()
    w = LossWeights(10.0)
    tot = total_loss(lc, ls, w)
    _, layers = style_loss(taps, taps_other)
    return [
        Check("content loss L_c(I, I)", lc_same, 0.0, "<="),
        Check("style loss with identical taps", max(ls_same.item(), *(t.item() for t in layers_same)), 0.0, "<="),
        Check("total - (content + lambda*style)", abs(tot - (lc + 10.0 * ls)), 1e-12),
        Check("per-layer style sum vs total", abs(sum(t.item() for t in layers) - ls), 1e-12),
        Check("total_loss(2.0, 0.5, 10) == 7.0", abs(total_loss(2.0, 0.5, w) - 7.0), 0.0, "<="),
        Check("min(content, style) on distinct images", min(lc, ls), 0.0, ">"),
    ]


SUITES: Dict[str, Callable[[], List[Check]]] = {
    "wavelet": wavelet_suite,
    "grad": grad_suite,
    "norm": norm_suite,
    "loss": loss_suite,
}


def run_suites(names) -> Dict[str, List[Check]]:
    return {name: SUITES[name]() for name in names}
