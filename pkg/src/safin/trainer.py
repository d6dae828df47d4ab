"""Seeded training of the decoder and SAFIN weights, plus checkpoint persistence.

Checkpoint layout (all integers little-endian)::

    b"SAFN" | u32 version | u64 config fingerprint
    record*: u32 name length | name (utf-8) | u32 rank | u64 extent * rank | f64 data
    u32 CRC32 of everything before it

Records are ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>`` and
``meta/<key>`` scalars. 64-bit integers (seed, RNG state) are split into
``_hi``/``_lo`` 32-bit halves so float64 stores them exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import atomic_write, load_corpus
from .losses import LossReport, LossWeights, content_loss, style_loss, total_loss
from .network import DEFAULT_WIDTHS, ENCODER_SEED, SafinNet, StylizationConfig, check_image_size, encode, stylize_encoded
from .stylization import EPSILON
from .tensor import Tensor, backward

MAGIC = b"SAFN"
FORMAT_VERSION = 1
MASK64 = (1 << 64) - 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteLossError(RuntimeError):
    """A training step produced a NaN or infinite loss or gradient."""


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    """Wrong magic bytes or unsupported format version."""


class CheckpointCorruptError(CheckpointError):
    """Truncated file, failed CRC, or inconsistent contents."""


class SplitMix64:
    """64-bit SplitMix generator; ``below(n)`` is ``next() % n``."""

    def __init__(self, state: int):
        self.state = state & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 4
    learning_rate: float = 1e-3
    lambda_s: float = 10.0
    seed: int = 0
    image_size: int = 32
    content_dir: str = ""
    style_dir: str = ""
    checkpoint_path: str = ""
    attention_enabled: bool = True
    widths: Tuple[int, int, int, int] = DEFAULT_WIDTHS
    epsilon: float = EPSILON
    encoder_seed: int = ENCODER_SEED

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.lambda_s < 0:
            raise ValueError(f"lambda_s must be >= 0, got {self.lambda_s}")
        # the content loss pools the deepest tap (size / 8) once more
        check_image_size(self.image_size, 16)

    def stylization(self) -> StylizationConfig:
        return StylizationConfig(
            epsilon=self.epsilon,
            attention_enabled=self.attention_enabled,
            widths=self.widths,
            encoder_seed=self.encoder_seed,
        )

    def model_fields(self) -> dict:
        """Fields that shape the model and its training trajectory (not paths or step count)."""
        d = asdict(self)
        for k in ("steps", "content_dir", "style_dir", "checkpoint_path"):
            d.pop(k)
        d["widths"] = list(self.widths)
        return d

    def fingerprint(self) -> int:
        blob = json.dumps(self.model_fields(), sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


@dataclass
class TrainState:
    cfg: TrainConfig
    net: SafinNet
    adam_m: Dict[str, np.ndarray]
    adam_v: Dict[str, np.ndarray]
    step: int = 0
    rng: SplitMix64 = field(default_factory=lambda: SplitMix64(0))

    @classmethod
    def create(cls, cfg: TrainConfig) -> "TrainState":
        net = SafinNet(cfg.stylization(), seed=cfg.seed)
        params = net.parameters()
        return cls(
            cfg=cfg,
            net=net,
            adam_m={k: np.zeros_like(p.data) for k, p in params.items()},
            adam_v={k: np.zeros_like(p.data) for k, p in params.items()},
            step=0,
            rng=SplitMix64(cfg.seed),
        )


def sample_batch(state: TrainState, content: Sequence[np.ndarray], style: Sequence[np.ndarray]):
    """Draw content then style indices, uniformly with replacement, from the state's RNG."""
    b = state.cfg.batch_size
    ci = [state.rng.below(len(content)) for _ in range(b)]
    si = [state.rng.below(len(style)) for _ in range(b)]
    return np.stack([content[i] for i in ci]), np.stack([style[i] for i in si])


def compute_losses(net: SafinNet, content: Tensor, style: Tensor, weights: LossWeights):
    """Forward pass; returns (total, content, style, per-layer style, stylized image) as tensors."""
    enc_c = encode(content, net.encoder)
    enc_s = encode(style, net.encoder)
    out = stylize_encoded(enc_c, enc_s, net)
    enc_o = encode(out, net.encoder)
    lc = content_loss(enc_o.taps, enc_c.taps)
    ls, layers = style_loss(enc_o.taps, enc_s.taps, net.cfg.epsilon)
    return total_loss(lc, ls, weights), lc, ls, layers, out


def train_step(state: TrainState, content_batch, style_batch, cfg: Optional[TrainConfig] = None) -> LossReport:
    """One Adam step on the decoder and SAFIN weights. Leaves ``state`` untouched on failure."""
    cfg = cfg or state.cfg
    net = state.net
    params = net.parameters()
    net.zero_grad()
    total, lc, ls, layers, _ = compute_losses(
        net, Tensor(content_batch), Tensor(style_batch), LossWeights(cfg.lambda_s)
    )
    report = LossReport(
        content=lc.item(),
        style=ls.item(),
        per_layer_style=tuple(t.item() for t in layers),
        total=total.item(),
    )
    if not np.isfinite(report.total):
        net.zero_grad()
        raise NonFiniteLossError(f"non-finite loss at step {state.step + 1}: {report}")
    backward(total)
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        net.zero_grad()
        raise NonFiniteLossError(f"non-finite gradient at step {state.step + 1}")

    t = state.step + 1
    lr = cfg.learning_rate
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    for k, p in params.items():
        g = grads[k]
        m = ADAM_BETA1 * state.adam_m[k] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * state.adam_v[k] + (1.0 - ADAM_BETA2) * g * g
        state.adam_m[k], state.adam_v[k] = m, v
        if lr:
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    net.zero_grad()
    state.step = t
    return report


def train(
    cfg: TrainConfig,
    log: Optional[Callable[[int, LossReport], None]] = None,
    state: Optional[TrainState] = None,
) -> Tuple[TrainState, List[LossReport]]:
    """Run ``cfg.steps`` steps on the corpora in ``cfg.content_dir`` / ``cfg.style_dir``."""
    content = load_corpus(cfg.content_dir, cfg.image_size)
    style = load_corpus(cfg.style_dir, cfg.image_size)
    state = state or TrainState.create(cfg)
    reports = []
    for _ in range(cfg.steps):
        cb, sb = sample_batch(state, content, style)
        report = train_step(state, cb, sb, cfg)
        reports.append(report)
        if log is not None:
            log(state.step, report)
    if cfg.checkpoint_path:
        save_checkpoint(state, cfg.checkpoint_path)
    return state, reports


def moving_average(values: Sequence[float], window: int = 20) -> np.ndarray:
    """Trailing means; entry ``i`` averages ``values[i - window + 1 : i + 1]``."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[window:] - c[:-window]) / window


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _split64(x: int) -> Tuple[float, float]:
    x &= MASK64
    return float(x >> 32), float(x & 0xFFFFFFFF)


def _join64(hi: float, lo: float) -> int:
    return (int(hi) << 32) | int(lo)


def _records(state: TrainState) -> List[Tuple[str, np.ndarray]]:
    cfg = state.cfg
    meta = {
        "step": state.step,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "lambda_s": cfg.lambda_s,
        "image_size": cfg.image_size,
        "attention_enabled": float(cfg.attention_enabled),
        "epsilon": cfg.epsilon,
        "encoder_seed": cfg.encoder_seed,
    }
    meta["seed_hi"], meta["seed_lo"] = _split64(cfg.seed)
    meta["rng_hi"], meta["rng_lo"] = _split64(state.rng.state)
    recs = [(f"meta/{k}", np.array(float(v))) for k, v in meta.items()]
    recs.append(("meta/widths", np.array(cfg.widths, dtype=np.float64)))
    for k, p in state.net.parameters().items():
        recs.append((f"param/{k}", p.data))
        recs.append((f"adam_m/{k}", state.adam_m[k]))
        recs.append((f"adam_v/{k}", state.adam_v[k]))
    return recs


def checkpoint_bytes(state: TrainState) -> bytes:
    body = bytearray(MAGIC)
    body += _U32.pack(FORMAT_VERSION)
    body += _U64.pack(state.cfg.fingerprint())
    for name, arr in _records(state):
        raw = name.encode("utf-8")
        body += _U32.pack(len(raw)) + raw
        body += _U32.pack(arr.ndim)
        for n in arr.shape:
            body += _U64.pack(n)
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += _U32.pack(zlib.crc32(bytes(body)))
    return bytes(body)


def save_checkpoint(state: TrainState, path) -> None:
    blob = checkpoint_bytes(state)

    def write(tmp):
        Path(tmp).write_bytes(blob)

    atomic_write(path, write)


def parse_checkpoint(blob: bytes) -> TrainState:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointVersionError("not a SAFN checkpoint (bad magic bytes)")
    if len(blob) < 20:
        raise CheckpointCorruptError("checkpoint truncated inside the header")
    (version,) = _U32.unpack_from(blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    body, (crc,) = blob[:-4], _U32.unpack(blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointCorruptError("checkpoint CRC mismatch (truncated or corrupted)")
    (fingerprint,) = _U64.unpack_from(body, 8)

    records: Dict[str, np.ndarray] = {}
    pos = 16
    try:
        while pos < len(body):
            (nlen,) = _U32.unpack_from(body, pos)
            pos += 4
            name = body[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = _U32.unpack_from(body, pos)
            pos += 4
            shape = tuple(_U64.unpack_from(body, pos + 8 * i)[0] for i in range(rank))
            pos += 8 * rank
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(body):
                raise CheckpointCorruptError(f"record {name!r} runs past the end of the file")
            records[name] = np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"malformed checkpoint record: {exc}") from None

    try:
        meta = {k[5:]: v for k, v in records.items() if k.startswith("meta/")}
        cfg = TrainConfig(
            steps=1,
            batch_size=int(meta["batch_size"]),
            learning_rate=float(meta["learning_rate"]),
            lambda_s=float(meta["lambda_s"]),
            seed=_join64(meta["seed_hi"], meta["seed_lo"]),
            image_size=int(meta["image_size"]),
            attention_enabled=bool(meta["attention_enabled"]),
            widths=tuple(int(w) for w in meta["widths"]),
            epsilon=float(meta["epsilon"]),
            encoder_seed=int(meta["encoder_seed"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointCorruptError(f"checkpoint metadata incomplete: {exc}") from None
    if cfg.fingerprint() != fingerprint:
        raise CheckpointCorruptError("config fingerprint does not match stored metadata")

    state = TrainState.create(cfg)
    for k, p in state.net.parameters().items():
        for prefix, target in (("param/", None), ("adam_m/", state.adam_m), ("adam_v/", state.adam_v)):
            arr = records.get(prefix + k)
            if arr is None or arr.shape != p.shape:
                raise CheckpointCorruptError(f"missing or misshapen record {prefix + k}")
            if target is None:
                p.data = arr
            else:
                target[k] = arr
    state.step = int(meta["step"])
    state.rng = SplitMix64(_join64(meta["rng_hi"], meta["rng_lo"]))
    return state


def load_checkpoint(path) -> TrainState:
    return parse_checkpoint(Path(path).read_bytes())
