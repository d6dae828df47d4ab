"""Image loading, PNG output and the procedural training corpus."""

from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path
from typing import List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


class CorpusError(ValueError):
    """A corpus directory is missing or holds no decodable image."""


def prepare_image(img: Image.Image, size: int) -> np.ndarray:
    """Center-crop to a square, bilinearly resize to ``size``, return (3, size, size) in [0, 1]."""
    img = img.convert("RGB")
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    if side != size:
        img = img.resize((size, size), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def load_image(path: PathLike, size: int) -> np.ndarray:
    with Image.open(path) as img:
        return prepare_image(img, size)


def load_corpus(directory: PathLike, image_size: int) -> List[np.ndarray]:
    """Decode every image in ``directory`` in alphabetical order, skipping undecodable files."""
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"{directory} is not a directory")
    images = []
    for path in sorted(p for p in directory.iterdir() if p.is_file()):
        try:
            images.append(load_image(path, image_size))
        except (UnidentifiedImageError, OSError) as exc:
            logger.warning("skipping %s: %s", path, exc)
    if not images:
        raise CorpusError(f"no decodable images in {directory}")
    return images


def to_uint8(x: np.ndarray) -> np.ndarray:
    """(3, H, W) floats in [0, 1] to (H, W, 3) bytes, rounding half up."""
    q = np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5)
    return q.astype(np.uint8).transpose(1, 2, 0)


def atomic_write(path: PathLike, write) -> None:
    """Call ``write(tmp_path)`` then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_image(path: PathLike, x: np.ndarray) -> None:
    img = Image.fromarray(to_uint8(x), mode="RGB")
    atomic_write(path, lambda tmp: img.save(tmp, format="PNG"))


def _synthetic(index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0, c1 = rng.uniform(0.0, 1.0, (2, 3))
    kind = index % 4
    if kind == 0:
        t = (xx * np.cos(index) + yy * np.sin(index) + 1.0) / 2.0
        t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    elif kind == 1:
        cell = 2 + index // 4 * 2
        t = ((np.arange(size)[:, None] // cell + np.arange(size)[None, :] // cell) % 2).astype(float)
    elif kind == 2:
        t = np.zeros((size, size))
        for _ in range(3):
            cy, cx = rng.uniform(0.15, 0.85, 2)
            s = rng.uniform(0.08, 0.2)
            t += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        t = np.clip(t, 0.0, 1.0)
    else:
        freq = 3 + index
        t = 0.5 + 0.5 * np.sin(2 * np.pi * freq * np.hypot(yy - 0.5, xx - 0.5))
    return c0[:, None, None] * (1 - t)[None] + c1[:, None, None] * t[None]


def generate_corpus(out_dir: PathLike, count: int = 8, size: int = 32, seed: int = 0) -> List[Path]:
    """Write ``count`` procedural PNGs (gradients, checkerboards, blobs, rings) to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        path = out_dir / f"synthetic_{i:02d}.png"
        save_image(path, _synthetic(i, size, rng))
        paths.append(path)
    return paths
