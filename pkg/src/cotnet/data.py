"""Datasets: a procedural texture/colour toy set and a folder-of-PPM loader.

Samples are addressed by index and generated from ``(seed, index)`` alone,
so any worker can produce any sample without shared state.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .tensor import ConfigError

_ORIENTATIONS = 4


@dataclass(frozen=True)
class ToyDataset:
    """Oriented gratings plus a coloured blob.

    Class ``c`` fixes the grating orientation (``c % 4`` times 45 degrees) and
    the blob/tint palette (``c // 4``).  Phase, frequency, blob position and
    pixel noise are random per sample.  Labels cycle ``index % classes``.
    """

    classes: int = 8
    size: int = 32
    samples: int = 512
    seed: int = 0
    generator: str = "textures"

    def __post_init__(self):
        if self.generator != "textures":
            raise ConfigError(f"unknown generator {self.generator!r}")
        if not 1 <= self.classes <= 2 * _ORIENTATIONS * 2:
            raise ConfigError(f"textures generator supports 1..16 classes, got {self.classes}")

    def __len__(self) -> int:
        return self.samples

    def label(self, index: int) -> int:
        return index % self.classes

    def __getitem__(self, index: int) -> tuple[np.ndarray, int]:
        if not 0 <= index < self.samples:
            raise IndexError(index)
        c = self.label(index)
        rng = np.random.default_rng([self.seed, index])
        s = self.size
        yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)

        angle = np.pi * (c % _ORIENTATIONS) / _ORIENTATIONS
        freq = rng.uniform(0.12, 0.2)
        phase = rng.uniform(0, 2 * np.pi)
        grating = np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)) + phase)

        palette = (c // _ORIENTATIONS) % 4
        colour = np.array([[1.0, 0.3, -0.6], [-0.6, 0.3, 1.0], [0.3, 1.0, -0.6], [1.0, -0.6, 1.0]])[palette]
        cy, cx = rng.uniform(0.25 * s, 0.75 * s, size=2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (0.15 * s) ** 2))

        img = 0.6 * grating[None] + colour[:, None, None] * (0.8 * blob[None] + 0.15)
        img += rng.normal(scale=0.15, size=img.shape)
        return img.astype(np.float32), c

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        items = [self[int(i)] for i in indices]
        return np.stack([x for x, _ in items]), np.array([y for _, y in items], dtype=np.int64)


# ---------------------------------------------------------------------------
# external images
# ---------------------------------------------------------------------------

def write_ppm(path: str, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary PPM (``P6``, maxval 255)."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {image.shape}")
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only binary P6 with maxval 255 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3)


class ImageFolderDataset:
    """``root/<class name>/*.ppm``; classes are the sorted subdirectory names.

    Images are 8-bit RGB binary PPM files of identical size.  Pixels are
    scaled to [-1, 1].  With ``augment`` a 4-pixel zero-padded random crop and
    a horizontal flip (p = 0.5) are applied, drawn from
    ``(seed, epoch, index)`` so results stay reproducible.
    """

    def __init__(self, root: str, augment: bool = False, seed: int = 0):
        self.root = root
        self.augment = augment
        self.seed = seed
        self.epoch = 0
        self.class_names = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
        if not self.class_names:
            raise ConfigError(f"{root}: no class subdirectories")
        self.items = []
        for label, name in enumerate(self.class_names):
            folder = os.path.join(root, name)
            for fn in sorted(os.listdir(folder)):
                if fn.lower().endswith(".ppm"):
                    self.items.append((os.path.join(folder, fn), label))
        self.classes = len(self.class_names)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int) -> tuple[np.ndarray, int]:
        path, label = self.items[index]
        img = read_ppm(path).astype(np.float32).transpose(2, 0, 1) / 127.5 - 1.0
        if self.augment:
            rng = np.random.default_rng([self.seed, self.epoch, index])
            _, h, w = img.shape
            padded = np.pad(img, ((0, 0), (4, 4), (4, 4)))
            dy, dx = rng.integers(0, 9, size=2)
            img = padded[:, dy:dy + h, dx:dx + w]
            if rng.random() < 0.5:
                img = img[:, :, ::-1]
            img = np.ascontiguousarray(img)
        return img, label

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        items = [self[int(i)] for i in indices]
        return np.stack([x for x, _ in items]), np.array([y for _, y in items], dtype=np.int64)
