"""Synthetic handwritten-digit IDX files for tests.

Real MNIST data cannot ship with the repo, so tests render digit glyphs
(seven-segment skeletons with per-sample jitter, stroke width variation and
blur) into 28x28 grayscale images and write them in the IDX wire format.
Ink is dark (low pixel values) on a white background, matching the
probability mapping p(v) = (255 - v)/255 used by the stimulation encoder.
"""

import struct

import numpy as np
from scipy.ndimage import gaussian_filter

# Seven-segment endpoints on a unit cell: (x0, y0) -> (x1, y1), y grows down.
_SEG_LINES = {
    "a": ((0.0, 0.0), (1.0, 0.0)),
    "b": ((1.0, 0.0), (1.0, 1.0)),
    "c": ((1.0, 1.0), (1.0, 2.0)),
    "d": ((0.0, 2.0), (1.0, 2.0)),
    "e": ((0.0, 1.0), (0.0, 2.0)),
    "f": ((0.0, 0.0), (0.0, 1.0)),
    "g": ((0.0, 1.0), (1.0, 1.0)),
}

_DIGIT_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abdeg", 3: "abcdg", 4: "bcfg",
    5: "acdfg", 6: "acdefg", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One 28x28 uint8 image of `digit`: dark ink (~0) on white (255)."""
    ink = np.zeros((28, 28), dtype=np.float64)
    # jittered glyph frame
    cx = 9.0 + rng.uniform(-1.5, 1.5)
    cy = 5.0 + rng.uniform(-1.0, 1.0)
    w = 9.0 + rng.uniform(-1.5, 2.0)
    h = 8.0 + rng.uniform(-1.0, 1.5)
    shear = rng.uniform(-0.15, 0.25)
    width = rng.uniform(1.0, 1.9)
    for seg in _DIGIT_SEGMENTS[digit]:
        (x0, y0), (x1, y1) = _SEG_LINES[seg]
        jx0, jy0, jx1, jy1 = rng.uniform(-0.06, 0.06, size=4)
        p0 = np.array([cx + (x0 + jx0) * w + shear * (1.0 - y0) * h,
                       cy + (y0 + jy0) * h])
        p1 = np.array([cx + (x1 + jx1) * w + shear * (1.0 - y1) * h,
                       cy + (y1 + jy1) * h])
        n_dots = max(8, int(np.linalg.norm(p1 - p0) * 4))
        for t in np.linspace(0.0, 1.0, n_dots):
            x, y = p0 + t * (p1 - p0)
            xi, yi = int(round(x)), int(round(y))
            r = int(np.ceil(width))
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if dx * dx + dy * dy <= width * width:
                        px, py = xi + dx, yi + dy
                        if 0 <= px < 28 and 0 <= py < 28:
                            ink[py, px] = 1.0
    ink = gaussian_filter(ink, sigma=rng.uniform(0.4, 0.7))
    ink = np.clip(ink / max(ink.max(), 1e-9), 0.0, 1.0)
    img = 255.0 - 255.0 * ink
    noise = rng.normal(0.0, 6.0, size=img.shape)
    return np.clip(img + noise, 0, 255).astype(np.uint8)


def make_digit_images(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """n images with labels cycling 0..9 then shuffled."""
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(10), n // 10 + 1)[:n]
    rng.shuffle(labels)
    images = np.stack([render_digit(int(l), rng) for l in labels])
    return images, labels.astype(np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def write_synthetic_mnist(dir_path, n: int = 240, seed: int = 7) -> tuple[str, str]:
    import os
    images, labels = make_digit_images(n, seed)
    ip = os.path.join(str(dir_path), "synth-images-idx3-ubyte")
    lp = os.path.join(str(dir_path), "synth-labels-idx1-ubyte")
    write_idx_images(ip, images)
    write_idx_labels(lp, labels)
    return ip, lp
