"""Stimulus families: pointwise, oriented bars, clock digits, MNIST images.

Every bipolar pair in every family puts the positive pole at a pattern site
and the negative pole at the electrode immediately to its right. This keeps
all four bar orientations sharing the exact same center pair, and it matches
the image mapping where each firing pixel activates (pixel, pixel+right).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .grid import (
    BipolarPair,
    BoundsError,
    ElectrodeCoord,
    StimPattern,
    Waveform,
    validate_pattern,
)
from .seeds import substream

# Positive poles of consecutive bar pairs step along the orientation's unit
# direction; rows grow downward, so 45 degrees points up-right.
_BAR_DIRECTIONS = {0: (0, 1), 45: (-1, 1), 90: (1, 0), 135: (1, 1)}

# Segments lit per digit, standard seven-segment encoding.
SEGMENTS_BY_DIGIT = {
    0: "abcdef",
    1: "bc",
    2: "abdeg",
    3: "abcdg",
    4: "bcfg",
    5: "acdfg",
    6: "acdefg",
    7: "abc",
    8: "abcdefg",
    9: "abcdfg",
}


def _pair_at(site: ElectrodeCoord) -> BipolarPair:
    """Positive pole at `site`, negative at its right neighbor."""
    return BipolarPair(site, site.shifted(0, 1))


def _check_pattern(p: StimPattern, what: str) -> StimPattern:
    problems = validate_pattern(p)
    if any("out of bounds" in msg for msg in problems):
        raise BoundsError(f"{what}: " + "; ".join(m for m in problems if "out of bounds" in m))
    if problems:
        raise ValueError(f"{what}: " + "; ".join(problems))
    return p


def make_pointwise(center: ElectrodeCoord, wf: Waveform, label=None) -> StimPattern:
    """Single bipolar pair: positive at `center`, negative at its right neighbor."""
    p = StimPattern(label=label if label is not None else f"point@{center.row},{center.col}",
                    pairs=(_pair_at(center),), waveform=wf)
    return _check_pattern(p, "pointwise pattern")


def make_bar(orientation_deg: int, center: ElectrodeCoord, wf: Waveform,
             n_pairs: int = 5, dilation: int = 1, label=None) -> StimPattern:
    """Bar of `n_pairs` pairs whose positive poles lie along the orientation,
    with `dilation` skipped electrodes between consecutive poles.

    The middle pair sits exactly at `center`, so bars of all four orientations
    around a common center share their center pair.
    """
    if orientation_deg not in _BAR_DIRECTIONS:
        raise ValueError(f"orientation must be one of {sorted(_BAR_DIRECTIONS)}, "
                         f"got {orientation_deg}")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if dilation < 0:
        raise ValueError("dilation must be >= 0")
    dr, dc = _BAR_DIRECTIONS[orientation_deg]
    step = 1 + dilation
    mid = (n_pairs - 1) / 2.0
    sites = [
        center.shifted(round((k - mid) * step * dr), round((k - mid) * step * dc))
        for k in range(n_pairs)
    ]
    p = StimPattern(label=label if label is not None else f"bar{orientation_deg}",
                    pairs=tuple(_pair_at(s) for s in sites), waveform=wf)
    return _check_pattern(p, f"{orientation_deg} degree bar")


@dataclass(frozen=True)
class ClockGeometry:
    """Seven-segment layout: pair lists for segments a..g on the grid."""

    origin: ElectrodeCoord
    segment_length: int
    segments: dict[str, tuple[BipolarPair, ...]]

    @staticmethod
    def default(origin: ElectrodeCoord, segment_length: int = 3) -> "ClockGeometry":
        """Digit footprint (2L+3) rows x (2L+3) cols for segment_length L.

        Horizontal segments tile L pairs across the top, middle and bottom
        rows; vertical segments stack L pairs on the left and right edges.
        """
        L = segment_length
        if L < 1:
            raise ValueError("segment_length must be >= 1")
        r0, c0 = origin.row, origin.col
        right = c0 + 2 * L + 1

        def hseg(row: int) -> tuple[BipolarPair, ...]:
            return tuple(_pair_at(ElectrodeCoord(row, c0 + 1 + 2 * k)) for k in range(L))

        def vseg(col: int, row_start: int) -> tuple[BipolarPair, ...]:
            return tuple(_pair_at(ElectrodeCoord(row_start + k, col)) for k in range(L))

        segments = {
            "a": hseg(r0),
            "b": vseg(right, r0 + 1),
            "c": vseg(right, r0 + L + 2),
            "d": hseg(r0 + 2 * L + 2),
            "e": vseg(c0, r0 + L + 2),
            "f": vseg(c0, r0 + 1),
            "g": hseg(r0 + L + 1),
        }
        return ClockGeometry(origin=origin, segment_length=L, segments=segments)

    def validate(self) -> list[str]:
        problems = []
        missing = set("abcdefg") - set(self.segments)
        if missing:
            problems.append(f"missing segments {sorted(missing)}")
        seen: dict[ElectrodeCoord, str] = {}
        for name, pairs in sorted(self.segments.items()):
            for pair in pairs:
                for e in pair.electrodes():
                    if not e.in_bounds():
                        problems.append(f"segment {name}: electrode ({e.row},{e.col}) out of bounds")
                    if e in seen and seen[e] != name:
                        problems.append(
                            f"electrode ({e.row},{e.col}) shared by segments {seen[e]} and {name}")
                    seen.setdefault(e, name)
        return problems


def make_clock_digit(digit: int, geom: ClockGeometry, wf: Waveform) -> StimPattern:
    """Union of the seven-segment segments lit for `digit`."""
    if digit not in SEGMENTS_BY_DIGIT:
        raise ValueError(f"digit must be in 0..9, got {digit}")
    problems = geom.validate()
    if problems:
        raise ValueError("invalid clock geometry: " + "; ".join(problems))
    pairs: list[BipolarPair] = []
    for seg in SEGMENTS_BY_DIGIT[digit]:
        pairs.extend(geom.segments[seg])
    p = StimPattern(label=digit, pairs=tuple(pairs), waveform=wf)
    return _check_pattern(p, f"clock digit {digit}")


# --- MNIST ingestion ---------------------------------------------------------

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; message names the offending byte offset."""


@dataclass(frozen=True)
class MnistImage:
    pixels: np.ndarray  # (28, 28) uint8
    label: int

    def __post_init__(self):
        if self.pixels.shape != (28, 28):
            raise ValueError(f"expected 28x28 pixels, got {self.pixels.shape}")
        if not 0 <= self.label <= 9:
            raise ValueError(f"label must be in 0..9, got {self.label}")


def _read_exact(f, n: int, what: str):
    data = f.read(n)
    if len(data) != n:
        raise IdxFormatError(
            f"truncated {what}: wanted {n} bytes at offset {f.tell() - len(data)}, got {len(data)}")
    return data


def load_mnist_idx(images_path, labels_path) -> list[MnistImage]:
    """Read big-endian IDX image/label files and pair them in file order."""
    with open(images_path, "rb") as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, "header"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(
                f"bad image magic 0x{magic:08x} at offset 0 (expected 0x{IDX_IMAGE_MAGIC:08x})")
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12, "header"))
        if (rows, cols) != (28, 28):
            raise IdxFormatError(f"unsupported image size {rows}x{cols} at offset 8")
        raw = _read_exact(f, count * rows * cols, "pixel data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    with open(labels_path, "rb") as f:
        magic, = struct.unpack(">I", _read_exact(f, 4, "header"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"bad label magic 0x{magic:08x} at offset 0 (expected 0x{IDX_LABEL_MAGIC:08x})")
        n_labels, = struct.unpack(">I", _read_exact(f, 4, "header"))
        labels = np.frombuffer(_read_exact(f, n_labels, "label data"), dtype=np.uint8)
    if count != n_labels:
        raise IdxFormatError(f"image count {count} != label count {n_labels}")
    return [MnistImage(pixels=images[i], label=int(labels[i])) for i in range(count)]


def downsample_nearest(pixels: np.ndarray, target_res: int) -> np.ndarray:
    """Nearest-neighbor downsample; every output value is some input value."""
    src = pixels.shape[0]
    idx = (np.arange(target_res) * src) // target_res
    return pixels[np.ix_(idx, idx)]


def stim_probability(v) -> np.ndarray:
    """Firing probability of a pixel value: darker fires more, p(0)=1, p(255)=0."""
    return (255.0 - np.asarray(v, dtype=float)) / 255.0


def map_mnist(img: MnistImage, region_origin: ElectrodeCoord, wf: Waveform,
              seed: int, target_res: int = 16) -> StimPattern:
    """Map a grayscale image to a stimulation pattern.

    Downsamples to target_res x target_res, then draws one Bernoulli per pixel
    in row-major order with p = (255 - v)/255. Each firing pixel (r, c) becomes
    a pair with the positive pole at (origin.row + r, origin.col + 2c); the
    horizontal stretch leaves room for the negative pole one column right.
    Deterministic in (img, seed); may return an empty pattern for bright
    images, which validate_pattern flags and callers redraw.
    """
    last = region_origin.shifted(target_res - 1, 2 * (target_res - 1) + 1)
    if not (region_origin.in_bounds() and last.in_bounds()):
        raise BoundsError(
            f"{target_res}x{2 * target_res} image footprint at "
            f"({region_origin.row},{region_origin.col}) leaves the grid")
    small = downsample_nearest(img.pixels, target_res)
    draws = substream(seed).random(target_res * target_res).reshape(target_res, target_res)
    fire = draws < stim_probability(small)
    pairs = tuple(
        _pair_at(region_origin.shifted(int(r), 2 * int(c)))
        for r, c in np.argwhere(fire)
    )
    return StimPattern(label=img.label, pairs=pairs, waveform=wf)


def sample_mnist_subset(images: list[MnistImage], n: int, seed: int,
                        min_per_class: int = 5, max_tries: int = 1000) -> list[MnistImage]:
    """Seeded sample of n images without replacement.

    Redraws from successive substreams until every class present in the pool
    has at least `min_per_class` samples (so k-fold splits stay feasible).
    """
    if n > len(images):
        raise ValueError(f"cannot sample {n} from pool of {len(images)}")
    pool_classes = {im.label for im in images}
    for attempt in range(max_tries):
        rng = substream(seed, "mnist-subset", attempt)
        picks = rng.choice(len(images), size=n, replace=False)
        subset = [images[i] for i in picks]
        counts = {c: 0 for c in pool_classes}
        for im in subset:
            counts[im.label] += 1
        if all(v >= min_per_class for v in counts.values()):
            return subset
    raise ValueError(f"no subset of {n} with >= {min_per_class} per class after {max_tries} draws")
