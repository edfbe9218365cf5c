"""Procedural seven-segment digit images, as a stand-in when MNIST is absent.

These are used by the test suite and the offline demo script: ten visually
distinct digit classes at 28x28 in [0, 1], with random shift, brightness and
noise so a classifier has something real to learn. They are not a substitute
for the real dataset in accuracy claims.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .data_io import IMAGES_MAGIC, LABELS_MAGIC, LabeledDataset

# segment -> (row slice, col slice) in a 28x28 canvas
_SEGMENTS = {
    "A": (slice(4, 6), slice(9, 19)),    # top bar
    "G": (slice(13, 15), slice(9, 19)),  # middle bar
    "D": (slice(22, 24), slice(9, 19)),  # bottom bar
    "F": (slice(4, 14), slice(9, 11)),   # top left
    "B": (slice(4, 14), slice(17, 19)),  # top right
    "E": (slice(14, 24), slice(9, 11)),  # bottom left
    "C": (slice(14, 24), slice(17, 19)), # bottom right
}

_DIGIT_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABCDG",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGEDC",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}


def render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered 28x28 seven-segment glyph in [0, 1]."""
    glyph = np.zeros((28, 28), dtype=np.float32)
    for seg in _DIGIT_SEGMENTS[digit]:
        glyph[_SEGMENTS[seg]] = 1.0
    dy, dx = rng.integers(-2, 3, size=2)
    shifted = np.zeros_like(glyph)
    src = glyph[max(0, -dy):28 - max(0, dy), max(0, -dx):28 - max(0, dx)]
    shifted[max(0, dy):max(0, dy) + src.shape[0],
            max(0, dx):max(0, dx) + src.shape[1]] = src
    image = shifted * rng.uniform(0.65, 1.0)
    image += rng.normal(0.0, 0.08, size=image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0, out=image)


def make_synthetic_dataset(n_per_class: int, seed: int = 0) -> LabeledDataset:
    """Balanced, shuffled dataset of jittered seven-segment digits."""
    rng = np.random.default_rng(seed)
    count = 10 * n_per_class
    images = np.zeros((count, 1, 28, 28), dtype=np.float32)
    labels = np.repeat(np.arange(10, dtype=np.int64), n_per_class)
    for i, label in enumerate(labels):
        images[i, 0] = render_digit(int(label), rng)
    order = rng.permutation(count)
    return LabeledDataset(images=images[order], labels=labels[order])


def write_idx(dataset: LabeledDataset, images_path, labels_path) -> None:
    """Write a dataset back out in the binary IDX image/label format."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    count = len(dataset)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, count, 28, 28))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, count))
        fh.write(dataset.labels.astype(np.uint8).tobytes())
