"""Conditioning signals for the generator.

Three mechanisms are supported: a learned embedding of the integer label
(baseline), one-hot vectors, and soft vectors drawn from a standard normal
and pushed through a softmax. In the vector modes the class identity is
carried only implicitly, as the argmax of the vector; that argmax acts as
the de-facto label for the losses and is never handed to the generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

SOFT_VECTOR = "soft-vector"
ONE_HOT = "one-hot"
LABEL_EMBED = "label-embed"
CONDITIONING_MODES = (SOFT_VECTOR, ONE_HOT, LABEL_EMBED)

# short spellings accepted on the command line
_MODE_ALIASES = {
    "soft": SOFT_VECTOR,
    "onehot": ONE_HOT,
    "label": LABEL_EMBED,
}


def canonical_mode(mode: str) -> str:
    if mode in CONDITIONING_MODES:
        return mode
    if mode in _MODE_ALIASES:
        return _MODE_ALIASES[mode]
    raise ValueError(f"unknown conditioning mode {mode!r}; expected one of "
                     f"{CONDITIONING_MODES} or {tuple(_MODE_ALIASES)}")


@dataclass
class ConditioningBatch:
    """Simplex conditioning vectors plus their argmax de-facto labels.

    The generator consumes only `vectors` (or, in label-embed mode, the raw
    labels through its embedding table); `labels` exists for the losses.
    """

    vectors: torch.Tensor  # [N, n] rows on the probability simplex
    labels: torch.Tensor   # [N] argmax of each row
    mode: str

    def __post_init__(self) -> None:
        if self.mode not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.mode!r}")
        if self.vectors.dim() != 2 or self.labels.dim() != 1:
            raise ValueError("vectors must be [N, n] and labels [N]")
        if self.vectors.shape[0] != self.labels.shape[0]:
            raise ValueError("vectors and labels disagree on batch size")

    def validate(self, atol: float = 1e-6) -> "ConditioningBatch":
        sums = self.vectors.sum(dim=1)
        if not torch.allclose(sums, torch.ones_like(sums), atol=atol):
            raise ValueError("conditioning rows do not sum to 1")
        if self.mode == SOFT_VECTOR:
            if not torch.all(self.vectors > 0):
                raise ValueError("soft conditioning rows must be strictly positive")
        else:
            binary = (self.vectors == 0) | (self.vectors == 1)
            if not torch.all(binary):
                raise ValueError("one-hot conditioning rows must contain only 0 and 1")
        if not torch.equal(self.vectors.argmax(dim=1), self.labels):
            raise ValueError("labels are not the argmax of their conditioning rows")
        return self


def soft_vectors_from_normals(z: torch.Tensor, temperature: float = 1.0) -> ConditioningBatch:
    """Softmax a batch of normal draws into simplex conditioning vectors."""
    if z.dim() != 2 or z.shape[1] < 2:
        raise ValueError(f"expected [N, n>=2] normal draws, got {tuple(z.shape)}")
    vectors = F.softmax(z / temperature, dim=1)
    return ConditioningBatch(vectors=vectors, labels=vectors.argmax(dim=1), mode=SOFT_VECTOR)


def sample_soft_vectors(
    batch_size: int,
    n_classes: int,
    generator: torch.Generator | None = None,
    temperature: float = 1.0,
) -> ConditioningBatch:
    """Draw iid standard-normal vectors and softmax them onto the simplex."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    z = torch.randn(batch_size, n_classes, generator=generator)
    return soft_vectors_from_normals(z, temperature)


def _check_labels(labels: torch.Tensor, n_classes: int) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.dim() != 1:
        raise ValueError("labels must be a 1-D integer array")
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    return labels


def one_hot_vectors(labels, n_classes: int) -> ConditioningBatch:
    """Vertex-of-the-simplex conditioning: 1 at the label, 0 elsewhere."""
    labels = _check_labels(labels, n_classes)
    vectors = F.one_hot(labels, n_classes).float()
    return ConditioningBatch(vectors=vectors, labels=labels, mode=ONE_HOT)


def conditioning_for_labels(labels, n_classes: int, mode: str) -> ConditioningBatch:
    """One-hot conditioning tagged with the requested mode (one-hot or label-embed)."""
    mode = canonical_mode(mode)
    if mode == SOFT_VECTOR:
        raise ValueError("soft-vector conditioning is sampled, not built from labels; "
                         "use sample_class_conditioning")
    batch = one_hot_vectors(labels, n_classes)
    return ConditioningBatch(vectors=batch.vectors, labels=batch.labels, mode=mode)


def sample_conditioning(
    mode: str,
    batch_size: int,
    n_classes: int,
    generator: torch.Generator | None = None,
    temperature: float = 1.0,
) -> ConditioningBatch:
    """Draw one training batch of conditioning under the given mode."""
    mode = canonical_mode(mode)
    if mode == SOFT_VECTOR:
        return sample_soft_vectors(batch_size, n_classes, generator, temperature)
    labels = torch.randint(0, n_classes, (batch_size,), generator=generator)
    return conditioning_for_labels(labels, n_classes, mode)


def sample_class_conditioning(
    target_class: int,
    count: int,
    mode: str,
    n_classes: int,
    generator: torch.Generator | None = None,
    temperature: float = 1.0,
    max_draws: int | None = None,
) -> ConditioningBatch:
    """Conditioning for a single class.

    In soft-vector mode this rejection-samples softmaxed normals until
    `count` rows with the requested argmax are collected.
    """
    mode = canonical_mode(mode)
    if not 0 <= target_class < n_classes:
        raise ValueError(f"target_class {target_class} outside [0, {n_classes})")
    if mode != SOFT_VECTOR:
        labels = torch.full((count,), target_class, dtype=torch.long)
        return conditioning_for_labels(labels, n_classes, mode)

    if max_draws is None:
        max_draws = max(10_000, 100 * n_classes * count)
    kept = []
    total = 0
    drawn = 0
    chunk = max(64, count * n_classes)
    while total < count:
        if drawn >= max_draws:
            raise RuntimeError(
                f"could not sample {count} soft vectors with argmax {target_class} "
                f"within {max_draws} draws"
            )
        batch = sample_soft_vectors(chunk, n_classes, generator, temperature)
        drawn += chunk
        hits = batch.vectors[batch.labels == target_class]
        if hits.numel():
            kept.append(hits)
            total += hits.shape[0]
    vectors = torch.cat(kept)[:count]
    labels = torch.full((count,), target_class, dtype=torch.long)
    return ConditioningBatch(vectors=vectors, labels=labels, mode=SOFT_VECTOR)


def embed_labels(labels, table: torch.Tensor) -> torch.Tensor:
    """Row lookup into a trainable embedding table; gradients reach only the used rows."""
    if table.dim() != 2:
        raise ValueError("embedding table must be [n_classes, dim]")
    labels = _check_labels(labels, table.shape[0])
    return table[labels]


def project_conditioning(vectors: torch.Tensor, projection: nn.Linear) -> torch.Tensor:
    """Affine map from conditioning width to the generator's hidden width."""
    if vectors.dim() != 2 or vectors.shape[1] != projection.in_features:
        raise ValueError(
            f"conditioning width {tuple(vectors.shape)} does not match projection "
            f"input width {projection.in_features}"
        )
    return projection(vectors)
