"""Inversion losses and the generator training loop against a frozen classifier.

The combined objective is alpha * KL(P || Q) + beta * CE + gamma * Cosine:
KL pulls the classifier's output distribution for a generated image toward
the conditioning vector that produced it, cross entropy enforces the
de-facto label, and the batchwise cosine term pushes same-batch feature
vectors apart at every FC layer to keep the generated set diverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .classifier import FeatureSet, forward_with_features
from .conditioning import canonical_mode, sample_conditioning
from .data_io import parameter_checksum, write_csv
from .errors import ConfigError, DivergenceError, FrozenParameterError
from .generator import generate


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


def kl_loss(p: torch.Tensor, q: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Mean over the batch of sum_j p_j * log(p_j / q_j), with q clamped at eps.

    Zero entries of p contribute exactly 0.
    """
    if p.shape != q.shape or p.dim() != 2:
        raise ValueError(f"p and q must share a [N, n] shape, got {tuple(p.shape)} "
                         f"and {tuple(q.shape)}")
    if not (torch.isfinite(p).all() and torch.isfinite(q).all()):
        raise ValueError("kl_loss requires finite inputs")
    q = q.clamp(min=eps)
    per_row = (torch.xlogy(p, p) - torch.xlogy(p, q)).sum(dim=1)
    return per_row.mean()


def ce_loss(labels: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.dim() != 2 or labels.dim() != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError("expected logits [N, n] and labels [N]")
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    return F.cross_entropy(logits, labels)


def cosine_diversity_loss(
    features,
    pair_labels: torch.Tensor | None = None,
    min_norm: float = 1e-12,
) -> torch.Tensor:
    """Mean pairwise cosine similarity within the batch, averaged across layers.

    For each layer the mean runs over all ordered pairs i != j; rows with norm
    below min_norm contribute zero similarity. When pair_labels is given the
    pairs are restricted to rows sharing a label (layers with no such pair
    contribute 0).
    """
    layers = features.per_layer if isinstance(features, FeatureSet) else list(features)
    if not layers:
        raise ValueError("cosine_diversity_loss needs at least one feature matrix")
    n = layers[0].shape[0]
    if n < 2:
        raise ValueError(f"cosine_diversity_loss needs a batch of >= 2, got {n}")

    if pair_labels is not None:
        pair_mask = pair_labels.view(-1, 1) == pair_labels.view(1, -1)
        pair_mask = pair_mask & ~torch.eye(n, dtype=torch.bool)
        n_pairs = int(pair_mask.sum())
    else:
        pair_mask = None
        n_pairs = n * (n - 1)

    total = layers[0].new_zeros(())
    for x in layers:
        if x.shape[0] != n:
            raise ValueError("feature matrices disagree on batch size")
        norms = x.norm(dim=1, keepdim=True)
        unit = torch.where(norms >= min_norm, x / norms.clamp(min=min_norm),
                           torch.zeros_like(x))
        cos = unit @ unit.T
        if pair_mask is None:
            layer_mean = (cos.sum() - cos.diagonal().sum()) / n_pairs
        elif n_pairs:
            layer_mean = (cos * pair_mask).sum() / n_pairs
        else:
            layer_mean = cos.new_zeros(())
        total = total + layer_mean
    return total / len(layers)


def combined_loss(
    weights: LossWeights,
    p: torch.Tensor,
    q: torch.Tensor,
    labels: torch.Tensor,
    logits: torch.Tensor,
    features,
    pair_labels: torch.Tensor | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the three losses; components are reported unweighted."""
    kl = kl_loss(p, q)
    ce = ce_loss(labels, logits)
    cos = cosine_diversity_loss(features, pair_labels=pair_labels)
    total = weights.alpha * kl + weights.beta * ce + weights.gamma * cos
    components = {"kl": float(kl.detach()), "ce": float(ce.detach()),
                  "cosine": float(cos.detach())}
    return total, components


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    kl: float
    ce: float
    cosine: float
    inversion_accuracy: float
    per_class_accuracy: list[float]


@dataclass
class InversionMetrics:
    n_classes: int
    epochs: list[EpochMetrics] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        if not self.epochs:
            raise ValueError("no epochs recorded")
        return self.epochs[-1].inversion_accuracy

    def to_csv(self, path):
        header = ["epoch", "loss", "kl", "ce", "cosine", "inversion_accuracy"]
        header += [f"acc_class_{c}" for c in range(self.n_classes)]
        rows = [
            [m.epoch, m.loss, m.kl, m.ce, m.cosine, m.inversion_accuracy,
             *m.per_class_accuracy]
            for m in self.epochs
        ]
        return write_csv(path, header, rows)


def inversion_accuracy(
    generator,
    classifier,
    n_samples: int,
    mode: str,
    seed: int,
    batch_size: int = 256,
    temperature: float = 1.0,
    per_class: bool = False,
):
    """Fraction of generated images the classifier assigns to their de-facto label.

    Both models are put in eval mode; sampling is deterministic for a fixed
    seed. With per_class=True also returns one accuracy per class (nan for
    classes that received no samples).
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    mode = canonical_mode(mode)
    n_classes = generator.config.n_classes
    sampler = torch.Generator().manual_seed(seed)
    classifier.eval()
    correct = torch.zeros(n_classes, dtype=torch.long)
    total = torch.zeros(n_classes, dtype=torch.long)
    remaining = n_samples
    while remaining > 0:
        n = min(batch_size, remaining)
        cond = sample_conditioning(mode, n, n_classes, sampler, temperature)
        latents = torch.randn(n, generator.config.latent_dim, generator=sampler)
        images = generate(generator, latents, cond, mode="eval")
        with torch.no_grad():
            preds = classifier(images).argmax(dim=1)
        hit = preds == cond.labels
        correct += torch.bincount(cond.labels[hit], minlength=n_classes)
        total += torch.bincount(cond.labels, minlength=n_classes)
        remaining -= n
    overall = float(correct.sum()) / float(total.sum())
    if not per_class:
        return overall
    by_class = [
        float(correct[c]) / float(total[c]) if total[c] else float("nan")
        for c in range(n_classes)
    ]
    return overall, by_class


def train_generator(
    classifier,
    generator,
    mode: str,
    weights: LossWeights,
    epochs: int,
    batches_per_epoch: int = 200,
    batch_size: int = 64,
    lr: float = 2e-4,
    seed: int = 0,
    eval_samples: int = 1000,
    temperature: float = 1.0,
    cosine_include_logits: bool = True,
    cosine_per_class: bool = False,
    verbose: bool = True,
):
    """Train the generator against the frozen classifier with the combined loss.

    Each step samples conditioning and latents, generates a batch (generator
    in train mode, dropout active), runs the eval-mode classifier with feature
    capture, and takes one optimizer step on the generator's parameters only.
    The classifier's parameter checksum is verified unchanged at exit.
    """
    mode = canonical_mode(mode)
    if batch_size < 2:
        raise ValueError(f"batch_size must be >= 2 for the cosine loss, got {batch_size}")
    n_classes = generator.config.n_classes
    clf_config = getattr(classifier, "config", None)
    if clf_config is not None and clf_config.n_classes != n_classes:
        raise ConfigError(
            f"classifier has {clf_config.n_classes} classes but generator expects {n_classes}"
        )
    if not cosine_include_logits and clf_config is not None and len(clf_config.fc_dims) < 2:
        raise ConfigError("cosine_include_logits=False requires at least one hidden FC layer")

    classifier.eval()
    grad_flags = [p.requires_grad for p in classifier.parameters()]
    for p in classifier.parameters():
        p.requires_grad_(False)
    checksum_before = parameter_checksum(classifier)

    torch.manual_seed(seed)  # drives the generator's dropout masks
    sampler = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.Adam(generator.parameters(), lr=lr)
    metrics = InversionMetrics(n_classes=n_classes)

    try:
        for epoch in range(1, epochs + 1):
            sums = {"loss": 0.0, "kl": 0.0, "ce": 0.0, "cosine": 0.0}
            generator.train()
            for b in range(batches_per_epoch):
                cond = sample_conditioning(mode, batch_size, n_classes, sampler, temperature)
                latents = torch.randn(batch_size, generator.config.latent_dim,
                                      generator=sampler)
                images = generator(latents, cond)
                preds, feats = forward_with_features(classifier, images)
                layers = feats.per_layer if cosine_include_logits else feats.per_layer[:-1]
                total, comps = combined_loss(
                    weights, cond.vectors, preds.probs, cond.labels, preds.logits,
                    FeatureSet(per_layer=layers, batch_size=batch_size),
                    pair_labels=cond.labels if cosine_per_class else None,
                )
                if not torch.isfinite(total):
                    raise DivergenceError(
                        f"non-finite inversion loss at epoch {epoch}, batch {b}"
                    )
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                sums["loss"] += float(total.detach())
                for key in ("kl", "ce", "cosine"):
                    sums[key] += comps[key]

            eval_seed = seed * 1_000_003 + epoch
            accuracy, by_class = inversion_accuracy(
                generator, classifier, eval_samples, mode, eval_seed,
                temperature=temperature, per_class=True,
            )
            denom = max(batches_per_epoch, 1)
            metrics.epochs.append(EpochMetrics(
                epoch=epoch,
                loss=sums["loss"] / denom,
                kl=sums["kl"] / denom,
                ce=sums["ce"] / denom,
                cosine=sums["cosine"] / denom,
                inversion_accuracy=accuracy,
                per_class_accuracy=by_class,
            ))
            if verbose:
                m = metrics.epochs[-1]
                print(f"epoch {epoch}: loss={m.loss:.4f} kl={m.kl:.4f} ce={m.ce:.4f} "
                      f"cosine={m.cosine:.4f} inversion_accuracy={m.inversion_accuracy:.4f}")

        checksum_after = parameter_checksum(classifier)
        if checksum_after != checksum_before:
            raise FrozenParameterError(
                "classifier parameters changed during generator training "
                f"({checksum_before[:12]} -> {checksum_after[:12]})"
            )
    finally:
        for p, flag in zip(classifier.parameters(), grad_flags):
            p.requires_grad_(flag)
    generator.eval()
    return generator, metrics
