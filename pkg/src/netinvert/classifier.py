"""Convolutional classifier: construction, training, evaluation, feature capture.

The classifier is a stack of conv blocks (3x3 conv, batch norm, leaky ReLU,
2x2 max pool) followed by fully connected layers with leaky ReLU and dropout
between them. Per-layer FC activations are captured through forward hooks so
downstream losses can see the feature vectors of a whole batch at every FC
layer, the logits layer included.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data_io import Checkpoint, LabeledDataset, load_model_state, require_kind
from .errors import ConfigError, DivergenceError


@dataclass
class ClassifierConfig:
    conv_channels: list[int] = field(default_factory=lambda: [32, 64])
    fc_dims: list[int] = field(default_factory=lambda: [128, 10])
    leaky_slope: float = 0.01
    dropout_rate: float = 0.3
    n_classes: int = 10
    penultimate_2d: bool = False

    def validate(self) -> "ClassifierConfig":
        if not self.conv_channels:
            raise ConfigError("conv_channels must be non-empty")
        if not self.fc_dims or self.fc_dims[-1] != self.n_classes:
            raise ConfigError(
                f"fc_dims must end in n_classes={self.n_classes}, got {self.fc_dims}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        size = 28
        for _ in self.conv_channels:
            size //= 2  # each block ends in a 2x2 max pool
            if size < 1:
                raise ConfigError(
                    f"{len(self.conv_channels)} conv blocks collapse the 28x28 input below 1x1"
                )
        if self.penultimate_2d and (len(self.fc_dims) < 2 or self.fc_dims[-2] != 2):
            raise ConfigError(
                f"penultimate_2d requires a 2-unit second-to-last FC layer, got fc_dims={self.fc_dims}"
            )
        return self

    def spatial_size(self) -> int:
        size = 28
        for _ in self.conv_channels:
            size //= 2
        return size

    def to_dict(self) -> dict:
        return {
            "conv_channels": list(self.conv_channels),
            "fc_dims": list(self.fc_dims),
            "leaky_slope": self.leaky_slope,
            "dropout_rate": self.dropout_rate,
            "n_classes": self.n_classes,
            "penultimate_2d": self.penultimate_2d,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClassifierConfig":
        return cls(
            conv_channels=list(data["conv_channels"]),
            fc_dims=list(data["fc_dims"]),
            leaky_slope=float(data["leaky_slope"]),
            dropout_rate=float(data["dropout_rate"]),
            n_classes=int(data["n_classes"]),
            penultimate_2d=bool(data["penultimate_2d"]),
        ).validate()


@dataclass
class PredictionBatch:
    """Logits, softmax probabilities, and argmax labels for one batch."""

    logits: torch.Tensor  # [N, n_classes]
    probs: torch.Tensor   # [N, n_classes], rows sum to 1
    labels: torch.Tensor  # [N], argmax with lowest-index tie-breaking

    @classmethod
    def from_logits(cls, logits: torch.Tensor) -> "PredictionBatch":
        probs = F.softmax(logits, dim=1)
        return cls(logits=logits, probs=probs, labels=probs.argmax(dim=1))


@dataclass
class FeatureSet:
    """One [N, d_k] activation matrix per FC layer, in network order."""

    per_layer: list[torch.Tensor]
    batch_size: int


class ConvClassifier(nn.Module):
    def __init__(self, config: ClassifierConfig):
        super().__init__()
        config.validate()
        self.config = config

        blocks = []
        in_ch = 1
        for out_ch in config.conv_channels:
            blocks += [
                nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=1, padding=1),
                nn.BatchNorm2d(out_ch),
                nn.LeakyReLU(config.leaky_slope),
                nn.MaxPool2d(2),
            ]
            in_ch = out_ch
        self.features = nn.Sequential(*blocks)

        size = config.spatial_size()
        dims = [config.conv_channels[-1] * size * size] + list(config.fc_dims)
        self.fc_layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(len(config.fc_dims))
        )
        # separate activation/dropout instances per hidden layer so hooks can
        # observe each one individually
        n_hidden = len(config.fc_dims) - 1
        self.fc_acts = nn.ModuleList(nn.LeakyReLU(config.leaky_slope) for _ in range(n_hidden))
        self.fc_drops = nn.ModuleList(nn.Dropout(config.dropout_rate) for _ in range(n_hidden))

    def _check_images(self, images: torch.Tensor) -> None:
        if images.dim() != 4 or images.shape[1] != 1 or images.shape[2:] != (28, 28):
            raise ValueError(
                f"expected images of shape [N, 1, 28, 28], got {tuple(images.shape)}"
            )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        self._check_images(images)
        x = self.features(images)
        x = x.flatten(1)
        for i in range(len(self.fc_layers) - 1):
            x = self.fc_drops[i](self.fc_acts[i](self.fc_layers[i](x)))
        return self.fc_layers[-1](x)

    def forward_with_features(self, images: torch.Tensor):
        """Forward pass that also captures every FC layer's output via hooks.

        Hidden layers are observed after their activation (before dropout);
        the final layer is observed as raw logits. Captured tensors stay in
        the autograd graph so losses over them backpropagate into the input.
        """
        captured: list[torch.Tensor] = []

        def record(_module, _inputs, output):
            captured.append(output)

        hooked = list(self.fc_acts) + [self.fc_layers[-1]]
        handles = [m.register_forward_hook(record) for m in hooked]
        try:
            logits = self(images)
        finally:
            for handle in handles:
                handle.remove()
        preds = PredictionBatch.from_logits(logits)
        return preds, FeatureSet(per_layer=captured, batch_size=images.shape[0])


def forward_with_features(model, images: torch.Tensor):
    """Module-level alias; dispatches to the model's own implementation."""
    return model.forward_with_features(images)


def build_classifier(config: ClassifierConfig, seed: int) -> ConvClassifier:
    """Construct a classifier with parameters initialized deterministically from seed."""
    config.validate()
    torch.manual_seed(seed)
    return ConvClassifier(config)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_accuracy: float


def evaluate(model: nn.Module, dataset: LabeledDataset, batch_size: int = 512) -> float:
    """Fraction of dataset items whose argmax prediction matches the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    was_training = model.training
    model.eval()
    images = torch.from_numpy(dataset.images)
    labels = torch.from_numpy(dataset.labels)
    correct = 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            batch = images[start:start + batch_size]
            preds = model(batch).argmax(dim=1)
            correct += int((preds == labels[start:start + batch_size]).sum())
    if was_training:
        model.train()
    return correct / len(dataset)


def train_classifier(
    model: ConvClassifier,
    train: LabeledDataset,
    test: LabeledDataset,
    epochs: int,
    batch_size: int = 128,
    lr: float = 1e-3,
    seed: int = 0,
    verbose: bool = True,
) -> tuple[ConvClassifier, list[EpochStats]]:
    """Minimize cross-entropy over shuffled mini-batches; record test accuracy per epoch.

    Deterministic for a fixed seed in single-threaded execution: the shuffle
    order and dropout masks both derive from the seed.
    """
    torch.manual_seed(seed)
    shuffler = torch.Generator().manual_seed(seed)
    images = torch.from_numpy(train.images)
    labels = torch.from_numpy(train.labels)
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    history: list[EpochStats] = []
    for epoch in range(1, epochs + 1):
        model.train()
        perm = torch.randperm(len(train), generator=shuffler)
        total_loss = 0.0
        n_batches = 0
        for b, start in enumerate(range(0, len(train), batch_size)):
            idx = perm[start:start + batch_size]
            logits = model(images[idx])
            loss = F.cross_entropy(logits, labels[idx])
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, batch {b}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach())
            n_batches += 1
        accuracy = evaluate(model, test)
        history.append(EpochStats(epoch, total_loss / max(n_batches, 1), accuracy))
        if verbose:
            print(f"epoch {epoch}: train_loss={history[-1].train_loss:.4f} "
                  f"test_accuracy={accuracy:.4f}")
    model.eval()
    return model, history


def classifier_from_checkpoint(ckpt: Checkpoint) -> ConvClassifier:
    """Rebuild a classifier from a checkpoint; returned model is in eval mode."""
    require_kind(ckpt, "classifier")
    model = ConvClassifier(ClassifierConfig.from_dict(ckpt.config))
    load_model_state(model, ckpt)
    model.eval()
    return model
