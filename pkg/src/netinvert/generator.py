"""Conditioned image generator built from transposed-convolution blocks.

A latent vector and the projected conditioning vector are concatenated into a
seed that the first transposed convolution expands to a 7x7 feature map; two
stride-2 blocks then double it to 28x28. Every up block ends in batch norm,
leaky ReLU and dropout; the output head squashes into [0, 1] with a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .conditioning import LABEL_EMBED, ConditioningBatch, embed_labels, project_conditioning
from .data_io import Checkpoint, load_model_state, require_kind
from .errors import ConfigError


@dataclass
class GeneratorConfig:
    latent_dim: int = 64
    n_classes: int = 10
    up_channels: list[int] = field(default_factory=lambda: [128, 64, 32])
    dropout_rate: float = 0.5
    final_dropout: bool = False  # extra dropout after the output head; off by default

    def validate(self) -> "GeneratorConfig":
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not self.up_channels:
            raise ConfigError("up_channels must be non-empty")
        size = 7 * 2 ** (len(self.up_channels) - 1)
        if size != 28:
            raise ConfigError(
                f"up_channels of length {len(self.up_channels)} ends at {size}x{size}; "
                "the 7x7 seed map must reach exactly 28x28 (3 entries)"
            )
        return self

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "n_classes": self.n_classes,
            "up_channels": list(self.up_channels),
            "dropout_rate": self.dropout_rate,
            "final_dropout": self.final_dropout,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        return cls(
            latent_dim=int(data["latent_dim"]),
            n_classes=int(data["n_classes"]),
            up_channels=list(data["up_channels"]),
            dropout_rate=float(data["dropout_rate"]),
            final_dropout=bool(data["final_dropout"]),
        ).validate()


class Generator(nn.Module):
    """Maps (latent, conditioning) to a [0, 1] grayscale 28x28 image.

    Both conditioning paths are always present: a linear projection for
    vector conditioning and an embedding table for the label baseline. The
    batch's mode selects the path, so in the vector modes the integer labels
    are structurally unreachable from the forward pass.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config

        self.vector_proj = nn.Linear(config.n_classes, config.latent_dim)
        self.label_embedding = nn.Embedding(config.n_classes, config.latent_dim)

        ch = config.up_channels
        layers: list[nn.Module] = [
            # 1x1 seed -> 7x7
            nn.ConvTranspose2d(2 * config.latent_dim, ch[0], kernel_size=7),
            nn.BatchNorm2d(ch[0]),
            nn.LeakyReLU(),
            nn.Dropout(config.dropout_rate),
        ]
        for c_in, c_out in zip(ch[:-1], ch[1:]):
            layers += [
                nn.ConvTranspose2d(c_in, c_out, kernel_size=4, stride=2, padding=1),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(),
                nn.Dropout(config.dropout_rate),
            ]
        layers += [
            nn.ConvTranspose2d(ch[-1], 1, kernel_size=3, stride=1, padding=1),
            nn.Sigmoid(),
        ]
        if config.final_dropout:
            layers.append(nn.Dropout(config.dropout_rate))
        self.net = nn.Sequential(*layers)

    def forward(self, latents: torch.Tensor, conditioning: ConditioningBatch) -> torch.Tensor:
        if latents.dim() != 2 or latents.shape[1] != self.config.latent_dim:
            raise ValueError(
                f"expected latents of shape [N, {self.config.latent_dim}], "
                f"got {tuple(latents.shape)}"
            )
        if latents.shape[0] != conditioning.vectors.shape[0]:
            raise ValueError("latents and conditioning disagree on batch size")
        if conditioning.mode == LABEL_EMBED:
            cond = embed_labels(conditioning.labels, self.label_embedding.weight)
        else:
            cond = project_conditioning(conditioning.vectors, self.vector_proj)
        seed = torch.cat([latents, cond], dim=1)
        seed = seed.view(seed.shape[0], 2 * self.config.latent_dim, 1, 1)
        return self.net(seed)


def build_generator(config: GeneratorConfig, seed: int) -> Generator:
    """Construct a generator with parameters initialized deterministically from seed."""
    config.validate()
    torch.manual_seed(seed)
    return Generator(config)


def generate(
    model: Generator,
    latents: torch.Tensor,
    conditioning: ConditioningBatch,
    mode: str = "eval",
) -> torch.Tensor:
    """Run the generator in train mode (dropout active, with gradients) or eval mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train":
        model.train()
        return model(latents, conditioning)
    model.eval()
    with torch.no_grad():
        return model(latents, conditioning)


def generator_from_checkpoint(ckpt: Checkpoint) -> Generator:
    """Rebuild a generator from a checkpoint; returned model is in eval mode."""
    require_kind(ckpt, "generator")
    model = Generator(GeneratorConfig.from_dict(ckpt.config))
    load_model_state(model, ckpt)
    model.eval()
    return model
