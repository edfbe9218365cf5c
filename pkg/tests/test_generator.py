"""Generator construction, output contracts, and conditioning isolation."""

import pytest
import torch

from netinvert.conditioning import (ConditioningBatch, one_hot_vectors,
                                    sample_soft_vectors)
from netinvert.data_io import checkpoint_from_model, parameter_checksum
from netinvert.errors import ConfigError
from netinvert.generator import (Generator, GeneratorConfig, build_generator,
                                 generate, generator_from_checkpoint)


def soft_batch(n, seed=0):
    return sample_soft_vectors(n, 10, torch.Generator().manual_seed(seed))


class TestConfig:
    def test_default_valid(self):
        GeneratorConfig().validate()

    def test_wrong_up_block_count_rejected(self):
        with pytest.raises(ConfigError, match="28x28"):
            GeneratorConfig(up_channels=[64, 32]).validate()
        with pytest.raises(ConfigError, match="28x28"):
            GeneratorConfig(up_channels=[128, 64, 32, 16]).validate()

    def test_dropout_and_latent_bounds(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(dropout_rate=1.0).validate()
        with pytest.raises(ConfigError):
            GeneratorConfig(latent_dim=0).validate()

    def test_dict_round_trip(self):
        cfg = GeneratorConfig(latent_dim=32, dropout_rate=0.25, final_dropout=True)
        assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg


class TestForward:
    def test_output_shape_and_range(self):
        model = build_generator(GeneratorConfig(), seed=0)
        imgs = generate(model, torch.randn(4, 64), soft_batch(4), mode="eval")
        assert imgs.shape == (4, 1, 28, 28)
        assert float(imgs.min()) >= 0.0 and float(imgs.max()) <= 1.0

    def test_single_sample(self):
        model = build_generator(GeneratorConfig(), seed=0)
        imgs = generate(model, torch.randn(1, 64), soft_batch(1), mode="eval")
        assert imgs.shape == (1, 1, 28, 28)

    def test_eval_mode_is_deterministic(self):
        model = build_generator(GeneratorConfig(), seed=0)
        latents = torch.zeros(2, 64)
        cond = ConditioningBatch(vectors=torch.full((2, 10), 0.1),
                                 labels=torch.zeros(2, dtype=torch.long),
                                 mode="soft-vector")
        a = generate(model, latents, cond, mode="eval")
        b = generate(model, latents, cond, mode="eval")
        assert torch.equal(a, b)

    def test_identical_rows_give_identical_outputs_in_eval(self):
        model = build_generator(GeneratorConfig(), seed=0)
        latents = torch.randn(1, 64).repeat(2, 1)
        vec = soft_batch(1).vectors.repeat(2, 1)
        cond = ConditioningBatch(vectors=vec, labels=vec.argmax(dim=1),
                                 mode="soft-vector")
        imgs = generate(model, latents, cond, mode="eval")
        assert torch.equal(imgs[0], imgs[1])

    def test_train_mode_dropout_produces_differing_outputs(self):
        model = build_generator(GeneratorConfig(dropout_rate=0.5), seed=0)
        latents = torch.randn(2, 64)
        cond = soft_batch(2)
        torch.manual_seed(100)
        outputs = [generate(model, latents, cond, mode="train").detach()
                   for _ in range(10)]
        diffs = [float((outputs[0] - other).abs().max()) for other in outputs[1:]]
        assert all(d > 0 for d in diffs)

    def test_same_seed_gives_identical_parameters(self):
        a = build_generator(GeneratorConfig(), seed=3)
        b = build_generator(GeneratorConfig(), seed=3)
        assert parameter_checksum(a) == parameter_checksum(b)

    def test_latent_width_mismatch_rejected(self):
        model = build_generator(GeneratorConfig(), seed=0)
        with pytest.raises(ValueError, match="latents"):
            model(torch.randn(2, 32), soft_batch(2))

    def test_conditioning_width_mismatch_rejected(self):
        model = build_generator(GeneratorConfig(n_classes=10), seed=0)
        bad = ConditioningBatch(vectors=torch.full((2, 5), 0.2),
                                labels=torch.zeros(2, dtype=torch.long),
                                mode="soft-vector")
        with pytest.raises(ValueError, match="width"):
            model(torch.randn(2, 64), bad)


class TestConditioningIsolation:
    def test_labels_unreachable_in_vector_modes(self):
        """Poisoning the label field must not change the output at all."""
        model = build_generator(GeneratorConfig(), seed=0)
        latents = torch.randn(4, 64)
        cond = soft_batch(4)
        poisoned = ConditioningBatch(vectors=cond.vectors,
                                     labels=(cond.labels + 5) % 10,
                                     mode=cond.mode)
        a = generate(model, latents, cond, mode="eval")
        b = generate(model, latents, poisoned, mode="eval")
        assert torch.equal(a, b)

    def test_label_embed_mode_reads_labels(self):
        model = build_generator(GeneratorConfig(), seed=0)
        latents = torch.randn(2, 64)
        base = one_hot_vectors([1, 2], 10)
        cond = ConditioningBatch(vectors=base.vectors, labels=base.labels,
                                 mode="label-embed")
        swapped = ConditioningBatch(vectors=base.vectors,
                                    labels=torch.tensor([2, 1]), mode="label-embed")
        a = generate(model, latents, cond, mode="eval")
        b = generate(model, latents, swapped, mode="eval")
        assert not torch.equal(a, b)

    def test_gradients_reach_embedding_only_in_label_mode(self):
        model = build_generator(GeneratorConfig(), seed=0)
        latents = torch.randn(2, 64)
        cond = soft_batch(2)
        model.train()
        model(latents, cond).sum().backward()
        assert model.vector_proj.weight.grad is not None
        assert model.label_embedding.weight.grad is None

        model.zero_grad()
        base = one_hot_vectors([1, 2], 10)
        label_cond = ConditioningBatch(vectors=base.vectors, labels=base.labels,
                                       mode="label-embed")
        model(latents, label_cond).sum().backward()
        assert model.label_embedding.weight.grad is not None
        assert float(model.label_embedding.weight.grad.abs().sum()) > 0


class TestCheckpointing:
    def test_round_trip_preserves_outputs(self):
        model = build_generator(GeneratorConfig(), seed=9)
        ckpt = checkpoint_from_model(model, "generator", model.config.to_dict(), seed=9)
        rebuilt = generator_from_checkpoint(ckpt)
        latents = torch.randn(3, 64, generator=torch.Generator().manual_seed(1))
        cond = soft_batch(3, seed=2)
        a = generate(model, latents, cond, mode="eval")
        b = generate(rebuilt, latents, cond, mode="eval")
        assert torch.equal(a, b)
