"""Generator training loop: stub-level contracts, determinism, frozen classifier."""

import math

import pytest
import torch
import torch.nn as nn

from netinvert.classifier import ClassifierConfig, FeatureSet, PredictionBatch, \
    build_classifier
from netinvert.data_io import parameter_checksum
from netinvert.errors import DivergenceError, FrozenParameterError
from netinvert.generator import GeneratorConfig, build_generator
from netinvert.inversion import LossWeights, inversion_accuracy, train_generator


class StubGenerator(nn.Module):
    """Writes the conditioning vector into the first pixels of each image."""

    def __init__(self, n_classes=10, latent_dim=8):
        super().__init__()
        self.config = GeneratorConfig(latent_dim=latent_dim, n_classes=n_classes)
        self.dummy = nn.Parameter(torch.zeros(1))

    def forward(self, latents, conditioning):
        n = latents.shape[0]
        images = latents.new_zeros(n, 1, 28, 28)
        images[:, 0, 0, : self.config.n_classes] = conditioning.vectors
        return images + 0.0 * self.dummy  # keep the graph attached to a parameter


class EchoClassifier(nn.Module):
    """Reads the smuggled conditioning vector back out of the image."""

    def __init__(self, n_classes=10):
        super().__init__()
        self.n_classes = n_classes
        self.scale = nn.Parameter(torch.ones(1))

    def forward(self, images):
        p = images[:, 0, 0, : self.n_classes].clamp(min=1e-8)
        return torch.log(p) * self.scale

    def forward_with_features(self, images):
        logits = self(images)
        preds = PredictionBatch.from_logits(logits)
        feats = FeatureSet(per_layer=[images.flatten(1)], batch_size=images.shape[0])
        return preds, feats


class FixedClassClassifier(nn.Module):
    def __init__(self, target=3, n_classes=10):
        super().__init__()
        self.target = target
        self.n_classes = n_classes
        self.scale = nn.Parameter(torch.ones(1))

    def forward(self, images):
        logits = images.new_zeros(images.shape[0], self.n_classes)
        logits[:, self.target] = 10.0
        return logits * self.scale


class DivergingClassifier(EchoClassifier):
    """Finite but extreme logits: -inf log-probabilities blow up the CE term."""

    def forward(self, images):
        logits = images.new_full((images.shape[0], self.n_classes), -3.0e38)
        logits[:, 0] = 3.0e38
        return logits * self.scale


class ParameterMutatingClassifier(EchoClassifier):
    """Violates the frozen contract by shifting its own parameter every call."""

    def forward_with_features(self, images):
        with torch.no_grad():
            self.scale += 0.001
        return super().forward_with_features(images)


class TestStubRuns:
    def test_kl_only_loss_is_zero_when_classifier_echoes_conditioning(self):
        """One step where Q == P exactly: the combined (1,0,0) loss vanishes."""
        generator = StubGenerator()
        classifier = EchoClassifier()
        generator, metrics = train_generator(
            classifier, generator, "soft-vector", LossWeights(1, 0, 0),
            epochs=1, batches_per_epoch=1, batch_size=8, seed=0,
            eval_samples=16, verbose=False,
        )
        assert abs(metrics.epochs[0].loss) < 1e-6
        assert abs(metrics.epochs[0].kl) < 1e-6
        assert metrics.epochs[0].ce > 0  # components still reported

    def test_echo_classifier_gives_perfect_inversion_accuracy(self):
        acc = inversion_accuracy(StubGenerator(), EchoClassifier(),
                                 n_samples=500, mode="soft-vector", seed=1)
        assert acc == 1.0

    def test_fixed_class_classifier_gives_chance_accuracy(self):
        acc = inversion_accuracy(StubGenerator(), FixedClassClassifier(target=3),
                                 n_samples=10_000, mode="soft-vector", seed=2)
        assert acc == pytest.approx(0.1, abs=0.02)

    def test_per_class_accuracies_isolate_the_fixed_class(self):
        overall, by_class = inversion_accuracy(
            StubGenerator(), FixedClassClassifier(target=3),
            n_samples=5000, mode="soft-vector", seed=3, per_class=True)
        assert by_class[3] == 1.0
        assert all(a == 0.0 for c, a in enumerate(by_class) if c != 3)

    def test_non_finite_loss_raises_divergence_error(self):
        with pytest.raises(DivergenceError, match="epoch 1, batch 0"):
            train_generator(DivergingClassifier(), StubGenerator(), "soft-vector",
                            LossWeights(1, 1, 1), epochs=1, batches_per_epoch=1,
                            batch_size=16, seed=0, eval_samples=8, verbose=False)

    def test_mutating_classifier_trips_the_frozen_contract(self):
        with pytest.raises(FrozenParameterError):
            train_generator(ParameterMutatingClassifier(), StubGenerator(),
                            "soft-vector", LossWeights(1, 0, 0), epochs=1,
                            batches_per_epoch=2, batch_size=4, seed=0,
                            eval_samples=8, verbose=False)

    def test_batch_size_below_two_rejected(self):
        with pytest.raises(ValueError, match="batch_size"):
            train_generator(EchoClassifier(), StubGenerator(), "soft-vector",
                            LossWeights(1, 1, 1), epochs=1, batches_per_epoch=1,
                            batch_size=1, seed=0, verbose=False)

    def test_n_samples_below_one_rejected(self):
        with pytest.raises(ValueError):
            inversion_accuracy(StubGenerator(), EchoClassifier(), 0,
                               "soft-vector", seed=0)


def tiny_models(seed=0):
    clf_cfg = ClassifierConfig(conv_channels=[4], fc_dims=[16, 10])
    gen_cfg = GeneratorConfig(latent_dim=8, up_channels=[16, 8, 4])
    return (build_classifier(clf_cfg, seed=seed),
            build_generator(gen_cfg, seed=seed))


class TestRealLoop:
    def test_short_run_is_deterministic(self):
        traces = []
        for _ in range(2):
            classifier, generator = tiny_models(seed=5)
            generator, metrics = train_generator(
                classifier, generator, "soft-vector", LossWeights(1, 1, 1),
                epochs=2, batches_per_epoch=4, batch_size=8, seed=5,
                eval_samples=32, verbose=False,
            )
            traces.append((
                parameter_checksum(generator),
                [(m.loss, m.kl, m.ce, m.cosine, m.inversion_accuracy)
                 for m in metrics.epochs],
            ))
        assert traces[0] == traces[1]

    @pytest.mark.parametrize("mode", ["soft-vector", "one-hot", "label-embed"])
    def test_all_conditioning_modes_run(self, mode):
        classifier, generator = tiny_models(seed=6)
        generator, metrics = train_generator(
            classifier, generator, mode, LossWeights(1, 1, 1),
            epochs=1, batches_per_epoch=3, batch_size=8, seed=6,
            eval_samples=16, verbose=False,
        )
        assert len(metrics.epochs) == 1
        assert math.isfinite(metrics.epochs[0].loss)
        assert 0.0 <= metrics.epochs[0].inversion_accuracy <= 1.0

    def test_classifier_parameters_do_not_move(self):
        classifier, generator = tiny_models(seed=7)
        before = parameter_checksum(classifier)
        gen_before = parameter_checksum(generator)
        train_generator(classifier, generator, "soft-vector", LossWeights(1, 1, 1),
                        epochs=1, batches_per_epoch=4, batch_size=8, seed=7,
                        eval_samples=16, verbose=False)
        assert parameter_checksum(classifier) == before
        assert parameter_checksum(generator) != gen_before

    def test_requires_grad_flags_restored_after_training(self):
        classifier, generator = tiny_models(seed=8)
        assert all(p.requires_grad for p in classifier.parameters())
        train_generator(classifier, generator, "soft-vector", LossWeights(1, 1, 1),
                        epochs=1, batches_per_epoch=2, batch_size=8, seed=8,
                        eval_samples=16, verbose=False)
        assert all(p.requires_grad for p in classifier.parameters())

    def test_cosine_per_class_and_logit_exclusion_options(self):
        classifier, generator = tiny_models(seed=9)
        _, metrics = train_generator(
            classifier, generator, "soft-vector", LossWeights(1, 1, 1),
            epochs=1, batches_per_epoch=2, batch_size=8, seed=9, eval_samples=16,
            cosine_per_class=True, cosine_include_logits=False, verbose=False,
        )
        assert math.isfinite(metrics.epochs[0].cosine)

    def test_metrics_csv_layout(self, tmp_path):
        classifier, generator = tiny_models(seed=10)
        _, metrics = train_generator(
            classifier, generator, "soft-vector", LossWeights(1, 1, 1),
            epochs=2, batches_per_epoch=2, batch_size=8, seed=10,
            eval_samples=16, verbose=False,
        )
        path = metrics.to_csv(tmp_path / "metrics.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",")[:6] == ["epoch", "loss", "kl", "ce", "cosine",
                                           "inversion_accuracy"]
        assert lines[0].split(",")[6:] == [f"acc_class_{c}" for c in range(10)]
        assert len(lines) == 3

    def test_gamma_zero_still_reports_raw_cosine(self):
        classifier, generator = tiny_models(seed=11)
        _, metrics = train_generator(
            classifier, generator, "soft-vector", LossWeights(1, 1, 0),
            epochs=1, batches_per_epoch=2, batch_size=8, seed=11,
            eval_samples=16, verbose=False,
        )
        m = metrics.epochs[0]
        assert m.cosine != 0.0  # raw component, not the weighted contribution
        assert m.loss == pytest.approx(m.kl + m.ce, rel=1e-4, abs=1e-5)
