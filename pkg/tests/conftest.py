"""Shared fixtures: synthetic datasets, trained models, and checkpoint layouts.

The heavy fixtures are session-scoped and shared across test modules. Models
train on procedural seven-segment digits so the whole suite runs on a machine
without the real dataset; tests marked `mnist` are skipped unless
NETINVERT_DATA_DIR points at the four IDX files.
"""

from __future__ import annotations

import os
from pathlib import Path

import pytest

from netinvert.classifier import ClassifierConfig, build_classifier, train_classifier
from netinvert.data_io import checkpoint_from_model, save_checkpoint
from netinvert.generator import GeneratorConfig, build_generator
from netinvert.inversion import LossWeights, train_generator
from netinvert.synth import make_synthetic_dataset, write_idx

# one knob for every surrogate-scale training budget in the suite
CLASSIFIER_EPOCHS = 1
CLASSIFIER_2D_EPOCHS = 30  # the 2-unit bottleneck needs far longer to separate
CLASSIFIER_2D_LR = 3e-3
INVERSION_BUDGET = dict(epochs=34, batches_per_epoch=100, batch_size=64, lr=1e-3)
INVERSION_SEED = 7

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _find_mnist() -> dict[str, Path] | None:
    root = os.environ.get("NETINVERT_DATA_DIR")
    if not root:
        return None
    paths = {}
    for key, name in MNIST_FILES.items():
        candidate = Path(root) / name
        if not candidate.exists():
            candidate = candidate.with_suffix(".gz")
        if not candidate.exists():
            return None
        paths[key] = candidate
    return paths


def pytest_collection_modifyitems(config, items):
    if _find_mnist() is not None:
        return
    skip = pytest.mark.skip(
        reason="real MNIST IDX files not found; set NETINVERT_DATA_DIR to run"
    )
    for item in items:
        if "mnist" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def mnist_paths():
    paths = _find_mnist()
    if paths is None:
        pytest.skip("real MNIST IDX files not found; set NETINVERT_DATA_DIR to run")
    return paths


@pytest.fixture(scope="session")
def synth_train():
    return make_synthetic_dataset(400, seed=101)


@pytest.fixture(scope="session")
def synth_test():
    return make_synthetic_dataset(100, seed=202)


@pytest.fixture(scope="session")
def trained_classifier(synth_train, synth_test):
    """Default-architecture classifier trained to 100% on the synthetic digits."""
    model = build_classifier(ClassifierConfig(), seed=1)
    model, history = train_classifier(
        model, synth_train, synth_test,
        epochs=CLASSIFIER_EPOCHS, batch_size=128, lr=1e-3, seed=1, verbose=False,
    )
    assert history[-1].test_accuracy > 0.95, "surrogate classifier failed to train"
    return model


@pytest.fixture(scope="session")
def trained_classifier_2d(synth_train, synth_test):
    """Variant with a 2-unit penultimate layer, for decision-boundary maps."""
    config = ClassifierConfig(fc_dims=[128, 2, 10], penultimate_2d=True)
    model = build_classifier(config, seed=2)
    model, history = train_classifier(
        model, synth_train, synth_test,
        epochs=CLASSIFIER_2D_EPOCHS, batch_size=128, lr=CLASSIFIER_2D_LR, seed=2,
        verbose=False,
    )
    assert history[-1].test_accuracy > 0.9, "2-d-penultimate classifier failed to train"
    return model


@pytest.fixture(scope="session")
def inversion_run(trained_classifier):
    """Soft-vector inversion with the full combined loss (gamma = 1)."""
    generator = build_generator(GeneratorConfig(), seed=INVERSION_SEED)
    generator, metrics = train_generator(
        trained_classifier, generator, "soft-vector", LossWeights(1.0, 1.0, 1.0),
        seed=INVERSION_SEED, eval_samples=500, verbose=False, **INVERSION_BUDGET,
    )
    return generator, metrics


@pytest.fixture(scope="session")
def inversion_run_no_diversity(trained_classifier):
    """Twin of inversion_run with gamma = 0: same seeds, same budget."""
    generator = build_generator(GeneratorConfig(), seed=INVERSION_SEED)
    generator, metrics = train_generator(
        trained_classifier, generator, "soft-vector", LossWeights(1.0, 1.0, 0.0),
        seed=INVERSION_SEED, eval_samples=500, verbose=False, **INVERSION_BUDGET,
    )
    return generator, metrics


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory, trained_classifier, trained_classifier_2d,
                 inversion_run, synth_train, synth_test):
    """On-disk layout for CLI tests: checkpoints plus synthetic IDX data files."""
    root = tmp_path_factory.mktemp("pipeline")
    data_dir = root / "data"
    data_dir.mkdir()
    write_idx(synth_train, data_dir / MNIST_FILES["train_images"],
              data_dir / MNIST_FILES["train_labels"])
    write_idx(synth_test, data_dir / MNIST_FILES["test_images"],
              data_dir / MNIST_FILES["test_labels"])

    save_checkpoint(
        checkpoint_from_model(trained_classifier, "classifier",
                              trained_classifier.config.to_dict(), seed=1),
        root / "classifier.ckpt",
    )
    save_checkpoint(
        checkpoint_from_model(trained_classifier_2d, "classifier",
                              trained_classifier_2d.config.to_dict(), seed=2),
        root / "classifier_2d.ckpt",
    )
    generator, _ = inversion_run
    save_checkpoint(
        checkpoint_from_model(generator, "generator",
                              generator.config.to_dict(), seed=INVERSION_SEED),
        root / "generator.ckpt",
    )
    return root
