"""Command-line pipeline: train the classifier, invert it, emit diagnostics.

Subcommands: train-classifier, invert, analyze. Every value can come from a
JSON config file; command-line flags override the file, which overrides the
built-in defaults. Dataset paths fall back to NETINVERT_DATA_DIR. The
resolved configuration is echoed into a manifest next to each command's
outputs, so any run can be reproduced exactly from (config, seed).

Exit codes: 0 success, 2 validation/config error, 3 numerical divergence,
1 unexpected failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import analysis
from .classifier import (ClassifierConfig, build_classifier, classifier_from_checkpoint,
                         evaluate, train_classifier)
from .conditioning import canonical_mode
from .data_io import (checkpoint_from_model, load_checkpoint, load_mnist, require_kind,
                      save_checkpoint, write_csv)
from .errors import (CheckpointKindError, ConfigError, ConsistencyError, DivergenceError,
                     FormatError, IntegrityError)
from .generator import GeneratorConfig, build_generator, generator_from_checkpoint
from .inversion import LossWeights, inversion_accuracy, train_generator

DATA_DIR_ENV = "NETINVERT_DATA_DIR"

STANDARD_DATA_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

DEFAULT_CONFIG = {
    "seed": 42,
    "out_dir": "runs/default",
    "classifier_checkpoint": None,
    "generator_checkpoint": None,
    "data": {key: None for key in STANDARD_DATA_FILES},
    "classifier": ClassifierConfig().to_dict(),
    "classifier_training": {"epochs": 10, "batch_size": 128, "lr": 1e-3},
    "generator": GeneratorConfig().to_dict(),
    "loss_weights": {"alpha": 1.0, "beta": 1.0, "gamma": 1.0},
    "conditioning": {"mode": "soft-vector", "temperature": 1.0},
    "inversion_training": {
        "epochs": 20,
        "batches_per_epoch": 200,
        "batch_size": 64,
        "lr": 2e-4,
        "eval_samples": 1000,
        "final_eval_samples": 10000,
        "cosine_include_logits": True,
        "cosine_per_class": False,
    },
    "analysis": {
        "grid_cols": 8,
        "tsne_samples_per_class": 100,
        "tsne_perplexity": 30.0,
        "tsne_iterations": 1000,
        "boundary_resolution": 500,
        "boundary_margin": 0.1,
        "boundary_reference": "test",
    },
}


def _merge_config(base: dict, override: dict, prefix: str = "") -> dict:
    """Deep-merge override into base; unknown keys are config errors."""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in merged:
            raise ConfigError(f"unknown config field: {path}")
        if isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = _merge_config(merged[key], value, prefix=f"{path}.")
        else:
            merged[key] = value
    return merged


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def resolve_data_paths(config: dict, keys=None) -> dict[str, Path]:
    """Resolve dataset paths from config, falling back to NETINVERT_DATA_DIR."""
    keys = list(STANDARD_DATA_FILES) if keys is None else list(keys)
    env_dir = os.environ.get(DATA_DIR_ENV)
    resolved = {}
    for key in keys:
        value = config["data"].get(key)
        if value is None and env_dir:
            candidate = Path(env_dir) / STANDARD_DATA_FILES[key]
            if not candidate.exists() and candidate.with_suffix(".gz").exists():
                candidate = candidate.with_suffix(".gz")
            value = candidate
        if value is None:
            raise ConfigError(
                f"data.{key}: no path configured and {DATA_DIR_ENV} is not set"
            )
        value = Path(value)
        if not value.exists():
            raise ConfigError(f"data.{key}: file not found: {value}")
        resolved[key] = value
    return resolved


def config_digest(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()
    ).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, files) -> Path:
    manifest = {
        "command": command,
        "seed": config["seed"],
        "config_sha256": config_digest(config),
        "config": config,
        "files": sorted(str(f) for f in files),
    }
    path = out_dir / f"{command.replace('-', '_').replace(' ', '_')}_manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _require_checkpoint(path, kind: str):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"required {kind} checkpoint not found: {path}")
    return require_kind(load_checkpoint(path), kind)


def cmd_train_classifier(config: dict) -> int:
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config["seed"]

    paths = resolve_data_paths(config)
    train_set = load_mnist(paths["train_images"], paths["train_labels"])
    test_set = load_mnist(paths["test_images"], paths["test_labels"])

    clf_config = ClassifierConfig.from_dict(config["classifier"])
    model = build_classifier(clf_config, seed)
    opts = config["classifier_training"]
    model, history = train_classifier(
        model, train_set, test_set,
        epochs=opts["epochs"], batch_size=opts["batch_size"], lr=opts["lr"], seed=seed,
    )
    final_accuracy = evaluate(model, test_set)

    ckpt_path = out_dir / "classifier.ckpt"
    save_checkpoint(
        checkpoint_from_model(model, "classifier", clf_config.to_dict(), seed,
                              epoch=len(history)),
        ckpt_path,
    )
    csv_path = write_csv(
        out_dir / "classifier_history.csv",
        ["epoch", "train_loss", "test_accuracy"],
        [[h.epoch, h.train_loss, h.test_accuracy] for h in history],
    )
    write_manifest(out_dir, "train-classifier", config,
                   [ckpt_path.name, csv_path.name])
    print(f"final test accuracy: {final_accuracy:.4f}")
    return 0


def cmd_invert(config: dict) -> int:
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config["seed"]

    clf_path = config.get("classifier_checkpoint") or out_dir / "classifier.ckpt"
    classifier = classifier_from_checkpoint(_require_checkpoint(clf_path, "classifier"))

    gen_config = GeneratorConfig.from_dict(config["generator"])
    if gen_config.n_classes != classifier.config.n_classes:
        raise ConfigError(
            f"generator.n_classes={gen_config.n_classes} does not match the "
            f"classifier's {classifier.config.n_classes}"
        )
    generator = build_generator(gen_config, seed)

    weights = LossWeights(**config["loss_weights"])
    mode = canonical_mode(config["conditioning"]["mode"])
    temperature = config["conditioning"]["temperature"]
    opts = config["inversion_training"]
    generator, metrics = train_generator(
        classifier, generator, mode, weights,
        epochs=opts["epochs"], batches_per_epoch=opts["batches_per_epoch"],
        batch_size=opts["batch_size"], lr=opts["lr"], seed=seed,
        eval_samples=opts["eval_samples"], temperature=temperature,
        cosine_include_logits=opts["cosine_include_logits"],
        cosine_per_class=opts["cosine_per_class"],
    )
    final_accuracy = inversion_accuracy(
        generator, classifier, opts["final_eval_samples"], mode,
        seed=seed + 10_000_019, temperature=temperature,
    )

    ckpt_path = out_dir / "generator.ckpt"
    save_checkpoint(
        checkpoint_from_model(generator, "generator", gen_config.to_dict(), seed,
                              epoch=opts["epochs"]),
        ckpt_path,
    )
    csv_path = metrics.to_csv(out_dir / "inversion_metrics.csv")
    write_manifest(out_dir, "invert", config, [ckpt_path.name, Path(csv_path).name])
    print(f"final inversion accuracy: {final_accuracy:.4f}")
    return 0


def cmd_analyze(config: dict) -> int:
    out_dir = Path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = config["seed"]
    which = config["analyze_which"]
    opts = config["analysis"]
    mode = canonical_mode(config["conditioning"]["mode"])
    temperature = config["conditioning"]["temperature"]

    clf_path = config.get("classifier_checkpoint") or out_dir / "classifier.ckpt"
    classifier = classifier_from_checkpoint(_require_checkpoint(clf_path, "classifier"))

    generator = None
    if which in ("grid", "tsne", "all") or (
        which == "boundary" and opts["boundary_reference"] == "generated"
    ):
        gen_path = config.get("generator_checkpoint") or out_dir / "generator.ckpt"
        generator = generator_from_checkpoint(_require_checkpoint(gen_path, "generator"))

    files: list[str] = []

    if which in ("grid", "all"):
        grid_path = out_dir / "samples_grid.png"
        analysis.render_sample_grid(
            generator, classifier, cols=opts["grid_cols"], seed=seed,
            out_path=grid_path, mode=mode, temperature=temperature,
        )
        files.append(grid_path.name)

    if which in ("tsne", "all"):
        images, cond_labels, pred_labels = analysis.generate_per_class(
            generator, classifier, opts["tsne_samples_per_class"], mode, seed,
            temperature,
        )
        features_path = analysis.export_features(
            classifier, images, "penultimate", out_dir / "features.csv", cond_labels,
        )
        feats, _ = analysis.extract_features(classifier, images, "penultimate")
        embedding = analysis.tsne_embed(
            feats, perplexity=opts["tsne_perplexity"],
            iterations=opts["tsne_iterations"], seed=seed, labels=cond_labels,
        )
        tsne_csv = write_csv(
            out_dir / "tsne.csv",
            ["sample_id", "x", "y", "conditioning_label", "predicted_label"],
            [
                [i, float(embedding.coords[i, 0]), float(embedding.coords[i, 1]),
                 int(cond_labels[i]), int(pred_labels[i])]
                for i in range(len(cond_labels))
            ],
        )
        tsne_png = analysis.render_embedding_plot(
            embedding, out_dir / "tsne.png",
            n_classes=classifier.config.n_classes,
            title="t-SNE of penultimate features of generated images",
        )
        files += [Path(features_path).name, Path(tsne_csv).name, Path(tsne_png).name]

    if which in ("boundary", "all"):
        if not classifier.config.penultimate_2d:
            raise ConfigError(
                "decision boundaries require a classifier trained with "
                "penultimate_2d=true (a 2-unit second-to-last FC layer); "
                "retrain with --penultimate-2d"
            )
        if opts["boundary_reference"] == "generated":
            images, ref_labels, _ = analysis.generate_per_class(
                generator, classifier, opts["tsne_samples_per_class"], mode, seed,
                temperature,
            )
            ref_feats, _ = analysis.extract_features(classifier, images, "penultimate")
        else:
            paths = resolve_data_paths(config, keys=["test_images", "test_labels"])
            test_set = load_mnist(paths["test_images"], paths["test_labels"])
            ref_feats, _ = analysis.extract_features(
                classifier, torch.from_numpy(test_set.images), "penultimate",
            )
            ref_labels = test_set.labels
        resolution = opts["boundary_resolution"]
        bmap = analysis.decision_boundary(
            classifier, ref_feats, resolution=(resolution, resolution),
            margin=opts["boundary_margin"],
        )
        boundary_png = analysis.render_boundary_map(
            bmap, out_dir / "boundary.png", reference_points=ref_feats,
            reference_labels=np.asarray(ref_labels),
            n_classes=classifier.config.n_classes,
        )
        boundary_csv = analysis.save_boundary_csv(bmap, out_dir / "boundary.csv")
        files += [Path(boundary_png).name, Path(boundary_csv).name]

    manifest = write_manifest(out_dir, f"analyze {which}", config, files)
    print(f"wrote {len(files)} artifacts to {out_dir} (manifest: {manifest.name})")
    return 0


def _add_common_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", type=str, default=None, help="JSON config file")
    sp.add_argument("--seed", type=int, default=None, help="override the run seed")
    sp.add_argument("--out", type=str, default=None, help="output directory")
    sp.add_argument("--data-dir", type=str, default=None,
                    help="directory holding the standard IDX files "
                         f"(overrides {DATA_DIR_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netinvert",
        description="Invert a trained convolutional classifier with a conditioned "
                    "generator and render diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tc = sub.add_parser("train-classifier", help="train and checkpoint the classifier")
    _add_common_flags(tc)
    tc.add_argument("--epochs", type=int, default=None)
    tc.add_argument("--batch-size", type=int, default=None)
    tc.add_argument("--lr", type=float, default=None)
    tc.add_argument("--penultimate-2d", action="store_true",
                    help="train the 2-unit-penultimate variant used for boundary maps")

    inv = sub.add_parser("invert", help="train the generator against a frozen classifier")
    _add_common_flags(inv)
    inv.add_argument("--classifier", type=str, default=None,
                     help="classifier checkpoint (default: <out>/classifier.ckpt)")
    inv.add_argument("--conditioning", choices=["label", "onehot", "soft"], default=None)
    inv.add_argument("--alpha", type=float, default=None)
    inv.add_argument("--beta", type=float, default=None)
    inv.add_argument("--gamma", type=float, default=None)
    inv.add_argument("--temperature", type=float, default=None)
    inv.add_argument("--epochs", type=int, default=None)
    inv.add_argument("--batches-per-epoch", type=int, default=None)
    inv.add_argument("--batch-size", type=int, default=None)
    inv.add_argument("--lr", type=float, default=None)
    inv.add_argument("--eval-samples", type=int, default=None)
    inv.add_argument("--final-eval-samples", type=int, default=None)
    inv.add_argument("--cosine-per-class", action="store_true", default=None,
                     help="restrict cosine pairs to same-label samples")
    inv.add_argument("--cosine-exclude-logits", action="store_true", default=None,
                     help="drop the logits layer from the cosine term")

    an = sub.add_parser("analyze", help="emit sample grids, t-SNE maps, boundary maps")
    _add_common_flags(an)
    an.add_argument("--classifier", type=str, default=None)
    an.add_argument("--generator", type=str, default=None,
                    help="generator checkpoint (default: <out>/generator.ckpt)")
    an.add_argument("--which", choices=["grid", "tsne", "boundary", "all"], default="all")
    an.add_argument("--conditioning", choices=["label", "onehot", "soft"], default=None)
    an.add_argument("--cols", type=int, default=None, help="sample-grid columns")
    an.add_argument("--tsne-samples", type=int, default=None,
                    help="generated samples per class for t-SNE")
    an.add_argument("--tsne-perplexity", type=float, default=None)
    an.add_argument("--tsne-iterations", type=int, default=None)
    an.add_argument("--boundary-resolution", type=int, default=None)
    an.add_argument("--boundary-reference", choices=["test", "generated"], default=None)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Apply precedence: built-in defaults < config file < command-line flags."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        config = _merge_config(config, load_config_file(args.config))
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out_dir"] = args.out
    if args.data_dir is not None:
        os.environ[DATA_DIR_ENV] = args.data_dir

    def maybe(section: str, key: str, attr: str) -> None:
        value = getattr(args, attr, None)
        if value is not None:
            config[section][key] = value

    if args.command == "train-classifier":
        maybe("classifier_training", "epochs", "epochs")
        maybe("classifier_training", "batch_size", "batch_size")
        maybe("classifier_training", "lr", "lr")
        if args.penultimate_2d:
            config["classifier"]["penultimate_2d"] = True
            dims = list(config["classifier"]["fc_dims"])
            if len(dims) < 2 or dims[-2] != 2:
                dims = dims[:-1] + [2, dims[-1]]
            config["classifier"]["fc_dims"] = dims
    elif args.command == "invert":
        if args.classifier is not None:
            config["classifier_checkpoint"] = args.classifier
        maybe("conditioning", "mode", "conditioning")
        maybe("conditioning", "temperature", "temperature")
        maybe("loss_weights", "alpha", "alpha")
        maybe("loss_weights", "beta", "beta")
        maybe("loss_weights", "gamma", "gamma")
        maybe("inversion_training", "epochs", "epochs")
        maybe("inversion_training", "batches_per_epoch", "batches_per_epoch")
        maybe("inversion_training", "batch_size", "batch_size")
        maybe("inversion_training", "lr", "lr")
        maybe("inversion_training", "eval_samples", "eval_samples")
        maybe("inversion_training", "final_eval_samples", "final_eval_samples")
        if args.cosine_per_class:
            config["inversion_training"]["cosine_per_class"] = True
        if args.cosine_exclude_logits:
            config["inversion_training"]["cosine_include_logits"] = False
    elif args.command == "analyze":
        if args.classifier is not None:
            config["classifier_checkpoint"] = args.classifier
        if args.generator is not None:
            config["generator_checkpoint"] = args.generator
        config["analyze_which"] = args.which
        maybe("conditioning", "mode", "conditioning")
        maybe("analysis", "grid_cols", "cols")
        maybe("analysis", "tsne_samples_per_class", "tsne_samples")
        maybe("analysis", "tsne_perplexity", "tsne_perplexity")
        maybe("analysis", "tsne_iterations", "tsne_iterations")
        maybe("analysis", "boundary_resolution", "boundary_resolution")
        maybe("analysis", "boundary_reference", "boundary_reference")

    if config["conditioning"]["mode"] is not None:
        config["conditioning"]["mode"] = canonical_mode(config["conditioning"]["mode"])
    return config


COMMANDS = {
    "train-classifier": cmd_train_classifier,
    "invert": cmd_invert,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](config)
    except (ConfigError, FormatError, ConsistencyError, IntegrityError,
            CheckpointKindError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
