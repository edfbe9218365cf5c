"""Diagnostics for an inverted classifier: sample grids, t-SNE maps, decision boundaries.

All emitters are deterministic for a fixed seed, down to the output bytes;
plots render through the Agg backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
from PIL import Image


def _save_figure_rgb(fig, out_path) -> None:
    # plots ship as 8-bit RGB; matplotlib's native PNG output carries alpha
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png")
    buffer.seek(0)
    Image.open(buffer).convert("RGB").save(out_path, format="PNG")

from .conditioning import SOFT_VECTOR, canonical_mode, sample_class_conditioning
from .data_io import write_csv
from .errors import ConfigError
from .generator import generate
from .tsne import tsne


@dataclass
class Embedding2D:
    coords: np.ndarray  # [N, 2]
    labels: np.ndarray  # [N]
    method: str         # "tsne" | "penultimate-2d"


@dataclass
class BoundaryMap:
    """Class assignment of every point on a 2-D lattice of feature coordinates."""

    grid: np.ndarray  # [H, W] integer class ids; grid[i, j] is the class at (xs[j], ys[i])
    x_range: tuple[float, float]
    y_range: tuple[float, float]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.grid.shape

    def cell_index(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest lattice cell (row, col) for each [N, 2] point, clipped to the grid."""
        h, w = self.grid.shape
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        cols = np.rint((points[:, 0] - x0) / (x1 - x0) * (w - 1)).astype(int)
        rows = np.rint((points[:, 1] - y0) / (y1 - y0) * (h - 1)).astype(int)
        return np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)

    def cell_coords(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Lattice coordinates of the given cells, as [N, 2] points."""
        h, w = self.grid.shape
        xs = np.linspace(*self.x_range, w)
        ys = np.linspace(*self.y_range, h)
        return np.stack([xs[cols], ys[rows]], axis=1)

    def lookup(self, points: np.ndarray) -> np.ndarray:
        rows, cols = self.cell_index(points)
        return self.grid[rows, cols]


def _final_linear(classifier) -> torch.nn.Linear:
    final = classifier.fc_layers[-1]
    if final.in_features != 2:
        raise ConfigError(
            "decision boundaries need a classifier with a 2-unit penultimate layer "
            f"(penultimate_2d variant); this one feeds {final.in_features} features "
            "into its final layer"
        )
    return final


def decision_boundary(
    classifier,
    reference_features: np.ndarray,
    resolution: tuple[int, int] = (500, 500),
    margin: float = 0.1,
) -> BoundaryMap:
    """Classify a lattice spanning the reference features' bounding box plus margin.

    Every lattice point goes through the classifier's final linear layer and
    argmax, exactly the map applied to real penultimate features.
    """
    final = _final_linear(classifier)
    reference_features = np.asarray(reference_features, dtype=np.float32)
    if reference_features.ndim != 2 or reference_features.shape[1] != 2:
        raise ValueError(f"reference features must be [N, 2], got {reference_features.shape}")
    h, w = resolution

    def padded(lo: float, hi: float) -> tuple[float, float]:
        extent = hi - lo
        pad = margin * extent if extent > 0 else 1.0
        return float(lo - pad), float(hi + pad)

    x_range = padded(reference_features[:, 0].min(), reference_features[:, 0].max())
    y_range = padded(reference_features[:, 1].min(), reference_features[:, 1].max())

    xs = np.linspace(*x_range, w, dtype=np.float32)
    ys = np.linspace(*y_range, h, dtype=np.float32)
    xx, yy = np.meshgrid(xs, ys)
    points = torch.from_numpy(np.stack([xx.ravel(), yy.ravel()], axis=1))
    with torch.no_grad():
        classes = final(points).argmax(dim=1).numpy().reshape(h, w)
    return BoundaryMap(grid=classes, x_range=x_range, y_range=y_range)


def classify_2d_points(classifier, points: np.ndarray) -> np.ndarray:
    """Directly classify [N, 2] penultimate-space points with the final linear layer."""
    final = _final_linear(classifier)
    with torch.no_grad():
        pts = torch.from_numpy(np.asarray(points, dtype=np.float32))
        return final(pts).argmax(dim=1).numpy()


def extract_features(classifier, images: torch.Tensor, layer: str = "penultimate",
                     batch_size: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode FC features and predicted labels for a batch of images.

    layer is "penultimate" (last hidden FC activation) or "logits".
    """
    if layer not in ("penultimate", "logits"):
        raise ValueError(f"layer must be 'penultimate' or 'logits', got {layer!r}")
    if layer == "penultimate" and len(classifier.config.fc_dims) < 2:
        raise ValueError("classifier has no hidden FC layer to take penultimate features from")
    classifier.eval()
    feats, preds = [], []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            batch = images[start:start + batch_size]
            pred, fs = classifier.forward_with_features(batch)
            chosen = fs.per_layer[-1] if layer == "logits" else fs.per_layer[-2]
            feats.append(chosen.numpy())
            preds.append(pred.labels.numpy())
    if not feats:
        width = classifier.config.fc_dims[-1 if layer == "logits" else -2]
        return np.zeros((0, width), dtype=np.float32), np.zeros(0, dtype=np.int64)
    return np.concatenate(feats), np.concatenate(preds)


def export_features(classifier, images: torch.Tensor, layer: str, out_path,
                    conditioning_labels=None) -> Path:
    """CSV of per-sample features: sample_id, predicted_label, conditioning_label, f*.

    An empty batch produces a header-only file; a missing conditioning label
    is written as -1.
    """
    feats, preds = extract_features(classifier, images, layer)
    width = feats.shape[1] if feats.size else classifier.config.fc_dims[
        -1 if layer == "logits" else -2
    ]
    if conditioning_labels is None:
        cond = np.full(len(preds), -1, dtype=np.int64)
    else:
        cond = np.asarray(conditioning_labels, dtype=np.int64)
        if cond.shape[0] != len(preds):
            raise ValueError("conditioning_labels length does not match the batch")
    header = ["sample_id", "predicted_label", "conditioning_label"]
    header += [f"f{k:03d}" for k in range(width)]
    rows = (
        [i, int(preds[i]), int(cond[i]), *(float(v) for v in feats[i])]
        for i in range(len(preds))
    )
    return write_csv(out_path, header, rows)


def generate_per_class(
    generator,
    classifier,
    n_per_class: int,
    mode: str = SOFT_VECTOR,
    seed: int = 0,
    temperature: float = 1.0,
) -> tuple[torch.Tensor, np.ndarray, np.ndarray]:
    """Eval-mode images for each class in turn, without any admission filtering.

    Returns (images, conditioning_labels, predicted_labels) with classes laid
    out contiguously: n_per_class images for class 0, then class 1, etc.
    """
    mode = canonical_mode(mode)
    n_classes = generator.config.n_classes
    sampler = torch.Generator().manual_seed(seed)
    images, cond_labels, pred_labels = [], [], []
    for cls in range(n_classes):
        cond = sample_class_conditioning(cls, n_per_class, mode, n_classes,
                                         sampler, temperature)
        latents = torch.randn(n_per_class, generator.config.latent_dim, generator=sampler)
        imgs = generate(generator, latents, cond, mode="eval")
        with torch.no_grad():
            preds = classifier(imgs).argmax(dim=1)
        images.append(imgs)
        cond_labels.append(np.full(n_per_class, cls, dtype=np.int64))
        pred_labels.append(preds.numpy())
    return torch.cat(images), np.concatenate(cond_labels), np.concatenate(pred_labels)


def render_sample_grid(
    generator,
    classifier,
    cols: int,
    seed: int,
    out_path,
    mode: str = SOFT_VECTOR,
    rows: int | None = None,
    temperature: float = 1.0,
    retry_budget: int | None = None,
) -> np.ndarray:
    """Tile admitted samples into a PNG: one row per class, cols images per row.

    A tile is admitted only if the classifier assigns it to its row's class;
    admission is judged on the 8-bit quantized image that actually lands in
    the PNG, so re-classifying the file reproduces the row labels exactly.
    Raises RuntimeError naming the class whose retry budget runs out.
    """
    mode = canonical_mode(mode)
    n_classes = generator.config.n_classes
    rows = n_classes if rows is None else rows
    if cols < 1 or rows < 1 or rows > n_classes:
        raise ValueError(f"invalid grid shape {rows}x{cols} for {n_classes} classes")
    budget = 50 * cols if retry_budget is None else retry_budget

    sampler = torch.Generator().manual_seed(seed)
    generator.eval()
    classifier.eval()
    tiles = np.zeros((rows, cols, 28, 28), dtype=np.uint8)
    for cls in range(rows):
        admitted = 0
        attempts = 0
        while admitted < cols:
            if attempts >= budget:
                raise RuntimeError(
                    f"class {cls}: failed to generate {cols} admitted samples "
                    f"within {budget} attempts ({admitted} admitted)"
                )
            chunk = min(max(cols, 16), budget - attempts)
            cond = sample_class_conditioning(cls, chunk, mode, n_classes,
                                             sampler, temperature)
            latents = torch.randn(chunk, generator.config.latent_dim, generator=sampler)
            imgs = generate(generator, latents, cond, mode="eval")
            quantized = np.rint(imgs.numpy() * 255.0).astype(np.uint8)
            requantized = torch.from_numpy(quantized.astype(np.float32) / 255.0)
            with torch.no_grad():
                preds = classifier(requantized).argmax(dim=1).numpy()
            attempts += chunk
            for k in np.flatnonzero(preds == cls):
                if admitted >= cols:
                    break
                tiles[cls, admitted] = quantized[k, 0]
                admitted += 1

    sheet = tiles.transpose(0, 2, 1, 3).reshape(rows * 28, cols * 28)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sheet, mode="L").save(out_path, format="PNG")
    return sheet


def tsne_embed(features: np.ndarray, perplexity: float = 30.0, iterations: int = 1000,
               seed: int = 0, labels=None) -> Embedding2D:
    """Embed features into 2-D with exact t-SNE and package the result."""
    coords = tsne(features, perplexity=perplexity, iterations=iterations, seed=seed)
    if labels is None:
        labels = np.full(coords.shape[0], -1, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != coords.shape[0]:
        raise ValueError("labels length does not match the feature count")
    return Embedding2D(coords=coords, labels=labels, method="tsne")


def render_embedding_plot(embedding: Embedding2D, out_path, n_classes: int = 10,
                          title: str | None = None) -> Path:
    """Scatter plot of a 2-D embedding, one color per class."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 6), dpi=120)
    cmap = plt.get_cmap("tab10")
    for cls in range(n_classes):
        mask = embedding.labels == cls
        if not mask.any():
            continue
        ax.scatter(embedding.coords[mask, 0], embedding.coords[mask, 1],
                   s=8, color=cmap(cls % 10), label=str(cls))
    ax.set_title(title or f"2-D embedding ({embedding.method})")
    ax.legend(title="class", loc="best", fontsize=8, markerscale=1.5)
    fig.tight_layout()
    _save_figure_rgb(fig, out_path)
    plt.close(fig)
    return out_path


def render_boundary_map(bmap: BoundaryMap, out_path, reference_points=None,
                        reference_labels=None, n_classes: int = 10) -> Path:
    """PNG of a boundary map, one color per class, reference points overlaid."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 6), dpi=120)
    cmap = plt.get_cmap("tab10", n_classes)
    extent = (*bmap.x_range, *bmap.y_range)
    ax.imshow(bmap.grid, origin="lower", extent=extent, cmap=cmap,
              vmin=-0.5, vmax=n_classes - 0.5, interpolation="nearest", aspect="auto")
    if reference_points is not None:
        pts = np.asarray(reference_points)
        colors = "black" if reference_labels is None else [
            cmap(int(c)) for c in np.asarray(reference_labels)
        ]
        ax.scatter(pts[:, 0], pts[:, 1], s=6, c=colors, edgecolors="black",
                   linewidths=0.3)
    ax.set_title("decision regions over the 2-unit penultimate space")
    ax.set_xlabel("feature 1")
    ax.set_ylabel("feature 2")
    fig.tight_layout()
    _save_figure_rgb(fig, out_path)
    plt.close(fig)
    return out_path


def save_boundary_csv(bmap: BoundaryMap, out_path) -> Path:
    """Raw class lattice as CSV: one line per grid row, W integers each."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out_path, bmap.grid, fmt="%d", delimiter=",")
    return out_path


def mean_pairwise_cosine_by_class(features: np.ndarray, labels: np.ndarray,
                                  n_classes: int) -> np.ndarray:
    """Within-class mean pairwise cosine similarity (nan for classes with < 2 rows)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    out = np.full(n_classes, np.nan)
    for cls in range(n_classes):
        x = features[labels == cls]
        m = x.shape[0]
        if m < 2:
            continue
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        unit = x / np.maximum(norms, 1e-12)
        unit[np.squeeze(norms, axis=1) < 1e-12] = 0.0
        cos = unit @ unit.T
        out[cls] = (cos.sum() - np.trace(cos)) / (m * (m - 1))
    return out
