"""MNIST IDX ingestion, checkpoint persistence, and small artifact helpers.

Checkpoints are single zip archives holding a JSON manifest (kind, config,
seed, epoch, tensor index) plus one raw little-endian blob per tensor.
Archive entries carry a fixed timestamp so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import struct
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointKindError, ConsistencyError, FormatError, IntegrityError

IMAGES_MAGIC = 0x00000803  # 2051
LABELS_MAGIC = 0x00000801  # 2049

CHECKPOINT_KINDS = ("classifier", "generator")

# fixed zip timestamp: archives must be byte-stable across runs
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
_MANIFEST_NAME = "manifest.json"


@dataclass
class LabeledDataset:
    """28x28 grayscale images in [0, 1] with integer labels in [0, 10)."""

    images: np.ndarray  # [count, 1, 28, 28] float32
    labels: np.ndarray  # [count] int64

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConsistencyError(
                f"image count {self.images.shape[0]} != label count {self.labels.shape[0]}"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def _open_binary(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx_header(data: bytes, expected_magic: int, n_dims: int, path) -> tuple[int, ...]:
    header_len = 4 * (1 + n_dims)
    if len(data) < header_len:
        raise FormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", data[:4])[0]
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad magic {magic:#010x}, expected {expected_magic:#010x}"
        )
    return struct.unpack(f">{n_dims}I", data[4:header_len])


def load_mnist(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label file pair and normalize pixels to [0, 1].

    Raises FormatError for a wrong magic number or malformed file and
    ConsistencyError when the two files disagree on the item count.
    """
    with _open_binary(images_path) as fh:
        image_bytes = fh.read()
    with _open_binary(labels_path) as fh:
        label_bytes = fh.read()

    count, rows, cols = _read_idx_header(image_bytes, IMAGES_MAGIC, 3, images_path)
    if (rows, cols) != (28, 28):
        raise FormatError(f"{images_path}: expected 28x28 images, got {rows}x{cols}")
    pixel_data = image_bytes[16:]
    if len(pixel_data) != count * rows * cols:
        raise FormatError(
            f"{images_path}: payload holds {len(pixel_data)} bytes, "
            f"header promises {count * rows * cols}"
        )

    (label_count,) = _read_idx_header(label_bytes, LABELS_MAGIC, 1, labels_path)
    label_data = label_bytes[8:]
    if len(label_data) != label_count:
        raise FormatError(
            f"{labels_path}: payload holds {len(label_data)} bytes, "
            f"header promises {label_count}"
        )
    if count != label_count:
        raise ConsistencyError(
            f"image file holds {count} items but label file holds {label_count}"
        )

    images = np.frombuffer(pixel_data, dtype=np.uint8).reshape(count, 1, rows, cols)
    images = images.astype(np.float32) / 255.0
    labels = np.frombuffer(label_data, dtype=np.uint8).astype(np.int64)
    if count and (labels.min() < 0 or labels.max() > 9):
        raise ConsistencyError(
            f"{labels_path}: labels outside [0, 10) (max seen: {labels.max()})"
        )
    return LabeledDataset(images=images, labels=labels)


@dataclass
class Checkpoint:
    """Serialized model state plus the configuration and seed that produced it."""

    kind: str
    parameters: dict[str, np.ndarray]
    config: dict
    seed: int
    epoch: int = 0

    def __post_init__(self) -> None:
        if self.kind not in CHECKPOINT_KINDS:
            raise CheckpointKindError(
                f"unknown checkpoint kind {self.kind!r}; expected one of {CHECKPOINT_KINDS}"
            )


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write a checkpoint archive; byte-identical for identical inputs."""
    path = Path(path)
    tensor_index = {}
    blobs = {}
    for name in sorted(ckpt.parameters):
        arr = np.ascontiguousarray(ckpt.parameters[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tensor_index[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape)}
        blobs[name] = arr.tobytes()
    manifest = {
        "kind": ckpt.kind,
        "seed": int(ckpt.seed),
        "epoch": int(ckpt.epoch),
        "config": ckpt.config,
        "tensors": tensor_index,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(_MANIFEST_NAME, date_time=_ZIP_DATE)
        zf.writestr(info, json.dumps(manifest, sort_keys=True, indent=1))
        for name in sorted(blobs):
            info = zipfile.ZipInfo(f"tensors/{name}.bin", date_time=_ZIP_DATE)
            zf.writestr(info, blobs[name])
    return path


def load_checkpoint(path) -> Checkpoint:
    """Read back a checkpoint archive written by save_checkpoint.

    Raises IntegrityError for anything that is not a complete, well-formed
    archive (empty file, truncated blobs, missing manifest entries).
    """
    path = Path(path)
    try:
        with zipfile.ZipFile(path, "r") as zf:
            manifest = json.loads(zf.read(_MANIFEST_NAME))
            kind = manifest["kind"]
            seed = int(manifest["seed"])
            epoch = int(manifest["epoch"])
            config = manifest["config"]
            parameters = {}
            for name, meta in manifest["tensors"].items():
                dtype = np.dtype(meta["dtype"])
                shape = tuple(meta["shape"])
                raw = zf.read(f"tensors/{name}.bin")
                expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
                if len(raw) != expected:
                    raise IntegrityError(
                        f"{path}: tensor {name!r} holds {len(raw)} bytes, expected {expected}"
                    )
                parameters[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    except IntegrityError:
        raise
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError, OSError) as exc:
        raise IntegrityError(f"{path}: not a valid checkpoint archive ({exc})") from exc
    return Checkpoint(kind=kind, parameters=parameters, config=config, seed=seed, epoch=epoch)


def require_kind(ckpt: Checkpoint, kind: str) -> Checkpoint:
    if ckpt.kind != kind:
        raise CheckpointKindError(f"expected a {kind!r} checkpoint, got {ckpt.kind!r}")
    return ckpt


def checkpoint_from_model(model: torch.nn.Module, kind: str, config: dict,
                          seed: int, epoch: int = 0) -> Checkpoint:
    """Snapshot a module's full state_dict (parameters and buffers) as numpy arrays."""
    parameters = {
        name: tensor.detach().cpu().numpy().copy()
        for name, tensor in model.state_dict().items()
    }
    return Checkpoint(kind=kind, parameters=parameters, config=config, seed=seed, epoch=epoch)


def load_model_state(model: torch.nn.Module, ckpt: Checkpoint) -> torch.nn.Module:
    """Restore a module's state from a checkpoint, bit-exactly."""
    state = {name: torch.from_numpy(arr.copy()) for name, arr in ckpt.parameters.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise IntegrityError(f"checkpoint does not fit the model built from its config: {exc}") from exc
    return model


def parameter_checksum(model: torch.nn.Module) -> str:
    """SHA-256 over the module's state_dict, in sorted name order."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        digest.update(name.encode())
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def write_csv(path, header, rows) -> Path:
    """Write a CSV file with a header row; values are formatted with repr-level precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path
