"""Checkpoint files: a text manifest followed by a raw little-endian float32 blob."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import torch
from torch import nn

from .exceptions import CheckpointError, ConfigMismatchError

MAGIC = "POLYREC-CHECKPOINT 1"
FLOAT_BYTES = 4


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: Tuple[int, ...]
    offset: int

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * FLOAT_BYTES


@dataclass(frozen=True)
class Checkpoint:
    manifest: Tuple[ManifestEntry, ...]
    blob: bytes = field(repr=False)
    config: Dict[str, Any]
    seeds: Dict[str, int]

    def array(self, entry: ManifestEntry) -> np.ndarray:
        chunk = self.blob[entry.offset : entry.offset + entry.nbytes]
        return np.frombuffer(chunk, dtype="<f4").reshape(entry.shape)


def _config_of(model: nn.Module) -> Dict[str, Any]:
    config = getattr(model, "config", None)
    return dict(config.snapshot()) if hasattr(config, "snapshot") else {}


def save_checkpoint(
    model: nn.Module, path: str | Path, *, seeds: Optional[Mapping[str, int]] = None
) -> Path:
    """Write every parameter of ``model`` in ``named_parameters`` order."""

    lines = [
        MAGIC,
        "config " + json.dumps(_config_of(model), sort_keys=True),
        "seeds " + json.dumps(dict(seeds or {}), sort_keys=True),
    ]
    chunks: List[bytes] = []
    offset = 0
    entries = []
    for name, tensor in model.named_parameters():
        data = tensor.detach().cpu().numpy().astype("<f4", copy=False).tobytes(order="C")
        shape = ",".join(str(extent) for extent in tensor.shape)
        entries.append(f"{name} {shape} {offset}")
        chunks.append(data)
        offset += len(data)
    lines.append(f"params {len(entries)}")
    lines.extend(entries)
    lines.append(f"blob {offset}")

    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with file_path.open("wb") as handle:
        handle.write(("\n".join(lines) + "\n").encode("utf-8"))
        for chunk in chunks:
            handle.write(chunk)
    return file_path


def read_checkpoint(path: str | Path) -> Checkpoint:
    file_path = Path(path)
    if not file_path.exists():
        raise CheckpointError(f"checkpoint not found: {file_path}")
    with file_path.open("rb") as handle:
        try:
            if handle.readline().decode("utf-8").rstrip("\n") != MAGIC:
                raise CheckpointError(f"{file_path}: not a polyrec checkpoint")
            config = json.loads(_field(handle, "config"))
            seeds = json.loads(_field(handle, "seeds"))
            count = int(_field(handle, "params"))
            manifest = tuple(_parse_entry(handle.readline()) for _ in range(count))
            declared = int(_field(handle, "blob"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise CheckpointError(f"{file_path}: corrupt manifest ({exc})") from exc
        blob = handle.read()

    expected = 0
    for entry in manifest:
        if entry.offset != expected:
            raise CheckpointError(f"{file_path}: entry {entry.name} overlaps or leaves a gap")
        expected += entry.nbytes
    if declared != expected or len(blob) != expected:
        raise CheckpointError(
            f"{file_path}: blob holds {len(blob)} bytes, manifest describes {expected}"
        )
    return Checkpoint(manifest=manifest, blob=blob, config=config, seeds=seeds)


def _field(handle, name: str) -> str:
    line = handle.readline().decode("utf-8").rstrip("\n")
    prefix = name + " "
    if not line.startswith(prefix):
        raise ValueError(f"expected {name!r} line, got {line[:40]!r}")
    return line[len(prefix) :]


def _parse_entry(raw: bytes) -> ManifestEntry:
    parts = raw.decode("utf-8").rstrip("\n").split(" ")
    if len(parts) != 3:
        raise ValueError(f"bad manifest line {parts!r}")
    name, shape, offset = parts
    extents = tuple(int(extent) for extent in shape.split(",")) if shape else ()
    return ManifestEntry(name=name, shape=extents, offset=int(offset))


def load_checkpoint(model: nn.Module, path: str | Path) -> Checkpoint:
    """Restore every parameter bit-exactly; the saved config must match the model's."""

    checkpoint = read_checkpoint(path)
    current = _config_of(model)
    differences = {
        key: (checkpoint.config.get(key), current.get(key))
        for key in set(checkpoint.config) | set(current)
        if checkpoint.config.get(key) != current.get(key)
    }
    if differences:
        raise ConfigMismatchError(differences)

    params = dict(model.named_parameters())
    names = [entry.name for entry in checkpoint.manifest]
    if sorted(names) != sorted(params):
        missing = sorted(set(params) - set(names))
        extra = sorted(set(names) - set(params))
        raise CheckpointError(f"parameter sets differ (missing={missing}, unexpected={extra})")
    with torch.no_grad():
        for entry in checkpoint.manifest:
            target = params[entry.name]
            if tuple(target.shape) != entry.shape:
                raise CheckpointError(
                    f"{entry.name}: checkpoint shape {list(entry.shape)} vs model {list(target.shape)}"
                )
            values = torch.from_numpy(checkpoint.array(entry).copy())
            target.copy_(values.to(target.dtype))
    return checkpoint


__all__ = ["Checkpoint", "ManifestEntry", "load_checkpoint", "read_checkpoint", "save_checkpoint"]
