"""Single-file checkpoint container.

Layout: magic bytes, a little-endian uint64 manifest length, a JSON
manifest (format version, model config echo, array directory, free-form
meta), then the raw array payload. Parameters are little-endian float32;
auxiliary arrays (optimizer moments, counters) record their own dtype.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import VersionError
from .model import TrackModel
from .nets import DenoiserConfig

MAGIC = b"TCKPT1\n"
FORMAT_VERSION = (1, 0)

_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "u1": "|u1"}


@dataclass
class CheckpointBundle:
    model_config: DenoiserConfig
    max_episode_len: int
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def _dtype_code(arr: np.ndarray) -> str:
    for code, np_dtype in _DTYPES.items():
        if arr.dtype == np.dtype(np_dtype):
            return code
    raise VersionError(f"unsupported array dtype {arr.dtype}; expected one of {list(_DTYPES)}")


def save_checkpoint(
    path: str | Path,
    model: TrackModel,
    meta: dict | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        arrays[f"model.{name}"] = tensor.detach().cpu().numpy().astype("<f4", copy=False)
    for name, arr in (extra_arrays or {}).items():
        if name in arrays:
            raise ValueError(f"duplicate array name {name!r}")
        arrays[name] = np.asarray(arr)

    directory = []
    offset = 0
    for name, arr in arrays.items():
        code = _dtype_code(arr)
        arr = np.ascontiguousarray(arr.astype(_DTYPES[code], copy=False))
        arrays[name] = arr
        directory.append({
            "name": name, "dtype": code, "shape": list(arr.shape),
            "offset": offset, "nbytes": arr.nbytes,
        })
        offset += arr.nbytes

    manifest = {
        "format_version": list(FORMAT_VERSION),
        "model_config": {
            "base_channels": model.config.base_channels,
            "depth": model.config.depth,
            "attention_heads": model.config.attention_heads,
            "head_dim": model.config.head_dim,
            "cond_dim": model.config.cond_dim,
            "horizon": model.config.horizon,
        },
        "max_episode_len": model.encoder.max_episode_len,
        "arrays": directory,
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for arr in arrays.values():
            f.write(arr.tobytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    with open(path, "rb") as f:
        head = f.read(len(MAGIC))
        if head != MAGIC:
            raise VersionError(f"{path}: not a checkpoint file (bad magic {head!r})")
        (blob_len,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(blob_len).decode("utf-8"))
        major = manifest.get("format_version", [0])[0]
        if major != FORMAT_VERSION[0]:
            raise VersionError(
                f"{path}: format major version {major} unsupported (reader handles {FORMAT_VERSION[0]})"
            )
        payload = f.read()

    arrays = {}
    for entry in manifest["arrays"]:
        start, n = entry["offset"], entry["nbytes"]
        raw = payload[start : start + n]
        if len(raw) != n:
            raise VersionError(f"{path}: truncated payload for array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"]).copy()

    return CheckpointBundle(
        model_config=DenoiserConfig(**manifest["model_config"]),
        max_episode_len=manifest["max_episode_len"],
        arrays=arrays,
        meta=manifest.get("meta", {}),
    )


def restore_model(bundle: CheckpointBundle) -> TrackModel:
    model = TrackModel(bundle.model_config, max_episode_len=bundle.max_episode_len)
    state = {
        name[len("model."):]: torch.from_numpy(arr)
        for name, arr in bundle.arrays.items()
        if name.startswith("model.")
    }
    model.load_state_dict(state)
    return model


def load_model(path: str | Path) -> tuple[TrackModel, CheckpointBundle]:
    bundle = load_checkpoint(path)
    return restore_model(bundle), bundle
