"""On-disk tensor container (``.ftsr``) and named-parameter checkpoints.

An ``.ftsr`` file is a one-line JSON header (shape, dtype, byte order)
followed by the raw little-endian float64 payload. A checkpoint is a
directory of one ``.ftsr`` per parameter plus ``manifest.json`` recording
names, shapes, the seed, and a hash of the generating config.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .nn import Parameter
from .tensor import Tensor

FTSR_SUFFIX = ".ftsr"
MANIFEST_NAME = "manifest.json"


def write_tensor(path: str | Path, values) -> None:
    arr = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    if arr.ndim > 0:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
    header = json.dumps(
        {"shape": list(arr.shape), "dtype": "f64", "byte_order": "little"}
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("ascii"))
        if header.get("dtype") != "f64" or header.get("byte_order") != "little":
            raise ValueError(f"unsupported tensor header in {path}: {header}")
        shape = tuple(int(s) for s in header["shape"])
        payload = fh.read()
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(payload, dtype="<f8", count=count)
    if arr.size != count:
        raise ValueError(f"{path}: payload holds {arr.size} values, header says {count}")
    return arr.reshape(shape).astype(np.float64)


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(
    directory: str | Path, params: list[Parameter], seed: int, config: dict
) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ValueError("duplicate parameter names in checkpoint")
    manifest = {
        "names": names,
        "shapes": {p.name: list(p.shape) for p in params},
        "seed": int(seed),
        "config_hash": config_hash(config),
        "config": config,
    }
    for p in params:
        write_tensor(out / (p.name + FTSR_SUFFIX), p.data)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    root = Path(directory)
    manifest = json.loads((root / MANIFEST_NAME).read_text())
    arrays: dict[str, np.ndarray] = {}
    for name in manifest["names"]:
        arr = read_tensor(root / (name + FTSR_SUFFIX))
        expect = tuple(manifest["shapes"][name])
        if arr.shape != expect:
            raise ValueError(f"{name}: stored shape {arr.shape} != manifest {expect}")
        arrays[name] = arr
    return arrays, manifest


def restore_parameters(params: list[Parameter], arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into an existing parameter list, by name."""
    for p in params:
        if p.name not in arrays:
            raise KeyError(f"checkpoint is missing parameter {p.name!r}")
        if arrays[p.name].shape != p.shape:
            raise ValueError(
                f"{p.name}: checkpoint shape {arrays[p.name].shape} != param {p.shape}"
            )
        p.tensor.data[...] = arrays[p.name]
