"""``.vrm`` checkpoints: length-prefixed JSON header + float32 parameter blob.

Layout::

    bytes 0-7    ASCII magic ``VRMODEL1``
    bytes 8-11   little-endian uint32 header length N
    next N       UTF-8 JSON header (arch, num_classes, window_shape, seed,
                 version, n_params, ordered [name, shape] params)
    rest         little-endian float32 parameters in header order
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import VoladvError
from .models import ARCHITECTURES

MAGIC = b"VRMODEL1"
FORMAT_VERSION = 1


class CheckpointError(VoladvError, ValueError):
    kind = "checkpoint"


def save_model(model, path):
    path = Path(path)
    vec = model.param_vector()
    blob = vec.astype("<f4")
    if not np.array_equal(blob.astype(np.float64), vec):
        raise CheckpointError(f"parameters of {model.arch} are not float32-representable; cannot save {path}")
    header = {
        "arch": model.arch,
        "num_classes": model.num_classes,
        "window_shape": list(model.window_shape),
        "seed": model.seed,
        "version": FORMAT_VERSION,
        "n_params": int(vec.size),
        "params": [[k, list(v.shape)] for k, v in model.params.items()],
    }
    raw = json.dumps(header, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<I", len(raw)) + raw + blob.tobytes())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_model(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a .vrm checkpoint (bad magic)")
    try:
        (n,) = struct.unpack("<I", data[8:12])
        header = json.loads(data[12:12 + n])
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({exc})") from None
    missing = {"arch", "num_classes", "window_shape", "n_params", "params"} - set(header)
    if missing:
        raise CheckpointError(f"{path}: checkpoint header lacks {sorted(missing)}")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    cls = ARCHITECTURES.get(header["arch"])
    if cls is None:
        raise CheckpointError(f"{path}: unknown architecture {header['arch']!r}")
    vec = np.frombuffer(data[12 + n:], dtype="<f4").astype(np.float64)
    if vec.size != header["n_params"]:
        raise CheckpointError(f"{path}: expected {header['n_params']} parameters, found {vec.size}")
    params, i = {}, 0
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        params[name] = vec[i:i + size].reshape(shape)
        i += size
    return cls(header["num_classes"], header["window_shape"], params, seed=header["seed"])
