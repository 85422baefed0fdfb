"""Volume files: a single-file NIfTI-1 subset and a raw float32 + JSON format.

Only what the experiments need is supported: little-endian, uncompressed
``.nii`` with int16 or float32 voxels. Orientation fields are written as
identity and ignored on read.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, VoladvError
from .volumes import check_labels, check_same_shape

HEADER_SIZE = 348
VOX_OFFSET = 352
DT_INT16 = 4
DT_FLOAT32 = 16
_DTYPES = {DT_INT16: np.dtype("<i2"), DT_FLOAT32: np.dtype("<f4")}


class VolumeFileError(VoladvError, ValueError):
    kind = "volume-file"


class BadMagicError(VolumeFileError):
    kind = "bad-magic"


class UnsupportedFormatError(VolumeFileError):
    kind = "unsupported-format"


class UnsupportedDatatypeError(VolumeFileError):
    kind = "unsupported-datatype"


class CompressedFileError(VolumeFileError):
    kind = "unsupported-compression"


class TruncatedFileError(VolumeFileError):
    kind = "truncated"


def minmax_normalize(v):
    """Map a volume to [0, 1] by its own min and max; constant volumes become 0.5."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if not hi > lo:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise VolumeFileError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data):
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise VolumeFileError(f"cannot write {path}: {exc}") from exc


def read_nifti_header(data, path="<bytes>"):
    if data[:2] == b"\x1f\x8b":
        raise CompressedFileError(f"{path}: gzip-compressed NIfTI is not supported; decompress it first")
    if len(data) < HEADER_SIZE:
        raise TruncatedFileError(f"{path}: {len(data)} bytes is shorter than a NIfTI-1 header")
    (size,) = struct.unpack_from("<i", data, 0)
    if size != HEADER_SIZE:
        if struct.unpack_from(">i", data, 0)[0] == HEADER_SIZE:
            raise UnsupportedFormatError(f"{path}: big-endian NIfTI is not supported")
        raise BadMagicError(f"{path}: sizeof_hdr is {size}, expected {HEADER_SIZE}")
    magic = data[344:348]
    if magic == b"ni1\x00":
        raise UnsupportedFormatError(f"{path}: two-file NIfTI (.hdr/.img) is not supported")
    if magic != b"n+1\x00":
        raise BadMagicError(f"{path}: bad NIfTI magic {magic!r}")
    dim = struct.unpack_from("<8h", data, 40)
    datatype, bitpix = struct.unpack_from("<2h", data, 70)
    vox_offset, slope, inter = struct.unpack_from("<3f", data, 108)
    return {
        "dim": list(dim),
        "datatype": datatype,
        "bitpix": bitpix,
        "vox_offset": vox_offset,
        "scl_slope": slope,
        "scl_inter": inter,
        "magic": magic.rstrip(b"\x00").decode("ascii"),
    }


def _spatial_shape(dim, path):
    ndim = dim[0]
    if ndim not in (3, 4) or (ndim == 4 and dim[4] != 1):
        raise UnsupportedFormatError(f"{path}: expected a 3D volume, got dim {dim[:ndim + 1]}")
    shape = tuple(dim[1:4])
    if min(shape) < 1:
        raise UnsupportedFormatError(f"{path}: non-positive dimension in {shape}")
    return shape


def read_nifti(path, normalize=False):
    """Load a volume or label volume.

    float32 files come back as float64 volumes (min-max normalized when
    ``normalize`` is true). int16 files without intensity scaling come back
    as int64 label volumes; scaled int16 files are treated as intensities.
    """
    data = _read_bytes(path)
    hdr = read_nifti_header(data, path)
    shape = _spatial_shape(hdr["dim"], path)
    if hdr["datatype"] not in _DTYPES:
        raise UnsupportedDatatypeError(
            f"{path}: datatype code {hdr['datatype']} is not supported (int16=4, float32=16)")
    dtype = _DTYPES[hdr["datatype"]]
    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        raise UnsupportedFormatError(f"{path}: vox_offset {hdr['vox_offset']} lies inside the header")
    count = int(np.prod(shape))
    end = offset + count * dtype.itemsize
    if len(data) < end:
        raise TruncatedFileError(f"{path}: payload needs {end} bytes, file has {len(data)}")
    values = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape, order="F")
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    scaled = slope not in (0.0, 1.0) or inter != 0.0
    if dtype == _DTYPES[DT_INT16] and not scaled:
        return values.astype(np.int64)
    out = values.astype(np.float64)
    if scaled:
        out = out * (slope if slope != 0.0 else 1.0) + inter
    return minmax_normalize(out) if normalize else out


def _header(shape, datatype, bitpix):
    hdr = bytearray(VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, bitpix)
    struct.pack_into("<8f", hdr, 76, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, float(VOX_OFFSET), 1.0, 0.0)
    struct.pack_into("<2h", hdr, 252, 1, 1)  # qform_code, sform_code: scanner
    # quaternion and offsets stay zero; sform rows are the identity
    struct.pack_into("<12f", hdr, 280, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def write_nifti(array, path, labels=None):
    """Write float32 for volumes or int16 for label volumes.

    Integer arrays are written as labels unless ``labels`` says otherwise.
    """
    a = np.asarray(array)
    if a.ndim != 3:
        raise ConfigError(f"can only write 3D volumes, got shape {a.shape}")
    if labels is None:
        labels = np.issubdtype(a.dtype, np.integer) or a.dtype == bool
    if labels:
        a = check_labels(a)
        if a.size and a.max() > np.iinfo(np.int16).max:
            raise ConfigError(f"label {a.max()} does not fit in int16")
        payload, dt = a.astype("<i2"), DT_INT16
    else:
        payload, dt = a.astype("<f4"), DT_FLOAT32
    body = payload.tobytes(order="F")
    _write_bytes(path, _header(a.shape, dt, payload.dtype.itemsize * 8) + body)


# --------------------------------------------------------------------------
# raw little-endian blob + JSON sidecar

_RAW_DTYPES = {"float32": "<f4", "int16": "<i2"}


def sidecar_path(path):
    return Path(str(path) + ".json")


def write_raw(array, path, lineage=None):
    """Write ``path`` (C-order blob) and ``path.json`` (shape, dtype, lineage)."""
    a = np.asarray(array)
    name = "int16" if np.issubdtype(a.dtype, np.integer) else "float32"
    meta = {"shape": list(a.shape), "dtype": name, "byte_order": "little", "lineage": lineage or {}}
    _write_bytes(path, a.astype(_RAW_DTYPES[name]).tobytes())
    _write_bytes(sidecar_path(path), (json.dumps(meta, sort_keys=True, indent=2) + "\n").encode())


def read_raw(path):
    """Return ``(array, meta)``; floats as float64, integers as int64."""
    try:
        meta = json.loads(_read_bytes(sidecar_path(path)))
        shape = tuple(int(n) for n in meta["shape"])
        dtype = np.dtype(_RAW_DTYPES[meta["dtype"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise UnsupportedFormatError(f"{sidecar_path(path)}: malformed raw sidecar ({exc})") from None
    data = _read_bytes(path)
    need = int(np.prod(shape)) * dtype.itemsize
    if len(data) != need:
        raise TruncatedFileError(f"{path}: expected {need} bytes for shape {shape}, found {len(data)}")
    a = np.frombuffer(data, dtype=dtype).reshape(shape)
    return a.astype(np.int64 if dtype.kind == "i" else np.float64), meta


def read_volume(path, normalize=False):
    """Dispatch on extension: ``.nii`` or raw (anything with a sidecar)."""
    p = Path(path)
    if p.suffix == ".gz":
        raise CompressedFileError(f"{p}: gzip-compressed volumes are not supported")
    if p.suffix == ".nii":
        return read_nifti(p, normalize=normalize)
    if sidecar_path(p).exists():
        a, _ = read_raw(p)
        return minmax_normalize(a) if normalize and a.dtype.kind == "f" else a
    raise UnsupportedFormatError(f"{p}: expected a .nii file or a raw blob with a .json sidecar")


def write_volume(array, path, labels=None, lineage=None):
    p = Path(path)
    if p.suffix == ".nii":
        write_nifti(array, p, labels=labels)
    else:
        if labels is not None:
            array = np.asarray(array).astype(np.int64 if labels else np.float32)
        write_raw(array, p, lineage=lineage)


# --------------------------------------------------------------------------
# dataset manifests


def load_manifest_pairs(pairs, base_dir=".", normalize="minmax"):
    """Load ``[(image, label), ...]`` relative to ``base_dir``."""
    if normalize not in ("minmax", "none"):
        raise ConfigError(f"normalization must be 'minmax' or 'none', got {normalize!r}")
    samples = []
    for entry in pairs:
        try:
            image, label = (entry["image"], entry["label"]) if isinstance(entry, dict) else entry
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"manifest entry {entry!r} is not an (image, label) pair") from None
        ip, lp = Path(base_dir) / image, Path(base_dir) / label
        for p in (ip, lp):
            if not p.exists():
                raise ConfigError(f"manifest entry {p} does not exist")
        x = read_volume(ip, normalize=normalize == "minmax")
        y = check_labels(read_volume(lp), name=str(lp))
        check_same_shape(x.shape, y.shape, f"image {ip} and label {lp}")
        samples.append((np.asarray(x, dtype=np.float64), y))
    if not samples:
        raise ConfigError("dataset manifest lists no samples")
    return samples
