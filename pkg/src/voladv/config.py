"""Experiment configs: JSON files describing models, data and attacks.

Example::

    {
      "dataset": "phantom",
      "seed": 0,
      "window": [32, 32, 32],
      "overlap": 0.5,
      "models": [{"id": "conv", "path": "conv.vrm", "role": "both"}],
      "data": {"phantom": {"num_classes": 3}, "count": 8, "base_seed": 1000},
      "attacks": [{"name": "pgd", "eps": "8/255", "steps": 20}],
      "bands": [[0, 8], [0, 16]]
    }

``data`` may instead hold ``{"manifest": [{"image": ..., "label": ...}],
"normalize": "minmax"}`` or ``{"manifest": "pairs.json"}``. Relative paths
are resolved against the config file's directory.
"""
import json
from pathlib import Path

from .attacks import AttackSpec
from .checkpoint import load_model
from .errors import ConfigError
from .harness import Experiment
from .io import load_manifest_pairs
from .phantom import PhantomSpec, phantom_dataset

ROLES = ("surrogate", "target", "both")
_KEYS = {"dataset", "seed", "window", "overlap", "models", "data", "attacks", "bands", "out"}


def read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def parse_bands(text):
    """``"0:8,16:48"`` -> ``[[0, 8], [16, 48]]``."""
    bands = []
    for part in str(text).split(","):
        try:
            a, b = (int(v) for v in part.split(":"))
        except ValueError:
            raise ConfigError(f"bad band {part!r}; expected lo:hi") from None
        bands.append([a, b])
    return bands


def phantom_spec(d, seed=0):
    d = dict(d)
    allowed = set(PhantomSpec.__dataclass_fields__) - {"seed"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown phantom keys: {sorted(unknown)}")
    for key in ("shape", "blobs", "radius"):
        if key in d:
            d[key] = tuple(d[key])
    return PhantomSpec(seed=seed, **d)


def load_samples(data, base_dir, window=None):
    if not isinstance(data, dict):
        raise ConfigError("'data' must be an object")
    if "manifest" in data:
        pairs = data["manifest"]
        root = Path(base_dir)
        if isinstance(pairs, str):
            listing = read_json(root / pairs)
            root = (root / pairs).parent
            pairs = listing["pairs"] if isinstance(listing, dict) else listing
        return load_manifest_pairs(pairs, root, data.get("normalize", "minmax"))
    if "phantom" in data or "count" in data:
        fields = dict(data.get("phantom", {}))
        if window is not None:
            fields.setdefault("shape", list(window))
        fields = {k: v for k, v in vars(phantom_spec(fields)).items() if k != "seed"}
        count = int(data.get("count", 8))
        if count < 1:
            raise ConfigError(f"phantom count must be >= 1, got {count}")
        return phantom_dataset(count, int(data.get("base_seed", 0)), **fields)
    raise ConfigError("'data' needs either 'manifest' or 'phantom'/'count'")


def load_experiment(cfg, base_dir="."):
    """Validate a config (dict or JSON path) and load models and samples."""
    if not isinstance(cfg, dict):
        base_dir = Path(cfg).parent
        cfg = read_json(cfg)
    unknown = set(cfg) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    overlap = float(cfg.get("overlap", 0.5))
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must lie in [0, 1), got {overlap}")
    entries = cfg.get("models") or []
    if not entries:
        raise ConfigError("config lists no models")
    models, roles, info = {}, {}, {}
    for e in entries:
        try:
            mid, path = str(e["id"]), e["path"]
        except (KeyError, TypeError):
            raise ConfigError(f"model entry {e!r} needs 'id' and 'path'") from None
        role = e.get("role", "both")
        if role not in ROLES:
            raise ConfigError(f"model {mid}: role must be one of {ROLES}, got {role!r}")
        if mid in models:
            raise ConfigError(f"duplicate model id {mid!r}")
        full = Path(base_dir) / path
        if not full.exists():
            raise ConfigError(f"model {mid}: checkpoint {full} does not exist")
        models[mid] = load_model(full)
        roles[mid] = role
        info[mid] = {"arch": models[mid].arch, "path": str(path), "role": role}
    window = tuple(cfg.get("window") or next(iter(models.values())).window_shape)
    for mid, m in models.items():
        if tuple(m.window_shape) != window:
            raise ConfigError(f"model {mid} has window {m.window_shape}, config window is {window}")
    samples = load_samples(cfg.get("data", {"count": 8}), base_dir, window)
    for i, (x, _) in enumerate(samples):
        if x.shape != window:
            raise ConfigError(f"sample {i} has shape {x.shape}; samples must be window-shaped {window}")
    attacks = [a if isinstance(a, AttackSpec) else AttackSpec.from_dict(a)
               for a in cfg.get("attacks") or [{"name": "pgd"}]]
    bands = cfg.get("bands")
    if isinstance(bands, str):
        bands = parse_bands(bands)
    record = {
        "window": list(window),
        "overlap": overlap,
        "models": info,
        "data": cfg.get("data", {"count": 8}),
        "bands": bands,
    }
    return Experiment(models, samples, attacks, seed=int(cfg.get("seed", 0)),
                      dataset=str(cfg.get("dataset", "phantom")), bands=bands, config=record, roles=roles)


def surrogates_and_targets(exp):
    surrogates = [m for m in exp.models if exp.roles.get(m, "both") in ("surrogate", "both")]
    targets = [m for m in exp.models if exp.roles.get(m, "both") in ("target", "both")]
    return surrogates, targets
