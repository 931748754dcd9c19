"""Serialization helpers shared by the artifact writers."""

import base64
import csv
import hashlib
import json

import numpy as np


def encode_array(arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    return {"shape": list(arr.shape), "dtype": "float32-le",
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def decode_array(obj):
    if obj.get("dtype", "float32-le") != "float32-le":
        raise ValueError(f"unsupported array dtype {obj['dtype']!r}")
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(obj["shape"])


def fmt_real(value):
    """Reals in reports carry 9 significant digits."""
    if value is None:
        return None
    value = float(value)
    if not np.isfinite(value):
        return str(value)
    return float(f"{value:.9g}")


def round_reals(obj):
    if isinstance(obj, dict):
        return {k: round_reals(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_reals(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return fmt_real(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj):
    return json.dumps(round_reals(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps_json(obj))


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.9g}" if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()
