"""Binary model files.

Layout: ``b"GRSL"`` | u32 version | u32 header length | JSON header |
parameters as little-endian float32 in layer order.
"""

import json
import struct

import numpy as np

from grasplab.nn.model import ModelCheckpoint, param_shapes

MAGIC = b"GRSL"
VERSION = 1


class FormatError(ValueError):
    pass


def dumps_model(model):
    header = model.arch_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(header)), header]
    parts += [np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.params]
    return b"".join(parts)


def loads_model(blob):
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError("not a GRSL model file (bad magic at byte 0)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported model format version {version} at byte 4")
    if 12 + hlen > len(blob):
        raise FormatError(f"header truncated at byte {len(blob)}")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    arch = tuple(header["arch"])
    offset = 12 + hlen
    params = []
    for shape in param_shapes(arch):
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise FormatError(f"parameter payload truncated at byte {len(blob)} (needed {end})")
        params.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
                      .astype(np.float32).reshape(shape))
        offset = end
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after parameters at byte {offset}")
    return ModelCheckpoint(arch, tuple(params), header["num_classes"], tuple(header["input_shape"]))


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())
