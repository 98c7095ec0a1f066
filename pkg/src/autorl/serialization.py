"""JSON container helpers shared by net, agent and replay checkpoints.

Arrays are stored row-major as little-endian bytes, base64 encoded, together
with dtype and shape so a blob is readable without this package.
"""

import base64
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def encode_array(a):
    a = np.ascontiguousarray(a)
    le = a.astype(a.dtype.newbyteorder("<"), copy=False)
    return {
        "dtype": le.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(le.tobytes(order="C")).decode("ascii"),
    }


def decode_array(blob):
    raw = base64.b64decode(blob["data"])
    a = np.frombuffer(raw, dtype=np.dtype(blob["dtype"])).reshape(blob["shape"])
    return a.astype(a.dtype.newbyteorder("="), copy=True)


def check_header(blob, kind):
    if blob.get("format") != kind:
        raise ValueError(f"expected a {kind!r} blob, got {blob.get('format')!r}")
    version = blob.get("version")
    if version is None:
        raise ValueError("checkpoint has no version field")
    if version > FORMAT_VERSION:
        raise ValueError(f"checkpoint version {version} is newer than supported {FORMAT_VERSION}")


def write_json(path, blob):
    path = Path(path)
    path.write_text(json.dumps(blob))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
