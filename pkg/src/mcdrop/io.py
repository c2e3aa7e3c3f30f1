"""On-disk formats: checkpoints, dataset tensors, label and loss CSVs.

Checkpoint (``.opn``)::

    b"OPN1" | u32 version | u64 header length L | L bytes UTF-8 JSON header
    | float32 little-endian weights, tensors in header order

Dataset tensor (``.opt``)::

    b"OPT1" | u32 version | u64 sample count | u32 rank | rank x u64 dims
    | float32 little-endian values, row-major

Labels live next to the tensor file in ``<stem>.labels.csv`` with columns
``sample_index,label_0,...``. All integers are little-endian.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from mcdrop.errors import FormatError
from mcdrop.network import SplitNetwork, has_params, layer_from_dict, layer_to_dict

CHECKPOINT_MAGIC = b"OPN1"
DATASET_MAGIC = b"OPT1"
VERSION = 1


def _dump_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(net: SplitNetwork, base_seed: int | None = None) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for i, p in enumerate(net.params):
        if p is None:
            continue
        for name in sorted(p):
            data = p[name].astype("<f4").tobytes()
            tensors.append({"layer": i, "name": name, "shape": list(p[name].shape), "offset": offset})
            chunks.append(data)
            offset += len(data)
    header = _dump_json({
        "base_seed": base_seed,
        "input_shape": list(net.input_shape),
        "layers": [layer_to_dict(layer) for layer in net.layers],
        "split": net.split,
        "tensors": tensors,
    })
    return CHECKPOINT_MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(chunks)


def save_checkpoint(path, net: SplitNetwork, base_seed: int | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(net, base_seed))


def load_checkpoint(path) -> tuple[SplitNetwork, dict]:
    """Return the network (float64 weights) and the parsed JSON header."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 16:
        raise FormatError(f"{path}: not an OPN1 checkpoint")
    version, length = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16 : 16 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint header ({exc})") from None
    data = raw[16 + length :]
    layers = [layer_from_dict(d) for d in header["layers"]]
    params: list = [None] * len(layers)
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        end = t["offset"] + 4 * count
        if end > len(data):
            raise FormatError(f"{path}: tensor {t['layer']}/{t['name']} runs past end of file")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=t["offset"]).astype(np.float64)
        params[t["layer"]] = {**(params[t["layer"]] or {}), t["name"]: arr.reshape(t["shape"])}
    for i, layer in enumerate(layers):
        if has_params(layer) != (params[i] is not None):
            raise FormatError(f"{path}: parameter table does not match layer {i} ({layer.kind})")
    net = SplitNetwork(tuple(header["input_shape"]), tuple(layers), int(header["split"]), tuple(params))
    return net, header


# --------------------------------------------------------------------------
# datasets


def labels_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".labels.csv")


def save_dataset(path, x: np.ndarray, y: np.ndarray) -> None:
    path = Path(path)
    x = np.asarray(x)
    shape = x.shape[1:]
    head = DATASET_MAGIC + struct.pack("<IQI", VERSION, x.shape[0], len(shape)) + struct.pack(f"<{len(shape)}Q", *shape)
    path.write_bytes(head + x.astype("<f4").tobytes())
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_index", *(f"label_{c}" for c in range(y.shape[1]))])
    for i, row in enumerate(np.asarray(y)):
        w.writerow([i, *(int(v) for v in row)])
    labels_path(path).write_text(buf.getvalue())


def load_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != DATASET_MAGIC or len(raw) < 20:
        raise FormatError(f"{path}: not an OPT1 dataset file")
    version, count, rank = struct.unpack_from("<IQI", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    dims = struct.unpack_from(f"<{rank}Q", raw, 20)
    start = 20 + 8 * rank
    expected = count * int(np.prod(dims, dtype=np.int64))
    if len(raw) - start != 4 * expected:
        raise FormatError(f"{path}: expected {expected} float32 values, found {(len(raw) - start) / 4:g}")
    x = np.frombuffer(raw, dtype="<f4", offset=start).astype(np.float64).reshape(count, *dims)
    lpath = labels_path(path)
    with open(lpath, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "sample_index":
        raise FormatError(f"{lpath}: missing header")
    body = rows[1:]
    if len(body) != count or any(int(r[0]) != i for i, r in enumerate(body)):
        raise FormatError(f"{lpath}: expected sample_index 0..{count - 1}")
    y = np.array([[float(v) for v in r[1:]] for r in body]).reshape(count, len(rows[0]) - 1)
    return x, y


def label_hash(y: np.ndarray) -> str:
    """Stable fingerprint of a label matrix, used to check comparability."""
    y = np.asarray(y)
    h = hashlib.sha256(struct.pack("<QQ", *y.shape))
    h.update(y.astype("<i1").tobytes())
    return h.hexdigest()


def write_csv(path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
