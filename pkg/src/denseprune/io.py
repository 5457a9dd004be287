"""Model files, JSON artifacts and atomic writes.

Binary model layout (all integers little-endian)::

    magic   4 bytes  b"DPNN"
    version u16
    task    u8       0 classification, 1 regression
    n_out   u32
    layers  u32
    per layer:
        in_dim u32, out_dim u32, activation u8,
        weights f64[in_dim*out_dim] row-major, bias f64[out_dim]
    sha256  32 bytes over everything above

The text encoding is JSON with the same fields. Python's float repr round
trips exactly, so both encodings reproduce weights bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from denseprune.nn import ACTIVATIONS, DenseLayer, DenseNetwork, ShapeError, TaskKind

MAGIC = b"DPNN"
FORMAT_VERSION = 1
TEXT_FORMAT = "denseprune-model"
TASKS = ("classification", "regression")
_HEADER = struct.Struct("<4sHBII")
_LAYER = struct.Struct("<IIB")
_DIGEST = 32


class ModelFormatError(ValueError):
    """A model file cannot be decoded."""


class VersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError, ShapeError):
    pass


def atomic_write(path, data) -> Path:
    """Write ``data`` (bytes or str) to a temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _layer_tuples(net: DenseNetwork):
    return [(l.weights, l.bias, l.activation) for l in net.layers]


def encode_binary(task: TaskKind, layers) -> bytes:
    """Serialise ``[(weights, bias, activation), ...]`` without validating the chain."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, TASKS.index(task.kind), task.n_outputs, len(layers))]
    for w, b, act in layers:
        w = np.ascontiguousarray(w, dtype="<f8")
        b = np.ascontiguousarray(b, dtype="<f8")
        parts.append(_LAYER.pack(w.shape[0], w.shape[1], ACTIVATIONS.index(act)))
        parts.append(w.tobytes(order="C"))
        parts.append(b.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def _assemble(task: TaskKind, raw_layers) -> DenseNetwork:
    for i in range(len(raw_layers) - 1):
        out_dim = raw_layers[i][0].shape[1]
        in_dim = raw_layers[i + 1][0].shape[0]
        if out_dim != in_dim:
            raise ModelShapeError(
                f"layer {i} has out_dim {out_dim} but layer {i + 1} has in_dim {in_dim}"
            )
    if raw_layers and raw_layers[-1][0].shape[1] != task.n_outputs:
        raise ModelShapeError(
            f"layer {len(raw_layers) - 1} has out_dim {raw_layers[-1][0].shape[1]}, "
            f"task declares {task.n_outputs} outputs"
        )
    try:
        return DenseNetwork([DenseLayer(w, b, a) for w, b, a in raw_layers], task)
    except ShapeError as exc:
        raise ModelShapeError(str(exc)) from exc


def decode_binary(blob: bytes) -> DenseNetwork:
    if len(blob) < _HEADER.size + _DIGEST:
        raise ChecksumError("file too short to hold a header and checksum (truncated?)")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if body[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch (file truncated or corrupted)")
    magic, version, task_id, n_out, n_layers = _HEADER.unpack_from(body, 0)
    if version != FORMAT_VERSION:
        raise VersionError(f"model format version {version}, this build reads {FORMAT_VERSION}")
    if task_id >= len(TASKS):
        raise ModelFormatError(f"unknown task id {task_id}")
    task = TaskKind(TASKS[task_id], n_out)
    pos = _HEADER.size
    raw = []
    for i in range(n_layers):
        if pos + _LAYER.size > len(body):
            raise ModelFormatError(f"layer {i} header runs past the end of the file")
        in_dim, out_dim, act_id = _LAYER.unpack_from(body, pos)
        pos += _LAYER.size
        if act_id >= len(ACTIVATIONS):
            raise ModelFormatError(f"layer {i} has unknown activation id {act_id}")
        nw, nb = in_dim * out_dim, out_dim
        end = pos + 8 * (nw + nb)
        if end > len(body):
            raise ModelShapeError(f"layer {i} declares {in_dim}x{out_dim} but the file is too short")
        w = np.frombuffer(body, dtype="<f8", count=nw, offset=pos).reshape(in_dim, out_dim)
        b = np.frombuffer(body, dtype="<f8", count=nb, offset=pos + 8 * nw)
        raw.append((w.astype(np.float64), b.astype(np.float64), ACTIVATIONS[act_id]))
        pos = end
    if pos != len(body):
        raise ModelFormatError(f"{len(body) - pos} trailing bytes after the last layer")
    return _assemble(task, raw)


def _text_payload(task: TaskKind, layers) -> dict:
    return {
        "format": TEXT_FORMAT,
        "version": FORMAT_VERSION,
        "task": task.kind,
        "n_outputs": task.n_outputs,
        "layers": [
            {
                "in_dim": int(np.shape(w)[0]),
                "out_dim": int(np.shape(w)[1]),
                "activation": act,
                "weights": np.asarray(w, dtype=np.float64).tolist(),
                "bias": np.asarray(b, dtype=np.float64).tolist(),
            }
            for w, b, act in layers
        ],
    }


def _text_digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def encode_text(task: TaskKind, layers) -> str:
    payload = _text_payload(task, layers)
    payload["sha256"] = _text_digest(payload)
    return json.dumps(payload, indent=1) + "\n"


def decode_text(text: str) -> DenseNetwork:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ChecksumError(f"unreadable text model (truncated?): {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != TEXT_FORMAT:
        raise ModelFormatError("not a text model file")
    digest = payload.pop("sha256", None)
    if digest != _text_digest(payload):
        raise ChecksumError("checksum mismatch in text model")
    if payload["version"] != FORMAT_VERSION:
        raise VersionError(f"model format version {payload['version']}, this build reads {FORMAT_VERSION}")
    task = TaskKind(payload["task"], payload["n_outputs"])
    raw = []
    for i, l in enumerate(payload["layers"]):
        w = np.array(l["weights"], dtype=np.float64).reshape(l["in_dim"], l["out_dim"]) if l["in_dim"] * l["out_dim"] else np.zeros((l["in_dim"], l["out_dim"]))
        b = np.array(l["bias"], dtype=np.float64)
        if w.shape != (l["in_dim"], l["out_dim"]) or b.shape != (l["out_dim"],):
            raise ModelShapeError(f"layer {i} arrays do not match its declared {l['in_dim']}x{l['out_dim']}")
        raw.append((w, b, l["activation"]))
    return _assemble(task, raw)


def _is_text(path: Path, fmt: str | None) -> bool:
    if fmt is not None:
        if fmt not in ("binary", "text"):
            raise ValueError("format must be 'binary' or 'text'")
        return fmt == "text"
    return path.suffix.lower() == ".json"


def save_model(net: DenseNetwork, path, fmt: str | None = None) -> Path:
    """Binary by default; ``.json`` paths (or ``fmt="text"``) use the text encoding."""
    path = Path(path)
    if _is_text(path, fmt):
        return atomic_write(path, encode_text(net.task, _layer_tuples(net)))
    return atomic_write(path, encode_binary(net.task, _layer_tuples(net)))


def load_model(path, fmt: str | None = None) -> DenseNetwork:
    path = Path(path)
    blob = path.read_bytes()
    if fmt is None:
        fmt = "binary" if blob[:4] == MAGIC else "text"
    if fmt == "text":
        return decode_text(blob.decode("utf-8", errors="replace"))
    return decode_binary(blob)
