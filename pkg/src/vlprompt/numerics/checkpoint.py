"""Checkpoint directory: ``manifest.txt`` (key = value lines) + ``params.bin``.

Manifest layout::

    format = vlprompt-checkpoint/1
    dtype = float32-le
    meta.<key> = <json value>
    param <name> shape=<d0>x<d1>... offset=<byte offset> count=<elements>

``params.bin`` is the concatenation of all parameters as little-endian
float32, in manifest order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "vlprompt-checkpoint/1"
MANIFEST = "manifest.txt"
BLOB = "params.bin"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT}", "dtype = float32-le"]
    for key, value in (meta or {}).items():
        lines.append(f"meta.{key} = {json.dumps(value, sort_keys=True)}")
    offset = 0
    chunks = []
    for name, arr in params.items():
        if any(c.isspace() for c in name):
            raise CheckpointError(f"parameter name {name!r} contains whitespace")
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = "x".join(str(n) for n in arr.shape) or "scalar"
        lines.append(f"param {name} shape={shape} offset={offset} count={arr.size}")
        chunks.append(blob)
        offset += len(blob)
    (path / MANIFEST).write_text("\n".join(lines) + "\n")
    (path / BLOB).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        text = (path / MANIFEST).read_text()
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint file missing: {e.filename}") from e
    params: dict[str, np.ndarray] = {}
    meta: dict = {}
    header: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("param "):
            fields = line.split()
            if len(fields) != 5:
                raise CheckpointError(f"{MANIFEST}:{lineno}: malformed param line")
            name = fields[1]
            kv = dict(f.split("=", 1) for f in fields[2:])
            shape = () if kv["shape"] == "scalar" else tuple(int(n) for n in kv["shape"].split("x"))
            offset, count = int(kv["offset"]), int(kv["count"])
            if int(np.prod(shape)) != count or offset + 4 * count > len(blob):
                raise CheckpointError(f"{MANIFEST}:{lineno}: shape/offset inconsistent with blob for {name}")
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
            params[name] = arr.astype(np.float32)
        else:
            key, sep, value = line.partition(" = ")
            if not sep:
                raise CheckpointError(f"{MANIFEST}:{lineno}: expected 'key = value'")
            if key.startswith("meta."):
                meta[key[5:]] = json.loads(value)
            else:
                header[key] = value
    if header.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
    return params, meta
