"""Named-tensor checkpoint archive.

One file per checkpoint: a plain-text manifest (name, shape, dtype), a
``DATA`` sentinel line, then the little-endian float64 payloads
concatenated in manifest order.
"""

import numpy as np

from .errors import Error

_MAGIC = b"NAMED-TENSORS 1"


class CheckpointError(Error):
    pass


def save_checkpoint(path, tensors: dict) -> None:
    names = list(tensors)
    with open(path, "wb") as fh:
        fh.write(_MAGIC + b"\n")
        fh.write(f"{len(names)}\n".encode())
        for name in names:
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.ndim == 0:
                raise CheckpointError(f"{name}: zero-dimensional tensors not supported")
            if " " in name:
                raise CheckpointError(f"tensor name may not contain spaces: {name!r}")
            dims = ",".join(str(d) for d in arr.shape)
            fh.write(f"{name} {dims} float64\n".encode())
        fh.write(b"DATA\n")
        for name in names:
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        if fh.readline().rstrip(b"\n") != _MAGIC:
            raise CheckpointError(f"{path}: not a named-tensor checkpoint")
        try:
            count = int(fh.readline())
        except ValueError:
            raise CheckpointError(f"{path}: bad tensor count") from None
        manifest = []
        for _ in range(count):
            fields = fh.readline().rstrip(b"\n").decode().split(" ")
            if len(fields) != 3 or fields[2] != "float64":
                raise CheckpointError(f"{path}: malformed manifest line {fields!r}")
            name, dims, _ = fields
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
            manifest.append((name, shape))
        if fh.readline().rstrip(b"\n") != b"DATA":
            raise CheckpointError(f"{path}: missing DATA sentinel")
        out = {}
        for name, shape in manifest:
            n = int(np.prod(shape))
            raw = fh.read(n * 8)
            if len(raw) != n * 8:
                raise CheckpointError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        return out
