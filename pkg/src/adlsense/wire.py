"""Binary tensor container: one JSON header line, raw f32 payloads, JSON trailer.

Shared by feature bundles and fusion weights. The header declares named
tensors with dtype and shape; payloads follow in header order as raw
little-endian row-major 32-bit floats. An optional trailing JSON line carries
non-tensor data (object detections, for feature files).

Encoding is canonical (sorted header keys, fixed tensor order supplied by the
caller), so writing the same content twice produces byte-identical files.
"""

from __future__ import annotations

import json
from typing import Mapping

import numpy as np

from .errors import FileFormatError

WIRE_DTYPE = np.dtype("<f4")


class WireError(FileFormatError):
    """Base for tensor-container format violations."""


class VersionMismatchError(WireError):
    pass


class ShapeMismatchError(WireError):
    pass


class TruncatedPayloadError(WireError):
    pass


def write_tensor_file(
    path,
    format_tag: str,
    tensors: Mapping[str, np.ndarray],
    extra_header: dict | None = None,
    trailer: dict | None = None,
    version: int = 1,
) -> None:
    """Write named tensors plus optional trailer. Tensor order is preserved."""
    header: dict = {"format": format_tag, "version": version}
    if extra_header:
        header.update(extra_header)
    header["tensors"] = [
        {"name": name, "dtype": "f32", "shape": list(arr.shape)}
        for name, arr in tensors.items()
    ]
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype=WIRE_DTYPE)
            fh.write(data.tobytes())
        if trailer is not None:
            fh.write(json.dumps(trailer, sort_keys=True, separators=(",", ":")).encode())
            fh.write(b"\n")


def read_tensor_file(
    path,
    format_tag: str,
    version: int = 1,
    trailer_expected: bool = False,
    expected_shapes: Mapping[str, tuple[int, ...]] | None = None,
) -> tuple[dict, dict[str, np.ndarray], dict | None]:
    """Read a tensor container; returns (header, tensors by name, trailer).

    When ``expected_shapes`` is given, declared header shapes are validated
    against it before any payload is interpreted, so a wrong declaration is
    reported as a shape mismatch rather than downstream misalignment.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    newline = blob.find(b"\n")
    if newline < 0:
        raise WireError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"{path}: bad header: {exc}") from exc

    if header.get("format") != format_tag:
        raise WireError(
            f"{path}: expected format {format_tag!r}, found {header.get('format')!r}"
        )
    if header.get("version") != version:
        raise VersionMismatchError(
            f"{path}: unsupported version {header.get('version')!r}, expected {version}"
        )
    declared = header.get("tensors")
    if not isinstance(declared, list):
        raise WireError(f"{path}: header missing tensor declarations")
    if expected_shapes is not None:
        declared_names = {entry.get("name") for entry in declared}
        for name, shape in expected_shapes.items():
            if name not in declared_names:
                raise WireError(f"{path}: missing tensor {name!r}")
        for entry in declared:
            name = entry.get("name")
            if name in expected_shapes:
                found = tuple(int(d) for d in entry.get("shape", ()))
                if found != tuple(expected_shapes[name]):
                    raise ShapeMismatchError(
                        f"{path}: tensor {name!r}: expected shape "
                        f"{tuple(expected_shapes[name])}, declared {found}"
                    )

    offset = newline + 1
    tensors: dict[str, np.ndarray] = {}
    for entry in declared:
        name = entry.get("name")
        shape = tuple(int(d) for d in entry.get("shape", ()))
        if entry.get("dtype") != "f32":
            raise WireError(f"{path}: tensor {name!r}: unsupported dtype {entry.get('dtype')!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * WIRE_DTYPE.itemsize
        end = offset + nbytes
        if end > len(blob):
            raise TruncatedPayloadError(
                f"{path}: tensor {name!r}: need bytes [{offset}, {end}) "
                f"but file holds {len(blob)} bytes"
            )
        tensors[name] = np.frombuffer(blob[offset:end], dtype=WIRE_DTYPE).reshape(shape)
        offset = end

    trailer: dict | None = None
    rest = blob[offset:]
    if rest.strip():
        try:
            trailer = json.loads(rest.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WireError(
                f"{path}: bad trailer at byte offset {offset}: {exc}"
            ) from exc
    if trailer_expected and trailer is None:
        raise TruncatedPayloadError(
            f"{path}: expected trailer record after byte offset {offset}"
        )
    return header, tensors, trailer


def require_shape(name: str, arr: np.ndarray, shape: tuple[int, ...], path="") -> np.ndarray:
    if tuple(arr.shape) != shape:
        where = f"{path}: " if path else ""
        raise ShapeMismatchError(
            f"{where}tensor {name!r}: expected shape {shape}, found {tuple(arr.shape)}"
        )
    return arr
