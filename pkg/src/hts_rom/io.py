"""Binary matrix format, artifact bundles and manifests.

Matrix file layout: magic ``ROMMAT1\\0`` (8 bytes), rows and cols as
little-endian u32, rows*cols little-endian f64 in column-major order, then a
CRC32 (u32, little-endian) of everything before it.
"""
import csv
import hashlib
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ChecksumError, DependencyError, TruncatedFileError

MAGIC = b"ROMMAT1\0"
_HEAD = struct.Struct("<8sII")


def matrix_bytes(A) -> bytes:
    A = np.asarray(A, dtype="<f8")
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("only 1-D or 2-D arrays can be stored")
    body = _HEAD.pack(MAGIC, A.shape[0], A.shape[1]) + A.tobytes(order="F")
    return body + struct.pack("<I", zlib.crc32(body))


def matrix_from_bytes(data: bytes, name="<bytes>") -> np.ndarray:
    if len(data) < 8 or data[:8] != MAGIC:
        if len(data) < 8 and MAGIC.startswith(data):
            raise TruncatedFileError(f"{name}: file ends inside the header")
        raise BadMagicError(f"{name}: not a ROMMAT1 file")
    if len(data) < _HEAD.size:
        raise TruncatedFileError(f"{name}: file ends inside the header")
    _, rows, cols = _HEAD.unpack_from(data)
    need = _HEAD.size + 8 * rows * cols + 4
    if len(data) < need:
        raise TruncatedFileError(f"{name}: expected {need} bytes, found {len(data)}")
    (crc,) = struct.unpack_from("<I", data, need - 4)
    if zlib.crc32(data[:need - 4]) != crc:
        raise ChecksumError(f"{name}: CRC32 mismatch")
    payload = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=_HEAD.size)
    return payload.reshape((rows, cols), order="F").astype(float)


def write_matrix(path, A):
    Path(path).write_bytes(matrix_bytes(A))


def read_matrix(path) -> np.ndarray:
    return matrix_from_bytes(Path(path).read_bytes(), name=str(path))


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o)}")


def csv_hash(path, drop=()):
    """Hash of a CSV file with the named columns removed (e.g. wall-clock timings)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [k for k, name in enumerate(rows[0]) if name not in drop] if rows else []
    h = hashlib.sha256()
    for row in rows:
        h.update((",".join(row[k] for k in keep) + "\n").encode())
    return h.hexdigest()


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def config_hash(cfg_dict) -> str:
    return hashlib.sha256(canonical_json(cfg_dict).encode()).hexdigest()


class ArtifactDir:
    """A directory of named matrices plus ``meta.json`` and ``manifest.json``.

    ``producer`` names the command that creates the artifact so consumers can
    report which step is missing.
    """

    def __init__(self, path, producer):
        self.path = Path(path)
        self.producer = producer

    def require(self, *names):
        for n in names:
            if not (self.path / n).exists():
                raise DependencyError(str(self.path / n), self.producer)
        return self

    def exists(self):
        return (self.path / "manifest.json").exists()

    def matrix(self, name):
        self.require(name + ".mat")
        return read_matrix(self.path / (name + ".mat"))

    def meta(self):
        self.require("meta.json")
        return read_json(self.path / "meta.json")

    def write(self, matrices: dict, meta: dict, config: dict, inputs: dict, extra=None):
        """Write matrices, metadata and a manifest with hashes of every file.

        ``extra`` maps names of files already written into the directory to a
        hash function (None for ``file_hash``).
        """
        self.path.mkdir(parents=True, exist_ok=True)
        outputs = {}
        for name, A in matrices.items():
            p = self.path / (name + ".mat")
            write_matrix(p, A)
            outputs[p.name] = file_hash(p)
        write_json(self.path / "meta.json", meta)
        outputs["meta.json"] = file_hash(self.path / "meta.json")
        for name, fn in (extra or {}).items():
            outputs[name] = (fn or file_hash)(self.path / name)
        return write_manifest(self.path, self.producer, config, inputs, outputs)


def write_manifest(directory, producer, config, inputs: dict, outputs: dict):
    manifest = {
        "producer": producer,
        "config_hash": config_hash(config),
        "inputs": dict(sorted(inputs.items())),
        "outputs": dict(sorted(outputs.items())),
    }
    write_json(Path(directory) / "manifest.json", manifest)
    return manifest


def manifest_hash(directory) -> str:
    """Hash identifying an artifact: the hash of its manifest file."""
    p = Path(directory) / "manifest.json"
    return file_hash(p) if p.exists() else ""


def output_dir_override(default):
    return Path(os.environ.get("HTS_ROM_OUTPUT_DIR", default))
