"""claimsml: Artifact Store

Binary and JSON artifacts shared by the pipeline stages.

Embedding file:   "CLEM" | u32 version | u32 vocab_size | u32 dim | f32[vocab_size * dim]
Parameter blob:   "CLEM" | u32 version | u32 n_sections | sections...
    section:      u16 name_len | name (UTF-8) | u8 dtype | u8 ndim | u32 dims[ndim] | data

All integers and floats are little-endian. Writers are byte-stable: equal
inputs give equal files.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from claimsml.errors import ArtifactError, VersionError

logger = logging.getLogger(__name__)

MAGIC = b"CLEM"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sII")
_EMBED_HEADER = struct.Struct("<4sIII")

DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i4"): 2,
    np.dtype("<i8"): 3,
}
_CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}


def require_artifact(path: str | Path, what: str) -> Path:
    """Return ``path`` if it exists, else raise ArtifactError naming it."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(path, f"missing {what}; run the stage that produces it first")
    return path


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _check_magic(path: Path, magic: bytes, version: int) -> None:
    if magic != MAGIC:
        raise VersionError(path, f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionError(path, f"unsupported format version {version}, expected {FORMAT_VERSION}")


def check_header(path: str | Path) -> None:
    """Validate magic and version without reading the payload."""
    path = require_artifact(path, "artifact")
    with path.open("rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ArtifactError(path, "truncated header")
    magic, version, _ = _HEADER.unpack(head)
    _check_magic(path, magic, version)


# ── Embedding matrix ─────────────────────────────────────────────────────────

def write_embedding_file(path: str | Path, matrix: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(matrix, dtype="<f4")
    rows, dim = data.shape
    with path.open("wb") as fh:
        fh.write(_EMBED_HEADER.pack(MAGIC, FORMAT_VERSION, rows, dim))
        fh.write(data.tobytes(order="C"))


def read_embedding_file(path: str | Path) -> np.ndarray:
    path = require_artifact(path, "embedding table")
    raw = path.read_bytes()
    if len(raw) < _EMBED_HEADER.size:
        raise ArtifactError(path, "truncated header")
    magic, version, rows, dim = _EMBED_HEADER.unpack_from(raw)
    _check_magic(path, magic, version)
    expected = _EMBED_HEADER.size + rows * dim * 4
    if len(raw) != expected:
        raise ArtifactError(path, f"expected {expected} bytes for {rows}x{dim}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=_EMBED_HEADER.size).reshape(rows, dim).copy()


# ── Sectioned parameter blob ─────────────────────────────────────────────────

def write_sections(path: str | Path, sections: Mapping[str, np.ndarray]) -> None:
    """Write named arrays in mapping order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(sections))]
    for name, array in sections.items():
        array = np.asarray(array)
        dtype = array.dtype.newbyteorder("<")
        if dtype not in DTYPE_CODES:
            raise TypeError(f"section {name!r}: unsupported dtype {array.dtype}")
        data = np.ascontiguousarray(array, dtype=dtype)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_CODES[dtype], data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))


def read_sections(path: str | Path) -> dict[str, np.ndarray]:
    path = require_artifact(path, "parameter blob")
    raw = path.read_bytes()

    def take(fmt: str, offset: int):
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise ArtifactError(path, f"truncated at byte {offset}")
        return struct.unpack_from(fmt, raw, offset), offset + size

    (magic, version, n_sections), offset = take("<4sII", 0)
    _check_magic(path, magic, version)
    sections: dict[str, np.ndarray] = {}
    for _ in range(n_sections):
        (name_len,), offset = take("<H", offset)
        if offset + name_len > len(raw):
            raise ArtifactError(path, f"truncated at byte {offset}")
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (code, ndim), offset = take("<BB", offset)
        if code not in _CODE_DTYPES:
            raise ArtifactError(path, f"section {name!r}: unknown dtype code {code}")
        shape, offset = take(f"<{ndim}I", offset)
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(raw):
            raise ArtifactError(path, f"section {name!r} truncated")
        sections[name] = np.frombuffer(raw, dtype=dtype, count=nbytes // dtype.itemsize,
                                       offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ArtifactError(path, f"{len(raw) - offset} trailing bytes")
    return sections


# ── Manifests ────────────────────────────────────────────────────────────────

def write_manifest(path: str | Path, manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict:
    path = require_artifact(path, "model manifest")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactError(path, f"invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(manifest, dict):
        raise ArtifactError(path, "manifest must be a JSON object")
    return manifest
