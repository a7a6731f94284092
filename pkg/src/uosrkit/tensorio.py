"""Binary/CSV persistence for feature matrices and label vectors.

Binary layout (all little-endian)::

    b"UOSR"  version:u8  dtype:u8  rank:u8  dims:u64[rank]  payload

dtype 0x01 is float32, 0x02 is int64. Matrices are rank 2, label vectors
rank 1. Values are stored at 32-bit precision and widened to float64 on load.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import (
    DimMismatch,
    IoFailure,
    LabelOutOfRange,
    MalformedHeader,
    NonFiniteValue,
    RowCountMismatch,
    ShapeMismatch,
)

MAGIC = b"UOSR"
VERSION = 1
DTYPE_F32 = 0x01
DTYPE_I64 = 0x02

_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_I64: np.dtype("<i8")}


def _resolve_format(path, fmt):
    if fmt is not None:
        if fmt not in ("binary", "csv"):
            raise ValueError(f"unknown format {fmt!r}")
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "binary"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename so readers never see a torn file."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def encode(arr: np.ndarray, dtype_code: int) -> bytes:
    arr = np.asarray(arr)
    header = MAGIC + struct.pack("<BBB", VERSION, dtype_code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype_code]).tobytes()
    return header + payload


def decode(buf: bytes, expect_dtype: int, source="<buffer>") -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise MalformedHeader(f"{source}: bad magic")
    version, dtype_code, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise MalformedHeader(f"{source}: unsupported version {version}")
    if dtype_code not in _DTYPES:
        raise MalformedHeader(f"{source}: unknown dtype code {dtype_code:#04x}")
    if dtype_code != expect_dtype:
        raise MalformedHeader(
            f"{source}: dtype code {dtype_code:#04x}, expected {expect_dtype:#04x}"
        )
    offset = 7 + 8 * rank
    if len(buf) < offset:
        raise MalformedHeader(f"{source}: truncated dimension block")
    dims = struct.unpack_from(f"<{rank}Q", buf, 7)
    dtype = _DTYPES[dtype_code]
    payload = buf[offset:]
    n_expected = int(np.prod(dims, dtype=np.uint64)) if rank else 1
    if len(payload) != n_expected * dtype.itemsize:
        raise ShapeMismatch(
            f"{source}: header declares {n_expected} values, payload holds "
            f"{len(payload) / dtype.itemsize:g}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _parse_csv_rows(text: str, source) -> list[tuple[int, list[str]]]:
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ShapeMismatch(
                f"{source}: line {lineno} has {len(cells)} fields, expected {width}"
            )
        rows.append((lineno, cells))
    return rows


def _csv_matrix(text: str, source) -> np.ndarray:
    rows = _parse_csv_rows(text, source)
    if not rows:
        raise ShapeMismatch(f"{source}: no data rows")
    try:
        return np.loadtxt(io.StringIO(text), delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError:
        pass
    # slow path only to name the offending line
    for lineno, cells in rows:
        for cell in cells:
            try:
                float(cell)
            except ValueError:
                raise ShapeMismatch(f"{source}: line {lineno}: cannot parse {cell!r}") from None
    raise ShapeMismatch(f"{source}: unparseable CSV")


def _check_matrix(arr: np.ndarray, source) -> np.ndarray:
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{source}: expected a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NonFiniteValue(f"{source}: non-finite value at row {bad[0]}, col {bad[1]}")
    return arr


def load_matrix(path, format=None) -> np.ndarray:
    """Load a feature/logit matrix as a float64 array of shape (rows, cols)."""
    fmt = _resolve_format(path, format)
    if fmt == "binary":
        arr = decode(_read_bytes(path), DTYPE_F32, source=path)
        if arr.ndim != 2:
            raise MalformedHeader(f"{path}: matrix must be rank 2, got rank {arr.ndim}")
        arr = arr.astype(np.float64)
    else:
        arr = _csv_matrix(_read_text(path), path)
    return _check_matrix(arr, path)


def write_matrix(m, path) -> None:
    m = np.asarray(m)
    if m.ndim == 1:
        m = m[:, None]
    # values beyond float32 range would silently become inf in the payload
    with np.errstate(over="ignore"):
        _check_matrix(m.astype(np.float32), "<matrix>")
    atomic_write_bytes(path, encode(m, DTYPE_F32))


def load_labels(path, format=None) -> np.ndarray:
    """Load an integer label vector as int64. Range checks happen in :func:`validate_bundle`."""
    fmt = _resolve_format(path, format)
    if fmt == "binary":
        arr = decode(_read_bytes(path), DTYPE_I64, source=path)
        if arr.ndim != 1:
            raise MalformedHeader(f"{path}: label vector must be rank 1, got rank {arr.ndim}")
        return arr.astype(np.int64)
    rows = _parse_csv_rows(_read_text(path), path)
    labels = []
    for lineno, cells in rows:
        if len(cells) != 1:
            raise ShapeMismatch(f"{path}: line {lineno}: expected one label per line")
        try:
            labels.append(int(cells[0]))
        except ValueError:
            raise ShapeMismatch(f"{path}: line {lineno}: not an integer: {cells[0]!r}") from None
    if not labels:
        raise ShapeMismatch(f"{path}: no labels")
    return np.asarray(labels, dtype=np.int64)


def write_labels(labels, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeMismatch(f"label vector must be 1-D, got shape {labels.shape}")
    atomic_write_bytes(path, encode(labels.astype(np.int64), DTYPE_I64))


def write_matrix_csv(m, path) -> None:
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(m), delimiter=",", fmt="%.17g")
    atomic_write_bytes(path, buf.getvalue().encode())


@dataclass
class EvaluationBundle:
    test_features: np.ndarray
    test_labels: np.ndarray
    ood_features: np.ndarray
    train_features: np.ndarray | None = None
    train_labels: np.ndarray | None = None
    test_logits: np.ndarray | None = None
    ood_logits: np.ndarray | None = None
    ood_class_ids: np.ndarray | None = None

    @property
    def n_test(self) -> int:
        return len(self.test_labels)

    @property
    def n_ood(self) -> int:
        return len(self.ood_features)


# bundle field -> file stem used by save_bundle/load_bundle
BUNDLE_FILES = {
    "train_features": "train_feats",
    "train_labels": "train_labels",
    "test_features": "test_feats",
    "test_logits": "test_logits",
    "test_labels": "test_labels",
    "ood_features": "ood_feats",
    "ood_logits": "ood_logits",
    "ood_class_ids": "ood_class_ids",
}
_LABEL_FIELDS = {"train_labels", "test_labels", "ood_class_ids"}


def save_bundle(bundle: EvaluationBundle, prefix) -> dict[str, str]:
    """Persist every present component as ``<prefix>_<stem>.bin``; returns field -> path."""
    written = {}
    for f in fields(bundle):
        value = getattr(bundle, f.name)
        if value is None:
            continue
        path = f"{prefix}_{BUNDLE_FILES[f.name]}.bin"
        if f.name in _LABEL_FIELDS:
            write_labels(value, path)
        else:
            write_matrix(value, path)
        written[f.name] = path
    return written


def load_bundle(paths: dict) -> EvaluationBundle:
    loaded = {}
    for name, path in paths.items():
        if path is None:
            continue
        loaded[name] = load_labels(path) if name in _LABEL_FIELDS else load_matrix(path)
    return EvaluationBundle(**loaded)


def validate_bundle(b: EvaluationBundle, n_classes: int) -> None:
    pairs = [
        (("test_features", b.test_features), ("test_labels", b.test_labels)),
        (("test_logits", b.test_logits), ("test_labels", b.test_labels)),
        (("train_features", b.train_features), ("train_labels", b.train_labels)),
        (("ood_features", b.ood_features), ("ood_logits", b.ood_logits)),
        (("ood_features", b.ood_features), ("ood_class_ids", b.ood_class_ids)),
    ]
    for (na, a), (nb, bb) in pairs:
        if a is not None and bb is not None and len(a) != len(bb):
            raise RowCountMismatch(f"{na} has {len(a)} rows but {nb} has {len(bb)}")

    dims = [
        (name, arr.shape[1])
        for name, arr in (
            ("train_features", b.train_features),
            ("test_features", b.test_features),
            ("ood_features", b.ood_features),
        )
        if arr is not None
    ]
    if len({d for _, d in dims}) > 1:
        desc = ", ".join(f"{n} cols={d}" for n, d in dims)
        raise DimMismatch(f"feature dimensionality disagrees: {desc}")

    for name, arr in (("test_logits", b.test_logits), ("ood_logits", b.ood_logits)):
        if arr is not None and arr.shape[1] != n_classes:
            raise DimMismatch(f"{name} has {arr.shape[1]} columns, expected {n_classes} classes")

    for name, arr in (("test_labels", b.test_labels), ("train_labels", b.train_labels)):
        if arr is not None and len(arr) and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"{name} has labels outside [0, {n_classes})")
