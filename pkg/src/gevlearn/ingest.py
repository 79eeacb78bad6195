"""Dataset loading, label remapping, and splitting.

Three on-disk formats are understood: label-first dense CSV, sparse
``label idx:val`` text with 1-based indices, and the idx image/label
container (gzip accepted).  Labels can be arbitrary integers or strings on
disk; internally they are remapped to 1..k and the mapping is retained so
models can score files whose label coding differs from the training file.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

FORMATS = ("csv", "libsvm", "idx")


class FormatError(ValueError):
    """Malformed dataset file."""


@dataclass
class LabeledDataset:
    X: object  # (n, d) ndarray or CSR matrix
    y: np.ndarray  # (n,) int64 labels in 1..k
    label_map: dict = field(default_factory=dict)  # original label -> 1..k

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} rows vs {self.y.shape[0]} labels")
        if self.y.size and self.y.min() < 1:
            raise ValueError("internal labels must start at 1")
        if not self.label_map:
            top = int(self.y.max()) if self.y.size else 0
            self.label_map = {m: m for m in range(1, top + 1)}
        if self.y.size and int(self.y.max()) > len(self.label_map):
            raise ValueError("label exceeds the class count of the label map")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return len(self.label_map)

    @property
    def inverse_label_map(self) -> dict:
        return {v: orig for orig, v in self.label_map.items()}

    def original_labels(self) -> list:
        inv = self.inverse_label_map
        return [inv[int(m)] for m in self.y]

    def as_dense(self) -> np.ndarray:
        if sp.issparse(self.X):
            return np.asarray(self.X.todense(), dtype=np.float64)
        return np.asarray(self.X, dtype=np.float64)

    def append_bias(self) -> "LabeledDataset":
        """Return a copy with a constant-1 feature appended."""
        if sp.issparse(self.X):
            ones = sp.csr_matrix(np.ones((self.n, 1)))
            X = sp.hstack([self.X, ones], format="csr")
        else:
            X = np.hstack([self.X, np.ones((self.n, 1))])
        return LabeledDataset(X=X, y=self.y.copy(), label_map=dict(self.label_map))


def _remap_labels(raw_labels: list) -> tuple[np.ndarray, dict]:
    """Map arbitrary on-disk labels to 1..k; numeric labels sort numerically."""
    uniq = sorted(set(raw_labels), key=lambda v: (0, v) if isinstance(v, (int, float)) else (1, str(v)))
    label_map = {orig: idx + 1 for idx, orig in enumerate(uniq)}
    y = np.array([label_map[v] for v in raw_labels], dtype=np.int64)
    return y, label_map


def _parse_label(tok: str):
    try:
        f = float(tok)
    except ValueError:
        return tok
    if f == int(f):
        return int(f)
    return f


def load_csv(path) -> LabeledDataset:
    """Dense label-first CSV: ``label,x1,x2,...``."""
    raw_labels = []
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise FormatError(f"{path}:{lineno}: expected label and at least one feature")
            if width is None:
                width = len(parts) - 1
            elif len(parts) - 1 != width:
                raise FormatError(f"{path}:{lineno}: width {len(parts)-1} != {width}")
            raw_labels.append(_parse_label(parts[0]))
            try:
                rows.append([float(p) for p in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad feature value") from exc
    if not rows:
        raise FormatError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise FormatError(f"{path}: non-finite feature values")
    y, label_map = _remap_labels(raw_labels)
    return LabeledDataset(X=X, y=y, label_map=label_map)


def load_libsvm(path, n_features: int | None = None) -> LabeledDataset:
    """Sparse ``label idx:val`` rows with 1-based ascending indices."""
    raw_labels = []
    data, indices, indptr = [], [], [0]
    max_idx = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            raw_labels.append(_parse_label(parts[0]))
            for tok in parts[1:]:
                if ":" not in tok:
                    raise FormatError(f"{path}:{lineno}: expected idx:val, got {tok!r}")
                stridx, strval = tok.split(":", 1)
                try:
                    idx = int(stridx)
                    val = float(strval)
                except ValueError as exc:
                    raise FormatError(f"{path}:{lineno}: bad entry {tok!r}") from exc
                if idx < 1:
                    raise FormatError(f"{path}:{lineno}: indices are 1-based, got {idx}")
                if not np.isfinite(val):
                    raise FormatError(f"{path}:{lineno}: non-finite value")
                indices.append(idx - 1)
                data.append(val)
                max_idx = max(max_idx, idx)
            indptr.append(len(data))
    if not raw_labels:
        raise FormatError(f"{path}: no data rows")
    d = n_features if n_features is not None else max_idx
    if max_idx > d:
        raise FormatError(f"{path}: feature index {max_idx} exceeds declared width {d}")
    X = sp.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(raw_labels), d),
    )
    y, label_map = _remap_labels(raw_labels)
    return LabeledDataset(X=X, y=y, label_map=label_map)


def _read_maybe_gzip(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            return gzip.decompress(fh.read())
        return fh.read()


def load_idx(images_path, labels_path) -> LabeledDataset:
    """idx image + label pair; pixels scaled to [0, 1]."""
    img = _read_maybe_gzip(images_path)
    lab = _read_maybe_gzip(labels_path)

    def parse_header(buf: bytes, path) -> tuple[int, list[int], int]:
        if len(buf) < 4 or buf[0] != 0 or buf[1] != 0:
            raise FormatError(f"{path}: unknown idx magic")
        dtype_code, ndim = buf[2], buf[3]
        if dtype_code != 0x08:
            raise FormatError(f"{path}: unsupported idx dtype 0x{dtype_code:02x}")
        dims = list(struct.unpack(f">{ndim}I", buf[4 : 4 + 4 * ndim]))
        return ndim, dims, 4 + 4 * ndim

    ndim_i, dims_i, off_i = parse_header(img, images_path)
    ndim_l, dims_l, off_l = parse_header(lab, labels_path)
    if ndim_i < 2:
        raise FormatError(f"{images_path}: expected image tensor, got {ndim_i} dims")
    if ndim_l != 1:
        raise FormatError(f"{labels_path}: expected 1-d label vector")
    n = dims_i[0]
    d = int(np.prod(dims_i[1:]))
    if dims_l[0] != n:
        raise FormatError(f"label count {dims_l[0]} != image count {n}")
    if len(img) - off_i < n * d:
        raise FormatError(f"{images_path}: truncated payload")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n * d, offset=off_i)
    X = pixels.reshape(n, d).astype(np.float64) / 255.0
    raw = np.frombuffer(lab, dtype=np.uint8, count=n, offset=off_l)
    y, label_map = _remap_labels([int(v) for v in raw])
    return LabeledDataset(X=X, y=y, label_map=label_map)


def load(path, fmt: str, labels_path=None, n_features: int | None = None) -> LabeledDataset:
    if fmt == "csv":
        return load_csv(path)
    if fmt == "libsvm":
        return load_libsvm(path, n_features=n_features)
    if fmt == "idx":
        if labels_path is None:
            raise ValueError("idx format needs a labels file")
        return load_idx(path, labels_path)
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def write_csv(ds: LabeledDataset, path) -> None:
    inv = ds.inverse_label_map
    X = ds.as_dense()
    with open(path, "w") as fh:
        for row, m in zip(X, ds.y):
            fh.write(f"{inv[int(m)]}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def write_libsvm(ds: LabeledDataset, path) -> None:
    inv = ds.inverse_label_map
    Xcsr = sp.csr_matrix(ds.X)
    with open(path, "w") as fh:
        for r in range(ds.n):
            start, end = Xcsr.indptr[r], Xcsr.indptr[r + 1]
            toks = [str(inv[int(ds.y[r])])]
            toks += [
                f"{idx + 1}:{val:.17g}"
                for idx, val in zip(Xcsr.indices[start:end], Xcsr.data[start:end])
            ]
            fh.write(" ".join(toks) + "\n")


def split(ds: LabeledDataset, fractions, seed: int) -> dict[str, LabeledDataset]:
    """Seeded permutation then contiguous slicing into named parts.

    ``fractions`` is a dict name -> fraction or a sequence of fractions
    (auto-named part0, part1, ...).  Fractions must sum to 1; the parts are
    disjoint and exhaustive.
    """
    if isinstance(fractions, dict):
        names = list(fractions.keys())
        fracs = np.array([fractions[nm] for nm in names], dtype=np.float64)
    else:
        fracs = np.array(list(fractions), dtype=np.float64)
        names = [f"part{idx}" for idx in range(len(fracs))]
    if len(fracs) < 1 or np.any(fracs < 0) or abs(fracs.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {fracs}")
    perm = np.random.default_rng(seed).permutation(ds.n)
    bounds = np.round(np.cumsum(fracs) * ds.n).astype(int)
    bounds[-1] = ds.n
    out = {}
    start = 0
    for name, stop in zip(names, bounds):
        idx = perm[start:stop]
        out[name] = LabeledDataset(X=ds.X[idx], y=ds.y[idx], label_map=dict(ds.label_map))
        start = stop
    return out
