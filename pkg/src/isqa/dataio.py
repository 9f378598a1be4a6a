"""Reading and writing LIBSVM-format binary classification data."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Dataset",
    "LibsvmParseError",
    "parse_libsvm",
    "load_libsvm",
    "dump_libsvm",
    "check_csr",
    "column_blocks",
    "synthetic_dataset",
]


class LibsvmParseError(ValueError):
    """Raised on malformed LIBSVM input; carries the 1-based line number."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    """Examples as rows of a CSR matrix plus +/-1 labels."""

    features: sp.csr_matrix
    labels: np.ndarray

    def __post_init__(self):
        check_csr(self.features)
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must equal the number of rows")
        if not np.all(np.abs(self.labels) == 1.0):
            raise ValueError("labels must be +1 or -1")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        a, b = self.features, other.features
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


def check_csr(m):
    """Assert the CSR layout invariants, raising ``ValueError`` on violation."""
    if not sp.isspmatrix_csr(m):
        raise ValueError("expected a scipy CSR matrix")
    n_rows, n_cols = m.shape
    ptr, idx = m.indptr, m.indices
    if len(ptr) != n_rows + 1 or ptr[0] != 0 or ptr[-1] != len(m.data):
        raise ValueError("row offsets inconsistent with stored values")
    if len(idx) != len(m.data):
        raise ValueError("column index and value arrays differ in length")
    if np.any(np.diff(ptr) < 0):
        raise ValueError("row offsets must be nondecreasing")
    if len(idx) and (idx.min() < 0 or idx.max() >= n_cols):
        raise ValueError("column index out of range")
    for i in range(n_rows):
        row = idx[ptr[i] : ptr[i + 1]]
        if len(row) > 1 and np.any(np.diff(row) <= 0):
            raise ValueError(f"row {i}: column indices not strictly increasing")


def parse_libsvm(text, n_features=None):
    """Parse LIBSVM text into a :class:`Dataset`.

    Parameters
    ----------
    text : bytes or str
        Lines of the form ``label idx:val idx:val ...`` with 1-based,
        strictly increasing indices. Both ``\\n`` and ``\\r\\n`` endings work.
    n_features : int, optional
        Force the column count (so train and test files agree). Defaults to
        the largest index seen.

    Returns
    -------
    Dataset
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    labels = []
    indptr = [0]
    indices = []
    values = []
    max_idx = 0
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        # trailing comments are tolerated by most LIBSVM tools
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
        if label == 0.0 or not np.isfinite(label):
            raise LibsvmParseError(lineno, f"label {tokens[0]!r} is not a class sign")
        labels.append(1.0 if label > 0 else -1.0)
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}")
            try:
                j = int(key)
                v = float(val)
            except ValueError:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}") from None
            if j < 1:
                raise LibsvmParseError(lineno, f"index {j} < 1")
            if j == prev:
                raise LibsvmParseError(lineno, f"duplicate index {j}")
            if j < prev:
                raise LibsvmParseError(lineno, f"index {j} not increasing")
            prev = j
            indices.append(j - 1)
            values.append(v)
        max_idx = max(max_idx, prev)
        indptr.append(len(indices))

    if n_features is None:
        n_cols = max_idx
    else:
        if n_features < max_idx:
            raise ValueError(f"n_features={n_features} smaller than max index {max_idx}")
        n_cols = int(n_features)
    X = sp.csr_matrix(
        (
            np.asarray(values, dtype=np.float64),
            np.asarray(indices, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(len(labels), n_cols),
    )
    return Dataset(X, np.asarray(labels, dtype=np.float64))


def load_libsvm(path, n_features=None):
    with open(os.fspath(path), "rb") as fh:
        return parse_libsvm(fh.read(), n_features=n_features)


def dump_libsvm(ds):
    """Serialize to LIBSVM text; ``parse_libsvm(dump_libsvm(ds)) == ds``."""
    X = ds.features
    out = []
    for i in range(X.shape[0]):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        parts = ["+1" if ds.labels[i] > 0 else "-1"]
        parts.extend(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        out.append(" ".join(parts))
    return "\n".join(out) + ("\n" if out else "")


def column_blocks(dim, n_blocks):
    """Split ``range(dim)`` into ``n_blocks`` contiguous, balanced ranges.

    ``dim`` may be an int or a :class:`Dataset`; for a dataset the split is
    over examples, which index the dual variables.
    """
    if isinstance(dim, Dataset):
        dim = dim.n_samples
    dim = int(dim)
    if not 1 <= n_blocks <= max(dim, 1) or dim < 1:
        raise ValueError(f"n_blocks must be in [1, {dim}], got {n_blocks}")
    base, extra = divmod(dim, n_blocks)
    out = []
    start = 0
    for b in range(n_blocks):
        size = base + (1 if b < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def synthetic_dataset(n_samples, n_features, density=0.2, seed=0, noise=0.1):
    """Seeded sparse binary-classification data shaped like the a9a file.

    Features are nonnegative (mostly 0/1 indicator-like values) and labels
    come from a noisy linear rule.
    """
    rng = np.random.default_rng(seed)
    X = sp.random(
        n_samples,
        n_features,
        density=density,
        format="csr",
        random_state=rng,
        data_rvs=lambda k: rng.choice([0.5, 1.0], size=k),
    )
    X.sort_indices()
    w = rng.standard_normal(n_features)
    margin = X @ w - np.median(X @ w) + noise * rng.standard_normal(n_samples)
    y = np.where(margin > 0, 1.0, -1.0)
    X = sp.csr_matrix(X, dtype=np.float64)
    return Dataset(X, y)
