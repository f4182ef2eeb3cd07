"""Banded matrix storage, generation, products, residuals, I/O and the serial oracle.

Band storage follows the LAPACK ``gb`` convention: entry ``(i, j)`` of the
matrix lives at ``data[ku + i - j, j]``.  Everything in this module is serial
and shares no code with the SPIKE kernels, so :func:`oracle_solve` can serve as
an independent reference for every parallel path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "BandedMatrix",
    "generate_banded",
    "degree_of_diagonal_dominance",
    "band_matmul",
    "relative_residual",
    "OracleFactors",
    "oracle_solve",
    "read_matrix",
    "write_matrix",
    "read_dense",
    "write_dense",
    "SingularMatrixError",
    "DegenerateResidualError",
    "MatrixFormatError",
]

_MAGIC = b"SPKB"


class SingularMatrixError(ArithmeticError):
    """Raised when an exactly zero pivot column is met in pivoting mode."""


class DegenerateResidualError(ValueError):
    """Raised when the residual is requested for ``F == 0`` with ``X != 0``."""


class MatrixFormatError(ValueError):
    """Raised for malformed or out-of-band matrix files."""


@dataclass(frozen=True, eq=False)
class BandedMatrix:
    """Square band matrix in LAPACK column storage.

    Parameters
    ----------
    n : int
        Matrix order.
    kl, ku : int
        Number of sub- and super-diagonals.
    data : numpy.ndarray, shape (kl + ku + 1, n)
        Band storage; slots that fall outside the matrix are kept at zero.
    """

    n: int
    kl: int
    ku: int
    data: np.ndarray

    def __post_init__(self):
        n, kl, ku = int(self.n), int(self.kl), int(self.ku)
        if n < 1:
            raise ValueError(f"matrix order must be positive, got {n}")
        if not (0 <= kl < n and 0 <= ku < n):
            raise ValueError(f"bandwidths kl={kl}, ku={ku} invalid for n={n}")
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.shape != (kl + ku + 1, n):
            raise ValueError(
                f"band storage must have shape {(kl + ku + 1, n)}, got {data.shape}")
        data[_outside_mask(n, kl, ku)] = 0.0
        data.flags.writeable = False
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "kl", kl)
        object.__setattr__(self, "ku", ku)
        object.__setattr__(self, "data", data)

    @property
    def k(self) -> int:
        """Half-bandwidth used by SPIKE (``max(kl, ku)``)."""
        return max(self.kl, self.ku)

    @classmethod
    def from_dense(cls, dense, kl: int, ku: int) -> "BandedMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        n = dense.shape[0]
        if dense.shape != (n, n):
            raise ValueError("dense matrix must be square")
        i, j = np.indices(dense.shape)
        if np.any(dense[(i - j > kl) | (j - i > ku)] != 0.0):
            raise ValueError("dense matrix has entries outside the declared band")
        data = np.zeros((kl + ku + 1, n))
        for d in range(-ku, kl + 1):
            diag = np.diagonal(dense, -d)
            if d >= 0:
                data[ku + d, : n - d] = diag
            else:
                data[ku + d, -d:] = diag
        return cls(n, kl, ku, data)

    def __getitem__(self, idx) -> float:
        i, j = idx
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(idx)
        if -self.ku <= i - j <= self.kl:
            return float(self.data[self.ku + i - j, j])
        return 0.0

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for d in range(-self.ku, self.kl + 1):
            row = self.data[self.ku + d]
            if d >= 0:
                idx = np.arange(self.n - d)
                out[idx + d, idx] = row[: self.n - d]
            else:
                idx = np.arange(-d, self.n)
                out[idx + d, idx] = row[-d:]
        return out

    def transpose(self) -> "BandedMatrix":
        # (A^T)(i, j) = A(j, i): diagonal d of A becomes diagonal -d of A^T.
        out = np.zeros((self.kl + self.ku + 1, self.n))
        for d in range(-self.ku, self.kl + 1):
            src = self.data[self.ku + d]
            if d >= 0:
                out[self.kl - d, d:] = src[: self.n - d]
            else:
                out[self.kl - d, : self.n + d] = src[-d:]
        return BandedMatrix(self.n, self.ku, self.kl, out)

    @property
    def T(self) -> "BandedMatrix":
        return self.transpose()

    def submatrix(self, start: int, stop: int) -> "BandedMatrix":
        """Diagonal block ``A[start:stop, start:stop]`` as a band matrix."""
        if not 0 <= start < stop <= self.n:
            raise ValueError(f"bad block range [{start}, {stop})")
        m = stop - start
        kl, ku = min(self.kl, m - 1), min(self.ku, m - 1)
        data = self.data[self.ku - ku: self.ku + kl + 1, start:stop]
        return BandedMatrix(m, kl, ku, data)

    def block(self, rows: slice, cols: slice) -> np.ndarray:
        """Dense copy of an arbitrary rectangular block (zeros off the band)."""
        r = np.arange(self.n)[rows]
        c = np.arange(self.n)[cols]
        out = np.zeros((r.size, c.size))
        off = r[:, None] - c[None, :]
        inside = (off <= self.kl) & (off >= -self.ku)
        ri, ci = np.nonzero(inside)
        out[ri, ci] = self.data[self.ku + off[ri, ci], c[ci]]
        return out

    def max_abs(self) -> float:
        return float(np.abs(self.data).max()) if self.data.size else 0.0

    def one_norm(self) -> float:
        return float(np.abs(self.data).sum(axis=0).max())

    def __eq__(self, other):
        if not isinstance(other, BandedMatrix):
            return NotImplemented
        return (self.n, self.kl, self.ku) == (other.n, other.kl, other.ku) and \
            np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"BandedMatrix(n={self.n}, kl={self.kl}, ku={self.ku})"


def _outside_mask(n: int, kl: int, ku: int) -> np.ndarray:
    """Slots of LAPACK band storage that map outside the matrix."""
    r = np.arange(kl + ku + 1)[:, None]
    j = np.arange(n)[None, :]
    i = r - ku + j
    return (i < 0) | (i >= n)


def generate_banded(n: int, kl: int, ku: int, dd: float, seed: int) -> BandedMatrix:
    """Random band matrix with a prescribed degree of diagonal dominance.

    Off-diagonal band entries are uniform on (0, 1); each diagonal entry is
    ``dd`` times the sum of the off-diagonal entries in its column, so the
    measured :func:`degree_of_diagonal_dominance` equals ``dd``.
    A 1x1 matrix (or any column with an empty off-diagonal band) therefore
    gets a zero diagonal.
    """
    if n < 1 or not (0 <= kl < n and 0 <= ku < n):
        raise ValueError(f"invalid dimensions n={n}, kl={kl}, ku={ku}")
    if not dd > 0:
        raise ValueError(f"dd must be positive, got {dd}")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    data = rng.random((kl + ku + 1, n))
    # (0, 1): map the measure-zero draw of exactly 0 away from zero
    data[data == 0.0] = np.nextafter(0.0, 1.0)
    data[_outside_mask(n, kl, ku)] = 0.0
    data[ku] = 0.0
    data[ku] = dd * data.sum(axis=0)
    return BandedMatrix(n, kl, ku, data)


def degree_of_diagonal_dominance(A: BandedMatrix) -> float:
    """``min_i |A_ii| / sum_{j != i} |A_ji|`` over columns; ``inf`` if no coupling."""
    absd = np.abs(A.data)
    diag = absd[A.ku]
    off = absd.sum(axis=0) - diag
    coupled = off > 0
    if not coupled.any():
        return float("inf")
    return float(np.min(diag[coupled] / off[coupled]))


def _as_block(X, n: int) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    vector = X.ndim == 1
    if vector:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != n:
        raise ValueError(f"expected {n} rows, got shape {X.shape}")
    return X, vector


def band_matmul(A: BandedMatrix, X, transpose: bool = False) -> np.ndarray:
    """``A @ X`` (or ``A.T @ X``) by direct traversal of the diagonals."""
    X, vector = _as_block(X, A.n)
    out = np.zeros_like(X)
    n = A.n
    for d in range(-A.ku, A.kl + 1):
        # diagonal d holds A(j + d, j) at data[ku + d, j]
        row = A.data[A.ku + d]
        j0, j1 = max(0, -d), min(n, n - d)
        if j0 >= j1:
            continue
        vals = row[j0:j1, None]
        if transpose:
            out[j0:j1] += vals * X[j0 + d: j1 + d]
        else:
            out[j0 + d: j1 + d] += vals * X[j0:j1]
    return out[:, 0] if vector else out


def relative_residual(A: BandedMatrix, X, F, transpose: bool = False) -> float:
    """Frobenius-norm relative residual ``||A X - F|| / ||F||``."""
    X, _ = _as_block(X, A.n)
    F, _ = _as_block(F, A.n)
    fnorm = np.linalg.norm(F)
    if fnorm == 0.0:
        if np.any(X != 0.0):
            raise DegenerateResidualError("relative residual undefined for F = 0, X != 0")
        return 0.0
    return float(np.linalg.norm(band_matmul(A, X, transpose) - F) / fnorm)


class OracleFactors:
    """Serial banded Gaussian elimination, kept deliberately simple.

    Rows are stored with a per-row offset (``R[i, c] = A(i, i - kl + c)``) and
    eliminated with plain numpy row operations.  The transpose solve factors
    ``A.T`` separately instead of reusing the factors, so both directions are
    straightforward elimination with no shared triangular-solve logic.
    """

    def __init__(self, A: BandedMatrix, pivoting: bool = True):
        self.A = A
        self.pivoting = pivoting
        self._fwd = _oracle_factor(A, pivoting)
        self._trn = None

    def solve(self, F, transpose: bool = False) -> np.ndarray:
        if transpose:
            if self._trn is None:
                self._trn = _oracle_factor(self.A.transpose(), self.pivoting)
            fac = self._trn
        else:
            fac = self._fwd
        F, vector = _as_block(F, self.A.n)
        X = _oracle_apply(fac, F.copy())
        return X[:, 0] if vector else X


def _oracle_factor(A: BandedMatrix, pivoting: bool):
    n, kl, ku = A.n, A.kl, A.ku
    w = ku + (kl if pivoting else 0)
    width = kl + w + 1
    R = np.zeros((n, width))
    dense_rows = A.data  # data[ku + i - j, j]
    for i in range(n):
        j0, j1 = max(0, i - kl), min(n, i + ku + 1)
        cols = np.arange(j0, j1)
        R[i, cols - i + kl] = dense_rows[ku + i - cols, cols]
    L = np.zeros((n, kl))
    perm = np.arange(n)
    scale = A.max_abs() or 1.0
    tiny = np.finfo(float).eps * scale
    boost = np.sqrt(np.finfo(float).eps) * scale
    for j in range(n):
        last = min(n - 1, j + kl)
        if pivoting:
            rows = np.arange(j, last + 1)
            cand = np.abs(R[rows, kl + j - rows])
            r = j + int(np.argmax(cand))
            if cand[r - j] == 0.0:
                raise SingularMatrixError(f"zero pivot column at {j}")
            perm[j] = r
            if r != j:
                cols = np.arange(j, min(n, j + w + 1))
                a = R[j, cols - j + kl].copy()
                R[j, cols - j + kl] = R[r, cols - r + kl]
                R[r, cols - r + kl] = a
        elif abs(R[j, kl]) < tiny:
            R[j, kl] = boost if R[j, kl] >= 0 else -boost
        if last == j:
            continue
        cols = np.arange(j + 1, min(n, j + w + 1))
        rows = np.arange(j + 1, last + 1)
        mult = R[rows, kl + j - rows] / R[j, kl]
        L[j, : rows.size] = mult
        R[rows, kl + j - rows] = 0.0
        R[rows[:, None], cols[None, :] - rows[:, None] + kl] -= \
            mult[:, None] * R[j, cols - j + kl][None, :]
    return n, kl, w, R, L, perm


def _oracle_apply(fac, B: np.ndarray) -> np.ndarray:
    n, kl, w, R, L, perm = fac
    for j in range(n):
        r = perm[j]
        if r != j:
            B[[j, r]] = B[[r, j]]
        m = min(kl, n - 1 - j)
        if m:
            B[j + 1: j + 1 + m] -= L[j, :m, None] * B[j]
    for i in range(n - 1, -1, -1):
        m = min(w, n - 1 - i)
        if m:
            B[i] -= R[i, kl + 1: kl + 1 + m] @ B[i + 1: i + 1 + m]
        B[i] /= R[i, kl]
    return B


def oracle_solve(A: BandedMatrix, F, transpose: bool = False, pivoting: bool = True) -> np.ndarray:
    """Solve ``A X = F`` (or ``A.T X = F``) with serial banded elimination."""
    return OracleFactors(A.transpose() if transpose else A, pivoting).solve(F)


# ---------------------------------------------------------------- file I/O

def write_matrix(A: BandedMatrix, path, format: str | None = None) -> None:
    """Write ``A`` as Matrix Market coordinate (``mm``) or native binary (``spkb``)."""
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "spkb":
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<qqq", A.n, A.kl, A.ku))
            # column order: the kl + ku + 1 band slots of column 0 come first
            fh.write(np.ascontiguousarray(A.data.T).astype("<f8").tobytes())
        return
    if fmt != "mm":
        raise ValueError(f"unknown matrix format {fmt!r}")
    i, j = _band_coords(A)
    vals = A.data[A.ku + i - j, j]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"% band kl={A.kl} ku={A.ku}\n")
        fh.write(f"{A.n} {A.n} {i.size}\n")
        for a, b, v in zip(i + 1, j + 1, vals):
            fh.write(f"{a} {b} {float(v)!r}\n")


def _band_coords(A: BandedMatrix):
    j = np.repeat(np.arange(A.n), A.kl + A.ku + 1)
    i = j + np.tile(np.arange(-A.ku, A.kl + 1), A.n)
    keep = (i >= 0) & (i < A.n)
    return i[keep], j[keep]


def _guess_format(path: Path) -> str:
    return "spkb" if path.suffix.lower() == ".spkb" else "mm"


def read_matrix(path, format: str | None = None) -> BandedMatrix:
    path = Path(path)
    fmt = format or _guess_format(path)
    if fmt == "spkb":
        raw = path.read_bytes()
        if len(raw) < 28 or raw[:4] != _MAGIC:
            raise MatrixFormatError(f"{path}: not an SPKB file")
        n, kl, ku = struct.unpack("<qqq", raw[4:28])
        if n < 1 or kl < 0 or ku < 0 or kl >= n or ku >= n:
            raise MatrixFormatError(f"{path}: bad header n={n} kl={kl} ku={ku}")
        count = (kl + ku + 1) * n
        if len(raw) != 28 + 8 * count:
            raise MatrixFormatError(f"{path}: expected {count} values")
        vals = np.frombuffer(raw, dtype="<f8", offset=28).astype(np.float64)
        return BandedMatrix(n, kl, ku, vals.reshape(n, kl + ku + 1).T)
    if fmt != "mm":
        raise ValueError(f"unknown matrix format {fmt!r}")
    return _read_mm_coordinate(path)


def _read_mm_coordinate(path: Path) -> BandedMatrix:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MatrixFormatError(f"{path}: empty file")
    header = lines[0].lower().split()
    if header[:3] != ["%%matrixmarket", "matrix", "coordinate"] or "real" not in header:
        raise MatrixFormatError(f"{path}: expected a real coordinate Matrix Market file")
    kl = ku = None
    body = []
    for line in lines[1:]:
        s = line.strip()
        if not s:
            continue
        if s.startswith("%"):
            parts = dict(p.split("=", 1) for p in s[1:].split() if "=" in p)
            if "kl" in parts and "ku" in parts:
                kl, ku = int(parts["kl"]), int(parts["ku"])
            continue
        body.append(s)
    if not body:
        raise MatrixFormatError(f"{path}: missing size line")
    try:
        nr, nc, nnz = (int(t) for t in body[0].split())
        entries = np.array([[float(t) for t in row.split()] for row in body[1:]]).reshape(-1, 3)
    except ValueError as exc:
        raise MatrixFormatError(f"{path}: {exc}") from None
    if nr != nc or nr < 1:
        raise MatrixFormatError(f"{path}: matrix must be square")
    if entries.shape[0] != nnz:
        raise MatrixFormatError(f"{path}: expected {nnz} entries, found {entries.shape[0]}")
    i = entries[:, 0].astype(np.int64) - 1
    j = entries[:, 1].astype(np.int64) - 1
    if np.any((i < 0) | (i >= nr) | (j < 0) | (j >= nr)):
        raise MatrixFormatError(f"{path}: index out of range")
    if kl is None:
        kl = int(max(0, (i - j).max(initial=0)))
        ku = int(max(0, (j - i).max(initial=0)))
    if np.any((i - j > kl) | (j - i > ku)):
        raise MatrixFormatError(f"{path}: entry outside band kl={kl} ku={ku}")
    data = np.zeros((kl + ku + 1, nr))
    data[ku + i - j, j] = entries[:, 2]
    return BandedMatrix(nr, kl, ku, data)


def write_dense(X, path) -> None:
    """Write a dense block as Matrix Market array format (column-major)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{X.shape[0]} {X.shape[1]}\n")
        for v in X.T.ravel():
            fh.write(f"{float(v)!r}\n")


def read_dense(path) -> np.ndarray:
    lines = [s.strip() for s in Path(path).read_text(encoding="utf-8").splitlines()]
    if not lines or not lines[0].lower().startswith("%%matrixmarket matrix array"):
        raise MatrixFormatError(f"{path}: expected a Matrix Market array file")
    body = [s for s in lines[1:] if s and not s.startswith("%")]
    if not body:
        raise MatrixFormatError(f"{path}: missing size line")
    rows, cols = (int(t) for t in body[0].split())
    vals = np.array([float(s) for s in body[1:]])
    if vals.size != rows * cols:
        raise MatrixFormatError(f"{path}: expected {rows * cols} values, found {vals.size}")
    return vals.reshape(cols, rows).T.copy()
