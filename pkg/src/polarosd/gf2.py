"""GF(2) linear algebra kernel.

Two matrix representations are provided:

* :class:`DenseBitMatrix` stores each row as a Python ``int`` used as a bit
  set (bit ``c`` of row ``r`` is entry ``(r, c)``).  Row additions are a single
  XOR, which makes it the workhorse for elimination.
* :class:`SparseBinaryMatrix` stores sorted row and column supports together
  with their lengths.  It backs the pruned parity-check matrices.
"""

from __future__ import annotations

import bisect
import os
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

# Mutation-time consistency checks on sparse matrices; enabled in the test suite.
DEBUG = os.environ.get("POLAROSD_DEBUG", "") not in ("", "0")


class RankDeficiencyError(ValueError):
    """Raised when an operation needs full row rank and the input lacks it."""


def _bits_to_int(bits: Iterable[int]) -> int:
    value = 0
    for c, b in enumerate(bits):
        if b:
            value |= 1 << c
    return value


def _int_to_bits(value: int, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.uint8)
    c = 0
    while value:
        if value & 1:
            out[c] = 1
        value >>= 1
        c += 1
    return out


def pack_bits(bits: Sequence[int] | np.ndarray) -> int:
    """Pack a 0/1 vector into an int bit set (index 0 -> least significant bit)."""
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.size == 0:
        return 0
    packed = np.packbits(arr, bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def unpack_bits(value: int, n: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`."""
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    raw = value.to_bytes((n + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:n].copy()


def iter_bits(value: int):
    """Yield the indices of the set bits of ``value`` in increasing order."""
    while value:
        low = value & -value
        yield low.bit_length() - 1
        value ^= low


class DenseBitMatrix:
    """Bit-packed GF(2) matrix with one int per row."""

    __slots__ = ("n_rows", "n_cols", "rows")

    def __init__(self, n_rows: int, n_cols: int, rows: Sequence[int] | None = None):
        if n_rows < 0 or n_cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        self.n_rows = n_rows
        self.n_cols = n_cols
        if rows is None:
            self.rows = [0] * n_rows
        else:
            if len(rows) != n_rows:
                raise ValueError(f"expected {n_rows} rows, got {len(rows)}")
            limit = 1 << n_cols
            for r in rows:
                if r < 0 or r >= limit:
                    raise ValueError("row has bits beyond n_cols")
            self.rows = list(rows)

    # -- construction -----------------------------------------------------
    @classmethod
    def zeros(cls, n_rows: int, n_cols: int) -> DenseBitMatrix:
        return cls(n_rows, n_cols)

    @classmethod
    def identity(cls, n: int) -> DenseBitMatrix:
        return cls(n, n, [1 << i for i in range(n)])

    @classmethod
    def from_array(cls, array) -> DenseBitMatrix:
        arr = np.asarray(array, dtype=np.uint8)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        n_rows, n_cols = arr.shape
        return cls(n_rows, n_cols, [pack_bits(row & 1) for row in arr])

    @classmethod
    def from_supports(cls, supports: Sequence[Iterable[int]], n_cols: int) -> DenseBitMatrix:
        rows = []
        for support in supports:
            value = 0
            for c in support:
                if not 0 <= c < n_cols:
                    raise IndexError(f"column {c} out of range")
                value ^= 1 << c
            rows.append(value)
        return cls(len(rows), n_cols, rows)

    def copy(self) -> DenseBitMatrix:
        return DenseBitMatrix(self.n_rows, self.n_cols, list(self.rows))

    # -- access -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def get(self, r: int, c: int) -> int:
        return (self.rows[r] >> c) & 1

    def set(self, r: int, c: int, value: int) -> None:
        if value & 1:
            self.rows[r] |= 1 << c
        else:
            self.rows[r] &= ~(1 << c)

    def row_support(self, r: int) -> list[int]:
        return list(iter_bits(self.rows[r]))

    def to_array(self) -> np.ndarray:
        if self.n_rows == 0:
            return np.zeros((0, self.n_cols), dtype=np.uint8)
        return np.stack([unpack_bits(r, self.n_cols) for r in self.rows])

    def nnz(self) -> int:
        return sum(r.bit_count() for r in self.rows)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DenseBitMatrix):
            return NotImplemented
        return self.shape == other.shape and self.rows == other.rows

    def __repr__(self) -> str:
        body = "\n".join(
            "".join(str((r >> c) & 1) for c in range(self.n_cols)) for r in self.rows
        )
        return f"DenseBitMatrix({self.n_rows}x{self.n_cols})\n{body}"

    # -- algebra ----------------------------------------------------------
    def transpose(self) -> DenseBitMatrix:
        cols = [0] * self.n_cols
        for r, row in enumerate(self.rows):
            for c in iter_bits(row):
                cols[c] |= 1 << r
        return DenseBitMatrix(self.n_cols, self.n_rows, cols)

    def matmul(self, other: DenseBitMatrix) -> DenseBitMatrix:
        if self.n_cols != other.n_rows:
            raise ValueError(f"shape mismatch {self.shape} @ {other.shape}")
        out = []
        for row in self.rows:
            acc = 0
            for k in iter_bits(row):
                acc ^= other.rows[k]
            out.append(acc)
        return DenseBitMatrix(self.n_rows, other.n_cols, out)

    __matmul__ = matmul

    def mul_vec(self, x) -> np.ndarray:
        """Return ``self @ x`` for a 0/1 vector ``x``."""
        xv = x if isinstance(x, int) else pack_bits(x)
        return np.fromiter(((r & xv).bit_count() & 1 for r in self.rows), dtype=np.uint8, count=self.n_rows)

    def select_columns(self, cols: Sequence[int]) -> DenseBitMatrix:
        """New matrix whose column ``j`` is column ``cols[j]`` of ``self``."""
        cols = [int(c) for c in cols]
        out = []
        for row in self.rows:
            v = 0
            for j, c in enumerate(cols):
                if (row >> c) & 1:
                    v |= 1 << j
            out.append(v)
        return DenseBitMatrix(self.n_rows, len(cols), out)

    def select_rows(self, rows: Sequence[int]) -> DenseBitMatrix:
        return DenseBitMatrix(len(rows), self.n_cols, [self.rows[r] for r in rows])

    def vstack(self, other: DenseBitMatrix) -> DenseBitMatrix:
        if self.n_cols != other.n_cols:
            raise ValueError("column counts differ")
        return DenseBitMatrix(self.n_rows + other.n_rows, self.n_cols, self.rows + other.rows)


@dataclass(frozen=True)
class PermutationPair:
    """Row and column permutations; ``perm[new] = old``."""

    row_perm: tuple[int, ...]
    col_perm: tuple[int, ...]

    def __post_init__(self):
        for name in ("row_perm", "col_perm"):
            p = getattr(self, name)
            if sorted(p) != list(range(len(p))):
                raise ValueError(f"{name} is not a bijection")

    @classmethod
    def identity(cls, n_rows: int, n_cols: int) -> PermutationPair:
        return cls(tuple(range(n_rows)), tuple(range(n_cols)))

    def inverse(self) -> PermutationPair:
        return PermutationPair(_invert(self.row_perm), _invert(self.col_perm))

    def apply(self, m: DenseBitMatrix) -> DenseBitMatrix:
        """Return ``P_row @ m @ P_col``."""
        return m.select_rows(self.row_perm).select_columns(self.col_perm)


def _invert(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for new, old in enumerate(perm):
        inv[old] = new
    return tuple(inv)


class SolveKind(Enum):
    UNIQUE = "unique"
    MULTIPLE = "multiple"
    INCONSISTENT = "inconsistent"


@dataclass
class SolveOutcome:
    """Result of :func:`solve`.

    ``solution`` is set iff the kind is UNIQUE and ``free_count`` iff MULTIPLE.
    For MULTIPLE, ``particular`` holds the solution with all free variables at 0.
    """

    kind: SolveKind
    solution: np.ndarray | None = None
    free_count: int | None = None
    particular: np.ndarray | None = None


def rank(m: DenseBitMatrix) -> int:
    """Row rank over GF(2)."""
    rows = [r for r in m.rows if r]
    rk = 0
    while rows:
        pivot = rows.pop()
        if not pivot:
            continue
        rk += 1
        low = pivot & -pivot
        rows = [r ^ pivot if r & low else r for r in rows]
        rows = [r for r in rows if r]
    return rk


def _rref(rows: list[int], n_pivot_cols: int, col_order: Iterable[int]) -> list[tuple[int, int]]:
    """Reduce ``rows`` in place; return (column, row) pivots in discovery order."""
    pivots = []
    used = [False] * len(rows)
    for c in col_order:
        bit = 1 << c
        pr = -1
        for r, row in enumerate(rows):
            if not used[r] and row & bit:
                pr = r
                break
        if pr < 0:
            continue
        used[pr] = True
        prow = rows[pr]
        for r, row in enumerate(rows):
            if r != pr and row & bit:
                rows[r] = row ^ prow
        pivots.append((c, pr))
        if len(pivots) == n_pivot_cols:
            break
    return pivots


def solve(a: DenseBitMatrix, b) -> SolveOutcome:
    """Solve ``a x = b`` over GF(2) and classify the solution set."""
    b = np.asarray(b, dtype=np.uint8)
    if b.shape != (a.n_rows,):
        raise ValueError(f"rhs length {b.size} does not match {a.n_rows} rows")
    n = a.n_cols
    rhs_bit = 1 << n
    rows = [row | (rhs_bit if bb else 0) for row, bb in zip(a.rows, b)]
    pivots = _rref(rows, min(a.n_rows, n), range(n))
    pivot_rows = {r for _, r in pivots}
    for r, row in enumerate(rows):
        if r not in pivot_rows and row == rhs_bit:
            return SolveOutcome(SolveKind.INCONSISTENT)
    x = np.zeros(n, dtype=np.uint8)
    for c, r in pivots:
        x[c] = (rows[r] >> n) & 1
    free = n - len(pivots)
    if free == 0:
        return SolveOutcome(SolveKind.UNIQUE, solution=x)
    return SolveOutcome(SolveKind.MULTIPLE, free_count=free, particular=x)


def systematize_with_transform(
    m: DenseBitMatrix, col_preference: Sequence[int] | None = None
) -> tuple[DenseBitMatrix, PermutationPair, DenseBitMatrix]:
    """Like :func:`systematize` but also return the row transform ``T``.

    The output satisfies ``out == perms.apply(T @ m)`` with ``T`` invertible.
    """
    n_rows, n_cols = m.shape
    pref = list(range(n_cols)) if col_preference is None else list(col_preference)
    if sorted(pref) != list(range(n_cols)):
        raise ValueError("col_preference must order every column exactly once")
    width = n_rows
    # Carry the transform in the high bits so one XOR updates both.
    rows = [row | (1 << (n_cols + i)) for i, row in enumerate(m.rows)]
    pivots = _rref(rows, n_rows, reversed(pref))
    if len(pivots) < n_rows:
        raise RankDeficiencyError(f"matrix has rank {len(pivots)} < {n_rows} rows")
    pivot_of_col = {c: r for c, r in pivots}
    rank_pos = {c: i for i, c in enumerate(pref)}
    identity_cols = sorted(pivot_of_col, key=rank_pos.__getitem__)
    info_cols = [c for c in pref if c not in pivot_of_col]
    col_perm = tuple(info_cols + identity_cols)
    row_perm = tuple(pivot_of_col[c] for c in identity_cols)
    mask = (1 << n_cols) - 1
    reduced = DenseBitMatrix(n_rows, n_cols, [r & mask for r in rows])
    transform = DenseBitMatrix(n_rows, width, [r >> n_cols for r in rows])
    perms = PermutationPair(row_perm, col_perm)
    return perms.apply(reduced), perms, transform


def systematize(
    m: DenseBitMatrix, col_preference: Sequence[int] | None = None
) -> tuple[DenseBitMatrix, PermutationPair]:
    """Bring a full-row-rank matrix to the form ``[A | I]``.

    ``col_preference`` lists columns from most to least preferred (default:
    index order).  Pivots are chosen greedily from the least preferred end, so
    preferred columns stay in the left block ``A``, which is laid out in
    preference order.
    """
    out, perms, _ = systematize_with_transform(m, col_preference)
    return out, perms


class SparseBinaryMatrix:
    """GF(2) matrix stored as sorted row and column supports."""

    __slots__ = ("n_rows", "n_cols", "row_support", "col_support")

    def __init__(self, n_rows: int, n_cols: int, row_support: Sequence[Iterable[int]]):
        if len(row_support) != n_rows:
            raise ValueError(f"expected {n_rows} rows, got {len(row_support)}")
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.row_support = [sorted(set(s)) for s in row_support]
        self.col_support: list[list[int]] = [[] for _ in range(n_cols)]
        for r, support in enumerate(self.row_support):
            for c in support:
                if not 0 <= c < n_cols:
                    raise IndexError(f"column {c} out of range")
                self.col_support[c].append(r)

    @classmethod
    def from_dense(cls, m: DenseBitMatrix) -> SparseBinaryMatrix:
        return cls(m.n_rows, m.n_cols, [list(iter_bits(r)) for r in m.rows])

    def to_dense(self) -> DenseBitMatrix:
        return DenseBitMatrix.from_supports(self.row_support, self.n_cols)

    def copy(self) -> SparseBinaryMatrix:
        out = object.__new__(SparseBinaryMatrix)
        out.n_rows, out.n_cols = self.n_rows, self.n_cols
        out.row_support = [list(s) for s in self.row_support]
        out.col_support = [list(s) for s in self.col_support]
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def row_degree(self) -> list[int]:
        return [len(s) for s in self.row_support]

    @property
    def col_degree(self) -> list[int]:
        return [len(s) for s in self.col_support]

    def nnz(self) -> int:
        return sum(len(s) for s in self.row_support)

    def density(self) -> float:
        cells = self.n_rows * self.n_cols
        return self.nnz() / cells if cells else 0.0

    def row_bits(self, r: int) -> int:
        v = 0
        for c in self.row_support[r]:
            v |= 1 << c
        return v

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseBinaryMatrix):
            return NotImplemented
        return self.shape == other.shape and self.row_support == other.row_support

    def check_consistency(self) -> None:
        """Raise AssertionError unless row and column supports are transpose duals."""
        pairs_r = {(r, c) for r, s in enumerate(self.row_support) for c in s}
        pairs_c = {(r, c) for c, s in enumerate(self.col_support) for r in s}
        assert pairs_r == pairs_c, "row/column supports disagree"
        for s in self.row_support + self.col_support:
            assert all(s[i] < s[i + 1] for i in range(len(s) - 1)), "support not sorted"


def sparse_row_xor(m: SparseBinaryMatrix, dst: int, src: int) -> SparseBinaryMatrix:
    """Replace row ``dst`` with ``row[dst] + row[src]`` in place and return ``m``."""
    if not (0 <= dst < m.n_rows and 0 <= src < m.n_rows):
        raise IndexError(f"row index out of range: dst={dst}, src={src}")
    a, b = m.row_support[dst], m.row_support[src]
    merged = []
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] < b[j]:
            merged.append(a[i])
            i += 1
        elif a[i] > b[j]:
            merged.append(b[j])
            j += 1
        else:
            col = m.col_support[a[i]]
            del col[bisect.bisect_left(col, dst)]
            i += 1
            j += 1
    merged.extend(a[i:])
    for c in b[j:]:
        merged.append(c)
    added = set(merged).difference(a)
    for c in added:
        bisect.insort(m.col_support[c], dst)
    m.row_support[dst] = merged
    if DEBUG:
        m.check_consistency()
    return m
