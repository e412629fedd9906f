"""Exact ML decoding over the binary erasure channel.

The decoder works on a pruned PCM and runs four stages:

1. peeling BP,
2. triangulation with reference variables (row/column permutations only),
3. back-substitution expressing the diagonalized unknowns as ``u = A r + a``,
4. a small GF(2) solve for the reference variables.

A variant that also performs row eliminations after every diagonal extension
(giving ``H13 = I`` and ``H23 = 0``) is provided as well; it is the form the OSD
post-processor builds on.

Rows are kept as Python int bit sets indexed by the original pruned-PCM column,
so a row addition is one XOR and a parity is one popcount.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .gf2 import (
    DenseBitMatrix,
    PermutationPair,
    SolveKind,
    SolveOutcome,
    SparseBinaryMatrix,
    iter_bits,
    pack_bits,
    solve,
)
from .pcm import PrunedPcm


def _parity(x: int) -> int:
    return x.bit_count() & 1


def _popcount(x: int) -> int:
    return x.bit_count()


# --------------------------------------------------------------------------- channel


@dataclass(frozen=True)
class ErasureWord:
    """BEC output.  ``values[i]`` is meaningful only where ``erased[i]`` is false."""

    values: np.ndarray
    erased: np.ndarray
    epsilon: float = float("nan")

    def __post_init__(self):
        if self.values.shape != self.erased.shape:
            raise ValueError("values and erased must have the same length")

    @property
    def N(self) -> int:
        return self.values.size

    @property
    def n_erased(self) -> int:
        return int(self.erased.sum())


def transmit_bec(c, epsilon: float, rng: np.random.Generator | int | None = None) -> ErasureWord:
    """Erase each position of ``c`` independently with probability ``epsilon``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"erasure probability must lie in [0, 1], got {epsilon}")
    rng = np.random.default_rng(rng)
    c = np.asarray(c, dtype=np.uint8)
    erased = rng.random(c.size) < epsilon
    values = np.where(erased, 0, c).astype(np.uint8)
    return ErasureWord(values, erased, float(epsilon))


# --------------------------------------------------------------------------- policies


class PolicyKind(Enum):
    RANDOM_UNKNOWN = "random"
    MIN_UNKNOWN_CHECK = "min-check"


@dataclass(frozen=True)
class ReferencePolicy:
    """How reference variables are picked when the diagonal cannot be extended.

    ``RANDOM_UNKNOWN`` picks uniformly among the unknown codeword variables
    (any unknown column once none of those is left).  ``MIN_UNKNOWN_CHECK``
    takes the undecoded check with the fewest unknowns (lowest row index on
    ties) and picks its lowest-index unknown.  ``batch`` references are chosen
    before each run of diagonal extension.
    """

    kind: PolicyKind = PolicyKind.MIN_UNKNOWN_CHECK
    batch: int = 1

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("reference batch size must be at least 1")


DEFAULT_POLICY = ReferencePolicy()


# --------------------------------------------------------------------------- state


@dataclass
class TriangulationState:
    """Bookkeeping for the permuted PCM of stages 1-2.

    The permuted matrix has columns ``decoded | references | diagonal | open``
    and rows ``decoded checks | diagonal rows | remaining rows``.  Row contents
    in ``rows`` use original column indices; they differ from the pruned PCM
    only in the elimination variant.
    """

    pcm: SparseBinaryMatrix
    rows: list[int]
    decoded_cols: list[int]
    decoded_value: int
    decoded_rows: list[int]
    ref_cols: list[int] = field(default_factory=list)
    diag: list[tuple[int, int]] = field(default_factory=list)
    residual_rows: list[int] = field(default_factory=list)
    open_mask: int = 0
    eliminated: bool = False
    elimination_xors: int = 0

    @property
    def n_d(self) -> int:
        return len(self.decoded_cols)

    @property
    def n_c(self) -> int:
        return len(self.decoded_rows)

    @property
    def n_r(self) -> int:
        return len(self.ref_cols)

    @property
    def n_u(self) -> int:
        return len(self.diag)

    @property
    def n_e(self) -> int:
        return len(self.residual_rows)

    @property
    def complete(self) -> bool:
        return self.open_mask == 0

    @property
    def open_cols(self) -> list[int]:
        return list(iter_bits(self.open_mask))

    def column_order(self) -> list[int]:
        return self.decoded_cols + self.ref_cols + [c for _, c in self.diag] + self.open_cols

    def row_order(self) -> list[int]:
        return self.decoded_rows + [r for r, _ in self.diag] + self.residual_rows

    @property
    def perms(self) -> PermutationPair:
        return PermutationPair(tuple(self.row_order()), tuple(self.column_order()))

    def current_matrix(self) -> DenseBitMatrix:
        """Unpermuted matrix with the current row contents."""
        return DenseBitMatrix(self.pcm.n_rows, self.pcm.n_cols, list(self.rows))

    def permuted(self) -> DenseBitMatrix:
        return self.perms.apply(self.current_matrix())

    def block(self, i: int, j: int) -> DenseBitMatrix:
        """Block ``H^(i,j)`` of the final layout, ``i`` in {1, 2}, ``j`` in {1, 2, 3}.

        Row block 1 is the diagonal rows and row block 2 the remaining rows;
        column blocks are decoded, reference and diagonal columns.
        """
        row_sets = {1: [r for r, _ in self.diag], 2: self.residual_rows}
        col_sets = {1: self.decoded_cols, 2: self.ref_cols, 3: [c for _, c in self.diag]}
        sub = DenseBitMatrix(len(row_sets[i]), self.pcm.n_cols, [self.rows[r] for r in row_sets[i]])
        return sub.select_columns(col_sets[j])

    def column_values(self, ref_values: np.ndarray, diag_values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.pcm.n_cols, dtype=np.uint8)
        for c in self.decoded_cols:
            out[c] = (self.decoded_value >> c) & 1
        out[self.ref_cols] = ref_values
        out[[c for _, c in self.diag]] = diag_values
        return out

    def check_shape(self) -> None:
        """Assert the final layout: unit lower-triangular H13, zero upper-right block."""
        if not self.complete:
            raise ValueError("triangulation has not finished")
        unknown = 0
        for c in self.ref_cols:
            unknown |= 1 << c
        diag_pos = {}
        for k, (r, c) in enumerate(self.diag):
            diag_pos[c] = k
            unknown |= 1 << c
        for r in self.decoded_rows:
            if self.rows[r] & unknown:
                raise ValueError(f"decoded check {r} touches an unknown column")
        diag_mask = sum(1 << c for c in diag_pos)
        for k, (r, c) in enumerate(self.diag):
            if not (self.rows[r] >> c) & 1:
                raise ValueError(f"diagonal entry {k} is zero")
            for cc in iter_bits(self.rows[r] & diag_mask):
                if diag_pos[cc] > k or (self.eliminated and diag_pos[cc] != k):
                    raise ValueError(f"diagonal row {k} has an entry right of the diagonal")
        if self.eliminated:
            for r in self.residual_rows:
                if self.rows[r] & diag_mask:
                    raise ValueError("remaining rows still touch diagonal columns")


@dataclass
class AffineExpression:
    """``u = A r + a`` for the diagonalized unknowns.

    Row ``k`` is stored packed: bits ``0..n_r-1`` hold ``A[k]`` and bit ``n_r``
    holds ``a[k]``.
    """

    n_r: int
    packed: list[int]

    @property
    def n_u(self) -> int:
        return len(self.packed)

    @property
    def A(self) -> DenseBitMatrix:
        mask = (1 << self.n_r) - 1
        return DenseBitMatrix(self.n_u, self.n_r, [v & mask for v in self.packed])

    @property
    def a(self) -> np.ndarray:
        return np.array([(v >> self.n_r) & 1 for v in self.packed], dtype=np.uint8)

    def evaluate(self, r: np.ndarray) -> np.ndarray:
        rb = pack_bits(r) | (1 << self.n_r)
        return np.array([_parity(v & rb) for v in self.packed], dtype=np.uint8)


class OutcomeKind(Enum):
    DECODED = "decoded"
    AMBIGUOUS = "ambiguous"


@dataclass
class DecodeStats:
    n_d: int = 0
    n_c: int = 0
    n_r: int = 0
    n_u: int = 0
    n_e: int = 0
    stage3_xors: int = 0
    stage4_xors: int = 0
    elimination_xors: int = 0
    perm_count: int = 0
    elim_dims: tuple[int, int] = (0, 0)
    ones_h11: int = 0
    gamma: int = 0
    bp_success: bool = False

    @property
    def xor_count(self) -> int:
        return self.stage3_xors + self.stage4_xors + self.elimination_xors

    @property
    def stage3_bound(self) -> int:
        return (self.n_r + 1) * (self.gamma - self.n_u) + self.ones_h11


@dataclass
class DecodeOutcome:
    """Result of a BEC decode.

    ``codeword`` is set iff the outcome is ``DECODED``.  For ambiguous erasure
    patterns ``fallback_word`` holds the solution with all free variables set
    to zero; it is used only for bit-error accounting.
    """

    kind: OutcomeKind
    codeword: np.ndarray | None
    stats: DecodeStats = field(default_factory=DecodeStats)
    fallback_word: np.ndarray | None = None

    @property
    def decoded(self) -> bool:
        return self.kind is OutcomeKind.DECODED

    def best_guess(self) -> np.ndarray:
        return self.codeword if self.codeword is not None else self.fallback_word


# --------------------------------------------------------------------------- stage 1


def peel_bp(p: PrunedPcm, w: ErasureWord) -> TriangulationState:
    """Resolve every check with a single unknown neighbour until none is left."""
    if w.N != p.N:
        raise ValueError(f"erasure word has length {w.N}, code has N={p.N}")
    m = p.matrix
    rows = list(p.row_bits)
    unknown = 0
    value = 0
    decoded_cols = []
    for j, c in enumerate(p.cvn_columns):
        if w.erased[j]:
            unknown |= 1 << c
        else:
            decoded_cols.append(c)
            if w.values[j]:
                value |= 1 << c
    for c in range(m.n_cols):
        if not p.is_cvn[c]:
            unknown |= 1 << c
    decoded_cols.sort()
    cnt = [_popcount(r & unknown) for r in rows]
    queue = [r for r, k in enumerate(cnt) if k == 1]
    while queue:
        r = queue.pop()
        if cnt[r] != 1:
            continue
        bit = rows[r] & unknown
        col = bit.bit_length() - 1
        unknown ^= bit
        if _parity(rows[r] & value):
            value |= bit
        decoded_cols.append(col)
        for rr in m.col_support[col]:
            cnt[rr] -= 1
            if cnt[rr] == 1:
                queue.append(rr)
    decoded_rows = [r for r, k in enumerate(cnt) if k == 0]
    for r in decoded_rows:
        if _parity(rows[r] & value):
            raise ValueError(f"check {r} is violated by the received values (corrupted input)")
    open_rows = [r for r, k in enumerate(cnt) if k > 0]
    return TriangulationState(
        pcm=m,
        rows=rows,
        decoded_cols=decoded_cols,
        decoded_value=value,
        decoded_rows=decoded_rows,
        residual_rows=open_rows,
        open_mask=unknown,
    )


# --------------------------------------------------------------------------- stage 2


class _Work:
    """Mutable counters shared by the triangulation loop and reference choosers."""

    def __init__(self, s: TriangulationState, active_rows: list[int]):
        self.s = s
        self.rows = s.rows
        self.col_support = s.pcm.col_support
        self.open_mask = s.open_mask
        self.active = set(active_rows)
        self.cnt = {r: _popcount(self.rows[r] & self.open_mask) for r in active_rows}
        self.singles = {r for r in active_rows if self.cnt[r] == 1}

    def close(self, col: int) -> None:
        self.open_mask &= ~(1 << col)
        for r in self.col_support[col]:
            if r in self.active:
                k = self.cnt[r] - 1
                self.cnt[r] = k
                if k == 1:
                    self.singles.add(r)
                elif k == 0:
                    self.singles.discard(r)

    def min_count_row(self, predicate: Callable[[int], bool] | None = None) -> int | None:
        """Open row with the fewest (at least two) open columns, lowest index on ties."""
        best = None
        for r in self.active:
            k = self.cnt[r]
            if k < 2 or (best is not None and (k, r) > best):
                continue
            if predicate is not None and not predicate(r):
                continue
            best = (k, r)
        return None if best is None else best[1]


RefChooser = Callable[[_Work], int]


def _min_check_chooser(work: _Work) -> int:
    r = work.min_count_row()
    if r is None:
        return (work.open_mask & -work.open_mask).bit_length() - 1
    bits = work.rows[r] & work.open_mask
    return (bits & -bits).bit_length() - 1


def _random_chooser(cvn_mask: int, rng: np.random.Generator) -> RefChooser:
    def choose(work: _Work) -> int:
        pool = work.open_mask & cvn_mask or work.open_mask
        cols = list(iter_bits(pool))
        return cols[int(rng.integers(len(cols)))]

    return choose


def _make_chooser(p: PrunedPcm, policy: ReferencePolicy, rng) -> RefChooser:
    if policy.kind is PolicyKind.MIN_UNKNOWN_CHECK:
        return _min_check_chooser
    cvn_mask = sum(1 << c for c in p.cvn_columns)
    return _random_chooser(cvn_mask, np.random.default_rng(rng))


def run_triangulation(
    s: TriangulationState, chooser: RefChooser, batch: int = 1, eliminate: bool = False
) -> TriangulationState:
    """Shared stage-2 loop: extend the diagonal, else add ``batch`` references.

    Each extension step pivots every row that has exactly one open column at
    the start of the step.  With ``eliminate`` the new pivot rows are added to
    every other open row containing their pivot column; open-column counts are
    unaffected by this, so the pivot sequence matches the permutation-only run.
    """
    rows = list(s.rows)
    open_rows = list(s.residual_rows)
    s = replace(s, rows=rows, ref_cols=list(s.ref_cols), diag=list(s.diag), residual_rows=[])
    work = _Work(s, open_rows)
    elim_xors = s.elimination_xors
    while work.open_mask:
        if work.singles:
            step = []
            for r in sorted(work.singles):
                if work.cnt[r] != 1:
                    continue
                bits = rows[r] & work.open_mask
                col = bits.bit_length() - 1
                work.active.discard(r)
                work.singles.discard(r)
                work.close(col)
                s.diag.append((r, col))
                step.append((r, col))
            if eliminate:
                for r, col in step:
                    pivot_row = rows[r]
                    for rr in work.col_support[col]:
                        if rr in work.active and (rows[rr] >> col) & 1:
                            rows[rr] ^= pivot_row
                            elim_xors += _popcount(pivot_row) - 1
            continue
        for _ in range(batch):
            if not work.open_mask:
                break
            col = chooser(work)
            work.close(col)
            s.ref_cols.append(col)
    s.residual_rows = sorted(work.active)
    s.open_mask = 0
    s.eliminated = eliminate
    s.elimination_xors = elim_xors
    return s


def triangulate(
    s: TriangulationState, policy: ReferencePolicy = DEFAULT_POLICY, rng=None, p: PrunedPcm | None = None
) -> TriangulationState:
    """Bring the peeled PCM to the unit lower-triangular layout by permutations only.

    ``p`` is needed only for the random policy, which draws among codeword
    columns.
    """
    chooser = _min_check_chooser if policy.kind is PolicyKind.MIN_UNKNOWN_CHECK else _make_chooser(p, policy, rng)
    return run_triangulation(s, chooser, policy.batch, eliminate=False)


def triangulate_parallel_variant(
    s: TriangulationState, policy: ReferencePolicy = DEFAULT_POLICY, rng=None, p: PrunedPcm | None = None
) -> TriangulationState:
    """Like :func:`triangulate` but also zero the diagonal columns outside the diagonal."""
    chooser = _min_check_chooser if policy.kind is PolicyKind.MIN_UNKNOWN_CHECK else _make_chooser(p, policy, rng)
    return run_triangulation(s, chooser, policy.batch, eliminate=True)


# --------------------------------------------------------------------------- stages 3-4


def _ref_packer(s: TriangulationState) -> Callable[[int], int]:
    ref_pos = {c: i for i, c in enumerate(s.ref_cols)}
    ref_mask = sum(1 << c for c in s.ref_cols)

    def pack(row: int) -> int:
        out = 0
        for c in iter_bits(row & ref_mask):
            out |= 1 << ref_pos[c]
        return out

    return pack


def _syndrome_bit(row: int, s: TriangulationState, decoded_mask: int, stats: DecodeStats | None) -> int:
    part = row & decoded_mask
    if stats is not None:
        stats.stage3_xors += max(_popcount(part) - 1, 0)
    return _parity(part & s.decoded_value)


def back_substitute(s: TriangulationState, stats: DecodeStats | None = None) -> AffineExpression:
    """Express the diagonalized unknowns through the references, ``u = A r + a``.

    Row ``k`` of ``A`` is row ``k`` of ``H12`` plus the rows of ``A`` selected by
    the below-diagonal ones of row ``k`` of ``H13``; ``a`` follows the same
    recursion started from ``s1 = H11 d``.
    """
    if not s.complete:
        raise ValueError("back-substitution needs a finished triangulation")
    n_r = s.n_r
    pack = _ref_packer(s)
    decoded_mask = sum(1 << c for c in s.decoded_cols)
    diag_pos = {c: k for k, (_, c) in enumerate(s.diag)}
    diag_mask = sum(1 << c for c in diag_pos)
    packed: list[int] = []
    for k, (r, col) in enumerate(s.diag):
        row = s.rows[r]
        v = pack(row) | (_syndrome_bit(row, s, decoded_mask, stats) << n_r)
        for c in iter_bits(row & diag_mask):
            i = diag_pos[c]
            if i == k:
                continue
            if i > k:
                raise ValueError(f"row {k} of H13 has an entry above the diagonal")
            v ^= packed[i]
            if stats is not None:
                stats.stage3_xors += n_r + 1
        packed.append(v)
    return AffineExpression(n_r, packed)


def _residual_system(s: TriangulationState, e: AffineExpression, stats: DecodeStats | None) -> tuple[DenseBitMatrix, np.ndarray]:
    n_r = s.n_r
    pack = _ref_packer(s)
    decoded_mask = sum(1 << c for c in s.decoded_cols)
    diag_pos = {c: k for k, (_, c) in enumerate(s.diag)}
    diag_mask = sum(1 << c for c in diag_pos)
    mask = (1 << n_r) - 1
    a_rows, rhs = [], []
    for r in s.residual_rows:
        row = s.rows[r]
        part = row & decoded_mask
        v = pack(row) | (_parity(part & s.decoded_value) << n_r)
        if stats is not None:
            stats.stage4_xors += max(_popcount(part) - 1, 0)
        for c in iter_bits(row & diag_mask):
            v ^= e.packed[diag_pos[c]]
            if stats is not None:
                stats.stage4_xors += n_r + 1
        a_rows.append(v & mask)
        rhs.append((v >> n_r) & 1)
    return DenseBitMatrix(len(a_rows), n_r, a_rows), np.array(rhs, dtype=np.uint8)


def solve_reference(s: TriangulationState, e: AffineExpression, stats: DecodeStats | None = None) -> SolveOutcome:
    """Solve ``(H22 + H23 A) r = s2 + H23 a`` for the reference variables."""
    a, b = _residual_system(s, e, stats)
    if stats is not None:
        stats.elim_dims = (a.n_rows, s.n_r + 1)
    out = solve(a, b)
    if out.kind is SolveKind.INCONSISTENT:
        raise ValueError("residual system is inconsistent (corrupted input or decoder bug)")
    return out


def affine_of_eliminated(s: TriangulationState, stats: DecodeStats | None = None) -> AffineExpression:
    """``A = H12`` and ``a = H11 d`` for a state produced with row elimination."""
    n_r = s.n_r
    pack = _ref_packer(s)
    decoded_mask = sum(1 << c for c in s.decoded_cols)
    packed = []
    for r, _ in s.diag:
        row = s.rows[r]
        packed.append(pack(row) | (_syndrome_bit(row, s, decoded_mask, stats) << n_r))
    return AffineExpression(n_r, packed)


def _stats_of(s: TriangulationState) -> DecodeStats:
    st = DecodeStats(n_d=s.n_d, n_c=s.n_c, n_r=s.n_r, n_u=s.n_u, n_e=s.n_e)
    decoded_mask = sum(1 << c for c in s.decoded_cols)
    diag_mask = sum(1 << c for _, c in s.diag)
    for r, _ in s.diag:
        st.ones_h11 += _popcount(s.rows[r] & decoded_mask)
        st.gamma += _popcount(s.rows[r] & diag_mask)
    st.perm_count = s.n_r + 2 * s.n_u
    st.elimination_xors = s.elimination_xors
    return st


def ml_decode_bec(
    p: PrunedPcm,
    w: ErasureWord,
    policy: ReferencePolicy = DEFAULT_POLICY,
    rng=None,
    parallel: bool = False,
) -> DecodeOutcome:
    """Exact ML decoding of a BEC output on the pruned PCM.

    With ``parallel`` the elimination variant of stage 2 is used, so stage 3
    reduces to reading off ``H12`` and ``H11 d``.
    """
    s = peel_bp(p, w)
    if s.complete:
        word = np.array([(s.decoded_value >> c) & 1 for c in p.cvn_columns], dtype=np.uint8)
        stats = DecodeStats(n_d=s.n_d, n_c=s.n_c, bp_success=True)
        return DecodeOutcome(OutcomeKind.DECODED, word, stats)
    if parallel:
        s = triangulate_parallel_variant(s, policy, rng, p)
    else:
        s = triangulate(s, policy, rng, p)
    stats = _stats_of(s)
    e = affine_of_eliminated(s, stats) if parallel else back_substitute(s, stats)
    sol = solve_reference(s, e, stats)
    r = sol.solution if sol.kind is SolveKind.UNIQUE else sol.particular
    values = s.column_values(r, e.evaluate(r))
    word = values[list(p.cvn_columns)]
    if sol.kind is SolveKind.UNIQUE:
        return DecodeOutcome(OutcomeKind.DECODED, word, stats)
    return DecodeOutcome(OutcomeKind.AMBIGUOUS, None, stats, fallback_word=word)


# --------------------------------------------------------------------------- oracle


def brute_force_ml_bec(H: DenseBitMatrix, w: ErasureWord) -> DecodeOutcome:
    """Dense ML decoding: solve ``H_erased c_erased = H_known c_known``."""
    if H.n_cols != w.N:
        raise ValueError("PCM width does not match the erasure word")
    erased = np.flatnonzero(w.erased)
    known = np.flatnonzero(~w.erased)
    rhs = H.select_columns(list(known)).mul_vec(w.values[known])
    out = solve(H.select_columns(list(erased)), rhs)
    stats = DecodeStats(n_e=H.n_rows, elim_dims=(H.n_rows, len(erased) + 1))
    if out.kind is SolveKind.INCONSISTENT:
        raise ValueError("received values are not consistent with any codeword")
    word = w.values.copy()
    x = out.solution if out.kind is SolveKind.UNIQUE else out.particular
    word[erased] = x
    if out.kind is SolveKind.UNIQUE:
        return DecodeOutcome(OutcomeKind.DECODED, word, stats)
    return DecodeOutcome(OutcomeKind.AMBIGUOUS, None, stats, fallback_word=word)
