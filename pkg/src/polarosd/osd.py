"""Ordered-statistics post-processing of CBP/CBPL soft outputs.

The most reliable basis is found with the triangulation engine of the BEC
decoder: the K most reliable codeword columns of the pruned PCM are fixed,
the rest are diagonalized (with row elimination) using reference variables
drawn from the most reliable remaining codeword columns.  A small
``n_r x (K + n_r)`` elimination then yields ``[A | I]``, and hidden columns are
dropped together with their rows.

Scores follow the correlation form: a candidate ``c`` scores
``sum_l (-1)^{c_l} y_l`` minus a constant shared by all candidates, so larger
is closer to ``y`` in Euclidean distance.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .bec import TriangulationState, _Work, run_triangulation
from .bp_awgn import BpConfig, CbpBatch, cbpl_decode, select_closest
from .gf2 import DenseBitMatrix, RankDeficiencyError, iter_bits, systematize, systematize_with_transform
from .pcm import PrunedPcm


def reliability_order(soft_llrs) -> np.ndarray:
    """Codeword indices by decreasing ``|LLR|``; ties keep the lower index first."""
    return np.argsort(-np.abs(np.asarray(soft_llrs, dtype=float)), kind="stable")


# --------------------------------------------------------------------------- MRIB


@dataclass
class MribState:
    """Triangulated pruned PCM for OSD.

    ``state`` uses ``decoded_cols`` for the K fixed columns (most reliable
    first); its references are the extra columns the stage-4 elimination may
    draw the basis from.
    """

    state: TriangulationState
    pcm: PrunedPcm
    order: np.ndarray
    rank_of_col: dict[int, int]

    @property
    def K(self) -> int:
        return self.pcm.K

    @property
    def n_r(self) -> int:
        return self.state.n_r

    def leading_columns(self) -> list[int]:
        """The ``K + n_r`` columns of the fixed and reference blocks."""
        return self.state.decoded_cols + self.state.ref_cols


REF_POLICIES = ("min-check", "reliability")


def _osd_chooser(is_cvn: tuple[bool, ...], rank_of_col: dict[int, int], policy: str):
    cvn_mask = sum(1 << c for c, f in enumerate(is_cvn) if f)

    def best_cvn(bits: int) -> int:
        return min(iter_bits(bits), key=rank_of_col.__getitem__)

    def choose(work: _Work) -> int:
        open_cvn = work.open_mask & cvn_mask
        if not open_cvn:
            bits = work.open_mask
            return (bits & -bits).bit_length() - 1
        if policy == "reliability":
            return best_cvn(open_cvn)
        r = work.min_count_row(lambda r: bool(work.rows[r] & open_cvn))
        if r is None:
            return best_cvn(open_cvn)
        return best_cvn(work.rows[r] & open_cvn)

    return choose


def mrib_triangulate(p: PrunedPcm, soft_llrs, policy: str = "min-check") -> MribState:
    """Fix the K most reliable codeword columns and diagonalize the rest.

    ``policy`` picks references: ``"min-check"`` takes the most reliable open
    codeword column of a check with the fewest open columns (among checks
    with at least one open codeword column); ``"reliability"`` takes the most
    reliable open codeword column overall, which makes the stage-4 basis the
    exact most reliable basis.
    """
    if policy not in REF_POLICIES:
        raise ValueError(f"unknown reference policy {policy!r}")
    soft_llrs = np.asarray(soft_llrs, dtype=float)
    if soft_llrs.shape != (p.N,):
        raise ValueError(f"expected {p.N} soft values, got shape {soft_llrs.shape}")
    order = reliability_order(soft_llrs)
    rank_of_col = {p.cvn_columns[j]: k for k, j in enumerate(order)}
    fixed = [p.cvn_columns[j] for j in order[: p.K]]
    fixed_mask = sum(1 << c for c in fixed)
    all_mask = (1 << p.n_prime) - 1
    s = TriangulationState(
        pcm=p.matrix,
        rows=list(p.row_bits),
        decoded_cols=fixed,
        decoded_value=0,
        decoded_rows=[],
        residual_rows=list(range(p.matrix.n_rows)),
        open_mask=all_mask & ~fixed_mask,
    )
    s = run_triangulation(s, _osd_chooser(p.is_cvn, rank_of_col, policy), batch=1, eliminate=True)
    return MribState(s, p, order, rank_of_col)


# --------------------------------------------------------------------------- stage 4


@dataclass
class SystematicPcm:
    """``[A | I_{N-K}]`` over permuted codeword positions.

    ``lam[k]`` is the original codeword index placed at position ``k``; the
    first K positions are the basis, most reliable first.
    """

    matrix: DenseBitMatrix
    lam: np.ndarray
    K: int
    elimination_dims: tuple[int, int] = (0, 0)
    elimination_xors: int = 0
    backsub_xors: int = 0
    dense_fallback: bool = False

    @property
    def N(self) -> int:
        return self.lam.size

    @property
    def A(self) -> np.ndarray:
        """``(N-K) x K`` parity part as a 0/1 array."""
        return self.matrix.to_array()[:, : self.K]

    def permute(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[..., self.lam]

    def unpermute(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[..., self.lam] = v
        return out


def _dense_systematic(p: PrunedPcm, rank_of_col: dict[int, int]) -> SystematicPcm:
    """Fallback: systematize the whole pruned PCM with hidden columns least preferred.

    The hidden columns are linearly independent (codeword values determine
    them), so they all become pivots and the left block is the exact MRIB.
    """
    hidden = [c for c in range(p.n_prime) if not p.is_cvn[c]]
    pref = sorted(p.cvn_columns, key=rank_of_col.__getitem__) + hidden
    m = DenseBitMatrix(p.matrix.n_rows, p.n_prime, list(p.row_bits))
    out, perms = systematize(m, pref)
    K = p.K
    left = list(perms.col_perm[:K])
    if any(not p.is_cvn[c] for c in left):
        raise RankDeficiencyError("hidden column entered the information set")
    keep = [i for i, c in enumerate(perms.col_perm[K:]) if p.is_cvn[c]]
    sub = out.select_rows(keep).select_columns(list(range(K)) + [K + i for i in keep])
    lam = np.array([p.cvn_index[c] for c in left + [perms.col_perm[K + i] for i in keep]])
    return SystematicPcm(sub, lam, K, (m.n_rows, m.n_cols), dense_fallback=True)


def systematize_stage4(ms: MribState) -> SystematicPcm:
    """Eliminate the ``n_r x (K + n_r)`` block and drop hidden columns.

    The left K columns of the result are the most reliable columns the block
    admits, in decreasing reliability.  Clearing the pivot columns out of the
    diagonal rows is counted separately as back-substitution.
    """
    s, p, K = ms.state, ms.pcm, ms.K
    lead = ms.leading_columns()
    n_r = s.n_r
    big = len(ms.rank_of_col) + 1

    def rel_rank(c: int) -> int:
        return ms.rank_of_col.get(c, big + c)

    res_rows = [s.rows[r] for r in s.residual_rows]
    block = DenseBitMatrix(len(res_rows), p.n_prime, res_rows).select_columns(lead)
    pref = sorted(range(len(lead)), key=lambda i: rel_rank(lead[i]))
    if n_r:
        out, perms, _ = systematize_with_transform(block, pref)
        left = [lead[c] for c in perms.col_perm[:K]]
        pivots = [lead[c] for c in perms.col_perm[K:]]
        # Expand the reduced block rows back to full width.
        red_rows = []
        for row in out.rows:
            v = 0
            for i, c in enumerate(perms.col_perm):
                if (row >> i) & 1:
                    v |= 1 << lead[c]
            red_rows.append(v)
        elim_xors = sum(max(bin(r).count("1") - 1, 0) for r in res_rows)
    else:
        left, pivots, red_rows, elim_xors = list(lead), [], [], 0
    if any(not p.is_cvn[c] for c in left):
        return _dense_systematic(p, ms.rank_of_col)
    left.sort(key=rel_rank)

    # Rows: reduced block rows (pivot = reference-block column), then diagonal rows.
    row_list = list(red_rows)
    ident = list(pivots)
    pivot_row = {c: i for i, c in enumerate(pivots)}
    backsub = 0
    for r, col in s.diag:
        v = s.rows[r]
        for c in pivots:
            if (v >> c) & 1:
                v ^= red_rows[pivot_row[c]]
                backsub += 1
        row_list.append(v)
        ident.append(col)
    keep = [i for i, c in enumerate(ident) if p.is_cvn[c]]
    cols = left + [ident[i] for i in keep]
    mat = DenseBitMatrix(len(keep), p.n_prime, [row_list[i] for i in keep]).select_columns(cols)
    lam = np.array([p.cvn_index[c] for c in cols])
    return SystematicPcm(mat, lam, K, (n_r, K + n_r), elim_xors, backsub)


# --------------------------------------------------------------------------- reprocessing


@dataclass
class OsdCandidate:
    """A reprocessing winner.

    ``pattern`` lists flipped basis positions (permuted domain), ``codeword``
    is in the original codeword order and ``score`` is the correlation score.
    """

    pattern: tuple[int, ...]
    codeword: np.ndarray
    score: float

    def distance(self, y: np.ndarray) -> float:
        return float(((1.0 - 2.0 * self.codeword - y) ** 2).sum())


@dataclass
class _Base:
    sigma1: np.ndarray
    y1: np.ndarray
    c0: np.ndarray
    s: np.ndarray
    S: np.ndarray


def _base(sp: SystematicPcm, llr_perm: np.ndarray, y_perm: np.ndarray) -> _Base:
    K = sp.K
    A = sp.A.astype(np.int64)
    c01 = (llr_perm[:K] < 0).astype(np.int64)
    c02 = (A @ c01) & 1
    y2 = y_perm[K:]
    s = y2 * (1 - 2 * c02)
    S = 1.0 - 2.0 * A
    return _Base(1.0 - 2.0 * c01, y_perm[:K], np.concatenate([c01, c02]).astype(np.uint8), s, S)


def _codeword(sp: SystematicPcm, b: _Base, pattern: tuple[int, ...]) -> np.ndarray:
    c = b.c0.copy()
    A = sp.A
    for i in pattern:
        c[i] ^= 1
        c[sp.K:] ^= A[:, i]
    return sp.unpermute(c)


def order1_scores(sp: SystematicPcm, b: _Base) -> np.ndarray:
    """Scores of the empty pattern followed by the K single flips."""
    singles = -2.0 * b.sigma1 * b.y1 + b.s @ b.S
    return np.concatenate([[b.s.sum()], singles])


def pair_score_matrix(b: _Base) -> np.ndarray:
    """``D[i, j] = sum_l s_l (-1)^{h_il} (-1)^{h_jl}`` via one matrix product."""
    Amat = (b.S * b.s[:, None]).T
    return Amat @ b.S


def _best_order1(sp: SystematicPcm, b: _Base) -> tuple[tuple[int, ...], float]:
    sc = order1_scores(sp, b)
    i = int(np.argmax(sc))
    return ((), float(sc[0])) if i == 0 else ((i - 1,), float(sc[i]))


def _best_pairs(b: _Base, pairs: np.ndarray) -> tuple[tuple[int, ...], float] | None:
    """Best of the listed pairs (rows ``(i, j)``, lexicographically sorted)."""
    if len(pairs) == 0:
        return None
    lin = -2.0 * b.sigma1 * b.y1
    D = pair_score_matrix(b)
    i, j = pairs[:, 0], pairs[:, 1]
    sc = lin[i] + lin[j] + D[i, j]
    k = int(np.argmax(sc))
    return (int(i[k]), int(j[k])), float(sc[k])


def _finish(sp: SystematicPcm, b: _Base, pattern: tuple[int, ...], score: float) -> OsdCandidate:
    return OsdCandidate(pattern, _codeword(sp, b, pattern), score)


def reprocess_order1(sp: SystematicPcm, y_perm, llr_perm) -> OsdCandidate:
    """Best of the ``K + 1`` weight-at-most-one patterns."""
    b = _base(sp, np.asarray(llr_perm, float), np.asarray(y_perm, float))
    pattern, score = _best_order1(sp, b)
    return _finish(sp, b, pattern, score)


def _all_pairs(K: int) -> np.ndarray:
    i, j = np.triu_indices(K, k=1)
    return np.stack([i, j], axis=1)


def _with_pairs(sp: SystematicPcm, b: _Base, pairs: np.ndarray) -> OsdCandidate:
    pattern, score = _best_order1(sp, b)
    best2 = _best_pairs(b, pairs)
    if best2 is not None and best2[1] > score:
        pattern, score = best2
    return _finish(sp, b, pattern, score)


def reprocess_order2(sp: SystematicPcm, y_perm, llr_perm) -> OsdCandidate:
    """Best over all patterns of weight at most two."""
    b = _base(sp, np.asarray(llr_perm, float), np.asarray(y_perm, float))
    return _with_pairs(sp, b, _all_pairs(sp.K))


def partial_pairs(abs_llr_basis: np.ndarray, M: int, mode: str = "sum") -> np.ndarray:
    """The ``M`` pairs searched by partial order-2 reprocessing.

    ``mode="sum"`` takes the M pairs with the smallest ``|l_i| + |l_j|`` (ties in
    lexicographic pair order).  ``mode="loop"`` walks ``i = K-2, K-3, ...`` with
    ``j = K-1, ..., i+1`` inside, which agrees with ``"sum"`` only for some
    reliability profiles.  Both return pairs sorted lexicographically.
    """
    K = abs_llr_basis.size
    total = K * (K - 1) // 2
    if not 0 <= M <= total:
        raise ValueError(f"pair budget {M} outside [0, {total}]")
    if mode == "sum":
        pairs = _all_pairs(K)
        key = abs_llr_basis[pairs[:, 0]] + abs_llr_basis[pairs[:, 1]]
        chosen = pairs[np.sort(np.argsort(key, kind="stable")[:M])]
        return chosen
    if mode == "loop":
        out = []
        for i in range(K - 2, -1, -1):
            for j in range(K - 1, i, -1):
                if len(out) == M:
                    break
                out.append((i, j))
        arr = np.array(sorted(out), dtype=np.int64).reshape(-1, 2)
        return arr
    raise ValueError(f"unknown pair order {mode!r}")


def pair_budget(K: int, fraction: float) -> int:
    return int(math.ceil(fraction * K * (K - 1) / 2 - 1e-12))


def reprocess_partial2(sp: SystematicPcm, y_perm, llr_perm, M: int, mode: str = "sum") -> OsdCandidate:
    """Order-1 plus the ``M`` pairs of least reliable basis bits."""
    llr_perm = np.asarray(llr_perm, float)
    b = _base(sp, llr_perm, np.asarray(y_perm, float))
    return _with_pairs(sp, b, partial_pairs(np.abs(llr_perm[: sp.K]), M, mode))


def reprocess_lcosd(ms: MribState, y, soft_llrs) -> OsdCandidate | None:
    """Weight-at-most-one patterns over the fixed and reference columns, no stage-4 elimination.

    Patterns must satisfy the remaining ``n_r`` checks; survivors are completed
    through the unit diagonal.  ``y`` and ``soft_llrs`` are in codeword order.
    Returns ``None`` when no pattern passes.
    """
    s, p = ms.state, ms.pcm
    y = np.asarray(y, float)
    soft_llrs = np.asarray(soft_llrs, float)
    lead = ms.leading_columns()
    width = len(lead)
    base = np.array(
        [(soft_llrs[p.cvn_index[c]] < 0) if p.is_cvn[c] else 0 for c in lead], dtype=np.uint8
    )
    res = DenseBitMatrix(s.n_e, p.n_prime, [s.rows[r] for r in s.residual_rows]).select_columns(lead).to_array()
    diag = DenseBitMatrix(s.n_u, p.n_prime, [s.rows[r] for r, _ in s.diag]).select_columns(lead).to_array()
    res = res.reshape(s.n_e, width)
    diag = diag.reshape(s.n_u, width)
    syn0 = (res.astype(np.int64) @ base) & 1
    d0 = (diag.astype(np.int64) @ base) & 1

    # Candidate 0 flips nothing; candidate i + 1 flips lead column i.
    passes = [not syn0.any()] + [bool((res[:, i] == syn0).all()) for i in range(width)]
    cvn_lead = [(k, p.cvn_index[c]) for k, c in enumerate(lead) if p.is_cvn[c]]
    cvn_diag = [(k, p.cvn_index[col]) for k, (_, col) in enumerate(s.diag) if p.is_cvn[col]]
    best = None
    for idx, ok in enumerate(passes):
        if not ok:
            continue
        lead_vals = base.copy()
        dvals = d0.copy()
        if idx:
            lead_vals[idx - 1] ^= 1
            dvals = dvals ^ diag[:, idx - 1]
        cw = np.zeros(p.N, dtype=np.uint8)
        for k, j in cvn_lead:
            cw[j] = lead_vals[k]
        for k, j in cvn_diag:
            cw[j] = dvals[k]
        score = float(((1.0 - 2.0 * cw) * y).sum())
        if best is None or score > best.score:
            best = OsdCandidate(() if idx == 0 else (idx - 1,), cw, score)
    return best


# --------------------------------------------------------------------------- modes


@dataclass(frozen=True)
class OsdMode:
    """Reprocessing variant: ``osd1``, ``osd2``, ``posd2`` (with pair fraction) or ``lcosd1``."""

    kind: str
    fraction: float = 1.0
    pair_order: str = "sum"
    ref_policy: str = "min-check"

    KINDS = ("osd1", "osd2", "posd2", "lcosd1")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown OSD mode {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("pair fraction must lie in [0, 1]")
        if self.pair_order not in ("sum", "loop"):
            raise ValueError(f"unknown pair order {self.pair_order!r}")
        if self.ref_policy not in REF_POLICIES:
            raise ValueError(f"unknown reference policy {self.ref_policy!r}")

    @classmethod
    def parse(cls, text: str) -> OsdMode:
        t = text.strip().lower().replace(" ", "")
        m = re.fullmatch(r"posd2?\((?:2,)?([0-9./]+)\)", t)
        if m:
            frac = m.group(1)
            if "/" in frac:
                a, b = frac.split("/")
                value = float(a) / float(b)
            else:
                value = float(frac)
            return cls("posd2", value)
        aliases = {"osd1": "osd1", "osd(1)": "osd1", "osd2": "osd2", "osd(2)": "osd2", "lcosd1": "lcosd1", "lcosd(1)": "lcosd1", "lcosd": "lcosd1"}
        if t in aliases:
            return cls(aliases[t])
        raise ValueError(f"cannot parse OSD mode {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "posd2":
            return f"POSD2({self.fraction:g})"
        return self.kind.upper()


@dataclass
class BranchStats:
    n_r: int
    elim_dims: tuple[int, int]
    dense_fallback: bool = False


def osd_branch(p: PrunedPcm, soft_llrs, y, mode: OsdMode) -> tuple[OsdCandidate | None, BranchStats]:
    """Full OSD pipeline on one branch's soft output (codeword order in and out)."""
    soft_llrs = np.asarray(soft_llrs, float)
    y = np.asarray(y, float)
    ms = mrib_triangulate(p, soft_llrs, mode.ref_policy)
    if mode.kind == "lcosd1":
        return reprocess_lcosd(ms, y, soft_llrs), BranchStats(ms.n_r, (0, 0))
    sp = systematize_stage4(ms)
    y_perm, l_perm = sp.permute(y), sp.permute(soft_llrs)
    if mode.kind == "osd1":
        cand = reprocess_order1(sp, y_perm, l_perm)
    elif mode.kind == "osd2":
        cand = reprocess_order2(sp, y_perm, l_perm)
    else:
        cand = reprocess_partial2(sp, y_perm, l_perm, pair_budget(sp.K, mode.fraction), mode.pair_order)
    return cand, BranchStats(ms.n_r, sp.elimination_dims, sp.dense_fallback)


@dataclass
class CbplOsdOutput:
    """Per-frame decisions and instrumentation of CBPL followed by OSD."""

    codeword: np.ndarray
    osd_used: np.ndarray
    branch_stats: list = field(default_factory=list)

    @property
    def osd_invocations(self) -> int:
        return int(self.osd_used.sum())


def osd_postprocess(
    p: PrunedPcm, branches: list[CbpBatch], y: np.ndarray, modes: list[OsdMode]
) -> dict[OsdMode, CbplOsdOutput]:
    """Apply each OSD mode to frames where no branch terminated early.

    Frames with an early-terminated branch keep the CBPL selection.  Across
    branches the candidate closest to ``y`` wins (lowest branch on ties).
    """
    y = np.atleast_2d(np.asarray(y, float))
    B = y.shape[0]
    cands = np.stack([b.hard_c for b in branches])
    valid = np.stack([b.terminated_early for b in branches])
    pick = select_closest(cands, valid, y)
    base = cands[pick, np.arange(B)]
    need = ~valid.any(axis=0)
    outputs = {}
    for mode in modes:
        words = base.copy()
        stats: list = [None] * B
        for f in np.flatnonzero(need):
            best, best_d, per = None, np.inf, []
            for br in branches:
                cand, st = osd_branch(p, br.soft_codeword_llrs[f], y[f], mode)
                per.append(st)
                word = cand.codeword if cand is not None else br.hard_c[f]
                d = float(((1.0 - 2.0 * word - y[f]) ** 2).sum())
                if d < best_d:
                    best, best_d = word, d
            words[f] = best
            stats[f] = per
        outputs[mode] = CbplOsdOutput(words, need.copy(), stats)
    return outputs


def cbpl_osd_decode(
    aug,
    llr,
    p: PrunedPcm,
    L: int = 6,
    cfg: BpConfig = BpConfig(),
    mode: OsdMode | str = OsdMode("osd1"),
    y=None,
) -> CbplOsdOutput:
    """CBPL decoding followed by OSD on frames with no early-terminated branch."""
    if isinstance(mode, str):
        mode = OsdMode.parse(mode)
    llr = np.asarray(llr, float)
    single = llr.ndim == 1
    llr2 = np.atleast_2d(llr)
    y2 = llr2 if y is None else np.atleast_2d(np.asarray(y, float))
    out = cbpl_decode(aug, llr2, L, cfg, y=y2)
    res = osd_postprocess(p, out.branches, y2, [mode])[mode]
    if single:
        return CbplOsdOutput(res.codeword[0], res.osd_used[:1], res.branch_stats[:1])
    return res
