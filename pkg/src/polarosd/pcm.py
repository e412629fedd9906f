"""Sparse parity-check matrices for polar codes.

The standard polar factor graph is written as an ``N n x N (n+1)`` PCM, then
pruned to a much smaller valid PCM of the code.  Column ``l*N + j`` of the
factor-graph PCM is node ``j`` of variable layer ``l``.  Layer 0 holds the
input word ``u``; layer ``n`` holds the codeword, with node ``j`` equal to
codeword bit ``c_j``.  Layers in between are the butterfly partial sums of
``z = u F^{(x)n}`` (``z = c`` up to bit reversal).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .gf2 import DenseBitMatrix, SparseBinaryMatrix, iter_bits, rank
from .polar import CrcSpec, PolarCodeSpec, bit_reverse_permutation

ARTIFACT_MAGIC = b"PPCM"
ARTIFACT_VERSION = 1


class ArtifactError(ValueError):
    """Malformed, truncated or incompatible pruned-PCM artifact."""


def stage_bits(n: int) -> list[int]:
    """Index bit combined by each butterfly stage, left (u side) to right."""
    return list(range(n))


@dataclass(frozen=True)
class FactorGraphPcm:
    matrix: SparseBinaryMatrix
    spec: PolarCodeSpec

    @property
    def cvn_columns(self) -> list[int]:
        N, n = self.spec.N, self.spec.n
        return list(range(n * N, (n + 1) * N))

    @property
    def fvn_columns(self) -> list[int]:
        return list(self.spec.frozen_set)

    def node_values(self, u: np.ndarray) -> np.ndarray:
        """Values of every factor-graph variable node for input word ``u``."""
        return _layer_values(self.spec.n, u)


def _layer_values(n: int, u: np.ndarray) -> np.ndarray:
    N = 1 << n
    layers = [np.asarray(u, dtype=np.uint8).copy()]
    x = layers[0].copy()
    for b in stage_bits(n):
        h = 1 << b
        x = x.copy()
        top = np.array([j for j in range(N) if not j & h])
        x[top] ^= x[top + h]
        layers.append(x)
    layers[-1] = layers[-1][bit_reverse_permutation(n)]
    return np.concatenate(layers)


def build_standard_fg_pcm(spec: PolarCodeSpec) -> FactorGraphPcm:
    """Write the n-stage butterfly as checks of degree 3 and 2."""
    n, N = spec.n, spec.N
    br = bit_reverse_permutation(n)

    def col(layer: int, j: int) -> int:
        if layer == n:
            return n * N + int(br[j])
        return layer * N + j

    rows = []
    for s, b in enumerate(stage_bits(n), start=1):
        h = 1 << b
        for j in range(N):
            if j & h:
                continue
            a, bb = col(s - 1, j), col(s - 1, j + h)
            p, q = col(s, j), col(s, j + h)
            rows.append([a, bb, p])
            rows.append([bb, q])
    return FactorGraphPcm(SparseBinaryMatrix(n * N, (n + 1) * N, rows), spec)


@dataclass(frozen=True)
class PrunedPcm:
    """Pruned PCM of a (possibly CRC-augmented) polar code.

    ``cvn_columns[j]`` is the column holding codeword bit ``j``.  ``origin_map``
    lists, per column, the original factor-graph nodes merged into it.  ``K`` is
    the dimension of the code the matrix describes (polar K minus CRC bits).
    """

    matrix: SparseBinaryMatrix
    cvn_columns: tuple[int, ...]
    origin_map: tuple[tuple[int, ...], ...]
    N: int
    K: int
    r_crc: int = 0

    @property
    def n_prime(self) -> int:
        return self.matrix.n_cols

    @property
    def n_hidden(self) -> int:
        return self.matrix.n_cols - self.N

    def density(self) -> float:
        return self.matrix.density()

    @cached_property
    def row_bits(self) -> tuple[int, ...]:
        return tuple(self.matrix.row_bits(r) for r in range(self.matrix.n_rows))

    @cached_property
    def is_cvn(self) -> tuple[bool, ...]:
        flags = [False] * self.n_prime
        for c in self.cvn_columns:
            flags[c] = True
        return tuple(flags)

    @cached_property
    def cvn_index(self) -> dict[int, int]:
        return {c: j for j, c in enumerate(self.cvn_columns)}


# --------------------------------------------------------------------------- pruning


class _Graph:
    """Mutable Tanner graph used during pruning."""

    def __init__(self, fg: FactorGraphPcm):
        m = fg.matrix
        self.checks: dict[int, set[int]] = {r: set(s) for r, s in enumerate(m.row_support)}
        self.vars: dict[int, set[int]] = {c: set(s) for c, s in enumerate(m.col_support)}
        self.origin: dict[int, set[int]] = {c: {c} for c in self.vars}
        self.cvn_start = fg.spec.n * fg.spec.N

    def is_cvn(self, v: int) -> bool:
        return v >= self.cvn_start

    def remove_var(self, v: int) -> None:
        for c in self.vars.pop(v):
            self.checks[c].discard(v)
        del self.origin[v]

    def remove_check(self, c: int) -> None:
        for v in self.checks.pop(c):
            self.vars[v].discard(c)

    def toggle(self, c: int, v: int) -> None:
        if v in self.checks[c]:
            self.checks[c].discard(v)
            self.vars[v].discard(c)
        else:
            self.checks[c].add(v)
            self.vars[v].add(c)

    def merge_var(self, keep: int, gone: int, via: int) -> None:
        """Replace ``gone`` by ``keep`` (they are equal through check ``via``)."""
        self.remove_check(via)
        for c in list(self.vars[gone]):
            self.toggle(c, keep)
        self.origin[keep] |= self.origin[gone]
        self.remove_var(gone)


def _apply_rules(g: _Graph, degree_cap: int | None) -> bool:
    fired = False
    # 2: a degree-1 check forces its variable to zero
    for c in sorted(g.checks):
        vs = g.checks.get(c)
        if vs is None or len(vs) != 1:
            continue
        (v,) = vs
        if g.is_cvn(v):
            continue  # keep codeword columns; the unit row stays as a constraint
        g.remove_check(c)
        g.remove_var(v)
        fired = True
    # 3: CVN tied to an HVN by a degree-2 check absorbs the HVN
    for c in sorted(g.checks):
        vs = g.checks.get(c)
        if vs is None or len(vs) != 2:
            continue
        a, b = sorted(vs)
        if g.is_cvn(a) == g.is_cvn(b):
            continue
        cvn, hvn = (b, a) if g.is_cvn(b) else (a, b)
        g.merge_var(cvn, hvn, c)
        fired = True
    # 4: an HVN of degree 1 carries no information
    for v in sorted(g.vars):
        if v not in g.vars or g.is_cvn(v) or len(g.vars[v]) != 1:
            continue
        (c,) = g.vars[v]
        g.remove_check(c)
        g.remove_var(v)
        fired = True
    # 5: an HVN of degree 2 is eliminated by merging its two checks
    for v in sorted(g.vars):
        if v not in g.vars or g.is_cvn(v) or len(g.vars[v]) != 2:
            continue
        c1, c2 = sorted(g.vars[v])
        merged = g.checks[c1] ^ g.checks[c2]
        if degree_cap is not None and len(merged) > degree_cap:
            continue
        g.remove_var(v)
        for u in list(g.checks[c2]):
            g.toggle(c1, u)
        g.remove_check(c2)
        fired = True
    # 6: a degree-2 check between two HVNs makes them equal
    for c in sorted(g.checks):
        vs = g.checks.get(c)
        if vs is None or len(vs) != 2:
            continue
        a, b = sorted(vs)
        if g.is_cvn(a) or g.is_cvn(b):
            continue
        g.merge_var(a, b, c)
        fired = True
    return fired


def prune(fg: FactorGraphPcm, degree_cap: int | None = None) -> PrunedPcm:
    """Apply the six pruning rules to a fixpoint.

    Rules are swept in order (FVN removal once, then rules 2-6) until a full
    sweep fires nothing.  ``degree_cap`` optionally skips HVN-elimination merges
    that would create a check of larger degree.
    """
    spec = fg.spec
    g = _Graph(fg)
    for v in spec.frozen_set:  # rule 1
        g.remove_var(v)
    while _apply_rules(g, degree_cap):
        pass

    hidden = sorted(v for v in g.vars if not g.is_cvn(v))
    cvns = sorted((v for v in g.vars if g.is_cvn(v)), key=lambda v: v - g.cvn_start)
    if len(cvns) != spec.N:
        raise AssertionError("pruning lost a codeword column")
    order = hidden + cvns
    new_col = {v: i for i, v in enumerate(order)}
    rows = [sorted(new_col[v] for v in g.checks[c]) for c in sorted(g.checks)]
    matrix = SparseBinaryMatrix(len(rows), len(order), rows)
    origin = tuple(tuple(sorted(g.origin[v])) for v in order)
    cvn_columns = tuple(range(len(hidden), len(order)))
    return PrunedPcm(matrix, cvn_columns, origin, spec.N, spec.K)


def pruned_column_values(p: PrunedPcm, node_values: np.ndarray) -> np.ndarray:
    """Project factor-graph node values onto pruned columns via ``origin_map``."""
    return np.array([node_values[cell[0]] for cell in p.origin_map], dtype=np.uint8)


def build_pruned_pcm(spec: PolarCodeSpec, degree_cap: int | None = None) -> PrunedPcm:
    return prune(build_standard_fg_pcm(spec), degree_cap)


# --------------------------------------------------------------------------- CRC rows


def reduce_density_greedy(rows: Sequence[int]) -> list[int]:
    """Greedy pairwise weight reduction of a set of GF(2) rows (int bit sets).

    Whenever the sum of rows ``i`` and ``j`` is lighter than both, the heavier
    of the two (row ``j`` on equal weight) is replaced by the sum.  Repeats
    until a full pass changes nothing.  The row space is unchanged.
    """
    rows = list(rows)
    changed = True
    while changed:
        changed = False
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                s = rows[i] ^ rows[j]
                ws, wi, wj = s.bit_count(), rows[i].bit_count(), rows[j].bit_count()
                if ws < wi and ws < wj:
                    if wi > wj:
                        rows[i] = s
                    else:
                        rows[j] = s
                    changed = True
    return rows


def append_crc_rows(p: PrunedPcm, crc: CrcSpec | None, g_full: DenseBitMatrix, info_set: Sequence[int]) -> PrunedPcm:
    """Append the CRC constraints ``H_crc G_N(:, A)^T`` on the codeword columns.

    ``g_full`` is the N x N polar generator and ``info_set`` the polar
    information set the CRC bits are carried on.
    """
    if crc is None or crc.r == 0:
        return p
    if crc.m + crc.r != len(info_set) or g_full.shape != (p.N, p.N):
        raise ValueError("CRC, generator and information set dimensions disagree")
    constraint = crc.pcm @ g_full.transpose().select_rows(list(info_set))
    reduced = reduce_density_greedy(constraint.rows)
    rows = [list(s) for s in p.matrix.row_support]
    for r in reduced:
        rows.append(sorted(p.cvn_columns[j] for j in iter_bits(r)))
    matrix = SparseBinaryMatrix(len(rows), p.matrix.n_cols, rows)
    return PrunedPcm(matrix, p.cvn_columns, p.origin_map, p.N, p.K - crc.r, p.r_crc + crc.r)


def pruned_pcm_for(code) -> PrunedPcm:
    """Pruned PCM of an :class:`~polarosd.polar.AugmentedCodeSpec`, CRC rows included."""
    from .polar import full_generator

    p = build_pruned_pcm(code.polar)
    return append_crc_rows(p, code.crc, full_generator(code.polar.n), code.polar.info_set)


def check_full_rank(p: PrunedPcm) -> bool:
    return rank(p.matrix.to_dense()) == p.matrix.n_rows


# --------------------------------------------------------------------------- artifact


def serialize(p: PrunedPcm) -> bytes:
    """Little-endian u32 stream: header, row supports, CVN columns, origin map, CRC32."""
    words = [ARTIFACT_VERSION, p.N, p.K, p.n_prime, p.r_crc, p.matrix.n_rows]
    for s in p.matrix.row_support:
        words.append(len(s))
        words.extend(s)
    words.extend(p.cvn_columns)
    for cell in p.origin_map:
        words.append(len(cell))
        words.extend(cell)
    body = ARTIFACT_MAGIC + np.asarray(words, dtype="<u4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize(data: bytes) -> PrunedPcm:
    if len(data) < len(ARTIFACT_MAGIC) + 4 * 7 or data[:4] != ARTIFACT_MAGIC:
        raise ArtifactError("not a pruned-PCM artifact or truncated header")
    if len(data) % 4:
        raise ArtifactError("truncated stream")
    body, (checksum,) = data[:-4], struct.unpack("<I", data[-4:])
    words = np.frombuffer(body[4:], dtype="<u4")
    version = int(words[0])
    if version != ARTIFACT_VERSION:
        raise ArtifactError(f"unsupported artifact version {version}")
    if zlib.crc32(body) != checksum:
        raise ArtifactError("checksum mismatch")
    N, K, n_prime, r_crc, n_rows = (int(w) for w in words[1:6])
    pos = 6

    def take(count: int) -> list[int]:
        nonlocal pos
        if pos + count > len(words):
            raise ArtifactError("truncated stream")
        out = words[pos : pos + count].tolist()
        pos += count
        return out

    try:
        rows = [take(take(1)[0]) for _ in range(n_rows)]
        cvn = tuple(take(N))
        origin = tuple(tuple(take(take(1)[0])) for _ in range(n_prime))
        if pos != len(words):
            raise ArtifactError("trailing data in stream")
        matrix = SparseBinaryMatrix(n_rows, n_prime, rows)
    except (IndexError, ValueError) as exc:
        if isinstance(exc, ArtifactError):
            raise
        raise ArtifactError(f"malformed stream: {exc}") from exc
    return PrunedPcm(matrix, cvn, origin, N, K, r_crc)
