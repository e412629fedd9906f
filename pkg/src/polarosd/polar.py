"""Polar and CRC code construction, encoding and an SC baseline decoder.

Indices are 0-based throughout.  The polar generator is ``G_N = B_N F^{(x)n}``
with ``F = [[1, 0], [1, 1]]`` and ``B_N`` the bit-reversal permutation, so a
codeword is ``c = u G_N`` for the length-N input word ``u``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .gf2 import DenseBitMatrix

DEFAULT_CRC_POLY = 0x43  # x^6 + x + 1


def bit_reverse_permutation(n: int) -> np.ndarray:
    """Return ``br`` with ``br[i]`` equal to ``i`` with its n-bit index reversed."""
    N = 1 << n
    idx = np.arange(N)
    out = np.zeros(N, dtype=np.int64)
    for b in range(n):
        out |= ((idx >> b) & 1) << (n - 1 - b)
    return out


def full_generator(n: int) -> DenseBitMatrix:
    """The N x N polar generator ``B_N F^{(x)n}``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    F = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    kron = np.ones((1, 1), dtype=np.uint8)
    for _ in range(n):
        kron = np.kron(kron, F)
    return DenseBitMatrix.from_array(kron[bit_reverse_permutation(n)])


def polar_transform(u: np.ndarray) -> np.ndarray:
    """Compute ``u G_N`` for one word or a batch (last axis has length N)."""
    u = np.asarray(u, dtype=np.uint8)
    N = u.shape[-1]
    n = N.bit_length() - 1
    if 1 << n != N:
        raise ValueError("length must be a power of two")
    x = u[..., bit_reverse_permutation(n)].copy()
    h = 1
    while h < N:
        x = x.reshape(*u.shape[:-1], N // (2 * h), 2, h)
        x[..., 0, :] ^= x[..., 1, :]
        h *= 2
    return x.reshape(u.shape)


def bhattacharyya_bec(n: int, design_erasure: float) -> list:
    """Per-index Bhattacharyya parameters of the synthetic BEC channels.

    Exact rational arithmetic is used for n <= 10 so that ties are genuine.
    """
    z = [Fraction(design_erasure) if n <= 10 else float(design_erasure)]
    for _ in range(n):
        nxt = []
        for v in z:
            nxt.append(2 * v - v * v)
            nxt.append(v * v)
        z = nxt
    return z


@dataclass(frozen=True)
class PolarCodeSpec:
    n: int
    K: int
    info_set: tuple[int, ...]
    design_param: float = 0.5

    def __post_init__(self):
        N = 1 << self.n
        if not 0 <= self.K <= N:
            raise ValueError("K must lie in [0, N]")
        if len(self.info_set) != self.K or len(set(self.info_set)) != self.K:
            raise ValueError("info_set must hold K distinct indices")
        if list(self.info_set) != sorted(self.info_set) or any(not 0 <= i < N for i in self.info_set):
            raise ValueError("info_set must be sorted indices in [0, N)")

    @property
    def N(self) -> int:
        return 1 << self.n

    @cached_property
    def frozen_set(self) -> tuple[int, ...]:
        info = set(self.info_set)
        return tuple(i for i in range(self.N) if i not in info)

    @cached_property
    def frozen_mask(self) -> np.ndarray:
        mask = np.ones(self.N, dtype=bool)
        mask[list(self.info_set)] = False
        return mask

    @cached_property
    def generator(self) -> DenseBitMatrix:
        """Rows of ``G_N`` indexed by the information set."""
        return full_generator(self.n).select_rows(self.info_set)

    def standard_pcm(self) -> DenseBitMatrix:
        """``(N-K) x N`` PCM: columns of ``G_N`` at the frozen indices, transposed."""
        return full_generator(self.n).transpose().select_rows(self.frozen_set)

    def is_codeword(self, c) -> bool:
        u = polar_transform(c)  # G_N is an involution
        return not u[self.frozen_mask].any()


def construct_frozen_set(n: int, K: int, design_erasure: float = 0.5) -> PolarCodeSpec:
    """Pick the info set by the BEC Bhattacharyya recursion.

    The ``N-K`` indices with the largest parameter are frozen; among equal
    parameters the larger index is frozen first.
    """
    N = 1 << n
    if not 0 <= K <= N:
        raise ValueError("K must lie in [0, N]")
    z = bhattacharyya_bec(n, design_erasure)
    order = sorted(range(N), key=lambda i: (z[i], i), reverse=True)
    frozen = set(order[: N - K])
    info = tuple(i for i in range(N) if i not in frozen)
    return PolarCodeSpec(n, K, info, float(design_erasure))


def embed_info(spec: PolarCodeSpec, info) -> np.ndarray:
    info = np.asarray(info, dtype=np.uint8)
    if info.shape[-1] != spec.K:
        raise ValueError(f"expected {spec.K} info bits, got {info.shape[-1]}")
    u = np.zeros(info.shape[:-1] + (spec.N,), dtype=np.uint8)
    u[..., list(spec.info_set)] = info
    return u


def encode(spec: PolarCodeSpec, info) -> np.ndarray:
    """Place ``info`` on the information set, zeros elsewhere, and return ``u G_N``."""
    return polar_transform(embed_info(spec, info))


# --------------------------------------------------------------------------- CRC


@dataclass(frozen=True)
class CrcSpec:
    """Systematic CRC code appending ``r`` bits to ``m`` message bits.

    ``poly`` encodes the generator polynomial with bit ``i`` the coefficient of
    ``x^i`` (the ``x^r`` term included).  Message bit 0 is the highest-degree
    coefficient, as in a shift-register implementation.
    """

    m: int
    poly: int = DEFAULT_CRC_POLY

    @property
    def r(self) -> int:
        return self.poly.bit_length() - 1 if self.poly else 0

    def remainder(self, msg) -> np.ndarray:
        r = self.r
        reg = 0
        top = 1 << r
        for bit in np.asarray(msg, dtype=np.uint8):
            reg = (reg << 1) | int(bit)
            if reg & top:
                reg ^= self.poly
        for _ in range(r):
            reg <<= 1
            if reg & top:
                reg ^= self.poly
        return np.array([(reg >> (r - 1 - i)) & 1 for i in range(r)], dtype=np.uint8)

    @cached_property
    def parity_part(self) -> np.ndarray:
        """``m x r`` matrix ``P`` with ``G_crc = [I_m | P]``."""
        P = np.zeros((self.m, self.r), dtype=np.uint8)
        for i in range(self.m):
            e = np.zeros(self.m, dtype=np.uint8)
            e[i] = 1
            P[i] = self.remainder(e)
        return P

    @cached_property
    def generator(self) -> DenseBitMatrix:
        G = np.hstack([np.eye(self.m, dtype=np.uint8), self.parity_part])
        return DenseBitMatrix.from_array(G)

    @cached_property
    def pcm(self) -> DenseBitMatrix:
        H = np.hstack([self.parity_part.T, np.eye(self.r, dtype=np.uint8)])
        return DenseBitMatrix.from_array(H.reshape(self.r, self.m + self.r))


def crc_append(crc: CrcSpec, msg) -> np.ndarray:
    """Return ``msg`` followed by its ``r`` CRC bits (works on batches too)."""
    msg = np.asarray(msg, dtype=np.uint8)
    if msg.shape[-1] != crc.m:
        raise ValueError(f"expected {crc.m} message bits, got {msg.shape[-1]}")
    parity = (msg.astype(np.int64) @ crc.parity_part.astype(np.int64)) & 1
    return np.concatenate([msg, parity.astype(np.uint8)], axis=-1)


def crc_check(crc: CrcSpec, word) -> bool:
    word = np.asarray(word, dtype=np.uint8)
    return not crc.pcm.mul_vec(word).any()


@dataclass(frozen=True)
class AugmentedCodeSpec:
    """CRC-augmented polar code with generator ``G_crc G_N(A)``."""

    polar: PolarCodeSpec
    crc: CrcSpec | None = None

    def __post_init__(self):
        if self.crc is not None and self.crc.m + self.crc.r != self.polar.K:
            raise ValueError("CRC length m + r must equal the polar dimension K")

    @property
    def N(self) -> int:
        return self.polar.N

    @property
    def m(self) -> int:
        return self.crc.m if self.crc else self.polar.K

    @property
    def r(self) -> int:
        return self.crc.r if self.crc else 0

    @property
    def rate(self) -> float:
        return self.m / self.N

    @cached_property
    def generator(self) -> DenseBitMatrix:
        if self.crc is None:
            return self.polar.generator
        return self.crc.generator @ self.polar.generator

    @cached_property
    def crc_codeword_rows(self) -> DenseBitMatrix:
        """CRC constraints in codeword coordinates, ``H_crc G_N(:, A)^T`` (r x N)."""
        if self.crc is None:
            return DenseBitMatrix(0, self.N)
        g_cols = full_generator(self.polar.n).transpose().select_rows(self.polar.info_set)
        return self.crc.pcm @ g_cols

    def standard_pcm(self) -> DenseBitMatrix:
        """Dense ``(N-m) x N`` PCM: frozen polar checks followed by CRC rows."""
        return self.polar.standard_pcm().vstack(self.crc_codeword_rows)

    def info_word(self, msg) -> np.ndarray:
        return crc_append(self.crc, msg) if self.crc else np.asarray(msg, dtype=np.uint8)

    def encode(self, msg) -> np.ndarray:
        return encode(self.polar, self.info_word(msg))

    def message_of(self, c) -> np.ndarray:
        """Recover the message bits from a codeword (first m info positions)."""
        u = polar_transform(c)
        return u[..., list(self.polar.info_set)][..., : self.m]

    def is_codeword(self, c) -> bool:
        u = polar_transform(c)
        if u[self.polar.frozen_mask].any():
            return False
        if self.crc is None:
            return True
        return crc_check(self.crc, u[list(self.polar.info_set)])


def make_code(n: int, m: int, crc_poly: int | None = DEFAULT_CRC_POLY, design_param: float = 0.5) -> AugmentedCodeSpec:
    """Build the polar code carrying ``m`` message bits (plus CRC if given)."""
    crc = CrcSpec(m, crc_poly) if crc_poly else None
    K = m + (crc.r if crc else 0)
    return AugmentedCodeSpec(construct_frozen_set(n, K, design_param), crc)


# --------------------------------------------------------------------------- code-spec file


def dump_code_spec(code: AugmentedCodeSpec) -> str:
    doc = {
        "n": code.polar.n,
        "K": code.polar.K,
        "frozen_set": list(code.polar.frozen_set),
        "crc_poly": hex(code.crc.poly) if code.crc else None,
        "design_param": code.polar.design_param,
    }
    return json.dumps(doc, indent=1)


def load_code_spec(text: str) -> AugmentedCodeSpec:
    doc = json.loads(text)
    n, K = int(doc["n"]), int(doc["K"])
    frozen = set(doc["frozen_set"])
    info = tuple(i for i in range(1 << n) if i not in frozen)
    polar = PolarCodeSpec(n, K, info, float(doc.get("design_param", 0.5)))
    poly = doc.get("crc_poly")
    crc = None
    if poly:
        poly = int(poly, 16)
        crc = CrcSpec(K - (poly.bit_length() - 1), poly)
    return AugmentedCodeSpec(polar, crc)


# --------------------------------------------------------------------------- SC decoding


def _f(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sign(a) * np.sign(b) * np.minimum(np.abs(a), np.abs(b))


def _g(a: np.ndarray, b: np.ndarray, bits: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        out = b + (1 - 2 * bits.astype(np.float64)) * a
    # +inf meeting -inf happens after a wrong guess on an erased bit
    return np.nan_to_num(out, nan=0.0, posinf=np.inf, neginf=-np.inf)


def _sc(llr: np.ndarray, frozen: np.ndarray, stats: list) -> tuple[np.ndarray, np.ndarray]:
    """Return (u_hat, x_hat) where x_hat = u_hat F^{(x)n} in natural order."""
    N = llr.size
    if N == 1:
        if frozen[0]:
            u = np.zeros(1, dtype=np.uint8)
        else:
            if llr[0] == 0:
                stats[0] += 1
            u = np.array([llr[0] < 0], dtype=np.uint8)
        return u, u.copy()
    half = N // 2
    a, b = llr[:half], llr[half:]
    u1, x1 = _sc(_f(a, b), frozen[:half], stats)
    u2, x2 = _sc(_g(a, b, x1), frozen[half:], stats)
    return np.concatenate([u1, u2]), np.concatenate([x1 ^ x2, x2])


def sc_decode_with_guesses(spec: PolarCodeSpec, llr) -> tuple[np.ndarray, int]:
    """SC decoding; also return how many info bits were decided on a zero LLR."""
    llr = np.asarray(llr, dtype=np.float64)
    if llr.size != spec.N:
        raise ValueError("llr length must equal N")
    br = bit_reverse_permutation(spec.n)
    # c[br] = u F^{(x)n}, so SC on the bit-reversed LLRs decodes u in natural order.
    stats = [0]
    _, x = _sc(llr[br], spec.frozen_mask, stats)
    x = x[br]
    return x, stats[0]


def sc_decode(spec: PolarCodeSpec, llr) -> np.ndarray:
    """Successive-cancellation codeword estimate; erased decisions default to 0."""
    return sc_decode_with_guesses(spec, llr)[0]
