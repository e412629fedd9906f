"""Min-sum belief propagation on the polar factor graph, with CRC aid and lists.

Messages live on ``n + 1`` layers of ``N`` nodes.  Layer 0 holds the input
word ``u`` and layer ``n`` the word ``z = u F^{(x)n}``; the codeword is
``c = z[br]``.  Stage ``s`` joins layers ``s - 1`` and ``s`` through the
butterflies of index bit ``order[s - 1]``; because the stages commute, any bit
order describes the same code, which is what the list decoder exploits.

All decoders are batched: LLR inputs may be ``(N,)`` or ``(B, N)``.  Frames
that meet the stopping rule leave the batch early.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .polar import AugmentedCodeSpec, PolarCodeSpec, bit_reverse_permutation


@dataclass(frozen=True)
class BpConfig:
    """Iteration limits and min-sum parameters."""

    i_max: int = 100
    i_thr: int = 10
    llr_clip: float = 20.0
    scaling: float = 0.9375

    def __post_init__(self):
        if not 1 <= self.i_thr <= self.i_max:
            raise ValueError("need 1 <= i_thr <= i_max")
        if not 0.0 < self.scaling <= 1.0:
            raise ValueError("scaling must lie in (0, 1]")
        if self.llr_clip <= 0:
            raise ValueError("llr_clip must be positive")


@dataclass(frozen=True)
class StagePermutation:
    """``order[s]`` is the index bit handled by stage ``s + 1`` (stage n is next to the channel)."""

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError(f"{self.order} is not a permutation of the stages")

    @classmethod
    def identity(cls, n: int) -> StagePermutation:
        return cls(tuple(range(n)))

    @property
    def n(self) -> int:
        return len(self.order)


def final_stage_permutations(n: int, L: int, k: int = 3) -> list[StagePermutation]:
    """The first ``L`` permutations (lexicographic) of the last ``k`` stages."""
    k = min(k, n)
    head = tuple(range(n - k))
    perms = [StagePermutation(head + tail) for tail in itertools.permutations(range(n - k, n))]
    if L > len(perms):
        raise ValueError(f"only {len(perms)} permutations of the final {k} stages exist, asked for {L}")
    return perms[:L]


# --------------------------------------------------------------------------- channel


def transmit_awgn(c, sigma: float, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """BPSK-modulate ``c`` (0 -> +1) and add white Gaussian noise of std ``sigma``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(rng)
    c = np.asarray(c)
    return 1.0 - 2.0 * c + sigma * rng.standard_normal(c.shape)


def channel_llr(y, sigma: float, clip: float = BpConfig.llr_clip) -> np.ndarray:
    """``2 y / sigma^2`` clipped to ``[-clip, clip]``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.clip(2.0 * np.asarray(y, dtype=float) / sigma**2, -clip, clip)


def ebn0_to_sigma(ebn0_db: float, rate: float) -> float:
    """Noise std for BPSK at the given Eb/N0 (dB) and code rate."""
    return float(np.sqrt(1.0 / (2.0 * rate * 10.0 ** (ebn0_db / 10.0))))


# --------------------------------------------------------------------------- outputs


@dataclass
class CbpOutput:
    """One frame's BP result; hard values are the signs of the soft values (0 on ties)."""

    soft_codeword_llrs: np.ndarray
    hard_u: np.ndarray
    hard_c: np.ndarray
    terminated_early: bool
    iterations_used: int


@dataclass
class CbpBatch:
    """Batched BP results, one row per frame."""

    soft_codeword_llrs: np.ndarray
    hard_u: np.ndarray
    hard_c: np.ndarray
    terminated_early: np.ndarray
    iterations_used: np.ndarray

    def __len__(self) -> int:
        return self.hard_c.shape[0]

    def __getitem__(self, i: int) -> CbpOutput:
        return CbpOutput(
            self.soft_codeword_llrs[i],
            self.hard_u[i],
            self.hard_c[i],
            bool(self.terminated_early[i]),
            int(self.iterations_used[i]),
        )


# --------------------------------------------------------------------------- core


def _minsum(x: np.ndarray, y: np.ndarray, scale: float) -> np.ndarray:
    return scale * np.copysign(np.minimum(np.abs(x), np.abs(y)), x * y)


def _kron_transform(u: np.ndarray) -> np.ndarray:
    """``u F^{(x)n}`` along the last axis (no bit reversal)."""
    B, N = u.shape
    x = u.copy()
    h = 1
    while h < N:
        v = x.reshape(B, N // (2 * h), 2, h)
        v[:, :, 0, :] ^= v[:, :, 1, :]
        h *= 2
    return x


class _CrcGraph:
    """CRC checks attached to the information positions of layer 0."""

    def __init__(self, h_crc: np.ndarray, info_set, scale: float, clip: float):
        self.H = h_crc.astype(bool)
        self.info = np.asarray(info_set)
        self.scale = scale
        self.clip = clip

    def ok(self, hard_u: np.ndarray) -> np.ndarray:
        bits = hard_u[:, self.info].astype(np.int64)
        return ~((bits @ self.H.T.astype(np.int64)) & 1).any(axis=1)

    def messages(self, l0: np.ndarray, prev: np.ndarray) -> np.ndarray:
        """One min-sum round; ``prev`` is ``(B, r, K)`` and so is the result."""
        total = prev.sum(axis=1, keepdims=True)
        incoming = l0[:, None, self.info] + total - prev
        mask = self.H[None]
        mag = np.where(mask, np.abs(incoming), np.inf)
        neg = mask & (incoming < 0)
        sign_all = np.where(neg.sum(axis=2, keepdims=True) % 2 == 1, -1.0, 1.0)
        sign_self = np.where(neg, -1.0, 1.0)
        order = np.argsort(mag, axis=2, kind="stable")
        min1 = np.take_along_axis(mag, order[..., :1], axis=2)
        min2 = np.take_along_axis(mag, order[..., 1:2], axis=2) if mag.shape[2] > 1 else np.full_like(min1, np.inf)
        is_min = np.zeros_like(mask)
        np.put_along_axis(is_min, order[..., :1], True, axis=2)
        ext = np.where(is_min, min2, min1)
        out = self.scale * sign_all * sign_self * np.minimum(ext, self.clip)
        return np.where(mask, out, 0.0)


def polar_graph_bp(
    llr_z: np.ndarray,
    frozen_mask: np.ndarray,
    order: tuple[int, ...],
    cfg: BpConfig,
    crc: _CrcGraph | None = None,
) -> CbpBatch:
    """Run (CRC-aided) min-sum BP on one stage order.

    ``llr_z`` is ``(B, N)`` in layer-n order.  Returned soft values are in the
    same layer-n order; callers map them to codeword order.
    """
    llr_z = np.atleast_2d(np.asarray(llr_z, dtype=float))
    B, N = llr_z.shape
    n = len(order)
    clip, scale = cfg.llr_clip, cfg.scaling
    prior = np.where(frozen_mask, clip, 0.0)

    out_soft = np.zeros((B, N))
    out_u = np.zeros((B, N), dtype=np.uint8)
    out_z = np.zeros((B, N), dtype=np.uint8)
    out_term = np.zeros(B, dtype=bool)
    out_iter = np.zeros(B, dtype=np.int64)

    idx = np.arange(B)
    L = np.zeros((B, n + 1, N))
    R = np.zeros((B, n + 1, N))
    L[:, n] = llr_z
    R[:, 0] = prior
    crc_msg = np.zeros((B, crc.H.shape[0], crc.H.shape[1])) if crc is not None else None

    def views(a: np.ndarray, h: int):
        v = a.reshape(a.shape[0], N // (2 * h), 2, h)
        return v[:, :, 0, :], v[:, :, 1, :]

    for it in range(1, cfg.i_max + 1):
        for s in range(n, 0, -1):
            h = 1 << order[s - 1]
            lp, lq = views(L[:, s], h)
            ra, rb = views(R[:, s - 1], h)
            la, lb = views(L[:, s - 1], h)
            la[...] = np.clip(_minsum(lp, lq + rb, scale), -clip, clip)
            lb[...] = np.clip(_minsum(lp, ra, scale) + lq, -clip, clip)
        if crc is not None and it > cfg.i_thr:
            crc_msg = crc.messages(L[:, 0], crc_msg)
            R[:, 0, crc.info] = np.clip(crc_msg.sum(axis=1), -clip, clip)
        for s in range(1, n + 1):
            h = 1 << order[s - 1]
            ra, rb = views(R[:, s - 1], h)
            lp, lq = views(L[:, s], h)
            rp, rq = views(R[:, s], h)
            rp[...] = np.clip(_minsum(ra, rb + lq, scale), -clip, clip)
            rq[...] = np.clip(_minsum(ra, lp, scale) + rb, -clip, clip)

        soft_u = L[:, 0] + R[:, 0]
        soft_z = L[:, n] + R[:, n]
        hard_u = (soft_u < 0).astype(np.uint8)
        hard_z = (soft_z < 0).astype(np.uint8)
        done = (_kron_transform(hard_u) == hard_z).all(axis=1)
        if crc is not None:
            done &= crc.ok(hard_u)
        last = it == cfg.i_max
        leave = np.ones_like(done) if last else done
        if leave.any():
            sel = idx[leave]
            out_soft[sel] = soft_z[leave]
            out_u[sel] = hard_u[leave]
            out_z[sel] = hard_z[leave]
            out_term[sel] = done[leave]
            out_iter[sel] = it
            keep = ~leave
            idx = idx[keep]
            if idx.size == 0:
                break
            L, R = L[keep], R[keep]
            if crc_msg is not None:
                crc_msg = crc_msg[keep]
    return CbpBatch(out_soft, out_u, out_z, out_term, out_iter)


def _to_codeword_order(batch: CbpBatch, br: np.ndarray) -> CbpBatch:
    return CbpBatch(
        batch.soft_codeword_llrs[:, br],
        batch.hard_u,
        batch.hard_c[:, br],
        batch.terminated_early,
        batch.iterations_used,
    )


def _run(spec: PolarCodeSpec, llr, cfg: BpConfig, perm: StagePermutation | None, crc: _CrcGraph | None):
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    llr2 = np.atleast_2d(llr)
    if llr2.shape[1] != spec.N:
        raise ValueError(f"expected {spec.N} LLRs per frame, got {llr2.shape[1]}")
    perm = perm or StagePermutation.identity(spec.n)
    if perm.n != spec.n:
        raise ValueError("stage permutation does not match the code length")
    br = bit_reverse_permutation(spec.n)
    llr2 = np.clip(llr2, -cfg.llr_clip, cfg.llr_clip)
    out = _to_codeword_order(polar_graph_bp(llr2[:, br], spec.frozen_mask, perm.order, cfg, crc), br)
    return out[0] if single else out


def bp_decode(spec: PolarCodeSpec, llr, cfg: BpConfig = BpConfig(), perm: StagePermutation | None = None):
    """Plain min-sum BP; stops once the hard decisions satisfy ``c = u G_N``."""
    return _run(spec, llr, cfg, perm, None)


def _crc_graph(aug: AugmentedCodeSpec, cfg: BpConfig) -> _CrcGraph | None:
    if aug.crc is None:
        return None
    return _CrcGraph(aug.crc.pcm.to_array(), aug.polar.info_set, cfg.scaling, cfg.llr_clip)


def cbp_decode(aug: AugmentedCodeSpec, llr, cfg: BpConfig = BpConfig(), perm: StagePermutation | None = None):
    """CRC-aided BP: CRC checks join after ``i_thr`` iterations and must hold to stop."""
    return _run(aug.polar, llr, cfg, perm, _crc_graph(aug, cfg))


@dataclass
class CbplOutput:
    """Selected codewords, the winning branch per frame, and every branch's result."""

    codeword: np.ndarray
    branch: np.ndarray
    branches: list

    @property
    def any_valid(self) -> np.ndarray:
        return np.any([b.terminated_early for b in self.branches], axis=0)


def select_closest(candidates: np.ndarray, valid: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Index of the candidate nearest ``y`` in Euclidean distance, per frame.

    ``candidates`` is ``(L, B, N)`` and ``valid`` is ``(L, B)``.  Valid
    candidates win whenever a frame has one; ties go to the lowest index.
    """
    dist = ((1.0 - 2.0 * candidates - y[None]) ** 2).sum(axis=2)
    any_valid = valid.any(axis=0)
    dist = np.where(valid | ~any_valid[None], dist, np.inf)
    return np.argmin(dist, axis=0)


def cbpl_decode(aug: AugmentedCodeSpec, llr, L: int = 6, cfg: BpConfig = BpConfig(), y=None) -> CbplOutput:
    """CBP on ``L`` stage-permuted graphs; pick the valid output closest to ``y``.

    ``y`` defaults to the LLRs, which are a positive multiple of the channel
    output up to clipping.
    """
    llr = np.asarray(llr, dtype=float)
    single = llr.ndim == 1
    llr2 = np.atleast_2d(llr)
    y2 = llr2 if y is None else np.atleast_2d(np.asarray(y, dtype=float))
    crc = _crc_graph(aug, cfg)
    branches = [_run(aug.polar, llr2, cfg, p, crc) for p in final_stage_permutations(aug.polar.n, L)]
    cands = np.stack([b.hard_c for b in branches])
    valid = np.stack([b.terminated_early for b in branches])
    pick = select_closest(cands, valid, y2)
    chosen = cands[pick, np.arange(llr2.shape[0])]
    if single:
        return CbplOutput(chosen[0], pick[:1], [b[0] for b in branches])
    return CbplOutput(chosen, pick, branches)
