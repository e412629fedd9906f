"""Monte Carlo experiment harness.

Every trial owns an RNG stream seeded by ``(master_seed, point, trial)``, so a
run is a pure function of its configuration whatever the batching or worker
count.  Trials are processed in fixed-size chunks; with a target error count
the run stops after the first chunk (in trial order) that reaches it.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.stats import binomtest

from .bec import (
    DEFAULT_POLICY,
    ErasureWord,
    PolicyKind,
    ReferencePolicy,
    brute_force_ml_bec,
    ml_decode_bec,
    peel_bp,
)
from .bp_awgn import BpConfig, cbpl_decode, channel_llr, ebn0_to_sigma
from .osd import OsdMode, osd_postprocess
from .pcm import ArtifactError, PrunedPcm, deserialize, pruned_pcm_for
from .polar import DEFAULT_CRC_POLY, AugmentedCodeSpec, make_code, sc_decode_with_guesses


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class MissingArtifactError(FileNotFoundError):
    """A configured pruned-PCM artifact file does not exist."""


BEC_DECODERS = ("ml", "ml-parallel", "brute-ml", "bp", "sc")
AWGN_DECODERS = ("cbp", "cbpl", "cbpl-osd")


@dataclass
class ExperimentConfig:
    """One sweep: a code, a channel with its points, and a decoder."""

    n: int = 6
    m: int = 26
    crc_poly: int | None = DEFAULT_CRC_POLY
    design_param: float = 0.5
    pcm_path: str | None = None
    channel: str = "bec"
    points: list[float] = field(default_factory=lambda: [0.4])
    decoder: str = "ml"
    policy: str = "min-check"
    ref_batch: int = 1
    L: int = 6
    i_max: int = 100
    i_thr: int = 10
    llr_clip: float = 20.0
    scaling: float = 0.9375
    osd_mode: str = "OSD1"
    osd_ref_policy: str = "min-check"
    posd_pair_order: str = "sum"
    trials: int = 100_000
    target_errors: int | None = None
    master_seed: int = 0
    workers: int = 1
    chunk: int = 256

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        crc_r = (self.crc_poly.bit_length() - 1) if self.crc_poly else 0
        if not 1 <= self.m <= (1 << self.n) - crc_r:
            raise ConfigError(f"m={self.m} does not fit a length-{1 << self.n} code with {crc_r} CRC bits")
        if self.channel not in ("bec", "awgn"):
            raise ConfigError(f"unknown channel {self.channel!r}")
        if not self.points:
            raise ConfigError("at least one channel point is required")
        if self.channel == "bec":
            if self.decoder not in BEC_DECODERS:
                raise ConfigError(f"decoder {self.decoder!r} is not available on the BEC")
            if any(not 0.0 <= e <= 1.0 for e in self.points):
                raise ConfigError("erasure probabilities must lie in [0, 1]")
        elif self.decoder not in AWGN_DECODERS:
            raise ConfigError(f"decoder {self.decoder!r} is not available on the AWGN channel")
        if self.policy not in ("min-check", "random"):
            raise ConfigError(f"unknown reference policy {self.policy!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.target_errors is not None and self.target_errors < 1:
            raise ConfigError("target_errors must be >= 1")
        if self.L < 1 or self.ref_batch < 1 or self.workers < 1 or self.chunk < 1:
            raise ConfigError("L, ref_batch, workers and chunk must be >= 1")
        if not 0 <= self.master_seed < 1 << 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        try:
            self.bp_config()
            self.osd()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def bp_config(self) -> BpConfig:
        return BpConfig(self.i_max, self.i_thr, self.llr_clip, self.scaling)

    def osd(self) -> OsdMode:
        mode = OsdMode.parse(self.osd_mode)
        return OsdMode(mode.kind, mode.fraction, self.posd_pair_order, self.osd_ref_policy)

    def ref_policy(self) -> ReferencePolicy:
        kind = PolicyKind.MIN_UNKNOWN_CHECK if self.policy == "min-check" else PolicyKind.RANDOM_UNKNOWN
        return ReferencePolicy(kind, self.ref_batch)

    def code(self) -> AugmentedCodeSpec:
        return make_code(self.n, self.m, self.crc_poly, self.design_param)

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        poly = doc.get("crc_poly", DEFAULT_CRC_POLY)
        if isinstance(poly, str):
            poly = None if poly.lower() in ("", "none") else int(poly, 0)
        doc["crc_poly"] = poly
        try:
            cfg = cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.points = [float(x) for x in cfg.points]
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> ExperimentConfig:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["crc_poly"] = hex(self.crc_poly) if self.crc_poly else None
        return doc


@dataclass
class PointResult:
    point: float
    trials: int
    errors: int
    bit_errors: int
    ber: float
    fer: float
    fer_ci_lo: float
    fer_ci_hi: float
    avg_nr_all: float
    avg_nr_cond: float
    avg_ne: float
    avg_iters: float
    avg_xors: float
    # wall time is instrumentation; it is left out of equality so reruns compare equal
    seconds: float = field(default=0.0, compare=False)


CSV_COLUMNS = [
    "point", "trials", "errors", "ber", "fer", "fer_ci_lo", "fer_ci_hi",
    "avg_nr_all", "avg_nr_cond", "avg_ne", "avg_iters", "avg_xors", "seconds",
]


@dataclass
class ExperimentResult:
    config: dict
    points: list[PointResult] = field(default_factory=list)


def wilson_interval(errors: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = binomtest(errors, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


# --------------------------------------------------------------------------- trials


@dataclass
class TrialRecords:
    """Per-trial outcomes for one decoder at one point, in trial order."""

    frame_error: list[bool] = field(default_factory=list)
    bit_errors: list[int] = field(default_factory=list)
    n_r: list[int] = field(default_factory=list)
    n_e: list[int] = field(default_factory=list)
    stage1_failed: list[bool] = field(default_factory=list)
    iters: list[float] = field(default_factory=list)
    xors: list[int] = field(default_factory=list)

    def extend(self, other: TrialRecords) -> None:
        for f in fields(self):
            getattr(self, f.name).extend(getattr(other, f.name))

    def truncate(self, k: int) -> None:
        for f in fields(self):
            del getattr(self, f.name)[k:]

    def __len__(self) -> int:
        return len(self.frame_error)


def trial_rng(master_seed: int, point: int, trial: int, stream: int = 0) -> np.random.Generator:
    """Stream 0 drives the message and channel, stream 1 any decoder randomness."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, point, trial, stream]))


class _Runner:
    """Holds the code and pruned PCM for one configuration."""

    def __init__(self, cfg: ExperimentConfig, pcm: PrunedPcm | None = None):
        self.cfg = cfg
        self.code = cfg.code()
        self.pcm = pcm if pcm is not None else load_or_build_pcm(cfg, self.code)
        self._dense = None

    @property
    def dense_pcm(self):
        if self._dense is None:
            self._dense = self.code.standard_pcm()
        return self._dense

    def draw(self, point_index: int, trial: int, point: float):
        rng = trial_rng(self.cfg.master_seed, point_index, trial)
        msg = rng.integers(0, 2, self.code.m, dtype=np.uint8)
        c = self.code.encode(msg)
        if self.cfg.channel == "bec":
            erased = rng.random(self.code.N) < point
            return msg, c, ErasureWord(np.where(erased, 0, c).astype(np.uint8), erased, point)
        sigma = ebn0_to_sigma(point, self.code.rate)
        y = 1.0 - 2.0 * c + sigma * rng.standard_normal(self.code.N)
        return msg, c, y

    def _record_word(self, rec: TrialRecords, msg: np.ndarray, c: np.ndarray, word: np.ndarray, ok: bool) -> None:
        est = self.code.message_of(word)
        rec.frame_error.append(not ok or bool((word != c).any()))
        rec.bit_errors.append(int((est != msg).sum()))

    def bec_trial(self, decoder: str, msg, c, w: ErasureWord, rng_policy) -> TrialRecords:
        rec = TrialRecords()
        cfg = self.cfg
        if decoder in ("ml", "ml-parallel"):
            out = ml_decode_bec(self.pcm, w, cfg.ref_policy(), rng_policy, parallel=decoder == "ml-parallel")
            st = out.stats
            self._record_word(rec, msg, c, out.best_guess(), out.decoded)
            rec.n_r.append(st.n_r)
            rec.n_e.append(st.n_e)
            rec.stage1_failed.append(not st.bp_success)
            rec.xors.append(st.xor_count)
        elif decoder == "brute-ml":
            out = brute_force_ml_bec(self.dense_pcm, w)
            self._record_word(rec, msg, c, out.best_guess(), out.decoded)
            rec.n_r.append(0)
            rec.n_e.append(0)
            rec.stage1_failed.append(not out.decoded)
            rec.xors.append(0)
        elif decoder == "bp":
            s = peel_bp(self.pcm, w)
            word = np.array([(s.decoded_value >> col) & 1 for col in self.pcm.cvn_columns], dtype=np.uint8)
            self._record_word(rec, msg, c, word, s.complete)
            rec.n_r.append(0)
            rec.n_e.append(0)
            rec.stage1_failed.append(not s.complete)
            rec.xors.append(0)
        elif decoder == "sc":
            llr = np.where(w.erased, 0.0, np.where(w.values == 1, -np.inf, np.inf))
            word, guesses = sc_decode_with_guesses(self.code.polar, llr)
            self._record_word(rec, msg, c, word, guesses == 0)
            rec.n_r.append(0)
            rec.n_e.append(0)
            rec.stage1_failed.append(guesses > 0)
            rec.xors.append(0)
        else:  # pragma: no cover - validated earlier
            raise ConfigError(decoder)
        rec.iters.append(0)
        return rec

    def run_chunk(self, point_index: int, point: float, start: int, stop: int, decoders: list) -> dict:
        """Trials ``start..stop-1`` for every decoder; returns ``{decoder: TrialRecords}``."""
        draws = [self.draw(point_index, t, point) for t in range(start, stop)]
        if self.cfg.channel == "bec":
            out = {d: TrialRecords() for d in decoders}
            for t, (msg, c, w) in zip(range(start, stop), draws):
                for d in decoders:
                    policy_rng = trial_rng(self.cfg.master_seed, point_index, t, 1)
                    out[d].extend(self.bec_trial(d, msg, c, w, policy_rng))
            return out
        return self._awgn_chunk(point, draws, decoders)

    def _awgn_chunk(self, point: float, draws, decoders: list) -> dict:
        cfg = self.cfg
        msgs = np.stack([d[0] for d in draws])
        cws = np.stack([d[1] for d in draws])
        y = np.stack([d[2] for d in draws])
        sigma = ebn0_to_sigma(point, self.code.rate)
        llr = channel_llr(y, sigma, cfg.llr_clip)
        bp = cfg.bp_config()
        out = {}
        need_list = any(d != "cbp" for d in decoders)
        cbpl = cbpl_decode(self.code, llr, cfg.L if need_list else 1, bp, y=y)
        if need_list:
            iters = np.mean([b.iterations_used for b in cbpl.branches], axis=0)
        else:
            iters = cbpl.branches[0].iterations_used
        osd_decs = [d for d in decoders if isinstance(d, OsdMode)]
        osd_out = osd_postprocess(self.pcm, cbpl.branches, y, osd_decs) if osd_decs else {}
        for d in decoders:
            rec = TrialRecords()
            B = len(draws)
            nr = np.zeros(B)
            ne = np.zeros(B)
            osd_ran = np.zeros(B, bool)
            if d == "cbp":
                words = cbpl.branches[0].hard_c
            elif d == "cbpl":
                words = cbpl.codeword
            else:
                res = osd_out[d]
                words, osd_ran = res.codeword, res.osd_used
                for k, st in enumerate(res.branch_stats):
                    if st:
                        nr[k] = np.mean([b.n_r for b in st])
                        ne[k] = np.mean([b.elim_dims[0] for b in st])
            for k in range(B):
                self._record_word(rec, msgs[k], cws[k], words[k], True)
                rec.iters.append(float(iters[k]))
                rec.n_r.append(float(nr[k]))
                rec.n_e.append(float(ne[k]))
                rec.stage1_failed.append(bool(osd_ran[k]))
                rec.xors.append(0)
            out[d] = rec
        return out


def load_or_build_pcm(cfg: ExperimentConfig, code: AugmentedCodeSpec) -> PrunedPcm:
    if cfg.pcm_path is None:
        return pruned_pcm_for(code)
    if not os.path.exists(cfg.pcm_path):
        raise MissingArtifactError(f"pruned-PCM artifact {cfg.pcm_path} does not exist")
    with open(cfg.pcm_path, "rb") as fh:
        p = deserialize(fh.read())
    if p.N != code.N or p.K != code.m:
        raise ConfigError(f"artifact describes an ({p.N},{p.K}) code, config asks for ({code.N},{code.m})")
    return p


def _decoder_key(cfg: ExperimentConfig):
    return cfg.osd() if cfg.decoder == "cbpl-osd" else cfg.decoder


_WORKER_RUNNER: dict = {}


def _chunk_job(args):
    cfg_doc, point_index, point, start, stop, decoders = args
    key = json.dumps(cfg_doc, sort_keys=True)
    runner = _WORKER_RUNNER.get(key)
    if runner is None:
        runner = _Runner(ExperimentConfig.from_dict({**cfg_doc, "crc_poly": cfg_doc["crc_poly"] or "none"}))
        _WORKER_RUNNER.clear()
        _WORKER_RUNNER[key] = runner
    return runner.run_chunk(point_index, point, start, stop, decoders)


def run_point(runner: _Runner, point_index: int, point: float, decoders: list, pool=None) -> dict:
    """All trials at one channel point for the given decoders (paired noise)."""
    cfg = runner.cfg
    recs = {d: TrialRecords() for d in decoders}
    bounds = [(s, min(s + cfg.chunk, cfg.trials)) for s in range(0, cfg.trials, cfg.chunk)]
    primary = decoders[0]
    wave = max(cfg.workers, 1)
    i = 0
    while i < len(bounds):
        batch = bounds[i : i + wave]
        if pool is not None:
            jobs = [(cfg.to_dict(), point_index, point, a, b, decoders) for a, b in batch]
            results = list(pool.map(_chunk_job, jobs))
        else:
            results = [runner.run_chunk(point_index, point, a, b, decoders) for a, b in batch]
        for res in results:
            for d in decoders:
                recs[d].extend(res[d])
            if cfg.target_errors is not None and sum(recs[primary].frame_error) >= cfg.target_errors:
                return recs
        i += wave
    return recs


def summarize(point: float, rec: TrialRecords, seconds: float, m: int) -> PointResult:
    n = len(rec)
    errors = int(sum(rec.frame_error))
    bits = int(sum(rec.bit_errors))
    lo, hi = wilson_interval(errors, n)
    failed = [r for r, f in zip(rec.n_r, rec.stage1_failed) if f]
    return PointResult(
        point=point,
        trials=n,
        errors=errors,
        bit_errors=bits,
        ber=bits / (n * m) if n else 0.0,
        fer=errors / n if n else 0.0,
        fer_ci_lo=lo,
        fer_ci_hi=hi,
        avg_nr_all=float(np.mean(rec.n_r)) if n else 0.0,
        avg_nr_cond=float(np.mean(failed)) if failed else 0.0,
        avg_ne=float(np.mean(rec.n_e)) if n else 0.0,
        avg_iters=float(np.mean(rec.iters)) if n else 0.0,
        avg_xors=float(np.mean(rec.xors)) if n else 0.0,
        seconds=seconds,
    )


def _pool(cfg: ExperimentConfig):
    return ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None


def run_experiment(cfg: ExperimentConfig, pcm: PrunedPcm | None = None) -> ExperimentResult:
    """Run the configured sweep and aggregate per-point statistics."""
    cfg.validate()
    runner = _Runner(cfg, pcm)
    # the worker count does not influence results, so it is not recorded
    result = ExperimentResult({k: v for k, v in cfg.to_dict().items() if k != "workers"})
    key = _decoder_key(cfg)
    pool = _pool(cfg)
    try:
        for k, point in enumerate(cfg.points):
            t0 = time.perf_counter()
            recs = run_point(runner, k, point, [key], pool)
            result.points.append(summarize(point, recs[key], time.perf_counter() - t0, runner.code.m))
    finally:
        if pool is not None:
            pool.shutdown()
    return result


# --------------------------------------------------------------------------- output


def emit(result: ExperimentResult, fmt: str = "csv") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for p in result.points:
            writer.writerow([repr(getattr(p, c)) if isinstance(getattr(p, c), float) else getattr(p, c) for c in CSV_COLUMNS])
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {"config": result.config, "points": [asdict(p) for p in result.points]}
        return json.dumps(doc, indent=1).encode()
    raise ValueError(f"unknown output format {fmt!r}")


def load_result(data: bytes) -> ExperimentResult:
    doc = json.loads(data)
    return ExperimentResult(doc["config"], [PointResult(**p) for p in doc["points"]])


# --------------------------------------------------------------------------- paired comparison


@dataclass
class PairedPoint:
    point: float
    trials: int
    errors_a: int
    errors_b: int
    a_only: int
    b_only: int
    p_value: float
    fer_delta: float
    delta_ci_lo: float
    delta_ci_hi: float


@dataclass
class PairedReport:
    label_a: str
    label_b: str
    points: list[PairedPoint] = field(default_factory=list)


def mcnemar_p(a_only: int, b_only: int) -> float:
    """Exact two-sided McNemar p-value on the discordant pairs."""
    n = a_only + b_only
    if n == 0:
        return 1.0
    return float(binomtest(a_only, n, 0.5).pvalue)


def paired_point(point: float, err_a, err_b) -> PairedPoint:
    err_a = np.asarray(err_a, bool)
    err_b = np.asarray(err_b, bool)
    n = err_a.size
    a_only = int((err_a & ~err_b).sum())
    b_only = int((err_b & ~err_a).sum())
    delta = (b_only - a_only) / n
    var = max((a_only + b_only) / n**2 - (b_only - a_only) ** 2 / n**3, 0.0)
    half = 1.96 * math.sqrt(var)
    return PairedPoint(
        point, n, int(err_a.sum()), int(err_b.sum()), a_only, b_only,
        mcnemar_p(a_only, b_only), delta, delta - half, delta + half,
    )


_SHARED_KEYS = ("n", "m", "crc_poly", "design_param", "channel", "points", "trials", "master_seed")


def paired_compare(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig) -> PairedReport:
    """Run both decoders on identical per-trial noise and report discordance.

    ``fer_delta`` is ``FER(b) - FER(a)``.  The target-error rule is ignored
    so both decoders see the same trials.
    """
    for k in _SHARED_KEYS:
        if getattr(cfg_a, k) != getattr(cfg_b, k):
            raise ConfigError(f"configs differ in {k!r}; paired comparison needs the same code and channel")
    cfg_a.validate()
    cfg_b.validate()
    ra, rb = _Runner(cfg_a), _Runner(cfg_b)
    same_bp = all(getattr(cfg_a, k) == getattr(cfg_b, k) for k in ("L", "i_max", "i_thr", "llr_clip", "scaling", "policy", "ref_batch"))
    ka, kb = _decoder_key(cfg_a), _decoder_key(cfg_b)
    report = PairedReport(str(ka if isinstance(ka, str) else ka.label), str(kb if isinstance(kb, str) else kb.label))
    for k, point in enumerate(cfg_a.points):
        if same_bp and ka != kb:
            cfg = ExperimentConfig(**{**asdict(cfg_a), "target_errors": None})
            recs = run_point(_Runner(cfg, ra.pcm), k, point, [ka, kb])
            ea, eb = recs[ka].frame_error, recs[kb].frame_error
        else:
            ca = ExperimentConfig(**{**asdict(cfg_a), "target_errors": None})
            cb = ExperimentConfig(**{**asdict(cfg_b), "target_errors": None})
            ea = run_point(_Runner(ca, ra.pcm), k, point, [ka])[ka].frame_error
            eb = run_point(_Runner(cb, rb.pcm), k, point, [kb])[kb].frame_error
        report.points.append(paired_point(point, ea, eb))
    return report


def emit_report(report: PairedReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        doc = {"a": report.label_a, "b": report.label_b, "points": [asdict(p) for p in report.points]}
        return json.dumps(doc, indent=1).encode()
    if fmt == "csv":
        buf = io.StringIO()
        cols = [f.name for f in fields(PairedPoint)]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for p in report.points:
            writer.writerow([getattr(p, c) for c in cols])
        return buf.getvalue().encode()
    raise ValueError(f"unknown output format {fmt!r}")


__all__ = [
    "ArtifactError",
    "ConfigError",
    "DEFAULT_POLICY",
    "ExperimentConfig",
    "ExperimentResult",
    "MissingArtifactError",
    "PairedReport",
    "PointResult",
    "emit",
    "emit_report",
    "load_result",
    "paired_compare",
    "run_experiment",
    "run_point",
    "wilson_interval",
]
