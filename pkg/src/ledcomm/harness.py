"""Experiment driver: Monte Carlo BER sweeps over SNR for every receiver.

Per-frame seeds are derived from the master seed by counter and are
receiver-independent, so every receiver sees byte-identical transmitted
symbols and noise. Tallies are merged in frame-index order, which makes the
results documents bit-identical regardless of worker count.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import __version__
from .channel import NoisySignal, add_awgn, channel_from_config
from .coding import (ConvCode, FrameFormat, Interleaver, LlrFrame, bcjr_decode,
                     extrinsic_bit_llrs, hard_bits, make_pam, pam_map)
from .postdistort import (causal_windows, elm_pd_apply, elm_pd_train,
                          poly_pd_apply, poly_pd_train_rls)
from .turbo import TurboConfig, run_turbo

RECEIVER_KINDS = ("rls-poly", "elm-noniter", "elm-turbo",
                  "elm-turbo-data-aided", "genie-turbo")

# Frames are processed in fixed-size chunks; the stopping rule is evaluated
# at chunk boundaries only, keeping results independent of worker count.
FRAME_CHUNK = 32


@dataclass
class ReceiverSpec:
    """One receiver entry of a sweep; unset fields fall back to the config."""

    kind: str
    training_length: int | None = None
    hidden_nodes: int | None = None
    iterations: int | None = None
    virtual_data_length: int | None = None
    poly_order: int = 7
    poly_memory: int = 4
    forgetting: float = 0.999
    label: str | None = None

    def __post_init__(self):
        if self.kind not in RECEIVER_KINDS:
            raise ValueError(f"unknown receiver kind {self.kind!r}")

    @classmethod
    def parse(cls, entry) -> "ReceiverSpec":
        if isinstance(entry, str):
            return cls(kind=entry)
        if isinstance(entry, ReceiverSpec):
            return entry
        return cls(**entry)


@dataclass
class ResolvedReceiver:
    kind: str
    label: str
    training_length: int
    hidden_nodes: int
    iterations: int
    virtual_data_length: int
    poly_order: int
    poly_memory: int
    forgetting: float


@dataclass
class ExperimentConfig:
    receivers: list
    snr_db: list
    channel: dict = field(default_factory=lambda: {"kind": "hammerstein"})
    constellation: dict = field(
        default_factory=lambda: {"bits_per_symbol": 3, "lo": 0.0, "hi": 1.0})
    code: dict = field(default_factory=lambda: {
        "generators": ["171", "133"], "constraint_length": 7, "zero_tail": True})
    n_info: int = 1024
    window: int = 2
    training_length: int = 800
    hidden_nodes: int = 150
    iterations: int = 5
    max_frames: int = 2000
    min_frames: int = 1
    target_errors: int = 100
    master_seed: int = 1234

    def __post_init__(self):
        if not self.snr_db:
            raise ValueError("snr grid must be non-empty")
        self.receivers = [ReceiverSpec.parse(r) for r in self.receivers]

    # -- serialization -----------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        doc = asdict(self)
        return doc

    # -- derived structure --------------------------------------------------

    def build_constellation(self):
        c = self.constellation
        return make_pam(c.get("bits_per_symbol", 3), c.get("lo", 0.0),
                        c.get("hi", 1.0))

    def build_code(self) -> ConvCode:
        c = self.code
        gens = tuple(int(str(g), 8) for g in c.get("generators", ["171", "133"]))
        return ConvCode(gens, c.get("constraint_length", 7),
                        c.get("zero_tail", True))

    def build_frame_format(self) -> FrameFormat:
        code = self.build_code()
        interleaver = Interleaver.random(
            code.coded_length(self.n_info),
            np.random.SeedSequence([self.master_seed, 1]))
        return FrameFormat(code, self.build_constellation(), interleaver,
                           self.n_info)

    def resolve(self, spec: ReceiverSpec) -> ResolvedReceiver:
        t = spec.training_length if spec.training_length is not None \
            else (0 if spec.kind == "genie-turbo" else self.training_length)
        hidden_default = 100 if spec.kind == "elm-noniter" else self.hidden_nodes
        hidden = spec.hidden_nodes if spec.hidden_nodes is not None else hidden_default
        iters = spec.iterations if spec.iterations is not None else self.iterations
        virtual = spec.virtual_data_length
        if virtual is None:
            virtual = t if spec.kind == "elm-turbo-data-aided" else 0
        label = spec.label
        if label is None:
            label = spec.kind
            if spec.training_length is not None or spec.hidden_nodes is not None:
                label = f"{spec.kind}-{t}t{hidden}h"
        return ResolvedReceiver(spec.kind, label, t, hidden, iters, virtual,
                                spec.poly_order, spec.poly_memory,
                                spec.forgetting)

    def resolved_receivers(self) -> list:
        return [self.resolve(s) for s in self.receivers]

    @property
    def max_training_length(self) -> int:
        return max((r.training_length for r in self.resolved_receivers()),
                   default=0)


# ---------------------------------------------------------------------------
# Frame generation (receiver independent)
# ---------------------------------------------------------------------------

@dataclass
class FrameData:
    info: np.ndarray
    symbols: np.ndarray
    x_train: np.ndarray
    y_train: np.ndarray
    y_data: NoisySignal


def _frame_rng(master_seed: int, snr_db: float, frame_idx: int, stream: int):
    key = [int(master_seed), 2, int(round(snr_db * 1000.0)), int(frame_idx),
           stream]
    return np.random.default_rng(np.random.SeedSequence(key))


def transmit_frame(cfg: ExperimentConfig, fmt: FrameFormat, channel,
                   snr_db: float, frame_idx: int) -> FrameData:
    """Generate one frame and push it through the channel and AWGN.

    Transmission is [training | guard | data | guard]; zero-drive guard
    symbols isolate the blocks and supply the trailing samples the
    receiver's forward windows need.
    """
    const = fmt.constellation
    t_max = cfg.max_training_length
    guard = max(cfg.window, channel.expand().memory)

    rng_info = _frame_rng(cfg.master_seed, snr_db, frame_idx, 0)
    info = rng_info.integers(0, 2, cfg.n_info).astype(np.uint8)
    symbols = fmt.encode_to_symbols(info)

    rng_train = _frame_rng(cfg.master_seed, snr_db, frame_idx, 1)
    x_train = const.levels[rng_train.integers(0, const.size, t_max)]

    x_full = np.concatenate([x_train, np.zeros(guard), symbols,
                             np.zeros(guard)])
    z = channel.apply(x_full)
    y_full = add_awgn(z, snr_db,
                      _frame_rng(cfg.master_seed, snr_db, frame_idx, 2))
    return FrameData(
        info=info,
        symbols=symbols,
        x_train=x_train,
        y_train=y_full.samples[:t_max],
        y_data=NoisySignal(y_full.samples[t_max + guard:],
                           y_full.noise_variance),
    )


# ---------------------------------------------------------------------------
# Receivers
# ---------------------------------------------------------------------------

def _decode_from_symbol_estimates(x_hat, residual_var: float,
                                  fmt: FrameFormat):
    """Gaussian soft demap of post-distorted symbols, then one BCJR pass."""
    const = fmt.constellation
    var = max(residual_var, 1e-12)
    diff = x_hat[:, None] - const.levels[None, :]
    logpost = -0.5 * diff * diff / var
    logpost -= logpost.max(axis=1, keepdims=True)
    post = np.exp(logpost)
    post /= post.sum(axis=1, keepdims=True)
    mapped = extrinsic_bit_llrs(
        post, np.zeros(post.shape[0] * const.bits_per_symbol), const)
    dec_in = LlrFrame(
        fmt.interleaver.deinterleave(fmt.strip_pad_llrs(mapped.values)),
        "a-priori")
    _, info_llrs = bcjr_decode(dec_in, fmt.code)
    return hard_bits(info_llrs)


def run_receiver(rx: ResolvedReceiver, frame: FrameData,
                 cfg: ExperimentConfig, fmt: FrameFormat, channel) -> dict:
    """Run one receiver on one frame; returns a flat tally/diagnostic dict."""
    n_sym = fmt.n_symbols
    x_tr = frame.x_train[frame.x_train.size - rx.training_length:]
    y_tr = frame.y_train[frame.y_train.size - rx.training_length:]
    out = {"bits": int(cfg.n_info)}

    if rx.kind == "rls-poly":
        pd = poly_pd_train_rls(y_tr, x_tr, rx.poly_order, rx.poly_memory,
                               rx.forgetting)
        resid = poly_pd_apply(pd, y_tr) - x_tr
        x_hat = poly_pd_apply(pd, frame.y_data.samples[:n_sym])
        info_hat = _decode_from_symbol_estimates(
            x_hat, float(np.mean(resid ** 2)), fmt)
        out["iterations"] = 1
        out["condition"] = float(pd.condition)
    elif rx.kind == "elm-noniter":
        model = elm_pd_train(y_tr, x_tr, cfg.window, rx.hidden_nodes,
                             cfg.master_seed)
        resid = elm_pd_apply(model, y_tr, cfg.window) - x_tr
        x_hat = elm_pd_apply(model, frame.y_data.samples[:n_sym], cfg.window)
        info_hat = _decode_from_symbol_estimates(
            x_hat, float(np.mean(resid ** 2)), fmt)
        out["iterations"] = 1
    else:
        tc = TurboConfig(
            max_iterations=rx.iterations,
            window=cfg.window,
            hidden_nodes=rx.hidden_nodes,
            training_length=rx.training_length,
            data_aided=rx.kind == "elm-turbo-data-aided",
            virtual_data_length=rx.virtual_data_length,
            elm_seed=cfg.master_seed,
        )
        genie = channel.expand() if rx.kind == "genie-turbo" else None
        training = None if rx.kind == "genie-turbo" else (x_tr, y_tr)
        result = run_turbo(frame.y_data, training, tc, fmt,
                           genie_channel=genie, true_info=frame.info)
        info_hat = result.info_bits
        out["iterations"] = result.trace.n_iterations
        out["iter_errors"] = [
            int(round(rec.info_ber * cfg.n_info))
            for rec in result.trace.iterations]
        out["tls_fallback"] = int(result.trace.tls_fallback)
        out["cov_mean_last"] = result.trace.iterations[-1].cov_mean

    out["errors"] = int(np.sum(info_hat != frame.info))
    return out


# ---------------------------------------------------------------------------
# Points and sweeps
# ---------------------------------------------------------------------------

@dataclass
class PointResult:
    receiver: str
    snr_db: float
    errors: int
    bits: int
    frame_errors: int
    frames: int
    iterations_total: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0

    @property
    def iterations_mean(self) -> float:
        return self.iterations_total / self.frames if self.frames else 0.0

    def to_dict(self) -> dict:
        return {
            "receiver": self.receiver, "snr_db": self.snr_db,
            "errors": self.errors, "bits": self.bits, "ber": self.ber,
            "frame_errors": self.frame_errors, "frames": self.frames,
            "fer": self.fer, "iterations_mean": self.iterations_mean,
            "diagnostics": self.diagnostics,
        }


@dataclass
class SweepResult:
    config: dict
    points: list
    version: str = __version__

    def to_dict(self) -> dict:
        return {"version": self.version, "config": self.config,
                "points": [p.to_dict() for p in self.points]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def point(self, receiver: str, snr_db: float) -> PointResult:
        for p in self.points:
            if p.receiver == receiver and p.snr_db == snr_db:
                return p
        raise KeyError(f"no point for ({receiver}, {snr_db})")


_WORKER: dict = {}


def _init_worker(cfg_doc: str):
    cfg = ExperimentConfig.from_dict(json.loads(cfg_doc))
    _WORKER["cfg"] = cfg
    _WORKER["fmt"] = cfg.build_frame_format()
    _WORKER["channel"] = channel_from_config(cfg.channel)


def _run_frame(args):
    rx_index, snr_db, frame_idx = args
    cfg, fmt, channel = _WORKER["cfg"], _WORKER["fmt"], _WORKER["channel"]
    rx = cfg.resolved_receivers()[rx_index]
    frame = transmit_frame(cfg, fmt, channel, snr_db, frame_idx)
    try:
        out = run_receiver(rx, frame, cfg, fmt, channel)
    except Exception as exc:  # receiver failures are counted, not dropped
        out = {"bits": int(cfg.n_info), "errors": int(cfg.n_info),
               "iterations": 0, "failure": f"{type(exc).__name__}: {exc}"}
    out["frame_idx"] = frame_idx
    return out


def _merge_outcomes(rx: ResolvedReceiver, snr_db: float, outcomes: list) -> PointResult:
    outcomes = sorted(outcomes, key=lambda o: o["frame_idx"])
    point = PointResult(rx.label, snr_db, 0, 0, 0, 0, 0)
    diag = point.diagnostics
    iter_errors: list = []
    for o in outcomes:
        point.errors += o["errors"]
        point.bits += o["bits"]
        point.frame_errors += int(o["errors"] > 0)
        point.frames += 1
        point.iterations_total += o.get("iterations", 0)
        if "condition" in o:
            diag["condition_max"] = max(diag.get("condition_max", 0.0),
                                        o["condition"])
        if "iter_errors" in o:
            per = o["iter_errors"]
            if len(iter_errors) < len(per):
                iter_errors.extend([0] * (len(per) - len(iter_errors)))
            for i, e in enumerate(per):
                iter_errors[i] += e
        if o.get("tls_fallback"):
            diag["tls_fallbacks"] = diag.get("tls_fallbacks", 0) + 1
        if "failure" in o:
            diag["failures"] = diag.get("failures", 0) + 1
            diag.setdefault("failure_messages", []).append(o["failure"])
    if iter_errors:
        diag["iter_errors"] = iter_errors
        diag["iter_bits"] = point.bits
    return point


def run_point(cfg: ExperimentConfig, rx_index: int, snr_db: float,
              executor=None) -> PointResult:
    """Monte Carlo tally for one (receiver, SNR) pair.

    Frames run in fixed chunks until the error target and minimum frame
    count are met or the frame cap is reached.
    """
    _init_worker(json.dumps(cfg.to_dict()))
    rx = cfg.resolved_receivers()[rx_index]
    outcomes = []
    frame_idx = 0
    while frame_idx < cfg.max_frames:
        n = min(FRAME_CHUNK, cfg.max_frames - frame_idx)
        tasks = [(rx_index, snr_db, frame_idx + i) for i in range(n)]
        if executor is None:
            outcomes.extend(_run_frame(t) for t in tasks)
        else:
            outcomes.extend(executor.map(_run_frame, tasks))
        frame_idx += n
        errors = sum(o["errors"] for o in outcomes)
        if frame_idx >= cfg.min_frames and errors >= cfg.target_errors:
            break
    return _merge_outcomes(rx, snr_db, outcomes)


def run_sweep(cfg: ExperimentConfig, threads: int = 1) -> SweepResult:
    """Run every (receiver, SNR) point of the grid."""
    executor = None
    if threads > 1:
        executor = ProcessPoolExecutor(
            max_workers=threads, mp_context=get_context("fork"),
            initializer=_init_worker, initargs=(json.dumps(cfg.to_dict()),))
    try:
        points = [run_point(cfg, i, snr, executor)
                  for i in range(len(cfg.receivers))
                  for snr in cfg.snr_db]
    finally:
        if executor is not None:
            executor.shutdown()
    return SweepResult(cfg.to_dict(), points)


def save_results(sweep: SweepResult, outdir) -> tuple:
    """Write the JSON results document and the flat CSV plot table."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    json_path = outdir / "results.json"
    json_path.write_text(sweep.to_json())
    csv_path = outdir / "results.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["receiver", "snr_db", "ber", "fer", "bits",
                         "errors", "iterations_mean"])
        for p in sweep.points:
            writer.writerow([p.receiver, p.snr_db, repr(p.ber), repr(p.fer),
                             p.bits, p.errors, repr(p.iterations_mean)])
    return json_path, csv_path


# ---------------------------------------------------------------------------
# Uncoded calibration path (coding disabled)
# ---------------------------------------------------------------------------

def run_uncoded_point(constellation, snr_db: float, n_symbols: int,
                      seed: int) -> dict:
    """Uncoded PAM over the identity channel: hard nearest-level demapping.

    Used to calibrate the AWGN path against the closed-form error formula.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    p = constellation.bits_per_symbol
    bits = rng.integers(0, 2, n_symbols * p).astype(np.uint8)
    x = pam_map(bits, constellation)
    y = add_awgn(x, snr_db, rng)
    from .coding import hard_demap
    _, bits_hat = hard_demap(y.samples, constellation)
    errors = int(np.sum(bits_hat != bits))
    return {"errors": errors, "bits": bits.size, "ber": errors / bits.size,
            "noise_variance": y.noise_variance,
            "signal_power": float(np.mean(x ** 2))}
