"""Iterative receiver: SISO post-distorter and BCJR decoder exchanging
extrinsic LLRs, with an optional data-aided retraining phase where decoded
data serves as a virtual training sequence (fitted by total least squares).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import MemoryPolynomialModel, NoisySignal
from .coding import (FrameFormat, LlrFrame, bcjr_decode, extrinsic_bit_llrs,
                     hard_bits, soft_symbol_mean, symbol_priors_from_llrs)
from .elm import ElmModel, elm_train_ls, elm_train_tls
from .numerics import TlsNoSolutionError
from .postdistort import (CHANNEL_SV_RELTOL, VAR_FLOOR,
                          SisoElmPostDistorter, centered_windows,
                          elm_channel_train, forward_windows,
                          gaussian_symbol_posteriors, genie_likelihood_params,
                          siso_postdistort)


@dataclass
class TurboConfig:
    max_iterations: int = 5
    window: int = 2
    hidden_nodes: int = 150
    training_length: int = 800
    data_aided: bool = False
    virtual_data_length: int = 0
    early_stop: bool = False
    elm_seed: int = 0
    var_floor: float = VAR_FLOOR

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration")


@dataclass
class IterationRecord:
    index: int
    extrinsic_mean_abs: float
    cov_mean: float
    info_ber: float | None = None
    note: str = ""


@dataclass
class TurboTrace:
    iterations: list = field(default_factory=list)
    tls_fallback: bool = False

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)


@dataclass
class TurboResult:
    info_bits: np.ndarray
    info_llrs: np.ndarray
    trace: TurboTrace


def _window_training_set(x_seq, y_seq, window: int):
    """Interior symbol-window inputs and signal-window targets of a block."""
    x_seq = np.asarray(x_seq, dtype=float)
    n = x_seq.size
    inputs = centered_windows(x_seq, window)[window:n - window]
    targets = forward_windows(np.asarray(y_seq, dtype=float), window)[window:n - window]
    return inputs, targets


def retrain_data_aided(channel_elm: ElmModel, training, soft_data_symbols,
                       y_data, window: int, virtual_length: int,
                       confidence=None, min_confidence: float = 0.99):
    """Re-fit the channel ELM's output weights on training plus virtual data.

    Exact windows come from the known training pair; virtual windows use the
    decoder's soft symbol means as inputs and the corresponding received
    samples as targets. The combined set is fitted by total least squares
    (the virtual inputs are uncertain); when the TLS solution does not exist
    the fit falls back to least squares and the event is reported.

    ``confidence`` can give a per-symbol reliability (max posterior symbol
    probability); virtual windows containing any symbol below
    ``min_confidence`` are excluded, so uncertain estimates cannot drag the
    fit when the LS fallback is active.

    Returns (model, used_ls_fallback).
    """
    x_tr, y_tr = training
    inputs, targets = _window_training_set(x_tr, y_tr, window)
    v = int(virtual_length)
    if v > 0:
        soft = np.asarray(soft_data_symbols, dtype=float)[:v]
        vin, vtg = _window_training_set(soft, np.asarray(y_data, dtype=float)[:v + window],
                                        window)
        if confidence is not None:
            conf = np.asarray(confidence, dtype=float)[:v]
            win_conf = centered_windows(conf, window)[window:conf.size - window]
            keep = np.min(win_conf, axis=1) >= min_confidence
            vin, vtg = vin[keep], vtg[keep]
        inputs = np.vstack([inputs, vin])
        targets = np.vstack([targets, vtg])
    try:
        return elm_train_tls(channel_elm, inputs, targets), False
    except TlsNoSolutionError:
        return elm_train_ls(channel_elm, inputs, targets,
                            sv_rel_tol=CHANNEL_SV_RELTOL), True


def run_turbo(y: NoisySignal, training, cfg: TurboConfig, fmt: FrameFormat,
              genie_channel: MemoryPolynomialModel | None = None,
              true_info=None) -> TurboResult:
    """Run the iterative receiver on one frame.

    ``y.samples`` holds the received data block (it may extend past the
    frame's symbols; trailing samples complete the last signal windows).
    ``training`` is the (x', y') pair, ignored in genie mode. With
    ``true_info`` given, per-iteration hard-decision BER is traced.
    """
    const = fmt.constellation
    n_sym = fmt.n_symbols
    p = const.bits_per_symbol
    y_windows = forward_windows(y.samples, cfg.window, count=n_sym)

    pd = None
    if genie_channel is None:
        if training is None:
            raise ValueError("training pair required unless in genie mode")
        x_tr, y_tr = training
        elm = elm_channel_train(x_tr, y_tr, cfg.window, cfg.hidden_nodes,
                                cfg.elm_seed)
        pd = SisoElmPostDistorter.from_elm(elm, cfg.window, const,
                                           cfg.var_floor, training=training)

    a_priori_mapped = fmt.with_pad_llrs(np.zeros(fmt.n_coded))
    trace = TurboTrace()
    info_llrs = np.zeros(fmt.n_info)
    info_hat = np.zeros(fmt.n_info, dtype=np.uint8)
    prev_signs = None

    for it in range(1, cfg.max_iterations + 1):
        la = LlrFrame(a_priori_mapped, "a-priori")
        priors = symbol_priors_from_llrs(la.values.reshape(n_sym, p), const)
        if genie_channel is not None:
            params = genie_likelihood_params(genie_channel, priors,
                                             y.noise_variance, const, cfg.window)
            post = gaussian_symbol_posteriors(y_windows, priors, params)
            ext_sym = extrinsic_bit_llrs(post, la.values, const)
            cov_mean = float(np.mean(params.cov_diag))
        else:
            pd_it = pd.prepared(y_windows, priors)
            ext_sym = siso_postdistort(y_windows, la, pd_it)
            cov_mean = float(np.mean(pd_it.params.cov_diag))
        assert ext_sym.kind == "extrinsic"

        dec_in = LlrFrame(
            fmt.interleaver.deinterleave(fmt.strip_pad_llrs(ext_sym.values)),
            "a-priori")
        coded_ext, info_llrs = bcjr_decode(dec_in, fmt.code)
        assert coded_ext.kind == "extrinsic"
        a_priori_mapped = fmt.with_pad_llrs(
            fmt.interleaver.interleave(coded_ext.values))
        info_hat = hard_bits(info_llrs)

        record = IterationRecord(
            index=it,
            extrinsic_mean_abs=float(np.mean(np.abs(ext_sym.values))),
            cov_mean=cov_mean,
            info_ber=None if true_info is None
            else float(np.mean(info_hat != np.asarray(true_info, dtype=np.uint8))),
        )

        if cfg.data_aided and it == 1 and genie_channel is None:
            # Virtual-symbol estimates use the decoder's full a-posteriori
            # (a-priori plus extrinsic): these are its actual data decisions,
            # while extrinsic-only means are shrunk toward the prior mean.
            posterior = LlrFrame(dec_in.values + coded_ext.values,
                                 "a-posteriori")
            post_mapped = LlrFrame(
                fmt.with_pad_llrs(fmt.interleaver.interleave(posterior.values)),
                "a-posteriori")
            priors_post = symbol_priors_from_llrs(
                post_mapped.values.reshape(n_sym, p), const)
            soft = soft_symbol_mean(priors_post, const)
            elm, fallback = retrain_data_aided(
                pd.channel_elm, training, soft, y.samples,
                cfg.window, cfg.virtual_data_length,
                confidence=priors_post.max(axis=1))
            pd = SisoElmPostDistorter.from_elm(elm, cfg.window, const,
                                               cfg.var_floor, training=training)
            trace.tls_fallback = fallback
            record.note = "data-aided retrain" + (" (LS fallback)" if fallback else "")

        trace.iterations.append(record)

        signs = info_llrs >= 0
        if cfg.early_stop and prev_signs is not None and np.array_equal(signs, prev_signs):
            break
        prev_signs = signs

    return TurboResult(info_hat, info_llrs, trace)
