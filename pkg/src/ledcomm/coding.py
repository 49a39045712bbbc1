"""Bit-level transmit/receive plumbing.

Convolutional encoding, random interleaving, Gray-mapped unipolar PAM,
LLR/probability conversions, and an exact log-domain BCJR decoder
(forward-backward with log-sum-exp recursions, numba-compiled).

LLRs follow the convention L = ln p(bit=0) / p(bit=1) throughout and are
clamped to +-LLR_CLAMP.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

LLR_CLAMP = 30.0
PROB_FLOOR = 1e-300


# ---------------------------------------------------------------------------
# PAM constellation with reflected-Gray labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PamConstellation:
    """2^P equally likely amplitude levels with Gray labels.

    ``levels`` is ascending; ``labels[i]`` is the P-bit label of level i,
    least-significant bit first. Adjacent levels differ in exactly one bit.
    """

    levels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        labels = np.asarray(self.labels, dtype=np.uint8)
        if np.any(np.diff(levels) <= 0):
            raise ValueError("levels must be strictly increasing")
        if labels.shape != (levels.size, self.bits_per_symbol_of(levels.size)):
            raise ValueError("labels shape inconsistent with level count")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "labels", labels)

    @staticmethod
    def bits_per_symbol_of(size: int) -> int:
        p = int(size).bit_length() - 1
        if 2 ** p != size:
            raise ValueError("alphabet size must be a power of two")
        return p

    @property
    def bits_per_symbol(self) -> int:
        return self.bits_per_symbol_of(self.levels.size)

    @property
    def size(self) -> int:
        return self.levels.size

    @property
    def label_values(self) -> np.ndarray:
        """Integer value of each label (LSB-first packing)."""
        weights = 1 << np.arange(self.bits_per_symbol)
        return (self.labels.astype(int) @ weights)


def make_pam(bits_per_symbol: int = 3, lo: float = 0.0, hi: float = 1.0) -> PamConstellation:
    """Equally spaced unipolar levels on [lo, hi], reflected-Gray labels."""
    if bits_per_symbol < 1:
        raise ValueError("need at least one bit per symbol")
    size = 2 ** bits_per_symbol
    idx = np.arange(size)
    gray = idx ^ (idx >> 1)
    labels = (gray[:, None] >> np.arange(bits_per_symbol)) & 1
    return PamConstellation(np.linspace(lo, hi, size), labels.astype(np.uint8))


def pam_map(coded_bits, constellation: PamConstellation) -> np.ndarray:
    """Map consecutive P-bit groups (LSB-first labels) to levels."""
    bits = np.asarray(coded_bits, dtype=np.uint8)
    p = constellation.bits_per_symbol
    if bits.size % p:
        raise ValueError(f"bit count {bits.size} not divisible by {p}")
    groups = bits.reshape(-1, p).astype(int)
    values = groups @ (1 << np.arange(p))
    lut = np.empty(constellation.size, dtype=int)
    lut[constellation.label_values] = np.arange(constellation.size)
    return constellation.levels[lut[values]]


def hard_demap(symbols, constellation: PamConstellation):
    """Nearest level (ties to the lower level); returns (level indices, bits)."""
    x = np.asarray(symbols, dtype=float)
    mids = 0.5 * (constellation.levels[1:] + constellation.levels[:-1])
    idx = np.searchsorted(mids, x, side="left")
    return idx, constellation.labels[idx].reshape(-1)


# ---------------------------------------------------------------------------
# LLR containers and probability conversions
# ---------------------------------------------------------------------------

LLR_KINDS = ("a-priori", "a-posteriori", "extrinsic")


@dataclass
class LlrFrame:
    """Per-coded-bit LLRs tagged by role; values are clamped on construction."""

    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in LLR_KINDS:
            raise ValueError(f"unknown LLR kind {self.kind!r}")
        self.values = np.clip(np.asarray(self.values, dtype=float),
                              -LLR_CLAMP, LLR_CLAMP)

    def __len__(self) -> int:
        return self.values.size


def bit_prob_zero(llrs) -> np.ndarray:
    """p(bit = 0) from an LLR; stable for clamped inputs."""
    return 1.0 / (1.0 + np.exp(-np.asarray(llrs, dtype=float)))


def symbol_priors_from_llrs(llrs, constellation: PamConstellation) -> np.ndarray:
    """Per-symbol prior over the alphabet from independent per-bit LLRs.

    Accepts one symbol's P LLRs or an (N, P) batch; rows are normalized to
    sum to one.
    """
    a = np.asarray(llrs, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != constellation.bits_per_symbol:
        raise ValueError("LLR width does not match bits per symbol")
    p0 = bit_prob_zero(a)                        # (N, P)
    labels = constellation.labels.astype(float)  # (A, P)
    # prob[n, i] = prod_p (labels[i,p] ? 1-p0 : p0)
    probs = np.prod(np.where(labels[None, :, :] > 0,
                             1.0 - p0[:, None, :], p0[:, None, :]), axis=2)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs[0] if single else probs


def soft_symbol_mean(priors, constellation: PamConstellation):
    """Expected symbol under the given prior(s)."""
    p = np.asarray(priors, dtype=float)
    return p @ constellation.levels


def symbol_moment(priors, constellation: PamConstellation, k: int):
    """Expected k-th power of the symbol under the given prior(s)."""
    p = np.asarray(priors, dtype=float)
    return p @ constellation.levels ** k


def extrinsic_bit_llrs(posteriors, a_priori, constellation: PamConstellation) -> LlrFrame:
    """Extrinsic per-bit LLRs: marginal posterior bit LLR minus the a priori.

    ``posteriors`` is (N, A) normalized symbol posteriors; ``a_priori`` the
    matching (N*P,) a-priori LLRs (or an LlrFrame).
    """
    post = np.atleast_2d(np.asarray(posteriors, dtype=float))
    la = a_priori.values if isinstance(a_priori, LlrFrame) else np.asarray(a_priori, dtype=float)
    p = constellation.bits_per_symbol
    la = la.reshape(post.shape[0], p)
    mask0 = (constellation.labels == 0).astype(float)  # (A, P)
    s0 = np.maximum(post @ mask0, PROB_FLOOR)
    s1 = np.maximum(post @ (1.0 - mask0), PROB_FLOOR)
    posterior_llr = np.log(s0) - np.log(s1)
    return LlrFrame((posterior_llr - la).reshape(-1), "extrinsic")


# ---------------------------------------------------------------------------
# Convolutional code and interleaver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvCode:
    """Rate-1/2 feedforward convolutional code, octal generator pair."""

    generators: tuple = (0o171, 0o133)
    constraint_length: int = 7
    zero_tail: bool = True

    def __post_init__(self):
        if any(g <= 0 for g in self.generators):
            raise ValueError("generators must be nonzero")
        if max(self.generators).bit_length() > self.constraint_length:
            raise ValueError("generator longer than constraint length")

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_states(self) -> int:
        return 2 ** self.memory

    def taps(self, j: int) -> np.ndarray:
        """Tap vector of generator j, current bit first."""
        g = self.generators[j]
        cl = self.constraint_length
        return np.array([(g >> (cl - 1 - i)) & 1 for i in range(cl)], dtype=np.uint8)

    def coded_length(self, n_info: int) -> int:
        tail = self.memory if self.zero_tail else 0
        return 2 * (n_info + tail)


def conv_encode(info_bits, code: ConvCode) -> np.ndarray:
    """Encode; with zero_tail, flush bits force the final state to zero."""
    u = np.asarray(info_bits, dtype=np.uint8)
    if code.zero_tail:
        u = np.concatenate([u, np.zeros(code.memory, dtype=np.uint8)])
    if u.size == 0:
        return np.zeros(0, dtype=np.uint8)
    out = np.empty((u.size, 2), dtype=np.uint8)
    for j in range(2):
        conv = np.convolve(u.astype(int), code.taps(j).astype(int)) % 2
        out[:, j] = conv[:u.size]
    return out.reshape(-1)


@dataclass(frozen=True)
class Interleaver:
    """Fixed permutation of one frame's coded bits."""

    permutation: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=int)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ValueError("permutation is not a bijection on 0..n-1")
        object.__setattr__(self, "permutation", perm)

    @classmethod
    def random(cls, length: int, seed) -> "Interleaver":
        rng = np.random.default_rng(seed)
        return cls(rng.permutation(length), seed if isinstance(seed, int) else None)

    def interleave(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.size != self.permutation.size:
            raise ValueError("length does not match the permutation")
        return x[self.permutation]

    def deinterleave(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.size != self.permutation.size:
            raise ValueError("length does not match the permutation")
        out = np.empty_like(x)
        out[self.permutation] = x
        return out


# ---------------------------------------------------------------------------
# BCJR decoder
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _trellis(generators: tuple, constraint_length: int):
    """(next_state, out_bits) tables: next_state (S, 2), out_bits (S, 2, 2)."""
    code = ConvCode(generators, constraint_length, zero_tail=False)
    mem = code.memory
    s_count = code.n_states
    next_state = np.empty((s_count, 2), dtype=np.int64)
    out_bits = np.empty((s_count, 2, 2), dtype=np.int64)
    for s in range(s_count):
        for u in (0, 1):
            reg = (u << mem) | s
            next_state[s, u] = (u << (mem - 1)) | (s >> 1)
            for j in range(2):
                out_bits[s, u, j] = bin(code.generators[j] & reg).count("1") & 1
    return next_state, out_bits


@njit(cache=True)
def _maxstar(a, b):
    if a < b:
        a, b = b, a
    if b == -np.inf:
        return a
    return a + np.log1p(np.exp(b - a))


@njit(cache=True)
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@njit(cache=True)
def _bcjr_kernel(la, next_state, out_bits, n_tail, terminated):
    """Exact log-domain forward-backward pass over the rate-1/2 trellis.

    la: (T, 2) a-priori LLRs of the coded bits. The last n_tail trellis
    steps only allow input 0 (flush bits). Returns ((T, 2) a-posteriori
    coded-bit LLRs, (T,) a-posteriori info-bit LLRs).
    """
    steps = la.shape[0]
    s_count = next_state.shape[0]

    # lp[t, j, v] = log p(c_{t,j} = v)
    lp = np.empty((steps, 2, 2))
    for t in range(steps):
        for j in range(2):
            lp[t, j, 0] = -_softplus(-la[t, j])
            lp[t, j, 1] = -_softplus(la[t, j])

    alpha = np.full((steps + 1, s_count), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(steps):
        u_count = 1 if t >= steps - n_tail else 2
        nxt = np.full(s_count, -np.inf)
        for s in range(s_count):
            a = alpha[t, s]
            if a == -np.inf:
                continue
            for u in range(u_count):
                g = lp[t, 0, out_bits[s, u, 0]] + lp[t, 1, out_bits[s, u, 1]]
                ns = next_state[s, u]
                nxt[ns] = _maxstar(nxt[ns], a + g)
        m = np.max(nxt)
        if m > -np.inf:
            nxt -= m
        alpha[t + 1] = nxt

    beta = np.full((steps + 1, s_count), -np.inf)
    if terminated:
        beta[steps, 0] = 0.0
    else:
        beta[steps, :] = 0.0
    for t in range(steps - 1, -1, -1):
        u_count = 1 if t >= steps - n_tail else 2
        prv = np.full(s_count, -np.inf)
        for s in range(s_count):
            for u in range(u_count):
                ns = next_state[s, u]
                b = beta[t + 1, ns]
                if b == -np.inf:
                    continue
                g = lp[t, 0, out_bits[s, u, 0]] + lp[t, 1, out_bits[s, u, 1]]
                prv[s] = _maxstar(prv[s], b + g)
        m = np.max(prv)
        if m > -np.inf:
            prv -= m
        beta[t] = prv

    coded_llr = np.empty((steps, 2))
    info_llr = np.empty(steps)
    for t in range(steps):
        u_count = 1 if t >= steps - n_tail else 2
        acc_info = np.full(2, -np.inf)
        acc_c = np.full((2, 2), -np.inf)
        for s in range(s_count):
            a = alpha[t, s]
            if a == -np.inf:
                continue
            for u in range(u_count):
                ns = next_state[s, u]
                b = beta[t + 1, ns]
                if b == -np.inf:
                    continue
                c0 = out_bits[s, u, 0]
                c1 = out_bits[s, u, 1]
                w = a + lp[t, 0, c0] + lp[t, 1, c1] + b
                acc_info[u] = _maxstar(acc_info[u], w)
                acc_c[0, c0] = _maxstar(acc_c[0, c0], w)
                acc_c[1, c1] = _maxstar(acc_c[1, c1], w)
        info_llr[t] = acc_info[0] - acc_info[1]
        for j in range(2):
            coded_llr[t, j] = acc_c[j, 0] - acc_c[j, 1]
    return coded_llr, info_llr


def bcjr_decode(ch_llrs: LlrFrame, code: ConvCode):
    """A-posteriori decoding of one frame.

    Input: a-priori LLRs on the coded bits. Output: (extrinsic LlrFrame on
    the coded bits, a-posteriori LLR array on the info bits, tail excluded).
    """
    if not isinstance(ch_llrs, LlrFrame):
        raise TypeError("bcjr_decode expects an LlrFrame")
    la = ch_llrs.values
    if la.size % 2:
        raise ValueError("coded LLR count must be even for a rate-1/2 code")
    steps = la.size // 2
    n_tail = code.memory if code.zero_tail else 0
    if steps <= n_tail:
        raise ValueError("frame shorter than the termination tail")
    next_state, out_bits = _trellis(code.generators, code.constraint_length)
    coded_post, info_post = _bcjr_kernel(
        la.reshape(steps, 2), next_state, out_bits, n_tail, code.zero_tail)
    extrinsic = LlrFrame(coded_post.reshape(-1) - la, "extrinsic")
    info = np.clip(info_post[:steps - n_tail], -1e12, 1e12)
    return extrinsic, info


def hard_bits(llrs) -> np.ndarray:
    """0 where the LLR favours bit 0 (L >= 0), else 1."""
    v = llrs.values if isinstance(llrs, LlrFrame) else np.asarray(llrs)
    return (v < 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# Frame format: code + interleaver + constellation + filler bits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameFormat:
    """Fixed per-experiment frame structure shared by transmitter and receiver.

    Coded bits are interleaved and then padded with known zero filler bits
    up to a symbol boundary; the receiver pins the filler LLRs to +LLR_CLAMP
    and strips them before decoding.
    """

    code: ConvCode
    constellation: PamConstellation
    interleaver: Interleaver
    n_info: int

    def __post_init__(self):
        if self.interleaver.permutation.size != self.n_coded:
            raise ValueError("interleaver length does not match the coded length")

    @property
    def n_coded(self) -> int:
        return self.code.coded_length(self.n_info)

    @property
    def n_pad(self) -> int:
        return (-self.n_coded) % self.constellation.bits_per_symbol

    @property
    def n_mapped(self) -> int:
        return self.n_coded + self.n_pad

    @property
    def n_symbols(self) -> int:
        return self.n_mapped // self.constellation.bits_per_symbol

    def encode_to_symbols(self, info_bits) -> np.ndarray:
        coded = conv_encode(info_bits, self.code)
        mapped = np.concatenate([self.interleaver.interleave(coded),
                                 np.zeros(self.n_pad, dtype=np.uint8)])
        return pam_map(mapped, self.constellation)

    def with_pad_llrs(self, mapped_llrs) -> np.ndarray:
        """Append the known-zero filler a-priori LLRs (certain bit 0)."""
        v = np.asarray(mapped_llrs, dtype=float)
        return np.concatenate([v, np.full(self.n_pad, LLR_CLAMP)])

    def strip_pad_llrs(self, mapped_llrs) -> np.ndarray:
        v = np.asarray(mapped_llrs, dtype=float)
        return v[:self.n_coded]
