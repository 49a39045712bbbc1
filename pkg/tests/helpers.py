"""Shared independent oracles for the test suite."""

import math

import numpy as np

from ledcomm.coding import conv_encode


def exhaustive_map_llrs(coded_apriori, code, n_info):
    """Brute-force a-posteriori LLRs by enumerating every codeword.

    The enumeration uses the code's linearity (codeword = info word times
    the generator matrix over GF(2)) so that frames up to 16 info bits stay
    fast; the probability model is the independent-bit channel implied by
    the a-priori LLRs.

    Returns (coded posterior LLRs, info posterior LLRs).
    """
    steps = n_info + (code.memory if code.zero_tail else 0)
    la = np.asarray(coded_apriori, dtype=float).reshape(steps, 2)
    lp0 = (-np.logaddexp(0.0, -la)).reshape(-1)
    lp1 = (-np.logaddexp(0.0, la)).reshape(-1)

    count = 2 ** n_info
    infos = ((np.arange(count)[:, None] >> np.arange(n_info)) & 1).astype(np.uint8)
    gmat = np.stack([conv_encode(row, code)
                     for row in np.eye(n_info, dtype=np.uint8)])
    codes = (infos @ gmat) % 2

    logp = codes @ lp1 + (1 - codes) @ lp0
    logp -= logp.max()
    p = np.exp(logp)

    def llrs(bit_matrix):
        s1 = p @ bit_matrix
        s0 = p.sum() - s1
        return np.log(np.maximum(s0, 1e-300)) - np.log(np.maximum(s1, 1e-300))

    return llrs(codes), llrs(infos)


def pam_ber_closed_form(levels, labels, sigma):
    """Exact bit error rate of ML (nearest-level) detection of equiprobable
    PAM in AWGN, via Q-function integrals of each decision region.
    """
    levels = np.asarray(levels, dtype=float)
    labels = np.asarray(labels)
    size, bits = labels.shape
    mids = 0.5 * (levels[1:] + levels[:-1])
    edges = np.concatenate([[-np.inf], mids, [np.inf]])

    def q(x):
        if x == -np.inf:
            return 1.0
        if x == np.inf:
            return 0.0
        return 0.5 * math.erfc(x / math.sqrt(2.0))

    total = 0.0
    for i in range(size):
        for j in range(size):
            if i == j:
                continue
            p_region = q((edges[j] - levels[i]) / sigma) \
                - q((edges[j + 1] - levels[i]) / sigma)
            dist = int(np.sum(labels[i] != labels[j]))
            total += p_region * dist
    return total / (size * bits)


def awgn_pam_posteriors(y, levels, sigma2, priors=None):
    """Textbook per-symbol posterior over PAM levels for scalar AWGN."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    levels = np.asarray(levels, dtype=float)
    if priors is None:
        priors = np.full(levels.size, 1.0 / levels.size)
    priors = np.atleast_2d(priors)
    loglik = -0.5 * (y[:, None] - levels[None, :]) ** 2 / sigma2
    logpost = loglik + np.log(priors)
    logpost -= logpost.max(axis=1, keepdims=True)
    post = np.exp(logpost)
    return post / post.sum(axis=1, keepdims=True)
