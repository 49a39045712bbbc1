"""Receiver-side distortion compensation.

Three families: the memory-polynomial LS/RLS baseline, the non-iterative
ELM symbol predictor, and the soft-in-soft-out ELM post-distorter whose
per-symbol Gaussian likelihood is built from three trained-ELM probes
(signal table, interference mean, residual covariance diagonal).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import MemoryPolynomialModel
from .coding import (LlrFrame, PamConstellation, extrinsic_bit_llrs,
                     hard_demap, soft_symbol_mean, symbol_priors_from_llrs)
from .elm import ElmModel, elm_init, elm_predict, elm_train_ls
from .numerics import pinv, svd

VAR_FLOOR = 1e-12

# Channel-model ELM fits truncate singular directions below this fraction of
# the largest; the hidden matrices of wide sine layers carry directions many
# orders below it that only amplify training noise into the output weights.
CHANNEL_SV_RELTOL = 1e-4


class DegenerateRegressorError(RuntimeError):
    """Regressor matrix is numerically rank deficient."""

    def __init__(self, msg: str, condition: float):
        super().__init__(msg)
        self.condition = condition


# ---------------------------------------------------------------------------
# Windowing helpers (cold-start zero convention at every frame edge)
# ---------------------------------------------------------------------------

def causal_windows(y, window: int) -> np.ndarray:
    """Rows [y_n, y_{n-1}, ..., y_{n-window}], zero-padded before the frame."""
    y = np.asarray(y, dtype=float)
    cols = [np.concatenate([np.zeros(m), y[:y.size - m]]) if m else y
            for m in range(window + 1)]
    return np.stack(cols, axis=1)


def forward_windows(y, window: int, count: int | None = None) -> np.ndarray:
    """Rows [y_n, y_{n+1}, ..., y_{n+window}] for n = 0..count-1.

    ``y`` may be longer than ``count`` (trailing samples fill the windows);
    positions past the end of ``y`` are zero.
    """
    y = np.asarray(y, dtype=float)
    n = y.size if count is None else count
    padded = np.concatenate([y, np.zeros(max(0, n + window - y.size))])
    return np.stack([padded[m:m + n] for m in range(window + 1)], axis=1)


def centered_windows(x, window: int) -> np.ndarray:
    """Rows [x_{n-window}, ..., x_n, ..., x_{n+window}], zero-padded edges."""
    x = np.asarray(x, dtype=float)
    n = x.size
    padded = np.concatenate([np.zeros(window), x, np.zeros(window)])
    return np.stack([padded[m:m + n] for m in range(2 * window + 1)], axis=1)


# ---------------------------------------------------------------------------
# Memory-polynomial post-distorter (LS and RLS baselines)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolyPostDistorter:
    """x_hat_n = r_n . coefficients with the regressor layout
    [y_n, y_n^2, ..., y_n^K, y_{n-1}, ..., y_{n-M}^K] (power fastest,
    delay slowest). ``condition`` is cond(R^T R) of the training matrix.
    """

    order: int
    memory: int
    coefficients: np.ndarray
    condition: float = np.nan


def poly_regressors(y, order: int, memory: int) -> np.ndarray:
    """Training/apply regressor matrix, one row per sample."""
    lags = causal_windows(y, memory)                      # (N, M+1)
    powers = lags[:, :, None] ** np.arange(1, order + 1)  # (N, M+1, K)
    return powers.reshape(lags.shape[0], -1)


def _regressor_condition(r: np.ndarray) -> float:
    s = svd(r).singular_values
    if s[-1] == 0.0:
        return np.inf
    return float((s[0] / s[-1]) ** 2)


def poly_pd_train_ls(y_train, x_train, order: int, memory: int) -> PolyPostDistorter:
    """LS coefficient fit, solved through the SVD pseudo-inverse.

    The normal-equation condition number cond(R^T R) is recorded as a
    diagnostic; a numerically rank-deficient regressor raises.
    """
    y_train = np.asarray(y_train, dtype=float)
    x_train = np.asarray(x_train, dtype=float)
    dim = order * (memory + 1)
    if y_train.size <= dim:
        raise ValueError(f"need more than {dim} training samples")
    r = poly_regressors(y_train, order, memory)
    cond = _regressor_condition(r)
    s = svd(r).singular_values
    if s[-1] <= 1e-12 * max(r.shape) * s[0]:
        raise DegenerateRegressorError(
            f"regressor matrix is rank deficient (cond(R^T R) = {cond:.3e})", cond)
    coeffs = pinv(r) @ x_train
    return PolyPostDistorter(order, memory, coeffs, cond)


def poly_pd_train_rls(y_train, x_train, order: int, memory: int,
                      forgetting: float = 0.999,
                      init_scale: float = 1e6) -> PolyPostDistorter:
    """Exponentially weighted recursive least squares over the regressor rows."""
    if not 0.9 <= forgetting <= 1.0:
        raise ValueError("forgetting factor must lie in [0.9, 1]")
    y_train = np.asarray(y_train, dtype=float)
    x_train = np.asarray(x_train, dtype=float)
    r = poly_regressors(y_train, order, memory)
    dim = r.shape[1]
    p = init_scale * np.eye(dim)
    a = np.zeros(dim)
    for n in range(r.shape[0]):
        rn = r[n]
        pr = p @ rn
        k = pr / (forgetting + rn @ pr)
        a = a + k * (x_train[n] - rn @ a)
        p = (p - np.outer(k, pr)) / forgetting
    return PolyPostDistorter(order, memory, a, _regressor_condition(r))


def poly_pd_apply(pd: PolyPostDistorter, y) -> np.ndarray:
    return poly_regressors(y, pd.order, pd.memory) @ pd.coefficients


# ---------------------------------------------------------------------------
# Non-iterative ELM post-distorter (causal window -> symbol)
# ---------------------------------------------------------------------------

def elm_pd_train(y_train, x_train, window: int, hidden: int, seed,
                 activation: str = "sine") -> ElmModel:
    """Train an ELM mapping [y_n, ..., y_{n-window}] to the symbol x_n."""
    y_train = np.asarray(y_train, dtype=float)
    if y_train.size <= window:
        raise ValueError("training sequence shorter than the window")
    model = elm_init(window + 1, 1, hidden, seed, activation)
    return elm_train_ls(model, causal_windows(y_train, window),
                        np.asarray(x_train, dtype=float))


def elm_pd_apply(model: ElmModel, y, window: int,
                 constellation: PamConstellation | None = None):
    """Predict symbols from causal windows of the received signal.

    Returns x_hat, or (x_hat, hard levels) when a constellation is given
    (nearest level, ties going to the lower level).
    """
    x_hat = elm_predict(model, causal_windows(y, window))[:, 0]
    if constellation is None:
        return x_hat
    idx, _ = hard_demap(x_hat, constellation)
    return x_hat, constellation.levels[idx]


# ---------------------------------------------------------------------------
# Channel-model ELM and the three likelihood estimators
# ---------------------------------------------------------------------------

def training_residual_variance(channel_elm: ElmModel, x_train, y_train,
                               window: int,
                               sv_rel_tol: float = CHANNEL_SV_RELTOL) -> np.ndarray:
    """Per-coordinate out-of-sample residual variance on known symbols.

    Uses exact leave-one-out residuals of the linear output-weight fit
    (resid / (1 - h_ii) with the hat-matrix diagonal from the kept SVD
    directions); plain in-sample residuals under-estimate the conditional
    error and make the receiver overconfident. ``sv_rel_tol`` must match
    the truncation the fit itself used.
    """
    from .elm import hidden_matrix

    x_train = np.asarray(x_train, dtype=float)
    n = x_train.size
    inputs = centered_windows(x_train, window)[window:n - window]
    targets = forward_windows(np.asarray(y_train, dtype=float),
                              window)[window:n - window]
    h = hidden_matrix(channel_elm, inputs)
    resid = h @ channel_elm.output_weights - targets
    u, s, _ = np.linalg.svd(h, full_matrices=False)
    kept = s > sv_rel_tol * s[0]
    hat = np.sum(np.square(u[:, kept]), axis=1)
    scale = 1.0 / np.maximum(1.0 - hat, 1e-2)
    return np.mean(np.square(resid * scale[:, None]), axis=0)


def elm_channel_train(x_train, y_train, window: int, hidden: int, seed,
                      activation: str = "sine",
                      sv_rel_tol: float = CHANNEL_SV_RELTOL) -> ElmModel:
    """Train an ELM forward model of the LED: symbol window -> signal window.

    Inputs are [x_{n-M}, ..., x_{n+M}], targets [y_n, ..., y_{n+M}]; only
    windows fully inside the training block are used. The output-weight fit
    truncates singular directions below ``sv_rel_tol`` of the largest.
    """
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    n = x_train.size
    if n <= 2 * window:
        raise ValueError("training sequence shorter than the full window")
    inputs = centered_windows(x_train, window)[window:n - window]
    targets = forward_windows(y_train, window)[window:n - window]
    model = elm_init(2 * window + 1, window + 1, hidden, seed, activation)
    return elm_train_ls(model, inputs, targets, sv_rel_tol=sv_rel_tol)


def estimate_signal_table(channel_elm: ElmModel, constellation: PamConstellation) -> np.ndarray:
    """Useful-signal vectors a(alpha_i): ELM response to one-hot symbol windows."""
    window = (channel_elm.input_dim - 1) // 2
    probes = np.zeros((constellation.size, channel_elm.input_dim))
    probes[:, window] = constellation.levels
    return elm_predict(channel_elm, probes)


def zero_reference(channel_elm: ElmModel) -> np.ndarray:
    """ELM response to the all-zero window (its bias response)."""
    return elm_predict(channel_elm, np.zeros(channel_elm.input_dim))


def estimate_interference_mean(channel_elm: ElmModel, soft_neighbors) -> np.ndarray:
    """Interference mean for one position: probe with the center entry zeroed.

    ``soft_neighbors`` is the full 2M+1 window of soft symbol means; the
    center value is ignored and replaced by zero.
    """
    probe = np.asarray(soft_neighbors, dtype=float).copy()
    window = (channel_elm.input_dim - 1) // 2
    probe[window] = 0.0
    return elm_predict(channel_elm, probe)


def interference_means(channel_elm: ElmModel, soft_means) -> np.ndarray:
    """Batched interference means for every position of a frame."""
    window = (channel_elm.input_dim - 1) // 2
    probes = centered_windows(soft_means, window)
    probes[:, window] = 0.0
    return elm_predict(channel_elm, probes)


def signal_at_soft_center(channel_elm: ElmModel, soft_means) -> np.ndarray:
    """a(x_hat_n): probe with the soft mean alone at the window center."""
    window = (channel_elm.input_dim - 1) // 2
    probes = np.zeros((np.asarray(soft_means).size, channel_elm.input_dim))
    probes[:, window] = soft_means
    return elm_predict(channel_elm, probes)


def averaged_tap_responses(channel_elm: ElmModel, constellation: PamConstellation,
                           reference_symbols, max_windows: int = 256) -> np.ndarray:
    """Tap-response table estimated by on-manifold center swaps.

    For every alpha the ELM is evaluated on reference symbol windows with
    the center replaced by alpha and by zero; the averaged difference
    isolates the center symbol's contribution per window coordinate
    (the tap polynomial is additive across taps, so the neighbor terms
    cancel exactly). More robust than the one-hot probes when the network
    extrapolates poorly off the training manifold. Returns (A, M+1).
    """
    window = (channel_elm.input_dim - 1) // 2
    refs = np.asarray(reference_symbols, dtype=float)
    base = centered_windows(refs, window)[window:refs.size - window]
    if base.shape[0] > max_windows:
        step = base.shape[0] // max_windows
        base = base[::step][:max_windows]
    zero_probe = base.copy()
    zero_probe[:, window] = 0.0
    zero_resp = elm_predict(channel_elm, zero_probe)
    table = np.empty((constellation.size, window + 1))
    for i, level in enumerate(constellation.levels):
        probe = base.copy()
        probe[:, window] = level
        table[i] = np.mean(elm_predict(channel_elm, probe) - zero_resp, axis=0)
    return table


def conditional_signal_means(channel_elm: ElmModel, soft_means,
                             constellation: PamConstellation) -> np.ndarray:
    """Likelihood means m_n(alpha_i) = a(alpha_i) + i_bar_n, evaluated jointly.

    For each position the ELM is probed with the window of soft neighbor
    means and the center swept over the alphabet, estimating the conditional
    mean of the signal window given the center symbol. Returns (N, A, M+1).
    """
    window = (channel_elm.input_dim - 1) // 2
    base = centered_windows(soft_means, window)
    out = np.empty((base.shape[0], constellation.size, window + 1))
    for i, level in enumerate(constellation.levels):
        probes = base.copy()
        probes[:, window] = level
        out[:, i, :] = elm_predict(channel_elm, probes)
    return out


def estimate_covariance(channel_elm: ElmModel, y_windows, soft_means,
                        interference_mean, var_floor: float = VAR_FLOOR,
                        zero_ref=None, signal_variance=None) -> np.ndarray:
    """Diagonal estimate of the interference-plus-noise covariance.

    Starts from the empirical second moment of the residuals
    y_n - a(x_hat_n) - i_bar_n over the frame; off-diagonal structure is
    discarded by contract and entries are floored. When ``zero_ref`` is
    given, a(x_hat_n) is referenced to the all-zero probe response.

    The residual moment also carries the variance of the center-symbol
    term (a(x_n) vs a(x_hat_n)), which does not belong to the
    interference-plus-noise covariance the likelihood needs; passing the
    prior-implied per-position ``signal_variance`` (N, M+1) removes its
    average. The correction vanishes as the feedback sharpens.
    """
    y_windows = np.asarray(y_windows, dtype=float)
    window = (channel_elm.input_dim - 1) // 2
    if y_windows.shape[0] < window + 2:
        raise ValueError("need at least window + 2 positions to estimate the covariance")
    a_soft = signal_at_soft_center(channel_elm, soft_means)
    if zero_ref is not None:
        a_soft = a_soft - zero_ref
    resid = y_windows - a_soft - interference_mean
    v = np.mean(np.square(resid), axis=0)
    if signal_variance is not None:
        v = v - np.mean(np.asarray(signal_variance, dtype=float), axis=0)
    return np.maximum(v, var_floor)


def prior_signal_variance(signal_table, symbol_priors) -> np.ndarray:
    """Per-position variance of the center-symbol signal under the priors.

    ``signal_table`` is (A, M+1); returns (N, M+1) with
    Var_p[a(x_n)] per coordinate.
    """
    table = np.asarray(signal_table, dtype=float)
    priors = np.atleast_2d(np.asarray(symbol_priors, dtype=float))
    first = priors @ table
    second = priors @ np.square(table)
    return np.maximum(0.0, second - np.square(first))


def neighbor_interference_variance(signal_table, symbol_priors,
                                   window: int) -> np.ndarray:
    """Prior-implied variance of the interference per window coordinate.

    Column m of the (zero-referenced) signal table estimates the tap
    response g_m(alpha); under independent symbol priors the interference
    on coordinate q sums the variances of g_m(x_{n+q-m}) over the taps
    m != q. Out-of-frame symbols are zero-drive and contribute nothing.
    Returns (N, window + 1).
    """
    table = np.asarray(signal_table, dtype=float)
    priors = np.atleast_2d(np.asarray(symbol_priors, dtype=float))
    n = priors.shape[0]
    w = window + 1
    mean_g = priors @ table                       # (N, W): E[g_m(x_j)] per tap
    var_g = np.maximum(0.0, priors @ np.square(table) - np.square(mean_g))

    def shifted(series: np.ndarray, offset: int) -> np.ndarray:
        out = np.zeros(n)
        if offset >= 0:
            out[:n - offset] = series[offset:]
        else:
            out[-offset:] = series[:n + offset]
        return out

    v = np.zeros((n, w))
    for q in range(w):
        for m in range(w):
            if m == q:
                continue
            v[:, q] += shifted(var_g[:, m], q - m)
    return v


# ---------------------------------------------------------------------------
# SISO post-distorter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LikelihoodParams:
    """Per-iteration Gaussian likelihood state.

    ``signal_table`` (A, M+1) and ``interference_mean`` (N, M+1) carry the
    separate estimates; ``means`` (N, A, M+1), when present, holds the
    jointly evaluated likelihood mean a(alpha_i) + i_bar_n per position and
    candidate symbol. ``cov_diag`` broadcasts to (N, M+1).
    """

    signal_table: np.ndarray
    interference_mean: np.ndarray
    cov_diag: np.ndarray
    means: np.ndarray | None = None

    def likelihood_means(self) -> np.ndarray:
        if self.means is not None:
            return self.means
        return self.signal_table[None, :, :] + self.interference_mean[:, None, :]


@dataclass(frozen=True)
class SisoElmPostDistorter:
    """Trained channel ELM plus the per-iteration likelihood parameters.

    The stored signal table is referenced to the ELM's all-zero probe
    response: the likelihood mean a(alpha) + i_bar sums two probe outputs,
    each of which carries the network's zero response, so that response is
    subtracted once to keep the sum an estimate of the full-window output.
    """

    channel_elm: ElmModel
    window: int
    constellation: PamConstellation
    signal_table: np.ndarray
    zero_ref: np.ndarray
    var_floor: float = VAR_FLOOR
    cond_floor: np.ndarray | None = None
    params: LikelihoodParams | None = None

    @classmethod
    def from_elm(cls, channel_elm: ElmModel, window: int,
                 constellation: PamConstellation,
                 var_floor: float = VAR_FLOOR,
                 training=None) -> "SisoElmPostDistorter":
        """Wrap a trained channel ELM.

        When the (x', y') ``training`` pair is given, the per-coordinate
        conditional residual variance measured on it (noise plus model
        error, the symbols being known exactly) becomes a lower bound for
        the data-estimated covariance; without it the bound degrades to
        ``var_floor``.
        """
        if not channel_elm.trained:
            raise ValueError("channel ELM must be trained")
        if channel_elm.input_dim != 2 * window + 1:
            raise ValueError("channel ELM input width does not match the window")
        zero = zero_reference(channel_elm)
        cond_floor = None
        if training is not None:
            cond_floor = training_residual_variance(channel_elm, *training, window)
            table = averaged_tap_responses(channel_elm, constellation,
                                           training[0])
        else:
            table = estimate_signal_table(channel_elm, constellation) - zero
        return cls(channel_elm, window, constellation, table, zero, var_floor,
                   cond_floor)

    def prepared(self, y_windows, symbol_priors) -> "SisoElmPostDistorter":
        """Build the iteration's likelihood means and covariance diagonal.

        The means are evaluated jointly (soft-neighbor window, center swept
        over the alphabet) so every probe stays on the training manifold.
        The covariance mirrors the exact-channel decomposition: the
        training-measured conditional residual variance (noise plus model
        error) plus the prior-implied per-position interference variance
        read off the signal-table tap responses.
        """
        priors = np.atleast_2d(np.asarray(symbol_priors, dtype=float))
        soft = soft_symbol_mean(priors, self.constellation)
        i_bar = interference_means(self.channel_elm, soft)
        means = conditional_signal_means(self.channel_elm, soft,
                                         self.constellation)
        base = self.var_floor if self.cond_floor is None else self.cond_floor
        v = np.maximum(
            base + neighbor_interference_variance(self.signal_table, priors,
                                                  self.window),
            self.var_floor)
        params = LikelihoodParams(self.signal_table, i_bar, v, means=means)
        return replace(self, params=params)


def gaussian_symbol_posteriors(y_windows, symbol_priors,
                               params: LikelihoodParams) -> np.ndarray:
    """Normalized symbol posteriors under the diagonal-Gaussian likelihood."""
    y = np.asarray(y_windows, dtype=float)
    priors = np.asarray(symbol_priors, dtype=float)
    v = np.asarray(params.cov_diag, dtype=float)
    if v.ndim == 1:
        v = v[None, None, :]
    else:
        v = v[:, None, :]
    diff = y[:, None, :] - params.likelihood_means()
    loglik = -0.5 * np.sum(diff * diff / v, axis=2)
    logpost = loglik + np.log(np.maximum(priors, 1e-300))
    logpost -= logpost.max(axis=1, keepdims=True)
    post = np.exp(logpost)
    post /= post.sum(axis=1, keepdims=True)
    return post


def siso_postdistort(y_windows, a_priori, pd: SisoElmPostDistorter) -> LlrFrame:
    """Extrinsic coded-bit LLRs from the Gaussian likelihood and the priors."""
    if pd.params is None:
        raise ValueError("post-distorter not prepared for this iteration")
    la = a_priori.values if isinstance(a_priori, LlrFrame) else np.asarray(a_priori, dtype=float)
    priors = symbol_priors_from_llrs(
        la.reshape(-1, pd.constellation.bits_per_symbol), pd.constellation)
    post = gaussian_symbol_posteriors(y_windows, priors, pd.params)
    return extrinsic_bit_llrs(post, la, pd.constellation)


# ---------------------------------------------------------------------------
# Genie likelihood (true channel known; simulation-only bound)
# ---------------------------------------------------------------------------

def genie_likelihood_params(channel: MemoryPolynomialModel, symbol_priors,
                            noise_variance: float,
                            constellation: PamConstellation,
                            window: int) -> LikelihoodParams:
    """Exact likelihood parameters from the true memory polynomial.

    Interference means and variances are the analytic moments of the
    polynomial's tap contributions under the per-symbol priors (independent
    symbols, out-of-frame symbols zero); V = V_i + sigma^2 I with the
    diagonal approximation.
    """
    priors = np.asarray(symbol_priors, dtype=float)
    n = priors.shape[0]
    w = window + 1
    k_max = channel.order
    coeffs = channel.coefficients            # (K, M_ch+1)
    m_ch = channel.memory
    levels = constellation.levels

    # Signal table: a(alpha)[q] = sum_k a[k, q] alpha^k (zero for q > M_ch).
    powers = levels[:, None] ** np.arange(1, k_max + 1)      # (A, K)
    table = np.zeros((levels.size, w))
    for q in range(min(w, m_ch + 1)):
        table[:, q] = powers @ coeffs[:, q]

    # Raw symbol moments per position, orders 1..2K; zero outside the frame.
    moments = np.zeros((2 * k_max + 1, n))
    for k in range(1, 2 * k_max + 1):
        moments[k] = priors @ levels ** k

    # Mean and variance of each tap contribution g_m(x_j) = sum_k a[k,m] x_j^k.
    tap_mean = np.zeros((m_ch + 1, n))
    tap_var = np.zeros((m_ch + 1, n))
    for m in range(m_ch + 1):
        a = coeffs[:, m]
        mean = a @ moments[1:k_max + 1]
        second = np.zeros(n)
        for k1 in range(1, k_max + 1):
            for k2 in range(1, k_max + 1):
                second += a[k1 - 1] * a[k2 - 1] * moments[k1 + k2]
        tap_mean[m] = mean
        tap_var[m] = np.maximum(0.0, second - mean * mean)

    def shifted(series: np.ndarray, offset: int) -> np.ndarray:
        """series[pos + offset] with zeros outside the frame."""
        out = np.zeros(n)
        if offset >= 0:
            out[:n - offset] = series[offset:]
        else:
            out[-offset:] = series[:n + offset]
        return out

    i_bar = np.zeros((n, w))
    v = np.full((n, w), float(noise_variance))
    for q in range(w):
        for m in range(m_ch + 1):
            if m == q:
                continue
            i_bar[:, q] += shifted(tap_mean[m], q - m)
            v[:, q] += shifted(tap_var[m], q - m)
    return LikelihoodParams(table, i_bar, v)
