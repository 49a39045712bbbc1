"""Forward models of the LED nonlinearity with memory, plus AWGN.

Two model families: a general memory polynomial, and the Hammerstein form
(static polynomial followed by a short FIR) used as the experiment default.
Symbols before the start of a frame are taken to be zero (cold start).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


def _shift(x: np.ndarray, m: int) -> np.ndarray:
    """x delayed by m samples, zero-filled at the head."""
    if m == 0:
        return x
    out = np.zeros_like(x)
    out[m:] = x[:-m]
    return out


@dataclass(frozen=True)
class MemoryPolynomialModel:
    """Output is a polynomial in the current and past inputs, one polynomial
    per delay tap: z_n = sum_k sum_m a[k, m] x_{n-m}^k.

    ``coefficients`` has shape (order, memory + 1); row k-1 holds the
    coefficients of power k across taps m = 0..memory.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coefficients, dtype=float))
        if c.size == 0 or not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be a non-empty finite matrix")
        object.__setattr__(self, "coefficients", c)

    @property
    def order(self) -> int:
        return self.coefficients.shape[0]

    @property
    def memory(self) -> int:
        return self.coefficients.shape[1] - 1


def mp_apply(model: MemoryPolynomialModel, x) -> np.ndarray:
    """Run a symbol sequence through the memory polynomial."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("input sequence is empty")
    z = np.zeros_like(x)
    for m in range(model.memory + 1):
        xm = _shift(x, m)
        p = np.ones_like(x)
        for k in range(1, model.order + 1):
            p = p * xm
            z = z + model.coefficients[k - 1, m] * p
    return z


@dataclass(frozen=True)
class HammersteinModel:
    """Static polynomial block followed by an LTI FIR block.

    ``static_coeffs[k-1]`` multiplies x^k; ``taps[j-1]`` is the FIR weight of
    lag j (lag 0 is implicitly 1).
    """

    static_coeffs: np.ndarray
    taps: np.ndarray = field(default_factory=lambda: np.array([0.15, 0.05]))

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.static_coeffs, dtype=float))
        taps = np.atleast_1d(np.asarray(self.taps, dtype=float))
        if not np.any(a != 0.0):
            raise ValueError("static polynomial needs a nonzero coefficient")
        object.__setattr__(self, "static_coeffs", a)
        object.__setattr__(self, "taps", taps)

    def expand(self) -> MemoryPolynomialModel:
        """Equivalent memory polynomial with a[k, m] = a_k * rho_m (rho_0 = 1)."""
        rho = np.concatenate([[1.0], self.taps])
        return MemoryPolynomialModel(np.outer(self.static_coeffs, rho))


def hammerstein_apply(model: HammersteinModel, x) -> np.ndarray:
    """Static polynomial per sample, then the FIR combination of its output."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("input sequence is empty")
    v = np.zeros_like(x)
    p = np.ones_like(x)
    for k in range(1, model.static_coeffs.size + 1):
        p = p * x
        v = v + model.static_coeffs[k - 1] * p
    z = v.copy()
    for j, rho in enumerate(model.taps, start=1):
        z = z + rho * _shift(v, j)
    return z


@dataclass(frozen=True)
class LedCurve:
    """Static drive->intensity curve: power series with hard clamps.

    The drive is clamped to [clip_lo, clip_hi] (turn-on and saturation)
    before the polynomial is evaluated.
    """

    coefficients: np.ndarray
    clip_lo: float
    clip_hi: float

    def __post_init__(self):
        if not self.clip_lo < self.clip_hi:
            raise ValueError("clip bounds must satisfy lo < hi")
        object.__setattr__(
            self, "coefficients",
            np.atleast_1d(np.asarray(self.coefficients, dtype=float)))


def static_led_curve(drive, curve: LedCurve):
    """Evaluate the clamped static curve on a scalar or an array of drives."""
    d = np.clip(np.asarray(drive, dtype=float), curve.clip_lo, curve.clip_hi)
    out = np.zeros_like(d)
    p = np.ones_like(d)
    for c in curve.coefficients:
        p = p * d
        out = out + c * p
    return float(out) if np.isscalar(drive) else out


def default_led_curve() -> LedCurve:
    """Shipped curve; coefficients live in data/led_curve.json, not code."""
    doc = json.loads(
        resources.files("ledcomm").joinpath("data/led_curve.json").read_text())
    return LedCurve(np.asarray(doc["coefficients"], dtype=float),
                    doc["clip_lo"], doc["clip_hi"])


def default_hammerstein() -> HammersteinModel:
    """Experiment default: shipped static curve plus taps (0.15, 0.05)."""
    return HammersteinModel(default_led_curve().coefficients,
                            np.array([0.15, 0.05]))


@dataclass(frozen=True)
class NoisySignal:
    samples: np.ndarray
    noise_variance: float

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise variance must be non-negative")
        object.__setattr__(self, "samples",
                           np.asarray(self.samples, dtype=float))


def add_awgn(z, snr_db: float, seed) -> NoisySignal:
    """Add white Gaussian noise at the given SNR = mean(z^2) / sigma^2."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise ValueError("input sequence is empty")
    power = float(np.mean(np.square(z)))
    if power == 0.0:
        raise ValueError("all-zero signal: SNR is undefined")
    sigma2 = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, np.sqrt(sigma2), size=z.shape)
    return NoisySignal(z + noise, sigma2)


def channel_from_config(spec: dict):
    """Build a channel model from an experiment-config dictionary.

    ``kind`` selects 'hammerstein' (default coefficients from the shipped
    curve), 'memory-polynomial', or 'linear' (identity, for calibration).
    Returns an object with ``.apply(x)`` and ``.expand()``.
    """
    kind = spec.get("kind", "hammerstein")
    if kind == "hammerstein":
        coeffs = spec.get("static_coeffs")
        model = HammersteinModel(
            np.asarray(coeffs, dtype=float) if coeffs is not None
            else default_led_curve().coefficients,
            np.asarray(spec.get("taps", [0.15, 0.05]), dtype=float))
        return _ChannelHandle(model, hammerstein_apply, model.expand)
    if kind == "memory-polynomial":
        model = MemoryPolynomialModel(np.asarray(spec["coefficients"], dtype=float))
        return _ChannelHandle(model, mp_apply, lambda: model)
    if kind == "linear":
        model = MemoryPolynomialModel(np.array([[1.0]]))
        return _ChannelHandle(model, mp_apply, lambda: model)
    raise ValueError(f"unknown channel kind {kind!r}")


@dataclass(frozen=True)
class _ChannelHandle:
    model: object
    _apply: callable
    _expand: callable

    def apply(self, x) -> np.ndarray:
        return self._apply(self.model, x)

    def expand(self) -> MemoryPolynomialModel:
        return self._expand()
