"""Extreme learning machine: random fixed hidden layer, trained output weights.

The hidden layer (input weights and biases) is drawn once from a seeded
uniform distribution on [-1, 1] and never tuned; only the linear output
weights are fitted, by least squares or total least squares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .numerics import pinv, tls_solve

ACTIVATIONS = {
    "sine": np.sin,
    "sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
    "radial-basis": lambda x: np.exp(-np.square(x)),
}


class NotTrainedError(RuntimeError):
    """Prediction requested from a model whose output weights are unset."""


@dataclass(frozen=True)
class ElmModel:
    """Single-hidden-layer network with frozen random hidden nodes.

    ``input_weights`` is (hidden_count, input_dim), ``biases`` is
    (hidden_count,), ``output_weights`` is (hidden_count, output_dim) once
    trained, None before.
    """

    input_dim: int
    output_dim: int
    hidden_count: int
    input_weights: np.ndarray
    biases: np.ndarray
    activation: str = "sine"
    output_weights: np.ndarray | None = None
    seed: int | None = None

    @property
    def trained(self) -> bool:
        return self.output_weights is not None


def elm_init(input_dim: int, output_dim: int, hidden_count: int, seed,
             activation: str = "sine") -> ElmModel:
    """Draw hidden weights and biases i.i.d. uniform on [-1, 1]."""
    if min(input_dim, output_dim, hidden_count) < 1:
        raise ValueError("dimensions must all be >= 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-1.0, 1.0, size=(hidden_count, input_dim))
    biases = rng.uniform(-1.0, 1.0, size=hidden_count)
    return ElmModel(input_dim, output_dim, hidden_count, weights, biases,
                    activation=activation,
                    seed=seed if isinstance(seed, int) else None)


def hidden_matrix(model: ElmModel, inputs) -> np.ndarray:
    """Hidden-layer response, entry (j, i) = g(w_i . s_j + b_i)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != model.input_dim:
        raise ValueError(
            f"inputs have width {inputs.shape[1]}, model expects {model.input_dim}")
    g = ACTIVATIONS[model.activation]
    return g(inputs @ model.input_weights.T + model.biases)


def _check_training_set(model: ElmModel, inputs, targets):
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs and targets disagree on sample count")
    if inputs.shape[0] < 1:
        raise ValueError("training set is empty")
    if targets.shape[1] != model.output_dim:
        raise ValueError(
            f"targets have width {targets.shape[1]}, model expects {model.output_dim}")
    return inputs, targets


def elm_train_ls(model: ElmModel, inputs, targets, ridge: float = 0.0,
                 sv_rel_tol: float | None = None) -> ElmModel:
    """Fit output weights by least squares, beta = pinv(H) @ Y.

    ``ridge`` adds optional Tikhonov damping (off by default);
    ``sv_rel_tol`` overrides the pseudo-inverse truncation threshold.
    """
    inputs, targets = _check_training_set(model, inputs, targets)
    h = hidden_matrix(model, inputs)
    if ridge > 0.0:
        gram = h.T @ h + ridge * np.eye(model.hidden_count)
        beta = np.linalg.solve(gram, h.T @ targets)
    else:
        beta = pinv(h, rel_tol=sv_rel_tol) @ targets
    return replace(model, output_weights=beta)


def elm_train_tls(model: ElmModel, inputs, targets) -> ElmModel:
    """Fit output weights by total least squares on [H Y].

    Propagates :class:`ledcomm.numerics.TlsNoSolutionError` when the
    solution does not exist.
    """
    inputs, targets = _check_training_set(model, inputs, targets)
    h = hidden_matrix(model, inputs)
    beta = tls_solve(h, targets)
    return replace(model, output_weights=beta)


def elm_predict(model: ElmModel, inputs) -> np.ndarray:
    """Network output for one input vector (returns (Q,)) or a batch (N, Q)."""
    if not model.trained:
        raise NotTrainedError("model has no output weights; train it first")
    single = np.asarray(inputs).ndim == 1
    out = hidden_matrix(model, inputs) @ model.output_weights
    return out[0] if single else out


def save_model(model: ElmModel, path) -> None:
    """Write a self-describing JSON document with full-precision weights."""
    doc = {
        "format": "ledcomm-elm-v1",
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "hidden_count": model.hidden_count,
        "activation": model.activation,
        "seed": model.seed,
        "input_weights": model.input_weights.tolist(),
        "biases": model.biases.tolist(),
        "output_weights": None if model.output_weights is None
        else model.output_weights.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path) -> ElmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "ledcomm-elm-v1":
        raise ValueError(f"unrecognized model document {path}")
    beta = doc["output_weights"]
    return ElmModel(
        input_dim=doc["input_dim"],
        output_dim=doc["output_dim"],
        hidden_count=doc["hidden_count"],
        input_weights=np.asarray(doc["input_weights"], dtype=float),
        biases=np.asarray(doc["biases"], dtype=float),
        activation=doc["activation"],
        output_weights=None if beta is None else np.asarray(beta, dtype=float),
        seed=doc.get("seed"),
    )
