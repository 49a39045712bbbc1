"""Dense linear-algebra kernels shared by every training path.

All solvers are thin, contract-checked wrappers around LAPACK (via numpy):
SVD, Moore-Penrose pseudo-inverse, minimum-norm least squares, and the
total-least-squares solve used for errors-in-variables training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Truncation threshold for pinv is rel_tol * sigma_max with this default
# rel_tol = 1e-12 * max(rows, cols).
SV_RELTOL_BASE = 1e-12

# theta22 counts as singular when its smallest singular value falls below
# this fraction of its largest.
TLS_SINGULAR_RELTOL = 1e-10


class SvdConvergenceError(RuntimeError):
    """SVD iteration failed to converge; no result is usable."""


class TlsNoSolutionError(RuntimeError):
    """The TLS solution does not exist (trailing block is singular)."""


@dataclass(frozen=True)
class SvdResult:
    """Economy SVD ``a = U @ diag(s) @ V.T``.

    ``left_vectors`` (m, r) and ``right_vectors`` (n, r) have orthonormal
    columns; ``singular_values`` (r,) are non-negative and non-increasing.
    """

    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def _as_matrix(a, name: str = "a") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def svd(a) -> SvdResult:
    """Economy SVD with explicit failure on non-convergence."""
    a = _as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge for shape {a.shape}") from exc
    return SvdResult(u, s, vt.T)


def pinv(a, rel_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via truncated SVD.

    Singular values above ``rel_tol * sigma_max`` are inverted, the rest
    zeroed. ``rel_tol`` defaults to ``1e-12 * max(rows, cols)``.
    """
    a = _as_matrix(a)
    if rel_tol is None:
        rel_tol = SV_RELTOL_BASE * max(a.shape)
    elif rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    f = svd(a)
    s = f.singular_values
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    cutoff = rel_tol * s[0]
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (f.right_vectors * inv) @ f.left_vectors.T


def solve_ls(a, y) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a @ x = y`` (``pinv(a) @ y``)."""
    a = _as_matrix(a)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != a.shape[0]:
        raise ValueError(f"row mismatch: a has {a.shape[0]} rows, y has {y.shape[0]}")
    return pinv(a) @ y


def tls_solve(h, y, singular_rel_tol: float = TLS_SINGULAR_RELTOL) -> np.ndarray:
    """Total-least-squares solve of ``(h + dH) @ beta = y + dY``.

    Takes the SVD of the concatenation ``[h y]``, partitions the right
    singular-vector matrix into blocks sized by the column counts of ``h``
    and ``y``, and returns ``-theta12 @ inv(theta22)``.

    Raises :class:`TlsNoSolutionError` when ``theta22`` is singular within
    tolerance.  Accepts 1-D ``y`` and then returns a 1-D solution.
    """
    h = _as_matrix(h, "h")
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    y = _as_matrix(y, "y")
    if y.shape[0] != h.shape[0]:
        raise ValueError(f"row mismatch: h has {h.shape[0]} rows, y has {y.shape[0]}")
    n_in = h.shape[1]
    n_out = y.shape[1]

    c = np.hstack([h, y])
    try:
        # Full matrices so the trailing right singular vectors exist even for
        # wide problems.
        _, s_c, vt = np.linalg.svd(c, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge for shape {c.shape}") from exc

    # Classical existence condition: the smallest singular value of h must
    # strictly dominate singular value n_in+1 of [h y]; otherwise the
    # trailing block of the right singular vectors is singular (or nearly
    # so) and the solution does not exist or blows up.
    s_h = np.linalg.svd(h, compute_uv=False)
    s_next = s_c[n_in] if n_in < s_c.size else 0.0
    if s_h.size == 0 or s_h[-1] ** 2 <= s_next ** 2 + 1e-12 * s_c[0] ** 2:
        raise TlsNoSolutionError(
            "TLS solution does not exist: smallest singular value of h "
            f"({0.0 if s_h.size == 0 else s_h[-1]:.3e}) does not dominate "
            f"singular value {n_in + 1} of [h y] ({s_next:.3e})")

    theta = vt.T
    theta12 = theta[:n_in, n_in:]
    theta22 = theta[n_in:, n_in:]

    s22 = np.linalg.svd(theta22, compute_uv=False)
    if s22[0] == 0.0 or s22[-1] < singular_rel_tol * s22[0]:
        raise TlsNoSolutionError(
            "TLS solution does not exist: trailing singular-vector block is "
            f"singular (sv ratio {0.0 if s22[0] == 0.0 else s22[-1] / s22[0]:.3e})"
        )
    beta = -theta12 @ np.linalg.inv(theta22)
    return beta[:, 0] if squeeze else beta
