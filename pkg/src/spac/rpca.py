"""Robust PCA (nuclear norm + weighted L1) by inexact augmented Lagrange multipliers."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidInputError

RHO = 1.5
MU_SCALE = 1.25
MU_MAX_FACTOR = 1e7


@dataclass
class RpcaResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    iterations: int
    converged: bool
    final_residual: float
    residuals: list = field(default_factory=list, repr=False)

    def write_trace(self, path) -> None:
        """Dump per-iteration relative residuals as CSV."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(self.residuals, 1):
                w.writerow([i, repr(r)])


def soft_threshold(matrix, tau: float) -> np.ndarray:
    if tau < 0:
        raise InvalidInputError(f"tau must be non-negative, got {tau}")
    x = np.asarray(matrix, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def singular_value_threshold(matrix, tau: float) -> np.ndarray:
    """Shrink every singular value by ``tau`` (proximal map of tau * nuclear norm)."""
    if tau < 0:
        raise InvalidInputError(f"tau must be non-negative, got {tau}")
    x = np.asarray(matrix, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    r = int(np.count_nonzero(s))
    return (u[:, :r] * s[:r]) @ vt[:r]


def nuclear_l1_objective(low_rank, sparse, lam: float) -> float:
    return float(np.linalg.svd(low_rank, compute_uv=False).sum() + lam * np.abs(sparse).sum())


def rpca_alm(psi, lam: float, tol: float = 1e-7, max_iter: int = 500, trace: bool = False) -> RpcaResult:
    """Split ``psi`` into low-rank plus sparse parts.

    Minimises ||L||_* + lam * ||R||_1 subject to psi = L + R.  The penalty starts
    at 1.25 / sigma_max(psi) and grows by 1.5 per iteration up to 1e7 times its
    initial value; iteration stops once ||psi - L - R||_F / ||psi||_F <= tol.
    If ``max_iter`` runs out the iterate with the smallest residual is returned
    with ``converged=False``.
    """
    psi = np.asarray(psi, dtype=np.float64)
    if psi.ndim != 2:
        raise InvalidInputError("psi must be a matrix")
    if not np.all(np.isfinite(psi)):
        raise InvalidInputError("psi contains non-finite entries")
    if lam <= 0:
        raise InvalidInputError("lambda must be positive")

    norm_fro = np.linalg.norm(psi)
    if norm_fro == 0.0:
        z = np.zeros_like(psi)
        return RpcaResult(z, z.copy(), 0, True, 0.0)

    spec = np.linalg.norm(psi, 2)
    dual = psi / max(spec, np.abs(psi).max() / lam)
    mu = MU_SCALE / spec
    mu_max = mu * MU_MAX_FACTOR
    low = np.zeros_like(psi)
    sparse = np.zeros_like(psi)

    best = (np.inf, low, sparse, 0)
    history = []
    for it in range(1, max_iter + 1):
        sparse = soft_threshold(psi - low + dual / mu, lam / mu)
        low = singular_value_threshold(psi - sparse + dual / mu, 1.0 / mu)
        gap = psi - low - sparse
        res = float(np.linalg.norm(gap) / norm_fro)
        if trace:
            history.append(res)
        if res < best[0]:
            best = (res, low, sparse, it)
        if res <= tol:
            return RpcaResult(low, sparse, it, True, res, history)
        dual = dual + mu * gap
        mu = min(mu * RHO, mu_max)
    res, low, sparse, _ = best
    return RpcaResult(low, sparse, max_iter, False, res, history)
