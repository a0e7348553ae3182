"""Sparse range recovery: l1-regularised least squares (BPDN)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RecoveryConfig:
    lam: float = 0.0
    max_iters: int = 2000
    rel_tol: float = 1e-6
    support_threshold_frac: float = 0.1
    restart_every: int = 100
    # least-squares refit on the pruned support
    debias: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if not 0 < self.support_threshold_frac < 1:
            raise ValueError("support_threshold_frac must lie in (0, 1)")


@dataclass
class SparseEstimate:
    coefficients: np.ndarray
    support: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool = True
    attempted: bool = True
    lam: float = 0.0
    flags: dict = field(default_factory=dict)


def extract_support(coefficients: np.ndarray, frac: float) -> np.ndarray:
    """Indices with ``|c_n| > frac * max|c|``; empty when all zero."""
    mag = np.abs(np.asarray(coefficients))
    if mag.size == 0 or not np.all(np.isfinite(mag)):
        raise ValueError("coefficients must be finite")
    peak = mag.max()
    if peak == 0:
        return np.array([], dtype=int)
    return np.flatnonzero(mag > frac * peak)


def default_step(A: np.ndarray) -> float:
    """Proximal-gradient step ``1 / (1.1 ||A||^2)``."""
    L = op_norm_sq(A)
    return 1.0 / (1.1 * L) if L > 0 else 1.0


def op_norm_sq(A: np.ndarray, iters: int = 100) -> float:
    """Power-iteration estimate of ``||A||_2^2`` from a fixed start vector."""
    v = np.ones(A.shape[1], dtype=complex) / math.sqrt(A.shape[1])
    est = 0.0
    for _ in range(iters):
        w = A.conj().T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(nrm - est) <= 1e-10 * nrm:
            break
        est = nrm
    return float(nrm)


def _soft(z: np.ndarray, thresh: np.ndarray) -> np.ndarray:
    mag = np.abs(z)
    scale = np.maximum(0.0, 1.0 - thresh / np.maximum(mag, 1e-300))
    return z * scale


def _objective(A, X, S, lam):
    R = S - A @ X
    return 0.5 * np.sum(np.abs(R) ** 2, axis=0) + lam * np.sum(np.abs(X), axis=0)


def _mfista(A, S, lam, cfg: RecoveryConfig, X0=None, step=None, trace=None):
    """Monotone FISTA over the columns of ``S``; each column stops on its own.

    Returns (X, iterations, converged). ``trace`` collects per-iteration
    objective rows when given a list.
    """
    N, J = A.shape[1], S.shape[1]
    if step is None:
        step = default_step(A)
    X = np.zeros((N, J), dtype=complex) if X0 is None else X0.astype(complex, copy=True)
    Y = X.copy()
    t = np.ones(J)
    F = _objective(A, X, S, lam)
    iters = np.zeros(J, dtype=int)
    done = np.zeros(J, dtype=bool)
    AH = A.conj().T
    for k in range(1, cfg.max_iters + 1):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        Ya, Sa, la = Y[:, act], S[:, act], lam[act]
        Z = _soft(Ya - step * (AH @ (A @ Ya - Sa)), step * la)
        Fz = _objective(A, Z, Sa, la)
        Xa = X[:, act]
        better = Fz <= F[act]
        Xn = np.where(better, Z, Xa)
        Fn = np.where(better, Fz, F[act])
        ta = t[act]
        tn = (1 + np.sqrt(1 + 4 * ta**2)) / 2
        Yn = Xn + (ta / tn) * (Z - Xn) + ((ta - 1) / tn) * (Xn - Xa)
        if k % cfg.restart_every == 0:
            tn = np.ones_like(tn)
            Yn = Xn.copy()
        dx = np.linalg.norm(Z - Ya, axis=0)
        scale = np.maximum(np.linalg.norm(Z, axis=0), 1e-300)
        conv = dx <= cfg.rel_tol * scale
        conv |= (np.linalg.norm(Z, axis=0) == 0) & (np.linalg.norm(Ya, axis=0) == 0)
        X[:, act], Y[:, act], t[act], F[act] = Xn, Yn, tn, Fn
        iters[act] = k
        done[act] = conv
        if trace is not None:
            trace.append(F.copy())
    return X, iters, done


def _check(A, S):
    A = np.asarray(A)
    S = np.asarray(S)
    if A.ndim != 2 or S.shape[0] != A.shape[0]:
        raise ValueError(f"observations of length {S.shape[0]} do not match a {A.shape} matrix")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(S))):
        raise ValueError("non-finite input")
    return A, S


def bpdn_solve_batch(A: np.ndarray, S: np.ndarray, config: RecoveryConfig, lam=None,
                     step: float | None = None) -> list[SparseEstimate]:
    """Solve ``min 0.5||s - A c||^2 + lam ||c||_1`` for every column of ``S``.

    ``lam`` overrides ``config.lam`` and may be per column. ``step`` skips the
    power iteration when the caller already knows it. Columns that hit
    ``max_iters`` are returned with ``converged=False``.
    """
    A, S = _check(A, S)
    if S.ndim == 1:
        S = S[:, None]
    J = S.shape[1]
    lam = np.broadcast_to(np.asarray(config.lam if lam is None else lam, dtype=float), (J,)).copy()
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    X, iters, conv = _mfista(A, S.astype(complex), lam, config, step=step)
    out = []
    for j in range(J):
        c = X[:, j]
        support = extract_support(c, config.support_threshold_frac)
        if config.debias:
            c = _debias(A, S[:, j], support)
        out.append(SparseEstimate(
            coefficients=c,
            support=support,
            residual_norm=float(np.linalg.norm(S[:, j] - A @ c)),
            iterations=int(iters[j]), converged=bool(conv[j]), lam=float(lam[j])))
    return out


def _debias(A, s, support):
    c = np.zeros(A.shape[1], dtype=complex)
    if 0 < support.size <= A.shape[0]:
        c[support] = np.linalg.lstsq(A[:, support], s, rcond=None)[0]
    return c


def bpdn_solve(A: np.ndarray, s: np.ndarray, config: RecoveryConfig, lam: float | None = None) -> SparseEstimate:
    """Single-observation BPDN; see :func:`bpdn_solve_batch`."""
    s = np.asarray(s)
    if s.ndim != 1:
        raise ValueError("use bpdn_solve_batch for multiple observations")
    return bpdn_solve_batch(A, s, config, lam)[0]


def l1_eq_solve(A: np.ndarray, s: np.ndarray, config: RecoveryConfig | None = None,
                stages: int = 12, debias: bool = True) -> SparseEstimate:
    """Noise-free recovery by continuation down to ``1e-6 * ||A^H s||_inf``.

    The final iterate is refit by least squares on its support unless
    ``debias`` is false; the l1 path alone converges slowly when
    neighbouring columns are strongly coherent.
    """
    config = config or RecoveryConfig()
    A, s = _check(A, np.asarray(s))
    N = A.shape[1]
    corr = np.max(np.abs(A.conj().T @ s)) if s.size else 0.0
    if corr == 0:
        return SparseEstimate(np.zeros(N, dtype=complex), np.array([], dtype=int), float(np.linalg.norm(s)), 0)
    S = s.astype(complex)[:, None]
    lams = corr * np.geomspace(0.5, 1e-6, stages)
    L = op_norm_sq(A)
    step = 1.0 / (1.1 * L)
    X = None
    total, conv = 0, np.array([True])
    for lam in lams:
        X, it, conv = _mfista(A, S, np.array([lam]), config, X0=X, step=step)
        total += int(it[0])
    c = X[:, 0]
    support = extract_support(c, config.support_threshold_frac)
    if debias:
        c = _debias(A, s, support)
    return SparseEstimate(c, support,
                          float(np.linalg.norm(s - A @ c)), total, bool(conv[0]), lam=float(lams[-1]))


def bpdn_objective(A, s, c, lam) -> float:
    return float(0.5 * np.linalg.norm(s - A @ c) ** 2 + lam * np.sum(np.abs(c)))
