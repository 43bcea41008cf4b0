"""Activation-space baselines and pointwise local-geometry controls.

Activation baselines (CKA, Procrustes, CCA) compare stimulus-by-unit
response matrices directly. The pointwise controls compare per-stimulus
local metrics instead: pw-AIRM averages AIRM distances over stimuli, and
the spectral-ratio distance

    d_SR(A, B) = 1 - sqrt(lambda_min / lambda_max)

uses only the extreme generalized eigenvalues of (B, A). Two structural
consequences make d_SR a useful diagnostic foil: it is blind to uniform
gain changes (d_SR(A, cA) = 0 while AIRM sees sqrt(k)|log c|), and any
two pairs with equal relative condition number collapse to the same
value regardless of interior spectrum.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateActivations, DimMismatch, RankDeficient
from .spd import airm_distance, relative_log_eigenvalues

__all__ = [
    "ActivationMatrix",
    "load_activations_csv",
    "linear_cka",
    "rbf_cka",
    "procrustes_distance",
    "cca_r2",
    "pw_airm",
    "msa_spectral_ratio",
    "msa_pointwise",
]


@dataclass(frozen=True)
class ActivationMatrix:
    """n x m response matrix (rows = stimuli/conditions, columns = units)."""

    x: np.ndarray
    centered: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise DimMismatch(f"activations must be (n >= 2, m), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("activations contain non-finite values")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    def center(self) -> "ActivationMatrix":
        if self.centered:
            return self
        return ActivationMatrix(self.x - self.x.mean(axis=0), centered=True)


def load_activations_csv(path) -> ActivationMatrix:
    """Read an n x m matrix; a non-numeric first row is treated as a header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(io.StringIO(fh.read())))
    rows = [r for r in rows if r]
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    data = np.asarray([[float(v) for v in r] for r in rows], dtype=float)
    return ActivationMatrix(data)


def _centered(x) -> np.ndarray:
    if isinstance(x, ActivationMatrix):
        return x.center().x
    x = np.asarray(x, dtype=float)
    return x - x.mean(axis=0)


def _check_rows(xc, yc):
    if xc.shape[0] != yc.shape[0]:
        raise DimMismatch(
            f"activation matrices need equal row counts, got {xc.shape[0]} vs {yc.shape[0]}"
        )


def linear_cka(x, y) -> float:
    """||Xcᵀ Yc||_F² / (||Xcᵀ Xc||_F ||Ycᵀ Yc||_F) on column-centered data.

    Invariant to orthogonal transforms and isotropic scaling of either
    argument, and (through centering) to column-constant shifts.
    """
    xc, yc = _centered(x), _centered(y)
    _check_rows(xc, yc)
    denom = np.linalg.norm(xc.T @ xc) * np.linalg.norm(yc.T @ yc)
    if denom == 0.0:
        raise DegenerateActivations("centered activations have zero norm")
    return float(np.linalg.norm(xc.T @ yc) ** 2 / denom)


def _rbf_gram(x, bandwidth_policy) -> np.ndarray:
    sq = np.sum(x**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    if bandwidth_policy == "median":
        off = d2[~np.eye(d2.shape[0], dtype=bool)]
        positive = np.sqrt(off[off > 0])
        if positive.size == 0:
            raise DegenerateActivations("all points identical; RBF bandwidth undefined")
        sigma = float(np.median(positive))
    else:
        sigma = float(bandwidth_policy)
        if sigma <= 0:
            raise ValueError("fixed RBF bandwidth must be positive")
    return np.exp(-d2 / (2.0 * sigma**2))


def rbf_cka(x, y, bandwidth_policy="median") -> float:
    """HSIC-normalized CKA on doubly centered RBF Gram matrices.

    ``bandwidth_policy`` is either "median" (each Gram uses the median
    pairwise distance of its own point cloud) or a fixed positive sigma.
    """
    xa = x.x if isinstance(x, ActivationMatrix) else np.asarray(x, dtype=float)
    ya = y.x if isinstance(y, ActivationMatrix) else np.asarray(y, dtype=float)
    _check_rows(xa, ya)
    n = xa.shape[0]
    h = np.eye(n) - np.ones((n, n)) / n
    k = h @ _rbf_gram(xa, bandwidth_policy) @ h
    l = h @ _rbf_gram(ya, bandwidth_policy) @ h
    denom = np.linalg.norm(k) * np.linalg.norm(l)
    if denom == 0.0:
        raise DegenerateActivations("centered Gram matrices have zero norm")
    return float(np.sum(k * l) / denom)


def procrustes_distance(x, y) -> float:
    """Orthogonal Procrustes distance between unit-Frobenius centered clouds.

    min over orthogonal Q of ||Xc/||Xc|| - Yc Q /||Yc||||_F, computed via
    the nuclear norm of the cross-covariance; scale-free by construction.
    """
    xc, yc = _centered(x), _centered(y)
    _check_rows(xc, yc)
    nx, ny = np.linalg.norm(xc), np.linalg.norm(yc)
    if nx == 0.0 or ny == 0.0:
        raise DegenerateActivations("centered activations have zero norm")
    xt, yt = xc / nx, yc / ny
    nuclear = float(np.sum(np.linalg.svd(yt.T @ xt, compute_uv=False)))
    return math.sqrt(max(0.0, 2.0 - 2.0 * nuclear))


def cca_r2(x, y, regularization: float = 1e-6) -> float:
    """Mean squared canonical correlation between two activation sets.

    Within-set covariances get a trace-scaled ridge
    eps * (Tr(S)/p) * I before whitening; with ``regularization=0`` a
    rank-deficient set raises instead of being silently repaired.
    """
    xc, yc = _centered(x), _centered(y)
    _check_rows(xc, yc)
    n = xc.shape[0]

    def whitener(c, p):
        ridge = regularization * (np.trace(c) / p)
        if regularization == 0.0:
            vals = np.linalg.eigvalsh(c)
            if vals[0] <= 1e-12 * max(vals[-1], 1e-300):
                raise RankDeficient(
                    "within-set covariance is rank-deficient; pass regularization > 0"
                )
        creg = c + ridge * np.eye(p)
        vals, vecs = np.linalg.eigh(creg)
        if vals[0] <= 0:
            raise RankDeficient("within-set covariance not positive definite")
        return (vecs / np.sqrt(vals)) @ vecs.T

    sxx = xc.T @ xc / n
    syy = yc.T @ yc / n
    sxy = xc.T @ yc / n
    wx = whitener(sxx, sxx.shape[0])
    wy = whitener(syy, syy.shape[0])
    rho = np.linalg.svd(wx @ sxy @ wy, compute_uv=False)
    rho = np.clip(rho, 0.0, 1.0)
    m = min(xc.shape[1], yc.shape[1])
    return float(np.mean(rho[:m] ** 2))


def pw_airm(metric_sequence_a, metric_sequence_b) -> float:
    """Mean over stimuli of per-stimulus AIRM distances (lifted metrics)."""
    seq_a, seq_b = list(metric_sequence_a), list(metric_sequence_b)
    if len(seq_a) != len(seq_b):
        raise DimMismatch(f"sequence lengths differ: {len(seq_a)} vs {len(seq_b)}")
    if not seq_a:
        raise DimMismatch("sequences must be non-empty")
    return float(np.mean([airm_distance(a, b) for a, b in zip(seq_a, seq_b)]))


def msa_spectral_ratio(a, b) -> float:
    """Spectral-ratio distance 1 - sqrt(lambda_min/lambda_max) in [0, 1).

    lambda_min/max are the extreme generalized eigenvalues of (B, A);
    equal to zero whenever B = cA for any c > 0 (conformal blindness).
    """
    logs = relative_log_eigenvalues(a, b)
    ratio = math.exp(float(logs[0] - logs[-1]))
    return 1.0 - math.sqrt(ratio)


def msa_pointwise(metric_sequence_a, metric_sequence_b) -> float:
    """Mean of per-stimulus spectral-ratio distances."""
    seq_a, seq_b = list(metric_sequence_a), list(metric_sequence_b)
    if len(seq_a) != len(seq_b):
        raise DimMismatch(f"sequence lengths differ: {len(seq_a)} vs {len(seq_b)}")
    if not seq_a:
        raise DimMismatch("sequences must be non-empty")
    return float(np.mean([msa_spectral_ratio(a, b) for a, b in zip(seq_a, seq_b)]))
