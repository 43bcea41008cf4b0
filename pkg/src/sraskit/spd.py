"""Symmetric / SPD matrix types, manifold distances, and task-control certificates.

The space SPD(k) = {A : A = Aᵀ, A ≻ 0} carries the affine-invariant
Riemannian metric

    d_AIRM(A, B) = ||log(A^{-1/2} B A^{-1/2})||_F,

whose operator-norm analogue

    d_inf(A, B) = ||log(A^{-1/2} B A^{-1/2})||_op

is the smallest t >= 0 with e^{-t} A <= B <= e^{t} A in the Loewner order.
Both obey d_inf <= d_AIRM <= sqrt(k) * d_inf.

From d = d_AIRM(A, B) one gets uniform multiplicative control over every
PSD trace probe:

    e^{-d} Tr(CA) <= Tr(CB) <= e^{d} Tr(CA)    for all C >= 0,

packaged here as a :class:`Certificate` together with the
dimension-normalized similarity score S = exp(-d / sqrt(k)).

Positive-semidefinite summaries enter the manifold through the
trace-scaled lift A + eps * (Tr A / k) * I (:func:`spd_lift`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    InvalidMatrix,
    InvalidTaskValue,
    NotPSD,
    NotPositiveDefinite,
    ZeroSummary,
)

__all__ = [
    "SymMatrix",
    "SpdMatrix",
    "EigenDecomposition",
    "Certificate",
    "sym_eigendecompose",
    "matrix_log",
    "matrix_sqrt",
    "matrix_inv_sqrt",
    "spd_lift",
    "airm_distance",
    "dinf_distance",
    "log_euclidean_distance",
    "relative_log_eigenvalues",
    "sras_score",
    "sras_similarity",
    "certificate_bounds",
    "dinf_variational_check",
    "DEFAULT_EPS_REG",
]

# Default regularization of the trace-scaled lift.
DEFAULT_EPS_REG = 1e-4

# Relative scale of the positive-definiteness tolerance: tol = 1e-12 * trace / k.
_PD_TOL_SCALE = 1e-12


def _as_square_array(entries, name: str = "matrix") -> np.ndarray:
    a = np.asarray(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidMatrix(f"{name} must be a square 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix(f"{name} contains non-finite entries")
    return a


def _pd_tolerance(trace: float, k: int) -> float:
    return _PD_TOL_SCALE * trace / k


class SymMatrix:
    """Dense k x k symmetric matrix.

    The constructor symmetrizes via (A + Aᵀ)/2, so ``entries`` is exactly
    symmetric afterwards; the stored array is read-only.
    """

    __slots__ = ("entries",)

    def __init__(self, entries):
        a = _as_square_array(entries)
        sym = (a + a.T) / 2.0
        sym.setflags(write=False)
        object.__setattr__(self, "entries", sym)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.entries.astype(dtype)
        return self.entries

    def __eq__(self, other) -> bool:
        return isinstance(other, SymMatrix) and np.array_equal(
            self.entries, other.entries
        )

    def __repr__(self) -> str:
        return f"{type(self).__name__}(k={self.k})"

    def to_json(self) -> str:
        """Serialize as {"k": int, "entries": row-major array} (lossless)."""
        return json.dumps(
            {"k": self.k, "entries": [float(x) for x in self.entries.ravel()]}
        )

    @classmethod
    def from_json(cls, text: str) -> "SymMatrix":
        obj = json.loads(text)
        k = int(obj["k"])
        entries = np.asarray(obj["entries"], dtype=float).reshape(k, k)
        return cls(entries)

    def to_csv(self) -> str:
        """k rows of k comma-separated doubles; repr round-trips all 17 digits."""
        return "\n".join(",".join(repr(float(x)) for x in row) for row in self.entries) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SymMatrix":
        rows = [
            [float(cell) for cell in line.split(",")]
            for line in text.strip().splitlines()
            if line.strip()
        ]
        return cls(np.asarray(rows, dtype=float))


class SpdMatrix(SymMatrix):
    """Symmetric strictly positive-definite matrix.

    Positive-definiteness is checked at construction against
    tol = 1e-12 * trace / k; near-singular inputs are refused rather than
    regularized (regularization is the caller's explicit lift step).
    """

    def __init__(self, entries):
        super().__init__(entries)
        tr = self.trace
        if tr <= 0.0:
            raise NotPositiveDefinite("trace must be positive for an SPD matrix")
        lam_min = float(np.linalg.eigvalsh(self.entries)[0])
        if lam_min <= _pd_tolerance(tr, self.k):
            raise NotPositiveDefinite(
                f"smallest eigenvalue {lam_min:.3e} not above PD tolerance"
            )

    @classmethod
    def from_json(cls, text: str) -> "SpdMatrix":
        return cls(SymMatrix.from_json(text).entries)

    @classmethod
    def from_csv(cls, text: str) -> "SpdMatrix":
        return cls(SymMatrix.from_csv(text).entries)


@dataclass(frozen=True)
class EigenDecomposition:
    """Spectral factorization A = V diag(eigenvalues) Vᵀ, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def _fix_eigenvector_signs(vectors: np.ndarray) -> np.ndarray:
    """Deterministic sign convention: largest-magnitude component positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigendecompose(a) -> EigenDecomposition:
    """Eigendecompose a symmetric matrix.

    Parameters
    ----------
    a : SymMatrix or (k, k) array_like
        Symmetrized before factorization.

    Returns
    -------
    EigenDecomposition
        Eigenvalues ascending; orthonormal eigenvector columns with the
        largest-magnitude component of each column positive.
    """
    m = a.entries if isinstance(a, SymMatrix) else SymMatrix(a).entries
    vals, vecs = np.linalg.eigh(m)
    vecs = _fix_eigenvector_signs(vecs)
    return EigenDecomposition(eigenvalues=vals, eigenvectors=vecs)


def _spd_entries(a, name: str = "matrix") -> np.ndarray:
    if isinstance(a, SpdMatrix):
        return a.entries
    if isinstance(a, SymMatrix):
        return SpdMatrix(a.entries).entries
    return SpdMatrix(a).entries


def _clamped_positive_spectrum(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues/vectors of an (assumed PD) matrix with residual-negativity clamp.

    Eigenvalues in [-tol, tol] are clamped to tol; anything below -tol is a
    genuine violation and raises.
    """
    vals, vecs = np.linalg.eigh(m)
    tol = max(_pd_tolerance(float(np.trace(m)), m.shape[0]), np.finfo(float).tiny)
    if vals[0] < -tol:
        raise NotPositiveDefinite(
            f"matrix has eigenvalue {vals[0]:.3e} below -tolerance"
        )
    return np.maximum(vals, tol), vecs


def _spectral_map(a, fn) -> np.ndarray:
    m = _spd_entries(a)
    vals, vecs = _clamped_positive_spectrum(m)
    out = (vecs * fn(vals)) @ vecs.T
    return (out + out.T) / 2.0


def matrix_log(a) -> SymMatrix:
    """Principal matrix logarithm of an SPD matrix."""
    return SymMatrix(_spectral_map(a, np.log))


def matrix_sqrt(a) -> SpdMatrix:
    """Principal square root of an SPD matrix."""
    return SpdMatrix(_spectral_map(a, np.sqrt))


def matrix_inv_sqrt(a) -> SpdMatrix:
    """Inverse principal square root of an SPD matrix."""
    return SpdMatrix(_spectral_map(a, lambda v: 1.0 / np.sqrt(v)))


def spd_lift(a, eps_reg: float = DEFAULT_EPS_REG) -> SpdMatrix:
    """Trace-scaled lift of a PSD operator into the SPD cone.

    Returns A + eps_reg * (Tr(A)/k) * I. Scale-equivariant: lifting c*A
    gives c times the lift of A for any c > 0.

    Raises
    ------
    ZeroSummary
        If Tr(A) <= 0.
    NotPSD
        If A has an eigenvalue below -tol (tol = 1e-12 * trace / k).
    """
    if eps_reg <= 0.0:
        raise ValueError("eps_reg must be positive")
    sym = a if isinstance(a, SymMatrix) else SymMatrix(a)
    tr = sym.trace
    if tr <= 0.0:
        raise ZeroSummary("operator trace must be positive to lift")
    lam_min = float(np.linalg.eigvalsh(sym.entries)[0])
    if lam_min < -_pd_tolerance(tr, sym.k):
        raise NotPSD(f"operator has eigenvalue {lam_min:.3e}; not PSD")
    lifted = sym.entries + eps_reg * (tr / sym.k) * np.eye(sym.k)
    return SpdMatrix(lifted)


def relative_log_eigenvalues(a, b) -> np.ndarray:
    """log-eigenvalues of A^{-1/2} B A^{-1/2}, ascending.

    The shared spectral ingredient of d_AIRM, d_inf, and the spectral-ratio
    baseline.
    """
    ae = _spd_entries(a, "A")
    be = _spd_entries(b, "B")
    if ae.shape != be.shape:
        raise DimMismatch(f"dimension mismatch: {ae.shape} vs {be.shape}")
    inv_sqrt = matrix_inv_sqrt(ae).entries
    m = inv_sqrt @ be @ inv_sqrt
    vals, _ = _clamped_positive_spectrum((m + m.T) / 2.0)
    return np.log(vals)


def airm_distance(a, b) -> float:
    """Affine-invariant Riemannian distance ||log(A^{-1/2} B A^{-1/2})||_F.

    Symmetric, zero iff A == B, and invariant under congruence
    A -> X A Xᵀ, B -> X B Xᵀ for any invertible X.
    """
    return float(np.linalg.norm(relative_log_eigenvalues(a, b)))


def dinf_distance(a, b) -> float:
    """Log-spectral operator-norm distance max_i |log lambda_i(A^{-1/2} B A^{-1/2})|.

    This is the exact smallest t with e^{-t} A <= B <= e^{t} A.
    """
    return float(np.max(np.abs(relative_log_eigenvalues(a, b))))


def log_euclidean_distance(a, b) -> float:
    """Log-Euclidean distance ||log A - log B||_F.

    Agrees with :func:`airm_distance` whenever A and B commute.
    """
    la = matrix_log(a).entries
    lb = matrix_log(b).entries
    if la.shape != lb.shape:
        raise DimMismatch(f"dimension mismatch: {la.shape} vs {lb.shape}")
    return float(np.linalg.norm(la - lb))


@dataclass(frozen=True)
class Certificate:
    """AIRM/d_inf distances plus the similarity score S = exp(-d/sqrt(k)).

    The score normalizes by sqrt(k) so values are comparable across family
    dimensions, while the multiplicative task-value bounds are governed by
    the unnormalized distance d: every PSD probe C satisfies
    e^{-d} Tr(CA) <= Tr(CB) <= e^{d} Tr(CA).
    """

    airm_distance: float
    dinf_distance: float
    sras: float
    family_dim: int

    def __post_init__(self):
        d, dinf, s, k = self.airm_distance, self.dinf_distance, self.sras, self.family_dim
        if d < 0.0 or dinf < 0.0 or k < 1:
            raise ValueError("distances must be non-negative and family_dim >= 1")
        expected = math.exp(-d / math.sqrt(k))
        if abs(s - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ValueError("score inconsistent with exp(-d/sqrt(k))")
        slack = 1e-10 * (1.0 + d)
        if dinf > d + slack or d > math.sqrt(k) * dinf + slack:
            raise ValueError("distances violate d_inf <= d <= sqrt(k) d_inf")

    def to_dict(self) -> dict:
        return {
            "airm_distance": self.airm_distance,
            "dinf_distance": self.dinf_distance,
            "sras": self.sras,
            "family_dim": self.family_dim,
        }


def sras_score(a, b) -> Certificate:
    """Compare two SPD operators; callers lift PSD summaries first.

    Returns the full :class:`Certificate` (AIRM distance, d_inf, score).
    S lies in (0, 1] with S == 1 iff A == B.
    """
    logs = relative_log_eigenvalues(a, b)
    d = float(np.linalg.norm(logs))
    dinf = float(np.max(np.abs(logs)))
    k = logs.shape[0]
    return Certificate(
        airm_distance=d,
        dinf_distance=dinf,
        sras=math.exp(-d / math.sqrt(k)),
        family_dim=k,
    )


def sras_similarity(a, b, eps_reg: float = DEFAULT_EPS_REG) -> float:
    """Convenience: lift two PSD operators and return just the score."""
    return sras_score(spd_lift(a, eps_reg), spd_lift(b, eps_reg)).sras


def certificate_bounds(cert: Certificate, task_value_a: float) -> tuple[float, float]:
    """Multiplicative bounds (e^{-d} T, e^{d} T) on the partner's task value.

    Equivalently (S^{sqrt(k)} T, S^{-sqrt(k)} T). For every PSD probe C,
    Tr(C B) computed on the compared operator lies inside these bounds.
    """
    if task_value_a < 0.0:
        raise InvalidTaskValue(f"task value must be >= 0, got {task_value_a}")
    d = cert.airm_distance
    return (math.exp(-d) * task_value_a, math.exp(d) * task_value_a)


def dinf_variational_check(a, b, trials: int, seed: int = 0) -> tuple[float, SymMatrix]:
    """Empirical supremum of |log Tr(CB)/Tr(CA)| over sampled PSD probes C.

    Alongside ``trials`` random PSD probes, the two analytic rank-one
    candidates C = A^{-1/2} u uᵀ A^{-1/2} (u an extreme eigenvector of
    A^{-1/2} B A^{-1/2}) are always evaluated; one of them attains
    d_inf(A, B) exactly, so the returned estimate matches
    :func:`dinf_distance` and no sampled probe exceeds it.

    Returns
    -------
    (supremum_estimate, attaining_C)
    """
    ae = _spd_entries(a, "A")
    be = _spd_entries(b, "B")
    if ae.shape != be.shape:
        raise DimMismatch(f"dimension mismatch: {ae.shape} vs {be.shape}")
    k = ae.shape[0]
    inv_sqrt = matrix_inv_sqrt(ae).entries
    m = inv_sqrt @ be @ inv_sqrt
    decomp = sym_eigendecompose(m)

    def log_ratio(c: np.ndarray) -> float:
        ta = float(np.sum(c * ae))
        tb = float(np.sum(c * be))
        return abs(math.log(tb / ta))

    u_min = decomp.eigenvectors[:, 0]
    u_max = decomp.eigenvectors[:, -1]
    candidates = []
    for u in (u_min, u_max):
        w = inv_sqrt @ u
        candidates.append(np.outer(w, w))

    rng = np.random.default_rng(seed)
    for _ in range(trials):
        g = rng.normal(size=(k, k))
        candidates.append(g @ g.T)

    best_val = -1.0
    best_c = candidates[0]
    for c in candidates:
        val = log_ratio(c)
        if val > best_val:
            best_val = val
            best_c = c
    return best_val, SymMatrix(best_c)
