"""Dataset-level sensitivity summaries over perturbation families.

For a map f and an orthonormal family basis P (d x k), the projected
expected pullback operator is

    G = (1/n) * sum_x (J_f(x) P)ᵀ (J_f(x) P),

and its noise-aware counterpart whitens by a noise covariance on the
output space,

    F = (1/n) * sum_x Pᵀ J_f(x)ᵀ Sigma^{-1} J_f(x) P,

which reduces to sigma^{-2} G for isotropic noise. Both are PSD k x k
operators; the trace probe Tr(C G) over PSD task covariances C is linear
and complete: the k(k+1)/2 probes produced by
:func:`minimality_probe_set` reconstruct the operator exactly.

Accumulation uses a fixed-size chunk tree (per-chunk sums in sample
order, chunk results combined in chunk order) so serial and threaded
runs produce bit-identical operators.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import (
    DimMismatch,
    EmptyDataset,
    InvalidRestriction,
    NotOrthonormal,
    NotPositiveDefinite,
    NotPSD,
    RankDeficient,
    ZeroSummary,
)
from .spd import SymMatrix

__all__ = [
    "PerturbationFamily",
    "NoiseModel",
    "SensitivitySummary",
    "TaskCovariance",
    "make_random_family",
    "make_pca_family",
    "restrict",
    "load_family_csv",
    "save_family_csv",
    "accumulate_pullback",
    "accumulate_fisher",
    "class_conditional_summaries",
    "task_value",
    "gain_shape",
    "basis_rotate",
    "minimality_probe_set",
    "reconstruct_from_probes",
    "save_summary",
    "load_summary",
    "summary_to_dict",
    "summary_from_dict",
    "DEFAULT_CHUNK_SIZE",
]

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 64
_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class PerturbationFamily:
    """Orthonormal basis P (ambient_dim x family_dim) defining a task family.

    Nested restrictions share the parent's leading columns bit-exactly, so
    sweeping the family dimension never changes the ambient basis.
    """

    id: str
    basis: np.ndarray
    kind: str = "user"
    parent_id: str | None = None
    explained_variance: float | None = None

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2 or b.shape[1] < 1 or b.shape[0] < b.shape[1]:
            raise NotOrthonormal(f"basis must be d x k with d >= k, got {b.shape}")
        gram_err = np.max(np.abs(b.T @ b - np.eye(b.shape[1])))
        if gram_err > _ORTHO_TOL:
            raise NotOrthonormal(f"basis columns not orthonormal (error {gram_err:.2e})")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def family_dim(self) -> int:
        return self.basis.shape[1]


def _fix_qr_signs(q: np.ndarray, r: np.ndarray) -> np.ndarray:
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def make_random_family(d: int, k_max: int, seed: int) -> PerturbationFamily:
    """Seeded orthonormal parent basis via QR of a Gaussian matrix.

    The R-diagonal is forced positive so families are deterministic across
    platforms; restrictions take leading columns of this parent.
    """
    if not 1 <= k_max <= d:
        raise InvalidRestriction(f"need 1 <= k_max <= d, got k_max={k_max}, d={d}")
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(d, k_max))
    q, r = np.linalg.qr(g)
    q = _fix_qr_signs(q, r)
    return PerturbationFamily(
        id=f"random-d{d}-k{k_max}-s{seed}", basis=q, kind="random"
    )


def make_pca_family(dataset, k: int) -> PerturbationFamily:
    """Top-k principal directions of the dataset covariance (biased, 1/n).

    Columns are ordered by descending eigenvalue; ``explained_variance``
    records the cumulative fraction captured by the k retained directions.
    """
    x = np.asarray(dataset, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise EmptyDataset("PCA family needs at least 2 samples")
    d = x.shape[1]
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    rank = np.linalg.matrix_rank(cov)
    if k > rank:
        raise RankDeficient(f"requested k={k} exceeds covariance rank {rank}")
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(d)])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    total = float(np.sum(vals))
    explained = float(np.sum(vals[:k]) / total) if total > 0 else 0.0
    return PerturbationFamily(
        id=f"pca-d{d}-k{k}",
        basis=vecs[:, :k],
        kind="pca",
        explained_variance=explained,
    )


def restrict(family: PerturbationFamily, k: int) -> PerturbationFamily:
    """Nested restriction to the leading k columns (bit-exact)."""
    if not 1 <= k <= family.family_dim:
        raise InvalidRestriction(
            f"k={k} outside 1..{family.family_dim} for family {family.id!r}"
        )
    if k == family.family_dim:
        return family
    return PerturbationFamily(
        id=f"{family.id}|k={k}",
        basis=family.basis[:, :k],
        kind=family.kind,
        parent_id=family.id,
        explained_variance=None,
    )


def save_family_csv(family: PerturbationFamily, path) -> None:
    """d rows x k columns of comma-separated doubles."""
    with open(path, "w") as fh:
        for row in family.basis:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_family_csv(path, family_id: str | None = None) -> PerturbationFamily:
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rows.append([float(v) for v in line.split(",")])
    basis = np.asarray(rows, dtype=float)
    return PerturbationFamily(
        id=family_id or str(path), basis=basis, kind="user"
    )


@dataclass(frozen=True)
class NoiseModel:
    """Observation-noise model: isotropic (sigma) or a full covariance."""

    kind: str
    sigma: float | None = None
    covariance: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "isotropic":
            if self.sigma is None or self.sigma <= 0:
                raise ValueError("isotropic noise needs sigma > 0")
        elif self.kind == "full":
            cov = np.asarray(self.covariance, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise NotPositiveDefinite("full noise covariance must be square")
            sym = (cov + cov.T) / 2.0
            if np.linalg.eigvalsh(sym)[0] <= 0:
                raise NotPositiveDefinite("noise covariance must be strictly PD")
            object.__setattr__(self, "covariance", sym)
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @staticmethod
    def isotropic(sigma: float) -> "NoiseModel":
        return NoiseModel(kind="isotropic", sigma=float(sigma))

    @staticmethod
    def full(covariance) -> "NoiseModel":
        return NoiseModel(kind="full", covariance=covariance)

    def describe(self) -> dict:
        if self.kind == "isotropic":
            return {"kind": "isotropic", "sigma": self.sigma}
        return {"kind": "full", "dim": int(self.covariance.shape[0])}


_PSD_TOL_SCALE = 1e-9


@dataclass(frozen=True)
class SensitivitySummary:
    """PSD k x k operator with provenance (family, noise, sample count, class)."""

    operator: np.ndarray
    n_samples: int
    family_id: str
    kind: str  # "G" (pullback) or "F" (fisher)
    noise: dict = field(default_factory=lambda: {"kind": "none"})
    class_label: int | None = None

    def __post_init__(self):
        op = np.asarray(self.operator, dtype=float)
        sym = (op + op.T) / 2.0
        lam_min = float(np.linalg.eigvalsh(sym)[0])
        tol = _PSD_TOL_SCALE * max(abs(float(np.trace(sym))), 1e-300)
        if lam_min < -tol:
            raise NotPSD(f"summary operator eigenvalue {lam_min:.3e} below -tolerance")
        if self.n_samples < 1:
            raise EmptyDataset("summary needs n_samples >= 1")
        if self.kind not in ("G", "F"):
            raise ValueError(f"summary kind must be 'G' or 'F', got {self.kind!r}")
        sym.setflags(write=False)
        object.__setattr__(self, "operator", sym)

    @property
    def k(self) -> int:
        return self.operator.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.operator))


@dataclass(frozen=True)
class TaskCovariance:
    """PSD task covariance C; normalized means Tr(C) == 1 (shape-only tasks)."""

    matrix: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        sym = (m + m.T) / 2.0
        lam_min = float(np.linalg.eigvalsh(sym)[0])
        tol = _PSD_TOL_SCALE * max(abs(float(np.trace(sym))), 1.0)
        if lam_min < -tol:
            raise NotPSD("task covariance must be PSD")
        if self.normalized and abs(float(np.trace(sym)) - 1.0) > 1e-12:
            raise ValueError("normalized task covariance must have unit trace")
        sym.setflags(write=False)
        object.__setattr__(self, "matrix", sym)

    @staticmethod
    def rank_one(v) -> "TaskCovariance":
        v = np.asarray(v, dtype=float)
        return TaskCovariance(np.outer(v, v))


def _basis_of(family) -> np.ndarray:
    return np.asarray(getattr(family, "basis", family), dtype=float)


def _chunks(n: int, chunk_size: int):
    for start in range(0, n, chunk_size):
        yield start, min(start + chunk_size, n)


def _map_chunks(worker, spans, threads):
    if threads is None or threads <= 1:
        return [worker(span) for span in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, spans))


def _accumulate(model, dataset, family, layer_index, chunk_size, threads, per_sample):
    x = np.asarray(dataset, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyDataset("dataset must be a non-empty (n, d) array")
    basis = _basis_of(family)
    if basis.shape[0] != x.shape[1]:
        raise DimMismatch(
            f"family ambient dim {basis.shape[0]} != data dim {x.shape[1]}"
        )
    k = basis.shape[1]
    spans = list(_chunks(x.shape[0], chunk_size))

    def worker(span):
        lo, hi = span
        acc = np.zeros((k, k))
        for i in range(lo, hi):
            acc += per_sample(x[i])
        return acc

    partials = _map_chunks(worker, spans, threads)
    total = np.zeros((k, k))
    for part in partials:  # fixed chunk order: bit-identical across thread counts
        total += part
    return total / x.shape[0], x.shape[0]


def accumulate_pullback(
    model,
    dataset,
    family,
    layer_index=None,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int | None = None,
    class_label: int | None = None,
) -> SensitivitySummary:
    """Average of (J(x) P)ᵀ (J(x) P) over the dataset."""
    basis = _basis_of(family)

    def per_sample(xi):
        jp = model.jacobian_columns(xi, basis, layer_index)
        return jp.T @ jp

    operator, n = _accumulate(
        model, dataset, family, layer_index, chunk_size, threads, per_sample
    )
    return SensitivitySummary(
        operator=operator,
        n_samples=n,
        family_id=getattr(family, "id", "user"),
        kind="G",
        noise={"kind": "none"},
        class_label=class_label,
    )


def accumulate_fisher(
    model,
    dataset,
    family,
    noise: NoiseModel,
    layer_index=None,
    *,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int | None = None,
    class_label: int | None = None,
) -> SensitivitySummary:
    """Noise-whitened average Pᵀ Jᵀ Sigma^{-1} J P.

    Isotropic noise reduces exactly to sigma^{-2} times the pullback
    summary; a full covariance is applied by Cholesky solve (never an
    explicit inverse).
    """
    if noise.kind == "isotropic":
        g = accumulate_pullback(
            model,
            dataset,
            family,
            layer_index,
            chunk_size=chunk_size,
            threads=threads,
            class_label=class_label,
        )
        scale = 1.0 / (noise.sigma**2)
        return SensitivitySummary(
            operator=g.operator * scale,
            n_samples=g.n_samples,
            family_id=g.family_id,
            kind="F",
            noise=noise.describe(),
            class_label=class_label,
        )

    chol = scipy.linalg.cho_factor(noise.covariance)
    basis = _basis_of(family)

    def per_sample(xi):
        jp = model.jacobian_columns(xi, basis, layer_index)
        if jp.shape[0] != noise.covariance.shape[0]:
            raise DimMismatch(
                f"noise covariance dim {noise.covariance.shape[0]} != "
                f"layer output dim {jp.shape[0]}"
            )
        return jp.T @ scipy.linalg.cho_solve(chol, jp)

    operator, n = _accumulate(
        model, dataset, family, layer_index, chunk_size, threads, per_sample
    )
    return SensitivitySummary(
        operator=operator,
        n_samples=n,
        family_id=getattr(family, "id", "user"),
        kind="F",
        noise=noise.describe(),
        class_label=class_label,
    )


def class_conditional_summaries(
    model,
    dataset,
    labels,
    family,
    layer_index=None,
    *,
    classes=None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    threads: int | None = None,
) -> dict[int, SensitivitySummary]:
    """Per-class pullback summaries over the label-restricted subsets.

    The pooled summary equals the class-weighted average with weights
    n_y / n. Requested classes with zero samples are logged and skipped,
    not fatal.
    """
    x = np.asarray(dataset, dtype=float)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0]:
        raise DimMismatch("labels length must match dataset length")
    if x.shape[0] == 0:
        raise EmptyDataset("dataset must be non-empty")
    wanted = sorted(set(int(c) for c in (classes if classes is not None else y)))
    out: dict[int, SensitivitySummary] = {}
    for cls in wanted:
        mask = y == cls
        if not np.any(mask):
            logger.warning("class %d has no samples; skipped", cls)
            continue
        out[cls] = accumulate_pullback(
            model,
            x[mask],
            family,
            layer_index,
            chunk_size=chunk_size,
            threads=threads,
            class_label=cls,
        )
    return out


def task_value(summary, c) -> float:
    """Trace probe Tr(C * operator); linear in C and non-negative for PSD C."""
    op = summary.operator if isinstance(summary, SensitivitySummary) else np.asarray(summary)
    if isinstance(c, TaskCovariance):
        cm = c.matrix
    elif isinstance(c, SymMatrix):
        cm = c.entries
    else:
        cm = np.asarray(c, dtype=float)
    if cm.shape != op.shape:
        raise DimMismatch(f"probe shape {cm.shape} != operator shape {op.shape}")
    return float(np.sum(cm * op))


def gain_shape(summary) -> tuple[float, SymMatrix]:
    """Split a summary into gain Tr(G)/k and shape G/Tr(G).

    Shape is only meaningful for k >= 2: every nonzero 1 x 1 operator
    trace-normalizes to the same value, so 1-D requests are rejected.
    """
    op = summary.operator if isinstance(summary, SensitivitySummary) else np.asarray(summary)
    k = op.shape[0]
    if k < 2:
        raise ValueError("shape decomposition undefined for 1-D families")
    tr = float(np.trace(op))
    if tr <= 0.0:
        raise ZeroSummary("gain/shape needs a positive-trace operator")
    return tr / k, SymMatrix(op / tr)


def basis_rotate(summary: SensitivitySummary, q) -> SensitivitySummary:
    """Re-express a summary in a rotated family basis: G -> Qᵀ G Q.

    Task values are preserved under the matching probe rotation
    C -> Qᵀ C Q; the underlying task family (the span) is unchanged, so
    the family id is kept.
    """
    q = np.asarray(q, dtype=float)
    k = summary.k
    if q.shape != (k, k):
        raise DimMismatch(f"rotation must be {k} x {k}")
    if np.max(np.abs(q.T @ q - np.eye(k))) > _ORTHO_TOL:
        raise NotOrthonormal("rotation matrix is not orthonormal")
    return replace(summary, operator=q.T @ summary.operator @ q)


def minimality_probe_set(k: int) -> list[TaskCovariance]:
    """The k(k+1)/2 rank-one/pair probes that determine any k x k summary."""
    eye = np.eye(k)
    probes = [TaskCovariance.rank_one(eye[:, i]) for i in range(k)]
    for i in range(k):
        for j in range(i + 1, k):
            probes.append(TaskCovariance.rank_one(eye[:, i] + eye[:, j]))
    return probes


def reconstruct_from_probes(values, k: int) -> SymMatrix:
    """Invert :func:`minimality_probe_set` values back into the operator.

    Diagonal entries come from the rank-one probes; off-diagonals from
    G_ij = (t_ij - t_ii - t_jj) / 2.
    """
    values = list(values)
    if len(values) != k * (k + 1) // 2:
        raise DimMismatch(f"expected {k * (k + 1) // 2} probe values, got {len(values)}")
    out = np.zeros((k, k))
    for i in range(k):
        out[i, i] = values[i]
    pos = k
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = (values[pos] - out[i, i] - out[j, j]) / 2.0
            pos += 1
    return SymMatrix(out)


# ------------------------------------------------------------------ file IO


def summary_to_dict(summary: SensitivitySummary) -> dict:
    return {
        "kind": summary.kind,
        "k": summary.k,
        "n_samples": summary.n_samples,
        "family_id": summary.family_id,
        "noise": summary.noise,
        "class_label": summary.class_label,
        "operator": [[float(v) for v in row] for row in summary.operator],
    }


def summary_from_dict(obj: dict) -> SensitivitySummary:
    return SensitivitySummary(
        operator=np.asarray(obj["operator"], dtype=float),
        n_samples=int(obj["n_samples"]),
        family_id=str(obj["family_id"]),
        kind=str(obj["kind"]),
        noise=dict(obj.get("noise", {"kind": "none"})),
        class_label=(None if obj.get("class_label") is None else int(obj["class_label"])),
    )


def save_summary(summary: SensitivitySummary, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary_to_dict(summary), fh, sort_keys=True)


def load_summary(path) -> SensitivitySummary:
    with open(path) as fh:
        return summary_from_dict(json.load(fh))
