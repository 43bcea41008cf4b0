"""Pairwise similarity matrices and retrieval metrics.

Layer matching compares every layer of one model against every layer of
another, storing similarities (distances are negated or exponentiated
first, so "higher is more similar" holds everywhere). A match counts as
correct only when the diagonal entry is the strict unique row/column
maximizer; ties are counted and reported. Because accuracy, margin, and
AUC depend only on score order, they are invariant to any strictly
monotone transform of the comparator.

Donor-distinct retrieval ranks candidate records for each query after
excluding all records from the query's donor, and scores whether the
nearest candidate carries the query's label.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .baselines import (
    cca_r2,
    linear_cka,
    msa_pointwise,
    procrustes_distance,
    pw_airm,
    rbf_cka,
)
from .errors import DimMismatch
from .spd import DEFAULT_EPS_REG, airm_distance, spd_lift, sras_score
from .summaries import accumulate_pullback

__all__ = [
    "SimilarityMatrix",
    "RetrievalReport",
    "DonorRetrievalReport",
    "COMPARATORS",
    "layer_similarity_matrix",
    "identification_accuracy",
    "decay_curve",
    "top1_margin",
    "diag_auc",
    "build_layer_report",
    "donor_distinct_top1",
    "sras_operator_comparator",
]

COMPARATORS = ("sras", "cka-lin", "cka-rbf", "procrustes", "cca", "pw-airm", "msa")

# comparators that compare projected local geometry and need a family basis
_FAMILY_COMPARATORS = ("sras", "pw-airm", "msa")


@dataclass(frozen=True)
class SimilarityMatrix:
    """Score table between two entity lists; values are similarities."""

    row_ids: tuple
    col_ids: tuple
    values: np.ndarray
    higher_is_better: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.row_ids), len(self.col_ids)):
            raise DimMismatch("values shape does not match id lists")
        if not np.all(np.isfinite(v)):
            raise ValueError("similarity values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def square(self) -> bool:
        return self.values.shape[0] == self.values.shape[1]


@dataclass
class RetrievalReport:
    """Layer-matching metrics: accuracy percent, margin, AUC, decay curve."""

    accuracy_percent: float
    top1_margin: float
    diag_auc: float
    decay: list[float]
    tie_count: int = 0
    per_pair: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy_percent": self.accuracy_percent,
            "top1_margin": self.top1_margin,
            "diag_auc": self.diag_auc,
            "decay": list(self.decay),
            "tie_count": self.tie_count,
            "per_pair": self.per_pair,
        }


@dataclass
class DonorRetrievalReport:
    """Donor-distinct nearest-neighbour label matching."""

    top1_accuracy: float
    diag_auc: float
    n_queries: int
    n_excluded: int
    chance: float
    per_query: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "top1_accuracy": self.top1_accuracy,
            "diag_auc": self.diag_auc,
            "n_queries": self.n_queries,
            "n_excluded": self.n_excluded,
            "chance": self.chance,
            "per_query": self.per_query,
        }


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, SimilarityMatrix) else np.asarray(m, dtype=float)


def _as_matrix_list(matrices):
    if isinstance(matrices, dict):
        return [matrices[key] for key in sorted(matrices)]
    if isinstance(matrices, (SimilarityMatrix, np.ndarray)):
        return [matrices]
    return list(matrices)


# ----------------------------------------------------------- layer matching


def _precompute_layer_features(model, layers, comparator, dataset, family, eps_reg):
    """Per-layer cached objects the comparator consumes."""
    feats = []
    for layer in layers:
        if comparator == "sras":
            g = accumulate_pullback(model, dataset, family, layer_index=layer)
            feats.append(spd_lift(g.operator, eps_reg).entries)
        elif comparator in ("pw-airm", "msa"):
            basis = family.basis
            local = []
            for x in np.asarray(dataset, dtype=float):
                jp = model.jacobian_columns(x, basis, layer)
                local.append(spd_lift(jp.T @ jp, eps_reg).entries)
            feats.append(local)
        else:
            feats.append(model.forward_batch(np.asarray(dataset, float), layer))
    return feats


def _pair_similarity(comparator, feat_a, feat_b, k):
    if comparator == "sras":
        return float(np.exp(-airm_distance(feat_a, feat_b) / np.sqrt(k)))
    if comparator == "pw-airm":
        return float(np.exp(-pw_airm(feat_a, feat_b) / np.sqrt(k)))
    if comparator == "msa":
        return -msa_pointwise(feat_a, feat_b)
    if comparator == "cka-lin":
        return linear_cka(feat_a, feat_b)
    if comparator == "cka-rbf":
        return rbf_cka(feat_a, feat_b)
    if comparator == "procrustes":
        return -procrustes_distance(feat_a, feat_b)
    if comparator == "cca":
        return cca_r2(feat_a, feat_b)
    raise ValueError(f"unknown comparator {comparator!r}")


def layer_similarity_matrix(
    bank,
    layers,
    comparator: str,
    dataset,
    family=None,
    *,
    model_ids=None,
    eps_reg: float = DEFAULT_EPS_REG,
    threads: int | None = None,
):
    """L x L similarity matrices for every unordered model pair.

    Returns (pair_matrices, averaged) where ``pair_matrices`` maps
    (id_a, id_b) to a :class:`SimilarityMatrix` and ``averaged`` is their
    entrywise mean.
    """
    bank = list(bank)
    if len(bank) < 2:
        raise ValueError("layer matching needs at least 2 models")
    if comparator not in COMPARATORS:
        raise ValueError(f"comparator must be one of {COMPARATORS}")
    if comparator in _FAMILY_COMPARATORS and family is None:
        raise ValueError(f"comparator {comparator!r} requires a perturbation family")
    layers = list(layers)
    ids = list(model_ids) if model_ids is not None else [f"m{i}" for i in range(len(bank))]
    if len(ids) != len(bank):
        raise DimMismatch("model_ids length must match bank length")

    def features_for(model):
        return _precompute_layer_features(
            model, layers, comparator, dataset, family, eps_reg
        )

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_feats = list(pool.map(features_for, bank))
    else:
        all_feats = [features_for(m) for m in bank]

    k = family.family_dim if family is not None else 0
    layer_ids = tuple(f"layer{j}" for j in layers)
    pair_matrices = {}
    for a in range(len(bank)):
        for b in range(a + 1, len(bank)):
            vals = np.empty((len(layers), len(layers)))
            for i in range(len(layers)):
                for j in range(len(layers)):
                    vals[i, j] = _pair_similarity(
                        comparator, all_feats[a][i], all_feats[b][j], k
                    )
            pair_matrices[(ids[a], ids[b])] = SimilarityMatrix(
                row_ids=layer_ids, col_ids=layer_ids, values=vals
            )
    averaged = SimilarityMatrix(
        row_ids=layer_ids,
        col_ids=layer_ids,
        values=np.mean([m.values for m in pair_matrices.values()], axis=0),
    )
    return pair_matrices, averaged


def _strict_diag_hits(values: np.ndarray, axis: int) -> tuple[int, int]:
    """(hits, ties) along rows (axis=1) or columns (axis=0)."""
    n = values.shape[0]
    hits = ties = 0
    for i in range(n):
        line = values[i, :] if axis == 1 else values[:, i]
        best = np.max(line)
        if line[i] == best:
            if np.sum(line == best) == 1:
                hits += 1
            else:
                ties += 1
    return hits, ties


def identification_accuracy(matrices) -> float:
    """Percent of rows+columns whose strict argmax is the diagonal."""
    mats = _as_matrix_list(matrices)
    total = 0.0
    for m in mats:
        v = _values(m)
        if v.shape[0] != v.shape[1]:
            raise DimMismatch("identification accuracy needs square matrices")
        row_hits, _ = _strict_diag_hits(v, axis=1)
        col_hits, _ = _strict_diag_hits(v, axis=0)
        total += (row_hits + col_hits) / (2.0 * v.shape[0])
    return 100.0 * total / len(mats)


def count_argmax_ties(matrices) -> int:
    mats = _as_matrix_list(matrices)
    ties = 0
    for m in mats:
        v = _values(m)
        ties += _strict_diag_hits(v, axis=1)[1] + _strict_diag_hits(v, axis=0)[1]
    return ties


def decay_curve(avg_matrix) -> np.ndarray:
    """Mean similarity at each absolute layer offset Delta = 0 .. L-1."""
    v = _values(avg_matrix)
    if v.shape[0] != v.shape[1]:
        raise DimMismatch("decay curve needs a square matrix")
    n = v.shape[0]
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return np.array([float(np.mean(v[idx == delta])) for delta in range(n)])


def top1_margin(matrices) -> float:
    """Mean of (correct-match similarity - strongest incorrect match)."""
    mats = _as_matrix_list(matrices)
    margins = []
    for m in mats:
        v = _values(m)
        if v.shape[0] != v.shape[1]:
            raise DimMismatch("top-1 margin needs square matrices")
        n = v.shape[0]
        for i in range(n):
            row = v[i, :]
            margins.append(row[i] - np.max(np.delete(row, i)))
            col = v[:, i]
            margins.append(col[i] - np.max(np.delete(col, i)))
    return float(np.mean(margins))


def _midrank_auc(positives: np.ndarray, negatives: np.ndarray) -> float:
    pooled = np.concatenate([positives, negatives])
    ranks = rankdata(pooled)  # midranks for ties
    n_pos, n_neg = positives.size, negatives.size
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative scores")
    rank_sum = float(np.sum(ranks[:n_pos]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def diag_auc(matrices) -> float:
    """AUC of diagonal entries (positives) vs off-diagonal (negatives)."""
    mats = _as_matrix_list(matrices)
    pos, neg = [], []
    for m in mats:
        v = _values(m)
        if v.shape[0] != v.shape[1]:
            raise DimMismatch("diag AUC needs square matrices")
        mask = np.eye(v.shape[0], dtype=bool)
        pos.append(v[mask])
        neg.append(v[~mask])
    return _midrank_auc(np.concatenate(pos), np.concatenate(neg))


def build_layer_report(pair_matrices, averaged) -> RetrievalReport:
    mats = _as_matrix_list(pair_matrices)
    per_pair = []
    if isinstance(pair_matrices, dict):
        for key in sorted(pair_matrices):
            per_pair.append(
                {
                    "pair": list(key),
                    "accuracy_percent": identification_accuracy(pair_matrices[key]),
                }
            )
    return RetrievalReport(
        accuracy_percent=identification_accuracy(mats),
        top1_margin=top1_margin(mats),
        diag_auc=diag_auc(mats),
        decay=[float(x) for x in decay_curve(averaged)],
        tie_count=count_argmax_ties(mats),
        per_pair=per_pair,
    )


# ---------------------------------------------------- donor-distinct top-1


def sras_operator_comparator(eps_reg: float = DEFAULT_EPS_REG):
    """Similarity callable on raw PSD operators: lift both, score with S-RAS."""

    def compare(a, b) -> float:
        return sras_score(spd_lift(a, eps_reg), spd_lift(b, eps_reg)).sras

    return compare


def donor_distinct_top1(records, comparator) -> DonorRetrievalReport:
    """Nearest-neighbour label matching with same-donor candidates excluded.

    ``records`` is a list of (id, donor, label, operator); ``comparator``
    maps two operators to a similarity (higher = more similar) or is the
    string "sras". Queries with zero donor-distinct candidates are
    excluded and reported. ``chance`` is the expected accuracy of a
    random ranking given each query's candidate label composition.
    """
    if isinstance(comparator, str):
        if comparator != "sras":
            raise ValueError("only the 'sras' named comparator is built in")
        comparator = sras_operator_comparator()
    records = list(records)
    donors = {donor for _, donor, _, _ in records}
    if len(donors) < 2:
        return DonorRetrievalReport(
            top1_accuracy=float("nan"),
            diag_auc=float("nan"),
            n_queries=0,
            n_excluded=len(records),
            chance=float("nan"),
            per_query=[],
        )

    n = len(records)
    sim = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i + 1, n):
            s = float(comparator(records[i][3], records[j][3]))
            sim[i, j] = sim[j, i] = s

    hits = 0
    n_queries = 0
    n_excluded = 0
    chance_parts = []
    pos_scores, neg_scores = [], []
    per_query = []
    for i, (rec_id, donor, label, _) in enumerate(records):
        cand = [j for j in range(n) if records[j][1] != donor]
        if not cand:
            n_excluded += 1
            continue
        scores = sim[i, cand]
        best_local = int(np.argmax(scores))  # ties go to the smallest index
        nearest = cand[best_local]
        hit = records[nearest][2] == label
        hits += int(hit)
        n_queries += 1
        same = np.array([records[j][2] == label for j in cand])
        chance_parts.append(float(np.mean(same)))
        pos_scores.extend(scores[same])
        neg_scores.extend(scores[~same])
        per_query.append(
            {
                "id": rec_id,
                "nearest": records[nearest][0],
                "hit": bool(hit),
                "n_candidates": len(cand),
            }
        )
    if n_queries == 0:
        return DonorRetrievalReport(
            top1_accuracy=float("nan"),
            diag_auc=float("nan"),
            n_queries=0,
            n_excluded=n_excluded,
            chance=float("nan"),
            per_query=[],
        )
    auc = (
        _midrank_auc(np.asarray(pos_scores), np.asarray(neg_scores))
        if pos_scores and neg_scores
        else float("nan")
    )
    return DonorRetrievalReport(
        top1_accuracy=hits / n_queries,
        diag_auc=auc,
        n_queries=n_queries,
        n_excluded=n_excluded,
        chance=float(np.mean(chance_parts)),
        per_query=per_query,
    )
