"""Group contrasts between class-conditional summaries and finite probes.

The contrast operator Delta = mean_A(G) - mean_B(G) is symmetric and
generally indefinite; by Rayleigh-Ritz its top (bottom) eigenvectors are
the unit directions along which group A exceeds (trails) group B most in
expected local quadratic sensitivity, and by Ky Fan the top-r eigenvector
frame maximizes the trace over all r-frames. Because the contrast is
built from a dataset-average operator, its best shared direction can
never beat the average of per-image optima:

    max_v mean_x[q_x(v)] <= mean_x[max_v q_x(v)]

(:func:`shared_vs_pointwise_gap`).

Probe directions are instantiated as finite input-space perturbations
delta = sign * amplitude * (P v) through the family basis - a direct
additive perturbation; per-sample learned re-parameterizations are out
of scope, so only this global-linear instantiation is supported. Scoring
averages margin drops over amplitudes and both perturbation signs within
each side and reports the (+) minus (-) side difference, which makes the
score even in each direction's sign.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    FamilyMismatch,
    InvalidProbeSet,
    InvalidRank,
    ZeroSummary,
)
from .spd import sym_eigendecompose

__all__ = [
    "ContrastOperator",
    "ProbeDirection",
    "ProbeSet",
    "DEFAULT_AMPLITUDES",
    "group_contrast",
    "top_contrast_directions",
    "shared_vs_pointwise_gap",
    "probe_score",
    "control_probes",
    "permute_group_assignment",
    "probe_set_to_dict",
    "probe_set_from_dict",
    "save_probe_set",
    "load_probe_set",
]

DEFAULT_AMPLITUDES = (0.5, 1.0)


@dataclass(frozen=True)
class ContrastOperator:
    """Difference of group-mean summaries; indefinite symmetric k x k."""

    delta: np.ndarray
    family_id: str
    class_label: int | None = None
    group_ids: tuple[str, str] = ("A", "B")
    kind: str = "full"  # "full" or "shape"

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DimMismatch("contrast must be square")
        sym = (d + d.T) / 2.0
        sym.setflags(write=False)
        object.__setattr__(self, "delta", sym)
        if self.kind not in ("full", "shape"):
            raise ValueError(f"contrast kind must be 'full' or 'shape', got {self.kind!r}")

    @property
    def k(self) -> int:
        return self.delta.shape[0]


@dataclass(frozen=True)
class ProbeDirection:
    side: str  # "+" or "-"
    v: np.ndarray
    eigenvalue: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise InvalidProbeSet("probe direction must be unit norm")
        if self.side not in ("+", "-"):
            raise InvalidProbeSet(f"side must be '+' or '-', got {self.side!r}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class ProbeSet:
    """Signed probe directions with their contrast scores and amplitudes."""

    directions: tuple[ProbeDirection, ...]
    amplitudes: tuple[float, ...]
    probes_per_side: int
    family_id: str
    k: int

    def __post_init__(self):
        if not self.amplitudes or any(a <= 0 for a in self.amplitudes):
            raise InvalidProbeSet("amplitudes must be a non-empty list of positive reals")
        plus = [p.eigenvalue for p in self.directions if p.side == "+"]
        minus = [p.eigenvalue for p in self.directions if p.side == "-"]
        if len(plus) != self.probes_per_side or len(minus) != self.probes_per_side:
            raise InvalidProbeSet("each side needs exactly probes_per_side directions")
        if any(np.diff(plus) > 1e-12):
            raise InvalidProbeSet("+ side scores must be descending")
        if any(np.diff(minus) < -1e-12):
            raise InvalidProbeSet("- side scores must be ascending")

    def side(self, sign: str) -> list[ProbeDirection]:
        return [p for p in self.directions if p.side == sign]


def _mean_operator(summaries, shape_only: bool) -> np.ndarray:
    ops = []
    for s in summaries:
        op = np.asarray(s.operator, dtype=float)
        if shape_only:
            tr = float(np.trace(op))
            if tr <= 0.0:
                raise ZeroSummary("shape-only contrast needs positive-trace operators")
            op = op / tr
        ops.append(op)
    return sum(ops) / len(ops)


def group_contrast(summaries_a, summaries_b, shape_only: bool = False) -> ContrastOperator:
    """Delta = mean(group A) - mean(group B), raw or trace-normalized.

    All summaries must share the family id (and therefore k); mixed
    families are meaningless to contrast. Trace normalization removes the
    overall gain, so shape-only contrasts of rescaled groups vanish.
    """
    summaries_a, summaries_b = list(summaries_a), list(summaries_b)
    if not summaries_a or not summaries_b:
        raise ValueError("both groups must be non-empty")
    everything = summaries_a + summaries_b
    family_ids = {s.family_id for s in everything}
    if len(family_ids) != 1:
        raise FamilyMismatch(f"mixed family ids: {sorted(family_ids)}")
    ks = {s.operator.shape[0] for s in everything}
    if len(ks) != 1:
        raise DimMismatch(f"mixed operator dims: {sorted(ks)}")
    labels = {s.class_label for s in everything}
    if len(labels) != 1:
        raise ValueError(f"mixed class labels: {sorted(map(str, labels))}")
    k = ks.pop()
    if shape_only and k < 2:
        raise ValueError("shape-only contrast undefined for 1-D families")
    delta = _mean_operator(summaries_a, shape_only) - _mean_operator(
        summaries_b, shape_only
    )
    return ContrastOperator(
        delta=delta,
        family_id=family_ids.pop(),
        class_label=labels.pop(),
        kind="shape" if shape_only else "full",
    )


def _probe_set_from_ranked(ranked, r_per_side, family_id, k, amplitudes):
    """ranked: list of (score, v) sorted descending by score."""
    plus = [
        ProbeDirection(side="+", v=v, eigenvalue=score)
        for score, v in ranked[:r_per_side]
    ]
    minus = [
        ProbeDirection(side="-", v=v, eigenvalue=score)
        for score, v in ranked[len(ranked) - r_per_side :][::-1]
    ]
    return ProbeSet(
        directions=tuple(plus + minus),
        amplitudes=tuple(amplitudes),
        probes_per_side=r_per_side,
        family_id=family_id,
        k=k,
    )


def top_contrast_directions(
    contrast: ContrastOperator,
    r_per_side: int,
    amplitudes=DEFAULT_AMPLITUDES,
) -> ProbeSet:
    """Extremal eigenvector probes of the contrast.

    (+) side holds the r largest-eigenvalue directions (descending), (-)
    side the r smallest (ascending). Ties resolve deterministically via
    the eigendecomposition's index order and sign convention.
    """
    if not 1 <= r_per_side <= contrast.k:
        raise InvalidRank(f"r_per_side must be in 1..{contrast.k}, got {r_per_side}")
    dec = sym_eigendecompose(contrast.delta)
    ranked = [
        (float(dec.eigenvalues[i]), dec.eigenvectors[:, i])
        for i in range(contrast.k - 1, -1, -1)
    ]
    return _probe_set_from_ranked(
        ranked, r_per_side, contrast.family_id, contrast.k, amplitudes
    )


def shared_vs_pointwise_gap(imagewise_contrasts) -> tuple[float, float]:
    """(lambda_max of the mean contrast, mean of per-image lambda_max).

    The first never exceeds the second: optimizing one shared direction
    cannot beat optimizing separately per image.
    """
    mats = [np.asarray(m, dtype=float) for m in imagewise_contrasts]
    if not mats:
        raise ValueError("need at least one imagewise contrast")
    shapes = {m.shape for m in mats}
    if len(shapes) != 1 or mats[0].ndim != 2:
        raise DimMismatch(f"inconsistent contrast shapes: {shapes}")
    mean = sum(mats) / len(mats)
    shared_max = float(np.linalg.eigvalsh((mean + mean.T) / 2.0)[-1])
    pointwise = [float(np.linalg.eigvalsh((m + m.T) / 2.0)[-1]) for m in mats]
    return shared_max, float(np.mean(pointwise))


def probe_score(model, x, true_class: int, probes: ProbeSet, family) -> float:
    """Finite-perturbation margin score s = R(+) - R(-).

    Each direction v becomes the ambient perturbation
    delta = sign * amplitude * (P v); the margin drop
    M(x) - M(x + delta) is averaged over probes, amplitudes, and both
    signs within each side. For margins linear in the input, the sign
    average cancels and s = 0.
    """
    if not probes.amplitudes:
        raise InvalidProbeSet("amplitude set is empty")
    fam_id = getattr(family, "id", None)
    if fam_id is not None and fam_id != probes.family_id:
        raise FamilyMismatch(
            f"probe set built for family {probes.family_id!r}, got {fam_id!r}"
        )
    basis = np.asarray(getattr(family, "basis", family), dtype=float)
    if basis.shape[1] != probes.k:
        raise DimMismatch(f"family dim {basis.shape[1]} != probe dim {probes.k}")
    x = np.asarray(x, dtype=float)
    base_margin = model.margin(x, true_class)
    side_means = {}
    for sign_label in ("+", "-"):
        dirs = probes.side(sign_label)
        if not dirs:
            raise InvalidProbeSet(f"probe set has no {sign_label} side")
        total = 0.0
        count = 0
        for p in dirs:
            ambient = basis @ p.v
            for a in probes.amplitudes:
                for warp_sign in (-1.0, 1.0):
                    delta = warp_sign * a * ambient
                    total += base_margin - model.margin(x + delta, true_class)
                    count += 1
        side_means[sign_label] = total / count
    return side_means["+"] - side_means["-"]


def control_probes(
    contrast: ContrastOperator,
    pooled,
    kind: str,
    seed: int = 0,
    *,
    r_per_side: int = 2,
    n_candidates: int | None = None,
    amplitudes=DEFAULT_AMPLITUDES,
) -> ProbeSet:
    """Control probe sets matched to the true-contrast construction.

    random
        Seeded random unit directions ranked by the contrast Rayleigh
        quotient.
    pooled
        Top eigenvectors of the pooled (sum-of-groups) operator, re-ranked
        by the contrast score within that restricted candidate set.
    permuted
        The caller supplies a contrast rebuilt from label-permuted group
        summaries; probes are its extremal eigenvectors, so an identity
        permutation reproduces the true contrast probes.
    """
    k = contrast.k
    if pooled is not None:
        pooled = np.asarray(pooled, dtype=float)
        if pooled.shape != (k, k):
            raise DimMismatch(f"pooled operator must be {k} x {k}")
    if kind == "permuted":
        return top_contrast_directions(contrast, r_per_side, amplitudes)
    if n_candidates is None:
        n_candidates = max(8, 4 * r_per_side)
    n_candidates = max(n_candidates, 2 * r_per_side)

    if kind == "random":
        rng = np.random.default_rng(seed)
        candidates = []
        for _ in range(n_candidates):
            v = rng.normal(size=k)
            candidates.append(v / np.linalg.norm(v))
    elif kind == "pooled":
        if pooled is None:
            raise ValueError("pooled control needs the pooled operator")
        dec = sym_eigendecompose(pooled)
        take = min(k, n_candidates)
        # descending pooled eigenvalue order
        candidates = [dec.eigenvectors[:, i] for i in range(k - 1, k - 1 - take, -1)]
    else:
        raise ValueError(f"unknown control kind {kind!r}")

    ranked = sorted(
        ((float(v @ contrast.delta @ v), v) for v in candidates),
        key=lambda t: -t[0],
    )
    return _probe_set_from_ranked(
        ranked, min(r_per_side, len(ranked) // 2 or 1), contrast.family_id, k, amplitudes
    )


def permute_group_assignment(summaries_a, summaries_b, seed: int):
    """Shuffle the pooled summaries into two groups of the original sizes."""
    pool = list(summaries_a) + list(summaries_b)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    shuffled = [pool[i] for i in order]
    n_a = len(list(summaries_a))
    return shuffled[:n_a], shuffled[n_a:]


# ------------------------------------------------------------------ file IO


def probe_set_to_dict(probes: ProbeSet) -> dict:
    return {
        "k": probes.k,
        "family_id": probes.family_id,
        "probes_per_side": probes.probes_per_side,
        "amplitudes": list(probes.amplitudes),
        "sides": [
            {"sign": p.side, "v": [float(x) for x in p.v], "lambda": p.eigenvalue}
            for p in probes.directions
        ],
    }


def probe_set_from_dict(obj: dict) -> ProbeSet:
    directions = tuple(
        ProbeDirection(side=e["sign"], v=np.asarray(e["v"], float), eigenvalue=float(e["lambda"]))
        for e in obj["sides"]
    )
    return ProbeSet(
        directions=directions,
        amplitudes=tuple(float(a) for a in obj["amplitudes"]),
        probes_per_side=int(obj["probes_per_side"]),
        family_id=str(obj["family_id"]),
        k=int(obj["k"]),
    )


def save_probe_set(probes: ProbeSet, path) -> None:
    with open(path, "w") as fh:
        json.dump(probe_set_to_dict(probes), fh, sort_keys=True)


def load_probe_set(path) -> ProbeSet:
    with open(path) as fh:
        return probe_set_from_dict(json.load(fh))
