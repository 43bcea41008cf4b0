"""Fisher/pullback summaries on parameterized condition grids.

Stimuli live on a 3-axis grid (orientation theta, log2 spatial frequency
rho, phase phi). Per experiment, trials give condition-mean responses
mu(s) and a pooled within-condition noise covariance; the response
Jacobian D mu(s) comes from centered finite differences (circular on
theta/phi, linear on rho with endpoints omitted), and the experiment
operators are the grid averages

    F = mean_s[ Dmu(s)ᵀ Sigma^{-1} Dmu(s) ]      (noise-aware)
    G = mean_s[ Dmu(s)ᵀ Dmu(s) ]                 (naive, Sigma = I)

Pooled covariance uses Ledoit-Wolf shrinkage on centered residuals,
then Sigma + eps I, symmetrization, and an eigenvalue floor at eps
before inversion (eps = 1e-6 by default).

A synthetic tuned-population generator (von Mises in the circular axes,
Gaussian in rho) ships here as the desk-scale stand-in for recordings;
its noiseless tuning curves define a closed-form oracle for the same
grid stencil, independent of the trial-estimation path.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from sklearn.covariance import ledoit_wolf

from .errors import DimMismatch, GridTooSmall, InsufficientData
from .spd import DEFAULT_EPS_REG, spd_lift, sras_score
from .summaries import SensitivitySummary

__all__ = [
    "GridAxis",
    "ConditionGrid",
    "ExperimentRecord",
    "ConditionMeans",
    "PooledCovariance",
    "UndefinedGridPoint",
    "DEFAULT_EPS_SPD",
    "default_grid",
    "grid_to_dict",
    "grid_from_dict",
    "load_grid",
    "save_grid",
    "load_trials_csv",
    "save_trials_csv",
    "condition_means",
    "pooled_shrinkage_covariance",
    "finite_difference_jacobian",
    "valid_grid_points",
    "experiment_operators",
    "coordinate_selection_family",
    "family_restriction",
    "matched_subsample_operators",
    "split_half_reliability",
    "TuningCell",
    "PopulationGenerator",
    "make_population",
]

DEFAULT_EPS_SPD = 1e-6


class UndefinedGridPoint(ValueError):
    """Stencil for this grid point touches a missing condition or an endpoint."""


@dataclass(frozen=True)
class GridAxis:
    """One stimulus coordinate: circular (with period) or linear."""

    name: str
    kind: str
    values: tuple[float, ...]
    period: float | None = None

    def __post_init__(self):
        if self.kind not in ("circular", "linear"):
            raise ValueError(f"axis kind must be circular or linear, got {self.kind!r}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1 or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"axis {self.name!r} values must be strictly increasing")
        if self.kind == "circular":
            if self.period is None or self.period <= 0:
                raise ValueError(f"circular axis {self.name!r} needs a positive period")
            if vals[-1] - vals[0] >= self.period:
                raise ValueError(
                    f"axis {self.name!r} values must span less than one period"
                )
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ConditionGrid:
    """Ordered axes with a row-major condition-index bijection."""

    axes: tuple[GridAxis, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.axes) < 1:
            raise ValueError("grid needs at least one axis")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(axis.n for axis in self.axes)

    @property
    def n_conditions(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axis_names(self) -> tuple[str, ...]:
        return tuple(axis.name for axis in self.axes)

    def index_of(self, multi_index) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.shape))

    def multi_index_of(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(int(index), self.shape))

    def coordinates(self, index: int) -> tuple[float, ...]:
        multi = self.multi_index_of(index)
        return tuple(axis.values[i] for axis, i in zip(self.axes, multi))


def default_grid(
    n_theta: int = 6,
    n_rho: int = 5,
    n_phi: int = 4,
    theta_period: float = math.pi,
    phi_period: float = 1.0,
    rho_range: tuple[float, float] = (-2.0, 2.0),
) -> ConditionGrid:
    """Standard 6 x 5 x 4 = 120-condition grating grid."""
    theta = GridAxis(
        name="theta",
        kind="circular",
        values=tuple(theta_period * i / n_theta for i in range(n_theta)),
        period=theta_period,
    )
    rho = GridAxis(
        name="rho",
        kind="linear",
        values=tuple(np.linspace(rho_range[0], rho_range[1], n_rho)),
    )
    phi = GridAxis(
        name="phi",
        kind="circular",
        values=tuple(phi_period * i / n_phi for i in range(n_phi)),
        period=phi_period,
    )
    return ConditionGrid(axes=(theta, rho, phi))


def grid_to_dict(grid: ConditionGrid) -> dict:
    axes = []
    for axis in grid.axes:
        entry = {"name": axis.name, "kind": axis.kind, "values": list(axis.values)}
        if axis.period is not None:
            entry["period"] = axis.period
        axes.append(entry)
    return {"axes": axes}


def grid_from_dict(obj: dict) -> ConditionGrid:
    axes = tuple(
        GridAxis(
            name=a["name"],
            kind=a["kind"],
            values=tuple(a["values"]),
            period=a.get("period"),
        )
        for a in obj["axes"]
    )
    return ConditionGrid(axes=axes)


def save_grid(grid: ConditionGrid, path) -> None:
    with open(path, "w") as fh:
        json.dump(grid_to_dict(grid), fh, sort_keys=True)


def load_grid(path) -> ConditionGrid:
    with open(path) as fh:
        return grid_from_dict(json.load(fh))


@dataclass(frozen=True)
class ExperimentRecord:
    """Trials of one experiment: condition indices plus response vectors."""

    experiment_id: str
    donor_id: str
    label: str
    conditions: np.ndarray  # (n_trials,) int condition indices
    responses: np.ndarray  # (n_trials, n_cells)

    def __post_init__(self):
        cond = np.asarray(self.conditions, dtype=int)
        resp = np.asarray(self.responses, dtype=float)
        if resp.ndim != 2 or cond.shape != (resp.shape[0],):
            raise DimMismatch("conditions (t,) and responses (t, n_cells) must align")
        if not np.all(np.isfinite(resp)):
            raise ValueError("responses contain non-finite values")
        cond.setflags(write=False)
        resp.setflags(write=False)
        object.__setattr__(self, "conditions", cond)
        object.__setattr__(self, "responses", resp)

    @property
    def n_trials(self) -> int:
        return self.responses.shape[0]

    @property
    def n_cells(self) -> int:
        return self.responses.shape[1]

    def restrict_cells(self, cell_indices) -> "ExperimentRecord":
        idx = np.asarray(cell_indices, dtype=int)
        return replace(self, responses=self.responses[:, idx])

    def restrict_trials(self, trial_indices) -> "ExperimentRecord":
        idx = np.asarray(trial_indices, dtype=int)
        return replace(
            self, conditions=self.conditions[idx], responses=self.responses[idx]
        )


def save_trials_csv(records, path) -> None:
    """experiment_id, donor_id, label, condition_index, then cell columns."""
    records = list(records)
    n_cells = records[0].n_cells
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["experiment_id", "donor_id", "label", "condition_index"]
            + [f"c{i}" for i in range(n_cells)]
        )
        for rec in records:
            for cond, resp in zip(rec.conditions, rec.responses):
                writer.writerow(
                    [rec.experiment_id, rec.donor_id, rec.label, int(cond)]
                    + [repr(float(v)) for v in resp]
                )


def load_trials_csv(path) -> list[ExperimentRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(io.StringIO(fh.read())))
    rows = [r for r in rows if r]
    header, body = rows[0], rows[1:]
    if header[:4] != ["experiment_id", "donor_id", "label", "condition_index"]:
        raise ValueError(f"{path}: bad trials header {header[:4]!r}")
    grouped: dict[str, dict] = {}
    order = []
    for row in body:
        exp_id = row[0]
        if exp_id not in grouped:
            grouped[exp_id] = {"donor": row[1], "label": row[2], "conds": [], "resps": []}
            order.append(exp_id)
        grouped[exp_id]["conds"].append(int(row[3]))
        grouped[exp_id]["resps"].append([float(v) for v in row[4:]])
    return [
        ExperimentRecord(
            experiment_id=exp_id,
            donor_id=grouped[exp_id]["donor"],
            label=grouped[exp_id]["label"],
            conditions=np.asarray(grouped[exp_id]["conds"], dtype=int),
            responses=np.asarray(grouped[exp_id]["resps"], dtype=float),
        )
        for exp_id in order
    ]


# --------------------------------------------------------------- estimation


@dataclass(frozen=True)
class ConditionMeans:
    """Per-condition trial means; rows with zero trials are NaN-flagged."""

    values: np.ndarray  # (n_conditions, n_cells), NaN where missing
    counts: np.ndarray  # (n_conditions,) trial counts

    @property
    def missing(self) -> np.ndarray:
        return self.counts == 0


def condition_means(record: ExperimentRecord, grid: ConditionGrid) -> ConditionMeans:
    n_cond = grid.n_conditions
    if record.n_trials == 0:
        raise InsufficientData("record has no trials")
    if np.any(record.conditions < 0) or np.any(record.conditions >= n_cond):
        raise ValueError("condition index outside the grid")
    sums = np.zeros((n_cond, record.n_cells))
    counts = np.zeros(n_cond, dtype=int)
    np.add.at(sums, record.conditions, record.responses)
    np.add.at(counts, record.conditions, 1)
    if np.all(counts == 0):
        raise InsufficientData("no condition has any trials")
    values = np.full((n_cond, record.n_cells), np.nan)
    seen = counts > 0
    values[seen] = sums[seen] / counts[seen, None]
    return ConditionMeans(values=values, counts=counts)


@dataclass(frozen=True)
class PooledCovariance:
    """Shrunk, floored pooled residual covariance (strictly PD)."""

    sigma: np.ndarray
    intensity: float
    n_residuals: int

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("shrinkage intensity must lie in [0, 1]")
        s = np.asarray(self.sigma, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)


def pooled_shrinkage_covariance(
    record: ExperimentRecord,
    grid: ConditionGrid,
    means: ConditionMeans | None = None,
    eps_spd: float = DEFAULT_EPS_SPD,
) -> PooledCovariance:
    """Ledoit-Wolf shrinkage on centered within-condition residuals.

    After shrinkage the covariance gets eps_spd * I added, is symmetrized,
    and has its eigenvalues floored at eps_spd, so it is PD before any
    inversion. Zero-dispersion residuals shrink fully to the (scaled)
    identity target.
    """
    if means is None:
        means = condition_means(record, grid)
    keep = means.counts[record.conditions] > 0
    residuals = record.responses[keep] - means.values[record.conditions[keep]]
    if residuals.shape[0] < 2:
        raise InsufficientData("need at least 2 residuals for a pooled covariance")
    centered = residuals - residuals.mean(axis=0)
    p = centered.shape[1]
    emp = centered.T @ centered / centered.shape[0]
    mu = float(np.trace(emp)) / p
    dispersion = float(np.sum((emp - mu * np.eye(p)) ** 2)) / p
    if dispersion <= 1e-30 * max(mu, 1.0) ** 2:
        # no sample dispersion around the scaled-identity target
        shrunk, intensity = mu * np.eye(p), 1.0
    else:
        shrunk, intensity = ledoit_wolf(centered, assume_centered=True)
    regularized = shrunk + eps_spd * np.eye(p)
    regularized = (regularized + regularized.T) / 2.0
    vals, vecs = np.linalg.eigh(regularized)
    vals = np.maximum(vals, eps_spd)
    sigma = (vecs * vals) @ vecs.T
    return PooledCovariance(
        sigma=(sigma + sigma.T) / 2.0,
        intensity=float(intensity),
        n_residuals=int(centered.shape[0]),
    )


def _axis_neighbor_steps(axis: GridAxis, i: int) -> tuple[int, int, float]:
    """(prev index, next index, centered denominator) for one axis position."""
    n = axis.n
    if axis.kind == "circular":
        if n < 2:
            raise GridTooSmall(f"circular axis {axis.name!r} needs >= 2 values")
        prev_i, next_i = (i - 1) % n, (i + 1) % n
        vals = axis.values
        gap_next = (vals[next_i] - vals[i]) % axis.period
        gap_prev = (vals[i] - vals[prev_i]) % axis.period
        if gap_next == 0.0:
            gap_next = axis.period
        if gap_prev == 0.0:
            gap_prev = axis.period
        return prev_i, next_i, gap_prev + gap_next
    if n < 3:
        raise GridTooSmall(f"linear axis {axis.name!r} needs >= 3 values")
    if i == 0 or i == n - 1:
        raise UndefinedGridPoint(
            f"axis {axis.name!r} endpoint {i} lacks both neighbors"
        )
    return i - 1, i + 1, axis.values[i + 1] - axis.values[i - 1]


def finite_difference_jacobian(
    means: ConditionMeans, grid: ConditionGrid, index: int
) -> np.ndarray:
    """Centered-difference response Jacobian (n_cells x n_axes) at a grid point.

    Circular axes wrap with period-aware steps; linear axes need interior
    points. Raises :class:`UndefinedGridPoint` when the stencil touches a
    missing condition, an endpoint, or the point itself is unmeasured.
    """
    multi = grid.multi_index_of(index)
    if means.missing[index]:
        raise UndefinedGridPoint(f"condition {index} has no trials")
    n_cells = means.values.shape[1]
    jac = np.empty((n_cells, len(grid.axes)))
    for a, axis in enumerate(grid.axes):
        prev_i, next_i, denom = _axis_neighbor_steps(axis, multi[a])
        prev_multi = list(multi)
        next_multi = list(multi)
        prev_multi[a] = prev_i
        next_multi[a] = next_i
        prev_idx = grid.index_of(prev_multi)
        next_idx = grid.index_of(next_multi)
        if means.missing[prev_idx] or means.missing[next_idx]:
            raise UndefinedGridPoint(
                f"stencil for condition {index} touches a missing condition"
            )
        jac[:, a] = (means.values[next_idx] - means.values[prev_idx]) / denom
    return jac


def valid_grid_points(means: ConditionMeans, grid: ConditionGrid) -> list[int]:
    """Grid points where the full finite-difference stencil is available."""
    out = []
    for index in range(grid.n_conditions):
        try:
            finite_difference_jacobian(means, grid, index)
        except UndefinedGridPoint:
            continue
        out.append(index)
    return out


def experiment_operators(
    record: ExperimentRecord,
    grid: ConditionGrid,
    mode: str = "fisher",
    *,
    eps_spd: float = DEFAULT_EPS_SPD,
) -> SensitivitySummary:
    """Average local metric Dmuᵀ Sigma^{-1} Dmu (or Dmuᵀ Dmu) over valid points."""
    if mode not in ("fisher", "naive"):
        raise ValueError("mode must be 'fisher' or 'naive'")
    means = condition_means(record, grid)
    if mode == "fisher":
        pooled = pooled_shrinkage_covariance(record, grid, means, eps_spd=eps_spd)
        chol = scipy.linalg.cho_factor(pooled.sigma)
        noise = {"kind": "pooled-shrinkage", "intensity": pooled.intensity}
    else:
        chol = None
        noise = {"kind": "identity"}
    points = valid_grid_points(means, grid)
    if not points:
        raise InsufficientData("no grid point has a complete stencil")
    q = len(grid.axes)
    acc = np.zeros((q, q))
    for index in points:
        jac = finite_difference_jacobian(means, grid, index)
        if chol is None:
            acc += jac.T @ jac
        else:
            acc += jac.T @ scipy.linalg.cho_solve(chol, jac)
    return SensitivitySummary(
        operator=acc / len(points),
        n_samples=len(points),
        family_id="grid:" + ",".join(grid.axis_names),
        kind="F" if mode == "fisher" else "G",
        noise=noise,
    )


def coordinate_selection_family(grid: ConditionGrid, axis_subset) -> "PerturbationFamily":
    """The axis-subset selection matrix P_Q as a perturbation family."""
    from .summaries import PerturbationFamily

    names = list(grid.axis_names)
    subset = list(axis_subset)
    unknown = [q for q in subset if q not in names]
    if unknown:
        raise ValueError(f"unknown axes {unknown}; grid has {names}")
    basis = np.zeros((len(names), len(subset)))
    for col, name in enumerate(subset):
        basis[names.index(name), col] = 1.0
    return PerturbationFamily(
        id="grid:" + ",".join(subset),
        basis=basis,
        kind="coordinate-selection",
        parent_id="grid:" + ",".join(names),
    )


def family_restriction(
    summary: SensitivitySummary, axis_subset, shape_only: bool = False
) -> SensitivitySummary:
    """Coordinate-selection restriction P_Qᵀ F P_Q to a subset of axes.

    ``axis_subset`` lists axis names in the order stored in the summary's
    family id. Shape-only (trace-normalized) restriction needs at least
    two coordinates: every nonzero 1 x 1 operator normalizes identically.
    """
    if not summary.family_id.startswith("grid:"):
        raise ValueError("family_restriction applies to grid summaries")
    names = summary.family_id[len("grid:") :].split(",")
    subset = list(axis_subset)
    if not subset:
        raise ValueError("axis subset must be non-empty")
    unknown = [q for q in subset if q not in names]
    if unknown:
        raise ValueError(f"unknown axes {unknown}; grid has {names}")
    idx = [names.index(q) for q in subset]
    op = summary.operator[np.ix_(idx, idx)]
    fam = "grid:" + ",".join(subset)
    if shape_only:
        if len(subset) < 2:
            raise ValueError("shape-only restriction undefined for 1-D families")
        tr = float(np.trace(op))
        if tr <= 0.0:
            raise ValueError("shape-only restriction needs a positive-trace operator")
        op = op / tr
        fam += "|shape"
    return replace(summary, operator=op, family_id=fam)


def matched_subsample_operators(
    record: ExperimentRecord,
    grid: ConditionGrid,
    mode: str,
    n_match: int,
    n_subsamples: int,
    seed: int,
    *,
    eps_spd: float = DEFAULT_EPS_SPD,
) -> SensitivitySummary:
    """Average operator over seeded matched-count cell subsamples.

    Each subsample draws n_match cells without replacement and recomputes
    means, covariance, and the operator on those cells only.
    """
    if n_subsamples < 1:
        raise ValueError("n_subsamples must be >= 1")
    if record.n_cells < n_match:
        raise InsufficientData(
            f"experiment {record.experiment_id!r} has {record.n_cells} cells < "
            f"n_match {n_match}"
        )
    rng = np.random.default_rng(seed)
    total = None
    n_samples = 0
    for _ in range(n_subsamples):
        cells = np.sort(rng.choice(record.n_cells, size=n_match, replace=False))
        sub = experiment_operators(
            record.restrict_cells(cells), grid, mode, eps_spd=eps_spd
        )
        total = sub.operator if total is None else total + sub.operator
        n_samples = sub.n_samples
        noise = sub.noise
    noise = dict(noise)
    noise["subsamples"] = n_subsamples
    noise["n_match"] = n_match
    return SensitivitySummary(
        operator=total / n_subsamples,
        n_samples=n_samples,
        family_id="grid:" + ",".join(grid.axis_names),
        kind="F" if mode == "fisher" else "G",
        noise=noise,
    )


def split_half_reliability(
    record: ExperimentRecord,
    grid: ConditionGrid,
    mode: str = "fisher",
    n_repeats: int = 2,
    seed: int = 0,
    *,
    eps_spd: float = DEFAULT_EPS_SPD,
    eps_reg: float = DEFAULT_EPS_REG,
) -> float:
    """Mean S-RAS similarity between operators from disjoint trial halves.

    Trials are split within each condition; conditions with fewer than 2
    trials are dropped from both halves.
    """
    by_condition: dict[int, np.ndarray] = {}
    for cond in np.unique(record.conditions):
        by_condition[int(cond)] = np.flatnonzero(record.conditions == cond)
    splittable = {c: idx for c, idx in by_condition.items() if idx.size >= 2}
    if not splittable:
        raise InsufficientData("no condition has >= 2 trials to split")
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(n_repeats):
        first, second = [], []
        for idx in splittable.values():
            perm = rng.permutation(idx.size)
            half = idx.size // 2
            first.extend(idx[perm[:half]])
            second.extend(idx[perm[half:]])
        op_a = experiment_operators(
            record.restrict_trials(np.sort(first)), grid, mode, eps_spd=eps_spd
        )
        op_b = experiment_operators(
            record.restrict_trials(np.sort(second)), grid, mode, eps_spd=eps_spd
        )
        cert = sras_score(
            spd_lift(op_a.operator, eps_reg), spd_lift(op_b.operator, eps_reg)
        )
        scores.append(cert.sras)
    return float(np.mean(scores))


# --------------------------------------------------- synthetic tuned cells


@dataclass(frozen=True)
class TuningCell:
    """Separable tuning: von Mises in theta/phi, Gaussian in rho.

    kappa = 0 (or inv_width2 = 0) switches the corresponding factor off,
    making the cell constant along that axis.
    """

    amplitude: float
    theta_pref: float
    theta_kappa: float
    rho_pref: float
    rho_inv_width2: float
    phi_pref: float
    phi_kappa: float
    baseline: float = 0.0


def _vm(x, pref, kappa, period):
    return math.exp(kappa * (math.cos(2.0 * math.pi * (x - pref) / period) - 1.0))


def _vm_grad(x, pref, kappa, period):
    w = 2.0 * math.pi / period
    return -kappa * w * math.sin(w * (x - pref)) * _vm(x, pref, kappa, period)


@dataclass(frozen=True)
class PopulationGenerator:
    """Noisy population responses with known tuning and isotropic noise.

    Trial responses are gain * (mu(s) + noise_sigma * xi), so the true
    trial covariance is (gain * noise_sigma)^2 I and the noise-aware
    operator is gain-invariant while the naive operator scales as gain^2.
    """

    cells: tuple[TuningCell, ...]
    noise_sigma: float
    gain: float = 1.0

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def _factors(self, cell: TuningCell, s, grid: ConditionGrid):
        theta_ax, rho_ax, phi_ax = grid.axes
        th = _vm(s[0], cell.theta_pref, cell.theta_kappa, theta_ax.period)
        rh = math.exp(-0.5 * cell.rho_inv_width2 * (s[1] - cell.rho_pref) ** 2)
        ph = _vm(s[2], cell.phi_pref, cell.phi_kappa, phi_ax.period)
        return th, rh, ph

    def mean_response(self, s, grid: ConditionGrid) -> np.ndarray:
        out = np.empty(self.n_cells)
        for i, cell in enumerate(self.cells):
            th, rh, ph = self._factors(cell, s, grid)
            out[i] = cell.baseline + cell.amplitude * th * rh * ph
        return self.gain * out

    def mean_gradient(self, s, grid: ConditionGrid) -> np.ndarray:
        """Exact (n_cells x 3) gradient of the tuning curves at s."""
        theta_ax, _, phi_ax = grid.axes
        out = np.empty((self.n_cells, 3))
        for i, cell in enumerate(self.cells):
            th, rh, ph = self._factors(cell, s, grid)
            dth = _vm_grad(s[0], cell.theta_pref, cell.theta_kappa, theta_ax.period)
            drh = -cell.rho_inv_width2 * (s[1] - cell.rho_pref) * rh
            dph = _vm_grad(s[2], cell.phi_pref, cell.phi_kappa, phi_ax.period)
            out[i, 0] = cell.amplitude * dth * rh * ph
            out[i, 1] = cell.amplitude * th * drh * ph
            out[i, 2] = cell.amplitude * th * rh * dph
        return self.gain * out

    def condition_mean_matrix(self, grid: ConditionGrid) -> np.ndarray:
        return np.vstack(
            [self.mean_response(grid.coordinates(i), grid) for i in range(grid.n_conditions)]
        )

    def sample_record(
        self,
        grid: ConditionGrid,
        trials_per_condition: int,
        seed: int,
        experiment_id: str = "synthetic",
        donor_id: str = "donor0",
        label: str = "A",
    ) -> ExperimentRecord:
        rng = np.random.default_rng(seed)
        mu = self.condition_mean_matrix(grid)
        conds = np.repeat(np.arange(grid.n_conditions), trials_per_condition)
        noise = rng.normal(size=(conds.size, self.n_cells))
        responses = mu[conds] + self.gain * self.noise_sigma * noise
        return ExperimentRecord(
            experiment_id=experiment_id,
            donor_id=donor_id,
            label=label,
            conditions=conds,
            responses=responses,
        )

    def _stencil_jacobians(self, grid: ConditionGrid):
        mu = self.condition_mean_matrix(grid)
        means = ConditionMeans(values=mu, counts=np.ones(grid.n_conditions, dtype=int))
        return [
            finite_difference_jacobian(means, grid, idx)
            for idx in valid_grid_points(means, grid)
        ]

    def fd_fisher_oracle(self, grid: ConditionGrid, mode: str = "fisher") -> np.ndarray:
        """Closed-form operator: grid stencil applied to the true tuning curves.

        Uses the true noise covariance (gain * sigma)^2 I; independent of
        trial sampling, mean estimation, and covariance shrinkage.
        """
        jacs = self._stencil_jacobians(grid)
        if mode == "fisher":
            if self.noise_sigma <= 0:
                raise ValueError("fisher oracle needs noise_sigma > 0")
            scale = 1.0 / (self.gain * self.noise_sigma) ** 2
        elif mode == "naive":
            scale = 1.0
        else:
            raise ValueError("mode must be 'fisher' or 'naive'")
        acc = sum(jac.T @ jac for jac in jacs)
        return scale * acc / len(jacs)

    def exact_gradient_operator(self, grid: ConditionGrid, mode: str = "naive") -> np.ndarray:
        """Same average but with exact gradients instead of the stencil."""
        points = [grid.coordinates(i) for i in range(grid.n_conditions)]
        jacs = [self.mean_gradient(s, grid) for s in points]
        scale = 1.0
        if mode == "fisher":
            scale = 1.0 / (self.gain * self.noise_sigma) ** 2
        acc = sum(jac.T @ jac for jac in jacs)
        return scale * acc / len(jacs)


def make_population(
    n_cells: int,
    seed: int,
    grid: ConditionGrid | None = None,
    *,
    theta_weight: float = 1.0,
    rho_weight: float = 1.0,
    phi_weight: float = 1.0,
    amplitude: float = 1.0,
    noise_sigma: float = 0.1,
    gain: float = 1.0,
) -> PopulationGenerator:
    """Random tuned population; axis weights scale tuning sharpness.

    A weight of zero makes every cell constant along that axis, zeroing
    the corresponding Fisher row/column.
    """
    if grid is None:
        grid = default_grid()
    theta_ax, rho_ax, phi_ax = grid.axes
    rng = np.random.default_rng(seed)
    cells = []
    rho_lo, rho_hi = rho_ax.values[0], rho_ax.values[-1]
    for _ in range(n_cells):
        cells.append(
            TuningCell(
                amplitude=amplitude * float(rng.uniform(0.5, 1.5)),
                theta_pref=float(rng.uniform(0.0, theta_ax.period)),
                theta_kappa=theta_weight * float(rng.uniform(0.5, 1.0)),
                rho_pref=float(rng.uniform(rho_lo, rho_hi)),
                rho_inv_width2=rho_weight * float(rng.uniform(0.1, 0.3)),
                phi_pref=float(rng.uniform(0.0, phi_ax.period)),
                phi_kappa=phi_weight * float(rng.uniform(0.5, 1.0)),
                baseline=float(rng.uniform(0.0, 0.2)),
            )
        )
    return PopulationGenerator(cells=tuple(cells), noise_sigma=noise_sigma, gain=gain)
