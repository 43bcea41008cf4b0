"""Differentiable representation maps with exact forward-mode JVPs.

A :class:`RepMap` is a feedforward stack of dense and elementwise
activation layers; a :class:`FixedPointMap` is a convergent recurrent
system r* = sigma(W r* + u(x)) treated as the map x -> r*(x). Both
expose ``forward`` and ``jvp``; the JVP is exact forward-mode
differentiation (value and tangent propagated jointly), never a finite
difference. For the fixed-point map the Jacobian comes from implicit
differentiation: J(x) = (I - D(x) W)^{-1} D(x) du/dx with
D(x) = diag(sigma'(W r* + u(x))).

Because constant output shifts have zero derivative, adding a bias to
the final layer leaves every JVP (and hence every downstream sensitivity
summary) bit-identical.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimMismatch, InvalidMatrix, NoConvergence, SingularLinearization

__all__ = [
    "LayerSpec",
    "RepMap",
    "FixedPointMap",
    "FixedPointSolution",
    "ACTIVATIONS",
    "load_model",
    "save_model",
    "load_dataset",
    "save_dataset",
]


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# name -> (value, derivative). ReLU derivative at exactly 0 is 0 (subgradient
# convention, measure-zero set).
ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
    "softplus": (_softplus, _sigmoid),
}

# sup |sigma'| for the supported activations (used by the contraction proxy).
_ACTIVATION_LIPSCHITZ = {"relu": 1.0, "tanh": 1.0, "identity": 1.0, "softplus": 1.0}


@dataclass(frozen=True)
class LayerSpec:
    """One layer: either dense (weight + bias) or an elementwise activation."""

    kind: str
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None
    fn: str | None = None

    def __post_init__(self):
        if self.kind == "dense":
            w = np.asarray(self.weight, dtype=float)
            b = np.asarray(self.bias, dtype=float)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise InvalidMatrix("dense layer needs W (m, n) and b (m,)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidMatrix("dense layer has non-finite weights")
            object.__setattr__(self, "weight", w)
            object.__setattr__(self, "bias", b)
        elif self.kind == "activation":
            if self.fn not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.fn!r}")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @staticmethod
    def dense(weight, bias) -> "LayerSpec":
        return LayerSpec(kind="dense", weight=weight, bias=bias)

    @staticmethod
    def activation(fn: str) -> "LayerSpec":
        return LayerSpec(kind="activation", fn=fn)


class RepMap:
    """Feedforward representation map with forward-mode JVPs.

    Parameters
    ----------
    layers : list of LayerSpec
        Consecutive dense dimensions must chain; activations preserve width.
    input_dim : int
    classifier : bool
        Marks the final output as logits, enabling :meth:`margin`.
    """

    def __init__(self, layers, input_dim: int, classifier: bool = False):
        if not layers:
            raise ValueError("RepMap needs at least one layer")
        self.layers = list(layers)
        self.input_dim = int(input_dim)
        self.classifier = bool(classifier)
        dims = [self.input_dim]
        for spec in self.layers:
            if spec.kind == "dense":
                if spec.weight.shape[1] != dims[-1]:
                    raise DimMismatch(
                        f"dense layer expects input dim {spec.weight.shape[1]}, "
                        f"previous width is {dims[-1]}"
                    )
                dims.append(spec.weight.shape[0])
            else:
                dims.append(dims[-1])
        # output width after each layer; index 0 is the input itself
        self.widths = dims

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def _check_layer_index(self, layer_index) -> int:
        if layer_index is None:
            return self.depth
        layer_index = int(layer_index)
        if not 0 <= layer_index <= self.depth:
            raise DimMismatch(
                f"layer_index {layer_index} out of range 0..{self.depth}"
            )
        return layer_index

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimMismatch(f"expected input of shape ({self.input_dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidMatrix("input contains non-finite values")
        return x

    def forward(self, x, layer_index=None) -> np.ndarray:
        """Activations after the first ``layer_index`` layers (default: all)."""
        stop = self._check_layer_index(layer_index)
        h = self._check_input(x)
        for spec in self.layers[:stop]:
            if spec.kind == "dense":
                h = spec.weight @ h + spec.bias
            else:
                h = ACTIVATIONS[spec.fn][0](h)
        return h

    def forward_batch(self, x, layer_index=None) -> np.ndarray:
        """Vectorized forward over rows of ``x`` (n, input_dim)."""
        stop = self._check_layer_index(layer_index)
        h = np.asarray(x, dtype=float)
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise DimMismatch(f"expected (n, {self.input_dim}) batch, got {h.shape}")
        for spec in self.layers[:stop]:
            if spec.kind == "dense":
                h = h @ spec.weight.T + spec.bias
            else:
                h = ACTIVATIONS[spec.fn][0](h)
        return h

    def _propagate(self, x, tangents, stop):
        """Jointly propagate value and tangent columns through the stack."""
        h = x
        t = tangents
        for spec in self.layers[:stop]:
            if spec.kind == "dense":
                h = spec.weight @ h + spec.bias
                t = spec.weight @ t
            else:
                value_fn, deriv_fn = ACTIVATIONS[spec.fn]
                t = deriv_fn(h)[:, None] * t
                h = value_fn(h)
        return h, t

    def jvp(self, x, v, layer_index=None) -> np.ndarray:
        """Exact directional derivative d/de f(x + e v) at e = 0."""
        stop = self._check_layer_index(layer_index)
        x = self._check_input(x)
        v = np.asarray(v, dtype=float)
        if v.shape != (self.input_dim,):
            raise DimMismatch(f"tangent must have shape ({self.input_dim},)")
        _, t = self._propagate(x, v[:, None], stop)
        return t[:, 0]

    def jacobian_columns(self, x, basis, layer_index=None) -> np.ndarray:
        """J(x) @ P for a (d, k) basis P; column j equals jvp(x, P[:, j])."""
        stop = self._check_layer_index(layer_index)
        x = self._check_input(x)
        p = np.asarray(getattr(basis, "basis", basis), dtype=float)
        if p.ndim != 2 or p.shape[0] != self.input_dim:
            raise DimMismatch(f"basis must have {self.input_dim} rows, got {p.shape}")
        _, t = self._propagate(x, p, stop)
        return t

    def margin(self, x, true_class: int) -> float:
        """True-class logit minus the best other logit."""
        if not self.classifier or self.output_dim < 2:
            raise ValueError("margin requires a classifier map with >= 2 outputs")
        logits = self.forward(x)
        true_class = int(true_class)
        if not 0 <= true_class < logits.shape[0]:
            raise IndexError(f"class {true_class} out of range 0..{logits.shape[0] - 1}")
        others = np.delete(logits, true_class)
        return float(logits[true_class] - np.max(others))


@dataclass
class FixedPointSolution:
    state: np.ndarray
    iterations: int
    residual: float


@dataclass
class FixedPointMap:
    """Equilibrium map x -> r*(x) with r* = sigma(W r* + u(x)), u(x) = W_in x + b_in.

    The solver is damped Picard iteration; the contraction proxy
    ||W||_op * sup|sigma'| is checked at construction and recorded
    (warning, not error, when >= 1).
    """

    recurrent_weight: np.ndarray
    input_weight: np.ndarray
    input_bias: np.ndarray
    activation: str = "tanh"
    max_iter: int = 500
    tol: float = 1e-10
    contraction_proxy: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.recurrent_weight, dtype=float)
        wi = np.asarray(self.input_weight, dtype=float)
        bi = np.asarray(self.input_bias, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidMatrix("recurrent weight must be square")
        if wi.ndim != 2 or wi.shape[0] != w.shape[0] or bi.shape != (w.shape[0],):
            raise InvalidMatrix("input drive dims incompatible with recurrent weight")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.recurrent_weight = w
        self.input_weight = wi
        self.input_bias = bi
        self.contraction_proxy = float(
            np.linalg.norm(w, 2) * _ACTIVATION_LIPSCHITZ[self.activation]
        )
        if self.contraction_proxy >= 1.0:
            warnings.warn(
                f"contraction proxy {self.contraction_proxy:.3f} >= 1; "
                "fixed-point iteration may not converge",
                stacklevel=2,
            )

    @property
    def input_dim(self) -> int:
        return self.input_weight.shape[1]

    @property
    def state_dim(self) -> int:
        return self.recurrent_weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.state_dim

    def drive(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise DimMismatch(f"expected input of shape ({self.input_dim},)")
        return self.input_weight @ x + self.input_bias

    def solve(self, x) -> FixedPointSolution:
        """Damped Picard iteration to residual ||r - sigma(Wr + u)||_inf <= tol."""
        u = self.drive(x)
        value_fn = ACTIVATIONS[self.activation][0]
        r = np.zeros(self.state_dim)
        alpha = 1.0
        residual = float(np.max(np.abs(r - value_fn(self.recurrent_weight @ r + u))))
        for it in range(1, self.max_iter + 1):
            target = value_fn(self.recurrent_weight @ r + u)
            r = (1.0 - alpha) * r + alpha * target
            new_residual = float(
                np.max(np.abs(r - value_fn(self.recurrent_weight @ r + u)))
            )
            if new_residual <= self.tol:
                return FixedPointSolution(state=r, iterations=it, residual=new_residual)
            if new_residual > residual:
                alpha = max(alpha / 2.0, 1e-6)
            residual = new_residual
        raise NoConvergence(
            f"no fixed point after {self.max_iter} iterations "
            f"(last residual {residual:.3e})",
            residual=residual,
        )

    def forward(self, x, layer_index=None) -> np.ndarray:
        if layer_index is not None:
            raise ValueError("fixed-point maps have a single (equilibrium) layer")
        return self.solve(x).state

    def _linearization(self, x):
        r = self.solve(x).state
        pre = self.recurrent_weight @ r + self.drive(x)
        d = ACTIVATIONS[self.activation][1](pre)
        lhs = np.eye(self.state_dim) - d[:, None] * self.recurrent_weight
        if np.linalg.cond(lhs) > 1e12:
            raise SingularLinearization("I - D(x)W is numerically singular")
        return lhs, d

    def implicit_jacobian(self, x) -> np.ndarray:
        """dr*/dx = (I - D W)^{-1} D du/dx via LU with partial pivoting."""
        lhs, d = self._linearization(x)
        rhs = d[:, None] * self.input_weight
        lu, piv = scipy.linalg.lu_factor(lhs)
        return scipy.linalg.lu_solve((lu, piv), rhs)

    def jvp(self, x, v, layer_index=None) -> np.ndarray:
        if layer_index is not None:
            raise ValueError("fixed-point maps have a single (equilibrium) layer")
        v = np.asarray(v, dtype=float)
        if v.shape != (self.input_dim,):
            raise DimMismatch(f"tangent must have shape ({self.input_dim},)")
        lhs, d = self._linearization(x)
        rhs = d * (self.input_weight @ v)
        lu, piv = scipy.linalg.lu_factor(lhs)
        return scipy.linalg.lu_solve((lu, piv), rhs)

    def jacobian_columns(self, x, basis, layer_index=None) -> np.ndarray:
        if layer_index is not None:
            raise ValueError("fixed-point maps have a single (equilibrium) layer")
        p = np.asarray(getattr(basis, "basis", basis), dtype=float)
        if p.ndim != 2 or p.shape[0] != self.input_dim:
            raise DimMismatch(f"basis must have {self.input_dim} rows, got {p.shape}")
        return self.implicit_jacobian(x) @ p


# ------------------------------------------------------------------ file IO


def model_to_dict(model: RepMap) -> dict:
    layers = []
    for spec in model.layers:
        if spec.kind == "dense":
            layers.append(
                {"kind": "dense", "W": spec.weight.tolist(), "b": spec.bias.tolist()}
            )
        else:
            layers.append({"kind": "activation", "fn": spec.fn})
    return {"input_dim": model.input_dim, "layers": layers, "classifier": model.classifier}


def model_from_dict(obj: dict) -> RepMap:
    layers = []
    for entry in obj["layers"]:
        if entry["kind"] == "dense":
            layers.append(LayerSpec.dense(entry["W"], entry["b"]))
        elif entry["kind"] == "activation":
            layers.append(LayerSpec.activation(entry["fn"]))
        else:
            raise ValueError(f"unknown layer kind {entry['kind']!r}")
    return RepMap(
        layers, input_dim=int(obj["input_dim"]), classifier=bool(obj.get("classifier", False))
    )


def save_model(model: RepMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> RepMap:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_dataset(path, x, labels=None) -> None:
    """CSV with header x0..x{d-1}[,label], one sample per row."""
    x = np.asarray(x, dtype=float)
    header = [f"x{i}" for i in range(x.shape[1])]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, row in enumerate(x):
            out = [repr(float(v)) for v in row]
            if labels is not None:
                out.append(str(int(labels[i])))
            writer.writerow(out)


def load_dataset(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a dataset CSV; returns (X, labels or None)."""
    with open(path, newline="") as fh:
        text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise ValueError(f"{path}: empty dataset file")
    has_label = header[-1].strip() == "label"
    d = len(header) - (1 if has_label else 0)
    expected = [f"x{i}" for i in range(d)] + (["label"] if has_label else [])
    if [h.strip() for h in header] != expected:
        raise ValueError(f"{path}: bad header {header!r}")
    xs, ys = [], []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}:{line_no}: expected {len(header)} columns")
        xs.append([float(v) for v in row[:d]])
        if has_label:
            ys.append(int(row[d]))
    x = np.asarray(xs, dtype=float).reshape(len(xs), d)
    return x, (np.asarray(ys, dtype=int) if has_label else None)
