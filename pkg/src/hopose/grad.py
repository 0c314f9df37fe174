"""Packed parameter vectors, gradients, Jacobians and the finite-difference checker.

Gradients come from torch reverse-mode autodiff in float64. Central
differences are provided both as a test oracle and as a fallback Jacobian.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .model import PoseState, SkinnedModel
from .rotations import near_gimbal_lock

SPAN_NAMES = ("theta", "beta", "obj_r", "obj_t")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term '{term}' is not finite ({value})")
        self.term = term
        self.value = value


@dataclass(frozen=True)
class ParamLayout:
    """Named contiguous spans of the flat vector, in ``SPAN_NAMES`` order."""

    sizes: tuple  # ((name, size), ...)
    frozen: frozenset = frozenset()

    def __post_init__(self):
        names = [n for n, _ in self.sizes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate span names")
        unknown = set(self.frozen) - set(names)
        if unknown:
            raise ValueError(f"cannot freeze unknown spans {sorted(unknown)}")

    @classmethod
    def for_model(cls, model: SkinnedModel, frozen=()) -> "ParamLayout":
        return cls((("theta", model.theta_dim), ("beta", model.n_betas), ("obj_r", 3), ("obj_t", 3)), frozenset(frozen))

    @property
    def length(self) -> int:
        return sum(s for _, s in self.sizes)

    def slice(self, name: str) -> slice:
        start = 0
        for n, s in self.sizes:
            if n == name:
                return slice(start, start + s)
            start += s
        raise KeyError(name)

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.length, dtype=bool)
        for name in self.frozen:
            mask[self.slice(name)] = False
        return mask

    def with_frozen(self, frozen) -> "ParamLayout":
        return ParamLayout(self.sizes, frozenset(frozen))


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.layout.length:
            raise ValueError(f"vector has {v.shape[0]} entries, layout needs {self.layout.length}")
        object.__setattr__(self, "values", v)

    def span(self, name: str) -> np.ndarray:
        return self.values[self.layout.slice(name)]

    def with_values(self, values) -> "ParamVector":
        return ParamVector(values, self.layout)


@dataclass
class GradResult:
    value: float
    gradient: np.ndarray
    terms: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)


def pack(state: PoseState, frozen=()) -> ParamVector:
    sizes = tuple((n, getattr(state, n).shape[0]) for n in SPAN_NAMES)
    layout = ParamLayout(sizes, frozenset(frozen))
    return ParamVector(np.concatenate([getattr(state, n) for n in SPAN_NAMES]), layout)


def unpack(params: ParamVector) -> PoseState:
    return PoseState(**{n: params.span(n) for n in SPAN_NAMES})


def split_tensor(layout: ParamLayout, x: torch.Tensor) -> dict:
    return {n: x[layout.slice(n)] for n, _ in layout.sizes}


def _as_scalar_and_terms(out):
    if isinstance(out, tuple):
        total, terms = out
    else:
        total, terms = out, {}
    return total, terms


def _float(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def check_finite(total, terms: dict) -> None:
    for name, val in terms.items():
        v = _float(val)
        if not np.isfinite(v):
            raise NonFiniteLoss(name, v)
    v = _float(total)
    if not np.isfinite(v):
        raise NonFiniteLoss("total", v)


def evaluate_with_gradient(loss: Callable, params: ParamVector) -> GradResult:
    """Value and gradient of ``loss`` at ``params``.

    ``loss`` maps a float64 tensor of the packed vector to a scalar tensor, or
    to ``(scalar, {term: scalar})``. Frozen spans get a zero gradient.
    """
    x = torch.tensor(params.values, dtype=torch.float64, requires_grad=True)
    total, terms = _as_scalar_and_terms(loss(x))
    check_finite(total, terms)
    if total.requires_grad:
        (g,) = torch.autograd.grad(total, x, allow_unused=True)
        grad = np.zeros(params.layout.length) if g is None else g.numpy().copy()
    else:
        grad = np.zeros(params.layout.length)
    grad[~params.layout.free_mask()] = 0.0
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLoss("gradient", float("nan"))
    diag = []
    lay = params.layout
    if any(n == "obj_r" for n, _ in lay.sizes) and near_gimbal_lock(params.span("obj_r")):
        diag.append("object pitch within 1e-6 of +-pi/2 (gimbal lock)")
    return GradResult(_float(total), grad, {k: _float(v) for k, v in terms.items()}, diag)


def evaluate(loss: Callable, params: ParamVector) -> float:
    with torch.no_grad():
        total, terms = _as_scalar_and_terms(loss(torch.as_tensor(params.values, dtype=torch.float64)))
    check_finite(total, terms)
    return float(total)


def jacobian(fn: Callable, params, method: str = "autograd", h: float = 1e-5) -> np.ndarray:
    """(M, N) Jacobian of a vector map at ``params`` (ParamVector or array)."""
    x0 = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)
    if method == "fd":
        return finite_difference_jacobian(lambda v: np.asarray(fn(torch.as_tensor(v)).detach().numpy()), x0, h)
    if method != "autograd":
        raise ValueError(f"unknown Jacobian method {method!r}")
    x = torch.tensor(x0, dtype=torch.float64)
    J = torch.autograd.functional.jacobian(lambda v: fn(v).reshape(-1), x)
    return J.numpy().reshape(-1, x0.shape[0])


def finite_difference_gradient(f: Callable, x0, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient of a scalar function of a float64 vector."""
    x0 = np.asarray(x0, dtype=np.float64)
    idx = range(x0.shape[0]) if indices is None else indices
    g = np.zeros(x0.shape[0])
    for i in idx:
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def finite_difference_jacobian(f: Callable, x0, h: float = 1e-5) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    cols = []
    for i in range(x0.shape[0]):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(f(xp), dtype=np.float64) - np.asarray(f(xm), dtype=np.float64)).reshape(-1) / (2.0 * h))
    return np.stack(cols, axis=1)


def relative_error(analytic, numeric) -> np.ndarray:
    """Entry-wise |a - n| / max(|a|, |n|, floor), floor scaled by the largest |n|."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    floor = 1e-6 * max(1.0, float(np.max(np.abs(n))) if n.size else 1.0)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@dataclass
class GradCheckRow:
    term: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


def gradcheck_rows(term: str, analytic, numeric, indices=None) -> list:
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    err = relative_error(a, n)
    idx = range(a.shape[0]) if indices is None else indices
    return [GradCheckRow(term, int(i), float(a[i]), float(n[i]), float(err[i])) for i in idx]


def write_gradcheck_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["term", "index", "analytic", "numeric", "rel_err"])
        for r in rows:
            w.writerow([r.term, r.index, repr(r.analytic), repr(r.numeric), repr(r.rel_err)])
