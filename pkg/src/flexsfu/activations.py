"""Exact reference activation functions and their asymptotes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import InvalidArgumentError, InvalidInputError

ASYMPTOTE = "asymptote"
FREE = "free"

NAMES = ("relu", "leaky_relu", "gelu", "silu", "sigmoid", "tanh", "exp_neg", "hardswish")

# the six non-trivial functions of the precision sweep
SWEEP_FUNCTIONS = ("gelu", "silu", "sigmoid", "tanh", "exp_neg", "hardswish")


@dataclass(frozen=True)
class BoundaryInfo:
    left_mode: str
    m_l: float
    c_l: float
    right_mode: str
    m_r: float
    c_r: float

    def with_modes(self, left: Optional[str] = None, right: Optional[str] = None) -> "BoundaryInfo":
        return BoundaryInfo(
            left or self.left_mode, self.m_l, self.c_l,
            right or self.right_mode, self.m_r, self.c_r,
        )


@dataclass(frozen=True)
class ActivationSpec:
    """A target function, addressable by string, e.g. ``"leaky_relu:0.02"``."""

    name: str
    alpha: float = 0.01

    def __post_init__(self):
        if self.name not in NAMES:
            raise InvalidArgumentError(f"unknown activation {self.name!r}")

    @classmethod
    def parse(cls, text: str) -> "ActivationSpec":
        name, _, arg = text.strip().partition(":")
        if arg:
            if name != "leaky_relu":
                raise InvalidArgumentError(f"{name} takes no parameter")
            return cls(name, float(arg))
        return cls(name)

    def __str__(self) -> str:
        if self.name == "leaky_relu":
            return f"leaky_relu:{self.alpha!r}"
        return self.name

    @property
    def default_interval(self) -> tuple[float, float]:
        if self.name == "exp_neg":
            return (-10.0, 0.1)
        return (-8.0, 8.0)

    def __call__(self, x):
        return eval_exact(self, x)


_BOUNDARIES = {
    "relu": (ASYMPTOTE, 0.0, 0.0, ASYMPTOTE, 1.0, 0.0),
    "gelu": (ASYMPTOTE, 0.0, 0.0, ASYMPTOTE, 1.0, 0.0),
    "silu": (ASYMPTOTE, 0.0, 0.0, ASYMPTOTE, 1.0, 0.0),
    "hardswish": (ASYMPTOTE, 0.0, 0.0, ASYMPTOTE, 1.0, 0.0),
    "sigmoid": (ASYMPTOTE, 0.0, 0.0, ASYMPTOTE, 0.0, 1.0),
    "tanh": (ASYMPTOTE, 0.0, -1.0, ASYMPTOTE, 0.0, 1.0),
    # e^x keeps rising at the right end of its interval
    "exp_neg": (ASYMPTOTE, 0.0, 0.0, FREE, math.nan, math.nan),
}


def _raw(name: str, alpha: float, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "leaky_relu":
        return np.where(x >= 0.0, x, alpha * x)
    if name == "gelu":
        return x * 0.5 * special.erfc(-x / math.sqrt(2.0))
    if name == "silu":
        return x * special.expit(x)
    if name == "sigmoid":
        return special.expit(x)
    if name == "tanh":
        return np.tanh(x)
    if name == "exp_neg":
        return np.exp(x)
    if name == "hardswish":
        return x * np.minimum(np.maximum(x + 3.0, 0.0), 6.0) / 6.0
    raise InvalidArgumentError(name)


def eval_exact(spec: ActivationSpec, x):
    """Evaluate the target function in double precision (scalar or array)."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("activation input must be finite")
    out = _raw(spec.name, spec.alpha, arr)
    if np.ndim(x) == 0:
        return float(out)
    return out


def boundary_info(spec: ActivationSpec) -> BoundaryInfo:
    if spec.name == "leaky_relu":
        return BoundaryInfo(ASYMPTOTE, spec.alpha, 0.0, ASYMPTOTE, 1.0, 0.0)
    return BoundaryInfo(*_BOUNDARIES[spec.name])


def derivative(spec: ActivationSpec, x: float, h: float = 1e-6) -> float:
    """Central finite-difference slope, used to seed free boundary slopes."""
    return (eval_exact(spec, x + h) - eval_exact(spec, x - h)) / (2.0 * h)
