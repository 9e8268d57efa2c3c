"""Non-uniform piecewise-linear interpolant and its segment-coefficient form.

A model with ``n`` breakpoints has ``n + 1`` segments. Segment ``i`` covers
``(p[i-1], p[i]]``; segment 0 is everything ``<= p[0]`` and segment ``n``
everything ``> p[n-1]``. A breakpoint is owned by the segment to its left.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import activations as act
from .activations import ASYMPTOTE, FREE, ActivationSpec
from .errors import InvalidArgumentError, InvalidInputError

MIN_GAP_FRACTION = 1e-6


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PwlModel:
    p: np.ndarray
    v: np.ndarray
    m_l: float
    m_r: float
    left_mode: str = FREE
    right_mode: str = FREE
    function: Optional[str] = None
    interval: Optional[tuple[float, float]] = None
    fit_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        p = _frozen(self.p)
        v = _frozen(self.v)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "m_l", float(self.m_l))
        object.__setattr__(self, "m_r", float(self.m_r))
        if p.ndim != 1 or p.shape != v.shape or p.size < 2:
            raise InvalidArgumentError("need matching p, v with at least 2 breakpoints")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))
                and np.isfinite(self.m_l) and np.isfinite(self.m_r)):
            raise InvalidArgumentError("model parameters must be finite")
        gaps = np.diff(p)
        # projection clamps to exactly min_gap; allow for rounding in that sum
        if np.any(gaps < 0.99 * min_gap(p)) or np.any(gaps <= 0):
            raise InvalidArgumentError("breakpoints must be strictly increasing")
        for mode in (self.left_mode, self.right_mode):
            if mode not in (ASYMPTOTE, FREE):
                raise InvalidArgumentError(f"bad boundary mode {mode!r}")

    @property
    def n(self) -> int:
        return int(self.p.size)

    def __call__(self, x):
        return eval_pwl(self, x)

    def replace(self, **changes) -> "PwlModel":
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, PwlModel):
            return NotImplemented
        return (np.array_equal(self.p, other.p) and np.array_equal(self.v, other.v)
                and self.m_l == other.m_l and self.m_r == other.m_r
                and self.left_mode == other.left_mode and self.right_mode == other.right_mode)

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "interval": list(self.interval) if self.interval is not None else None,
            "p": self.p.tolist(),
            "v": self.v.tolist(),
            "m_l": self.m_l,
            "m_r": self.m_r,
            "boundary_modes": [self.left_mode, self.right_mode],
            "fit_metadata": self.fit_metadata,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "PwlModel":
        interval = d.get("interval")
        left, right = d.get("boundary_modes", [FREE, FREE])
        return cls(
            p=d["p"], v=d["v"], m_l=d["m_l"], m_r=d["m_r"],
            left_mode=left, right_mode=right,
            function=d.get("function"),
            interval=tuple(interval) if interval is not None else None,
            fit_metadata=d.get("fit_metadata") or {},
        )

    @classmethod
    def from_json(cls, text: str) -> "PwlModel":
        return cls.from_dict(json.loads(text))


def min_gap(p) -> float:
    return MIN_GAP_FRACTION * float(p[-1] - p[0])


@dataclass(frozen=True)
class SegmentCoeffs:
    m: np.ndarray
    q: np.ndarray

    def __len__(self):
        return int(self.m.size)

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.m.tolist(), self.q.tolist()))


def _check_finite(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("input must be finite")
    return arr


def segment_index(model: PwlModel, x):
    """Index in ``[0, n]`` of the segment holding ``x`` (ties go left)."""
    arr = _check_finite(x)
    idx = np.searchsorted(model.p, arr, side="left")
    if np.ndim(x) == 0:
        return int(idx)
    return idx


def eval_pwl(model: PwlModel, x):
    arr = _check_finite(x)
    p, v = model.p, model.v
    n = p.size
    j = np.clip(np.searchsorted(p, arr, side="right") - 1, 0, n - 2)
    p0, p1 = p[j], p[j + 1]
    inner = (v[j + 1] - v[j]) / (p1 - p0) * (arr - p0) + v[j]
    out = np.where(arr <= p[0], model.m_l * (arr - p[0]) + v[0],
                   np.where(arr >= p[-1], model.m_r * (arr - p[-1]) + v[-1], inner))
    if np.ndim(x) == 0:
        return float(out)
    return out


def to_segment_coeffs(model: PwlModel) -> SegmentCoeffs:
    p, v = model.p, model.v
    inner_m = np.diff(v) / np.diff(p)
    inner_q = v[:-1] - inner_m * p[:-1]
    m = np.concatenate(([model.m_l], inner_m, [model.m_r]))
    q = np.concatenate(([v[0] - model.m_l * p[0]], inner_q, [v[-1] - model.m_r * p[-1]]))
    return SegmentCoeffs(m, q)


def eval_coeffs(coeffs: SegmentCoeffs, p, x):
    """Evaluate ``m_i * x + q_i`` on the segment selected by ``p``."""
    arr = _check_finite(x)
    i = np.searchsorted(np.asarray(p), arr, side="left")
    return coeffs.m[i] * arr + coeffs.q[i]


def apply_boundary(model: PwlModel, spec: ActivationSpec) -> PwlModel:
    """Put asymptote-mode outer segments onto the target's asymptote.

    Only the outer slope and the boundary value are overwritten; the
    boundary breakpoints keep their positions.
    """
    info = act.boundary_info(spec)
    v = model.v.copy()
    m_l, m_r = model.m_l, model.m_r
    if model.left_mode == ASYMPTOTE:
        m_l = info.m_l
        v[0] = info.m_l * model.p[0] + info.c_l
    if model.right_mode == ASYMPTOTE:
        m_r = info.m_r
        v[-1] = info.m_r * model.p[-1] + info.c_r
    return model.replace(v=v, m_l=m_l, m_r=m_r)


def resolve_modes(spec: ActivationSpec, left: Optional[str] = None, right: Optional[str] = None):
    """Boundary modes for a fit; a side can be forced free but never to asymptote
    when the function has none there."""
    info = act.boundary_info(spec)
    modes = []
    for requested, native in ((left, info.left_mode), (right, info.right_mode)):
        if requested is None:
            modes.append(native)
        elif requested == ASYMPTOTE and native != ASYMPTOTE:
            raise InvalidArgumentError(f"{spec} has no asymptote on that side")
        else:
            modes.append(requested)
    return tuple(modes)


def uniform_init(spec: ActivationSpec, interval, n: int,
                 left_mode: Optional[str] = None, right_mode: Optional[str] = None) -> PwlModel:
    """Uniform breakpoints with exact function values, boundary applied."""
    a, b = float(interval[0]), float(interval[1])
    if n < 2:
        raise InvalidArgumentError("need at least 2 breakpoints")
    if not a < b:
        raise InvalidArgumentError("interval must satisfy a < b")
    lm, rm = resolve_modes(spec, left_mode, right_mode)
    p = a + np.arange(n) * ((b - a) / (n - 1))
    p[-1] = b
    v = act.eval_exact(spec, p)
    info = act.boundary_info(spec)
    m_l = info.m_l if lm == ASYMPTOTE else act.derivative(spec, a)
    m_r = info.m_r if rm == ASYMPTOTE else act.derivative(spec, b)
    model = PwlModel(p, v, m_l, m_r, lm, rm, function=str(spec), interval=(a, b))
    return apply_boundary(model, spec)
