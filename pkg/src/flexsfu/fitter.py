"""MSE-driven placement of PWL breakpoints.

Adam runs on the breakpoint positions and values with a plateau learning-rate
schedule. Between Adam runs the outer loop drops the least useful breakpoint,
adds one at the middle of the worst segment, and retrains at a lower rate.

The objective is the composite trapezoid rule on a uniform grid over the
fit interval, divided by its length. Gradients are exact for that sum.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numba
import numpy as np

from . import activations as act
from .activations import ASYMPTOTE, ActivationSpec
from .errors import DivergedError, InvalidArgumentError, TooFewBreakpointsError
from .pwl import PwlModel, apply_boundary, min_gap, uniform_init

__all__ = [
    "FitterConfig", "FitReport", "Objective", "loss_mse", "grad_loss", "inner_optimize",
    "removal_candidate", "insertion_candidate", "apply_boundary", "fit",
]


@dataclass(frozen=True)
class FitterConfig:
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grid_points: int = 100_001
    max_inner_steps: int = 5000
    inner_patience: int = 200
    inner_rel_tol: float = 1e-7
    plateau_factor: float = 0.5
    plateau_patience: int = 50
    outer_lr_decay: float = 0.5
    lr_floor: float = 1e-4
    max_outer_iters: int = 20
    outer_rel_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.beta1 < self.beta2 < 1.0:
            raise InvalidArgumentError("need 0 < beta1 < beta2 < 1")
        if self.lr <= 0:
            raise InvalidArgumentError("lr must be positive")
        if self.grid_points < 2:
            raise InvalidArgumentError("grid_points must be >= 2")

    def replace(self, **changes) -> "FitterConfig":
        d = asdict(self)
        d.update(changes)
        return FitterConfig(**d)


@dataclass
class FitReport:
    final_loss: float
    loss_history: list = field(default_factory=list)  # (step, loss, lr)
    outer_iterations: int = 0
    trace: list = field(default_factory=list)  # one dict per outer iteration
    wall_time: float = 0.0
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return {
            "final_loss": self.final_loss,
            "outer_iterations": self.outer_iterations,
            "stop_reason": self.stop_reason,
            "trace": self.trace,
            "loss_history": [list(h) for h in self.loss_history],
            "wall_time": self.wall_time,
        }

    def to_json(self, include_wall_time: bool = False, **kwargs) -> str:
        d = self.to_dict()
        if not include_wall_time:
            d.pop("wall_time")
        return json.dumps(d, **kwargs)

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "lr"])
        for step, loss, lr in self.loss_history:
            w.writerow([step, repr(loss), repr(lr)])
        return buf.getvalue()


@numba.njit(cache=True, fastmath={"reassoc", "contract"})
def _sweep(x, f, w, p, v, m_l, m_r, tot, mom, sq):
    """Per-segment sums over the sorted grid.

    tot[j] = sum w*r, mom[j] = sum w*r*(x - anchor_j), sq[j] = sum w*r*r over
    the samples of segment j, anchor_j being its left breakpoint (p[0] for j=0).
    Returns the total of sq.
    """
    n = p.size
    bounds = np.searchsorted(x, p, side="right")
    loss = 0.0
    start = 0
    for j in range(n + 1):
        end = bounds[j] if j < n else x.size
        if j == 0:
            ap = p[0]
            av = v[0]
            s = m_l
        else:
            ap = p[j - 1]
            av = v[j - 1]
            s = (v[j] - v[j - 1]) / (p[j] - p[j - 1]) if j < n else m_r
        t0 = 0.0
        t1 = 0.0
        t2 = 0.0
        for k in range(start, end):
            u = x[k] - ap
            r = av + s * u - f[k]
            wr = w[k] * r
            t0 += wr
            t1 += wr * u
            t2 += wr * r
        tot[j] = t0
        mom[j] = t1
        sq[j] = t2
        loss += t2
        start = end
    return loss


class Objective:
    """Discrete MSE of a PWL interpolant against ``spec`` on a fixed grid."""

    def __init__(self, spec: ActivationSpec, interval, grid_points: int):
        a, b = float(interval[0]), float(interval[1])
        if not a < b:
            raise InvalidArgumentError("interval must satisfy a < b")
        if grid_points < 2:
            raise InvalidArgumentError("grid_points must be >= 2")
        self.spec = spec
        self.a, self.b = a, b
        self.x = np.linspace(a, b, grid_points)
        self.f = act.eval_exact(spec, self.x)
        w = np.full(grid_points, 1.0 / (grid_points - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        self.w = w  # trapezoid weights already divided by (b - a)

    def _run(self, p, v, m_l, m_r):
        p = np.ascontiguousarray(p, dtype=np.float64)
        v = np.ascontiguousarray(v, dtype=np.float64)
        tot = np.empty(p.size + 1)
        mom = np.empty(p.size + 1)
        sq = np.empty(p.size + 1)
        loss = _sweep(self.x, self.f, self.w, p, v, float(m_l), float(m_r), tot, mom, sq)
        return loss, tot, mom, sq

    def loss(self, p, v, m_l, m_r) -> float:
        return self._run(p, v, m_l, m_r)[0]

    def loss_and_grad(self, p, v, m_l, m_r):
        """Loss and partials w.r.t. (p, v, m_l, m_r), all treated as independent."""
        n = p.size
        loss, tot, mom, _ = self._run(p, v, m_l, m_r)
        gp = np.zeros(n)
        gv = np.zeros(n)
        s = np.diff(v) / np.diff(p)
        hi = mom[1:n] / np.diff(p)
        lo = tot[1:n] - hi
        gv[:-1] += lo
        gv[1:] += hi
        gp[:-1] -= s * lo
        gp[1:] -= s * hi
        gv[0] += tot[0]
        gp[0] -= m_l * tot[0]
        gv[-1] += tot[n]
        gp[-1] -= m_r * tot[n]
        return loss, 2.0 * gp, 2.0 * gv, 2.0 * mom[0], 2.0 * mom[n]

    def model_loss(self, model: PwlModel) -> float:
        return self.loss(model.p, model.v, model.m_l, model.m_r)

    def segment_integrals(self, model: PwlModel) -> np.ndarray:
        """Trapezoid integral of the squared error over each of the n+1 segments."""
        sq = self._run(model.p, model.v, model.m_l, model.m_r)[3]
        return sq * (self.b - self.a)


def loss_mse(model: PwlModel, spec: ActivationSpec, interval, grid_points: int = 100_001) -> float:
    return Objective(spec, interval, grid_points).model_loss(model)


def _free_grad(model: PwlModel, g):
    """Project raw partials onto the free parameters of ``model``.

    Asymptote-mode boundary values are functions of the boundary breakpoint,
    so their partial is chained into ``p`` and their slope is frozen.
    """
    gp, gv, gml, gmr = g
    gp, gv = gp.copy(), gv.copy()
    if model.left_mode == ASYMPTOTE:
        gp[0] += model.m_l * gv[0]
        gv[0] = 0.0
        gml = 0.0
    if model.right_mode == ASYMPTOTE:
        gp[-1] += model.m_r * gv[-1]
        gv[-1] = 0.0
        gmr = 0.0
    return gp, gv, float(gml), float(gmr)


def grad_loss(model: PwlModel, spec: ActivationSpec, interval, grid_points: int = 100_001) -> dict:
    """Gradient of the discrete loss w.r.t. the free parameters.

    Returns a dict with arrays ``p`` and ``v`` and scalars ``m_l``, ``m_r``;
    entries that are not free are zero.
    """
    obj = Objective(spec, interval, grid_points)
    _, *g = obj.loss_and_grad(model.p, model.v, model.m_l, model.m_r)
    gp, gv, gml, gmr = _free_grad(model, g)
    return {"p": gp, "v": gv, "m_l": gml, "m_r": gmr}


class _Adam:
    def __init__(self, size, beta1, beta2, eps):
        self.m = np.zeros(size)
        self.s = np.zeros(size)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, theta, grad, lr):
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.s *= self.beta2
        self.s += (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        shat = self.s / (1.0 - self.beta2 ** self.t)
        return theta - lr * mhat / (np.sqrt(shat) + self.eps)

    def permute(self, order, n):
        # keep moment estimates attached to their (p, v) pair after sorting
        for buf in (self.m, self.s):
            buf[:n] = buf[:n][order]
            buf[n:2 * n] = buf[n:2 * n][order]


def _project(p, v, span):
    order = np.argsort(p, kind="stable")
    p, v = p[order], v[order]
    gap = min_gap(np.array([0.0, max(p[-1] - p[0], span)]))
    offs = np.arange(p.size) * gap
    p = np.maximum.accumulate(p - offs) + offs
    return p, v, order


class _Run:
    """Flat parameter vector ``[p, v, m_l, m_r]`` for one inner Adam run."""

    def __init__(self, model: PwlModel, spec, obj: Objective):
        self.template = model
        self.n = model.n
        self.obj = obj
        self.span = obj.b - obj.a
        info = act.boundary_info(spec)
        self.left = (info.m_l, info.c_l) if model.left_mode == ASYMPTOTE else None
        self.right = (info.m_r, info.c_r) if model.right_mode == ASYMPTOTE else None

    def pack(self, model):
        return np.concatenate((model.p, model.v, [model.m_l, model.m_r]))

    def constrain(self, theta):
        n = self.n
        if self.left is not None:
            theta[2 * n] = self.left[0]
            theta[n] = self.left[0] * theta[0] + self.left[1]
        if self.right is not None:
            theta[2 * n + 1] = self.right[0]
            theta[2 * n - 1] = self.right[0] * theta[n - 1] + self.right[1]

    def evaluate(self, theta):
        n = self.n
        loss, gp, gv, gml, gmr = self.obj.loss_and_grad(
            theta[:n], theta[n:2 * n], theta[2 * n], theta[2 * n + 1])
        if not np.isfinite(loss):
            raise DivergedError("loss became non-finite")
        if self.left is not None:
            gp[0] += self.left[0] * gv[0]
            gv[0] = gml = 0.0
        if self.right is not None:
            gp[-1] += self.right[0] * gv[-1]
            gv[-1] = gmr = 0.0
        return loss, np.concatenate((gp, gv, [gml, gmr]))

    def unpack(self, theta) -> PwlModel:
        n = self.n
        return self.template.replace(p=theta[:n], v=theta[n:2 * n],
                                     m_l=theta[2 * n], m_r=theta[2 * n + 1])


def inner_optimize(model: PwlModel, spec: ActivationSpec, interval, config: FitterConfig,
                   lr: Optional[float] = None, objective: Optional[Objective] = None):
    """Adam with plateau scheduling; returns the best model seen and its history."""
    obj = objective or Objective(spec, interval, config.grid_points)
    lr = config.lr if lr is None else lr
    run = _Run(model, spec, obj)
    n = model.n
    theta = run.pack(model)
    run.constrain(theta)
    loss, grad = run.evaluate(theta)
    best, best_theta = loss, theta.copy()
    history = [(0, loss, lr)]
    if loss == 0.0:
        return run.unpack(best_theta), history
    adam = _Adam(theta.size, config.beta1, config.beta2, config.adam_eps)
    # stagnation is judged against this run's own trajectory, so the
    # transient after a restart does not count against it
    ref = np.inf
    stale = plateau = 0
    for step in range(1, config.max_inner_steps + 1):
        theta = adam.step(theta, grad, lr)
        p, v, order = _project(theta[:n], theta[n:2 * n], run.span)
        adam.permute(order, n)
        theta[:n], theta[n:2 * n] = p, v
        run.constrain(theta)
        loss, grad = run.evaluate(theta)
        history.append((step, loss, lr))
        if loss < best:
            best = loss
            best_theta = theta.copy()
        if loss < ref * (1.0 - config.inner_rel_tol):
            ref = loss
            stale = plateau = 0
        else:
            stale += 1
            plateau += 1
        if loss == 0.0 or stale >= config.inner_patience:
            break
        if plateau >= config.plateau_patience:
            lr *= config.plateau_factor
            plateau = 0
    return run.unpack(best_theta), history


def _delete(model: PwlModel, i: int, spec) -> PwlModel:
    keep = np.arange(model.n) != i
    return apply_boundary(model.replace(p=model.p[keep], v=model.v[keep]), spec)


def _insert(model: PwlModel, p_new: float, v_new: float) -> PwlModel:
    j = int(np.searchsorted(model.p, p_new))
    return model.replace(p=np.insert(model.p, j, p_new), v=np.insert(model.v, j, v_new))


TIE_RTOL = 1e-9


def _first_best(values, largest: bool) -> int:
    # values this close are the same candidate up to rounding; take the lowest index
    a = np.asarray(values, dtype=np.float64)
    best = a.max() if largest else a.min()
    slack = TIE_RTOL * abs(best)
    hit = a >= best - slack if largest else a <= best + slack
    return int(np.flatnonzero(hit)[0])


def removal_candidate(model: PwlModel, spec: ActivationSpec, interval, config: FitterConfig,
                      objective: Optional[Objective] = None):
    """Breakpoint whose deletion costs least; ties go to the lowest index."""
    if model.n < 3:
        raise TooFewBreakpointsError("removal needs at least 3 breakpoints")
    obj = objective or Objective(spec, interval, config.grid_points)
    losses = [obj.model_loss(_delete(model, i, spec)) for i in range(model.n)]
    return _first_best(losses, largest=False), losses


def insertion_candidate(model: PwlModel, spec: ActivationSpec, interval, config: FitterConfig,
                        objective: Optional[Objective] = None):
    """Midpoint of the inner segment with the largest integrated squared error."""
    obj = objective or Objective(spec, interval, config.grid_points)
    losses = obj.segment_integrals(model)[1:model.n]
    i = _first_best(losses, largest=True)
    p_new = 0.5 * (model.p[i] + model.p[i + 1])
    v_new = 0.5 * (model.v[i] + model.v[i + 1])
    return p_new, v_new, losses.tolist()


def fit(spec: ActivationSpec, interval, n: int, config: Optional[FitterConfig] = None,
        left_mode: Optional[str] = None, right_mode: Optional[str] = None):
    config = config or FitterConfig()
    if n < 2:
        raise InvalidArgumentError("need at least 2 breakpoints")
    t0 = time.perf_counter()
    obj = Objective(spec, interval, config.grid_points)
    model = uniform_init(spec, interval, n, left_mode, right_mode)
    init_loss = obj.model_loss(model)
    model, hist = inner_optimize(model, spec, interval, config, config.lr, obj)
    history = list(hist)
    step0 = history[-1][0]
    best_model = model
    best = obj.model_loss(model)
    trace = []
    reason = "max_outer_iters"
    k = 0
    if n < 3 or best == 0.0:
        reason = "nothing to move"
    else:
        for k in range(1, config.max_outer_iters + 1):
            i_rm, _ = removal_candidate(model, spec, interval, config, obj)
            p_rm = float(model.p[i_rm])
            reduced = _delete(model, i_rm, spec)
            p_ins, v_ins, _ = insertion_candidate(reduced, spec, interval, config, obj)
            gap_seg = int(np.searchsorted(reduced.p, p_rm))
            ins_seg = int(np.searchsorted(reduced.p, p_ins))
            entry = {"iteration": k, "removed_index": i_rm, "removed_p": p_rm, "inserted_p": p_ins}
            if ins_seg == gap_seg:
                entry["loss"] = best
                trace.append(entry)
                reason = "removal and insertion converged"
                break
            lr_k = max(config.lr * config.outer_lr_decay ** k, config.lr_floor)
            model, hist = inner_optimize(_insert(reduced, p_ins, v_ins), spec, interval,
                                         config, lr_k, obj)
            history.extend((step0 + s, l, r) for s, l, r in hist[1:])
            step0 = history[-1][0]
            loss = obj.model_loss(model)
            entry["loss"] = loss
            entry["lr"] = lr_k
            trace.append(entry)
            improvement = (best - loss) / best
            if loss < best:
                best, best_model = loss, model
            if best == 0.0 or improvement < config.outer_rel_tol:
                reason = "outer improvement below tolerance"
                break
    meta = {
        "n": n,
        "init_loss": init_loss,
        "final_loss": best,
        "grid_points": config.grid_points,
        "seed": config.seed,
        "config": asdict(config),
    }
    best_model = best_model.replace(function=str(spec), interval=(obj.a, obj.b), fit_metadata=meta)
    report = FitReport(final_loss=best, loss_history=history, outer_iterations=len(trace),
                       trace=trace, wall_time=time.perf_counter() - t0, stop_reason=reason)
    return best_model, report
