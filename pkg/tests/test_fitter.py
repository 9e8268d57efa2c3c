import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from flexsfu.activations import FREE, ActivationSpec
from flexsfu.errors import DivergedError, InvalidArgumentError, TooFewBreakpointsError
from flexsfu.fitter import (FitReport, FitterConfig, Objective, _delete, _insert, fit, grad_loss,
                            inner_optimize, insertion_candidate, loss_mse, removal_candidate)
from flexsfu.pwl import PwlModel, apply_boundary, uniform_init

GELU = ActivationSpec("gelu")
CFG = FitterConfig()

# uniform 5-breakpoint gelu on [-2, 2]; reference loss from adaptive quadrature of
# the squared error on each inner segment (outer segments lie outside [a, b])
UNIFORM_GELU_QUAD = 0.0017963401330708276
UNIFORM_GELU_SEGMENTS = (0.0006081884875517857, 0.0029844917785898685,
                         0.0029844917785898694, 0.0006081884875517874)


def _quad_segments(model, spec):
    return [quad(lambda t: (np.interp(t, model.p, model.v) - float(spec(t))) ** 2, a, b,
                 epsabs=1e-16, epsrel=1e-13)[0] for a, b in zip(model.p[:-1], model.p[1:])]


def test_config_invariants():
    with pytest.raises(InvalidArgumentError):
        FitterConfig(beta1=0.999, beta2=0.9)
    with pytest.raises(InvalidArgumentError):
        FitterConfig(lr=0.0)
    with pytest.raises(InvalidArgumentError):
        FitterConfig(grid_points=1)
    assert CFG.replace(lr=0.2).lr == 0.2


def test_loss_trivial_cases():
    line = ActivationSpec("leaky_relu", 1.0)  # f(x) = x
    assert loss_mse(PwlModel([0.0, 1.0], [0.0, 1.0], 1.0, 1.0), line, (0, 1)) == 0.0
    one = ActivationSpec("sigmoid")
    # on [40, 41] sigmoid is 1 to double precision
    assert loss_mse(PwlModel([40.0, 41.0], [0.0, 0.0], 0.0, 0.0), one, (40, 41)) == pytest.approx(1.0, rel=1e-12)


def test_uniform_gelu_loss_matches_dense_oracle():
    m = uniform_init(GELU, (-2, 2), 5)
    assert sum(_quad_segments(m, GELU)) / 4 == pytest.approx(UNIFORM_GELU_QUAD, rel=1e-9)
    x = np.linspace(-2, 2, 1_000_001)
    r = np.interp(x, m.p, m.v) - GELU(x)
    dense = np.trapezoid(r * r, x) / 4
    assert dense == pytest.approx(UNIFORM_GELU_QUAD, rel=1e-9)
    assert loss_mse(m, GELU, (-2, 2)) == pytest.approx(dense, rel=1e-6)


def _fd_check(model, spec, interval, grid=20_001, h=1e-6):
    obj = Objective(spec, interval, grid)
    g = grad_loss(model, spec, interval, grid)

    def loss_of(**kw):
        return obj.model_loss(apply_boundary(model.replace(**kw), spec))

    worst = 0.0
    scale = max(np.max(np.abs(g["p"])), np.max(np.abs(g["v"])), 1e-300)
    for name in ("p", "v"):
        base = getattr(model, name)
        for i in range(base.size):
            if name == "v" and ((i == 0 and model.left_mode != FREE) or
                                (i == base.size - 1 and model.right_mode != FREE)):
                assert g["v"][i] == 0.0
                continue
            up, dn = base.copy(), base.copy()
            up[i] += h
            dn[i] -= h
            fd = (loss_of(**{name: up}) - loss_of(**{name: dn})) / (2 * h)
            worst = max(worst, abs(fd - g[name][i]) / max(abs(fd), 1e-3 * scale))
    for name in ("m_l", "m_r"):
        mode = model.left_mode if name == "m_l" else model.right_mode
        if mode != FREE:
            assert g[name] == 0.0
            continue
        base = getattr(model, name)
        fd = (loss_of(**{name: base + h}) - loss_of(**{name: base - h})) / (2 * h)
        worst = max(worst, abs(fd - g[name]) / max(abs(fd), 1e-3 * scale))
    return worst


def random_model(spec, seed, n=None, free=False):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 9))
    p = np.sort(rng.uniform(-3, 3, n)) + np.arange(n) * 0.05
    v = spec(p) + rng.normal(scale=0.05, size=n)
    mode = FREE if free else None
    base = uniform_init(spec, (-4, 4), n, mode, mode)
    return apply_boundary(base.replace(p=p, v=v), spec)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", ["gelu", "tanh"])
@pytest.mark.parametrize("free", [False, True])
def test_gradient_matches_finite_differences(name, seed, free):
    spec = ActivationSpec(name)
    m = random_model(spec, seed, free=free)
    assert _fd_check(m, spec, (-4, 4)) < 1e-5


def test_gradient_zero_at_exact_fit():
    line = ActivationSpec("relu")
    m = PwlModel([-1.0, 0.0, 1.0], [0.0, 0.0, 1.0], 0.0, 1.0, "asymptote", "asymptote")
    g = grad_loss(m, line, (-2, 2), 1001)
    assert np.all(g["p"] == 0) and np.all(g["v"] == 0)


def test_gradient_locality():
    spec = ActivationSpec("tanh")
    # breakpoints 3 and 4 sit between grid samples, so v_3's neighbours hold no samples
    m = PwlModel([-2.0, -1.0, 0.0, 0.0101, 0.0102, 1.0], [-1, -0.7, 0.0, 0.3, 0.4, 0.7], 0.0, 0.0)
    obj = Objective(spec, (-2, 2), 101)
    _, _, gv, _, _ = obj.loss_and_grad(m.p, m.v, m.m_l, m.m_r)
    assert gv[3] == 0.0
    # nudging v_1 only changes samples in segments 1 and 2
    x = obj.x
    moved = m.replace(v=m.v + np.eye(6)[1] * 0.1)
    changed = x[m(x) != moved(x)]
    assert changed.min() > m.p[0] and changed.max() < m.p[2]


def test_inner_optimize_line_unchanged():
    line = ActivationSpec("leaky_relu", 1.0)
    m = PwlModel([-1.0, 1.0], [-1.0, 1.0], 1.0, 1.0, "asymptote", "asymptote")
    out, hist = inner_optimize(m, line, (-2, 2), CFG)
    assert out == m and hist[-1][1] == 0.0


def test_inner_optimize_improves_and_envelope():
    m = uniform_init(GELU, (-2, 2), 5)
    out, hist = inner_optimize(m, GELU, (-2, 2), CFG)
    losses = np.array([h[1] for h in hist])
    assert loss_mse(out, GELU, (-2, 2)) < loss_mse(m, GELU, (-2, 2))
    env = np.minimum.accumulate(losses)
    assert np.all(np.diff(env) <= 0)
    assert loss_mse(out, GELU, (-2, 2)) == pytest.approx(env[-1], rel=1e-12)
    assert len(hist) <= CFG.max_inner_steps + 1


def test_inner_optimize_keeps_order_and_gap():
    m = uniform_init(ActivationSpec("tanh"), (-4, 4), 12)
    out, _ = inner_optimize(m, ActivationSpec("tanh"), (-4, 4), CFG.replace(max_inner_steps=300), lr=0.5)
    gaps = np.diff(out.p)
    assert np.all(gaps > 0)


def test_divergence_raises():
    m = uniform_init(GELU, (-2, 2), 5)
    with pytest.raises(DivergedError):
        inner_optimize(m, GELU, (-2, 2), CFG.replace(max_inner_steps=50), lr=1e300)


def test_removal_examples():
    line = ActivationSpec("leaky_relu", 1.0)
    # flat outer segments, so only the middle breakpoint is redundant
    m = PwlModel([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], 0.0, 0.0)
    i, losses = removal_candidate(m, line, (-2, 2), CFG)
    current = loss_mse(m, line, (-2, 2))
    assert i == 1 and losses[1] == pytest.approx(current, rel=1e-12)
    assert min(losses[0], losses[2]) > current
    with pytest.raises(TooFewBreakpointsError):
        removal_candidate(PwlModel([0.0, 1.0], [0.0, 1.0], 1.0, 1.0), line, (-2, 2), CFG)


def test_removal_matches_exhaustive_deletion():
    m = uniform_init(GELU, (-2, 2), 5)
    i, losses = removal_candidate(m, GELU, (-2, 2), CFG)
    brute = []
    for j in range(m.n):
        keep = [k for k in range(m.n) if k != j]
        red = apply_boundary(m.replace(p=m.p[keep], v=m.v[keep]), GELU)
        x = np.linspace(-2, 2, 100_001)
        r = red(x) - GELU(x)
        brute.append(np.trapezoid(r * r, x) / 4)
    np.testing.assert_allclose(losses, brute, rtol=1e-9)
    # four deletions tie exactly by symmetry; the lowest index wins
    assert i == 0


def test_removal_losses_bound_optimized_loss(fitted):
    model, report = fitted("gelu", (-2, 2), 5)
    _, losses = removal_candidate(model, GELU, (-2, 2), CFG)
    assert min(losses) >= report.final_loss


def test_insertion_examples():
    line = ActivationSpec("leaky_relu", 1.0)
    m = PwlModel([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], 1.0, 1.0, "asymptote", "asymptote")
    p, v, losses = insertion_candidate(m, line, (-2, 2), CFG)
    assert losses == [0.0, 0.0] and p == -0.5 and v == -0.5


def test_insertion_matches_quadrature():
    m = uniform_init(GELU, (-2, 2), 5)
    p, v, losses = insertion_candidate(m, GELU, (-2, 2), CFG)
    np.testing.assert_allclose(_quad_segments(m, GELU), UNIFORM_GELU_SEGMENTS, rtol=1e-9)
    np.testing.assert_allclose(losses, UNIFORM_GELU_SEGMENTS, rtol=1e-4)
    # the two central segments tie by symmetry; lowest index wins
    assert (p, v) == (-0.5, 0.5 * (m.v[1] + m.v[2]))


@given(st.integers(0, 10_000))
@settings(max_examples=20)
def test_insertion_leaves_loss_unchanged(seed):
    spec = ActivationSpec("tanh")
    m = random_model(spec, seed)
    obj = Objective(spec, (-4, 4), 20_001)
    p, v, _ = insertion_candidate(m, spec, (-4, 4), CFG.replace(grid_points=20_001), obj)
    before, after = obj.model_loss(m), obj.model_loss(_insert(m, p, v))
    assert after == pytest.approx(before, rel=1e-12)


def test_delete_rederives_asymptote_value():
    m = uniform_init(GELU, (-2, 2), 5)
    red = _delete(m, 4, GELU)
    assert red.p[-1] == 1.0 and red.v[-1] == 1.0


def test_fit_relu_reaches_zero():
    relu = ActivationSpec("relu")
    _, report = fit(relu, (-8, 8), 2)
    assert report.final_loss < 1e-8
    _, report = fit(relu, (-2, 2), 3)
    assert report.final_loss == 0.0


def test_fit_rejects_small_n():
    with pytest.raises(InvalidArgumentError):
        fit(GELU, (-2, 2), 1)


def test_fit_bookkeeping(fitted):
    model, report = fitted("gelu", (-2, 2), 5)
    assert isinstance(report, FitReport) and report.loss_history
    assert report.final_loss == pytest.approx(loss_mse(model, GELU, (-2, 2)), rel=1e-12)
    assert report.final_loss <= report.loss_history[0][1]
    assert model.fit_metadata["n"] == 5 and model.n == 5
    best = np.inf
    for entry in report.trace:
        if "lr" in entry:
            assert entry["lr"] >= CFG.lr_floor
        best = min(best, entry["loss"])
    assert report.final_loss <= best
    assert report.stop_reason
    csv_text = report.history_csv()
    assert csv_text.startswith("step,loss,lr\n") and csv_text.count("\n") == len(report.loss_history) + 1


def test_fit_is_deterministic():
    spec = ActivationSpec("tanh")
    a, ra = fit(spec, (-4, 4), 6, CFG.replace(seed=7))
    b, rb = fit(spec, (-4, 4), 6, CFG.replace(seed=7))
    assert a == b and np.array_equal(a.p, b.p)
    assert ra.to_json() == rb.to_json()
