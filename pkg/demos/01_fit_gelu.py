# Fitting a piecewise-linear gelu and comparing it with uniform placement.
import numpy as np

from flexsfu import ActivationSpec, fit
from flexsfu.metrics import compute_metrics, uniform_vs_nonuniform
from flexsfu.pwl import uniform_init

gelu = ActivationSpec("gelu")

# 5 breakpoints on [-2, 2]: evenly spaced vs optimised
mu, mf, ratio = uniform_vs_nonuniform(gelu, (-2, 2), 5)
print(f"uniform mse {mu:.3e}   fitted mse {mf:.3e}   ratio {ratio:.1f}x")

model, report = fit(gelu, (-2, 2), 5)
print("breakpoints", np.round(model.p, 4))
print("values     ", np.round(model.v, 4))
print("stop:", report.stop_reason, "after", report.outer_iterations, "outer iterations")

# breakpoints cluster where the curvature is, near the knee
uni = uniform_init(gelu, (-2, 2), 5)
print("uniform p  ", uni.p)

# wider range: outer segments follow the asymptotes (0 on the left, y = x on the right)
wide, _ = fit(gelu, (-8, 8), 16)
m = compute_metrics(wide, gelu, (-8, 8))
print(f"16 bp on [-8,8]: mse {m.mse:.3e}  mae {m.mae:.3e}  max {m.max_abs_err:.3e}")
print("slopes outside the range:", wide.m_l, wide.m_r)
for x in (-100.0, 100.0):
    print(f"  f_hat({x:+.0f}) = {float(wide(x)):+.6f}   gelu = {float(gelu(x)):+.6f}")
