# Running tensors through the unit model and reading the cycle reports.
import numpy as np

from flexsfu import ActivationSpec, fit
from flexsfu.formats import FP16, FP32, decode, encode
from flexsfu.reference import QuantizedPwlReference
from flexsfu.sfu import SfuState, adu_decode, build_lut_image, exe_af, load_all, perf_sweep

sig = ActivationSpec("sigmoid")
model, _ = fit(sig, (-8, 8), 16)
img = build_lut_image(model, FP16, 32)

state = SfuState(32, n_clusters=1, clock_mhz=600.0)
print("load cycles per cluster:", load_all(state, img))

x = encode(np.random.default_rng(0).uniform(-9, 9, 8192), FP16)
y, rep = exe_af(state, x)
err = np.abs(decode(y, FP16) - sig(decode(x, FP16)))
print(f"max |error| vs exact sigmoid: {err.max():.2e}")
print("same bits as the slow reference:", np.array_equal(y[:500], QuantizedPwlReference(model, FP16)(x[:500])))
print(rep)
print(f"steady {rep.steady_gact_per_s:.2f} GAct/s, overall {rep.gact_per_s:.2f} GAct/s")

# one element down the comparator tree
addr, trace = adu_decode(state, 0, int(encode(0.7, FP16)))
print("0.7 ->", addr, trace)

# throughput vs tensor size for 32-bit data, with and without the table load
s32 = SfuState(64)
load_all(s32, build_lut_image(model, FP32, 64))
print()
print(f"{'size':>6} {'with load':>10} {'exec only':>10}")
for r in perf_sweep(s32, [2 ** k for k in range(1, 14)], 32):
    print(f"{r.elements:6d} {r.throughput:10.3f} {r.exec_throughput:10.3f}")
