# Quantising a fitted model into a LUT image and looking at what the unit stores.
import numpy as np

from flexsfu import ActivationSpec, fit
from flexsfu.formats import FP16, decode, encode, parse_format
from flexsfu.sfu import build_lut_image

tanh = ActivationSpec("tanh")
model, _ = fit(tanh, (-8, 8), 7)

# a few encodings to get a feel for the formats
for name in ("fp8_e4m3", "fp16", "fx8:4", "fx16:8"):
    fmt = parse_format(name)
    bits = encode([0.1, 1.0, -3.3, 1000.0], fmt)
    print(f"{name:9s}", [hex(b) for b in bits.tolist()], "->", decode(bits, fmt).tolist())

img = build_lut_image(model, FP16, 8)
print()
print("breakpoint tree, one level per line (root first):")
for k, level in enumerate(img.levels):
    print(" ", k, decode(level, FP16).tolist())
print("in-order walk gives the sorted table:", decode(img.sorted_breakpoints(), FP16).tolist())
print("slopes   ", np.round(decode(img.cf_m, FP16), 4).tolist())
print("offsets  ", np.round(decode(img.cf_q, FP16), 4).tolist())

print()
print(img.to_text())
# bp memory: 7 fp16 values in 4 words; cf memory: 8 (m, q) pairs in 8 words
print(len(img.bp_words()), "bp words,", len(img.cf_words()), "cf words")
