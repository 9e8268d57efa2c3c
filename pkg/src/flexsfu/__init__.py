"""Non-uniform piecewise-linear activation approximation and a bit-exact SFU model."""

from .activations import ActivationSpec, boundary_info, eval_exact
from .errors import (CapacityError, ConfigurationError, DivergedError, FlexSfuError, InvalidArgumentError,
                     InvalidInputError, NotReadyError, TooFewBreakpointsError)
from .fitter import FitReport, FitterConfig, fit, grad_loss, inner_optimize, insertion_candidate, loss_mse, removal_candidate
from .formats import FP8_E4M3, FP16, FP32, NumberFormat, decode, encode, fixed, fma_quantized, ordered_compare, parse_format
from .pwl import PwlModel, apply_boundary, eval_pwl, segment_index, to_segment_coeffs, uniform_init
from .sfu import LutImage, PerfReport, SfuState, adu_decode, build_lut_image, exe_af, ld_bp, ld_cf, perf_sweep

__version__ = "0.1.0"
