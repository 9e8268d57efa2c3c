"""Bit-exact, cycle-counted model of the special-function unit datapath.

The unit holds two memories per cluster: the address decoder (ADU) keeps the
breakpoints of a balanced binary search tree, one tree level per pipeline
stage, and the lookup-table cluster (LTC) keeps one ``(m, q)`` coefficient
pair per segment. ``exe_af`` walks each input down the tree, fetches the
coefficients at the resulting address and finishes with a fused multiply-add.

Timing: ``log2(d) + 5`` fill cycles, then ``32 / element_bits`` elements per
cycle per cluster. Loads cost one 32-bit word per cycle.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, InvalidArgumentError, InvalidInputError, NotReadyError
from .formats import NumberFormat, decode, encode, fma_quantized, is_finite_pattern, order_key, parse_format
from .pwl import PwlModel, to_segment_coeffs

WORD_BITS = 32
FIXED_STAGES = 5  # dispatch, LTC read, MADD, writeback
LUT_MAGIC = "flexsfu-lut v1"


def _check_depth(d: int) -> int:
    d = int(d)
    if d < 2 or d & (d - 1):
        raise InvalidArgumentError(f"LTC depth must be a power of two, got {d}")
    return d


def levels_of(d: int) -> int:
    return _check_depth(d).bit_length() - 1


def fill_latency(d: int) -> int:
    return levels_of(d) + FIXED_STAGES


def lanes(element_bits: int) -> int:
    if element_bits not in (8, 16, 32):
        raise ConfigurationError(f"unsupported element width {element_bits}")
    return WORD_BITS // element_bits


def words_for(count: int, element_bits: int) -> int:
    return -(-count * element_bits // WORD_BITS)


def pack_words(patterns, element_bits: int) -> np.ndarray:
    """Pack patterns into 32-bit words, lowest lane first, zero padded."""
    k = lanes(element_bits)
    pats = np.asarray(patterns, dtype=np.uint64)
    nw = words_for(pats.size, element_bits)
    padded = np.zeros(nw * k, dtype=np.uint64)
    padded[:pats.size] = pats
    shifts = (np.arange(k, dtype=np.uint64) * np.uint64(element_bits))
    words = (padded.reshape(nw, k) << shifts).sum(axis=1)
    return words.astype(np.uint32)


def unpack_words(words, element_bits: int, count: int) -> np.ndarray:
    k = lanes(element_bits)
    w = np.asarray(words, dtype=np.uint64)
    shifts = np.arange(k, dtype=np.uint64) * np.uint64(element_bits)
    mask = np.uint64((1 << element_bits) - 1)
    lanes_ = (w[:, None] >> shifts[None, :]) & mask
    flat = lanes_.reshape(-1)
    if count > flat.size:
        raise InvalidArgumentError("not enough words for the requested element count")
    return flat[:count].astype(np.int64)


def level_order(sorted_items: Sequence, d: int) -> np.ndarray:
    """Place ``d - 1`` sorted items into tree level order (root = median)."""
    L = levels_of(d)
    items = np.asarray(sorted_items)
    if items.size != d - 1:
        raise InvalidArgumentError("need exactly d - 1 items")
    idx = [(2 * j + 1) * (1 << (L - 1 - k)) - 1 for k in range(L) for j in range(1 << k)]
    return items[idx]


def in_order(level_items: Sequence, d: int) -> np.ndarray:
    L = levels_of(d)
    items = np.asarray(level_items)
    out = np.empty_like(items)
    pos = 0
    for k in range(L):
        for j in range(1 << k):
            out[(2 * j + 1) * (1 << (L - 1 - k)) - 1] = items[pos]
            pos += 1
    return out


@dataclass(frozen=True, eq=False)
class LutImage:
    """Quantized breakpoint and coefficient memories for one function."""

    fmt: NumberFormat
    d: int
    n: int  # real breakpoints; the remaining d - 1 - n tree slots are sentinels
    bp: np.ndarray  # d - 1 patterns in tree level order
    cf_m: np.ndarray  # d slope patterns
    cf_q: np.ndarray  # d intercept patterns

    def __post_init__(self):
        _check_depth(self.d)
        if self.bp.shape != (self.d - 1,) or self.cf_m.shape != (self.d,) or self.cf_q.shape != (self.d,):
            raise InvalidArgumentError("memory sizes do not match the depth")

    def __eq__(self, other):
        if not isinstance(other, LutImage):
            return NotImplemented
        return (self.fmt == other.fmt and self.d == other.d and self.n == other.n
                and np.array_equal(self.bp, other.bp) and np.array_equal(self.cf_m, other.cf_m)
                and np.array_equal(self.cf_q, other.cf_q))

    @property
    def levels(self) -> list[np.ndarray]:
        return [self.bp[(1 << k) - 1:(1 << (k + 1)) - 1] for k in range(levels_of(self.d))]

    def sorted_breakpoints(self) -> np.ndarray:
        return in_order(self.bp, self.d)

    def bp_words(self) -> np.ndarray:
        return pack_words(self.bp, self.fmt.total_bits)

    def cf_words(self) -> np.ndarray:
        inter = np.empty(2 * self.d, dtype=np.int64)
        inter[0::2] = self.cf_m
        inter[1::2] = self.cf_q
        return pack_words(inter, self.fmt.total_bits)

    def to_text(self) -> str:
        lines = [f"{LUT_MAGIC} fmt={self.fmt} d={self.d} n={self.n}", "BP"]
        lines += [f"{int(w):08x}" for w in self.bp_words()]
        lines.append("CF")
        lines += [f"{int(w):08x}" for w in self.cf_words()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LutImage":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith(LUT_MAGIC):
            raise InvalidArgumentError("not a LUT image file")
        fields = dict(tok.split("=", 1) for tok in lines[0][len(LUT_MAGIC):].split())
        try:
            fmt = parse_format(fields["fmt"])
            d, n = int(fields["d"]), int(fields["n"])
            i_bp, i_cf = lines.index("BP"), lines.index("CF")
        except (KeyError, ValueError) as exc:
            raise InvalidArgumentError(f"malformed LUT header or sections: {exc}") from None
        bits = fmt.total_bits
        bp_w = [int(x, 16) for x in lines[i_bp + 1:i_cf]]
        cf_w = [int(x, 16) for x in lines[i_cf + 1:]]
        if len(bp_w) != words_for(d - 1, bits) or len(cf_w) != words_for(2 * d, bits):
            raise InvalidArgumentError("section length does not match the header")
        bp = unpack_words(bp_w, bits, d - 1)
        cf = unpack_words(cf_w, bits, 2 * d)
        return cls(fmt, d, n, bp, cf[0::2].copy(), cf[1::2].copy())


def build_lut_image(model: PwlModel, fmt: NumberFormat, d: int) -> LutImage:
    d = _check_depth(d)
    n = model.n
    if n + 1 > d:
        raise CapacityError(f"{n} breakpoints need {n + 1} segments, LTC depth is {d}")
    coeffs = to_segment_coeffs(model)
    bp_sorted = np.full(d - 1, fmt.max_pattern, dtype=np.int64)
    bp_sorted[:n] = encode(model.p, fmt)
    m = np.empty(d, dtype=np.int64)
    q = np.empty(d, dtype=np.int64)
    m[:n + 1] = encode(coeffs.m, fmt)
    q[:n + 1] = encode(coeffs.q, fmt)
    # unreachable slots copy the last real segment
    m[n + 1:] = m[n]
    q[n + 1:] = q[n]
    return LutImage(fmt, d, n, level_order(bp_sorted, d), m, q)


def read_lut(path) -> LutImage:
    with open(path) as fh:
        return LutImage.from_text(fh.read())


def write_lut(image: LutImage, path) -> None:
    with open(path, "w") as fh:
        fh.write(image.to_text())


@dataclass
class PerfReport:
    elements: int
    element_bits: int
    n_clusters: int
    d: int
    load_cycles: int
    fill_cycles: int
    steady_cycles: int
    total_cycles: int
    clock_mhz: float = 600.0

    @property
    def peak_throughput(self) -> float:
        return self.n_clusters * lanes(self.element_bits)

    @property
    def throughput(self) -> float:
        """Elements per cycle over the whole run, loads included."""
        return self.elements / self.total_cycles if self.total_cycles else 0.0

    @property
    def exec_throughput(self) -> float:
        """Elements per cycle with loads already done (pre-executed)."""
        c = self.fill_cycles + self.steady_cycles
        return self.elements / c if c else 0.0

    @property
    def steady_throughput(self) -> float:
        return self.elements / self.steady_cycles if self.steady_cycles else 0.0

    @property
    def gact_per_s(self) -> float:
        return self.throughput * self.clock_mhz / 1e3

    @property
    def steady_gact_per_s(self) -> float:
        return self.steady_throughput * self.clock_mhz / 1e3

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("peak_throughput", "throughput", "exec_throughput", "steady_throughput",
                     "gact_per_s", "steady_gact_per_s"):
            d[name] = getattr(self, name)
        return d


def cycle_model(elements: int, element_bits: int, d: int, n_clusters: int = 1,
                load_cycles: int = 0, clock_mhz: float = 600.0) -> PerfReport:
    if elements < 0:
        raise InvalidArgumentError("element count must be non-negative")
    per_cycle = n_clusters * lanes(element_bits)
    steady = -(-elements // per_cycle)
    fill = fill_latency(d) if elements else 0
    return PerfReport(elements, element_bits, n_clusters, d, load_cycles, fill, steady,
                      load_cycles + fill + steady, clock_mhz)


@dataclass
class _Cluster:
    bp: Optional[LutImage] = None
    cf: Optional[LutImage] = None
    pending_load: int = 0


@dataclass
class SfuState:
    """Unit configuration plus per-cluster memories.

    ``fmt`` is pinned by the first load when not given; later loads must match.
    """

    d: int
    n_clusters: int = 1
    clock_mhz: float = 600.0
    fmt: Optional[NumberFormat] = None
    clusters: list = field(default_factory=list)

    def __post_init__(self):
        _check_depth(self.d)
        if self.n_clusters < 1:
            raise InvalidArgumentError("need at least one cluster")
        if not self.clusters:
            self.clusters = [_Cluster() for _ in range(self.n_clusters)]

    @property
    def ready(self) -> bool:
        return all(c.bp is not None and c.cf is not None for c in self.clusters)

    def _cluster(self, cluster_id: int) -> _Cluster:
        if not 0 <= cluster_id < self.n_clusters:
            raise ConfigurationError(f"no cluster {cluster_id}")
        return self.clusters[cluster_id]

    def _check_image(self, image: LutImage):
        if image.d != self.d:
            raise ConfigurationError(f"image depth {image.d} != unit depth {self.d}")
        if self.fmt is None:
            self.fmt = image.fmt
        elif image.fmt != self.fmt:
            raise ConfigurationError(f"image format {image.fmt} != unit format {self.fmt}")


def ld_bp(state: SfuState, cluster_id: int, image: LutImage) -> int:
    state._check_image(image)
    c = state._cluster(cluster_id)
    c.bp = image
    cycles = words_for(image.d - 1, image.fmt.total_bits)
    c.pending_load += cycles
    return cycles


def ld_cf(state: SfuState, cluster_id: int, image: LutImage) -> int:
    state._check_image(image)
    c = state._cluster(cluster_id)
    c.cf = image
    cycles = words_for(2 * image.d, image.fmt.total_bits)
    c.pending_load += cycles
    return cycles


def load_all(state: SfuState, image: LutImage) -> int:
    """Load every cluster; clusters load in parallel, so this returns one cluster's cost."""
    cycles = 0
    for i in range(state.n_clusters):
        cycles = ld_bp(state, i, image) + ld_cf(state, i, image)
    return cycles


def _loaded(state: SfuState, cluster_id: int):
    c = state._cluster(cluster_id)
    if c.bp is None or c.cf is None:
        raise NotReadyError("ld.bp and ld.cf must both run before exe.af")
    return c


def _addresses(bp_image: LutImage, x_bits: np.ndarray) -> np.ndarray:
    fmt = bp_image.fmt
    xk = order_key(x_bits, fmt)
    addr = np.zeros(xk.shape, dtype=np.int64)
    for level in bp_image.levels:
        node = order_key(level, fmt)[addr]
        addr = 2 * addr + (xk > node)
    return addr


def adu_decode(state: SfuState, cluster_id: int, x_bits: int):
    """Walk one input down the tree; returns (address, [(level, address, cmp_o), ...])."""
    c = _loaded(state, cluster_id)
    fmt = c.bp.fmt
    xk = int(order_key(int(x_bits), fmt))
    addr = 0
    trace = []
    for k, level in enumerate(c.bp.levels):
        cmp_o = int(xk > int(order_key(int(level[addr]), fmt)))
        trace.append((k, addr, cmp_o))
        addr = 2 * addr + cmp_o
    return addr, trace


def _check_inputs(x: np.ndarray, fmt: NumberFormat):
    if np.any((x < 0) | (x > fmt.mask)):
        raise ConfigurationError(f"input patterns wider than {fmt.total_bits} bits")
    if not np.all(is_finite_pattern(x, fmt)):
        raise InvalidInputError("SFU inputs must be finite")


def exe_af(state: SfuState, x_bits, element_bits: Optional[int] = None):
    """Run the activation on a tensor of encoded elements; returns (outputs, PerfReport)."""
    for i in range(state.n_clusters):
        _loaded(state, i)
    fmt = state.fmt
    bits = fmt.total_bits if element_bits is None else int(element_bits)
    if bits != fmt.total_bits:
        raise ConfigurationError(f"{bits}-bit elements but the loaded LUT is {fmt}")
    x = np.asarray(x_bits, dtype=np.int64)
    flat = x.reshape(-1)
    _check_inputs(flat, fmt)
    k = lanes(bits)
    owner = (np.arange(flat.size) // k) % state.n_clusters
    out = np.empty_like(flat)
    for i, c in enumerate(state.clusters):
        sel = owner == i
        if not np.any(sel):
            continue
        xs = flat[sel]
        addr = _addresses(c.bp, xs)
        out[sel] = fma_quantized(c.cf.cf_m[addr], xs, c.cf.cf_q[addr], fmt)
    load = max(c.pending_load for c in state.clusters)
    for c in state.clusters:
        c.pending_load = 0
    report = cycle_model(flat.size, bits, state.d, state.n_clusters, load, state.clock_mhz)
    return out.reshape(x.shape), report


def perf_sweep(state: SfuState, sizes: Sequence[int], element_bits: Optional[int] = None,
               include_load: bool = True) -> list[PerfReport]:
    """Cycle reports for fresh runs (load, then exe.af) over several tensor sizes."""
    c = _loaded(state, 0)
    bits = c.bp.fmt.total_bits if element_bits is None else element_bits
    load = words_for(state.d - 1, bits) + words_for(2 * state.d, bits) if include_load else 0
    return [cycle_model(int(s), bits, state.d, state.n_clusters, load, state.clock_mhz) for s in sizes]


def lut_evaluator(image: LutImage, n_clusters: int = 1):
    """Real-valued view of a LUT image: encode, run through the unit, decode."""
    state = SfuState(image.d, n_clusters)
    load_all(state, image)

    def evaluate(x):
        out, _ = exe_af(state, encode(np.asarray(x, dtype=np.float64), image.fmt))
        return decode(out, image.fmt)

    return evaluate
