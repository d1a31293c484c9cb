"""Mapped convolution: gather taps, multiply, GEMM.

The forward pass lowers the input through a sampling map into a column
matrix (mapped im2col), then multiplies by the flattened filter bank.  Both
backward passes reuse the same taps: the input gradient scatter-adds each
tap's contribution back (col2im), the parameter gradient is a GEMM against
the saved columns.  Nothing here knows about geometry; the map is the only
coupling, which is the whole idea.

Tensors are plain numpy arrays.  Mapped ops use channel-major flattened
spatial layout: input (c_in, n_in), output (c_out, n_out).  Everything
accumulates in the dtype numpy promotes to, float64 for the default
float64 inputs; float32 inputs stay float32 if the weights are float32 too.

The matrix multiply is injectable (``gemm=``) so the lowering can be
validated against a naive triple loop: if both routes agree, the mapped
path is pure data movement plus one GEMM, with no hidden arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .sample_map import KernelSpec, SampleMap, grid_out_shape, make_grid_map

# gather chunk size in elements; keeps the (c_in, chunk, T) temp around 32 MB
_CHUNK_ELEMENTS = 4_000_000


@dataclass
class ConvParams:
    """Filter bank (c_out, c_in, k) plus per-filter bias (c_out,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 3:
            raise DimensionError(f"weights must be 3d (c_out, c_in, k), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match c_out={self.weights.shape[0]}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ParameterError("weights and bias must be finite")

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]


def random_params(c_out: int, c_in: int, k: int, seed: int, scale: float | None = None,
                  dtype=np.float64) -> ConvParams:
    """Seeded Gaussian filter bank, variance-scaled by fan-in unless given."""
    rng = np.random.default_rng(seed)
    if scale is None:
        scale = 1.0 / np.sqrt(c_in * k)
    w = rng.normal(0.0, scale, size=(c_out, c_in, k)).astype(dtype)
    b = rng.normal(0.0, scale, size=c_out).astype(dtype)
    return ConvParams(w, b)


def naive_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix multiply. An oracle, deliberately slow."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.result_type(a, b))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = out.dtype.type(0)
            for t in range(a.shape[1]):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def _check_input(x: np.ndarray, smap: SampleMap) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise DimensionError(f"input must be 2d (c_in, n_in), got shape {x.shape}")
    if x.shape[1] != smap.n_in:
        raise DimensionError(f"input has {x.shape[1]} locations, map expects {smap.n_in}")
    return x


def mapped_im2col(x: np.ndarray, smap: SampleMap) -> np.ndarray:
    """Gather the input through the map into columns, shape (c_in * k, n_out).

    Row c*k + m of column n holds channel c of the input interpolated at
    kernel slot m of output location n.  Work proceeds in sample chunks so
    the (c_in, chunk, taps) temporary stays bounded.
    """
    x = _check_input(x, smap)
    c_in = x.shape[0]
    s = smap.n_samples
    out_dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    cols_sk = np.empty((c_in, s), dtype=out_dtype)
    step = max(1, _CHUNK_ELEMENTS // max(1, c_in * smap.tap_width))
    for lo in range(0, s, step):
        hi = min(lo + step, s)
        gathered = x[:, smap.indices[lo:hi]]              # (c_in, chunk, T)
        cols_sk[:, lo:hi] = np.einsum("cst,st->cs", gathered, smap.weights[lo:hi])
    # (c_in, n_out*k) -> (c_in, n_out, k) -> (c_in, k, n_out) -> (c_in*k, n_out)
    cols = cols_sk.reshape(c_in, smap.n_out, smap.k).swapaxes(1, 2)
    return np.ascontiguousarray(cols).reshape(c_in * smap.k, smap.n_out)


def mapped_conv_forward(x: np.ndarray, smap: SampleMap, params: ConvParams,
                        gemm=None) -> np.ndarray:
    """Convolution through a sampling map: (c_in, n_in) -> (c_out, n_out)."""
    x = _check_input(x, smap)
    if params.c_in != x.shape[0]:
        raise DimensionError(f"params expect c_in={params.c_in}, input has {x.shape[0]}")
    if params.k != smap.k:
        raise DimensionError(f"params expect k={params.k}, map has k={smap.k}")
    if gemm is None:
        gemm = np.matmul
    cols = mapped_im2col(x, smap)
    out = gemm(params.weights.reshape(params.c_out, params.c_in * params.k), cols)
    return out + params.bias[:, None]


def mapped_conv_backward_input(grad_out: np.ndarray, smap: SampleMap,
                               params: ConvParams, gemm=None) -> np.ndarray:
    """Gradient w.r.t. the input: scatter each tap's share back through the map.

    Adjoint of the forward gather.  Accumulation runs through np.bincount on
    flattened (channel, input index) keys, which sums in index order: the
    result is bit-for-bit deterministic and independent of chunking.
    """
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (params.c_out, smap.n_out):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != ({params.c_out}, {smap.n_out})")
    if params.k != smap.k:
        raise DimensionError(f"params expect k={params.k}, map has k={smap.k}")
    if gemm is None:
        gemm = np.matmul
    c_in, k = params.c_in, params.k
    # g[c, m, n]: what kernel slot m of output n wants from channel c
    g = gemm(params.weights.reshape(params.c_out, c_in * k).T, grad_out)
    g = g.reshape(c_in, k, smap.n_out).swapaxes(1, 2).reshape(c_in, smap.n_samples)

    dtype = g.dtype if np.issubdtype(g.dtype, np.floating) else np.float64
    grad_in = np.zeros(c_in * smap.n_in, dtype=np.float64)
    step = max(1, _CHUNK_ELEMENTS // max(1, c_in * smap.tap_width))
    chan_base = (np.arange(c_in, dtype=np.int64) * smap.n_in)[:, None, None]
    for lo in range(0, smap.n_samples, step):
        hi = min(lo + step, smap.n_samples)
        vals = g[:, lo:hi, None] * smap.weights[None, lo:hi, :]   # (c_in, chunk, T)
        keys = smap.indices[None, lo:hi, :] + chan_base
        grad_in += np.bincount(keys.ravel(), weights=vals.ravel(),
                               minlength=c_in * smap.n_in)
    return grad_in.reshape(c_in, smap.n_in).astype(dtype, copy=False)


def mapped_conv_backward_params(grad_out: np.ndarray, x: np.ndarray,
                                smap: SampleMap, gemm=None):
    """Gradients w.r.t. weights and bias: GEMM against the saved columns."""
    x = _check_input(x, smap)
    grad_out = np.asarray(grad_out)
    if grad_out.ndim != 2 or grad_out.shape[1] != smap.n_out:
        raise DimensionError(f"grad_out must be (c_out, {smap.n_out}), got {grad_out.shape}")
    if gemm is None:
        gemm = np.matmul
    cols = mapped_im2col(x, smap)
    grad_w = gemm(grad_out, cols.T).reshape(grad_out.shape[0], x.shape[0], smap.k)
    grad_b = grad_out.sum(axis=1)
    return grad_w, grad_b


# --- dense grid reference -------------------------------------------------
#
# Straight im2col convolution on (c, h, w) images, cross-correlation
# convention (no kernel flip).  Exists to pin down what the mapped path must
# reproduce and to serve as the benchmark baseline.


def grid_im2col(x: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Dense im2col, shape (c_in * k, out_h * out_w). Zero padding."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"grid input must be 3d (c, h, w), got {x.shape}")
    c, h, w = x.shape
    out_h, out_w = grid_out_shape(h, w, kernel)
    sh, sw = kernel.stride
    ph, pw = kernel.padding
    dh, dw = kernel.dilation
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    eff_h = dh * (kernel.height - 1) + 1
    eff_w = dw * (kernel.width - 1) + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (eff_h, eff_w), axis=(1, 2))
    win = win[:, ::sh, ::sw, ::dh, ::dw]          # (c, out_h, out_w, kh, kw)
    win = win[:, :out_h, :out_w]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c * kernel.size, out_h * out_w)
    return np.ascontiguousarray(cols)


def grid_conv_reference(x: np.ndarray, params: ConvParams, kernel: KernelSpec,
                        gemm=None) -> np.ndarray:
    """Dense grid convolution, (c_in, h, w) -> (c_out, out_h, out_w)."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != params.c_in:
        raise DimensionError(f"input must be ({params.c_in}, h, w), got {x.shape}")
    if params.k != kernel.size:
        raise DimensionError(f"params expect k={params.k}, kernel has {kernel.size} slots")
    if gemm is None:
        gemm = np.matmul
    out_h, out_w = grid_out_shape(x.shape[1], x.shape[2], kernel)
    cols = grid_im2col(x, kernel)
    out = gemm(params.weights.reshape(params.c_out, -1), cols) + params.bias[:, None]
    return out.reshape(params.c_out, out_h, out_w)


def grid_conv_backward_input(grad_out: np.ndarray, params: ConvParams,
                             in_shape: tuple[int, int], kernel: KernelSpec,
                             gemm=None) -> np.ndarray:
    """Dense col2im input gradient for the grid reference."""
    grad_out = np.asarray(grad_out)
    h, w = in_shape
    out_h, out_w = grid_out_shape(h, w, kernel)
    if grad_out.shape != (params.c_out, out_h, out_w):
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != ({params.c_out}, {out_h}, {out_w})")
    if gemm is None:
        gemm = np.matmul
    c_in, k = params.c_in, params.k
    g = gemm(params.weights.reshape(params.c_out, c_in * k).T,
             grad_out.reshape(params.c_out, -1))
    g = g.reshape(c_in, kernel.height, kernel.width, out_h, out_w)
    sh, sw = kernel.stride
    ph, pw = kernel.padding
    dh, dw = kernel.dilation
    xg = np.zeros((c_in, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
    for i in range(kernel.height):
        for j in range(kernel.width):
            xg[:, i * dh: i * dh + sh * out_h: sh,
               j * dw: j * dw + sw * out_w: sw] += g[:, i, j]
    return xg[:, ph: ph + h, pw: pw + w]


def grid_conv_backward_params(grad_out: np.ndarray, x: np.ndarray,
                              kernel: KernelSpec, gemm=None):
    """Dense weight and bias gradients for the grid reference."""
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    if gemm is None:
        gemm = np.matmul
    c_out = grad_out.shape[0]
    cols = grid_im2col(x, kernel)
    go = grad_out.reshape(c_out, -1)
    grad_w = gemm(go, cols.T).reshape(c_out, x.shape[0], kernel.size)
    grad_b = go.sum(axis=1)
    return grad_w, grad_b


# --- finite-difference validation ----------------------------------------


@dataclass
class GradientCheckResult:
    """Relative errors per parameter group from a central-difference check."""

    input_error: float
    weight_error: float
    bias_error: float

    def max_error(self) -> float:
        return max(self.input_error, self.weight_error, self.bias_error)


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradient_check(smap: SampleMap, c_in: int, c_out: int, seed: int = 0,
                   step: float = 1e-6, max_inputs: int = 4096,
                   corrupt: bool = False) -> GradientCheckResult:
    """Compare analytic gradients with central differences on a random problem.

    Uses the scalar loss sum(forward * r) for a fixed random r, whose exact
    gradient the backward passes produce.  Errors are reported per group
    (input / weights / bias) relative to the group's largest magnitude.
    ``corrupt`` deliberately perturbs the analytic input gradient; a passing
    check on corrupted gradients would mean the harness is vacuous.
    """
    if smap.n_in > max_inputs:
        raise ParameterError(
            f"map has n_in={smap.n_in} > {max_inputs}; finite differences would "
            f"need {2 * smap.n_in * c_in} forward passes, refusing")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(c_in, smap.n_in))
    params = random_params(c_out, c_in, smap.k, seed=seed + 1, scale=1.0)
    r = rng.normal(size=(c_out, smap.n_out))

    def loss(xv, wv, bv):
        out = mapped_conv_forward(xv, smap, ConvParams(wv, bv))
        return float(np.sum(out * r))

    grad_in = mapped_conv_backward_input(r, smap, params)
    grad_w, grad_b = mapped_conv_backward_params(r, x, smap)
    if corrupt:
        grad_in = grad_in + 1e-3 * (1.0 + np.abs(grad_in))

    def numeric(base, fn):
        num = np.zeros_like(base, dtype=np.float64)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = base[i]
            base[i] = orig + step
            up = fn()
            base[i] = orig - step
            dn = fn()
            base[i] = orig
            num[i] = (up - dn) / (2.0 * step)
        return num

    num_in = numeric(x, lambda: loss(x, params.weights, params.bias))
    num_w = numeric(params.weights, lambda: loss(x, params.weights, params.bias))
    num_b = numeric(params.bias, lambda: loss(x, params.weights, params.bias))
    return GradientCheckResult(
        input_error=_relative_error(grad_in, num_in),
        weight_error=_relative_error(grad_w, num_w),
        bias_error=_relative_error(grad_b, num_b),
    )
