"""Sampling maps: precomputed interpolation taps for mapped convolution.

A sample map answers, for every output location and kernel slot, the question
"which input elements does this slot read, and with what weights?".  The
answer is a short list of taps (at most four), fixed at map generation time.
The convolution engine then only gathers and accumulates; it never looks at
geometry.  Plain grid convolution is the special case where every slot has a
single unit-weight tap.

Maps are stored as fixed-width arrays rather than ragged lists: with S =
n_out * k sample slots and T <= 4 the tap capacity,

    counts  uint8   (S,)    active taps per slot
    indices int64   (S, T)  flat input indices, 0 in inactive slots
    weights float64 (S, T)  tap weights, 0.0 in inactive slots

Slot s = n * k + m holds kernel slot m of output location n.  Inactive slots
are canonically (index 0, weight 0) so maps survive a save/load round trip
bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, InvalidCoordinateError, ParameterError

MAX_TAPS = 4

_MAPC_MAGIC = b"MAPC"
_MAPC_VERSION = 1
# magic, version u32, n_in u64, n_out u64, k u32, reserved u32
_MAPC_HEADER = struct.Struct("<4sIQQII")


def _as_pair(value, name: str) -> tuple[int, int]:
    """Accept an int or an (int, int) pair, return the pair."""
    if np.isscalar(value):
        value = (value, value)
    pair = tuple(int(v) for v in value)
    if len(pair) != 2:
        raise ParameterError(f"{name} must be an int or a pair, got {value!r}")
    return pair


@dataclass(frozen=True)
class KernelSpec:
    """Logical kernel shape plus the grid hyperparameters a planar layout uses.

    For map generators on curved domains only ``height * width`` (the slot
    count) and the slot ordering matter; stride, padding and dilation apply
    to plain grid maps.
    """

    height: int
    width: int
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)

    def __post_init__(self):
        object.__setattr__(self, "stride", _as_pair(self.stride, "stride"))
        object.__setattr__(self, "padding", _as_pair(self.padding, "padding"))
        object.__setattr__(self, "dilation", _as_pair(self.dilation, "dilation"))
        if self.height < 1 or self.width < 1:
            raise ParameterError(f"kernel dims must be >= 1, got {self.height}x{self.width}")
        if min(self.stride) < 1 or min(self.dilation) < 1:
            raise ParameterError("stride and dilation must be >= 1")
        if min(self.padding) < 0:
            raise ParameterError("padding must be >= 0")

    @property
    def size(self) -> int:
        return self.height * self.width


def kernel_offsets(kernel: KernelSpec, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Planar (dx, dy) offsets for every kernel slot, centered on the kernel.

    Slot (i, j) sits at dx = (j - (w-1)/2) * delta and dy = ((h-1)/2 - i) * delta,
    so row 0 points "up" (+dy) and the center slot of an odd kernel is (0, 0)
    exactly.  Returned flattened in slot order, shape (k,) each.
    """
    if delta <= 0 or not np.isfinite(delta):
        raise ParameterError(f"spacing must be positive and finite, got {delta}")
    i, j = np.meshgrid(np.arange(kernel.height), np.arange(kernel.width), indexing="ij")
    dx = (j.ravel() - (kernel.width - 1) / 2.0) * delta
    dy = ((kernel.height - 1) / 2.0 - i.ravel()) * delta
    return dx, dy


@dataclass(frozen=True)
class SampleTap:
    """One weighted read from the input."""

    index: int
    weight: float


@dataclass(frozen=True)
class Sample:
    """The taps of a single sample slot."""

    taps: tuple[SampleTap, ...]

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        if len(self.taps) > MAX_TAPS:
            raise ParameterError(f"a sample holds at most {MAX_TAPS} taps, got {len(self.taps)}")

    @property
    def weight_sum(self) -> float:
        return float(sum(t.weight for t in self.taps))


@dataclass
class SampleMap:
    """A full sampling map: n_out * k sample slots over n_in input elements."""

    n_in: int
    n_out: int
    k: int
    counts: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    descriptor: str = field(default="", compare=False)

    def __post_init__(self):
        self.counts = np.ascontiguousarray(self.counts, dtype=np.uint8)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        s = self.n_out * self.k
        if self.counts.shape != (s,):
            raise DimensionError(f"counts must have shape ({s},), got {self.counts.shape}")
        if self.indices.ndim != 2 or self.indices.shape[0] != s:
            raise DimensionError(f"indices must have shape ({s}, T), got {self.indices.shape}")
        if self.weights.shape != self.indices.shape:
            raise DimensionError("indices and weights must share a shape")
        if self.tap_width < 1 or self.tap_width > MAX_TAPS:
            raise DimensionError(f"tap width must be in 1..{MAX_TAPS}, got {self.tap_width}")
        # canonical form: inactive slots are (0, 0.0)
        inactive = self.weights == 0.0
        self.indices[inactive] = 0
        self.weights[inactive] = 0.0

    @property
    def tap_width(self) -> int:
        return self.indices.shape[1]

    @property
    def n_samples(self) -> int:
        return self.n_out * self.k

    def validate(self) -> None:
        """Check structural invariants, raising on the first violation."""
        if self.n_in < 1 or self.n_out < 1 or self.k < 1:
            raise DimensionError("n_in, n_out and k must all be >= 1")
        slot = np.arange(self.tap_width, dtype=np.uint8)
        active = slot[None, :] < self.counts[:, None]
        if np.any(self.weights[~active] != 0.0):
            raise DimensionError("inactive tap slots must carry zero weight")
        if np.any(self.indices[~active] != 0):
            raise DimensionError("inactive tap slots must carry index 0")
        used = self.indices[active]
        if used.size and (used.min() < 0 or used.max() >= self.n_in):
            raise DimensionError("tap indices must lie in [0, n_in)")
        if not np.all(np.isfinite(self.weights)):
            raise DimensionError("tap weights must be finite")

    def sample(self, out_index: int, slot: int) -> Sample:
        """The taps of kernel slot `slot` at output location `out_index`."""
        if not (0 <= out_index < self.n_out and 0 <= slot < self.k):
            raise ParameterError("sample lookup out of range")
        s = out_index * self.k + slot
        c = int(self.counts[s])
        return Sample(tuple(SampleTap(int(self.indices[s, t]), float(self.weights[s, t]))
                            for t in range(c)))

    def tap_count_histogram(self) -> np.ndarray:
        """How many slots have 0, 1, ... MAX_TAPS active taps. Shape (MAX_TAPS+1,)."""
        return np.bincount(self.counts, minlength=MAX_TAPS + 1)[: MAX_TAPS + 1]


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidCoordinateError(f"{what} must be finite")


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (unlike np.round)."""
    x = np.asarray(x, dtype=np.float64)
    return np.trunc(x + np.copysign(0.5, x))


def nearest_tap_arrays(rows, cols, height: int, width: int, wrap_cols: bool = False):
    """Nearest-neighbor taps for fractional pixel coordinates.

    Rounds half away from zero, then drops samples whose rounded pixel falls
    outside the image (zero padding).  With ``wrap_cols`` the column axis is
    periodic (longitude seam) and only the row axis can reject.

    Returns (counts (S,), indices (S, 1), weights (S, 1)).
    """
    rows = np.asarray(rows, dtype=np.float64).ravel()
    cols = np.asarray(cols, dtype=np.float64).ravel()
    _check_finite(rows, "sample rows")
    _check_finite(cols, "sample cols")
    r = round_half_away(rows).astype(np.int64)
    c = round_half_away(cols).astype(np.int64)
    if wrap_cols:
        c %= width
        valid = (r >= 0) & (r < height)
    else:
        valid = (r >= 0) & (r < height) & (c >= 0) & (c < width)
    idx = np.where(valid, r * width + c, 0)[:, None]
    wts = valid.astype(np.float64)[:, None]
    return valid.astype(np.uint8), idx, wts


def bilinear_tap_arrays(rows, cols, height: int, width: int, wrap_cols: bool = False):
    """Bilinear taps for fractional pixel coordinates.

    Up to four corner taps per sample; corners falling outside the image are
    dropped without renormalizing, so the weight sum doubles as the inside
    fraction (zero padding).  With ``wrap_cols`` columns wrap around the seam.
    Zero-weight corners are dropped too, hence exact integer hits yield a
    single unit tap.

    Returns (counts (S,), indices (S, 4), weights (S, 4)) with active taps
    packed to the left in corner order (r0c0, r0c1, r1c0, r1c1).
    """
    rows = np.asarray(rows, dtype=np.float64).ravel()
    cols = np.asarray(cols, dtype=np.float64).ravel()
    _check_finite(rows, "sample rows")
    _check_finite(cols, "sample cols")
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)

    corner_r = np.stack([r0, r0, r0 + 1, r0 + 1], axis=1)
    corner_c = np.stack([c0, c0 + 1, c0, c0 + 1], axis=1)
    w_r = np.stack([1.0 - fr, 1.0 - fr, fr, fr], axis=1)
    w_c = np.stack([1.0 - fc, fc, 1.0 - fc, fc], axis=1)
    wts = w_r * w_c

    inside_r = (corner_r >= 0) & (corner_r < height)
    if wrap_cols:
        corner_c %= width
        inside = inside_r
    else:
        inside = inside_r & (corner_c >= 0) & (corner_c < width)
    wts = np.where(inside, wts, 0.0)
    idx = np.where(inside, corner_r * width + corner_c, 0)

    # pack nonzero taps left, preserving corner order
    dead = wts == 0.0
    order = np.argsort(dead, axis=1, kind="stable")
    take = np.take_along_axis
    idx = take(idx, order, axis=1)
    wts = take(wts, order, axis=1)
    counts = (wts != 0.0).sum(axis=1).astype(np.uint8)
    idx[wts == 0.0] = 0
    return counts, idx, wts


def _sample_from_row(counts, indices, weights, row: int) -> Sample:
    c = int(counts[row])
    return Sample(tuple(SampleTap(int(indices[row, t]), float(weights[row, t]))
                        for t in range(c)))


def nearest_tap(row: float, col: float, height: int, width: int,
                wrap_cols: bool = False) -> Sample:
    """Single-point nearest-neighbor tap. Empty sample when rounded off-image."""
    counts, idx, wts = nearest_tap_arrays([row], [col], height, width, wrap_cols)
    return _sample_from_row(counts, idx, wts, 0)


def bilinear_taps(row: float, col: float, height: int, width: int,
                  wrap_cols: bool = False) -> Sample:
    """Single-point bilinear taps; weight sum equals the in-image fraction."""
    counts, idx, wts = bilinear_tap_arrays([row], [col], height, width, wrap_cols)
    return _sample_from_row(counts, idx, wts, 0)


def grid_out_shape(height: int, width: int, kernel: KernelSpec) -> tuple[int, int]:
    """Output spatial shape of a grid convolution."""
    sh, sw = kernel.stride
    ph, pw = kernel.padding
    dh, dw = kernel.dilation
    out_h = (height + 2 * ph - dh * (kernel.height - 1) - 1) // sh + 1
    out_w = (width + 2 * pw - dw * (kernel.width - 1) - 1) // sw + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"kernel {kernel.height}x{kernel.width} does not fit a {height}x{width} input")
    return out_h, out_w


def make_grid_map(height: int, width: int, kernel: KernelSpec) -> SampleMap:
    """The sampling map of an ordinary grid convolution.

    Every slot reads exactly one pixel with weight 1; slots that land in the
    padding band get zero taps, which is what zero padding means here.
    A mapped convolution over this map must reproduce grid convolution
    exactly (same floating point ops in the same order).
    """
    if height < 1 or width < 1:
        raise DimensionError(f"input dims must be >= 1, got {height}x{width}")
    out_h, out_w = grid_out_shape(height, width, kernel)
    sh, sw = kernel.stride
    ph, pw = kernel.padding
    dh, dw = kernel.dilation

    oy, ox = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    ki, kj = np.meshgrid(np.arange(kernel.height), np.arange(kernel.width), indexing="ij")
    # in_y[s] for slot s = n*k + m
    in_y = (oy.ravel()[:, None] * sh - ph) + ki.ravel()[None, :] * dh
    in_x = (ox.ravel()[:, None] * sw - pw) + kj.ravel()[None, :] * dw
    valid = (in_y >= 0) & (in_y < height) & (in_x >= 0) & (in_x < width)

    idx = np.where(valid, in_y * width + in_x, 0).reshape(-1, 1)
    wts = valid.astype(np.float64).reshape(-1, 1)
    counts = valid.ravel().astype(np.uint8)
    desc = (f"grid:{height}x{width},k={kernel.height}x{kernel.width},"
            f"s={sh}x{sw},p={ph}x{pw},d={dh}x{dw}")
    return SampleMap(height * width, out_h * out_w, kernel.size,
                     counts, idx, wts, descriptor=desc)


def make_shuffle_map(height: int, width: int, kernel: KernelSpec, seed: int) -> SampleMap:
    """A grid-shaped map whose input locations are randomly permuted.

    Same tap structure and count as a same-size grid convolution (odd kernel,
    stride 1, symmetric padding so n_out == n_in), but every input index goes
    through one fixed random permutation of the image.  Memory access is
    maximally incoherent while arithmetic cost is unchanged, which is the
    point: it isolates the price of indirect gathering.
    """
    if kernel.height % 2 == 0 or kernel.width % 2 == 0:
        raise ParameterError("shuffle maps need odd kernel dims so that n_out == n_in")
    base = KernelSpec(kernel.height, kernel.width,
                      padding=((kernel.height - 1) // 2, (kernel.width - 1) // 2))
    smap = make_grid_map(height, width, base)
    perm = np.random.default_rng(seed).permutation(height * width)
    active = smap.weights != 0.0
    smap.indices[active] = perm[smap.indices[active]]
    smap.descriptor = f"shuffle:{height}x{width},k={kernel.height}x{kernel.width},seed={seed}"
    return smap


def save_map(smap: SampleMap, path) -> None:
    """Write a sampling map in the MAPC binary format (little endian).

    Header: magic "MAPC", u32 version, u64 n_in, u64 n_out, u32 k, u32
    reserved.  Then n_out*k records in slot order: u8 tap count followed by
    that many (u64 index, f64 weight) pairs.  The descriptor is not stored.
    """
    smap.validate()
    header = _MAPC_HEADER.pack(_MAPC_MAGIC, _MAPC_VERSION,
                               smap.n_in, smap.n_out, smap.k, 0)
    counts = smap.counts.astype(np.int64)
    rec_len = 1 + 16 * counts
    offsets = np.concatenate(([0], np.cumsum(rec_len)[:-1]))
    buf = np.zeros(int(rec_len.sum()), dtype=np.uint8)
    buf[offsets] = smap.counts
    for t in range(smap.tap_width):
        rows = np.nonzero(counts > t)[0]
        if rows.size == 0:
            break
        pos = offsets[rows] + 1 + 16 * t
        idx_bytes = smap.indices[rows, t].astype("<u8").view(np.uint8).reshape(-1, 8)
        wt_bytes = smap.weights[rows, t].astype("<f8").view(np.uint8).reshape(-1, 8)
        for b in range(8):
            buf[pos + b] = idx_bytes[:, b]
            buf[pos + 8 + b] = wt_bytes[:, b]
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(buf.tobytes())


def _record_offsets(data: np.ndarray, n_samples: int) -> np.ndarray:
    """Byte offset of each variable-length record. Fast path for uniform counts."""
    if n_samples == 0:
        return np.zeros(0, dtype=np.int64)
    if data.size % n_samples == 0:
        stride, rem = divmod(data.size // n_samples - 1, 16)
        if rem == 0 and 0 <= stride <= MAX_TAPS:
            offsets = np.arange(n_samples, dtype=np.int64) * (1 + 16 * stride)
            if np.all(data[offsets] == stride):
                return offsets
    offsets = np.empty(n_samples, dtype=np.int64)
    pos = 0
    size = data.size
    for s in range(n_samples):
        if pos >= size:
            raise FormatError("map file truncated mid-record")
        offsets[s] = pos
        pos += 1 + 16 * int(data[pos])
    if pos != size:
        raise FormatError("map file has trailing bytes after the last record")
    return offsets


def load_map(path) -> SampleMap:
    """Read a MAPC file back into a SampleMap. Inverse of save_map."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _MAPC_HEADER.size:
        raise FormatError("map file shorter than its header")
    magic, version, n_in, n_out, k, _reserved = _MAPC_HEADER.unpack_from(raw)
    if magic != _MAPC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAPC_MAGIC!r}")
    if version != _MAPC_VERSION:
        raise FormatError(f"unsupported map version {version}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=_MAPC_HEADER.size)
    n_samples = n_out * k
    offsets = _record_offsets(data, n_samples)
    counts = data[offsets] if n_samples else np.zeros(0, dtype=np.uint8)
    if counts.size and counts.max() > MAX_TAPS:
        raise FormatError(f"tap count exceeds {MAX_TAPS}")
    width = max(int(counts.max()), 1) if counts.size else 1
    indices = np.zeros((n_samples, width), dtype=np.int64)
    weights = np.zeros((n_samples, width), dtype=np.float64)
    expected = offsets[-1] + 1 + 16 * int(counts[-1]) if n_samples else 0
    if data.size != expected:
        raise FormatError("map file length does not match its records")
    for t in range(width):
        rows = np.nonzero(counts > t)[0]
        if rows.size == 0:
            break
        pos = offsets[rows] + 1 + 16 * t
        byte_idx = pos[:, None] + np.arange(8)
        indices[rows, t] = data[byte_idx].copy().view("<u8").ravel().astype(np.int64)
        weights[rows, t] = data[byte_idx + 8].copy().view("<f8").ravel()
    smap = SampleMap(n_in, n_out, k, counts.copy(), indices, weights,
                     descriptor="mapc-file")
    smap.validate()
    return smap
