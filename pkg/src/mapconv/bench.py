"""Grid-vs-mapped convolution timing harness.

The interesting question is what explicit sampling maps cost relative to the
plain im2col grid path when the map destroys memory locality.  The mapped
variants therefore gather through a "shuffle" map: every kernel slot of every
output pixel reads a uniformly random image location, resolved either to the
single nearest pixel or to its four bilinear neighbors.  Grid rows are the
baseline; mapped rows carry their slowdown factor.

Wall-clock timing wraps the kernel call only; map generation, allocation,
and IO sit outside the timed region.  The first `warmup` calls per cell are
discarded.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .conv import (
    ConvParams,
    grid_conv_backward_input,
    grid_conv_backward_params,
    grid_conv_reference,
    mapped_conv_backward_input,
    mapped_conv_backward_params,
    mapped_conv_forward,
    random_params,
)
from .errors import ParameterError
from .sample_map import KernelSpec, SampleMap, bilinear_tap_arrays, nearest_tap_arrays

CSV_HEADER = "pass,variant,channels,height,width,trials,mean_seconds,slowdown_vs_grid"

PASSES = ("forward", "backward", "fwd+bwd")
VARIANTS = ("grid", "mapped-nearest", "mapped-bilinear")


@dataclass
class BenchRecord:
    """One timing cell: a (pass, variant) pair at one image size."""

    pass_name: str
    variant: str
    channels: int
    height: int
    width: int
    trials: int
    mean_seconds: float
    slowdown_vs_grid: float | None

    def csv_row(self) -> str:
        slow = "" if self.slowdown_vs_grid is None else f"{self.slowdown_vs_grid:.4f}"
        return (f"{self.pass_name},{self.variant},{self.channels},{self.height},"
                f"{self.width},{self.trials},{self.mean_seconds:.9f},{slow}")


def random_sample_map(height: int, width: int, kernel: KernelSpec,
                      interp: str, seed: int) -> SampleMap:
    """Shuffle map: each kernel slot samples a uniformly random location.

    interp="nearest" snaps to one pixel per slot; interp="bilinear" keeps
    the four surrounding pixels, so the two variants move 1x and 4x the tap
    traffic over identical access randomness.
    """
    if interp not in ("nearest", "bilinear"):
        raise ParameterError(f"interp must be nearest or bilinear, got {interp!r}")
    n = height * width
    k = kernel.size
    rng = np.random.default_rng(seed)
    rows = rng.uniform(0.0, height - 1.0, size=n * k)
    cols = rng.uniform(0.0, width - 1.0, size=n * k)
    if interp == "nearest":
        counts, idx, wts = nearest_tap_arrays(rows, cols, height, width)
    else:
        counts, idx, wts = bilinear_tap_arrays(rows, cols, height, width)
    return SampleMap(n, n, k, counts, idx, wts,
                     descriptor=f"shuffle-{interp}:{height}x{width},seed={seed}")


def _timed(fn, trials: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    total = 0.0
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        total += time.perf_counter() - t0
    return total / trials


def _pass_runners(pass_name: str, x_grid, x_flat, grad_grid, grad_flat,
                  params, kernel, smap_n, smap_b):
    """Closures for one pass: {variant: zero-arg callable}."""
    def grid_forward():
        grid_conv_reference(x_grid, params, kernel)

    def grid_backward():
        grid_conv_backward_input(grad_grid, params, x_grid.shape[1:], kernel)
        grid_conv_backward_params(grad_grid, x_grid, kernel)

    def mapped_forward(smap):
        mapped_conv_forward(x_flat, smap, params)

    def mapped_backward(smap):
        mapped_conv_backward_input(grad_flat, smap, params)
        mapped_conv_backward_params(grad_flat, x_flat, smap)

    if pass_name == "forward":
        return {"grid": grid_forward,
                "mapped-nearest": lambda: mapped_forward(smap_n),
                "mapped-bilinear": lambda: mapped_forward(smap_b)}
    if pass_name == "backward":
        return {"grid": grid_backward,
                "mapped-nearest": lambda: mapped_backward(smap_n),
                "mapped-bilinear": lambda: mapped_backward(smap_b)}
    return {"grid": lambda: (grid_forward(), grid_backward()),
            "mapped-nearest": lambda: (mapped_forward(smap_n), mapped_backward(smap_n)),
            "mapped-bilinear": lambda: (mapped_forward(smap_b), mapped_backward(smap_b))}


def run_benchmark(sizes, channels: int = 4, kernel: KernelSpec | None = None,
                  trials: int = 100, seed: int = 0, warmup: int = 5,
                  threads: int | None = None) -> list[BenchRecord]:
    """Time every (pass, variant) cell at every (height, width) in `sizes`.

    Returns records in pass-major, size-minor order with grid rows first in
    each block so slowdowns are computed against the matching baseline.
    """
    if kernel is None:
        kernel = KernelSpec(3, 3, padding=1)  # same-size output, like the maps
    sizes = [(int(h), int(w)) for h, w in sizes]
    if not sizes or any(h <= 0 or w <= 0 for h, w in sizes):
        raise ParameterError("sizes must be a non-empty list of positive (h, w) pairs")
    if trials < 1:
        raise ParameterError("trials must be >= 1")

    records: list[BenchRecord] = []
    limit = threads if threads and threads > 0 else None
    with threadpool_limits(limits=limit):
        for h, w in sizes:
            rng = np.random.default_rng(seed + 7919 * h + w)
            x_grid = rng.normal(size=(channels, h, w))
            x_flat = x_grid.reshape(channels, h * w)
            params = random_params(channels, channels, kernel.size,
                                   seed=seed + 13, dtype=np.float64)
            grad_grid = rng.normal(size=(channels, h, w))
            grad_flat = grad_grid.reshape(channels, h * w)
            smap_n = random_sample_map(h, w, kernel, "nearest", seed + 1)
            smap_b = random_sample_map(h, w, kernel, "bilinear", seed + 2)

            for pass_name in PASSES:
                runners = _pass_runners(pass_name, x_grid, x_flat, grad_grid,
                                        grad_flat, params, kernel, smap_n, smap_b)
                grid_mean = _timed(runners["grid"], trials, warmup)
                records.append(BenchRecord(pass_name, "grid", channels, h, w,
                                           trials, grid_mean, None))
                for variant in VARIANTS[1:]:
                    mean = _timed(runners[variant], trials, warmup)
                    records.append(BenchRecord(pass_name, variant, channels, h, w,
                                               trials, mean, mean / grid_mean))
    return records


def thread_count(threads: int | None = None) -> int:
    """The thread limit a run will use: the flag if set, else the CPU count."""
    if threads and threads > 0:
        return threads
    return os.cpu_count() or 1


def write_csv(records, fh, seed: int, threads: int | None = None) -> None:
    """Emit records as CSV with a descriptor comment line."""
    fh.write(f"# seed={seed} threads={thread_count(threads)} kernel-timing-only\n")
    fh.write(CSV_HEADER + "\n")
    for r in records:
        fh.write(r.csv_row() + "\n")
