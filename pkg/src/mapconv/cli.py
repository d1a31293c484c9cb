"""Command-line surface: map generation, convolution, checking, resampling,
meshes, and the grid-vs-mapped benchmark.

Exit codes: 0 success, 1 internal error (a check that ran and failed, IO
trouble), 2 usage or dimension errors (bad flags, mismatched shapes,
malformed files).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench as bench_mod
from .conv import ConvParams, gradient_check, grid_conv_reference, mapped_conv_forward, \
    random_params
from .errors import DimensionError, FormatError, InvalidCoordinateError, MapconvError, \
    ParameterError
from .icosphere import expected_counts, load_vtxt, make_icosphere, make_isea_map, \
    mean_neighbor_angle, resample_equirect_to_vertices, resample_vertices_to_equirect, \
    save_obj, save_vtxt
from .pfm import read_pfm, write_pfm
from .projections import EquirectGeometry, cubemap_sample_coords, equirect_sample_coords, \
    make_cubemap_map, make_equirect_map, resample_cube_to_equirect, resample_equirect_to_cube
from .sample_map import KernelSpec, load_map, make_grid_map, make_shuffle_map, save_map

MAP_SUBTYPES = ("grid", "shuffle", "equirect-gnomonic", "equirect-equirect",
                "cubemap", "isea")
GRADCHECK_TOL = 1e-6
GRID_CHECK_TOL = 1e-12


def _add_kernel_flags(p: argparse.ArgumentParser, grid_extras: bool = False) -> None:
    p.add_argument("--kh", type=int, default=3, help="kernel height")
    p.add_argument("--kw", type=int, default=3, help="kernel width")
    if grid_extras:
        p.add_argument("--stride", type=int, default=1)
        p.add_argument("--pad", type=int, default=0)
        p.add_argument("--dil", type=int, default=1)


def _kernel_from(args) -> KernelSpec:
    return KernelSpec(args.kh, args.kw,
                      stride=getattr(args, "stride", 1),
                      padding=getattr(args, "pad", 0),
                      dilation=getattr(args, "dil", 1))


def _add_generator_flags(p: argparse.ArgumentParser) -> None:
    """Geometry flags shared by the genmap subtypes and gradcheck --gen."""
    _add_kernel_flags(p, grid_extras=True)
    p.add_argument("--h", type=int, help="image height")
    p.add_argument("--w", type=int, help="image width")
    p.add_argument("--face-dim", type=int, help="cube face edge length in pixels")
    p.add_argument("--order", type=int, help="icosphere subdivision order")
    p.add_argument("--out-order", type=int,
                   help="output mesh order for isea maps (default: same as --order)")
    p.add_argument("--interp", choices=("nearest", "bilinear"), default="bilinear")
    p.add_argument("--delta", type=float, help="kernel angular spacing in radians")
    p.add_argument("--seed", type=int, default=0, help="seed for shuffle maps")


def _require(args, names: list[str], subtype: str) -> None:
    missing = [n for n in names if getattr(args, n.replace("-", "_")) is None]
    if missing:
        raise ParameterError(
            f"{subtype} maps need {' '.join('--' + n for n in missing)}")


def _build_map(subtype: str, args):
    """Construct a map from generator flags. Returns (map, degenerate_count)."""
    kernel = _kernel_from(args)
    if subtype == "grid":
        _require(args, ["h", "w"], subtype)
        return make_grid_map(args.h, args.w, kernel), 0
    if subtype == "shuffle":
        _require(args, ["h", "w"], subtype)
        return make_shuffle_map(args.h, args.w, kernel, args.seed), 0
    if subtype in ("equirect-gnomonic", "equirect-equirect"):
        _require(args, ["h", "w"], subtype)
        projection = subtype.split("-", 1)[1]
        geom = EquirectGeometry(args.h, args.w)
        smap = make_equirect_map(geom, kernel, projection=projection,
                                 interp=args.interp, delta=args.delta)
        _, _, degen = equirect_sample_coords(geom, kernel, projection, delta=args.delta)
        return smap, int(degen.sum())
    if subtype == "cubemap":
        _require(args, ["face-dim"], subtype)
        smap = make_cubemap_map(args.face_dim, kernel, interp=args.interp,
                                delta=args.delta)
        _, _, degen = cubemap_sample_coords(args.face_dim, kernel, delta=args.delta)
        return smap, int(degen.sum())
    if subtype == "isea":
        _require(args, ["order"], subtype)
        mesh_in = make_icosphere(args.order)
        out_order = args.order if args.out_order is None else args.out_order
        mesh_out = mesh_in if out_order == args.order else make_icosphere(out_order)
        return make_isea_map(mesh_in, mesh_out, kernel, delta=args.delta), 0
    raise ParameterError(f"unknown map subtype {subtype!r}")


def _load_tensor(path):
    """Read PFM or VTXT by magic. Returns ((c, n) float64, image shape or None)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic[:2] in (b"Pf", b"PF"):
        img = read_pfm(path).astype(np.float64)
        return img.reshape(img.shape[0], -1), img.shape
    if magic == b"VTXT":
        return load_vtxt(path), None
    raise FormatError(f"{path}: neither a PFM image nor a VTXT vertex tensor")


def _load_params(args, c_in: int, k: int) -> ConvParams:
    if args.weights is not None:
        with np.load(args.weights) as npz:
            if "weights" not in npz:
                raise FormatError(f"{args.weights}: missing 'weights' array")
            w = np.asarray(npz["weights"], dtype=np.float64)
            if w.ndim != 3:
                raise DimensionError(f"weights must be (c_out, c_in, k), got {w.shape}")
            b = (np.asarray(npz["bias"], dtype=np.float64) if "bias" in npz
                 else np.zeros(w.shape[0]))
        return ConvParams(w, b)
    if args.random_weights is not None:
        c_out = args.c_out if args.c_out is not None else c_in
        return random_params(c_out, c_in, k, seed=args.random_weights)
    raise ParameterError("need --weights FILE.npz or --random-weights SEED")


# --- subcommands ------------------------------------------------------------


def cmd_genmap(args) -> int:
    smap, degen = _build_map(args.subtype, args)
    save_map(smap, args.out)
    hist = smap.tap_count_histogram()
    taps = " ".join(f"{i}:{hist[i]}" for i in range(5))
    print(f"map n_in={smap.n_in} n_out={smap.n_out} k={smap.k} "
          f"taps {taps} degenerate={degen}")
    return 0


def cmd_conv(args) -> int:
    smap = load_map(args.map)
    x, img_shape = _load_tensor(args.input)
    if x.shape[1] != smap.n_in:
        raise DimensionError(
            f"input has {x.shape[1]} locations, map expects n_in={smap.n_in}")
    params = _load_params(args, x.shape[0], smap.k)
    y = mapped_conv_forward(x, smap, params)

    if (args.out_h is None) != (args.out_w is None):
        raise ParameterError("--out-h and --out-w go together")
    if args.out_h is not None:
        if args.out_h * args.out_w != smap.n_out:
            raise DimensionError(
                f"--out-h x --out-w = {args.out_h * args.out_w}, map n_out={smap.n_out}")
        write_pfm(y.reshape(y.shape[0], args.out_h, args.out_w), args.out)
    else:
        save_vtxt(y, args.out)
    print(f"conv wrote {args.out}: shape ({y.shape[0]}, {y.shape[1]})")

    if args.check_against_grid:
        if args.grid_h is None or args.grid_w is None:
            raise ParameterError("--check-against-grid needs --grid-h and --grid-w")
        if args.grid_h * args.grid_w != x.shape[1]:
            raise DimensionError(
                f"--grid-h x --grid-w = {args.grid_h * args.grid_w}, "
                f"input has {x.shape[1]} locations")
        kernel = _kernel_from(args)
        ref = grid_conv_reference(x.reshape(x.shape[0], args.grid_h, args.grid_w),
                                  params, kernel)
        if ref.shape[1] * ref.shape[2] != smap.n_out:
            raise DimensionError(
                f"grid output {ref.shape[1]}x{ref.shape[2]} does not match "
                f"map n_out={smap.n_out}")
        diff = float(np.abs(y - ref.reshape(ref.shape[0], -1)).max(initial=0.0))
        verdict = "PASS" if diff <= GRID_CHECK_TOL else "FAIL"
        print(f"check-against-grid max_abs_diff={diff:.3e} tol={GRID_CHECK_TOL:g} {verdict}")
        if verdict == "FAIL":
            return 1
    return 0


def cmd_gradcheck(args) -> int:
    if args.map is not None:
        smap = load_map(args.map)
    elif args.gen is not None:
        smap, _ = _build_map(args.gen, args)
    else:
        raise ParameterError("gradcheck needs --map FILE or --gen SUBTYPE")
    result = gradient_check(smap, c_in=args.c_in, c_out=args.c_out,
                            seed=args.check_seed, corrupt=args.corrupt)
    print(f"input:   {result.input_error:.3e}")
    print(f"weights: {result.weight_error:.3e}")
    print(f"bias:    {result.bias_error:.3e}")
    worst = result.max_error()
    if worst < GRADCHECK_TOL:
        print(f"gradcheck PASS (max {worst:.3e} < {GRADCHECK_TOL:g})")
        return 0
    print(f"gradcheck FAIL (max {worst:.3e} >= {GRADCHECK_TOL:g})")
    return 1


def cmd_resample(args) -> int:
    if args.direction == "eq2ico":
        img = read_pfm(args.input).astype(np.float64)
        geom = EquirectGeometry(img.shape[1], img.shape[2])
        mesh = make_icosphere(args.order)
        vals = resample_equirect_to_vertices(img, mesh, geom, mode=args.mode)
        save_vtxt(vals, args.out)
        print(f"resample eq2ico wrote {args.out}: channels={vals.shape[0]} "
              f"count={vals.shape[1]}")
        return 0
    if args.direction == "ico2eq":
        vals = load_vtxt(args.input)
        v_expect, _ = expected_counts(args.order)
        if vals.shape[1] != v_expect:
            raise DimensionError(
                f"vertex tensor has {vals.shape[1]} vertices, order {args.order} "
                f"has {v_expect}")
        _require(args, ["h", "w"], "ico2eq")
        mesh = make_icosphere(args.order)
        geom = EquirectGeometry(args.h, args.w)
        img = resample_vertices_to_equirect(vals, mesh, geom)
        write_pfm(img, args.out)
        print(f"resample ico2eq wrote {args.out}: shape {img.shape}")
        return 0
    if args.direction == "eq2cube":
        _require(args, ["face-dim"], "eq2cube")
        img = read_pfm(args.input).astype(np.float64)
        cube = resample_equirect_to_cube(img, args.face_dim)
        strip = cube.reshape(cube.shape[0], 6 * args.face_dim, args.face_dim)
        write_pfm(strip, args.out)
        print(f"resample eq2cube wrote {args.out}: 6x{args.face_dim}x{args.face_dim} strip")
        return 0
    # cube2eq
    _require(args, ["h", "w"], "cube2eq")
    strip = read_pfm(args.input).astype(np.float64)
    if strip.shape[1] % 6 != 0:
        raise DimensionError(
            f"cube strip height {strip.shape[1]} is not 6 x face_dim")
    n = strip.shape[1] // 6
    if strip.shape[2] != n:
        raise DimensionError(
            f"cube strip is {strip.shape[1]}x{strip.shape[2]}, expected {6 * n}x{n}")
    cube = strip.reshape(strip.shape[0], 6, n, n)
    img = resample_cube_to_equirect(cube, EquirectGeometry(args.h, args.w))
    write_pfm(img, args.out)
    print(f"resample cube2eq wrote {args.out}: shape {img.shape}")
    return 0


def cmd_bench(args) -> int:
    sizes = []
    for tok in args.sizes:
        if "x" in tok:
            h, w = tok.split("x", 1)
            sizes.append((int(h), int(w)))
        else:
            sizes.append((int(tok), int(tok)))
    records = bench_mod.run_benchmark(
        sizes, channels=args.channels, kernel=_kernel_from(args),
        trials=args.trials, seed=args.seed, warmup=args.warmup,
        threads=args.threads)
    with open(args.out, "w") as fh:
        bench_mod.write_csv(records, fh, seed=args.seed, threads=args.threads)
    print(f"bench wrote {len(records)} records to {args.out}")
    return 0


def cmd_icosphere(args) -> int:
    mesh = make_icosphere(args.order, rule=args.rule)
    save_obj(mesh, args.out)
    euler = mesh.n_vertices - mesh.n_edges + mesh.n_faces
    print(f"icosphere order={mesh.order} V={mesh.n_vertices} E={mesh.n_edges} "
          f"F={mesh.n_faces} V-E+F={euler} "
          f"mean_neighbor_angle={mean_neighbor_angle(mesh):.6f}")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapconv",
        description="Convolution through explicit sampling maps: generation, "
                    "application, checking, resampling, benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genmap", help="generate a sampling map file")
    gsub = g.add_subparsers(dest="subtype", required=True)
    for subtype in MAP_SUBTYPES:
        p = gsub.add_parser(subtype)
        _add_generator_flags(p)
        p.add_argument("--out", required=True, help="output .mapc path")
        p.set_defaults(func=cmd_genmap)

    c = sub.add_parser("conv", help="apply a mapped convolution to a tensor file")
    c.add_argument("--input", required=True, help="PFM image or VTXT tensor")
    c.add_argument("--map", required=True, help=".mapc sampling map")
    c.add_argument("--weights", help=".npz with 'weights' (c_out,c_in,k) and 'bias'")
    c.add_argument("--random-weights", type=int, metavar="SEED",
                   help="seeded random filter bank instead of --weights")
    c.add_argument("--c-out", type=int, help="output channels for --random-weights")
    c.add_argument("--out", required=True, help="output file (VTXT, or PFM with --out-h/w)")
    c.add_argument("--out-h", type=int, help="write PFM with this height")
    c.add_argument("--out-w", type=int, help="write PFM with this width")
    c.add_argument("--check-against-grid", action="store_true",
                   help="compare against the dense grid reference (grid maps only)")
    c.add_argument("--grid-h", type=int, help="input image height for the grid check")
    c.add_argument("--grid-w", type=int, help="input image width for the grid check")
    _add_kernel_flags(c, grid_extras=True)
    c.set_defaults(func=cmd_conv)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the backward passes")
    gc.add_argument("--map", help=".mapc sampling map to check")
    gc.add_argument("--gen", choices=MAP_SUBTYPES,
                    help="generate the map from flags instead of --map")
    _add_generator_flags(gc)
    gc.add_argument("--c-in", type=int, default=2)
    gc.add_argument("--c-out", type=int, default=3)
    gc.add_argument("--check-seed", type=int, default=0,
                    help="seed for the random check instance")
    gc.add_argument("--corrupt", action="store_true",
                    help="perturb the analytic gradient; the check must then fail")
    gc.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("resample", help="move tensors between sphere layouts")
    r.add_argument("direction", choices=("eq2ico", "ico2eq", "eq2cube", "cube2eq"))
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--order", type=int, help="icosphere order (eq2ico, ico2eq)")
    r.add_argument("--h", type=int, help="output image height (ico2eq, cube2eq)")
    r.add_argument("--w", type=int, help="output image width (ico2eq, cube2eq)")
    r.add_argument("--face-dim", type=int, help="cube face edge length (eq2cube)")
    r.add_argument("--mode", choices=("scatter", "gather"), default="scatter",
                   help="eq2ico pixel pooling strategy")
    r.set_defaults(func=cmd_resample)

    b = sub.add_parser("bench", help="time grid vs mapped convolution")
    b.add_argument("--sizes", nargs="+", required=True, metavar="S|HxW",
                   help="image sizes, square ints or HxW pairs")
    b.add_argument("--channels", type=int, default=4)
    b.add_argument("--trials", type=int, default=100)
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=int, help="BLAS thread limit for the timed region")
    b.add_argument("--out", required=True, help="output CSV path")
    b.add_argument("--kh", type=int, default=3)
    b.add_argument("--kw", type=int, default=3)
    b.add_argument("--stride", type=int, default=1)
    b.add_argument("--pad", type=int, default=1)
    b.add_argument("--dil", type=int, default=1)
    b.set_defaults(func=cmd_bench)

    ic = sub.add_parser("icosphere", help="build an icosphere mesh OBJ")
    ic.add_argument("--order", type=int, required=True)
    ic.add_argument("--rule", choices=("midpoint", "loop"), default="midpoint")
    ic.add_argument("--out", required=True, help="output .obj path")
    ic.set_defaults(func=cmd_icosphere)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, DimensionError, InvalidCoordinateError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except MapconvError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
