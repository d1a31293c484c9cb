"""Spherical coordinate conventions, inverse projections, and map generators.

Covers the planar side of the sphere story: equirectangular pixel
conventions, the inverse gnomonic and inverse equirectangular projections
that place kernel samples on the sphere, the cube-map face conventions, and
the generators that bake all of it into sampling maps.

Conventions, fixed once:
  - latitude phi in [-pi/2, pi/2], longitude lam in [-pi, pi)
  - equirect pixel (row, col):  lam = 2*pi*(col+0.5)/width - pi,
    phi = pi/2 - pi*(row+0.5)/height  (row 0 is the north edge)
  - kernel slot (i, j) sits at angular offset
    dx = (j-(w-1)/2)*delta, dy = ((h-1)/2-i)*delta  (row 0 is "up", +phi)
  - cube faces ordered +X,-X,+Y,-Y,+Z,-Z, each face_dim x face_dim,
    row-major per face; face-local u,v in [-1,1]; +Z looks at lam=0,
    +Y holds the south pole (its face latitudes are all negative)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DimensionError, InvalidCoordinateError, ParameterError
from .sample_map import (
    KernelSpec,
    SampleMap,
    bilinear_tap_arrays,
    kernel_offsets,
    nearest_tap_arrays,
)

HALF_PI = np.pi / 2.0
TWO_PI = 2.0 * np.pi


def wrap_longitude(lam):
    """Wrap longitudes into [-pi, pi)."""
    return (np.asarray(lam, dtype=np.float64) + np.pi) % TWO_PI - np.pi


def normalize_sph_arrays(phi, lam):
    """Fold any (phi, lam) onto the canonical chart.

    Latitudes beyond a pole are reflected across it with a pi meridian
    shift (the antipodal wrap); longitude wraps to [-pi, pi).  Entries
    already in range pass through untouched, bit for bit, so normalizing
    is idempotent.
    """
    phi0 = np.asarray(phi, dtype=np.float64)
    lam0 = np.asarray(lam, dtype=np.float64)
    shape = np.broadcast_shapes(phi0.shape, lam0.shape)
    phi = np.broadcast_to(phi0, shape).ravel().copy()
    lam = np.broadcast_to(lam0, shape).ravel().copy()
    bad = (phi > HALF_PI) | (phi < -HALF_PI)
    if np.any(bad):
        pf = (phi[bad] + np.pi) % TWO_PI - np.pi
        over = pf > HALF_PI
        under = pf < -HALF_PI
        pf = np.where(over, np.pi - pf, pf)
        pf = np.where(under, -np.pi - pf, pf)
        phi[bad] = pf
        lam[bad] = np.where(over | under, lam[bad] + np.pi, lam[bad])
    out = (lam >= np.pi) | (lam < -np.pi)
    if np.any(out):
        lam[out] = (lam[out] + np.pi) % TWO_PI - np.pi
    return phi.reshape(shape), lam.reshape(shape)


@dataclass
class SphericalCoord:
    """A point on the sphere, always stored normalized."""

    phi: float
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.phi) and np.isfinite(self.lam)):
            raise InvalidCoordinateError(f"non-finite spherical coord ({self.phi}, {self.lam})")
        phi, lam = normalize_sph_arrays(self.phi, self.lam)
        self.phi = float(phi)
        self.lam = float(lam)


@dataclass(frozen=True)
class EquirectGeometry:
    """Equirectangular image dimensions plus the pixel<->angle convention."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ParameterError(f"image dims must be >= 1, got {self.height}x{self.width}")
        if self.width != 2 * self.height:
            warnings.warn(
                f"{self.width}x{self.height} is not a 2:1 equirectangular image; "
                "full spherical coverage needs width == 2*height", stacklevel=3)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width

    @property
    def pixel_pitch(self) -> float:
        """Equatorial angular pitch, radians per pixel."""
        return TWO_PI / self.width


def equirect_to_sph_arrays(rows, cols, geom: EquirectGeometry):
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    lam = TWO_PI * (cols + 0.5) / geom.width - np.pi
    phi = HALF_PI - np.pi * (rows + 0.5) / geom.height
    return phi, lam


def sph_to_equirect_arrays(phi, lam, geom: EquirectGeometry):
    phi = np.asarray(phi, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    col = (lam + np.pi) * geom.width / TWO_PI - 0.5
    row = (HALF_PI - phi) * geom.height / np.pi - 0.5
    return row, col


def equirect_pix_to_sph(row: float, col: float, geom: EquirectGeometry) -> SphericalCoord:
    """Pixel (row, col) to sphere; any reals accepted, result normalized."""
    if not (np.isfinite(row) and np.isfinite(col)):
        raise InvalidCoordinateError("pixel coordinates must be finite")
    phi, lam = equirect_to_sph_arrays(row, col, geom)
    return SphericalCoord(float(phi), float(lam))


def sph_to_equirect_pix(coord: SphericalCoord, geom: EquirectGeometry) -> tuple[float, float]:
    """Sphere to fractional pixel (row, col); inverse of equirect_pix_to_sph."""
    row, col = sph_to_equirect_arrays(coord.phi, coord.lam, geom)
    return float(row), float(col)


def pixel_solid_angles(geom: EquirectGeometry) -> np.ndarray:
    """Solid angle of each pixel row, shape (height,), steradians.

    Every pixel in a row subtends the same solid angle:
    (2*pi/width) * (sin(phi_top) - sin(phi_bottom)).  Sums to 4*pi over the
    whole image (times width).
    """
    edges = HALF_PI - np.pi * np.arange(geom.height + 1) / geom.height
    band = np.sin(edges[:-1]) - np.sin(edges[1:])
    return band * (TWO_PI / geom.width)


# --- inverse projections ---------------------------------------------------


def inverse_gnomonic_arrays(phi0, lam0, dx, dy):
    """Inverse gnomonic projection: tangent-plane offsets to sphere points.

    The tangent plane touches the sphere at (phi0, lam0); (dx, dy) are
    planar offsets with +dy toward the north pole along the meridian.  With
    rho = sqrt(dx^2+dy^2) and c = atan(rho), the textbook form

        phi = asin(cos(c) sin(phi0) + dy sin(c) cos(phi0) / rho)
        lam = lam0 + atan2(dx sin(c), rho cos(phi0) cos(c) - dy sin(phi0) sin(c))

    reduces (using sin(c) = rho/sqrt(1+rho^2)) to the closed form below,
    which has no 0/0 at rho = 0.  Exact zero offsets still return the
    center bitwise.  Broadcasts; raw (unnormalized) longitude is returned
    so callers can see the pre-wrap value.
    """
    phi0 = np.asarray(phi0, dtype=np.float64)
    lam0 = np.asarray(lam0, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    sin0 = np.sin(phi0)
    cos0 = np.cos(phi0)
    inv_r = 1.0 / np.sqrt(1.0 + dx * dx + dy * dy)
    phi = np.arcsin(np.clip((sin0 + dy * cos0) * inv_r, -1.0, 1.0))
    lam = lam0 + np.arctan2(dx, cos0 - dy * sin0)
    center = (dx == 0.0) & (dy == 0.0)
    phi = np.where(center, np.broadcast_to(phi0, phi.shape), phi)
    lam = np.where(center, np.broadcast_to(lam0, lam.shape), lam)
    return phi, lam


def inverse_gnomonic(center: SphericalCoord, dx: float, dy: float) -> SphericalCoord:
    """Scalar inverse gnomonic projection, normalized output."""
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise InvalidCoordinateError("offsets must be finite")
    if dx == 0.0 and dy == 0.0:
        return SphericalCoord(center.phi, center.lam)
    phi, lam = inverse_gnomonic_arrays(center.phi, center.lam, dx, dy)
    return SphericalCoord(float(phi), float(lam))


POLE_EPS = 1e-9


def inverse_equirect_arrays(phi0, lam0, dx, dy):
    """Inverse equirectangular projection: phi = phi0 + dy, lam = lam0 + dx*sec(phi).

    The secant uses the offset latitude phi0 + dy.  Within POLE_EPS of a
    pole the secant magnitude is clamped at sec(pi/2 - POLE_EPS) and the
    sample is flagged degenerate.  Returns raw (phi, lam, degenerate); phi
    is the plain sum, un-normalized, so callers can observe the exact
    row-preservation identity before pole folding.
    """
    phi0 = np.asarray(phi0, dtype=np.float64)
    lam0 = np.asarray(lam0, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    phi = phi0 + dy
    cos_phi = np.cos(phi)
    sec_max = 1.0 / np.sin(POLE_EPS)
    degenerate = np.abs(cos_phi) < np.sin(POLE_EPS)
    with np.errstate(divide="ignore"):
        sec = 1.0 / cos_phi
    sec = np.clip(sec, -sec_max, sec_max)
    lam = lam0 + dx * sec
    shape = np.broadcast_shapes(phi.shape, lam.shape)
    return (np.broadcast_to(phi, shape).copy(), lam,
            np.broadcast_to(degenerate, shape).copy())


def inverse_equirect(center: SphericalCoord, dx: float, dy: float
                     ) -> tuple[SphericalCoord, bool]:
    """Scalar inverse equirectangular step: (normalized coord, degenerate flag)."""
    if not (np.isfinite(dx) and np.isfinite(dy)):
        raise InvalidCoordinateError("offsets must be finite")
    if dx == 0.0 and dy == 0.0:
        return SphericalCoord(center.phi, center.lam), False
    phi, lam, degen = inverse_equirect_arrays(center.phi, center.lam, dx, dy)
    return SphericalCoord(float(phi), float(lam)), bool(degen)


# --- equirectangular map generator -----------------------------------------


def equirect_sample_coords(geom: EquirectGeometry, kernel: KernelSpec,
                           projection: str, delta: float | None = None):
    """Raw kernel sample coordinates for every pixel of an equirect image.

    Returns (phi, lam, degenerate), each (n_pixels, k), in pixel-row-major
    center order.  Coordinates are pre-normalization: phi may exceed the
    poles, lam may exceed the seam.  The degenerate mask is all-False for
    the gnomonic projection.  Shared by the map generator and by tests that
    need exact per-sample identities.
    """
    if projection not in ("gnomonic", "equirect"):
        raise ParameterError(f"projection must be gnomonic or equirect, got {projection!r}")
    if delta is None:
        delta = geom.pixel_pitch
    rows, cols = np.meshgrid(np.arange(geom.height), np.arange(geom.width), indexing="ij")
    phi0, lam0 = equirect_to_sph_arrays(rows.ravel(), cols.ravel(), geom)
    dx, dy = kernel_offsets(kernel, delta)
    if projection == "gnomonic":
        phi, lam = inverse_gnomonic_arrays(phi0[:, None], lam0[:, None],
                                           dx[None, :], dy[None, :])
        degen = np.zeros(phi.shape, dtype=bool)
    else:
        phi, lam, degen = inverse_equirect_arrays(phi0[:, None], lam0[:, None],
                                                  dx[None, :], dy[None, :])
    return phi, lam, degen


_INTERP_BUILDERS = {"nearest": nearest_tap_arrays, "bilinear": bilinear_tap_arrays}


def make_equirect_map(geom: EquirectGeometry, kernel: KernelSpec,
                      projection: str = "gnomonic", interp: str = "bilinear",
                      delta: float | None = None) -> SampleMap:
    """Sampling map for convolving an equirectangular image on the sphere.

    Kernel centers sit at every pixel; offsets are applied through the
    chosen inverse projection and converted back to pixel coordinates.
    Longitude always wraps horizontally; latitudes past a pole fold over
    (antipodal wrap); taps still off-image vertically are dropped (zero
    padding).  n_out == n_in == geom.n_pixels.
    """
    if interp not in _INTERP_BUILDERS:
        raise ParameterError(f"interp must be nearest or bilinear, got {interp!r}")
    phi, lam, _ = equirect_sample_coords(geom, kernel, projection, delta)
    phi, lam = normalize_sph_arrays(phi, lam)
    rows, cols = sph_to_equirect_arrays(phi, lam, geom)
    counts, idx, wts = _INTERP_BUILDERS[interp](
        rows.ravel(), cols.ravel(), geom.height, geom.width, wrap_cols=True)
    desc = (f"equirect-{projection}:{geom.height}x{geom.width},"
            f"k={kernel.height}x{kernel.width},interp={interp}")
    return SampleMap(geom.n_pixels, geom.n_pixels, kernel.size,
                     counts, idx, wts, descriptor=desc)


# --- cube maps --------------------------------------------------------------


class CubeFace(IntEnum):
    POS_X = 0
    NEG_X = 1
    POS_Y = 2
    NEG_Y = 3
    POS_Z = 4
    NEG_Z = 5


# face plane point: normal + u * U_AXIS + v * V_AXIS, cube side 2
# frame: x toward lam=pi/2, y toward the south pole, z toward lam=0
_FACE_NORMAL = np.array([
    [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
])
_FACE_U = np.array([
    [0.0, 0.0, -1.0], [0.0, 0.0, 1.0],
    [1.0, 0.0, 0.0], [1.0, 0.0, 0.0],
    [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
])
_FACE_V = np.array([
    [0.0, -1.0, 0.0], [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0], [0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0], [0.0, -1.0, 0.0],
])


@dataclass
class CubeFaceCoord:
    """Face-local coordinates on the unit cube map; |u| <= 1, |v| <= 1."""

    face: CubeFace
    u: float
    v: float

    def __post_init__(self):
        self.face = CubeFace(self.face)
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise InvalidCoordinateError("face coordinates must be finite")
        if max(abs(self.u), abs(self.v)) > 1.0 + 1e-9:
            raise InvalidCoordinateError(
                f"face coordinates out of range: u={self.u}, v={self.v}")
        self.u = float(np.clip(self.u, -1.0, 1.0))
        self.v = float(np.clip(self.v, -1.0, 1.0))


def _sph_to_cube_xyz(phi, lam):
    cos_phi = np.cos(phi)
    return cos_phi * np.sin(lam), -np.sin(phi), cos_phi * np.cos(lam)


def cube_face_to_sph_arrays(face, u, v):
    """Face-local (u, v) to (phi, lam). Broadcasts."""
    face = np.asarray(face, dtype=np.int64)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    p = (_FACE_NORMAL[face] + u[..., None] * _FACE_U[face]
         + v[..., None] * _FACE_V[face])
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    phi = np.arctan2(-y, np.hypot(x, z))
    lam = np.arctan2(x, z)
    return phi, lam


def sph_to_cube_face_arrays(phi, lam):
    """(phi, lam) to (face, u, v): dominant-axis face pick, then plane divide.

    Axis ties break by fixed priority +X > -X > +Y > -Y > +Z > -Z.  Output
    u, v are clipped into [-1, 1] (float roundoff at face edges only).
    """
    phi, lam = np.broadcast_arrays(np.asarray(phi, dtype=np.float64),
                                   np.asarray(lam, dtype=np.float64))
    shape = phi.shape
    x, y, z = _sph_to_cube_xyz(phi.ravel(), lam.ravel())
    ax, ay, az = np.abs(x), np.abs(y), np.abs(z)
    on_x = (ax >= ay) & (ax >= az)
    on_y = ~on_x & (ay >= az)
    on_z = ~on_x & ~on_y

    face = np.empty(x.shape, dtype=np.int64)
    u = np.empty(x.shape, dtype=np.float64)
    v = np.empty(x.shape, dtype=np.float64)
    face[on_x] = np.where(x[on_x] >= 0, CubeFace.POS_X, CubeFace.NEG_X)
    u[on_x] = np.where(x[on_x] >= 0, -z[on_x], z[on_x]) / ax[on_x]
    v[on_x] = -y[on_x] / ax[on_x]
    face[on_y] = np.where(y[on_y] >= 0, CubeFace.POS_Y, CubeFace.NEG_Y)
    u[on_y] = x[on_y] / ay[on_y]
    v[on_y] = z[on_y] / ay[on_y]
    face[on_z] = np.where(z[on_z] >= 0, CubeFace.POS_Z, CubeFace.NEG_Z)
    u[on_z] = np.where(z[on_z] >= 0, x[on_z], -x[on_z]) / az[on_z]
    v[on_z] = -y[on_z] / az[on_z]
    u = np.clip(u, -1.0, 1.0)
    v = np.clip(v, -1.0, 1.0)
    return face.reshape(shape), u.reshape(shape), v.reshape(shape)


def cube_face_to_sph(coord: CubeFaceCoord) -> SphericalCoord:
    """Face point to sphere point."""
    phi, lam = cube_face_to_sph_arrays(int(coord.face), coord.u, coord.v)
    return SphericalCoord(float(phi), float(lam))


def sph_to_cube_face(coord: SphericalCoord) -> CubeFaceCoord:
    """Sphere point to the face point that looks back at it."""
    face, u, v = sph_to_cube_face_arrays(coord.phi, coord.lam)
    return CubeFaceCoord(CubeFace(int(face)), float(u), float(v))


def cube_pixel_to_uv(rows, cols, face_dim: int):
    """Face pixel centers to face-local coordinates."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    u = (2.0 * cols + 1.0) / face_dim - 1.0
    v = 1.0 - (2.0 * rows + 1.0) / face_dim
    return u, v


def cube_uv_to_pixel(u, v, face_dim: int):
    """Face-local coordinates to fractional face pixels. Inverse of the above."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    col = (u + 1.0) * face_dim / 2.0 - 0.5
    row = (1.0 - v) * face_dim / 2.0 - 0.5
    return row, col


def _cube_center_grid(face_dim: int):
    """(face, u, v) arrays for all 6 * face_dim^2 pixel centers, flat order."""
    r, c = np.meshgrid(np.arange(face_dim), np.arange(face_dim), indexing="ij")
    u, v = cube_pixel_to_uv(r.ravel(), c.ravel(), face_dim)
    face = np.repeat(np.arange(6, dtype=np.int64), face_dim * face_dim)
    return face, np.tile(u, 6), np.tile(v, 6)


def cubemap_sample_coords(face_dim: int, kernel: KernelSpec,
                          delta: float | None = None):
    """Raw kernel sample (phi, lam, degenerate) for every cube pixel, (N, k).

    Kernel centers come from cube_face_to_sph at each pixel; offsets go
    through the inverse equirectangular step, so kernels near the +/-Y face
    centers (the poles) pick up the characteristic radial distortion.
    """
    if face_dim < 1:
        raise ParameterError(f"face_dim must be >= 1, got {face_dim}")
    if delta is None:
        delta = np.pi / (2.0 * face_dim)
    face, u, v = _cube_center_grid(face_dim)
    phi0, lam0 = cube_face_to_sph_arrays(face, u, v)
    dx, dy = kernel_offsets(kernel, delta)
    return inverse_equirect_arrays(phi0[:, None], lam0[:, None],
                                   dx[None, :], dy[None, :])


def make_cubemap_map(face_dim: int, kernel: KernelSpec, interp: str = "bilinear",
                     delta: float | None = None) -> SampleMap:
    """Sampling map for the latitude/longitude kernel on a cube map.

    Samples crossing a face edge land on the adjacent face (the forward
    projection picks the dominant face); taps are then built within that
    face, so bilinear corners sticking past its edge are dropped.  Kernels
    centered near the +/-Y poles spread radially; this construction keeps
    the known seam and pole quirks on purpose, matching the geometry it
    models rather than smoothing it over.
    """
    if interp not in _INTERP_BUILDERS:
        raise ParameterError(f"interp must be nearest or bilinear, got {interp!r}")
    phi, lam, _ = cubemap_sample_coords(face_dim, kernel, delta)
    phi, lam = normalize_sph_arrays(phi, lam)
    face, u, v = sph_to_cube_face_arrays(phi, lam)
    rows, cols = cube_uv_to_pixel(u, v, face_dim)
    counts, idx, wts = _INTERP_BUILDERS[interp](
        rows.ravel(), cols.ravel(), face_dim, face_dim, wrap_cols=False)
    idx += (face.ravel() * face_dim * face_dim)[:, None]
    idx[wts == 0.0] = 0
    n = 6 * face_dim * face_dim
    desc = f"cubemap:{face_dim},k={kernel.height}x{kernel.width},interp={interp}"
    return SampleMap(n, n, kernel.size, counts, idx, wts, descriptor=desc)


# --- image-domain resampling helpers ---------------------------------------


def bilinear_gather_equirect(image: np.ndarray, rows, cols) -> np.ndarray:
    """Sample an equirect image at fractional pixels, (c, h, w) -> (c, N).

    Longitude wraps; rows beyond the image lose their outside corners and
    the remainder is renormalized (divide by the weight sum), so constants
    pass through exactly.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"image must be (c, h, w), got {image.shape}")
    c, h, w = image.shape
    counts, idx, wts = bilinear_tap_arrays(rows, cols, h, w, wrap_cols=True)
    if counts.min(initial=1) == 0:
        raise InvalidCoordinateError("sample point has no in-image support")
    flat = image.reshape(c, h * w)
    # anchored interpolation: taps are packed left so slot 0 is always live,
    # and interpolating differences against it passes constants through
    # bitwise (the residual sum is exactly zero)
    vals = flat[:, idx]
    anchor = vals[:, :, 0]
    num = ((vals - anchor[:, :, None]) * wts).sum(axis=2)
    return anchor + num / wts.sum(axis=1)


def resample_equirect_to_cube(image: np.ndarray, face_dim: int) -> np.ndarray:
    """Equirect (c, h, w) image to cube faces (c, 6, n, n), bilinear gather."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"image must be (c, h, w), got {image.shape}")
    geom = EquirectGeometry(image.shape[1], image.shape[2])
    face, u, v = _cube_center_grid(face_dim)
    phi, lam = cube_face_to_sph_arrays(face, u, v)
    rows, cols = sph_to_equirect_arrays(phi, lam, geom)
    out = bilinear_gather_equirect(image, rows, cols)
    return out.reshape(image.shape[0], 6, face_dim, face_dim)


def resample_cube_to_equirect(cube: np.ndarray, geom: EquirectGeometry) -> np.ndarray:
    """Cube faces (c, 6, n, n) to an equirect (c, h, w) image.

    Per-pixel gather: pixel direction -> dominant face -> bilinear within
    that face, coordinates clamped to the face interior (no cross-face
    blending; the dominant-face pick already switches faces mid-edge).
    """
    cube = np.asarray(cube)
    if cube.ndim != 4 or cube.shape[1] != 6 or cube.shape[2] != cube.shape[3]:
        raise DimensionError(f"cube must be (c, 6, n, n), got {cube.shape}")
    c, _, n, _ = cube.shape
    r, col = np.meshgrid(np.arange(geom.height), np.arange(geom.width), indexing="ij")
    phi, lam = equirect_to_sph_arrays(r.ravel(), col.ravel(), geom)
    face, u, v = sph_to_cube_face_arrays(phi, lam)
    rows, cols = cube_uv_to_pixel(u, v, n)
    rows = np.clip(rows, 0.0, n - 1.0)
    cols = np.clip(cols, 0.0, n - 1.0)
    counts, idx, wts = bilinear_tap_arrays(rows, cols, n, n)
    idx = idx + (face * n * n)[:, None]
    idx[wts == 0.0] = 0
    flat = cube.reshape(c, 6 * n * n)
    # anchored against the first (always live) tap: constants pass through
    # bitwise
    vals = flat[:, idx]
    anchor = vals[:, :, 0]
    num = ((vals - anchor[:, :, None]) * wts).sum(axis=2)
    out = anchor + num / wts.sum(axis=1)
    return out.reshape(c, geom.height, geom.width)
