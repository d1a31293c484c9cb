"""Icosphere meshes: construction, point location, taps, and resampling.

An icosphere is an icosahedron whose faces are repeatedly split four ways,
with vertices pushed back onto the unit sphere.  It is the near-uniform
spherical grid the vertex-domain convolution maps run on: kernel centers sit
at vertices, kernel samples are resolved to at most three vertex taps by
barycentric interpolation inside the containing face.

Mesh frame: z toward the north pole, x toward (phi=0, lam=0), so
phi = asin(z), lam = atan2(y, x).  The two base vertices sit exactly on the
poles.  Subdivision keeps a face hierarchy (face f at one level has children
4f..4f+3 at the next), which point location descends in O(order) per query.

The default subdivision rule is plain edge-midpoint splitting followed by
normalization; vertices of a coarser mesh are then a bitwise-identical
prefix of every finer mesh.  Loop's smoothing masks are available as
rule="loop" for comparison; they move every vertex each round, buying
nothing after spherical normalization, which is why midpoint is the default.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, InvalidCoordinateError, ParameterError
from .projections import EquirectGeometry, bilinear_gather_equirect, equirect_to_sph_arrays, \
    inverse_gnomonic_arrays, normalize_sph_arrays, sph_to_equirect_arrays
from .sample_map import KernelSpec, Sample, SampleMap, SampleTap, kernel_offsets

MAX_ORDER = 8

_VTXT_MAGIC = b"VTXT"
_VTXT_VERSION = 1
_VTXT_HEADER = struct.Struct("<4sIIQ")


def sph_to_unit_vectors(phi, lam) -> np.ndarray:
    """(phi, lam) to unit 3-vectors in the mesh frame, stacked on the last axis."""
    phi = np.asarray(phi, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    cos_phi = np.cos(phi)
    return np.stack([cos_phi * np.cos(lam), cos_phi * np.sin(lam), np.sin(phi)], axis=-1)


def unit_vectors_to_sph(dirs: np.ndarray):
    """Unit 3-vectors to (phi, lam) in the mesh frame."""
    dirs = np.asarray(dirs, dtype=np.float64)
    phi = np.arcsin(np.clip(dirs[..., 2], -1.0, 1.0))
    lam = np.arctan2(dirs[..., 1], dirs[..., 0])
    return phi, lam


def _base_icosahedron():
    """The 12-vertex icosahedron with vertices 0 and 11 at the +Z/-Z poles."""
    zu, r = 1.0 / np.sqrt(5.0), 2.0 / np.sqrt(5.0)
    verts = [(0.0, 0.0, 1.0)]
    for i in range(5):
        a = 2.0 * np.pi * i / 5.0
        verts.append((r * np.cos(a), r * np.sin(a), zu))
    for i in range(5):
        a = 2.0 * np.pi * i / 5.0 + np.pi / 5.0
        verts.append((r * np.cos(a), r * np.sin(a), -zu))
    verts.append((0.0, 0.0, -1.0))
    faces = []
    for i in range(5):
        j = (i + 1) % 5
        faces.append((0, 1 + i, 1 + j))
        faces.append((1 + i, 6 + i, 1 + j))
        faces.append((1 + j, 6 + i, 6 + j))
        faces.append((11, 6 + j, 6 + i))
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def _face_edges(faces: np.ndarray) -> np.ndarray:
    """Per-face edge rows in slot order (e01, e12, e20), shape (3F, 2), sorted pairs."""
    e = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    return np.sort(e, axis=1)


def _subdivide(verts: np.ndarray, faces: np.ndarray, rule: str):
    """Split every face in four. Children of face f are rows 4f..4f+3."""
    edges = _face_edges(faces)
    uniq, inverse = np.unique(edges, axis=0, return_inverse=True)
    mid_ids = (len(verts) + inverse.reshape(-1, 3)).astype(np.int64)

    if rule == "midpoint":
        new_pts = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        new_pts /= np.linalg.norm(new_pts, axis=1, keepdims=True)
        # old vertices untouched: coarse meshes stay an exact prefix
        new_verts = np.concatenate([verts, new_pts])
    else:
        # Loop masks: odd (edge) points blend the edge ends with the two
        # opposite vertices; even (old) points get beta smoothing
        opp = np.zeros((len(uniq), 3))
        opp_vertex = faces[:, [2, 0, 1]].reshape(-1)
        np.add.at(opp, inverse, verts[opp_vertex])
        edge_pts = 0.375 * (verts[uniq[:, 0]] + verts[uniq[:, 1]]) + 0.125 * opp

        deg = np.bincount(uniq.ravel(), minlength=len(verts))
        nbr_sum = np.zeros_like(verts)
        np.add.at(nbr_sum, uniq[:, 0], verts[uniq[:, 1]])
        np.add.at(nbr_sum, uniq[:, 1], verts[uniq[:, 0]])
        beta = (0.625 - (0.375 + 0.25 * np.cos(2.0 * np.pi / deg)) ** 2) / deg
        even = verts * (1.0 - deg * beta)[:, None] + nbr_sum * beta[:, None]
        new_verts = np.concatenate([even, edge_pts])
        new_verts /= np.linalg.norm(new_verts, axis=1, keepdims=True)

    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    m01, m12, m20 = mid_ids[:, 0], mid_ids[:, 1], mid_ids[:, 2]
    children = np.empty((len(faces) * 4, 3), dtype=np.int64)
    children[0::4] = np.stack([v0, m01, m20], axis=1)
    children[1::4] = np.stack([v1, m12, m01], axis=1)
    children[2::4] = np.stack([v2, m20, m12], axis=1)
    children[3::4] = np.stack([m01, m12, m20], axis=1)
    return new_verts, children


def _adjacency(n_verts: int, faces: np.ndarray):
    """CSR vertex adjacency (offsets, neighbors), neighbors sorted per vertex."""
    uniq = np.unique(_face_edges(faces), axis=0)
    pairs = np.concatenate([uniq, uniq[:, ::-1]])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]
    counts = np.bincount(pairs[:, 0], minlength=n_verts)
    offsets = np.concatenate(([0], np.cumsum(counts)))
    return offsets.astype(np.int64), pairs[:, 1].copy()


@dataclass
class IcosphereMesh:
    """An icosphere with its full subdivision hierarchy.

    vertices: (V, 3) unit vectors; faces: (F, 3) index triples, outward
    winding; level_faces[L] holds the faces of subdivision level L (the last
    entry aliases faces).  adj_offsets/adj_neighbors are CSR vertex
    adjacency on the finest level.
    """

    order: int
    vertices: np.ndarray
    faces: np.ndarray
    level_faces: list[np.ndarray]
    adj_offsets: np.ndarray
    adj_neighbors: np.ndarray
    rule: str = "midpoint"
    _locate_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return 3 * self.n_faces // 2

    def face_children(self, level: int, face: int) -> np.ndarray:
        """Indices of the 4 children of `face` (a level-`level` face)."""
        if not 0 <= level < self.order:
            raise ParameterError(f"level {level} has no children in an order-{self.order} mesh")
        return np.arange(4 * face, 4 * face + 4)

    def vertex_degrees(self) -> np.ndarray:
        return np.diff(self.adj_offsets)

    def vertex_sph(self):
        """(phi, lam) of every vertex."""
        return unit_vectors_to_sph(self.vertices)

    def _level_tables(self, level: int):
        """Cached per-level (cross products, unit centroids) for point location."""
        if level not in self._locate_cache:
            tri = self.vertices[self.level_faces[level]]
            cross = np.stack([
                np.cross(tri[:, 1], tri[:, 2]),
                np.cross(tri[:, 2], tri[:, 0]),
                np.cross(tri[:, 0], tri[:, 1]),
            ], axis=1)
            cen = tri.mean(axis=1)
            cen /= np.linalg.norm(cen, axis=1, keepdims=True)
            self._locate_cache[level] = (cross, cen)
        return self._locate_cache[level]


def expected_counts(order: int) -> tuple[int, int]:
    """(V, F) of an order-k icosphere: V = 10*4^k + 2, F = 20*4^k."""
    return 10 * 4 ** order + 2, 20 * 4 ** order


def make_icosphere(order: int, rule: str = "midpoint") -> IcosphereMesh:
    """Build an icosphere by `order` rounds of 4-way face subdivision.

    rule="midpoint" (default) splits edges at their midpoints and projects
    the new points onto the sphere, leaving old vertices in place.
    rule="loop" applies Loop's full smoothing masks before normalizing.
    """
    if not isinstance(order, (int, np.integer)) or not 0 <= order <= MAX_ORDER:
        raise ParameterError(f"order must be an int in 0..{MAX_ORDER}, got {order!r}")
    if rule not in ("midpoint", "loop"):
        raise ParameterError(f"rule must be midpoint or loop, got {rule!r}")
    verts, faces = _base_icosahedron()
    level_faces = [faces]
    for _ in range(order):
        verts, faces = _subdivide(verts, faces, rule)
        level_faces.append(faces)
    offsets, neighbors = _adjacency(len(verts), faces)
    return IcosphereMesh(int(order), verts, faces, level_faces, offsets, neighbors, rule)


def mesh_edges(mesh: IcosphereMesh) -> np.ndarray:
    """Unique undirected edges of the finest level, shape (E, 2)."""
    return np.unique(_face_edges(mesh.faces), axis=0)


def mean_neighbor_angle(mesh: IcosphereMesh) -> float:
    """Mean central angle between adjacent vertices, radians."""
    e = mesh_edges(mesh)
    dots = np.sum(mesh.vertices[e[:, 0]] * mesh.vertices[e[:, 1]], axis=1)
    return float(np.mean(np.arccos(np.clip(dots, -1.0, 1.0))))


@dataclass
class FaceHit:
    """Result of point location: a face index and barycentric weights."""

    face: int
    bary: np.ndarray


_LOCATE_CHUNK = 1 << 18
_STRADDLE_EPS = 1e-9


def locate_faces(mesh: IcosphereMesh, dirs: np.ndarray):
    """Locate the mesh face pierced by each direction. Vectorized.

    Descends the subdivision hierarchy: all 20 base faces first, then the 4
    children of the current face per level.  A face contains the ray when
    all three plane tests are non-negative (within a straddling tolerance,
    relative to their sum).  If no child qualifies at some level the walk
    falls back to the child with the nearest centroid and flags the query.

    Returns (faces (N,), bary (N, 3), fell_back (N,) bool).  Barycentric
    weights are clamped non-negative and renormalized to sum to 1.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    if dirs.ndim != 2 or dirs.shape[1] != 3:
        raise DimensionError(f"dirs must be (N, 3), got {dirs.shape}")
    norms = np.linalg.norm(dirs, axis=1)
    if norms.size and (np.abs(norms - 1.0) > 1e-9).any():
        raise InvalidCoordinateError("directions must be unit vectors (|norm-1| <= 1e-9)")

    n = len(dirs)
    out_face = np.empty(n, dtype=np.int64)
    out_bary = np.empty((n, 3), dtype=np.float64)
    out_fb = np.zeros(n, dtype=bool)

    for lo in range(0, n, _LOCATE_CHUNK):
        hi = min(lo + _LOCATE_CHUNK, n)
        d = dirs[lo:hi]
        m = hi - lo

        cross0, cen0 = mesh._level_tables(0)
        q = np.einsum("fic,nc->nfi", cross0, d)
        s = q.sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(s > 0, q.min(axis=2) / s, -np.inf)
        best = np.argmax(score, axis=1)
        rows = np.arange(m)
        miss = score[rows, best] < -_STRADDLE_EPS
        if miss.any():
            dots = cen0 @ d[miss].T                      # (20, miss)
            best[miss] = np.argmax(dots, axis=0)
            out_fb[lo:hi][miss] = True

        for level in range(1, mesh.order + 1):
            cross_l, cen_l = mesh._level_tables(level)
            children = best[:, None] * 4 + np.arange(4)
            q = np.einsum("nfic,nc->nfi", cross_l[children], d)
            s = q.sum(axis=2)
            with np.errstate(divide="ignore", invalid="ignore"):
                score = np.where(s > 0, q.min(axis=2) / s, -np.inf)
            pick = np.argmax(score, axis=1)
            miss = score[rows, pick] < -_STRADDLE_EPS
            if miss.any():
                dots = np.einsum("nfc,nc->nf", cen_l[children[miss]], d[miss])
                pick[miss] = np.argmax(dots, axis=1)
                out_fb[lo:hi][miss] = True
            best = children[rows, pick]

        cross_f, _ = mesh._level_tables(mesh.order)
        q = np.einsum("nic,nc->ni", cross_f[best], d)
        q = np.clip(q, 0.0, None)
        t = q.sum(axis=1)
        degenerate = t <= 0.0
        if degenerate.any():
            q[degenerate] = 1.0
            t = q.sum(axis=1)
            out_fb[lo:hi][degenerate] = True
        out_face[lo:hi] = best
        out_bary[lo:hi] = q / t[:, None]
    return out_face, out_bary, out_fb


def locate_face(mesh: IcosphereMesh, direction) -> FaceHit:
    """Scalar point location; see locate_faces."""
    faces, bary, _ = locate_faces(mesh, np.asarray(direction, dtype=np.float64)[None])
    return FaceHit(int(faces[0]), bary[0])


def barycentric_tap_arrays(mesh: IcosphereMesh, dirs: np.ndarray):
    """Vertex taps for each direction: (counts, indices (N,3), weights (N,3)).

    Zero-weight vertices are dropped and taps packed left; weights of each
    sample sum to 1 (the mesh covers the whole sphere, nothing is ever out
    of bounds).
    """
    faces, bary, _ = locate_faces(mesh, dirs)
    idx = mesh.faces[faces]
    dead = bary == 0.0
    order = np.argsort(dead, axis=1, kind="stable")
    idx = np.take_along_axis(idx, order, axis=1)
    wts = np.take_along_axis(bary, order, axis=1)
    counts = (wts != 0.0).sum(axis=1).astype(np.uint8)
    idx[wts == 0.0] = 0
    return counts, idx, wts


def barycentric_taps(mesh: IcosphereMesh, direction) -> Sample:
    """Scalar tap lookup: at most 3 weighted vertices."""
    counts, idx, wts = barycentric_tap_arrays(
        mesh, np.asarray(direction, dtype=np.float64)[None])
    c = int(counts[0])
    return Sample(tuple(SampleTap(int(idx[0, t]), float(wts[0, t])) for t in range(c)))


_POLE_TOL = 1e-12


def make_isea_map(mesh_in: IcosphereMesh, mesh_out: IcosphereMesh,
                  kernel: KernelSpec, delta: float | None = None) -> SampleMap:
    """Vertex-domain convolution map: gnomonic kernels at every output vertex.

    Kernel centers are mesh_out vertices; offsets go through the inverse
    gnomonic projection in the local meridian frame ("up" toward the north
    pole), and each sample becomes at most 3 barycentric taps on mesh_in.
    Same-order maps are the stride-1 analog; mesh_out one order coarser is
    the stride-2 analog.  At the pole vertices, where the meridian frame
    degenerates, "up" is fixed toward lam = 0.
    """
    if mesh_out.order not in (mesh_in.order, mesh_in.order - 1):
        raise ParameterError(
            f"output order must be {mesh_in.order} or {mesh_in.order - 1}, "
            f"got {mesh_out.order}")
    if delta is None:
        delta = mean_neighbor_angle(mesh_in)
    phi_v, lam_v = mesh_out.vertex_sph()
    pole = np.abs(np.abs(phi_v) - np.pi / 2) < _POLE_TOL
    # at the poles atan2's branch makes "up" land on lam0 + pi (north) or
    # lam0 exactly (south); these choices send "up" to lam = 0
    lam0 = np.where(pole, np.where(phi_v > 0, -np.pi, 0.0), lam_v)

    dx, dy = kernel_offsets(kernel, delta)
    phi, lam = inverse_gnomonic_arrays(phi_v[:, None], lam0[:, None],
                                       dx[None, :], dy[None, :])
    phi, lam = normalize_sph_arrays(phi, lam)
    dirs = sph_to_unit_vectors(phi.ravel(), lam.ravel())
    counts, idx, wts = barycentric_tap_arrays(mesh_in, dirs)
    desc = (f"isea:{mesh_in.order}->{mesh_out.order},"
            f"k={kernel.height}x{kernel.width},delta={delta:.6g}")
    return SampleMap(mesh_in.n_vertices, mesh_out.n_vertices, kernel.size,
                     counts, idx, wts, descriptor=desc)


# --- equirect <-> vertex resampling ----------------------------------------


def resample_equirect_to_vertices(image: np.ndarray, mesh: IcosphereMesh,
                                  geom: EquirectGeometry,
                                  mode: str = "scatter") -> np.ndarray:
    """Pull an equirect image onto mesh vertices, (c, h, w) -> (c, V).

    mode="scatter" (default): each pixel distributes its value to the three
    vertices of its containing face with barycentric weights; every vertex
    is the weight-normalized mean of what reached it.  Vertices no pixel
    reached (mesh locally finer than the image) fall back to bilinear
    sampling of the image at the vertex position.

    mode="gather": every vertex bilinearly samples the image at its own
    position.  Scatter pools all covered pixels (an antialiasing average)
    but degrades to single-pixel estimates once the mesh outresolves the
    image; gather is plain interpolation and converges as long as the image
    resolves the field.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[1] != geom.height or image.shape[2] != geom.width:
        raise DimensionError(
            f"image shape {image.shape} does not match (c, {geom.height}, {geom.width})")
    if image.size == 0:
        raise ParameterError("image is empty")
    if mode not in ("scatter", "gather"):
        raise ParameterError(f"mode must be scatter or gather, got {mode!r}")
    vp, vl = mesh.vertex_sph()
    if mode == "gather":
        rows, cols = sph_to_equirect_arrays(vp, vl, geom)
        return bilinear_gather_equirect(image, rows, cols)

    c = image.shape[0]
    r, col = np.meshgrid(np.arange(geom.height), np.arange(geom.width), indexing="ij")
    phi, lam = equirect_to_sph_arrays(r.ravel(), col.ravel(), geom)
    dirs = sph_to_unit_vectors(phi, lam)
    faces, bary, _ = locate_faces(mesh, dirs)
    keys = mesh.faces[faces].ravel()
    pix = np.repeat(np.arange(len(faces)), 3)

    v = mesh.n_vertices
    den = np.bincount(keys, weights=bary.ravel(), minlength=v)
    # anchor each vertex on one of its contributing pixels and average the
    # residuals, so a constant image lands on the vertices bitwise
    anchor_pix = np.zeros(v, dtype=np.int64)
    anchor_pix[keys] = pix
    out = np.empty((c, v), dtype=np.float64)
    flat = image.reshape(c, -1)
    safe_den = np.where(den == 0.0, 1.0, den)
    for ch in range(c):
        a = flat[ch][anchor_pix]
        num = np.bincount(keys, weights=(bary.ravel() * (flat[ch][pix] - a[keys])),
                          minlength=v)
        out[ch] = a + num / safe_den

    untouched = den == 0.0
    if untouched.any():
        rows, cols = sph_to_equirect_arrays(vp[untouched], vl[untouched], geom)
        out[:, untouched] = bilinear_gather_equirect(image, rows, cols)
    return out


def resample_vertices_to_equirect(values: np.ndarray, mesh: IcosphereMesh,
                                  geom: EquirectGeometry) -> np.ndarray:
    """Render vertex values back to an equirect image, (c, V) -> (c, h, w).

    Pure gather: each pixel interpolates the three vertices of its
    containing face.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != mesh.n_vertices:
        raise DimensionError(
            f"values shape {values.shape} does not match (c, {mesh.n_vertices})")
    r, col = np.meshgrid(np.arange(geom.height), np.arange(geom.width), indexing="ij")
    phi, lam = equirect_to_sph_arrays(r.ravel(), col.ravel(), geom)
    dirs = sph_to_unit_vectors(phi, lam)
    faces, bary, _ = locate_faces(mesh, dirs)
    vidx = mesh.faces[faces]
    # anchored barycentric combination: constants render bitwise
    vals = values[:, vidx]
    anchor = vals[:, :, 0]
    num = ((vals - anchor[:, :, None]) * bary).sum(axis=2)
    out = anchor + num / bary.sum(axis=1)
    return out.reshape(values.shape[0], geom.height, geom.width)


def vertex_voronoi_areas(mesh: IcosphereMesh) -> np.ndarray:
    """Spherical Voronoi cell area of every vertex, steradians. Sums to 4*pi."""
    from scipy.spatial import SphericalVoronoi

    sv = SphericalVoronoi(mesh.vertices, radius=1.0)
    sv.sort_vertices_of_regions()
    return sv.calculate_areas()


# --- file formats -----------------------------------------------------------


def save_obj(mesh: IcosphereMesh, path) -> None:
    """Write the finest level as Wavefront OBJ (v/f records, 1-based faces)."""
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_vtxt(values: np.ndarray, path) -> None:
    """Write a (channels, count) float64 tensor in the VTXT container."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"vertex tensors are 2d (channels, count), got {values.shape}")
    header = _VTXT_HEADER.pack(_VTXT_MAGIC, _VTXT_VERSION,
                               values.shape[0], values.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.astype("<f8").tobytes())


def load_vtxt(path) -> np.ndarray:
    """Read a VTXT tensor back as (channels, count) float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _VTXT_HEADER.size:
        raise FormatError("vertex tensor file shorter than its header")
    magic, version, channels, count = _VTXT_HEADER.unpack_from(raw)
    if magic != _VTXT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_VTXT_MAGIC!r}")
    if version != _VTXT_VERSION:
        raise FormatError(f"unsupported vertex tensor version {version}")
    expect = _VTXT_HEADER.size + 8 * channels * count
    if len(raw) != expect:
        raise FormatError(f"vertex tensor length {len(raw)} != expected {expect}")
    data = np.frombuffer(raw, dtype="<f8", offset=_VTXT_HEADER.size)
    return data.reshape(channels, count).copy()
