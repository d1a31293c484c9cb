import numpy as np
import pytest

from mapconv.errors import DimensionError, InvalidCoordinateError, ParameterError
from mapconv.projections import (
    CubeFace,
    CubeFaceCoord,
    EquirectGeometry,
    SphericalCoord,
    bilinear_gather_equirect,
    cube_face_to_sph,
    cube_face_to_sph_arrays,
    cube_pixel_to_uv,
    cube_uv_to_pixel,
    cubemap_sample_coords,
    equirect_pix_to_sph,
    equirect_sample_coords,
    equirect_to_sph_arrays,
    inverse_equirect,
    inverse_equirect_arrays,
    inverse_gnomonic,
    inverse_gnomonic_arrays,
    make_cubemap_map,
    make_equirect_map,
    normalize_sph_arrays,
    pixel_solid_angles,
    resample_cube_to_equirect,
    resample_equirect_to_cube,
    sph_to_cube_face,
    sph_to_cube_face_arrays,
    sph_to_equirect_arrays,
    sph_to_equirect_pix,
)
from mapconv.sample_map import KernelSpec, make_grid_map


def _gnomonic_textbook(phi0, lam0, dx, dy):
    """Two-step reference form with explicit rho and c, for cross-checking."""
    rho = np.hypot(dx, dy)
    if rho == 0.0:
        return phi0, lam0
    c = np.arctan(rho)
    phi = np.arcsin(np.cos(c) * np.sin(phi0) + dy * np.sin(c) * np.cos(phi0) / rho)
    lam = lam0 + np.arctan2(dx * np.sin(c),
                            rho * np.cos(phi0) * np.cos(c) - dy * np.sin(phi0) * np.sin(c))
    return phi, lam


class TestNormalize:
    def test_in_range_is_bitwise_untouched(self):
        rng = np.random.default_rng(0)
        phi = rng.uniform(-np.pi / 2, np.pi / 2, 1000)
        lam = rng.uniform(-np.pi, np.pi - 1e-9, 1000)
        p, l = normalize_sph_arrays(phi, lam)
        np.testing.assert_array_equal(p, phi)
        np.testing.assert_array_equal(l, lam)

    def test_pole_reflection(self):
        p, l = normalize_sph_arrays(3 * np.pi / 4, 0.0)
        assert p == pytest.approx(np.pi / 4, abs=1e-15)
        assert l == pytest.approx(-np.pi, abs=1e-15) or l == pytest.approx(np.pi, abs=1e-15)
        p, l = normalize_sph_arrays(-3 * np.pi / 4, 0.5)
        assert p == pytest.approx(-np.pi / 4, abs=1e-15)
        assert l == pytest.approx(0.5 - np.pi, abs=1e-15)

    def test_fuzz_ranges_and_idempotence(self):
        rng = np.random.default_rng(7)
        phi = rng.uniform(-10, 10, 5000)
        lam = rng.uniform(-10, 10, 5000)
        p, l = normalize_sph_arrays(phi, lam)
        assert np.all(p >= -np.pi / 2) and np.all(p <= np.pi / 2)
        assert np.all(l >= -np.pi) and np.all(l < np.pi)
        p2, l2 = normalize_sph_arrays(p, l)
        np.testing.assert_array_equal(p, p2)
        np.testing.assert_array_equal(l, l2)

    def test_same_point_on_sphere(self):
        rng = np.random.default_rng(9)
        phi = rng.uniform(-10, 10, 2000)
        lam = rng.uniform(-10, 10, 2000)
        p, l = normalize_sph_arrays(phi, lam)
        # unit vectors must match the raw angles' vectors
        raw = np.stack([np.cos(phi) * np.cos(lam), np.cos(phi) * np.sin(lam), np.sin(phi)])
        out = np.stack([np.cos(p) * np.cos(l), np.cos(p) * np.sin(l), np.sin(p)])
        np.testing.assert_allclose(out, raw, atol=1e-12)

    def test_coord_type_normalizes_and_rejects_nan(self):
        c = SphericalCoord(2.0, 7.0)
        assert -np.pi / 2 <= c.phi <= np.pi / 2 and -np.pi <= c.lam < np.pi
        with pytest.raises(InvalidCoordinateError):
            SphericalCoord(np.nan, 0.0)


class TestEquirectConvention:
    GEOM = EquirectGeometry(256, 512)

    def test_center_pixel_is_origin(self):
        c = equirect_pix_to_sph(127.5, 255.5, self.GEOM)
        assert c.phi == 0.0 and c.lam == 0.0

    def test_top_edge_is_north_pole(self):
        c = equirect_pix_to_sph(-0.5, 255.5, self.GEOM)
        assert c.phi == pytest.approx(np.pi / 2, abs=0)

    def test_origin_maps_to_center_pixel(self):
        row, col = sph_to_equirect_pix(SphericalCoord(0.0, 0.0), self.GEOM)
        assert (row, col) == (127.5, 255.5)

    def test_lam_below_pi_lands_near_width(self):
        row, col = sph_to_equirect_pix(SphericalCoord(0.0, np.pi - 1e-6), self.GEOM)
        assert 511.0 < col < 511.5

    def test_round_trip_fuzz(self):
        rng = np.random.default_rng(3)
        rows = rng.uniform(0, 255, 100000)
        cols = rng.uniform(0, 511, 100000)
        phi, lam = equirect_to_sph_arrays(rows, cols, self.GEOM)
        r2, c2 = sph_to_equirect_arrays(phi, lam, self.GEOM)
        np.testing.assert_allclose(r2, rows, atol=1e-12)
        np.testing.assert_allclose(c2, cols, atol=1e-12)

    def test_non_two_to_one_warns(self):
        with pytest.warns(UserWarning):
            EquirectGeometry(100, 150)

    def test_solid_angles_sum_to_sphere(self):
        omega = pixel_solid_angles(self.GEOM)
        assert omega.shape == (256,)
        total = omega.sum() * 512
        np.testing.assert_allclose(total, 4 * np.pi, rtol=1e-12)

    def test_solid_angle_imbalance_exceeds_100(self):
        omega = pixel_solid_angles(self.GEOM)
        assert omega.max() / omega.min() > 100


class TestInverseGnomonic:
    def test_zero_offset_returns_center_bitwise(self):
        c = SphericalCoord(0.7346, -2.19)
        out = inverse_gnomonic(c, 0.0, 0.0)
        assert out.phi == c.phi and out.lam == c.lam

    def test_equator_dx_is_arctangent(self):
        out = inverse_gnomonic(SphericalCoord(0.0, 0.0), 0.1, 0.0)
        assert out.phi == pytest.approx(0.0, abs=1e-15)
        assert out.lam == pytest.approx(np.arctan(0.1), abs=1e-12)
        assert out.lam == pytest.approx(0.0996687, abs=1e-7)

    def test_meridian_dy_adds_arctangent(self):
        out = inverse_gnomonic(SphericalCoord(np.pi / 4, 0.0), 0.0, 0.1)
        assert out.phi == pytest.approx(np.pi / 4 + np.arctan(0.1), abs=1e-12)
        assert out.phi == pytest.approx(0.8850668, abs=1e-6)
        assert out.lam == pytest.approx(0.0, abs=1e-15)

    def test_matches_textbook_form(self):
        rng = np.random.default_rng(17)
        for _ in range(2000):
            phi0 = rng.uniform(-1.4, 1.4)
            lam0 = rng.uniform(-np.pi, np.pi)
            dx, dy = rng.uniform(-0.5, 0.5, 2)
            pa, la = inverse_gnomonic_arrays(phi0, lam0, dx, dy)
            pb, lb = _gnomonic_textbook(phi0, lam0, dx, dy)
            assert float(pa) == pytest.approx(pb, abs=1e-12)
            assert float(la) == pytest.approx(lb, abs=1e-12)

    def test_great_circle_distance_is_atan_rho(self):
        # every sample sits at angle atan(rho) from the tangent point
        rng = np.random.default_rng(23)
        phi0 = rng.uniform(-1.5, 1.5, 500)
        lam0 = rng.uniform(-np.pi, np.pi, 500)
        dx = rng.uniform(-1, 1, 500)
        dy = rng.uniform(-1, 1, 500)
        phi, lam = inverse_gnomonic_arrays(phi0, lam0, dx, dy)
        cos_d = (np.sin(phi0) * np.sin(phi)
                 + np.cos(phi0) * np.cos(phi) * np.cos(lam - lam0))
        np.testing.assert_allclose(np.arccos(np.clip(cos_d, -1, 1)),
                                   np.arctan(np.hypot(dx, dy)), atol=1e-9)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidCoordinateError):
            inverse_gnomonic(SphericalCoord(0, 0), np.inf, 0.0)


class TestInverseEquirect:
    def test_zero_offset_returns_center_bitwise(self):
        c = SphericalCoord(-0.45, 2.8)
        out, degen = inverse_equirect(c, 0.0, 0.0)
        assert out.phi == c.phi and out.lam == c.lam and not degen

    def test_equator_sec_is_one(self):
        out, degen = inverse_equirect(SphericalCoord(0.0, 0.0), 0.1, 0.0)
        assert (out.phi, out.lam) == (0.0, 0.1) and not degen

    def test_sixty_degrees_sec_is_two(self):
        out, degen = inverse_equirect(SphericalCoord(np.pi / 3, 0.0), 0.1, 0.0)
        assert out.phi == pytest.approx(np.pi / 3, abs=0)
        assert out.lam == pytest.approx(0.2, abs=1e-12)
        assert not degen

    def test_phi_is_exact_sum(self):
        rng = np.random.default_rng(5)
        phi0 = rng.uniform(-1.5, 1.5, 1000)
        dy = rng.uniform(-0.3, 0.3, 1000)
        phi, _, _ = inverse_equirect_arrays(phi0, 0.0, 0.1, dy)
        np.testing.assert_array_equal(phi, phi0 + dy)

    def test_pole_clamp_and_flag(self):
        center = SphericalCoord(np.pi / 2 - 5e-10, 0.0)
        out, degen = inverse_equirect(center, 0.1, 0.0)
        assert degen
        sec_max = 1.0 / np.sin(1e-9)
        _, lam, _ = inverse_equirect_arrays(center.phi, center.lam, 0.1, 0.0)
        assert abs(float(lam)) == pytest.approx(0.1 * sec_max, rel=1e-6)

    def test_away_from_pole_not_flagged(self):
        _, _, degen = inverse_equirect_arrays(0.3, 0.0, 0.5, 0.2)
        assert not bool(degen)


class TestEquatorCoincidence:
    def test_agreement_is_cubic_in_offset(self):
        # the two projections coincide at the equator up to O(offset^3)
        delta = 2 * np.pi / 512
        offs = np.array([-3, -2, -1, 1, 2, 3]) * delta
        for dx in offs:
            for dy in offs:
                pg, lg = inverse_gnomonic_arrays(0.0, 0.0, dx, dy)
                pe, le, _ = inverse_equirect_arrays(0.0, 0.0, dx, dy)
                rho3 = np.hypot(dx, dy) ** 3
                assert abs(float(pg) - float(pe)) < 1.2 * rho3
                assert abs(float(lg) - float(le)) < 1.2 * rho3

    def test_tiny_offsets_agree_to_1e9(self):
        for d in (1e-4, 5e-5):
            pg, lg = inverse_gnomonic_arrays(0.0, 0.0, d, -d)
            pe, le, _ = inverse_equirect_arrays(0.0, 0.0, d, -d)
            assert abs(float(pg) - float(pe)) < 1e-9
            assert abs(float(lg) - float(le)) < 1e-9


class TestEquirectMaps:
    def test_shapes_and_structure(self):
        geom = EquirectGeometry(16, 32)
        smap = make_equirect_map(geom, KernelSpec(3, 3), "gnomonic", "bilinear")
        assert smap.n_in == smap.n_out == 512 and smap.k == 9
        smap.validate()
        assert smap.tap_width == 4

    def test_equirect_rows_constant_phi(self):
        geom = EquirectGeometry(16, 32)
        phi, _, _ = equirect_sample_coords(geom, KernelSpec(3, 3), "equirect")
        rows = phi.reshape(-1, 3, 3)
        np.testing.assert_array_equal(rows[:, :, 0], rows[:, :, 1])
        np.testing.assert_array_equal(rows[:, :, 1], rows[:, :, 2])

    def test_gnomonic_rows_curve_at_60_degrees(self):
        geom = EquirectGeometry(256, 512)
        delta = geom.pixel_pitch
        phi0 = np.pi / 3
        corner, _ = inverse_gnomonic_arrays(phi0, 0.0, delta, delta)
        edge, _ = inverse_gnomonic_arrays(phi0, 0.0, 0.0, delta)
        assert abs(float(corner) - float(edge)) > 1e-4

    def test_equator_row_nearest_taps_equal_grid_taps(self):
        # at the equator rows the nearest-neighbor maps collapse onto the
        # pixel grid for both projections
        geom = EquirectGeometry(16, 32)
        grid = make_grid_map(16, 32, KernelSpec(3, 3, padding=1))
        for projection in ("gnomonic", "equirect"):
            smap = make_equirect_map(geom, KernelSpec(3, 3), projection, "nearest")
            for row in (7, 8):
                for col in (0, 5, 31):
                    n = row * 32 + col
                    for m in range(9):
                        a = smap.sample(n, m).taps
                        b = grid.sample(n, m).taps
                        if b and a:
                            assert a[0].index == b[0].index
                        # grid drops padding taps; sphere maps wrap instead

    def test_bilinear_taps_near_grid_positions_at_equator(self):
        geom = EquirectGeometry(256, 512)
        phi, lam, _ = equirect_sample_coords(geom, KernelSpec(3, 3), "gnomonic")
        rows, cols = sph_to_equirect_arrays(*normalize_sph_arrays(phi, lam), geom)
        n = 127 * 512 + 256   # just above the equator
        r = rows.reshape(-1, 9)[n]
        c = cols.reshape(-1, 9)[n]
        expect_r = 127 + np.repeat([-1, 0, 1], 3)
        expect_c = 256 + np.tile([-1, 0, 1], 3)
        np.testing.assert_allclose(r, expect_r, atol=1e-2)
        np.testing.assert_allclose(c, expect_c, atol=1e-2)

    def test_pole_spread_monotone(self):
        geom = EquirectGeometry(64, 128)
        phi, lam, _ = equirect_sample_coords(geom, KernelSpec(3, 3), "equirect")
        lam = lam.reshape(64, 128, 9)
        span = lam[:, 0, 5] - lam[:, 0, 3]   # middle kernel row, dx = +/-delta
        north = span[:32]
        assert np.all(np.diff(north) <= 1e-15)  # span shrinks toward equator
        south = span[32:]
        assert np.all(np.diff(south) >= -1e-15)

    def test_longitude_wraps_never_clips(self):
        geom = EquirectGeometry(8, 16)
        smap = make_equirect_map(geom, KernelSpec(3, 3), "equirect", "bilinear")
        # interior rows: every slot keeps full weight despite seam crossing
        wsum = smap.weights.sum(axis=1).reshape(8, 16, 9)
        np.testing.assert_allclose(wsum[1:-1], 1.0, atol=1e-12)

    def test_unknown_projection_rejected(self):
        with pytest.raises(ParameterError):
            make_equirect_map(EquirectGeometry(8, 16), KernelSpec(3, 3), "mercator")


class TestCubeConventions:
    def test_pos_z_center(self):
        c = cube_face_to_sph(CubeFaceCoord(CubeFace.POS_Z, 0.0, 0.0))
        assert (c.phi, c.lam) == (0.0, 0.0)

    def test_pos_y_center_is_south_pole(self):
        c = cube_face_to_sph(CubeFaceCoord(CubeFace.POS_Y, 0.0, 0.0))
        assert c.phi == pytest.approx(-np.pi / 2, abs=0)
        assert c.lam == 0.0

    def test_pos_z_right_edge(self):
        c = cube_face_to_sph(CubeFaceCoord(CubeFace.POS_Z, 1.0, 0.0))
        assert c.phi == pytest.approx(0.0, abs=1e-15)
        assert c.lam == pytest.approx(np.pi / 4, abs=1e-15)

    def test_origin_hits_pos_z(self):
        f = sph_to_cube_face(SphericalCoord(0.0, 0.0))
        assert f.face == CubeFace.POS_Z and f.u == 0.0 and f.v == 0.0

    def test_south_pole_hits_pos_y(self):
        f = sph_to_cube_face(SphericalCoord(-np.pi / 2, 0.0))
        assert f.face == CubeFace.POS_Y
        assert abs(f.u) < 1e-15 and abs(f.v) < 1e-15

    def test_north_pole_hits_neg_y(self):
        f = sph_to_cube_face(SphericalCoord(np.pi / 2, 1.3))
        assert f.face == CubeFace.NEG_Y

    def test_face_centers_cover_axes(self):
        lams = {}
        for face in CubeFace:
            c = cube_face_to_sph(CubeFaceCoord(face, 0.0, 0.0))
            lams[face] = (round(c.phi, 12), round(c.lam, 12))
        assert lams[CubeFace.POS_Z] == (0.0, 0.0)
        assert lams[CubeFace.POS_X][1] == pytest.approx(np.pi / 2)
        assert lams[CubeFace.NEG_X][1] == pytest.approx(-np.pi / 2)
        assert lams[CubeFace.NEG_Z][1] == pytest.approx(-np.pi)

    def test_seam_continuity(self):
        t = np.linspace(-1, 1, 41)
        pairs = [
            (CubeFace.POS_Z, t, np.full_like(t, 1.0), CubeFace.NEG_Y, t, np.full_like(t, 1.0)),
            (CubeFace.POS_Z, np.full_like(t, 1.0), t, CubeFace.POS_X, np.full_like(t, -1.0), t),
            (CubeFace.NEG_Z, np.full_like(t, 1.0), t, CubeFace.NEG_X, np.full_like(t, -1.0), t),
        ]
        for fa, ua, va, fb, ub, vb in pairs:
            pa, la = cube_face_to_sph_arrays(np.full(t.shape, int(fa)), ua, va)
            pb, lb = cube_face_to_sph_arrays(np.full(t.shape, int(fb)), ub, vb)
            np.testing.assert_allclose(pa, pb, atol=1e-12)
            np.testing.assert_allclose(np.unwrap(la - lb), 0.0, atol=1e-12)

    def test_round_trip_cube_sph_cube(self):
        rng = np.random.default_rng(11)
        n = 100000
        face = rng.integers(0, 6, n)
        u = rng.uniform(-0.99, 0.99, n)
        v = rng.uniform(-0.99, 0.99, n)
        phi, lam = cube_face_to_sph_arrays(face, u, v)
        f2, u2, v2 = sph_to_cube_face_arrays(phi, lam)
        np.testing.assert_array_equal(f2, face)
        np.testing.assert_allclose(u2, u, atol=1e-9)
        np.testing.assert_allclose(v2, v, atol=1e-9)

    def test_round_trip_sph_cube_sph(self):
        rng = np.random.default_rng(13)
        n = 100000
        face = rng.integers(0, 6, n)
        u = rng.uniform(-0.99, 0.99, n)
        v = rng.uniform(-0.99, 0.99, n)
        phi, lam = cube_face_to_sph_arrays(face, u, v)
        f2, u2, v2 = sph_to_cube_face_arrays(phi, lam)
        p2, l2 = cube_face_to_sph_arrays(f2, u2, v2)
        np.testing.assert_allclose(p2, phi, atol=1e-9)
        dl = (l2 - lam + np.pi) % (2 * np.pi) - np.pi
        np.testing.assert_allclose(dl, 0.0, atol=1e-9)

    def test_face_coord_validation(self):
        with pytest.raises(InvalidCoordinateError):
            CubeFaceCoord(CubeFace.POS_X, 1.5, 0.0)
        c = CubeFaceCoord(CubeFace.POS_X, 1.0 + 1e-12, 0.0)
        assert c.u == 1.0

    def test_pixel_uv_round_trip(self):
        r, c = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
        u, v = cube_pixel_to_uv(r.ravel(), c.ravel(), 8)
        assert np.all(np.abs(u) < 1) and np.all(np.abs(v) < 1)
        r2, c2 = cube_uv_to_pixel(u, v, 8)
        np.testing.assert_allclose(r2, r.ravel(), atol=1e-12)
        np.testing.assert_allclose(c2, c.ravel(), atol=1e-12)


class TestCubemapMaps:
    def test_structure(self):
        smap = make_cubemap_map(8, KernelSpec(3, 3))
        assert smap.n_in == smap.n_out == 6 * 64 and smap.k == 9
        smap.validate()

    def test_pos_z_center_kernel_is_axis_aligned(self):
        n = 33
        kernel = KernelSpec(3, 3)
        phi, lam, _ = cubemap_sample_coords(n, kernel)
        center_pix = 4 * n * n + (n // 2) * n + n // 2
        p, l = normalize_sph_arrays(phi[center_pix], lam[center_pix])
        face, u, v = sph_to_cube_face_arrays(p, l)
        assert np.all(face == int(CubeFace.POS_Z))
        rows, cols = cube_uv_to_pixel(u, v, n)
        rows = rows.reshape(3, 3)
        cols = cols.reshape(3, 3)
        # axis-aligned: rows constant along kernel rows, cols along columns
        assert np.ptp(rows, axis=1).max() < 1e-3
        assert np.ptp(cols, axis=0).max() < 1e-3

    def test_pos_y_center_kernel_spreads_radially(self):
        n = 32
        kernel = KernelSpec(3, 3)
        phi, lam, _ = cubemap_sample_coords(n, kernel)
        # pixel adjacent to the +Y face center (south pole)
        center_pix = 2 * n * n + (n // 2) * n + n // 2
        p, l = normalize_sph_arrays(phi[center_pix], lam[center_pix])
        face, u, v = sph_to_cube_face_arrays(p, l)
        rows, cols = cube_uv_to_pixel(u, v, n)
        rows = rows.reshape(3, 3)
        # kernel rows are nowhere near constant in face coordinates
        assert np.ptp(rows, axis=1).max() > 1.0

    def test_edge_crossing_lands_on_adjacent_face(self):
        n = 8
        smap = make_cubemap_map(n, KernelSpec(3, 3), "nearest")
        # +Z face, middle row, rightmost column; right kernel column crosses to +X
        pix = 4 * n * n + (n // 2) * n + (n - 1)
        faces = set()
        for m in range(9):
            for tap in smap.sample(pix, m).taps:
                faces.add(tap.index // (n * n))
        assert int(CubeFace.POS_X) in faces and int(CubeFace.POS_Z) in faces

    def test_default_delta_matches_equirect_pitch(self):
        n = 16
        a = make_cubemap_map(n, KernelSpec(3, 3))
        b = make_cubemap_map(n, KernelSpec(3, 3), delta=np.pi / (2 * n))
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestResampleCube:
    def test_constant_round_trip_exact(self):
        img = np.ones((1, 32, 64))
        cube = resample_equirect_to_cube(img, 16)
        assert cube.shape == (1, 6, 16, 16)
        np.testing.assert_array_equal(cube, 1.0)
        back = resample_cube_to_equirect(cube, EquirectGeometry(32, 64))
        np.testing.assert_array_equal(back, 1.0)

    def test_smooth_field_round_trip_accuracy(self):
        geom = EquirectGeometry(64, 128)
        r, c = np.meshgrid(np.arange(64), np.arange(128), indexing="ij")
        phi, lam = equirect_to_sph_arrays(r, c, geom)
        img = (np.sin(phi) + np.cos(phi) * np.sin(lam))[None]
        cube = resample_equirect_to_cube(img, 64)
        back = resample_cube_to_equirect(cube, geom)
        rms = np.sqrt(np.mean((back - img) ** 2))
        assert rms < 5e-3

    def test_gather_constant_exact_and_interior_match(self):
        rng = np.random.default_rng(2)
        img = np.ones((2, 16, 32))
        rows = rng.uniform(0, 15, 50)
        cols = rng.uniform(0, 31, 50)
        out = bilinear_gather_equirect(img, rows, cols)
        np.testing.assert_array_equal(out, 1.0)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            resample_equirect_to_cube(np.ones((4, 4)), 8)
        with pytest.raises(DimensionError):
            resample_cube_to_equirect(np.ones((1, 5, 8, 8)), EquirectGeometry(8, 16))
