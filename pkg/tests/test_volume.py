import math

import numpy as np
import pytest

from tests.conftest import linear_grid, smooth_grid
from vislens.volume import (
    PhantomSpec,
    SizeMismatchError,
    UnsupportedFormatError,
    VolumeGrid,
    VolumeMeta,
    WreckSpec,
    default_phantom_spec,
    downsample,
    generate_phantom,
    gradient_central,
    gradient_magnitude,
    gradient_magnitude_grid,
    gradient_percentile,
    load_meta,
    load_phantom_spec,
    load_raw,
    sample_trilinear,
    save_meta,
    save_phantom_spec,
    save_raw,
)


class TestVolumeGrid:
    def test_rejects_tiny_dims(self):
        with pytest.raises(ValueError):
            VolumeGrid((1, 2, 2), (1, 1, 1), (0, 0, 0), np.zeros((1, 2, 2)))

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(ValueError):
            VolumeGrid((2, 2, 2), (1, 0, 1), (0, 0, 0), np.zeros((2, 2, 2)))

    def test_rejects_out_of_range_values(self):
        with pytest.raises(ValueError):
            VolumeGrid((2, 2, 2), (1, 1, 1), (0, 0, 0), np.full((2, 2, 2), 1.5))

    def test_rejects_wrong_length(self):
        with pytest.raises(ValueError):
            VolumeGrid((2, 2, 2), (1, 1, 1), (0, 0, 0), np.zeros(7))

    def test_flat_values_are_x_fastest(self):
        g = VolumeGrid((2, 2, 2), (1, 1, 1), (0, 0, 0), np.arange(8) / 7.0)
        flat = g.flat_values()
        assert np.array_equal(flat, np.arange(8) / 7.0)
        assert g.values[1, 0, 0] == flat[1]
        assert g.values[0, 1, 0] == flat[2]
        assert g.values[0, 0, 1] == flat[4]

    def test_values_are_readonly(self):
        g = VolumeGrid((2, 2, 2), (1, 1, 1), (0, 0, 0), np.zeros(8))
        with pytest.raises(ValueError):
            g.values[0, 0, 0] = 1.0


class TestLoadRaw:
    def test_paper_scale_u8_dims(self, tmp_path):
        # 512*256*256 unsigned bytes = 33,554,432
        dims = (512, 256, 256)
        path = tmp_path / "sonar.raw"
        np.zeros(dims[0] * dims[1] * dims[2], dtype=np.uint8).tofile(path)
        assert path.stat().st_size == 33_554_432
        meta = VolumeMeta(dims, (80 / 512, 40 / 256, 4 / 256), (0, 0, 0), "u8")
        grid = load_raw(path, meta)
        assert grid.dims == dims

    def test_zero_bytes_load_as_zero_values(self, tmp_path):
        path = tmp_path / "z.raw"
        path.write_bytes(b"\x00" * 8)
        grid = load_raw(path, VolumeMeta((2, 2, 2), (1, 1, 1), (0, 0, 0), "u8"))
        assert np.array_equal(grid.values, np.zeros((2, 2, 2)))

    def test_size_mismatch_reports_expected(self, tmp_path):
        path = tmp_path / "short.raw"
        path.write_bytes(b"\x00" * 7)
        with pytest.raises(SizeMismatchError) as exc:
            load_raw(path, VolumeMeta((2, 2, 2), (1, 1, 1), (0, 0, 0), "u8"))
        assert exc.value.expected == 8
        assert exc.value.actual == 7
        assert "8" in str(exc.value)

    def test_u8_rescales_by_255(self, tmp_path):
        path = tmp_path / "v.raw"
        path.write_bytes(bytes([0, 51, 102, 153, 204, 255, 0, 255]))
        grid = load_raw(path, VolumeMeta((2, 2, 2), (1, 1, 1), (0, 0, 0), "u8"))
        assert grid.flat_values()[1] == 51 / 255

    def test_f32_clamps_to_unit_range(self, tmp_path):
        path = tmp_path / "f.raw"
        np.array([-0.5, 0.25, 1.5, 0, 1, 0.75, 0.1, 0.9], dtype="<f4").tofile(path)
        grid = load_raw(path, VolumeMeta((2, 2, 2), (1, 1, 1), (0, 0, 0), "f32"))
        flat = grid.flat_values()
        assert flat[0] == 0.0 and flat[2] == 1.0
        assert flat[1] == 0.25

    def test_unknown_dtype_rejected(self, tmp_path):
        with pytest.raises(UnsupportedFormatError):
            load_raw(tmp_path / "x.raw", VolumeMeta((2, 2, 2), (1, 1, 1), (0, 0, 0), "u16"))

    def test_save_load_roundtrip_f32(self, tmp_path, rng):
        values = rng.random((4, 3, 5))
        grid = VolumeGrid((4, 3, 5), (0.5, 1, 2), (1, 2, 3), values)
        meta = save_raw(grid, tmp_path / "g.raw", tmp_path / "g.meta", dtype="f32")
        back = load_raw(tmp_path / "g.raw", load_meta(tmp_path / "g.meta"))
        assert back.dims == grid.dims
        assert back.spacing == grid.spacing
        assert np.allclose(back.values, grid.values, atol=1e-7)
        assert meta.dtype == "f32"

    def test_meta_roundtrip(self, tmp_path):
        meta = VolumeMeta((4, 5, 6), (0.1, 0.2, 0.3), (-1, 0, 1), "u8")
        save_meta(meta, tmp_path / "m.meta")
        assert load_meta(tmp_path / "m.meta") == meta


class TestTrilinear:
    def test_voxel_center_identity(self, rng):
        g = VolumeGrid((3, 3, 3), (1, 1, 1), (0, 0, 0), rng.random((3, 3, 3)))
        assert sample_trilinear(g, (1.0, 2.0, 1.0)) == g.values[1, 2, 1]

    def test_midpoint_of_two_centers(self):
        values = np.zeros((2, 2, 2))
        values[1, :, :] = 1.0
        g = VolumeGrid((2, 2, 2), (1, 1, 1), (0, 0, 0), values)
        assert sample_trilinear(g, (0.5, 0.0, 0.0)) == 0.5

    def test_outside_box_returns_zero(self):
        g = VolumeGrid((2, 2, 2), (1, 1, 1), (0, 0, 0), np.full((2, 2, 2), 0.7))
        assert sample_trilinear(g, (-0.01, 0.5, 0.5)) == 0.0
        assert sample_trilinear(g, (0.5, 0.5, 1.01)) == 0.0

    def test_exact_on_linear_field(self, rng):
        # trilinear interpolation reproduces any linear field exactly
        n = 8
        g = linear_grid(n)
        pts = rng.random((1000, 3)) * (n - 1)
        for p in pts:
            want = p[0] / (n - 1)
            assert abs(sample_trilinear(g, tuple(p)) - want) <= 1e-12

    def test_affine_field_reproduced_inside_box(self, rng):
        # 0.1 + 0.2x + 0.3y + 0.4z over the unit cube, spacing 1/3
        n = 4
        coords = np.arange(n) / (n - 1)
        x, y, z = np.meshgrid(coords, coords, coords, indexing="ij")
        f = 0.1 + 0.2 * x + 0.3 * y + 0.4 * z
        g = VolumeGrid((n, n, n), (1 / 3, 1 / 3, 1 / 3), (0, 0, 0), f)
        for p in rng.random((300, 3)):
            want = 0.1 + 0.2 * p[0] + 0.3 * p[1] + 0.4 * p[2]
            assert abs(sample_trilinear(g, tuple(p)) - want) <= 1e-9


class TestGradient:
    def test_constant_grid_zero_gradient(self):
        # interior points only: within h of the boundary the stencil sees the
        # zero exterior by definition
        g = VolumeGrid((4, 4, 4), (1, 1, 1), (0, 0, 0), np.full((4, 4, 4), 0.4))
        assert gradient_central(g, (1.7, 1.9, 1.3)) == (0.0, 0.0, 0.0)
        assert gradient_central(g, (1.0, 1.0, 1.0)) == (0.0, 0.0, 0.0)

    def test_linear_field_unit_gradient(self):
        n = 9
        g = linear_grid(n, spacing=(1 / (n - 1),) * 3)
        grad = gradient_central(g, (0.5, 0.5, 0.5))
        assert abs(grad[0] - 1.0) < 1e-9
        assert abs(grad[1]) < 1e-9 and abs(grad[2]) < 1e-9

    @staticmethod
    def _sincos_grid(n):
        t = (np.arange(n) + 0.5) / n
        x, y, z = np.meshgrid(t, t, t, indexing="ij")
        f = 0.5 + 0.5 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
        return VolumeGrid((n, n, n), (1 / n,) * 3, (0.5 / n,) * 3, f), t

    @staticmethod
    def _sincos_analytic(p):
        gx = 0.5 * 2 * np.pi * math.cos(2 * np.pi * p[0]) * math.cos(2 * np.pi * p[1])
        gy = -0.5 * 2 * np.pi * math.sin(2 * np.pi * p[0]) * math.sin(2 * np.pi * p[1])
        return math.hypot(gx, gy)

    def test_sincos_magnitude_within_5pct(self, rng):
        g, _ = self._sincos_grid(64)
        checked = 0
        for p in rng.random((400, 3)) * 0.8 + 0.1:
            want = self._sincos_analytic(p)
            if want < 1.0:
                continue  # relative error is meaningless near critical points
            got = gradient_magnitude(g, tuple(p))
            assert abs(got - want) / want < 0.05
            checked += 1
        assert checked > 150

    def test_gradient_error_shrinks_with_resolution(self, rng):
        pts = rng.random((100, 3)) * 0.6 + 0.2
        errs = []
        for n in (32, 64, 128):
            g, _ = self._sincos_grid(n)
            worst = 0.0
            for p in pts:
                want = self._sincos_analytic(p)
                if want < 1.0:
                    continue
                worst = max(worst, abs(gradient_magnitude(g, tuple(p)) - want) / want)
            errs.append(worst)
        assert errs[1] < errs[0]
        assert errs[2] < errs[1]


class TestPhantom:
    def test_single_layer_constant(self):
        spec = PhantomSpec(dims=(8, 8, 8), layers=((1.0, 0.3),), wreck=None)
        g = generate_phantom(spec)
        assert np.all(g.values == 0.3)

    def test_wreck_center_value_is_layer_plus_delta(self):
        spec = default_phantom_spec()
        g = generate_phantom(spec)
        # voxel containing the wreck center, far from any layer band
        i = int(spec.wreck.center[0] * spec.dims[0])
        j = int(spec.wreck.center[1] * spec.dims[1])
        k = int(spec.wreck.center[2] * spec.dims[2])
        assert g.values[i, j, k] == 0.65 + spec.wreck.delta

    def test_wreck_voxels_match_membership_oracle(self):
        spec = PhantomSpec(dims=(64, 32, 32), band_voxels=2.0)
        base = generate_phantom(PhantomSpec(dims=(64, 32, 32), band_voxels=2.0, wreck=None))
        g = generate_phantom(spec)
        differing = g.values != base.values
        c, s = spec.wreck.center, spec.wreck.semi_axes
        count = 0
        for i in range(64):
            xf = (i + 0.5) / 64
            for j in range(32):
                yf = (j + 0.5) / 32
                for k in range(32):
                    zf = (k + 0.5) / 32
                    inside = (
                        ((xf - c[0]) / s[0]) ** 2
                        + ((yf - c[1]) / s[1]) ** 2
                        + ((zf - c[2]) / s[2]) ** 2
                    ) <= 1.0
                    assert differing[i, j, k] == inside
                    count += inside
        assert differing.sum() == count > 0

    def test_determinism_bit_identical(self):
        spec = PhantomSpec(dims=(32, 16, 16))
        a = generate_phantom(spec)
        b = generate_phantom(spec)
        assert a.values.tobytes() == b.values.tobytes()

    def test_default_spec_geometry(self):
        spec = default_phantom_spec()
        assert spec.dims == (256, 128, 128)
        assert spec.spacing == (1.0 / 256, 0.5 / 128, 0.5 / 128)
        lo = spec.origin
        assert lo[0] == pytest.approx(-0.5 + 0.5 / 256)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            PhantomSpec(layers=((0.5, 0.2), (0.4, 0.3), (1.0, 0.5)))
        with pytest.raises(ValueError):
            PhantomSpec(layers=((0.5, 0.2), (0.9, 0.3)))  # must end at 1.0
        with pytest.raises(ValueError):
            PhantomSpec(wreck=WreckSpec(center=(0.99, 0.5, 0.5)))
        with pytest.raises(ValueError):
            PhantomSpec(layers=((1.0, 0.999),), wreck=WreckSpec(delta=0.02))

    def test_spec_file_roundtrip(self, tmp_path):
        spec = PhantomSpec(dims=(32, 16, 16), band_voxels=3.0)
        save_phantom_spec(spec, tmp_path / "p.pspec")
        assert load_phantom_spec(tmp_path / "p.pspec") == spec
        nospec = PhantomSpec(dims=(8, 8, 8), layers=((1.0, 0.4),), wreck=None)
        save_phantom_spec(nospec, tmp_path / "n.pspec")
        assert load_phantom_spec(tmp_path / "n.pspec") == nospec


class TestDownsample:
    def test_identity_factor(self, rng):
        g = VolumeGrid((4, 4, 4), (1, 1, 1), (0, 0, 0), rng.random((4, 4, 4)))
        d = downsample(g, (1, 1, 1))
        assert np.array_equal(d.values, g.values)
        assert d.spacing == g.spacing and d.origin == g.origin

    def test_two_cube_block_means_half(self):
        # each 2x2x2 block holds the x-fastest pattern {0,0,0,0,1,1,1,1};
        # its box-filter mean is exactly 0.5 (a lone 2^3 grid cannot be
        # halved outright: the result would violate dims >= 2)
        block = np.array([0, 0, 0, 0, 1, 1, 1, 1.0]).reshape(2, 2, 2).transpose(2, 1, 0)
        values = np.tile(block, (2, 2, 2))
        g = VolumeGrid((4, 4, 4), (1, 1, 1), (0, 0, 0), values)
        d = downsample(g, (2, 2, 2))
        assert d.dims == (2, 2, 2)
        assert np.all(d.values == 0.5)

    def test_divisibility_error(self):
        g = VolumeGrid((4, 4, 3), (1, 1, 1), (0, 0, 0), np.zeros((4, 4, 3)))
        with pytest.raises(ValueError):
            downsample(g, (2, 2, 2))

    def test_matches_blockwise_mean_oracle(self, rng):
        # dyadic values keep every 8-sample mean exact in float64
        values = rng.integers(0, 257, size=(8, 8, 8)) / 256.0
        g = VolumeGrid((8, 8, 8), (0.5, 0.5, 0.5), (0, 0, 0), values)
        d = downsample(g, (2, 2, 2))
        assert d.dims == (4, 4, 4)
        assert d.spacing == (1.0, 1.0, 1.0)
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    block = values[2 * i : 2 * i + 2, 2 * j : 2 * j + 2, 2 * k : 2 * k + 2]
                    want = float(np.sum(block)) / 8.0
                    assert d.values[i, j, k] == want

    def test_origin_shifts_to_block_centers(self):
        g = VolumeGrid((4, 2, 2), (1, 1, 1), (10, 0, 0), np.zeros((4, 2, 2)))
        d = downsample(g, (2, 1, 1))
        assert d.origin[0] == 10.5
        # world center of mass preserved
        assert d.origin[0] + (d.dims[0] - 1) * d.spacing[0] / 2 == pytest.approx(
            g.origin[0] + (g.dims[0] - 1) * g.spacing[0] / 2
        )


class TestRangePreservation:
    def test_all_producers_stay_in_unit_range(self, tmp_path, rng):
        phantom = generate_phantom(PhantomSpec(dims=(16, 8, 8)))
        assert phantom.values.min() >= 0.0 and phantom.values.max() <= 1.0
        down = downsample(phantom, (2, 2, 2))
        assert down.values.min() >= 0.0 and down.values.max() <= 1.0
        path = tmp_path / "r.raw"
        rng.integers(0, 256, size=8, dtype=np.uint8).tofile(path)
        loaded = load_raw(path, VolumeMeta((2, 2, 2), (1, 1, 1), (0, 0, 0), "u8"))
        assert loaded.values.min() >= 0.0 and loaded.values.max() <= 1.0


class TestDerivedGradientGrid:
    def test_matches_pointwise_gradient_at_interior_centers(self):
        g = smooth_grid(16)
        mg = gradient_magnitude_grid(g, 1.0)
        for idx in ((5, 7, 8), (3, 3, 3), (10, 2, 12)):
            p = tuple(g.origin[a] + idx[a] * g.spacing[a] for a in range(3))
            want = min(gradient_magnitude(g, p), 1.0)
            assert mg.values[idx] == pytest.approx(want, abs=1e-12)

    def test_percentile_normalization_clips(self):
        g = smooth_grid(16)
        p95 = gradient_percentile(g)
        mg = gradient_magnitude_grid(g, p95)
        assert mg.values.max() == 1.0
        assert (mg.values == 1.0).mean() < 0.2
