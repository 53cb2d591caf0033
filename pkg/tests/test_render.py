import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from tests.conftest import smooth_grid
from tests.reference_render import ref_dvr_frame, ref_mip_ray, ref_trilinear
from vislens import kernels
from vislens.geometry import Pose, Ray, look_at_pose, quat_from_axis_angle
from vislens.lens import (
    DERIVATIVE,
    MIP,
    EffectiveShading,
    Integrator,
    Lens,
    combine,
)
from vislens.render import (
    BACKGROUND,
    RING_GRABBED,
    RING_IDLE,
    Accumulator,
    Camera,
    FieldSet,
    Framebuffer,
    RenderError,
    TransferFunction,
    camera_rays,
    draw_lens_rings,
    fieldset_for,
    integrate_segment,
    ray_box_spans,
    read_image,
    render_frame,
    write_image,
)
from vislens.scene import SceneState
from vislens.volume import VolumeGrid

GOLDEN_DIR = Path(__file__).parent / "data"

BOTH_BACKENDS = pytest.mark.parametrize("backend", ["numba", "numpy"])


def golden_camera():
    # straight up through the water face: entry values are nearly transparent,
    # so coarse/fine sampling lattices agree tightly at the boundary
    return Camera(look_at_pose((0.0, 0.0, -0.7), (0.0, 0.0, 0.0), up=(0, 1, 0)), 60.0, (96, 72))


class TestTransferFunction:
    def test_default_is_valid(self):
        tf = TransferFunction()
        assert tf.opacity(0.0) == 0.0
        assert tf.opacity(1.0) == pytest.approx(0.15)
        assert tf.gray(0.45) == pytest.approx(0.475)

    def test_requires_full_span(self):
        with pytest.raises(RenderError):
            TransferFunction(((0.1, 0, 0), (1.0, 1, 1)))
        with pytest.raises(RenderError):
            TransferFunction(((0.0, 0, 0), (0.9, 1, 1)))

    def test_requires_strictly_increasing(self):
        with pytest.raises(RenderError):
            TransferFunction(((0.0, 0, 0), (0.5, 0.1, 0.1), (0.5, 0.2, 0.2), (1.0, 1, 1)))

    def test_rejects_out_of_range(self):
        with pytest.raises(RenderError):
            TransferFunction(((0.0, 0, 0), (1.0, 1.5, 1)))


class TestCamera:
    def test_fov_bounds(self):
        with pytest.raises(RenderError):
            Camera(Pose(), 5.0)
        with pytest.raises(RenderError):
            Camera(Pose(), 175.0)

    def test_center_pixel_looks_along_minus_z(self):
        cam = Camera(Pose(), 60.0, (3, 3))
        _, dirs = camera_rays(cam)
        assert np.allclose(dirs[4], (0, 0, -1), atol=1e-9)

    def test_top_left_pixel_up_left(self):
        cam = Camera(Pose(), 90.0, (2, 2))
        _, dirs = camera_rays(cam)
        assert dirs[0][0] < 0 and dirs[0][1] > 0

    def test_ray_box_spans_miss_and_hit(self):
        o = np.array([[0.0, 0.0, -5.0], [0.0, 0.0, -5.0], [5.0, 0.0, 0.5]])
        d = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
        lo, hi = ray_box_spans(o, d, (0, 0, 0), (1, 1, 1))
        assert lo[0] == pytest.approx(5.0) and hi[0] == pytest.approx(6.0)
        assert hi[1] < lo[1]  # parallel miss
        assert lo[2] == pytest.approx(4.0)


class TestRenderFrameBasics:
    def test_empty_scene_uniform_background(self):
        fb = render_frame(SceneState(), Camera(Pose(), 60.0, (16, 12)))
        assert fb.pixels.shape == (12, 16, 4)
        assert np.all(fb.pixels.reshape(-1, 4) == np.asarray(BACKGROUND, dtype=np.uint8))

    @BOTH_BACKENDS
    def test_transparent_volume_background_except_rings(self, backend):
        grid = VolumeGrid((4, 4, 4), (0.1, 0.1, 0.1), (-0.15, -0.15, -0.15), np.zeros((4, 4, 4)))
        lens = Lens(1, Pose((0, 0, 0.4)), 0.1, MIP, MIP, ring_width=0.02)
        scene = SceneState(volume=grid, lenses=(lens,), next_id=2)
        cam = Camera(Pose((0, 0, 1.0)), 60.0, (32, 24))
        fb = render_frame(scene, cam, backend=backend)
        px = fb.pixels.reshape(-1, 4)
        is_bg = np.all(px == np.asarray(BACKGROUND, np.uint8), axis=1)
        is_ring = np.all(px[:, :3] == np.asarray(RING_IDLE, np.uint8), axis=1)
        assert np.all(is_bg | is_ring)
        assert is_ring.sum() > 0

    def test_deterministic_frames(self, small_phantom):
        scene = SceneState(volume=small_phantom)
        cam = golden_camera()
        a = render_frame(scene, cam)
        b = render_frame(scene, cam)
        assert a.tobytes() == b.tobytes()

    def test_backends_agree_within_quantization(self, small_phantom):
        lens = Lens(1, Pose((0.0, 0.6, 0.0), quat_from_axis_angle((1, 0, 0), -math.pi / 2)),
                    0.2, MIP, DERIVATIVE)
        scene = SceneState(volume=small_phantom, lenses=(lens,), next_id=2)
        cam = Camera(look_at_pose((0, 0.9, 0), (0, 0, 0), up=(0, 0, 1)), 60.0, (48, 36))
        a = render_frame(scene, cam, backend="numba")
        b = render_frame(scene, cam, backend="numpy")
        diff = np.abs(a.pixels.astype(int) - b.pixels.astype(int))
        assert diff.max() <= 1

    def test_workers_do_not_change_pixels(self, small_phantom):
        scene = SceneState(volume=small_phantom)
        cam = golden_camera()
        a = render_frame(scene, cam, backend="numba", workers=1)
        b = render_frame(scene, cam, backend="numba", workers=4)
        assert a.tobytes() == b.tobytes()


class TestIntegrateSegment:
    def test_flat_field_gradient_mip_contributes_nothing(self):
        grid = VolumeGrid((8, 8, 8), (1, 1, 1), (0, 0, 0), np.full((8, 8, 8), 0.6))
        shading = EffectiveShading(transform_depth=1, integrator=Integrator.MAX_INTENSITY)
        fields = FieldSet(grid)
        out = integrate_segment(
            grid, Ray((3.5, 3.5, 1.0), (0, 0, 1)), 0.5, 5.0, shading,
            TransferFunction(), 0.5, Accumulator(), fields,
        )
        assert out == Accumulator(0.0, 0.0)

    def test_mip_single_bright_voxel(self):
        values = np.zeros((5, 5, 5))
        values[2, 2, 2] = 1.0
        grid = VolumeGrid((5, 5, 5), (1, 1, 1), (0, 0, 0), values)
        shading = EffectiveShading(integrator=Integrator.MAX_INTENSITY)
        out = integrate_segment(
            grid, Ray((2.0, 2.0, 0.0), (0, 0, 1)), 0.0, 4.5, shading,
            TransferFunction(), 0.5, Accumulator(), FieldSet(grid),
        )
        assert out.gray == 1.0 and out.alpha == 1.0

    def test_scalar_reference_matches_kernels(self, small_phantom):
        fields = fieldset_for(small_phantom)
        tf = TransferFunction()
        tf_v, tf_a, tf_g = tf.arrays()
        step = 0.5 * min(small_phantom.spacing)
        ray = Ray((0.0, 0.9, 0.02), (0.0, -1.0, 0.0))
        t0, t1 = 0.4, 1.1
        for shading, integ in (
            (EffectiveShading(), kernels.INTEG_EA),
            (EffectiveShading(transform_depth=1, integrator=Integrator.MAX_INTENSITY),
             kernels.INTEG_MIP),
        ):
            ref = integrate_segment(small_phantom, ray, t0, t1, shading, tf, step,
                                    Accumulator(), fields)
            fld = fields.field(shading.transform_depth, None)
            C, A = kernels.march_rays(
                fld.values[None], small_phantom.origin, small_phantom.spacing,
                np.asarray([ray.origin]), np.asarray([ray.direction]),
                np.zeros(1), np.asarray([[t0, t1]]), np.ones(1, dtype=np.int64),
                np.zeros((1, 1), dtype=np.int64),
                np.full((1, 1), integ, dtype=np.int64), np.ones((1, 1)),
                tf_v, tf_a, tf_g, step, min(small_phantom.spacing), True,
                backend="numpy",
            )
            assert C[0] == pytest.approx(ref.gray, abs=1e-12)
            assert A[0] == pytest.approx(ref.alpha, abs=1e-12)

    @BOTH_BACKENDS
    def test_mip_matches_dense_oracle(self, backend, rng):
        grid = smooth_grid(32)
        step = 0.5 * min(grid.spacing)
        n = 200
        origins = np.column_stack([
            rng.uniform(0.2, 0.8, n), rng.uniform(0.2, 0.8, n), np.full(n, -0.3),
        ])
        dirs = rng.normal(0, 0.15, (n, 3))
        dirs[:, 2] = 1.0
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t0 = np.full(n, 0.05)
        t1 = np.full(n, 1.5)
        C, A = kernels.march_rays(
            grid.values[None], grid.origin, grid.spacing, origins, dirs,
            np.zeros(n), np.column_stack([t0, t1]), np.ones(n, dtype=np.int64),
            np.zeros((n, 1), dtype=np.int64),
            np.full((n, 1), kernels.INTEG_MIP, dtype=np.int64), np.ones((n, 1)),
            *TransferFunction().arrays(), step, min(grid.spacing), True,
            backend=backend,
        )
        for i in range(n):
            want = ref_mip_ray(grid.values, grid.origin, grid.spacing,
                               origins[i], dirs[i], t0[i], t1[i], step / 10)
            assert abs(C[i] - want) < 1e-3
            assert C[i] <= want + 1e-12  # sampled max is a lower bound


class TestOpacityBehavior:
    def test_opacity_monotone_via_prefixes(self, small_phantom):
        cam = Camera(look_at_pose((0, 0.8, 0), (0, 0, 0), up=(0, 0, 1)), 60.0, (16, 16))
        origins, dirs = camera_rays(cam)
        lo, hi = ray_box_spans(origins, dirs, small_phantom.world_min, small_phantom.world_max)
        hit = (hi > 0) & (hi >= lo)
        origins, dirs, hi = origins[hit], dirs[hit], hi[hit]
        tf_v, tf_a, tf_g = TransferFunction().arrays()
        step = 0.5 * min(small_phantom.spacing)
        n = origins.shape[0]
        prev = np.zeros(n)
        for frac in np.linspace(0.1, 1.0, 10):
            seg = np.column_stack([np.zeros(n), hi * frac])
            _, A = kernels.march_rays(
                small_phantom.values[None], small_phantom.origin, small_phantom.spacing,
                origins, dirs, np.maximum(lo, 0.0), seg, np.ones(n, dtype=np.int64),
                np.zeros((n, 1), dtype=np.int64),
                np.zeros((n, 1), dtype=np.int64), np.ones((n, 1)),
                tf_v, tf_a, tf_g, step, min(small_phantom.spacing), True,
            )
            assert np.all(A >= prev - 1e-12)
            assert np.all(A <= 1.0)
            prev = A

    def test_step_halving_changes_luminance_little(self, default_phantom):
        scene = SceneState(volume=default_phantom)
        cam = Camera(look_at_pose((0, 0.93, 0.06), (0, 0, 0.06), up=(0, 0, 1)), 60.0, (64, 48))
        base_step = 0.5 * min(default_phantom.spacing)
        a = render_frame(scene, cam, step=base_step)
        b = render_frame(scene, cam, step=base_step / 2)
        diff = np.abs(a.pixels[:, :, :3].astype(int) - b.pixels[:, :, :3].astype(int))
        assert diff.max() <= 2

    def test_fast_forward_skip_is_exact(self, small_phantom):
        # disabling the empty-space skip must not change a single sample
        cam = golden_camera()
        origins, dirs = camera_rays(Camera(cam.pose, cam.fov_deg, (24, 18)))
        lo, hi = ray_box_spans(origins, dirs, small_phantom.world_min, small_phantom.world_max)
        hit = (hi > 0) & (hi >= lo)
        origins, dirs, lo, hi = origins[hit], dirs[hit], lo[hit], hi[hit]
        n = origins.shape[0]
        tf_v, tf_a, tf_g = TransferFunction().arrays()
        step = 0.5 * min(small_phantom.spacing)
        common = (
            small_phantom.values[None], small_phantom.origin, small_phantom.spacing,
            origins, dirs,
        )
        rest = (
            np.column_stack([np.zeros(n), hi]), np.ones(n, dtype=np.int64),
            np.zeros((n, 1), dtype=np.int64), np.zeros((n, 1), dtype=np.int64),
            np.ones((n, 1)), tf_v, tf_a, tf_g, step, min(small_phantom.spacing),
        )
        c1, a1 = kernels.march_rays(*common, np.maximum(lo, 0.0), *rest, True, backend="numpy")
        c2, a2 = kernels.march_rays(*common, np.zeros(n), *rest, False, backend="numpy")
        assert np.array_equal(c1, c2) and np.array_equal(a1, a2)


class TestEffectLocality:
    @BOTH_BACKENDS
    def test_rays_missing_all_discs_identical(self, backend, small_phantom):
        lens = Lens(1, Pose((0.0, 0.55, 0.0), quat_from_axis_angle((1, 0, 0), -math.pi / 2)),
                    0.12, MIP, MIP)
        cam = Camera(look_at_pose((0, 0.9, 0), (0, 0, 0), up=(0, 0, 1)), 60.0, (48, 36))
        bare = render_frame(SceneState(volume=small_phantom), cam, backend=backend)
        with_lens = render_frame(
            SceneState(volume=small_phantom, lenses=(lens,), next_id=2), cam, backend=backend
        )
        origins, dirs = camera_rays(cam)
        nrm = np.asarray(lens.normal())
        c = np.asarray(lens.center())
        denom = dirs @ nrm
        t = ((c - origins) @ nrm) / denom
        q = origins + t[:, None] * dirs - c
        rho = np.sqrt(np.einsum("ij,ij->i", q, q))
        untouched = (rho > lens.radius * 1.02) | (t <= 0)
        a = bare.pixels.reshape(-1, 4)[untouched]
        b = with_lens.pixels.reshape(-1, 4)[untouched]
        assert np.array_equal(a, b)


class TestGolden:
    def test_production_matches_committed_golden(self, default_phantom):
        scene = SceneState(volume=default_phantom)
        fb = render_frame(scene, golden_camera())
        from vislens.session import compare_golden

        report = compare_golden(fb, GOLDEN_DIR / "golden_topdown.ppm", tolerance=2)
        assert report.passed, str(report)

    def test_reference_regenerates_committed_golden(self, default_phantom):
        cam = golden_camera()
        tf = TransferFunction()
        step = 0.5 * min(default_phantom.spacing)
        img = ref_dvr_frame(
            default_phantom, cam.pose.position,
            [np.asarray(cam.pose.x_axis()), np.asarray(cam.pose.y_axis()),
             np.asarray(cam.pose.z_axis())],
            cam.fov_deg, 96, 72, tf.points, step / 4,
        )
        golden = read_image(GOLDEN_DIR / "golden_topdown.ppm")
        assert np.array_equal(img, golden)


class TestRings:
    def _cam(self):
        return Camera(Pose((0, 0, 0)), 60.0, (64, 64))

    def test_lens_behind_camera_culled(self, small_phantom):
        lens = Lens(1, Pose((0, 0, 2.0)), 0.3, MIP)
        scene = SceneState(volume=small_phantom, lenses=(lens,), next_id=2)
        fb = render_frame(scene, self._cam())
        bare = render_frame(SceneState(volume=small_phantom), self._cam())
        assert fb.tobytes() == bare.tobytes()

    def test_face_on_annulus_radii_match_projection(self):
        lens = Lens(1, Pose((0, 0, -1.0)), 0.3, MIP, ring_width=0.06)
        scene = SceneState(lenses=(lens,), next_id=2)
        cam = self._cam()
        fb = render_frame(scene, cam)
        ring = np.all(fb.pixels[:, :, :3] == np.asarray(RING_IDLE, np.uint8), axis=2)
        ys, xs = np.nonzero(ring)
        assert len(xs) > 0
        r = np.hypot(xs + 0.5 - 32.0, ys + 0.5 - 32.0)
        f_px = 32.0 / math.tan(math.radians(30.0))
        outer = f_px * 0.3  # small-angle: tan(theta) ~ r/d with d=1
        inner = f_px * 0.24
        assert abs(r.max() - outer) <= 1.5
        assert abs(r.min() - inner) <= 1.5

    def test_nearer_ring_wins_overlap(self):
        near = Lens(1, Pose((0, 0, -1.0)), 0.3, MIP, ring_width=0.3 - 0.05)
        far = Lens(2, Pose((0, 0, -2.0)), 0.62, MIP, ring_width=0.62 - 0.05)
        scene = SceneState(lenses=(near, far), next_id=3)
        fb = render_frame(scene, self._cam(), grabbed={1})
        # both project almost a full disc over the image center; where both
        # cover a pixel the nearer (grabbed, cyan) one must own it
        grabbed = np.all(fb.pixels[:, :, :3] == np.asarray(RING_GRABBED, np.uint8), axis=2)
        assert grabbed[32, 32]
        origins, dirs = camera_rays(self._cam())

        def covered(lens):
            t = ((np.asarray(lens.center()) - origins) @ (0, 0, 1)) / (dirs @ (0, 0, 1))
            q = origins + t[:, None] * dirs - np.asarray(lens.center())
            rho2 = np.einsum("ij,ij->i", q, q)
            inner = lens.radius - lens.ring_width
            return (rho2 <= lens.radius**2) & (rho2 >= inner**2) & (t > 0)

        both = (covered(near) & covered(far)).reshape(64, 64)
        assert both.sum() > 100
        assert np.array_equal(grabbed[both], np.ones(both.sum(), dtype=bool))

    def test_proxy_ring_blends_half(self):
        lens = Lens(1, Pose((0, 0, -1.0)), 0.3, MIP, ring_width=0.25, semi_transparent=True)
        fb = render_frame(SceneState(lenses=(lens,), next_id=2), self._cam())
        want = np.floor(0.5 * np.asarray(RING_IDLE) + 0.5 * np.asarray(BACKGROUND[:3]) + 0.5)
        assert np.array_equal(fb.pixels[32, 32, :3], want.astype(np.uint8))

    def test_spawn_animation_shrinks_ring(self):
        import dataclasses

        lens = Lens(1, Pose((0, 0, -1.0)), 0.3, MIP, ring_width=0.02, spawn_ms=0)
        grown = SceneState(lenses=(lens,), next_id=2, time_ms=400)
        young = SceneState(lenses=(lens,), next_id=2, time_ms=150)
        cam = self._cam()
        full = np.all(render_frame(grown, cam).pixels[:, :, :3]
                      == np.asarray(RING_IDLE, np.uint8), axis=2)
        half = np.all(render_frame(young, cam).pixels[:, :, :3]
                      == np.asarray(RING_IDLE, np.uint8), axis=2)
        assert 0 < half.sum() < full.sum()


class TestImageIO:
    def test_ppm_bit_exact_single_red_pixel(self, tmp_path):
        fb = Framebuffer((1, 1), np.array([[[255, 0, 0, 255]]], dtype=np.uint8))
        path = tmp_path / "red.ppm"
        write_image(fb, path)
        data = path.read_bytes()
        assert data == b"P6\n1 1\n255\n" + bytes([255, 0, 0])

    def test_ppm_roundtrip(self, tmp_path, rng):
        px = rng.integers(0, 256, size=(7, 5, 4), dtype=np.uint8)
        px[:, :, 3] = 255
        fb = Framebuffer((5, 7), px)
        write_image(fb, tmp_path / "x.ppm")
        back = read_image(tmp_path / "x.ppm")
        assert np.array_equal(back, px[:, :, :3])

    def test_png_roundtrip(self, tmp_path, rng):
        px = rng.integers(0, 256, size=(4, 6, 4), dtype=np.uint8)
        fb = Framebuffer((6, 4), px)
        write_image(fb, tmp_path / "x.png")
        back = read_image(tmp_path / "x.png")
        assert np.array_equal(back, px)

    def test_unwritable_path_raises_with_context(self, tmp_path):
        fb = Framebuffer((1, 1), np.zeros((1, 1, 4), dtype=np.uint8))
        missing = tmp_path / "no_dir" / "x.ppm"
        with pytest.raises(RenderError) as err:
            write_image(fb, missing)
        assert "x.ppm" in str(err.value)

    def test_repeated_write_stable_bytes(self, tmp_path, small_phantom):
        fb = render_frame(SceneState(volume=small_phantom), golden_camera())
        write_image(fb, tmp_path / "a.ppm")
        write_image(fb, tmp_path / "b.ppm")
        h = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in ("a.ppm", "b.ppm")]
        assert h[0] == h[1]
