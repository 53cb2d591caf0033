"""CPU ray-caster: direct volume rendering with per-pixel lens effects.

Per pixel: build the primary ray, clip it against the volume's voxel-center
bounding box, split it into segments at lens-disc hits, integrate each
segment under its composed shading, then overlay the lens rings.  A frame is
a pure function of (scene, camera, transfer function, step), so identical
inputs give byte-identical framebuffers on one platform and backend.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from vislens import kernels
from vislens.geometry import Pose, Ray, Vec3
from vislens.lens import (
    EffectiveShading,
    Face,
    Integrator,
    Lens,
    compose_effects,
    ray_disc_hit,
)
from vislens.scene import SceneState
from vislens.volume import VolumeGrid, gradient_magnitude_grid, gradient_percentile

BACKGROUND = (18, 18, 24, 255)
RING_IDLE = (255, 176, 32)
RING_GRABBED = (64, 224, 240)
SPAWN_ANIM_MS = 300


class RenderError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Camera:
    """Pinhole camera viewing along local -Z with local +Y up."""

    pose: Pose = Pose()
    fov_deg: float = 60.0
    resolution: tuple[int, int] = (320, 240)

    def __post_init__(self):
        if not (10.0 < self.fov_deg < 170.0):
            raise RenderError(f"fov {self.fov_deg} outside (10, 170)")
        w, h = self.resolution
        if w < 1 or h < 1:
            raise RenderError(f"resolution {self.resolution} must be >= 1x1")


@dataclass(frozen=True)
class TransferFunction:
    """Piecewise-linear map from scalar value to (opacity, gray)."""

    points: tuple[tuple[float, float, float], ...] = (
        (0.0, 0.0, 0.0),
        (0.3, 0.02, 0.35),
        (0.6, 0.06, 0.6),
        (1.0, 0.15, 0.9),
    )

    def __post_init__(self):
        pts = tuple((float(v), float(a), float(g)) for v, a, g in self.points)
        vals = [p[0] for p in pts]
        if len(pts) < 2 or vals[0] != 0.0 or vals[-1] != 1.0:
            raise RenderError("transfer function must span 0.0 .. 1.0")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise RenderError("transfer function values must strictly increase")
        if any(not (0.0 <= a <= 1.0 and 0.0 <= g <= 1.0) for _, a, g in pts):
            raise RenderError("opacity and gray levels must lie in [0,1]")
        object.__setattr__(self, "points", pts)

    def arrays(self):
        arr = np.asarray(self.points, dtype=np.float64)
        return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()

    def opacity(self, v: float) -> float:
        tv, ta, _ = self.arrays()
        return float(np.interp(v, tv, ta))

    def gray(self, v: float) -> float:
        tv, _, tg = self.arrays()
        return float(np.interp(v, tv, tg))


DEFAULT_TF = TransferFunction()


@dataclass(frozen=True, eq=False)
class Framebuffer:
    """RGBA, 8 bits per channel, row-major with the origin at top-left."""

    resolution: tuple[int, int]
    pixels: np.ndarray  # uint8 (h, w, 4)

    def __post_init__(self):
        w, h = self.resolution
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (h, w, 4):
            raise RenderError(f"pixel shape {px.shape} does not match {w}x{h}")
        object.__setattr__(self, "pixels", px)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


# --- derived scalar fields --------------------------------------------------


class FieldSet:
    """Lazy cache of a grid's derived gradient-magnitude fields.

    Depth d is |gradient| of the depth d-1 field, normalized by the given
    g_max (or, by default, the 95th percentile of the underlying gradient
    magnitudes) and clipped to [0, 1].
    """

    def __init__(self, grid: VolumeGrid):
        self.grid = grid
        self._fields: dict[tuple[int, Optional[float]], VolumeGrid] = {(0, None): grid}
        self._auto: dict[int, float] = {}
        self._stacks: dict[tuple, tuple[np.ndarray, dict]] = {}

    def field(self, depth: int, g_max: Optional[float] = None) -> VolumeGrid:
        key = (depth, None if depth == 0 else g_max)
        if key in self._fields:
            return self._fields[key]
        base = self.field(depth - 1, g_max)
        if g_max is None:
            if depth not in self._auto:
                self._auto[depth] = max(gradient_percentile(base), 1e-12)
            norm = self._auto[depth]
        else:
            norm = g_max
        out = gradient_magnitude_grid(base, norm)
        self._fields[key] = out
        return out

    def stacked(self, keys: tuple[tuple[int, Optional[float]], ...]):
        """(n, nx, ny, nz) array of the requested fields plus key -> slab
        index; cached because np.stack copies tens of MB."""
        if keys not in self._stacks:
            index = {k: i for i, k in enumerate(keys)}
            arr = np.stack([self.field(*k).values for k in keys])
            self._stacks[keys] = (arr, index)
        return self._stacks[keys]


_fieldsets: "weakref.WeakKeyDictionary[VolumeGrid, FieldSet]" = weakref.WeakKeyDictionary()


def fieldset_for(grid: VolumeGrid) -> FieldSet:
    fs = _fieldsets.get(grid)
    if fs is None:
        fs = FieldSet(grid)
        _fieldsets[grid] = fs
    return fs


def _shading_key(shading: EffectiveShading) -> tuple[int, Optional[float]]:
    return (shading.transform_depth, shading.g_max if shading.transform_depth else None)


# --- reference per-ray integration ------------------------------------------


@dataclass(frozen=True, slots=True)
class Accumulator:
    gray: float = 0.0
    alpha: float = 0.0


def integrate_segment(
    grid: VolumeGrid,
    ray: Ray,
    t0: float,
    t1: float,
    shading: EffectiveShading,
    tf: TransferFunction,
    step: float,
    state: Accumulator = Accumulator(),
    fields: Optional[FieldSet] = None,
) -> Accumulator:
    """Scalar reference for one segment; the kernels batch the same math.

    Emission-absorption composites front to back with opacity corrected for
    the sampling step (1-(1-a)^(step/step_ref), step_ref = min spacing) and
    stops at alpha 0.99; maximum intensity emits the segment's peak field
    value as opaque grayscale when positive.
    """
    if t1 <= t0:
        return state
    fields = fields if fields is not None else fieldset_for(grid)
    fld = fields.field(*_shading_key(shading))
    tf_v, tf_a, tf_g = tf.arrays()
    ratio = step / min(grid.spacing)
    from vislens.volume import sample_trilinear

    C, A = state.gray, state.alpha
    n = int(math.ceil((t1 - t0) / step))
    if shading.integrator is Integrator.MAX_INTENSITY:
        m = 0.0
        for k in range(n):
            v = sample_trilinear(fld, ray.at(t0 + k * step))
            m = max(m, v)
        if m > 0.0:
            C += (1.0 - A) * m
            A = 1.0
    else:
        for k in range(n):
            if A >= kernels.STOP_ALPHA:
                break
            v = sample_trilinear(fld, ray.at(t0 + k * step))
            a = min(1.0, max(0.0, float(np.interp(v, tf_v, tf_a)) * shading.opacity_scale))
            ac = 1.0 - (1.0 - a) ** ratio
            g = float(np.interp(v, tf_v, tf_g))
            C += (1.0 - A) * ac * g
            A += (1.0 - A) * ac
    return Accumulator(C, A)


# --- camera rays and box clipping --------------------------------------------


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel world-space ray origins and unit directions, row-major from
    the top-left pixel center."""
    w, h = camera.resolution
    tan_half = math.tan(math.radians(camera.fov_deg) / 2.0)
    aspect = w / h
    xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * tan_half * aspect
    ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * tan_half
    dirs = np.empty((h, w, 3))
    dirs[:, :, 0] = xs[None, :]
    dirs[:, :, 1] = ys[:, None]
    dirs[:, :, 2] = -1.0
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rot = _rotation_matrix(camera.pose)
    dirs = dirs @ rot.T
    origins = np.broadcast_to(np.asarray(camera.pose.position), dirs.shape).copy()
    return origins, dirs


def _rotation_matrix(pose: Pose) -> np.ndarray:
    return np.column_stack([pose.x_axis(), pose.y_axis(), pose.z_axis()])


def ray_box_spans(origins, dirs, bmin, bmax) -> tuple[np.ndarray, np.ndarray]:
    """Slab intersection parameters (t_lo, t_hi) per ray; misses have
    t_hi < t_lo."""
    t_lo = np.full(origins.shape[0], -np.inf)
    t_hi = np.full(origins.shape[0], np.inf)
    for a in range(3):
        o = origins[:, a]
        d = dirs[:, a]
        nonzero = d != 0.0
        with np.errstate(divide="ignore"):
            inv = np.where(nonzero, 1.0 / np.where(nonzero, d, 1.0), 0.0)
        t1 = (bmin[a] - o) * inv
        t2 = (bmax[a] - o) * inv
        lo = np.where(nonzero, np.minimum(t1, t2), -np.inf)
        hi = np.where(nonzero, np.maximum(t1, t2), np.inf)
        inside = (o >= bmin[a]) & (o <= bmax[a])
        lo = np.where(nonzero, lo, np.where(inside, -np.inf, np.inf))
        hi = np.where(nonzero, hi, np.where(inside, np.inf, -np.inf))
        t_lo = np.maximum(t_lo, lo)
        t_hi = np.minimum(t_hi, hi)
    return t_lo, t_hi


# --- lens hits and segment construction --------------------------------------


def _lens_hits(lenses, origins, dirs, now_ms):
    """Vectorized disc hits per lens: (t, face_back, valid) arrays of shape
    (n_rays, n_lenses).  Uses display radii so spawn animation shows."""
    n = origins.shape[0]
    L = len(lenses)
    t = np.full((n, L), np.inf)
    back = np.zeros((n, L), dtype=bool)
    valid = np.zeros((n, L), dtype=bool)
    for li, lens in enumerate(lenses):
        r = lens.display_radius(now_ms, SPAWN_ANIM_MS)
        if r <= 0.0:
            continue
        nrm = np.asarray(lens.normal())
        c = np.asarray(lens.center())
        denom = dirs @ nrm
        ok = np.abs(denom) >= 1e-9
        tt = np.where(ok, ((c - origins) @ nrm) / np.where(ok, denom, 1.0), np.inf)
        ok &= tt > 1e-6
        q = origins + tt[:, None] * dirs - c
        ok &= np.einsum("ij,ij->i", q, q) <= r * r
        t[:, li] = np.where(ok, tt, np.inf)
        back[:, li] = denom > 0.0
        valid[:, li] = ok
    return t, back, valid


def _build_segments(scene, lenses, t_mat, back_mat, valid_mat, t_exit, fields: FieldSet):
    """Per-ray segment arrays for the kernels plus the stacked field array.

    Rays are grouped by their ordered hit signature so descriptor stacks are
    composed once per distinct combination.
    """
    n, L = t_mat.shape
    drop = ~valid_mat | (t_mat >= t_exit[:, None])
    t_mat = np.where(drop, np.inf, t_mat)
    order = np.argsort(t_mat, axis=1, kind="stable")  # id order breaks ties
    t_sorted = np.take_along_axis(t_mat, order, axis=1)
    hit_sorted = np.isfinite(t_sorted)
    code = np.where(hit_sorted, order * 2 + np.take_along_axis(back_mat.astype(np.int64), order, axis=1), -1)

    seg_bounds = np.zeros((n, L + 2))
    seg_bounds[:, 1 : L + 1] = np.where(hit_sorted, t_sorted, t_exit[:, None])
    seg_bounds[:, L + 1] = t_exit
    seg_count = hit_sorted.sum(axis=1).astype(np.int64) + 1

    seg_field = np.zeros((n, L + 1), dtype=np.int64)
    seg_integ = np.zeros((n, L + 1), dtype=np.int64)
    seg_oscale = np.ones((n, L + 1))

    signatures, inverse = np.unique(code, axis=0, return_inverse=True)
    field_keys: list[tuple[int, Optional[float]]] = [(0, None)]
    key_index = {(0, None): 0}
    for gi in range(signatures.shape[0]):
        sig = signatures[gi]
        rows = inverse == gi
        stack = []
        for s, c in enumerate(sig):
            if c < 0:
                break
            lens = lenses[c // 2]
            if lens.is_combined:
                stack.extend(lens.stack)
            else:
                stack.append(lens.back_effect if c % 2 else lens.front_effect)
            shading = compose_effects(stack)
            key = _shading_key(shading)
            if key not in key_index:
                key_index[key] = len(field_keys)
                field_keys.append(key)
            seg_field[rows, s + 1] = key_index[key]
            seg_integ[rows, s + 1] = (
                kernels.INTEG_MIP
                if shading.integrator is Integrator.MAX_INTENSITY
                else kernels.INTEG_EA
            )
            seg_oscale[rows, s + 1] = shading.opacity_scale
    stacked, index = fields.stacked(tuple(field_keys))
    remap = np.array([index[k] for k in field_keys], dtype=np.int64)
    seg_field = remap[seg_field]
    return seg_bounds, seg_count, seg_field, seg_integ, seg_oscale, stacked


# --- frame rendering ----------------------------------------------------------


def render_frame(
    scene: SceneState,
    camera: Camera,
    tf: TransferFunction = DEFAULT_TF,
    step: Optional[float] = None,
    backend: Optional[str] = None,
    workers: int = 1,
    grabbed: frozenset[int] | set[int] = frozenset(),
    background: tuple[int, int, int, int] = BACKGROUND,
) -> Framebuffer:
    w, h = camera.resolution
    pixels = np.empty((h, w, 4), dtype=np.uint8)
    pixels[:, :] = background
    origins, dirs = camera_rays(camera)

    grid = scene.volume
    if grid is not None:
        if step is None:
            step = 0.5 * min(grid.spacing)
        if step <= 0.0:
            raise RenderError(f"step must be positive, got {step}")
        t_lo, t_hi = ray_box_spans(origins, dirs, grid.world_min, grid.world_max)
        hit = (t_hi > 0.0) & (t_hi >= t_lo)
        idx = np.flatnonzero(hit)
        if idx.size:
            fields = fieldset_for(grid)
            t_exit = t_hi[idx]
            t_enter = np.maximum(t_lo[idx], 0.0)
            lenses = scene.lenses
            t_mat, back_mat, valid_mat = _lens_hits(
                lenses, origins[idx], dirs[idx], scene.time_ms
            )
            seg_bounds, seg_count, seg_field, seg_integ, seg_oscale, stacked = (
                _build_segments(scene, lenses, t_mat, back_mat, valid_mat, t_exit, fields)
            )
            tf_v, tf_a, tf_g = tf.arrays()
            C, A = kernels.march_rays(
                stacked, grid.origin, grid.spacing,
                np.ascontiguousarray(origins[idx]), np.ascontiguousarray(dirs[idx]),
                t_enter, seg_bounds, seg_count, seg_field, seg_integ, seg_oscale,
                tf_v, tf_a, tf_g, step, min(grid.spacing), ff_ea=(tf_a[0] == 0.0),
                backend=backend, workers=workers,
            )
            shade = np.empty((idx.size, 4))
            for ch in range(3):
                shade[:, ch] = 255.0 * C + (1.0 - A) * background[ch]
            shade[:, 3] = 255.0
            flat = pixels.reshape(-1, 4)
            flat[idx] = np.clip(np.floor(shade + 0.5), 0, 255).astype(np.uint8)

    fb = Framebuffer((w, h), pixels)
    return draw_lens_rings(fb, scene, camera, grabbed=grabbed, rays=(origins, dirs))


def draw_lens_rings(
    fb: Framebuffer,
    scene: SceneState,
    camera: Camera,
    grabbed: frozenset[int] | set[int] = frozenset(),
    rays: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Framebuffer:
    """Overlay each lens's ring, nearest ring winning where they overlap.

    Rings are painted over the volume unconditionally (the delineation must
    stay visible); grabbed lenses show cyan, proxies blend at 50% alpha.
    """
    if not scene.lenses:
        return fb
    origins, dirs = rays if rays is not None else camera_rays(camera)
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_lens = np.full(n, -1, dtype=np.int64)
    for li, lens in enumerate(scene.lenses):
        r_out = lens.display_radius(scene.time_ms, SPAWN_ANIM_MS)
        if r_out <= 0.0:
            continue
        r_in = max(r_out - lens.ring_width, 0.0)
        nrm = np.asarray(lens.normal())
        c = np.asarray(lens.center())
        denom = dirs @ nrm
        ok = np.abs(denom) >= 1e-9
        t = np.where(ok, ((c - origins) @ nrm) / np.where(ok, denom, 1.0), np.inf)
        ok &= t > 1e-6
        q = origins + t[:, None] * dirs - c
        rho2 = np.einsum("ij,ij->i", q, q)
        ok &= (rho2 <= r_out * r_out) & (rho2 >= r_in * r_in)
        closer = ok & (t < best_t)
        best_t[closer] = t[closer]
        best_lens[closer] = li
    if (best_lens < 0).all():
        return fb
    w, h = fb.resolution
    flat = fb.pixels.reshape(-1, 4)
    for li, lens in enumerate(scene.lenses):
        rows = np.flatnonzero(best_lens == li)
        if rows.size == 0:
            continue
        color = RING_GRABBED if lens.id in grabbed else RING_IDLE
        rgba = np.array([color[0], color[1], color[2], 255], dtype=np.float64)
        if lens.semi_transparent:
            mixed = 0.5 * rgba[None, :] + 0.5 * flat[rows].astype(np.float64)
            flat[rows] = np.floor(mixed + 0.5).astype(np.uint8)
        else:
            flat[rows] = rgba.astype(np.uint8)
    return Framebuffer((w, h), flat.reshape(h, w, 4))


# --- image files --------------------------------------------------------------


def write_image(fb: Framebuffer, path) -> None:
    """Lossless image output: .ppm (P6, always available) or .png (Pillow)."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".ppm":
            w, h = fb.resolution
            with open(path, "wb") as f:
                f.write(b"P6\n%d %d\n255\n" % (w, h))
                f.write(fb.pixels[:, :, :3].tobytes())
        elif path.suffix.lower() == ".png":
            from PIL import Image

            Image.fromarray(fb.pixels, mode="RGBA").save(path, format="PNG")
        else:
            raise RenderError(f"{path}: unsupported image suffix (use .ppm or .png)")
    except OSError as e:
        raise RenderError(f"{path}: cannot write image: {e}") from e


def read_image(path) -> np.ndarray:
    """Pixels as uint8 (h, w, 3|4)."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        data = path.read_bytes()
        tokens = []
        pos = 0
        while len(tokens) < 4:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
        if tokens[0] != b"P6":
            raise RenderError(f"{path}: not a P6 pixmap")
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        if maxval != 255:
            raise RenderError(f"{path}: only maxval 255 supported")
        pos += 1  # single whitespace after maxval
        px = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
        return px.reshape(h, w, 3).copy()
    from PIL import Image

    return np.asarray(Image.open(path)).copy()
