"""Ray-marching kernels, the renderer's hot path.

Two interchangeable backends implement the same math:

* ``numba``: scalar per-ray loops compiled with ``@njit``, with serial and
  ``prange``-parallel variants (the default when numba imports);
* ``numpy``: vectorized-over-rays fallback, always available.

Select with ``VISLENS_BACKEND=numba|numpy|auto`` (default auto).  Both paths
follow the identical sampling lattice ``t = t0 + k*step`` and the identical
compositing rules, so they agree to floating-point noise; determinism is
guaranteed per backend.

Segment encoding per ray: ``seg_bounds[p, s] .. seg_bounds[p, s+1]`` for
``s < seg_count[p]``; ``seg_field`` selects a slab of the stacked field
array, ``seg_integ`` is 0 for emission-absorption and 1 for maximum
intensity, ``seg_oscale`` scales transfer-function opacity.  Marching stops
for a ray once accumulated opacity reaches STOP_ALPHA.  Samples that lie
before the volume entry parameter are skipped without leaving the lattice;
for emission-absorption this is only legal when the transfer function maps
0 to opacity 0 (``ff_ea``).
"""

from __future__ import annotations

import math
import os

import numpy as np

STOP_ALPHA = 0.99
INTEG_EA = 0
INTEG_MIP = 1


def _resolve_backend() -> str:
    choice = os.environ.get("VISLENS_BACKEND", "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"VISLENS_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


_ACTIVE = _resolve_backend()


def active_backend() -> str:
    return _ACTIVE


def available_backends() -> tuple[str, ...]:
    try:
        import numba  # noqa: F401
        return ("numba", "numpy")
    except ImportError:
        return ("numpy",)


# --- numpy backend ----------------------------------------------------------


def trilinear_many(field: np.ndarray, origin, spacing, pts: np.ndarray) -> np.ndarray:
    """Vectorized trilinear sampling; 0 outside the voxel-center box."""
    nx, ny, nz = field.shape
    g = (pts - np.asarray(origin)) / np.asarray(spacing)
    inside = (
        (g[:, 0] >= 0.0) & (g[:, 0] <= nx - 1)
        & (g[:, 1] >= 0.0) & (g[:, 1] <= ny - 1)
        & (g[:, 2] >= 0.0) & (g[:, 2] <= nz - 1)
    )
    gc = np.clip(g, 0.0, np.asarray(field.shape, dtype=np.float64) - 1.0)
    i0 = np.minimum(gc.astype(np.int64), np.asarray(field.shape) - 2)
    f = gc - i0
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c00 = field[x0, y0, z0] * (1 - fx) + field[x0 + 1, y0, z0] * fx
    c10 = field[x0, y0 + 1, z0] * (1 - fx) + field[x0 + 1, y0 + 1, z0] * fx
    c01 = field[x0, y0, z0 + 1] * (1 - fx) + field[x0 + 1, y0, z0 + 1] * fx
    c11 = field[x0, y0 + 1, z0 + 1] * (1 - fx) + field[x0 + 1, y0 + 1, z0 + 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    v = c0 * (1 - fz) + c1 * fz
    return np.where(inside, v, 0.0)


def _skip_count(t_enter, t0, step):
    k0 = np.ceil((t_enter - t0) / step).astype(np.int64) - 1
    return np.maximum(k0, 0)


def _march_numpy(
    fields, origin, spacing, rays_o, rays_d, t_enter,
    seg_bounds, seg_count, seg_field, seg_integ, seg_oscale,
    tf_v, tf_a, tf_g, step, ratio, ff_ea,
):
    n_rays = rays_o.shape[0]
    C = np.zeros(n_rays)
    A = np.zeros(n_rays)
    max_segs = seg_bounds.shape[1] - 1
    for s in range(max_segs):
        act = (s < seg_count) & (A < STOP_ALPHA)
        act &= seg_bounds[:, s + 1] > seg_bounds[:, s]
        if not act.any():
            if not (s < seg_count).any():
                break
            continue
        combos = np.unique(
            np.stack([seg_field[act, s], seg_integ[act, s]], axis=1), axis=0
        )
        for fi, integ in combos:
            rows = np.flatnonzero(act & (seg_field[:, s] == fi) & (seg_integ[:, s] == integ))
            _march_numpy_group(
                fields[fi], origin, spacing, rays_o, rays_d, t_enter,
                seg_bounds[:, s], seg_bounds[:, s + 1], seg_oscale[:, s],
                int(integ), rows, tf_v, tf_a, tf_g, step, ratio, ff_ea, C, A,
            )
    return C, A


def _march_numpy_group(
    field, origin, spacing, rays_o, rays_d, t_enter, t0_all, t1_all, osc_all,
    integ, rows, tf_v, tf_a, tf_g, step, ratio, ff_ea, C, A,
):
    t0 = t0_all[rows]
    t1 = t1_all[rows]
    n = np.ceil((t1 - t0) / step).astype(np.int64)
    if integ == INTEG_MIP or ff_ea:
        k0 = np.where(t_enter[rows] > t0, _skip_count(t_enter[rows], t0, step), 0)
    else:
        k0 = np.zeros_like(n)
    live = n > k0
    rows = rows[live]
    if rows.size == 0:
        return
    t0, n, k0 = t0[live], n[live], k0[live]
    osc = osc_all[rows]
    o = rays_o[rows]
    d = rays_d[rows]
    if integ == INTEG_MIP:
        m = np.zeros(rows.size)
    k = k0.copy()
    while True:
        alive = k < n
        if integ == INTEG_EA:
            alive &= A[rows] < STOP_ALPHA
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        t = t0[idx] + k[idx] * step
        pts = o[idx] + t[:, None] * d[idx]
        v = trilinear_many(field, origin, spacing, pts)
        if integ == INTEG_EA:
            a = np.clip(np.interp(v, tf_v, tf_a) * osc[idx], 0.0, 1.0)
            ac = 1.0 - (1.0 - a) ** ratio
            g = np.interp(v, tf_v, tf_g)
            r = rows[idx]
            C[r] += (1.0 - A[r]) * ac * g
            A[r] += (1.0 - A[r]) * ac
        else:
            m[idx] = np.maximum(m[idx], v)
        k[idx] += 1
    if integ == INTEG_MIP:
        pos = m > 0.0
        r = rows[pos]
        C[r] += (1.0 - A[r]) * m[pos]
        A[r] = 1.0


# --- numba backend ----------------------------------------------------------

_NUMBA = {}


def _build_numba():
    if _NUMBA:
        return _NUMBA
    import numba
    from numba import njit, prange

    @njit(cache=True, nogil=True)
    def trilinear(field, ox, oy, oz, sx, sy, sz, px, py, pz):
        nx, ny, nz = field.shape
        gx = (px - ox) / sx
        gy = (py - oy) / sy
        gz = (pz - oz) / sz
        if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > nx - 1 or gy > ny - 1 or gz > nz - 1:
            return 0.0
        i0 = int(gx)
        j0 = int(gy)
        k0 = int(gz)
        if i0 > nx - 2:
            i0 = nx - 2
        if j0 > ny - 2:
            j0 = ny - 2
        if k0 > nz - 2:
            k0 = nz - 2
        fx = gx - i0
        fy = gy - j0
        fz = gz - k0
        c00 = field[i0, j0, k0] * (1 - fx) + field[i0 + 1, j0, k0] * fx
        c10 = field[i0, j0 + 1, k0] * (1 - fx) + field[i0 + 1, j0 + 1, k0] * fx
        c01 = field[i0, j0, k0 + 1] * (1 - fx) + field[i0 + 1, j0, k0 + 1] * fx
        c11 = field[i0, j0 + 1, k0 + 1] * (1 - fx) + field[i0 + 1, j0 + 1, k0 + 1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    @njit(cache=True, nogil=True)
    def tf_lookup(tf_v, tf_a, tf_g, v):
        j = 0
        last = tf_v.shape[0] - 2
        while j < last and tf_v[j + 1] < v:
            j += 1
        f = (v - tf_v[j]) / (tf_v[j + 1] - tf_v[j])
        a = tf_a[j] + (tf_a[j + 1] - tf_a[j]) * f
        g = tf_g[j] + (tf_g[j + 1] - tf_g[j]) * f
        return a, g

    @njit(cache=True, nogil=True)
    def march_one(
        fields, ox, oy, oz, sx, sy, sz, rox, roy, roz, rdx, rdy, rdz, te,
        seg_bounds, seg_count, seg_field, seg_integ, seg_oscale,
        tf_v, tf_a, tf_g, step, ratio, ff_ea,
    ):
        C = 0.0
        A = 0.0
        for s in range(seg_count):
            if A >= STOP_ALPHA:
                break
            t0 = seg_bounds[s]
            t1 = seg_bounds[s + 1]
            if t1 <= t0:
                continue
            fi = seg_field[s]
            integ = seg_integ[s]
            osc = seg_oscale[s]
            n = int(math.ceil((t1 - t0) / step))
            k0 = 0
            if (integ == INTEG_MIP or ff_ea) and te > t0:
                k0 = int(math.ceil((te - t0) / step)) - 1
                if k0 < 0:
                    k0 = 0
            if integ == INTEG_EA:
                for k in range(k0, n):
                    t = t0 + k * step
                    v = trilinear(
                        fields[fi], ox, oy, oz, sx, sy, sz,
                        rox + t * rdx, roy + t * rdy, roz + t * rdz,
                    )
                    a, g = tf_lookup(tf_v, tf_a, tf_g, v)
                    a *= osc
                    if a > 1.0:
                        a = 1.0
                    elif a < 0.0:
                        a = 0.0
                    ac = 1.0 - (1.0 - a) ** ratio
                    C += (1.0 - A) * ac * g
                    A += (1.0 - A) * ac
                    if A >= STOP_ALPHA:
                        break
            else:
                m = 0.0
                for k in range(k0, n):
                    t = t0 + k * step
                    v = trilinear(
                        fields[fi], ox, oy, oz, sx, sy, sz,
                        rox + t * rdx, roy + t * rdy, roz + t * rdz,
                    )
                    if v > m:
                        m = v
                if m > 0.0:
                    C += (1.0 - A) * m
                    A = 1.0
        return C, A

    def march_all(
        fields, ox, oy, oz, sx, sy, sz, rays_o, rays_d, t_enter,
        seg_bounds, seg_count, seg_field, seg_integ, seg_oscale,
        tf_v, tf_a, tf_g, step, ratio, ff_ea, out_c, out_a,
    ):
        for p in prange(rays_o.shape[0]):
            c, a = march_one(
                fields, ox, oy, oz, sx, sy, sz,
                rays_o[p, 0], rays_o[p, 1], rays_o[p, 2],
                rays_d[p, 0], rays_d[p, 1], rays_d[p, 2], t_enter[p],
                seg_bounds[p], seg_count[p], seg_field[p], seg_integ[p],
                seg_oscale[p], tf_v, tf_a, tf_g, step, ratio, ff_ea,
            )
            out_c[p] = c
            out_a[p] = a

    _NUMBA["serial"] = njit(cache=True, nogil=True)(march_all)
    _NUMBA["parallel"] = njit(cache=True, nogil=True, parallel=True)(march_all)
    _NUMBA["set_num_threads"] = numba.set_num_threads
    _NUMBA["max_threads"] = numba.config.NUMBA_NUM_THREADS
    return _NUMBA


def march_rays(
    fields: np.ndarray,
    origin,
    spacing,
    rays_o: np.ndarray,
    rays_d: np.ndarray,
    t_enter: np.ndarray,
    seg_bounds: np.ndarray,
    seg_count: np.ndarray,
    seg_field: np.ndarray,
    seg_integ: np.ndarray,
    seg_oscale: np.ndarray,
    tf_v: np.ndarray,
    tf_a: np.ndarray,
    tf_g: np.ndarray,
    step: float,
    step_ref: float,
    ff_ea: bool,
    backend: str | None = None,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate every ray through its segment list.

    Returns (gray, alpha) per ray, both in [0, 1].
    """
    backend = backend or _ACTIVE
    ratio = step / step_ref
    if backend == "numpy":
        return _march_numpy(
            fields, np.asarray(origin), np.asarray(spacing), rays_o, rays_d,
            t_enter, seg_bounds, seg_count, seg_field, seg_integ, seg_oscale,
            tf_v, tf_a, tf_g, step, ratio, ff_ea,
        )
    if backend != "numba":
        raise ValueError(f"unknown backend {backend!r}")
    nb = _build_numba()
    out_c = np.zeros(rays_o.shape[0])
    out_a = np.zeros(rays_o.shape[0])
    if workers > 1:
        nb["set_num_threads"](min(workers, nb["max_threads"]))
        fn = nb["parallel"]
    else:
        fn = nb["serial"]
    fn(
        fields, origin[0], origin[1], origin[2],
        spacing[0], spacing[1], spacing[2], rays_o, rays_d, t_enter,
        seg_bounds, seg_count, seg_field, seg_integ, seg_oscale,
        tf_v, tf_a, tf_g, step, ratio, ff_ea, out_c, out_a,
    )
    return out_c, out_a


def warm_up(backend: str | None = None) -> None:
    """Trigger JIT compilation outside timed regions."""
    backend = backend or _ACTIVE
    if backend != "numba":
        return
    fields = np.zeros((1, 2, 2, 2))
    rays_o = np.zeros((1, 3))
    rays_d = np.zeros((1, 3))
    rays_d[0, 2] = 1.0
    tf = np.array([0.0, 1.0])
    for integ in (INTEG_EA, INTEG_MIP):
        seg = np.zeros((1, 2))
        seg[0, 1] = 1.0
        march_rays(
            fields, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), rays_o, rays_d,
            np.zeros(1), seg, np.ones(1, dtype=np.int64),
            np.zeros((1, 1), dtype=np.int64),
            np.full((1, 1), integ, dtype=np.int64), np.ones((1, 1)),
            tf, tf, tf, 0.5, 1.0, True, backend="numba", workers=1,
        )
        march_rays(
            fields, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), rays_o, rays_d,
            np.zeros(1), seg, np.ones(1, dtype=np.int64),
            np.zeros((1, 1), dtype=np.int64),
            np.full((1, 1), integ, dtype=np.int64), np.ones((1, 1)),
            tf, tf, tf, 0.5, 1.0, True, backend="numba", workers=2,
        )
