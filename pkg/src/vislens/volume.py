"""Volume data model: regular scalar grids, RAW ingestion, sampling and
gradient math, and the synthetic layered-seabed phantom.

Grids store one scalar per voxel, normalized to [0, 1], on a regular lattice.
``values`` is indexed ``[i, j, k]`` (x, y, z); the RAW file format is
x-fastest little-endian, reordering happens at the I/O boundary.  World
coordinates: voxel (i, j, k) has its center at ``origin + (i,j,k)*spacing``.
Sampling outside the voxel-center bounding box returns 0.0 so rays exit the
data cleanly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vislens import textio
from vislens.geometry import Vec3


class VolumeError(ValueError):
    """Bad volume input."""


class SizeMismatchError(VolumeError):
    def __init__(self, path, expected: int, actual: int):
        super().__init__(
            f"{path}: file size mismatch, expected {expected} bytes "
            f"({actual} found)"
        )
        self.expected = expected
        self.actual = actual


class UnsupportedFormatError(VolumeError):
    pass


@dataclass(frozen=True, eq=False)
class VolumeGrid:
    """Immutable regular scalar grid; safe to share across render workers."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    values: np.ndarray  # float64, shape dims, all values in [0, 1]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or any(d < 2 for d in dims):
            raise VolumeError(f"dims must be three integers >= 2, got {dims}")
        if any(s <= 0.0 for s in spacing):
            raise VolumeError(f"spacing must be positive, got {spacing}")
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.shape != dims:
            if values.ndim == 1 and values.size == dims[0] * dims[1] * dims[2]:
                # flat x-fastest order
                values = np.ascontiguousarray(
                    values.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)
                )
            else:
                raise VolumeError(
                    f"values shape {values.shape} does not match dims {dims}"
                )
        lo = float(values.min())
        hi = float(values.max())
        if lo < 0.0 or hi > 1.0:
            raise VolumeError(f"values outside [0,1]: min={lo}, max={hi}")
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", values)

    @property
    def world_min(self) -> Vec3:
        return self.origin

    @property
    def world_max(self) -> Vec3:
        return tuple(
            self.origin[a] + (self.dims[a] - 1) * self.spacing[a] for a in range(3)
        )

    @property
    def extent(self) -> Vec3:
        """Full physical extent dims*spacing (one voxel wider than the
        voxel-center box)."""
        return tuple(self.dims[a] * self.spacing[a] for a in range(3))

    def flat_values(self) -> np.ndarray:
        """Values in x-fastest order, as stored in RAW files."""
        return np.ascontiguousarray(self.values.transpose(2, 1, 0)).reshape(-1)


@dataclass(frozen=True, slots=True)
class VolumeMeta:
    """Sidecar descriptor for a RAW scalar file."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    dtype: str  # "u8" | "f32"

    def element_size(self) -> int:
        if self.dtype == "u8":
            return 1
        if self.dtype == "f32":
            return 4
        raise UnsupportedFormatError(f"unsupported dtype {self.dtype!r}")


def save_meta(meta: VolumeMeta, path) -> None:
    pairs = {
        "dims": " ".join(str(d) for d in meta.dims),
        "spacing": " ".join(repr(s) for s in meta.spacing),
        "origin": " ".join(repr(o) for o in meta.origin),
        "dtype": meta.dtype,
    }
    Path(path).write_text(textio.format_kv_file(pairs))


def load_meta(path) -> VolumeMeta:
    kv = textio.parse_kv_file(Path(path).read_text())
    try:
        dims = tuple(int(x) for x in kv["dims"].split())
        spacing = tuple(float(x) for x in kv["spacing"].split())
        origin = tuple(float(x) for x in kv.get("origin", "0 0 0").split())
        dtype = kv["dtype"]
    except KeyError as e:
        raise VolumeError(f"{path}: missing metadata key {e}") from e
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise VolumeError(f"{path}: dims/spacing/origin must have 3 components")
    return VolumeMeta(dims, spacing, origin, dtype)


def load_raw(data_path, meta: VolumeMeta) -> VolumeGrid:
    """Load a tightly packed x-fastest RAW scalar file described by `meta`.

    u8 values are rescaled by 1/255; f32 values are clamped to [0, 1].
    """
    nx, ny, nz = meta.dims
    esize = meta.element_size()
    expected = nx * ny * nz * esize
    actual = os.path.getsize(data_path)
    if actual != expected:
        raise SizeMismatchError(data_path, expected, actual)
    raw = np.fromfile(data_path, dtype=np.uint8 if meta.dtype == "u8" else "<f4")
    if meta.dtype == "u8":
        flat = raw.astype(np.float64) / 255.0
    else:
        flat = np.clip(raw.astype(np.float64), 0.0, 1.0)
    return VolumeGrid(meta.dims, meta.spacing, meta.origin, flat)


def save_raw(grid: VolumeGrid, data_path, meta_path=None, dtype: str = "u8") -> VolumeMeta:
    """Write `grid` as a RAW file (+ sidecar when `meta_path` given)."""
    flat = grid.flat_values()
    if dtype == "u8":
        np.floor(flat * 255.0 + 0.5).astype(np.uint8).tofile(data_path)
    elif dtype == "f32":
        flat.astype("<f4").tofile(data_path)
    else:
        raise UnsupportedFormatError(f"unsupported dtype {dtype!r}")
    meta = VolumeMeta(grid.dims, grid.spacing, grid.origin, dtype)
    if meta_path is not None:
        save_meta(meta, meta_path)
    return meta


def sample_trilinear(grid: VolumeGrid, p: Vec3) -> float:
    """Trilinear interpolation at world point `p`; 0.0 outside the
    voxel-center bounding box."""
    nx, ny, nz = grid.dims
    gx = (p[0] - grid.origin[0]) / grid.spacing[0]
    gy = (p[1] - grid.origin[1]) / grid.spacing[1]
    gz = (p[2] - grid.origin[2]) / grid.spacing[2]
    if gx < 0.0 or gy < 0.0 or gz < 0.0 or gx > nx - 1 or gy > ny - 1 or gz > nz - 1:
        return 0.0
    i0 = min(int(gx), nx - 2)
    j0 = min(int(gy), ny - 2)
    k0 = min(int(gz), nz - 2)
    fx = gx - i0
    fy = gy - j0
    fz = gz - k0
    v = grid.values
    c00 = v[i0, j0, k0] * (1 - fx) + v[i0 + 1, j0, k0] * fx
    c10 = v[i0, j0 + 1, k0] * (1 - fx) + v[i0 + 1, j0 + 1, k0] * fx
    c01 = v[i0, j0, k0 + 1] * (1 - fx) + v[i0 + 1, j0, k0 + 1] * fx
    c11 = v[i0, j0 + 1, k0 + 1] * (1 - fx) + v[i0 + 1, j0 + 1, k0 + 1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return float(c0 * (1 - fz) + c1 * fz)


def gradient_central(grid: VolumeGrid, p: Vec3) -> Vec3:
    """Central-difference gradient at `p` with per-axis step h = spacing."""
    out = []
    for a in range(3):
        h = grid.spacing[a]
        hi = list(p)
        lo = list(p)
        hi[a] += h
        lo[a] -= h
        out.append(
            (sample_trilinear(grid, tuple(hi)) - sample_trilinear(grid, tuple(lo)))
            / (2.0 * h)
        )
    return (out[0], out[1], out[2])


def gradient_magnitude(grid: VolumeGrid, p: Vec3) -> float:
    g = gradient_central(grid, p)
    return math.sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])


def voxel_gradient_magnitudes(grid: VolumeGrid) -> np.ndarray:
    """Gradient magnitude at every voxel center, for the derivative effect.

    Central differences in the interior (matching `gradient_central` at
    interior voxel centers exactly), one-sided at the grid faces: treating
    the exterior as zero there would wrap the whole dataset in an artificial
    high-gradient shell that drowns out interior structure.
    """
    gx, gy, gz = np.gradient(grid.values, *grid.spacing)
    return np.sqrt(gx * gx + gy * gy + gz * gz)


def gradient_percentile(grid: VolumeGrid, q: float = 95.0) -> float:
    """Percentile of interior voxel-center gradient magnitudes (the default
    normalizer for the derivative effect)."""
    mags = voxel_gradient_magnitudes(grid)[1:-1, 1:-1, 1:-1]
    return float(np.percentile(mags, q))


def gradient_magnitude_grid(grid: VolumeGrid, g_max: float) -> VolumeGrid:
    """Derived grid of |gradient| / g_max, clipped to [0, 1].

    Rendering samples this precomputed field trilinearly instead of
    re-deriving gradients per sample; it agrees with `gradient_central`
    at every voxel center.
    """
    if g_max <= 0.0:
        raise VolumeError(f"g_max must be positive, got {g_max}")
    mags = voxel_gradient_magnitudes(grid)
    np.clip(mags / g_max, 0.0, 1.0, out=mags)
    return VolumeGrid(grid.dims, grid.spacing, grid.origin, mags)


def downsample(grid: VolumeGrid, factors: tuple[int, int, int]) -> VolumeGrid:
    """Box-filter mean over factor blocks; spacing scales by the factor and
    the origin shifts to the new block centers."""
    fx, fy, fz = (int(f) for f in factors)
    if fx < 1 or fy < 1 or fz < 1:
        raise VolumeError(f"factors must be >= 1, got {factors}")
    nx, ny, nz = grid.dims
    if nx % fx or ny % fy or nz % fz:
        raise VolumeError(
            f"dims {grid.dims} not divisible by factors {(fx, fy, fz)}"
        )
    v = grid.values.reshape(nx // fx, fx, ny // fy, fy, nz // fz, fz)
    mean = v.mean(axis=(1, 3, 5))
    spacing = (grid.spacing[0] * fx, grid.spacing[1] * fy, grid.spacing[2] * fz)
    origin = tuple(
        grid.origin[a] + 0.5 * (f - 1) * grid.spacing[a]
        for a, f in enumerate((fx, fy, fz))
    )
    return VolumeGrid((nx // fx, ny // fy, nz // fz), spacing, origin, mean)


# --- synthetic phantom -----------------------------------------------------


@dataclass(frozen=True, slots=True)
class WreckSpec:
    """Ellipsoidal inclusion, everything in unit-cube fractions of the grid."""

    center: tuple[float, float, float] = (0.5, 0.5, 0.62)
    semi_axes: tuple[float, float, float] = (0.18, 0.06, 0.025)
    delta: float = 0.02


@dataclass(frozen=True, slots=True)
class PhantomSpec:
    """Layered material field with an optional buried ellipsoid.

    ``layers`` are (z-fraction upper boundary, value) pairs with strictly
    increasing boundaries ending at 1.0; steps between adjacent layer values
    are cosine-smoothed over a band of `band_voxels` voxels.  A wreck adds a
    constant offset inside its ellipsoid: small enough to hide under a soft
    opacity transfer function, sharp enough to leave a gradient shell.
    """

    dims: tuple[int, int, int] = (256, 128, 128)
    extent: tuple[float, float, float] = (1.0, 0.5, 0.5)
    layers: tuple[tuple[float, float], ...] = (
        (0.35, 0.15),  # water
        (0.55, 0.45),  # sediment
        (0.75, 0.65),  # seabed
        (1.0, 0.85),   # bedrock
    )
    wreck: WreckSpec | None = WreckSpec()
    band_voxels: float = 4.0

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) < 2 for d in self.dims):
            raise VolumeError(f"dims must be three integers >= 2, got {self.dims}")
        if any(e <= 0 for e in self.extent):
            raise VolumeError("extent components must be positive")
        fracs = [b for b, _ in self.layers]
        vals = [v for _, v in self.layers]
        if not fracs or fracs != sorted(set(fracs)):
            raise VolumeError("layer boundaries must be strictly increasing")
        if fracs[-1] != 1.0 or any(not (0.0 < b <= 1.0) for b in fracs):
            raise VolumeError("layer boundaries must lie in (0,1] and end at 1.0")
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise VolumeError("layer values must lie in [0,1]")
        if self.band_voxels < 0:
            raise VolumeError("band_voxels must be >= 0")
        if self.wreck is not None:
            c, s = self.wreck.center, self.wreck.semi_axes
            if any(sa <= 0 for sa in s):
                raise VolumeError("wreck semi-axes must be positive")
            if any(c[a] - s[a] < 0.0 or c[a] + s[a] > 1.0 for a in range(3)):
                raise VolumeError("wreck ellipsoid must fit inside the unit cube")
            base = self._layer_value_at(self.wreck.center[2])
            if not (0.0 <= base + self.wreck.delta <= 1.0):
                raise VolumeError("layer value + wreck delta must stay in [0,1]")

    def _layer_value_at(self, zfrac: float) -> float:
        for b, v in self.layers:
            if zfrac < b:
                return v
        return self.layers[-1][1]

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(self.extent[a] / self.dims[a] for a in range(3))

    @property
    def origin(self) -> tuple[float, float, float]:
        # volume centered on the world origin, voxel centers half a step in
        return tuple(-0.5 * self.extent[a] + 0.5 * self.spacing[a] for a in range(3))


def default_phantom_spec() -> PhantomSpec:
    return PhantomSpec()


def save_phantom_spec(spec: PhantomSpec, path) -> None:
    pairs = {
        "dims": " ".join(str(d) for d in spec.dims),
        "extent": " ".join(repr(e) for e in spec.extent),
        "layers": " ".join(f"{repr(b)}:{repr(v)}" for b, v in spec.layers),
        "band_voxels": repr(spec.band_voxels),
    }
    if spec.wreck is not None:
        pairs["wreck_center"] = " ".join(repr(c) for c in spec.wreck.center)
        pairs["wreck_semi"] = " ".join(repr(s) for s in spec.wreck.semi_axes)
        pairs["wreck_delta"] = repr(spec.wreck.delta)
    Path(path).write_text(textio.format_kv_file(pairs))


def load_phantom_spec(path) -> PhantomSpec:
    kv = textio.parse_kv_file(Path(path).read_text())
    kwargs = {}
    if "dims" in kv:
        kwargs["dims"] = tuple(int(x) for x in kv["dims"].split())
    if "extent" in kv:
        kwargs["extent"] = tuple(float(x) for x in kv["extent"].split())
    if "layers" in kv:
        layers = []
        for tok in kv["layers"].split():
            b, _, v = tok.partition(":")
            layers.append((float(b), float(v)))
        kwargs["layers"] = tuple(layers)
    if "band_voxels" in kv:
        kwargs["band_voxels"] = float(kv["band_voxels"])
    if "wreck_center" in kv:
        kwargs["wreck"] = WreckSpec(
            tuple(float(x) for x in kv["wreck_center"].split()),
            tuple(float(x) for x in kv["wreck_semi"].split()),
            float(kv["wreck_delta"]),
        )
    elif kv.get("wreck", "") in ("none", "0"):
        kwargs["wreck"] = None
    elif "wreck_delta" in kv or "wreck_semi" in kv:
        raise VolumeError(f"{path}: wreck_center required with other wreck keys")
    else:
        kwargs["wreck"] = None if "layers" in kv else WreckSpec()
    return PhantomSpec(**kwargs)


def layer_profile(spec: PhantomSpec, zfracs: np.ndarray) -> np.ndarray:
    """Layered base value at fractional depths, cosine-smoothed across each
    interior boundary over band_voxels voxels."""
    nz = spec.dims[2]
    half_band = 0.5 * spec.band_voxels / nz
    bounds = [b for b, _ in spec.layers]
    vals = [v for _, v in spec.layers]
    # piecewise-constant base
    idx = np.searchsorted(np.asarray(bounds), zfracs, side="right")
    idx = np.minimum(idx, len(vals) - 1)
    out = np.asarray(vals, dtype=np.float64)[idx]
    if half_band > 0.0:
        for i in range(len(bounds) - 1):  # final boundary (1.0) has no far side
            b = bounds[i]
            lo, hi = vals[i], vals[i + 1]
            m = np.abs(zfracs - b) < half_band
            if not np.any(m):
                continue
            t = (zfracs[m] - (b - half_band)) / (2.0 * half_band)
            out[m] = lo + (hi - lo) * (0.5 - 0.5 * np.cos(np.pi * t))
    return out


def generate_phantom(spec: PhantomSpec) -> VolumeGrid:
    """Deterministic synthetic volume; identical spec, identical bits."""
    nx, ny, nz = spec.dims
    zf = (np.arange(nz, dtype=np.float64) + 0.5) / nz
    profile = layer_profile(spec, zf)
    values = np.broadcast_to(profile[None, None, :], (nx, ny, nz)).copy()
    if spec.wreck is not None:
        xf = (np.arange(nx, dtype=np.float64) + 0.5) / nx
        yf = (np.arange(ny, dtype=np.float64) + 0.5) / ny
        c, s = spec.wreck.center, spec.wreck.semi_axes
        dx2 = ((xf - c[0]) / s[0]) ** 2
        dy2 = ((yf - c[1]) / s[1]) ** 2
        dz2 = ((zf - c[2]) / s[2]) ** 2
        inside = (
            dx2[:, None, None] + dy2[None, :, None] + dz2[None, None, :]
        ) <= 1.0
        values[inside] += spec.wreck.delta
    return VolumeGrid(spec.dims, spec.spacing, spec.origin, values)
