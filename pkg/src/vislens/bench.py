"""Frame-time benchmark: default phantom, 320x240, DVR plus one MIP lens.

Compares the numba kernels against the pure-numpy fallback and serial
against parallel pixel workers; `vislens bench` prints one line per
configuration.
"""

from __future__ import annotations

import os
import statistics
import time
from dataclasses import dataclass

from vislens import kernels
from vislens.geometry import Pose, look_at_pose, quat_from_axis_angle
from vislens.lens import MIP, Lens
from vislens.render import Camera, render_frame
from vislens.scene import SceneState
from vislens.volume import default_phantom_spec, generate_phantom
import math


@dataclass(frozen=True, slots=True)
class BenchResult:
    backend: str
    workers: int
    frames: int
    ms_min: float
    ms_mean: float
    ms_max: float

    def line(self) -> str:
        return (
            f"backend={self.backend} workers={self.workers} frames={self.frames} "
            f"ms/frame min={self.ms_min:.1f} mean={self.ms_mean:.1f} max={self.ms_max:.1f}"
        )


def bench_scene() -> tuple[SceneState, Camera]:
    grid = generate_phantom(default_phantom_spec())
    lens = Lens(
        id=1,
        pose=Pose((0.0, 0.43, 0.06), quat_from_axis_angle((1.0, 0.0, 0.0), -0.5 * math.pi)),
        radius=0.15,
        front_effect=MIP,
        back_effect=MIP,
    )
    scene = SceneState(volume=grid, volume_source="phantom:default", lenses=(lens,), next_id=2)
    camera = Camera(look_at_pose((0.0, 0.93, 0.06), (0.0, 0.0, 0.06), up=(0.0, 0.0, 1.0)))
    return scene, camera


def run_bench(
    frames: int = 5,
    backends: tuple[str, ...] = ("numba",),
    workers: tuple[int, ...] = (1, max(1, os.cpu_count() or 1)),
    resolution: tuple[int, int] = (320, 240),
) -> list[BenchResult]:
    scene, camera = bench_scene()
    camera = Camera(camera.pose, camera.fov_deg, resolution)
    results = []
    for backend in backends:
        if backend not in kernels.available_backends():
            continue
        kernels.warm_up(backend)
        for w in sorted(set(workers)):
            if backend == "numpy" and w > 1:
                continue  # the fallback has no worker pool
            render_frame(scene, camera, backend=backend, workers=w)  # warm caches
            times = []
            for _ in range(frames):
                t0 = time.perf_counter()
                render_frame(scene, camera, backend=backend, workers=w)
                times.append((time.perf_counter() - t0) * 1000.0)
            results.append(
                BenchResult(
                    backend, w, frames,
                    min(times), statistics.fmean(times), max(times),
                )
            )
    return results
