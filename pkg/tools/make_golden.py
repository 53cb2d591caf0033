"""Regenerate the committed golden images from the reference renderer.

Run from the repository root:  python tools/make_golden.py
"""

import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from reference_render import ref_dvr_frame  # noqa: E402

from vislens.geometry import look_at_pose  # noqa: E402
from vislens.render import TransferFunction  # noqa: E402
from vislens.volume import default_phantom_spec, generate_phantom  # noqa: E402


def main() -> None:
    grid = generate_phantom(default_phantom_spec())
    pose = look_at_pose((0.0, 0.0, -0.7), (0.0, 0.0, 0.0), up=(0, 1, 0))
    tf = TransferFunction()
    step = 0.5 * min(grid.spacing)
    img = ref_dvr_frame(
        grid, pose.position,
        [np.asarray(pose.x_axis()), np.asarray(pose.y_axis()), np.asarray(pose.z_axis())],
        60.0, 96, 72, tf.points, step / 4,
    )
    out = ROOT / "tests" / "data" / "golden_topdown.ppm"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (96, 72))
        f.write(img.tobytes())
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
