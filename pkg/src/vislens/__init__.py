"""Graspable disc lenses over volumetric data, headless.

The engine renders a scalar volume with per-pixel lens effects, mutates the
scene only through a deterministic input-event reducer, and replays scripted
sessions bit-for-bit.  A websocket server streams frames to the browser
cockpit in ``frontend/``.
"""

from vislens.volume import VolumeGrid, PhantomSpec, generate_phantom, default_phantom_spec
from vislens.lens import Lens, EffectDescriptor, FieldTransform, Integrator
from vislens.geometry import Pose, Ray
from vislens.scene import SceneState

__all__ = [
    "VolumeGrid",
    "PhantomSpec",
    "generate_phantom",
    "default_phantom_spec",
    "Lens",
    "EffectDescriptor",
    "FieldTransform",
    "Integrator",
    "Pose",
    "Ray",
    "SceneState",
]

__version__ = "0.1.0"
