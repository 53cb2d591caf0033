"""Programmatic builders for the bundled session scripts.

The committed ``scripts/wreck_reveal.session`` file is generated from
`wreck_reveal_script` (tools/make_scripts.py rewrites it); tests regenerate
and diff so the file and the builder cannot drift apart.
"""

from __future__ import annotations

import math

from vislens.geometry import Pose, look_at_pose, quat_from_axis_angle, vadd
from vislens.interaction import ButtonEdge, HandId, HandState, InputEvent
from vislens.session import Assert, SceneSource, SessionScript, Snapshot

# Default phantom geometry: extent (1.0, 0.5, 0.5) centered on the origin;
# the buried ellipsoid sits at world (0, 0, 0.06).
WRECK_WORLD = (0.0, 0.0, 0.06)
HEAD_EYE = (0.0, 0.93, 0.06)

# lens target in front of the volume, disc normal facing the viewer (+Y)
_LENS_ORIENT = quat_from_axis_angle((1.0, 0.0, 0.0), -0.5 * math.pi)
PLACE_POS = (0.0, 0.35, 0.06)
COVER_POS = (0.0, 0.43, 0.06)

_ND_HAND = Pose((-0.35, 0.7, -0.05))
_MENU_ANCHOR = vadd(_ND_HAND.position, (0.0, 0.0, 0.15))

_SECTION_R = 0.095  # mid-radius of the pick annulus


def head_pose() -> Pose:
    return look_at_pose(HEAD_EYE, WRECK_WORLD, up=(0.0, 0.0, 1.0))


def _section_point(index: int):
    ang = (index + 0.5) * (2.0 * math.pi / 6.0)
    return vadd(_MENU_ANCHOR, (_SECTION_R * math.cos(ang), _SECTION_R * math.sin(ang), 0.0))


def _event(t, dom_pos=None, dom_orient=None, dg=False, dt=False, dm=ButtonEdge.NONE,
           nm=ButtonEdge.NONE):
    dom_pose = Pose(dom_pos or (0.3, 0.8, -0.2), dom_orient or (1.0, 0.0, 0.0, 0.0))
    return InputEvent(
        timestamp=t,
        head=head_pose(),
        hands=(
            HandState(HandId.DOMINANT, dom_pose, grab_active=dg, trigger_active=dt,
                      menu_button=dm),
            HandState(HandId.NON_DOMINANT, _ND_HAND, menu_button=nm),
        ),
    )


def wreck_reveal_script() -> SessionScript:
    """Create a MIP lens and a derivative lens, snap them together, and park
    the combined lens over the buried ellipsoid."""
    records = []
    t = [0]

    def emit(**kw):
        t[0] += 10
        records.append(_event(t[0], **kw))

    emit()  # settle head pose
    records.append(Snapshot(t[0] + 5, "plain"))
    t[0] += 10

    # toolbox: MIP lens (template 1), grabbed from the menu center
    emit(nm=ButtonEdge.PRESSED)
    emit(dom_pos=_section_point(1), dt=True)
    emit(dom_pos=_section_point(1))
    emit(dom_pos=_MENU_ANCHOR, dg=True)
    for frac in (0.25, 0.5, 0.75, 1.0):
        pos = tuple(a + (b - a) * frac for a, b in zip(_MENU_ANCHOR, PLACE_POS))
        emit(dom_pos=pos, dom_orient=_LENS_ORIENT, dg=True)
    emit(dom_pos=PLACE_POS, dom_orient=_LENS_ORIENT)  # release in place
    records.append(Assert(t[0] + 5, "lens_count", None, "1"))
    t[0] += 10

    # toolbox: derivative lens (template 2), dragged onto the first
    emit(dom_pos=_section_point(2), dt=True)
    emit(dom_pos=_section_point(2))
    emit(dom_pos=_MENU_ANCHOR, dg=True)
    records.append(Assert(t[0] + 5, "lens_count", None, "2"))
    t[0] += 10
    for dy in (0.3, 0.2, 0.1, 0.05, 0.03, 0.012):
        pos = (PLACE_POS[0], PLACE_POS[1] + dy, PLACE_POS[2])
        emit(dom_pos=pos, dom_orient=_LENS_ORIENT, dg=True)
    records.append(Assert(t[0] + 5, "lens_count", None, "1"))
    records.append(Assert(t[0] + 6, "lens_stack", 2, "t:gradmag|i:mip"))
    t[0] += 10

    # close the menu, park the combined lens over the wreck, let go
    emit(dom_pos=(PLACE_POS[0], PLACE_POS[1] + 0.012, PLACE_POS[2]),
         dom_orient=_LENS_ORIENT, dg=True, nm=ButtonEdge.PRESSED)
    for frac in (0.5, 1.0):
        pos = tuple(a + (b - a) * frac for a, b in zip(PLACE_POS, COVER_POS))
        emit(dom_pos=pos, dom_orient=_LENS_ORIENT, dg=True)
    emit(dom_pos=COVER_POS, dom_orient=_LENS_ORIENT)

    records.append(Assert(1000, "lens_count", None, "1"))
    records.append(Assert(1001, "lens_stack", 2, "t:gradmag|i:mip"))
    records.append(Assert(1002, "mode", None, "idle"))
    records.append(Snapshot(1010, "reveal"))

    return SessionScript(
        source=SceneSource("phantom", spec="default"),
        camera_fov=60.0,
        camera_resolution=(320, 240),
        timeline=tuple(records),
    )
