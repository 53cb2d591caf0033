"""Scene state: the volume under exploration, the lens set, head pose, and
menu/proxy bookkeeping.

A SceneState is an immutable snapshot; only the interaction reducer derives
new ones.  Snapshots serialize to record lines so replay runs can be
compared byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from vislens import lens as lens_mod
from vislens import textio
from vislens.geometry import IDENTITY_POSE, Pose, Vec3, qnorm
from vislens.lens import Lens
from vislens.volume import VolumeGrid


class SceneError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class MenuState:
    visible: bool = False
    page: int = 0
    anchor: Pose = IDENTITY_POSE


@dataclass(frozen=True, slots=True)
class ProxyBinding:
    """Links a near-the-user proxy lens to the remote lens it controls."""

    proxy_id: int
    remote_id: int
    gain: float
    spawn_pose: Pose

    def __post_init__(self):
        if self.gain <= 0.0:
            raise SceneError(f"proxy gain must be positive, got {self.gain}")


@dataclass(frozen=True, eq=False)
class SceneState:
    volume: Optional[VolumeGrid] = None
    volume_source: str = "none"
    lenses: tuple[Lens, ...] = ()
    head: Pose = IDENTITY_POSE
    menu: MenuState = MenuState()
    proxies: tuple[ProxyBinding, ...] = ()
    next_id: int = 1
    time_ms: int = -1

    def __post_init__(self):
        object.__setattr__(
            self, "lenses", tuple(sorted(self.lenses, key=lambda l: l.id))
        )

    def lens_by_id(self, lens_id: int) -> Optional[Lens]:
        for l in self.lenses:
            if l.id == lens_id:
                return l
        return None

    def binding_for_proxy(self, proxy_id: int) -> Optional[ProxyBinding]:
        for b in self.proxies:
            if b.proxy_id == proxy_id:
                return b
        return None

    def binding_for_remote(self, remote_id: int) -> Optional[ProxyBinding]:
        for b in self.proxies:
            if b.remote_id == remote_id:
                return b
        return None

    def with_lens(self, lens: Lens) -> "SceneState":
        """Insert or replace the lens with this id."""
        rest = tuple(l for l in self.lenses if l.id != lens.id)
        return replace(self, lenses=rest + (lens,))

    def without_lens(self, lens_id: int) -> "SceneState":
        return replace(self, lenses=tuple(l for l in self.lenses if l.id != lens_id))

    def allocate_id(self) -> tuple["SceneState", int]:
        return replace(self, next_id=self.next_id + 1), self.next_id


def validate_scene(scene: SceneState) -> None:
    """Cheap invariant sweep; each contained type already validates itself on
    construction, this checks the cross-object rules."""
    ids = [l.id for l in scene.lenses]
    if len(ids) != len(set(ids)):
        raise SceneError(f"duplicate lens ids: {ids}")
    if ids != sorted(ids):
        raise SceneError("lens tuple not sorted by id")
    if any(l.id >= scene.next_id for l in scene.lenses):
        raise SceneError("next_id collides with an existing lens id")
    for l in scene.lenses:
        if not (lens_mod.RADIUS_MIN <= l.radius <= lens_mod.RADIUS_MAX):
            raise SceneError(f"lens {l.id} radius {l.radius} out of bounds")
        if abs(qnorm(l.pose.orientation) - 1.0) > 1e-6:
            raise SceneError(f"lens {l.id} orientation not unit")
        if len(l.stack) == 1:
            raise SceneError(f"lens {l.id} has a singleton stack")
    known = set(ids)
    seen_proxies = set()
    seen_remotes = set()
    for b in scene.proxies:
        if b.proxy_id not in known or b.remote_id not in known:
            raise SceneError("proxy binding references a missing lens")
        if b.proxy_id in seen_proxies or b.remote_id in seen_remotes:
            raise SceneError("lens appears in more than one proxy binding")
        seen_proxies.add(b.proxy_id)
        seen_remotes.add(b.remote_id)
    if scene.menu.page < 0:
        raise SceneError("menu page must be >= 0")


# --- serialization ----------------------------------------------------------


def format_pose(p: Pose) -> tuple:
    return p.position + p.orientation


def parse_pose(raw: str) -> Pose:
    vals = textio.parse_floats(raw, 7)
    return Pose(vals[0:3], vals[3:7])


def serialize_scene(scene: SceneState) -> str:
    """Deterministic text form; identical scenes produce identical bytes."""
    lines = [
        textio.format_record(
            "scene",
            {
                "version": 1,
                "source": scene.volume_source,
                "time_ms": scene.time_ms,
                "next_id": scene.next_id,
            },
        ),
        textio.format_record("head", {"pose": format_pose(scene.head)}),
        textio.format_record(
            "menu",
            {
                "visible": scene.menu.visible,
                "page": scene.menu.page,
                "anchor": format_pose(scene.menu.anchor),
            },
        ),
    ]
    for l in scene.lenses:
        fields = {
            "id": l.id,
            "pose": format_pose(l.pose),
            "radius": l.radius,
            "ring": l.ring_width,
            "front": lens_mod.format_effect(l.front_effect),
            "back": lens_mod.format_effect(l.back_effect),
        }
        if l.is_combined:
            fields["tree"] = lens_mod.format_tree(l.tree)
        if l.semi_transparent:
            fields["semi"] = True
        if l.spawn_ms is not None:
            fields["spawn"] = l.spawn_ms
        lines.append(textio.format_record("lens", fields))
    for b in scene.proxies:
        lines.append(
            textio.format_record(
                "proxy",
                {
                    "proxy": b.proxy_id,
                    "remote": b.remote_id,
                    "gain": b.gain,
                    "spawn_pose": format_pose(b.spawn_pose),
                },
            )
        )
    return "\n".join(lines) + "\n"


def parse_scene(text: str, volume: Optional[VolumeGrid] = None) -> SceneState:
    """Rebuild a scene from its text form.

    The voxel data itself is not embedded; pass the grid resolved from the
    recorded source separately.
    """
    source = "none"
    time_ms = -1
    next_id = 1
    head = IDENTITY_POSE
    menu = MenuState()
    lenses: list[Lens] = []
    proxies: list[ProxyBinding] = []
    for ln, line in textio.iter_record_lines(text):
        kind, f = textio.parse_record(line)
        try:
            if kind == "scene":
                source = f.get("source", "none")
                time_ms = int(f.get("time_ms", -1))
                next_id = int(f.get("next_id", 1))
            elif kind == "head":
                head = parse_pose(f["pose"])
            elif kind == "menu":
                menu = MenuState(
                    textio.parse_bool(f["visible"]),
                    int(f["page"]),
                    parse_pose(f["anchor"]),
                )
            elif kind == "lens":
                tree = lens_mod.parse_tree(f["tree"]) if "tree" in f else None
                lenses.append(
                    Lens(
                        id=int(f["id"]),
                        pose=parse_pose(f["pose"]),
                        radius=float(f["radius"]),
                        ring_width=float(f.get("ring", 0.02)),
                        front_effect=lens_mod.parse_effect(f["front"]),
                        back_effect=lens_mod.parse_effect(f["back"]),
                        stack=lens_mod.flatten_tree(tree) if tree is not None else (),
                        tree=tree,
                        semi_transparent=textio.parse_bool(f.get("semi", "0")),
                        spawn_ms=int(f["spawn"]) if "spawn" in f else None,
                    )
                )
            elif kind == "proxy":
                proxies.append(
                    ProxyBinding(
                        int(f["proxy"]),
                        int(f["remote"]),
                        float(f["gain"]),
                        parse_pose(f["spawn_pose"]),
                    )
                )
            else:
                raise SceneError(f"unknown scene record kind {kind!r}")
        except (KeyError, ValueError) as e:
            raise SceneError(f"scene line {ln}: {e}") from e
    scene = SceneState(
        volume=volume,
        volume_source=source,
        lenses=tuple(lenses),
        head=head,
        menu=menu,
        proxies=tuple(proxies),
        next_id=next_id,
        time_ms=time_ms,
    )
    validate_scene(scene)
    return scene
