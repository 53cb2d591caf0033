"""The deterministic event reducer: every gesture in one pure transition.

``step(scene, mode, event)`` consumes one timestamped head+hands record and
returns the next scene, the next interaction mode, and any feedback events.
Nothing else mutates a scene.  Invalid gestures degrade to a no-op plus a
reject signal, so every (mode, event) pair is total.

Per-event processing order (fixed, so replays are reproducible):
head/time update, menu anchor tracking, menu-button edges, grab edges,
held-lens motion (with snap detection), trigger edges, previous-button
bookkeeping.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

from vislens.config import DEFAULT_CONFIG, InteractionConfig
from vislens.geometry import (
    Pose,
    Ray,
    Vec3,
    qconj,
    qmul,
    qnormalize,
    vadd,
    vdist,
    vdot,
    vscale,
    vsub,
)
from vislens.lens import (
    DEFAULT_TEMPLATES,
    EffectTemplate,
    Integrator,
    Lens,
    combine,
    overlap_near_maximal,
    ray_disc_hit,
    split,
)
from vislens.scene import MenuState, ProxyBinding, SceneState


class HandId(enum.Enum):
    DOMINANT = "dominant"
    NON_DOMINANT = "non_dominant"


class ButtonEdge(enum.Enum):
    NONE = "none"
    PRESSED = "pressed"
    RELEASED = "released"


@dataclass(frozen=True, slots=True)
class HandState:
    hand: HandId
    pose: Pose = Pose()
    grab_active: bool = False
    trigger_active: bool = False
    menu_button: ButtonEdge = ButtonEdge.NONE


@dataclass(frozen=True, slots=True)
class InputEvent:
    timestamp: int  # ms, strictly increasing per session
    head: Pose = Pose()
    hands: tuple[HandState, HandState] = (
        HandState(HandId.DOMINANT),
        HandState(HandId.NON_DOMINANT),
    )

    def __post_init__(self):
        kinds = {h.hand for h in self.hands}
        if len(self.hands) != 2 or kinds != {HandId.DOMINANT, HandId.NON_DOMINANT}:
            raise ValueError("event needs exactly one state per hand")

    def hand(self, which: HandId) -> HandState:
        return self.hands[0] if self.hands[0].hand is which else self.hands[1]


@dataclass(frozen=True, slots=True)
class FeedbackEvent:
    kind: str  # haptic | audio | visual
    target: str  # "hand:dominant" | "lens:<id>"
    code: str  # grab, release, snap, reject, menu-pick, ...


@dataclass(frozen=True, slots=True)
class GrabData:
    lens_id: int
    hand: HandId
    offset: Pose  # lens pose in the hand frame, captured at grab time
    hand_pose: Pose
    lens_pose: Pose


@dataclass(frozen=True, slots=True)
class ResizeData:
    lens_id: int
    d0: float  # hand separation at gesture start
    r0: float  # radius at gesture start
    remote_r0: Optional[float] = None  # set when resizing a proxy
    return_proxy: bool = False


@dataclass(frozen=True, slots=True)
class PrevButtons:
    dom_grab: bool = False
    dom_trigger: bool = False
    nd_grab: bool = False
    nd_trigger: bool = False


@dataclass(frozen=True, slots=True)
class InteractionMode:
    """Current gesture: at most one of grab / resize / proxy grab is active;
    menu visibility is orthogonal."""

    grab: Optional[GrabData] = None
    resize: Optional[ResizeData] = None
    proxy_grab: Optional[GrabData] = None
    menu_visible: bool = False
    prev: PrevButtons = PrevButtons()

    def __post_init__(self):
        if sum(x is not None for x in (self.grab, self.resize, self.proxy_grab)) > 1:
            raise ValueError("conflicting interaction sub-modes")

    @property
    def kind(self) -> str:
        if self.resize is not None:
            return "two_hand_resize"
        if self.proxy_grab is not None:
            return "proxy_active"
        if self.grab is not None:
            return "grabbing"
        if self.menu_visible:
            return "menu_open"
        return "idle"


IDLE_MODE = InteractionMode()


class CreateLens(NamedTuple):
    template_index: int


class NextPage(NamedTuple):
    pass


class RemoveHeldLens(NamedTuple):
    pass


class CycleFrontEffect(NamedTuple):
    pass


class CycleBackEffect(NamedTuple):
    pass


class AdjustParam(NamedTuple):
    name: str
    delta: float


class Split(NamedTuple):
    pass


# --- pure gesture helpers ----------------------------------------------------


def disc_distance(lens: Lens, point: Vec3) -> float:
    """Distance from a point to the closest point of the disc (ring included)."""
    local = lens.pose.inverse().transform_point(point)
    rho = math.hypot(local[0], local[1])
    if rho <= lens.radius:
        return abs(local[2])
    return math.hypot(rho - lens.radius, local[2])


def grab_test(
    scene: SceneState, hand_pose: Pose, cfg: InteractionConfig = DEFAULT_CONFIG
) -> Optional[int]:
    """Nearest lens within grab reach of the hand; ties go to the smaller id."""
    best = None
    best_d = cfg.grab_distance
    for lens in scene.lenses:
        d = disc_distance(lens, hand_pose.position)
        if d < best_d or (d == best_d and best is None):
            best = lens.id
            best_d = d
    return best


def grabbed_update(lens: Lens, grab: GrabData, hand_pose: Pose) -> Lens:
    """Rigid attachment: the lens-in-hand pose captured at grab time is
    constant for the whole grab.  A hand exactly at its captured pose maps
    to the captured lens pose bit-for-bit."""
    if hand_pose == grab.hand_pose:
        return replace(lens, pose=grab.lens_pose)
    return replace(lens, pose=hand_pose.compose(grab.offset))


class GestureRejected(ValueError):
    pass


def resize_update(
    d0: float, r0: float, d: float, cfg: InteractionConfig = DEFAULT_CONFIG
) -> float:
    """Two-handed pinch: radius scales with the hand-separation ratio,
    clamped to the legal radius range."""
    if d0 <= cfg.resize_min_separation:
        raise GestureRejected(f"hand separation {d0} too small to resize")
    return min(max(r0 * (d / d0), cfg.radius_min), cfg.radius_max)


def menu_anchor(nd_pose: Pose, cfg: InteractionConfig = DEFAULT_CONFIG) -> Pose:
    return Pose(
        vadd(nd_pose.position, vscale(nd_pose.z_axis(), cfg.menu_offset)),
        nd_pose.orientation,
    )


def menu_page_count(n_templates: int, cfg: InteractionConfig = DEFAULT_CONFIG) -> int:
    return max(1, math.ceil(n_templates / cfg.menu_sections_per_page))


def menu_pick(
    menu: MenuState,
    press_point: Vec3,
    n_templates: int,
    cfg: InteractionConfig = DEFAULT_CONFIG,
):
    """Decode a trigger press against the radial layout: hub turns the page,
    a section creates its template, anything else is a no-op."""
    local = menu.anchor.inverse().transform_point(press_point)
    if abs(local[2]) > cfg.menu_plane_tolerance:
        return None
    rho = math.hypot(local[0], local[1])
    if rho <= cfg.menu_hub_radius:
        return NextPage()
    if rho > cfg.menu_radius:
        return None
    two_pi = 2.0 * math.pi
    ang = math.atan2(local[1], local[0]) % two_pi
    sect = min(
        int(ang / (two_pi / cfg.menu_sections_per_page)),
        cfg.menu_sections_per_page - 1,
    )
    idx = menu.page * cfg.menu_sections_per_page + sect
    if idx >= n_templates:
        return None
    return CreateLens(idx)


def menu_contains(
    menu: MenuState, point: Vec3, cfg: InteractionConfig = DEFAULT_CONFIG
) -> bool:
    local = menu.anchor.inverse().transform_point(point)
    if abs(local[2]) > cfg.menu_plane_tolerance:
        return False
    return math.hypot(local[0], local[1]) <= cfg.menu_radius


def menu_step(
    menu: MenuState,
    event: InputEvent,
    trigger_edge: bool,
    n_templates: int = len(DEFAULT_TEMPLATES),
    cfg: InteractionConfig = DEFAULT_CONFIG,
):
    """Anchor tracking plus pick decoding for one event (menu assumed
    visible).  Returns the updated menu and an optional command."""
    menu = replace(menu, anchor=menu_anchor(event.hand(HandId.NON_DOMINANT).pose, cfg))
    command = None
    if trigger_edge:
        command = menu_pick(
            menu, event.hand(HandId.DOMINANT).pose.position, n_templates, cfg
        )
        if isinstance(command, NextPage):
            menu = replace(
                menu, page=(menu.page + 1) % menu_page_count(n_templates, cfg)
            )
    return menu, command


_WIDGET_ANGLES = (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi)


def ring_widget_positions(lens: Lens) -> tuple[Vec3, Vec3, Vec3, Vec3]:
    out = []
    for ang in _WIDGET_ANGLES:
        local = (lens.radius * math.cos(ang), lens.radius * math.sin(ang), 0.0)
        out.append(lens.pose.transform_point(local))
    return tuple(out)


def ring_distance(lens: Lens, point: Vec3) -> float:
    """Distance from a point to the ring circle itself."""
    local = lens.pose.inverse().transform_point(point)
    rho = math.hypot(local[0], local[1])
    return math.hypot(rho - lens.radius, local[2])


def ring_control_step(
    lens: Lens,
    hand_pose: Pose,
    trigger_edge: bool,
    cfg: InteractionConfig = DEFAULT_CONFIG,
):
    """Widgets sit at 0/90/180/270 degrees on the ring and only react while
    a hand is close enough for them to be displayed.  The split widget only
    exists on combined lenses."""
    if not trigger_edge:
        return None
    if ring_distance(lens, hand_pose.position) > cfg.ring_control_distance:
        return None
    commands = (
        CycleFrontEffect(),
        CycleBackEffect(),
        AdjustParam("opacity_scale", 0.25),
        Split() if lens.is_combined else None,
    )
    best = None
    best_d = cfg.ring_widget_hit
    for pos, cmd in zip(ring_widget_positions(lens), commands):
        d = vdist(pos, hand_pose.position)
        if d <= best_d and cmd is not None:
            best = cmd
            best_d = d
    return best


def snap_check(
    scene: SceneState, held_id: int, cfg: InteractionConfig = DEFAULT_CONFIG
) -> Optional[int]:
    """Partner lens for a snap combination, if the held lens nearly
    coincides with one (closest center wins, ties by id).  Proxies neither
    snap nor get snapped onto."""
    held = scene.lens_by_id(held_id)
    if held is None or held.semi_transparent:
        return None
    best = None
    best_d = math.inf
    for other in scene.lenses:
        if other.id == held_id or other.semi_transparent:
            continue
        if not overlap_near_maximal(held, other, cfg):
            continue
        d = vdist(held.center(), other.center())
        if d < best_d:
            best = other.id
            best_d = d
    return best


def raycast_select(
    scene: SceneState,
    controller: Pose,
    cfg: InteractionConfig = DEFAULT_CONFIG,
    include_proxies: bool = False,
) -> Optional[int]:
    """Nearest disc hit along the controller's -Z pointing ray."""
    ray = Ray(controller.position, vscale(controller.z_axis(), -1.0))
    best = None
    best_t = cfg.raycast_range
    for lens in scene.lenses:
        if lens.semi_transparent and not include_proxies:
            continue
        hit = ray_disc_hit(lens, ray)
        if hit is not None and hit.t < best_t:
            best = lens.id
            best_t = hit.t
    return best


def spawn_proxy(
    scene: SceneState,
    remote_id: int,
    head: Pose,
    now_ms: int,
    cfg: InteractionConfig = DEFAULT_CONFIG,
) -> tuple[SceneState, ProxyBinding]:
    """Create the semi-transparent stand-in half a meter before the head.

    Translation gain is the remote's head distance over the spawn distance,
    so hand motion maps to comparable angular motion at the remote.
    """
    remote = scene.lens_by_id(remote_id)
    if remote is None:
        raise GestureRejected(f"lens {remote_id} does not exist")
    if scene.binding_for_remote(remote_id) is not None:
        raise GestureRejected(f"lens {remote_id} already has a proxy")
    pos = vadd(head.position, vscale(head.z_axis(), -cfg.proxy_spawn_distance))
    scene, proxy_id = scene.allocate_id()
    proxy = Lens(
        id=proxy_id,
        pose=Pose(pos, head.orientation),
        radius=cfg.proxy_display_radius,
        ring_width=cfg.ring_width,
        front_effect=remote.front_effect,
        back_effect=remote.back_effect,
        stack=remote.stack,
        tree=remote.tree,
        semi_transparent=True,
        spawn_ms=now_ms,
    )
    gain = max(vdist(remote.center(), head.position) / cfg.proxy_spawn_distance, 1e-9)
    binding = ProxyBinding(proxy_id, remote_id, gain, proxy.pose)
    scene = scene.with_lens(proxy)
    return replace(scene, proxies=scene.proxies + (binding,)), binding


def proxy_apply(
    scene: SceneState,
    binding: ProxyBinding,
    rotation_delta,
    translation_delta: Vec3,
) -> SceneState:
    """Map a proxy pose delta onto the remote lens: rotation 1:1, world-axis
    translation scaled by the stored gain."""
    remote = scene.lens_by_id(binding.remote_id)
    if remote is None:
        raise GestureRejected(f"remote lens {binding.remote_id} vanished")
    pose = Pose(
        vadd(remote.pose.position, vscale(translation_delta, binding.gain)),
        qnormalize(qmul(rotation_delta, remote.pose.orientation)),
    )
    return scene.with_lens(replace(remote, pose=pose))


# --- the reducer ---------------------------------------------------------------


def step(
    scene: SceneState,
    mode: InteractionMode,
    event: InputEvent,
    cfg: InteractionConfig = DEFAULT_CONFIG,
    templates: tuple[EffectTemplate, ...] = DEFAULT_TEMPLATES,
) -> tuple[SceneState, InteractionMode, tuple[FeedbackEvent, ...]]:
    """Advance the scene by one input event.  Pure: identical inputs yield
    identical outputs; lenses the event does not involve are untouched."""
    if event.timestamp <= scene.time_ms:
        raise ValueError(
            f"event timestamp {event.timestamp} not after scene time {scene.time_ms}"
        )
    feedback: list[FeedbackEvent] = []
    scene = replace(scene, head=event.head, time_ms=event.timestamp)
    dom = event.hand(HandId.DOMINANT)
    nd = event.hand(HandId.NON_DOMINANT)

    if scene.menu.visible:
        scene = replace(scene, menu=replace(scene.menu, anchor=menu_anchor(nd.pose, cfg)))

    # menu button: dismisses a held proxy, otherwise (non-dominant) toggles
    for hs in (dom, nd):
        if hs.menu_button is not ButtonEdge.PRESSED:
            continue
        if mode.proxy_grab is not None:
            scene, mode = _dismiss_proxy(scene, mode, feedback)
        elif hs.hand is HandId.NON_DOMINANT:
            visible = not scene.menu.visible
            menu = replace(scene.menu, visible=visible)
            if visible:
                menu = replace(menu, anchor=menu_anchor(nd.pose, cfg))
            scene = replace(scene, menu=menu)
            mode = replace(mode, menu_visible=visible)
            feedback.append(FeedbackEvent("audio", "hand:non_dominant",
                                          "menu-open" if visible else "menu-close"))

    # grab edges, dominant first for a fixed order
    for hs, was in ((dom, mode.prev.dom_grab), (nd, mode.prev.nd_grab)):
        if hs.grab_active and not was:
            scene, mode = _grab_rise(scene, mode, hs, dom, nd, cfg, feedback)
        elif was and not hs.grab_active:
            scene, mode = _grab_fall(scene, mode, hs, dom, nd, cfg, feedback)

    # motion of whatever is held
    if mode.grab is not None:
        scene, mode = _move_grabbed(scene, mode, event, dom, nd, cfg, feedback)
    elif mode.proxy_grab is not None:
        scene, mode = _move_proxy(scene, mode, event, dom, nd, cfg, feedback)
    elif mode.resize is not None:
        scene = _apply_resize(scene, mode.resize, dom, nd, cfg)

    # trigger edges
    if dom.trigger_active and not mode.prev.dom_trigger:
        scene, mode = _dominant_trigger(scene, mode, event, dom, cfg, templates, feedback)
    if nd.trigger_active and not mode.prev.nd_trigger:
        scene, mode = _hand_trigger_ring(scene, mode, nd, cfg, templates, feedback)

    mode = replace(
        mode,
        prev=PrevButtons(dom.grab_active, dom.trigger_active, nd.grab_active, nd.trigger_active),
    )
    return scene, mode, tuple(feedback)


def _hand_busy(mode: InteractionMode, hand: HandId) -> bool:
    if mode.resize is not None:
        return True
    for data in (mode.grab, mode.proxy_grab):
        if data is not None and data.hand is hand:
            return True
    return False


def _fb_hand(hand: HandId, code: str, kind: str = "haptic") -> FeedbackEvent:
    return FeedbackEvent(kind, f"hand:{hand.value}", code)


def _grab_rise(scene, mode, hs, dom, nd, cfg, feedback):
    if mode.resize is not None:
        return scene, mode
    held = mode.grab or mode.proxy_grab
    if held is not None:
        if hs.hand is held.hand:
            return scene, mode
        target = grab_test(scene, hs.pose, cfg)
        if target != held.lens_id:
            return scene, mode
        # second hand on the held lens: enter the two-handed resize
        d0 = vdist(dom.pose.position, nd.pose.position)
        if d0 <= cfg.resize_min_separation:
            feedback.append(_fb_hand(hs.hand, "reject"))
            return scene, mode
        lens = scene.lens_by_id(held.lens_id)
        remote_r0 = None
        is_proxy = mode.proxy_grab is not None
        if is_proxy:
            binding = scene.binding_for_proxy(held.lens_id)
            remote = scene.lens_by_id(binding.remote_id)
            remote_r0 = remote.radius
        mode = replace(
            mode,
            grab=None,
            proxy_grab=None,
            resize=ResizeData(held.lens_id, d0, lens.radius, remote_r0, is_proxy),
        )
        feedback.append(_fb_hand(hs.hand, "grab"))
        return scene, mode
    target = grab_test(scene, hs.pose, cfg)
    if target is None:
        return scene, mode
    lens = scene.lens_by_id(target)
    data = GrabData(
        lens_id=target,
        hand=hs.hand,
        offset=hs.pose.inverse().compose(lens.pose),
        hand_pose=hs.pose,
        lens_pose=lens.pose,
    )
    if lens.semi_transparent and scene.binding_for_proxy(target) is not None:
        mode = replace(mode, proxy_grab=data)
    else:
        mode = replace(mode, grab=data)
    feedback.append(_fb_hand(hs.hand, "grab"))
    return scene, mode


def _grab_fall(scene, mode, hs, dom, nd, cfg, feedback):
    if mode.resize is not None:
        data = mode.resize
        other = nd if hs.hand is HandId.DOMINANT else dom
        if other.grab_active:
            # one hand released: back to a plain hold with the other hand
            lens = scene.lens_by_id(data.lens_id)
            grab = GrabData(
                lens_id=data.lens_id,
                hand=other.hand,
                offset=other.pose.inverse().compose(lens.pose),
                hand_pose=other.pose,
                lens_pose=lens.pose,
            )
            if data.return_proxy:
                mode = replace(mode, resize=None, proxy_grab=grab)
            else:
                mode = replace(mode, resize=None, grab=grab)
        else:
            mode = replace(mode, resize=None)
            scene, mode = _release(scene, mode, data.lens_id, data.return_proxy, cfg, feedback)
        return scene, mode
    held = mode.grab or mode.proxy_grab
    if held is None or held.hand is not hs.hand:
        return scene, mode
    is_proxy = mode.proxy_grab is not None
    mode = replace(mode, grab=None, proxy_grab=None)
    return _release(scene, mode, held.lens_id, is_proxy, cfg, feedback)


def _release(scene, mode, lens_id, was_proxy, cfg, feedback):
    lens = scene.lens_by_id(lens_id)
    if lens is None:
        return scene, mode
    if not was_proxy and scene.menu.visible and menu_contains(scene.menu, lens.center(), cfg):
        # dropped back into the toolbox
        scene = scene.without_lens(lens_id)
        scene, mode = _prune_bindings(scene, mode, feedback)
        feedback.append(FeedbackEvent("visual", f"lens:{lens_id}", "remove"))
    else:
        feedback.append(FeedbackEvent("haptic", f"lens:{lens_id}", "release"))
    return scene, mode


def _move_grabbed(scene, mode, event, dom, nd, cfg, feedback):
    data = mode.grab
    lens = scene.lens_by_id(data.lens_id)
    hand = dom if data.hand is HandId.DOMINANT else nd
    moved = grabbed_update(lens, data, hand.pose)
    if moved.pose != lens.pose:
        scene = scene.with_lens(moved)
    partner_id = snap_check(scene, data.lens_id, cfg)
    if partner_id is not None:
        partner = scene.lens_by_id(partner_id)
        combined = combine(moved, partner, head_position=event.head.position, cfg=cfg)
        if combined is not None:
            scene = scene.without_lens(partner_id).with_lens(combined)
            scene, mode = _prune_bindings(scene, mode, feedback)
            feedback.append(FeedbackEvent("audio", f"lens:{combined.id}", "snap"))
            feedback.append(_fb_hand(data.hand, "snap"))
    return scene, mode


def _move_proxy(scene, mode, event, dom, nd, cfg, feedback):
    data = mode.proxy_grab
    proxy = scene.lens_by_id(data.lens_id)
    hand = dom if data.hand is HandId.DOMINANT else nd
    moved = grabbed_update(proxy, data, hand.pose)
    if moved.pose == proxy.pose:
        return scene, mode
    binding = scene.binding_for_proxy(data.lens_id)
    scene = scene.with_lens(moved)
    dq = qmul(moved.pose.orientation, qconj(proxy.pose.orientation))
    dp = vsub(moved.pose.position, proxy.pose.position)
    scene = proxy_apply(scene, binding, dq, dp)
    return scene, mode


def _apply_resize(scene, data: ResizeData, dom, nd, cfg):
    lens = scene.lens_by_id(data.lens_id)
    d = vdist(dom.pose.position, nd.pose.position)
    r = resize_update(data.d0, data.r0, d, cfg)
    if r != lens.radius:
        scene = scene.with_lens(replace(lens, radius=r))
    if data.remote_r0 is not None:
        binding = scene.binding_for_proxy(data.lens_id)
        if binding is not None:
            remote = scene.lens_by_id(binding.remote_id)
            rr = min(max(data.remote_r0 * (r / data.r0), cfg.radius_min), cfg.radius_max)
            if rr != remote.radius:
                scene = scene.with_lens(replace(remote, radius=rr))
    return scene


def _dominant_trigger(scene, mode, event, dom, cfg, templates, feedback):
    if scene.menu.visible and not _hand_busy(mode, HandId.DOMINANT):
        # while the menu is up, the dominant trigger belongs to it entirely
        command = menu_pick(scene.menu, dom.pose.position, len(templates), cfg)
        if isinstance(command, NextPage):
            page = (scene.menu.page + 1) % menu_page_count(len(templates), cfg)
            scene = replace(scene, menu=replace(scene.menu, page=page))
            feedback.append(_fb_hand(HandId.DOMINANT, "menu-page", "audio"))
        elif isinstance(command, CreateLens):
            template = templates[command.template_index]
            scene, lens_id = scene.allocate_id()
            scene = scene.with_lens(
                Lens(
                    id=lens_id,
                    pose=scene.menu.anchor,
                    radius=cfg.lens_default_radius,
                    ring_width=cfg.ring_width,
                    front_effect=template.front,
                    back_effect=template.back,
                    spawn_ms=scene.time_ms,
                )
            )
            feedback.append(_fb_hand(HandId.DOMINANT, "menu-pick", "audio"))
        return scene, mode
    scene, mode, handled = _ring_trigger(scene, mode, dom, cfg, templates, feedback)
    if handled:
        return scene, mode
    if _hand_busy(mode, HandId.DOMINANT) or scene.menu.visible:
        return scene, mode
    target = raycast_select(scene, dom.pose, cfg)
    if target is None:
        return scene, mode
    if scene.binding_for_remote(target) is not None:
        feedback.append(_fb_hand(HandId.DOMINANT, "reject"))
        return scene, mode
    scene, _ = spawn_proxy(scene, target, scene.head, scene.time_ms, cfg)
    feedback.append(FeedbackEvent("visual", f"lens:{target}", "proxy-spawn"))
    return scene, mode


def _hand_trigger_ring(scene, mode, hs, cfg, templates, feedback):
    scene, mode, _ = _ring_trigger(scene, mode, hs, cfg, templates, feedback)
    return scene, mode


def _ring_trigger(scene, mode, hs, cfg, templates, feedback):
    """Ring widgets of the nearest ring within display reach; consumes the
    press whenever controls are visible so stray presses do not raycast."""
    target = None
    best = cfg.ring_control_distance
    for lens in scene.lenses:
        if lens.semi_transparent:
            continue  # proxies mirror their remote; they carry no controls
        d = ring_distance(lens, hs.pose.position)
        if d <= best:
            target = lens
            best = d
    if target is None:
        return scene, mode, False
    command = ring_control_step(target, hs.pose, True, cfg)
    if command is None:
        return scene, mode, True
    scene = _apply_ring_command(scene, target, command, templates, feedback, hs.hand, cfg)
    return scene, mode, True


def _cycle_effect(current, templates, pick):
    effects = [pick(t) for t in templates]
    try:
        i = effects.index(current)
        return effects[(i + 1) % len(effects)]
    except ValueError:
        return effects[0]


def _apply_ring_command(scene, lens, command, templates, feedback, hand, cfg):
    if isinstance(command, (CycleFrontEffect, CycleBackEffect)):
        if lens.is_combined:
            feedback.append(_fb_hand(hand, "reject"))
            return scene
        if isinstance(command, CycleFrontEffect):
            nxt = _cycle_effect(lens.front_effect, templates, lambda t: t.front)
            updated = replace(lens, front_effect=nxt)
        else:
            nxt = _cycle_effect(lens.back_effect, templates, lambda t: t.back)
            updated = replace(lens, back_effect=nxt)
        feedback.append(FeedbackEvent("visual", f"lens:{lens.id}", "cycle"))
        return scene.with_lens(updated)
    if isinstance(command, AdjustParam):
        target = lens.front_effect
        if lens.is_combined or target.integrator is not Integrator.EMISSION_ABSORPTION:
            feedback.append(_fb_hand(hand, "reject"))
            return scene
        params = target.param_map()
        params[command.name] = min(
            max(params.get(command.name, 1.0) + command.delta, 0.25), 3.0
        )
        updated = replace(lens, front_effect=replace(target, params=tuple(sorted(params.items()))))
        feedback.append(FeedbackEvent("visual", f"lens:{lens.id}", "adjust"))
        return scene.with_lens(updated)
    if isinstance(command, Split):
        scene, new_id = scene.allocate_id()
        first, second = split(lens, new_id)
        scene = scene.without_lens(lens.id).with_lens(first).with_lens(second)
        feedback.append(FeedbackEvent("audio", f"lens:{lens.id}", "split"))
        return scene
    return scene


def _dismiss_proxy(scene, mode, feedback):
    data = mode.proxy_grab
    binding = scene.binding_for_proxy(data.lens_id)
    mode = replace(mode, proxy_grab=None)
    if binding is None:
        return scene, mode
    scene = scene.without_lens(binding.proxy_id)
    scene = replace(scene, proxies=tuple(b for b in scene.proxies if b is not binding))
    if binding.proxy_id == scene.next_id - 1:
        # fresh proxy never outlived anything else: reuse its id so a
        # spawn/dismiss round trip restores the scene exactly
        scene = replace(scene, next_id=binding.proxy_id)
    feedback.append(FeedbackEvent("visual", f"lens:{binding.remote_id}", "proxy-dismiss"))
    return scene, mode


def _prune_bindings(scene, mode, feedback):
    """Dissolve bindings whose endpoints disappeared (combine or toolbox
    removal); an orphaned proxy lens is removed with its binding."""
    for b in scene.proxies:
        proxy_alive = scene.lens_by_id(b.proxy_id) is not None
        remote_alive = scene.lens_by_id(b.remote_id) is not None
        if proxy_alive and remote_alive:
            continue
        if proxy_alive:
            scene = scene.without_lens(b.proxy_id)
        scene = replace(scene, proxies=tuple(x for x in scene.proxies if x is not b))
        if mode.proxy_grab is not None and mode.proxy_grab.lens_id == b.proxy_id:
            mode = replace(mode, proxy_grab=None)
        if mode.grab is not None and mode.grab.lens_id == b.proxy_id:
            mode = replace(mode, grab=None)
        feedback.append(FeedbackEvent("visual", f"lens:{b.remote_id}", "proxy-dismiss"))
    return scene, mode
