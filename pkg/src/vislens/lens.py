"""Disc lenses: geometry, see-through selection along rays, effect
descriptors and their composition, snap combination and its undo.

A lens is a disc in its pose's local XY plane; local +Z is the front normal.
Along a view ray, a lens affects everything strictly beyond its disc hit
(the unbounded cone from the eye through the disc), so overlapping discs
stack their effects in hit order like physical filters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Union

from vislens.config import DEFAULT_CONFIG, InteractionConfig
from vislens.geometry import Pose, Ray, Vec3, qrotate, vdot, vdist, vscale, vsub, vadd

RADIUS_MIN = 0.05
RADIUS_MAX = 2.0

# A derivative-of-derivative field is supported; deeper chains saturate here.
MAX_TRANSFORM_DEPTH = 2


class LensError(ValueError):
    pass


class FieldTransform(enum.Enum):
    GRADIENT_MAGNITUDE = "gradmag"


class Integrator(enum.Enum):
    EMISSION_ABSORPTION = "dvr"
    MAX_INTENSITY = "mip"


PARAM_SCHEMA = {
    FieldTransform.GRADIENT_MAGNITUDE: frozenset({"g_max"}),
    Integrator.EMISSION_ABSORPTION: frozenset({"opacity_scale"}),
    Integrator.MAX_INTENSITY: frozenset(),
}


@dataclass(frozen=True, slots=True)
class EffectDescriptor:
    """One composable lens effect: an optional scalar-field transform plus an
    optional integrator, with named scalar parameters."""

    field_transform: Optional[FieldTransform] = None
    integrator: Optional[Integrator] = None
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.field_transform is None and self.integrator is None:
            raise LensError("effect needs a field transform or an integrator")
        params = self.params
        if isinstance(params, dict):
            params = tuple(sorted((str(k), float(v)) for k, v in params.items()))
        else:
            params = tuple(sorted((str(k), float(v)) for k, v in params))
        allowed: set[str] = set()
        for kind in (self.field_transform, self.integrator):
            if kind is not None:
                allowed |= PARAM_SCHEMA[kind]
        unknown = {k for k, _ in params} - allowed
        if unknown:
            raise LensError(f"parameters {sorted(unknown)} not in schema for this effect")
        object.__setattr__(self, "params", params)

    def param_map(self) -> dict[str, float]:
        return dict(self.params)


# Atomic lenses carry a leaf; snap combination nests subtrees so the most
# recent combine can be undone exactly.
CombineTree = Union[EffectDescriptor, tuple]


def flatten_tree(tree: CombineTree) -> tuple[EffectDescriptor, ...]:
    if isinstance(tree, EffectDescriptor):
        return (tree,)
    left, right = tree
    return flatten_tree(left) + flatten_tree(right)


PLAIN_DVR = EffectDescriptor(integrator=Integrator.EMISSION_ABSORPTION)
MIP = EffectDescriptor(integrator=Integrator.MAX_INTENSITY)
DERIVATIVE = EffectDescriptor(field_transform=FieldTransform.GRADIENT_MAGNITUDE)


@dataclass(frozen=True, slots=True)
class Lens:
    """Positioned, sized disc with front/back effects; combined lenses carry
    the constituent descriptor stack (and its combine tree for undo)."""

    id: int
    pose: Pose
    radius: float
    front_effect: EffectDescriptor = PLAIN_DVR
    back_effect: EffectDescriptor = PLAIN_DVR
    stack: tuple[EffectDescriptor, ...] = ()
    tree: Optional[CombineTree] = None
    ring_width: float = 0.02
    semi_transparent: bool = False
    spawn_ms: Optional[int] = None

    def __post_init__(self):
        if not (RADIUS_MIN <= self.radius <= RADIUS_MAX):
            raise LensError(
                f"radius {self.radius} outside [{RADIUS_MIN}, {RADIUS_MAX}]"
            )
        if self.ring_width <= 0 or self.ring_width >= self.radius:
            raise LensError("ring_width must be positive and below the radius")
        stack = tuple(self.stack)
        if len(stack) == 1:
            raise LensError("stack is empty for atomic lenses, >= 2 when combined")
        if stack:
            if self.tree is None or flatten_tree(self.tree) != stack:
                raise LensError("combined lens tree must flatten to its stack")
        elif self.tree is not None:
            raise LensError("atomic lens must not carry a combine tree")
        object.__setattr__(self, "stack", stack)

    @property
    def is_combined(self) -> bool:
        return bool(self.stack)

    def normal(self) -> Vec3:
        return self.pose.z_axis()

    def center(self) -> Vec3:
        return self.pose.position

    def contribution(self, head_position: Optional[Vec3] = None) -> tuple[EffectDescriptor, ...]:
        """Descriptors this lens adds to a combine: its stack when combined,
        else the effect of the face currently turned toward the head."""
        if self.is_combined:
            return self.stack
        return (self.facing_effect(head_position),)

    def facing_effect(self, head_position: Optional[Vec3]) -> EffectDescriptor:
        if head_position is None:
            return self.front_effect
        side = vdot(vsub(head_position, self.center()), self.normal())
        return self.front_effect if side >= 0.0 else self.back_effect

    def contribution_tree(self, head_position: Optional[Vec3] = None) -> CombineTree:
        if self.is_combined:
            return self.tree
        return self.facing_effect(head_position)

    def display_radius(self, now_ms: Optional[int], anim_ms: int = 300) -> float:
        """Visual radius during the spawn animation; logic always uses the
        full radius."""
        if self.spawn_ms is None or now_ms is None:
            return self.radius
        dt = now_ms - self.spawn_ms
        if dt >= anim_ms:
            return self.radius
        return self.radius * max(0.0, dt / anim_ms)


class Face(enum.Enum):
    FRONT = "front"
    BACK = "back"


class DiscHit(NamedTuple):
    t: float
    face: Face


def ray_disc_hit(lens: Lens, ray: Ray, radius: Optional[float] = None) -> Optional[DiscHit]:
    """First intersection of `ray` with the lens disc, or None.

    Reports a hit for t > 1e-6 with the plane point within the radius; the
    face is FRONT when the ray approaches against the front normal.  Rays
    within 1e-9 of parallel to the disc plane never hit.
    """
    n = lens.normal()
    denom = vdot(ray.direction, n)
    if abs(denom) < 1e-9:
        return None
    c = lens.center()
    t = vdot(vsub(c, ray.origin), n) / denom
    if t <= 1e-6:
        return None
    q = vsub(ray.at(t), c)
    r = lens.radius if radius is None else radius
    if vdot(q, q) > r * r:
        return None
    return DiscHit(t, Face.FRONT if denom < 0.0 else Face.BACK)


@dataclass(frozen=True, slots=True)
class EffectChainSegment:
    t_start: float
    t_end: float
    active_stack: tuple[EffectDescriptor, ...]


def effect_chain(lenses, ray: Ray, t_exit: float) -> list[EffectChainSegment]:
    """Split [0, t_exit] at disc hits; segment k carries the descriptors of
    the first k hits in hit order (ties broken by ascending lens id)."""
    if t_exit <= 0.0:
        raise LensError("t_exit must be positive")
    hits = []
    for lens in lenses:
        h = ray_disc_hit(lens, ray)
        if h is not None and h.t < t_exit:
            hits.append((h.t, lens.id, lens, h.face))
    hits.sort(key=lambda e: (e[0], e[1]))
    segments = []
    stack: tuple[EffectDescriptor, ...] = ()
    t_prev = 0.0
    for t, _, lens, face in hits:
        segments.append(EffectChainSegment(t_prev, t, stack))
        if lens.is_combined:
            stack = stack + lens.stack
        else:
            stack = stack + (lens.front_effect if face is Face.FRONT else lens.back_effect,)
        t_prev = t
    segments.append(EffectChainSegment(t_prev, t_exit, stack))
    return segments


@dataclass(frozen=True, slots=True)
class EffectiveShading:
    """Flattened result of composing a descriptor stack: how many gradient-
    magnitude passes to apply to the field, then which integrator runs."""

    transform_depth: int = 0
    integrator: Integrator = Integrator.EMISSION_ABSORPTION
    opacity_scale: float = 1.0
    g_max: Optional[float] = None  # None = per-grid percentile default


def compose_effects(stack) -> EffectiveShading:
    """Fold a stack: field transforms concatenate in order (innermost first),
    the last integrator wins (emission-absorption when none is set), and
    later parameter maps override earlier keys."""
    depth = 0
    integrator: Optional[Integrator] = None
    params: dict[str, float] = {}
    for desc in stack:
        if desc.field_transform is FieldTransform.GRADIENT_MAGNITUDE:
            depth += 1
        if desc.integrator is not None:
            integrator = desc.integrator
        params.update(desc.param_map())
    return EffectiveShading(
        transform_depth=min(depth, MAX_TRANSFORM_DEPTH),
        integrator=integrator or Integrator.EMISSION_ABSORPTION,
        opacity_scale=params.get("opacity_scale", 1.0),
        g_max=params.get("g_max"),
    )


def overlap_near_maximal(a: Lens, b: Lens, cfg: InteractionConfig = DEFAULT_CONFIG) -> bool:
    """Near-coincident discs: centers, normals (either way up), and radii all
    within the configured snap tolerances."""
    rmax = max(a.radius, b.radius)
    if vdist(a.center(), b.center()) > cfg.snap_center_frac * rmax:
        return False
    dot = abs(vdot(a.normal(), b.normal()))
    if dot < math.cos(math.radians(cfg.snap_angle_deg)):
        return False
    return abs(a.radius - b.radius) <= cfg.snap_radius_frac * rmax


def combine(
    held: Lens,
    other: Lens,
    head_position: Optional[Vec3] = None,
    cfg: InteractionConfig = DEFAULT_CONFIG,
) -> Optional[Lens]:
    """Snap two nearly-coincident lenses into one.

    The result keeps the held lens's id and pose (the snapping hand stays in
    control) and the larger radius; its stack is held's contribution followed
    by other's.  Returns None when the overlap precondition fails, leaving
    feedback to the caller.
    """
    if not overlap_near_maximal(held, other, cfg):
        return None
    tree = (held.contribution_tree(head_position), other.contribution_tree(head_position))
    stack = flatten_tree(tree)
    return replace(
        held,
        radius=max(held.radius, other.radius),
        stack=stack,
        tree=tree,
    )


def split(combined: Lens, new_id: int) -> tuple[Lens, Lens]:
    """Undo the most recent combine.

    The first lens keeps the stack prefix at the combined pose; the second
    takes the suffix contributed by the last combine, re-created beside it
    (offset 1.2 radii along local +X) under `new_id`.
    """
    if not combined.is_combined:
        raise LensError(f"lens {combined.id} is atomic, nothing to split")
    left, right = combined.tree
    offset = vscale(combined.pose.x_axis(), 1.2 * combined.radius)
    beside = Pose(vadd(combined.pose.position, offset), combined.pose.orientation)
    return (
        _lens_from_tree(combined, combined.id, combined.pose, left),
        _lens_from_tree(combined, new_id, beside, right),
    )


def _lens_from_tree(source: Lens, lens_id: int, pose: Pose, tree: CombineTree) -> Lens:
    if isinstance(tree, EffectDescriptor):
        return replace(
            source, id=lens_id, pose=pose, front_effect=tree,
            back_effect=PLAIN_DVR, stack=(), tree=None,
        )
    return replace(source, id=lens_id, pose=pose, stack=flatten_tree(tree), tree=tree)


# --- effect templates (the menu's toolbox) ---------------------------------


@dataclass(frozen=True, slots=True)
class EffectTemplate:
    name: str
    front: EffectDescriptor
    back: EffectDescriptor = PLAIN_DVR


DEFAULT_TEMPLATES: tuple[EffectTemplate, ...] = (
    EffectTemplate("plain", PLAIN_DVR),
    EffectTemplate("mip", MIP),
    EffectTemplate("derivative", DERIVATIVE),
    EffectTemplate("boost", EffectDescriptor(
        integrator=Integrator.EMISSION_ABSORPTION, params={"opacity_scale": 3.0}
    )),
)


# --- text encoding ----------------------------------------------------------


def format_effect(e: EffectDescriptor) -> str:
    parts = []
    if e.field_transform is not None:
        parts.append(f"t:{e.field_transform.value}")
    if e.integrator is not None:
        parts.append(f"i:{e.integrator.value}")
    parts.extend(f"{k}:{repr(v)}" for k, v in e.params)
    return ";".join(parts)


def parse_effect(token: str) -> EffectDescriptor:
    transform = None
    integrator = None
    params = {}
    for part in token.split(";"):
        if not part:
            continue
        key, _, val = part.partition(":")
        if key == "t":
            transform = FieldTransform(val)
        elif key == "i":
            integrator = Integrator(val)
        else:
            params[key] = float(val)
    return EffectDescriptor(transform, integrator, params)


def format_tree(tree: CombineTree) -> str:
    if isinstance(tree, EffectDescriptor):
        return format_effect(tree)
    left, right = tree
    return f"({format_tree(left)}|{format_tree(right)})"


def parse_tree(text: str) -> CombineTree:
    tree, rest = _parse_tree_inner(text)
    if rest:
        raise LensError(f"trailing characters in combine tree: {rest!r}")
    return tree


def _parse_tree_inner(text: str) -> tuple[CombineTree, str]:
    if text.startswith("("):
        left, rest = _parse_tree_inner(text[1:])
        if not rest.startswith("|"):
            raise LensError("expected '|' in combine tree")
        right, rest = _parse_tree_inner(rest[1:])
        if not rest.startswith(")"):
            raise LensError("expected ')' in combine tree")
        return (left, right), rest[1:]
    end = len(text)
    for stop in ("|", ")"):
        pos = text.find(stop)
        if pos != -1:
            end = min(end, pos)
    return parse_effect(text[:end]), text[end:]
