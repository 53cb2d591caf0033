"""Tunable interaction constants, collected in one place.

None of these numbers come from measured data; they are reach, snap, and
layout tolerances chosen for a desk-scale scene and overridable per session
(`config key=value` records in a session script header).
"""

from __future__ import annotations

from dataclasses import dataclass, replace, fields


@dataclass(frozen=True, slots=True)
class InteractionConfig:
    # reach and picking
    grab_distance: float = 0.08          # m, hand to disc surface
    ring_control_distance: float = 0.15  # m, hand to ring before widgets show
    ring_widget_hit: float = 0.03        # m, hand to a widget hotspot
    raycast_range: float = 100.0         # m, remote selection reach

    # radial menu
    menu_offset: float = 0.15            # m, along non-dominant hand local +Z
    menu_radius: float = 0.15            # m, outer pick radius
    menu_hub_radius: float = 0.04        # m, central page-turn hub
    menu_plane_tolerance: float = 0.05   # m, press distance from menu plane
    menu_sections_per_page: int = 6

    # lens sizing
    radius_min: float = 0.05
    radius_max: float = 2.0
    lens_default_radius: float = 0.15
    ring_width: float = 0.02
    resize_min_separation: float = 0.01  # m, d0 below this refuses the gesture

    # snap combination ("almost maximal overlap")
    snap_center_frac: float = 0.1        # of max radius
    snap_angle_deg: float = 10.0
    snap_radius_frac: float = 0.25       # |ra-rb| over max radius

    # remote proxies
    proxy_spawn_distance: float = 0.5    # m, in front of the head
    proxy_display_radius: float = 0.15

    # visuals
    spawn_anim_ms: int = 300

    def with_overrides(self, **kv) -> "InteractionConfig":
        return replace(self, **kv)


DEFAULT_CONFIG = InteractionConfig()

_FIELD_TYPES = {f.name: f.type for f in fields(InteractionConfig)}


def config_from_strings(base: InteractionConfig, overrides: dict[str, str]) -> InteractionConfig:
    """Apply `key=value` string overrides, e.g. from a session script header."""
    kv = {}
    for key, raw in overrides.items():
        if key not in _FIELD_TYPES:
            raise KeyError(f"unknown config key: {key}")
        kv[key] = int(raw) if _FIELD_TYPES[key] == "int" else float(raw)
    return base.with_overrides(**kv)
