"""Session scripts: a line-oriented record format driving the reducer, a
deterministic replay engine, and golden-image comparison.

A script is header records (scene source, camera, config overrides, initial
transfer function) followed by a strictly increasing timeline of input
events and directives (snapshot / set_tf / assert).  Replaying the same
script twice produces byte-identical snapshots and an identical final scene
serialization.  The grammar is documented in docs/session_format.md.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from vislens import textio
from vislens.config import DEFAULT_CONFIG, InteractionConfig, config_from_strings
from vislens.geometry import Pose
from vislens.interaction import (
    ButtonEdge,
    HandId,
    HandState,
    IDLE_MODE,
    InputEvent,
    InteractionMode,
    step,
)
from vislens.lens import format_effect
from vislens.render import Camera, Framebuffer, TransferFunction, render_frame, write_image
from vislens.scene import SceneState, format_pose, parse_pose, serialize_scene
from vislens.volume import (
    VolumeGrid,
    default_phantom_spec,
    generate_phantom,
    load_meta,
    load_phantom_spec,
    load_raw,
)


class ScriptError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class SceneSource:
    kind: str  # phantom | raw | none
    spec: Optional[str] = None  # phantom spec path or "default"
    data: Optional[str] = None  # raw file path
    meta: Optional[str] = None  # raw sidecar path

    def tag(self) -> str:
        if self.kind == "phantom":
            return f"phantom:{self.spec}"
        if self.kind == "raw":
            return f"raw:{self.data}"
        return "none"


def load_scene_source(source: SceneSource, base_dir: Optional[Path] = None) -> Optional[VolumeGrid]:
    base = Path(base_dir) if base_dir is not None else Path(".")
    if source.kind == "none":
        return None
    if source.kind == "phantom":
        if source.spec == "default":
            return generate_phantom(default_phantom_spec())
        return generate_phantom(load_phantom_spec(base / source.spec))
    if source.kind == "raw":
        return load_raw(base / source.data, load_meta(base / source.meta))
    raise ScriptError(f"unknown scene source kind {source.kind!r}")


@dataclass(frozen=True, slots=True)
class Snapshot:
    timestamp: int
    name: str


@dataclass(frozen=True, slots=True)
class SetTransferFunction:
    timestamp: int
    tf: TransferFunction


@dataclass(frozen=True, slots=True)
class Assert:
    timestamp: int
    query: str  # lens_count | lens_radius | lens_pose | lens_stack | mode
    lens_id: Optional[int]
    expect: str
    tol: float = 1e-9


TimelineRecord = Union[InputEvent, Snapshot, SetTransferFunction, Assert]


@dataclass(frozen=True)
class SessionScript:
    source: SceneSource = SceneSource("phantom", spec="default")
    camera_fov: float = 60.0
    camera_resolution: tuple[int, int] = (320, 240)
    step_override: Optional[float] = None
    config_overrides: tuple[tuple[str, str], ...] = ()
    initial_tf: Optional[TransferFunction] = None
    timeline: tuple[TimelineRecord, ...] = ()

    def __post_init__(self):
        ts = [_record_time(r) for r in self.timeline]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScriptError("timeline timestamps must strictly increase")
        names = [r.name for r in self.timeline if isinstance(r, Snapshot)]
        if len(names) != len(set(names)):
            raise ScriptError("snapshot names must be unique")


def _record_time(r: TimelineRecord) -> int:
    return r.timestamp


# --- parsing -----------------------------------------------------------------

_EDGE_CODES = {"-": ButtonEdge.NONE, "press": ButtonEdge.PRESSED, "release": ButtonEdge.RELEASED}
_EDGE_NAMES = {v: k for k, v in _EDGE_CODES.items()}


def _parse_hand(f: dict, prefix: str, hand: HandId) -> HandState:
    pose = parse_pose(f[f"{prefix}h"]) if f"{prefix}h" in f else Pose()
    return HandState(
        hand=hand,
        pose=pose,
        grab_active=textio.parse_bool(f.get(f"{prefix}g", "0")),
        trigger_active=textio.parse_bool(f.get(f"{prefix}t", "0")),
        menu_button=_EDGE_CODES[f.get(f"{prefix}m", "-")],
    )


def parse_event(f: dict[str, str]) -> InputEvent:
    return InputEvent(
        timestamp=int(f["t"]),
        head=parse_pose(f["head"]) if "head" in f else Pose(),
        hands=(
            _parse_hand(f, "d", HandId.DOMINANT),
            _parse_hand(f, "n", HandId.NON_DOMINANT),
        ),
    )


def format_event(e: InputEvent) -> str:
    f: dict = {"t": e.timestamp, "head": format_pose(e.head)}
    for prefix, hand in (("d", HandId.DOMINANT), ("n", HandId.NON_DOMINANT)):
        hs = e.hand(hand)
        if hs.pose != Pose():
            f[f"{prefix}h"] = format_pose(hs.pose)
        if hs.grab_active:
            f[f"{prefix}g"] = True
        if hs.trigger_active:
            f[f"{prefix}t"] = True
        if hs.menu_button is not ButtonEdge.NONE:
            f[f"{prefix}m"] = _EDGE_NAMES[hs.menu_button]
    return textio.format_record("event", f)


def parse_tf_points(raw: str) -> TransferFunction:
    pts = []
    for tok in raw.split("|"):
        parts = tok.split(":")
        if len(parts) != 3:
            raise ScriptError(f"transfer function point {tok!r} needs v:a:g")
        pts.append(tuple(float(p) for p in parts))
    return TransferFunction(tuple(pts))


def format_tf_points(tf: TransferFunction) -> str:
    return "|".join(f"{repr(v)}:{repr(a)}:{repr(g)}" for v, a, g in tf.points)


def parse_script(text: str) -> SessionScript:
    source = SceneSource("phantom", spec="default")
    fov = 60.0
    resolution = (320, 240)
    step_override = None
    overrides: list[tuple[str, str]] = []
    initial_tf = None
    timeline: list[TimelineRecord] = []
    for ln, line in textio.iter_record_lines(text):
        try:
            kind, f = textio.parse_record(line)
            if kind == "scene":
                source = SceneSource(
                    f.get("kind", "phantom"),
                    spec=f.get("spec"),
                    data=f.get("data"),
                    meta=f.get("meta"),
                )
            elif kind == "camera":
                fov = float(f.get("fov", fov))
                resolution = (int(f.get("width", resolution[0])), int(f.get("height", resolution[1])))
                if "step" in f:
                    step_override = float(f["step"])
            elif kind == "config":
                overrides.extend(sorted(f.items()))
            elif kind == "tf":
                initial_tf = parse_tf_points(f["points"])
            elif kind == "event":
                timeline.append(parse_event(f))
            elif kind == "snapshot":
                timeline.append(Snapshot(int(f["t"]), f["name"]))
            elif kind == "set_tf":
                timeline.append(SetTransferFunction(int(f["t"]), parse_tf_points(f["points"])))
            elif kind == "assert":
                timeline.append(
                    Assert(
                        int(f["t"]),
                        f["q"],
                        int(f["id"]) if "id" in f else None,
                        f["expect"],
                        float(f.get("tol", 1e-9)),
                    )
                )
            else:
                raise ScriptError(f"unknown record kind {kind!r}")
        except (KeyError, ValueError) as e:
            raise ScriptError(f"line {ln}: {e}") from e
    return SessionScript(
        source=source,
        camera_fov=fov,
        camera_resolution=resolution,
        step_override=step_override,
        config_overrides=tuple(overrides),
        initial_tf=initial_tf,
        timeline=tuple(timeline),
    )


def serialize_script(script: SessionScript) -> str:
    lines = []
    src: dict = {"kind": script.source.kind}
    if script.source.spec is not None:
        src["spec"] = script.source.spec
    if script.source.data is not None:
        src["data"] = script.source.data
    if script.source.meta is not None:
        src["meta"] = script.source.meta
    lines.append(textio.format_record("scene", src))
    cam = {
        "fov": script.camera_fov,
        "width": script.camera_resolution[0],
        "height": script.camera_resolution[1],
    }
    if script.step_override is not None:
        cam["step"] = script.step_override
    lines.append(textio.format_record("camera", cam))
    if script.config_overrides:
        lines.append(textio.format_record("config", dict(script.config_overrides)))
    if script.initial_tf is not None:
        lines.append(textio.format_record("tf", {"points": format_tf_points(script.initial_tf)}))
    for rec in script.timeline:
        if isinstance(rec, InputEvent):
            lines.append(format_event(rec))
        elif isinstance(rec, Snapshot):
            lines.append(textio.format_record("snapshot", {"t": rec.timestamp, "name": rec.name}))
        elif isinstance(rec, SetTransferFunction):
            lines.append(
                textio.format_record(
                    "set_tf", {"t": rec.timestamp, "points": format_tf_points(rec.tf)}
                )
            )
        else:
            f = {"t": rec.timestamp, "q": rec.query}
            if rec.lens_id is not None:
                f["id"] = rec.lens_id
            f["expect"] = rec.expect
            if rec.tol != 1e-9:
                f["tol"] = rec.tol
            lines.append(textio.format_record("assert", f))
    return "\n".join(lines) + "\n"


def load_script(path) -> SessionScript:
    return parse_script(Path(path).read_text())


# --- queries -----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AssertionOutcome:
    timestamp: int
    query: str
    expect: str
    actual: str
    passed: bool


def evaluate_query(scene: SceneState, mode: InteractionMode, q: Assert) -> tuple[str, bool]:
    """Actual value (text form) and pass/fail against the expectation."""
    if q.query == "lens_count":
        actual = str(len(scene.lenses))
        return actual, actual == q.expect.strip()
    if q.query == "mode":
        return mode.kind, mode.kind == q.expect.strip()
    lens = scene.lens_by_id(q.lens_id) if q.lens_id is not None else None
    if lens is None:
        raise ScriptError(f"assert at t={q.timestamp}: lens {q.lens_id} not in scene")
    if q.query == "lens_radius":
        actual = repr(lens.radius)
        return actual, abs(lens.radius - float(q.expect)) <= q.tol
    if q.query == "lens_pose":
        vals = format_pose(lens.pose)
        want = textio.parse_floats(q.expect, 7)
        ok = all(abs(a - b) <= q.tol for a, b in zip(vals, want))
        return textio.format_value(vals), ok
    if q.query == "lens_stack":
        actual = "|".join(format_effect(d) for d in lens.stack) or "-"
        return actual, actual == q.expect.strip()
    raise ScriptError(f"unknown query kind {q.query!r}")


# --- replay ------------------------------------------------------------------


@dataclass
class ReplayResult:
    scene: SceneState
    mode: InteractionMode
    snapshots: dict[str, Framebuffer] = field(default_factory=dict)
    snapshot_hashes: dict[str, str] = field(default_factory=dict)
    assertions: list[AssertionOutcome] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def report(self) -> str:
        lines = [
            textio.format_record(
                "replay",
                {
                    "events": "done",
                    "passed": self.passed,
                    "elapsed_s": round(self.elapsed_s, 3),
                },
            )
        ]
        for a in self.assertions:
            lines.append(
                textio.format_record(
                    "assertion",
                    {
                        "t": a.timestamp,
                        "q": a.query,
                        "expect": a.expect,
                        "actual": a.actual,
                        "passed": a.passed,
                    },
                )
            )
        for name in sorted(self.snapshot_hashes):
            lines.append(
                textio.format_record(
                    "snapshot", {"name": name, "sha256": self.snapshot_hashes[name]}
                )
            )
        lines.append("final_scene")
        lines.append(serialize_scene(self.scene).rstrip("\n"))
        lines.append(textio.format_record("mode", {"kind": self.mode.kind}))
        return "\n".join(lines) + "\n"


def initial_scene(script: SessionScript, base_dir: Optional[Path] = None) -> SceneState:
    volume = load_scene_source(script.source, base_dir)
    return SceneState(volume=volume, volume_source=script.source.tag())


def replay(
    script: SessionScript,
    out_dir=None,
    base_dir: Optional[Path] = None,
    backend: Optional[str] = None,
    workers: int = 1,
) -> ReplayResult:
    """Run a script: events through the reducer in order, snapshots rendered
    from the current head pose, asserts recorded (failures do not stop the
    run; unresolvable lens ids do)."""
    t_start = time.perf_counter()
    cfg = config_from_strings(DEFAULT_CONFIG, dict(script.config_overrides))
    scene = initial_scene(script, base_dir)
    mode = IDLE_MODE
    tf = script.initial_tf if script.initial_tf is not None else TransferFunction()
    result = ReplayResult(scene=scene, mode=mode)
    for rec in script.timeline:
        if isinstance(rec, InputEvent):
            scene, mode, _ = step(scene, mode, rec, cfg)
        elif isinstance(rec, SetTransferFunction):
            tf = rec.tf
        elif isinstance(rec, Snapshot):
            camera = Camera(scene.head, script.camera_fov, script.camera_resolution)
            fb = render_frame(
                scene,
                camera,
                tf,
                step=script.step_override,
                backend=backend,
                workers=workers,
                grabbed=_grabbed_ids(mode),
            )
            result.snapshots[rec.name] = fb
            result.snapshot_hashes[rec.name] = hashlib.sha256(fb.tobytes()).hexdigest()
        else:
            actual, ok = evaluate_query(scene, mode, rec)
            result.assertions.append(
                AssertionOutcome(rec.timestamp, rec.query, rec.expect, actual, ok)
            )
    result.scene = scene
    result.mode = mode
    result.elapsed_s = time.perf_counter() - t_start
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, fb in result.snapshots.items():
            write_image(fb, out / f"{name}.ppm")
        (out / "report.txt").write_text(result.report())
        (out / "final_scene.txt").write_text(serialize_scene(result.scene))
    return result


def _grabbed_ids(mode: InteractionMode) -> frozenset[int]:
    ids = set()
    for data in (mode.grab, mode.proxy_grab):
        if data is not None:
            ids.add(data.lens_id)
    if mode.resize is not None:
        ids.add(mode.resize.lens_id)
    return frozenset(ids)


# --- golden comparison ---------------------------------------------------------


@dataclass(frozen=True, slots=True)
class GoldenReport:
    max_delta: int
    pixels_over: int
    tolerance: int

    @property
    def passed(self) -> bool:
        return self.pixels_over == 0

    def __str__(self) -> str:
        status = "pass" if self.passed else "fail"
        return (
            f"golden {status}: max per-channel delta {self.max_delta}, "
            f"{self.pixels_over} pixels over tolerance {self.tolerance}"
        )


def compare_golden(fb: Framebuffer, golden_path, tolerance: int) -> GoldenReport:
    """Per-channel absolute comparison against a stored image; passes only
    when no pixel exceeds the tolerance."""
    from vislens.render import read_image

    golden = read_image(golden_path)
    w, h = fb.resolution
    if golden.shape[0] != h or golden.shape[1] != w:
        raise ValueError(
            f"{golden_path}: resolution {golden.shape[1]}x{golden.shape[0]} "
            f"does not match framebuffer {w}x{h}"
        )
    channels = min(golden.shape[2], 4)
    diff = np.abs(
        fb.pixels[:, :, :channels].astype(np.int64)
        - golden[:, :, :channels].astype(np.int64)
    )
    per_pixel = diff.max(axis=2)
    return GoldenReport(
        max_delta=int(per_pixel.max()),
        pixels_over=int((per_pixel > tolerance).sum()),
        tolerance=tolerance,
    )
