"""Command-line entry point.

Subcommands: replay (scripted session), render (single frame), phantom
(generate a RAW dataset), serve (websocket bridge), bench (frame timing).
Exit codes: 0 success, 1 assertion failures, 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from vislens import kernels


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vislens", description=__doc__)
    sub = p.add_subparsers(dest="command")

    rp = sub.add_parser("replay", help="replay a session script")
    rp.add_argument("script", help="session script path")
    rp.add_argument("--out", required=True, help="directory for snapshots and report")
    rp.add_argument("--backend", choices=("numba", "numpy"), default=None)
    rp.add_argument("--workers", type=int, default=1)

    rd = sub.add_parser("render", help="render one frame of a scene file")
    rd.add_argument("scene", help="scene text file, or 'default' for the empty default phantom")
    rd.add_argument("--out", required=True, help="output image (.ppm or .png)")
    rd.add_argument("--camera", default=None, help="pose px,py,pz,qw,qx,qy,qz")
    rd.add_argument("--fov", type=float, default=60.0)
    rd.add_argument("--size", default="320x240")
    rd.add_argument("--step", type=float, default=None)
    rd.add_argument("--backend", choices=("numba", "numpy"), default=None)
    rd.add_argument("--workers", type=int, default=1)

    ph = sub.add_parser("phantom", help="generate a phantom volume as RAW + metadata")
    ph.add_argument("spec", help="phantom spec file, or 'default'")
    ph.add_argument("--out", required=True, help="output base path (writes .raw and .meta)")
    ph.add_argument("--dtype", choices=("u8", "f32"), default="u8")

    sv = sub.add_parser("serve", help="serve the live cockpit bridge")
    sv.add_argument("--port", type=int, default=8776)
    sv.add_argument("--host", default=None, help="bind address (or VISLENS_BIND)")
    sv.add_argument("--scene", default="default", help="phantom spec path or 'default'")
    sv.add_argument("--fps", type=float, default=10.0)
    sv.add_argument("--size", default="320x240")
    sv.add_argument("--workers", type=int, default=1)

    bn = sub.add_parser("bench", help="frame-time benchmark (DVR + one MIP lens)")
    bn.add_argument("--frames", type=int, default=5)
    bn.add_argument("--backend", choices=("numba", "numpy", "both"), default="numba")
    bn.add_argument("--size", default="320x240")
    bn.add_argument("--workers", default=None,
                    help="comma-separated worker counts (default: 1 and all cores)")
    return p


def _parse_size(text: str) -> tuple[int, int]:
    w, _, h = text.partition("x")
    return int(w), int(h)


def _cmd_replay(args) -> int:
    from vislens.session import load_script, replay

    path = Path(args.script)
    if not path.exists():
        print(f"error: script not found: {path}", file=sys.stderr)
        return 2
    script = load_script(path)
    result = replay(
        script, out_dir=args.out, base_dir=path.parent,
        backend=args.backend, workers=args.workers,
    )
    print(result.report(), end="")
    if not result.passed:
        failed = sum(not a.passed for a in result.assertions)
        print(f"{failed} assertion(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_render(args) -> int:
    from vislens.geometry import look_at_pose
    from vislens.render import Camera, render_frame, write_image
    from vislens.scene import SceneState, parse_scene, parse_pose
    from vislens.session import SceneSource, load_scene_source
    from vislens.volume import default_phantom_spec, generate_phantom

    if args.scene == "default":
        scene = SceneState(
            volume=generate_phantom(default_phantom_spec()),
            volume_source="phantom:default",
        )
    else:
        path = Path(args.scene)
        if not path.exists():
            print(f"error: scene not found: {path}", file=sys.stderr)
            return 2
        text = path.read_text()
        source_tag = _scene_source_tag(text)
        volume = load_scene_source(_source_from_tag(source_tag), base_dir=path.parent)
        scene = parse_scene(text, volume)
    if args.camera is not None:
        pose = parse_pose(args.camera)
    else:
        pose = look_at_pose((0.0, 0.93, 0.06), (0.0, 0.0, 0.06), up=(0.0, 0.0, 1.0))
    camera = Camera(pose, args.fov, _parse_size(args.size))
    fb = render_frame(scene, camera, step=args.step, backend=args.backend, workers=args.workers)
    write_image(fb, args.out)
    print(f"wrote {args.out}")
    return 0


def _scene_source_tag(text: str) -> str:
    from vislens import textio

    for _, line in textio.iter_record_lines(text):
        kind, f = textio.parse_record(line)
        if kind == "scene":
            return f.get("source", "none")
    return "none"


def _source_from_tag(tag: str):
    from vislens.session import SceneSource

    if tag == "none":
        return SceneSource("none")
    kind, _, rest = tag.partition(":")
    if kind == "phantom":
        return SceneSource("phantom", spec=rest or "default")
    if kind == "raw":
        data = rest
        return SceneSource("raw", data=data, meta=str(Path(data).with_suffix(".meta")))
    raise ValueError(f"unknown scene source tag {tag!r}")


def _cmd_phantom(args) -> int:
    from vislens.volume import (
        default_phantom_spec,
        generate_phantom,
        load_phantom_spec,
        save_phantom_spec,
        save_raw,
    )

    if args.spec == "default":
        spec = default_phantom_spec()
    else:
        path = Path(args.spec)
        if not path.exists():
            print(f"error: spec not found: {path}", file=sys.stderr)
            return 2
        spec = load_phantom_spec(path)
    grid = generate_phantom(spec)
    base = Path(args.out)
    if base.suffix == ".raw":
        base = base.with_suffix("")
    raw_path = base.with_suffix(".raw")
    meta_path = base.with_suffix(".meta")
    save_raw(grid, raw_path, meta_path, dtype=args.dtype)
    save_phantom_spec(spec, base.with_suffix(".pspec"))
    print(f"wrote {raw_path} {meta_path}")
    return 0


def _cmd_serve(args) -> int:
    import os

    import uvicorn

    from vislens.server import create_app

    host = args.host or os.environ.get("VISLENS_BIND", "127.0.0.1")
    app = create_app(
        scene_spec=args.scene,
        fps=args.fps,
        resolution=_parse_size(args.size),
        workers=args.workers,
    )
    print(f"serving ws://{host}:{args.port}/session")
    uvicorn.run(app, host=host, port=args.port, log_level="warning")
    return 0


def _cmd_bench(args) -> int:
    import os

    from vislens.bench import run_bench

    backends = ("numba", "numpy") if args.backend == "both" else (args.backend,)
    if args.workers is not None:
        workers = tuple(int(w) for w in args.workers.split(","))
    else:
        workers = (1, max(1, os.cpu_count() or 1))
    results = run_bench(
        frames=args.frames, backends=backends, workers=workers,
        resolution=_parse_size(args.size),
    )
    print(f"active backend default: {kernels.active_backend()}")
    for r in results:
        print(r.line())
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    handler = {
        "replay": _cmd_replay,
        "render": _cmd_render,
        "phantom": _cmd_phantom,
        "serve": _cmd_serve,
        "bench": _cmd_bench,
    }[args.command]
    try:
        return handler(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
