"""Command-line entry points.

    clusterpt master  --scene gloss --width 320 --height 180 --workers 2 ...
    clusterpt worker  --connect HOST:PORT
    clusterpt client  --connect HOST:PORT --frames 60 --path orbit
    clusterpt bench   --participants 4 --frames 30 ...
    clusterpt render  --scene gloss --width 256 --height 256 --spp 64 --out x.png
    clusterpt bridge  --connect HOST:PORT --ws-port 8765
    clusterpt scenes

bench stands up a whole local cluster (master + workers as subprocesses,
client in this process) and prints a JSON summary of throughput, latency
and the master's stage timings.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

__all__ = ["main"]

log = logging.getLogger(__name__)


def _host_port(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(
            f"{text!r} is not HOST:PORT")
    return host, int(port)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--log-level", default="warning",
                   choices=("debug", "info", "warning", "error"))


def _add_master_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", default="gloss")
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=180)
    p.add_argument("--strategy", default="stride",
                   choices=("stride", "sample", "tile"))
    p.add_argument("--spp", type=int, default=16,
                   help="per-participant samples per pixel")
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--seed-root", type=int, default=0)
    p.add_argument("--encoding", default="jpeg",
                   choices=("raw-rgb8", "png", "jpeg", "radiance-f32"))
    p.add_argument("--denoise", action="store_true")
    p.add_argument("--tile-w", type=int, default=32)
    p.add_argument("--tile-h", type=int, default=32)


def _master_config(args, workers: int, frames_limit):
    from clusterpt.master import MasterConfig

    return MasterConfig(
        width=args.width, height=args.height, scene=args.scene,
        strategy=args.strategy, per_node_spp=args.spp,
        max_depth=args.max_depth, seed_root=args.seed_root,
        workers=workers, tile_size=(args.tile_w, args.tile_h),
        encoding=args.encoding, denoise=args.denoise,
        frames_limit=frames_limit,
        host=getattr(args, "host", "127.0.0.1"),
        port=getattr(args, "port", 0),
        ready_file=getattr(args, "ready_file", None))


def _cmd_master(args) -> int:
    from clusterpt.master import Master

    cfg = _master_config(args, args.workers, args.frames)
    Master(cfg).serve()
    return 0


def _cmd_worker(args) -> int:
    from clusterpt.worker import Worker

    host, port = args.connect
    Worker(host, port, node_id=args.node_id).run()
    return 0


def _camera_path(args):
    from clusterpt.client import CameraPath
    from clusterpt.sceneio import load_scene

    camera = load_scene(args.scene).camera
    return CameraPath(args.path, camera,
                      degrees_per_frame=args.degrees_per_frame)


def _save_frames(report, out_dir: str) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    for rec in report.frames:
        if rec.message.encoding == "radiance-f32":
            np.save(os.path.join(out_dir, f"frame_{rec.frame_id:05d}.npy"),
                    rec.radiance().mean())
        else:
            from PIL import Image

            Image.fromarray(rec.image(), "RGB").save(
                os.path.join(out_dir, f"frame_{rec.frame_id:05d}.png"))


def _report_out(report, args) -> None:
    print(json.dumps(report.summary(), indent=2))
    if getattr(args, "report", None):
        doc = {"summary": report.summary(),
               "stats": {str(fid): rows
                         for fid, rows in sorted(report.stats.items())}}
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    if getattr(args, "save_frames", None):
        _save_frames(report, args.save_frames)


def _cmd_client(args) -> int:
    from clusterpt.client import ClientHarness

    host, port = args.connect
    harness = ClientHarness(host, port, args.frames, _camera_path(args),
                            window=args.window, timeout_s=args.timeout)
    report = harness.run()
    _report_out(report, args)
    return 0 if not report.errors else 1


def _cmd_bench(args) -> int:
    from clusterpt.client import run_cluster

    cfg = _master_config(args, workers=args.participants - 1,
                         frames_limit=args.frames)
    report = run_cluster(cfg, args.frames, path=_camera_path(args),
                         spawn=args.spawn, timeout_s=args.timeout)
    _report_out(report, args)
    return 0 if not report.errors else 1


def _cmd_render(args) -> int:
    from clusterpt.postfx import tone_map
    from clusterpt.rng import SeedNamespace
    from clusterpt.sceneio import load_scene
    from clusterpt.tracer import render_region

    scene = load_scene(args.scene)
    buf = render_region(scene, scene.camera, size=(args.width, args.height),
                        spp=args.spp, seed=SeedNamespace(args.seed_root),
                        max_depth=args.max_depth, frame_id=args.frame_id)
    if args.out.endswith(".npy"):
        np.save(args.out, buf.mean())
    else:
        from PIL import Image

        Image.fromarray(tone_map(buf, denoise=args.denoise), "RGB").save(args.out)
    print(f"wrote {args.out} ({args.width}x{args.height}, {args.spp} spp)")
    return 0


def _cmd_bridge(args) -> int:
    from clusterpt.ws import WsBridge

    host, port = args.connect
    WsBridge(host, port, ws_host=args.ws_host, ws_port=args.ws_port,
             ready_file=args.ready_file).serve()
    return 0


def _cmd_scenes(_args) -> int:
    from clusterpt.sceneio import list_scenes

    for name in list_scenes():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterpt",
        description="distributed deterministic CPU path tracer")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("master", help="run the cluster master")
    _add_common(p)
    _add_master_args(p)
    p.add_argument("--workers", type=int, default=0,
                   help="worker connections to wait for")
    p.add_argument("--frames", type=int, default=None,
                   help="stop after this many frames")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--ready-file", default=None,
                   help="write 'host port' here once listening")
    p.set_defaults(fn=_cmd_master)

    p = sub.add_parser("worker", help="run one render worker")
    _add_common(p)
    p.add_argument("--connect", type=_host_port, required=True)
    p.add_argument("--node-id", type=int, default=0)
    p.set_defaults(fn=_cmd_worker)

    p = sub.add_parser("client", help="drive a running master")
    _add_common(p)
    p.add_argument("--connect", type=_host_port, required=True)
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--scene", default="gloss",
                   help="scene whose camera anchors the path")
    p.add_argument("--path", default="orbit", choices=("hold", "orbit"))
    p.add_argument("--degrees-per-frame", type=float, default=1.5)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--report", default=None, help="write JSON report here")
    p.add_argument("--save-frames", default=None,
                   help="write received frames into this directory")
    p.set_defaults(fn=_cmd_client)

    p = sub.add_parser("bench", help="stand up a local cluster and measure")
    _add_common(p)
    _add_master_args(p)
    p.add_argument("--participants", type=int, default=2,
                   help="rendering participants (master + N-1 workers)")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--path", default="orbit", choices=("hold", "orbit"))
    p.add_argument("--degrees-per-frame", type=float, default=1.5)
    p.add_argument("--spawn", default="process",
                   choices=("process", "thread"))
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--report", default=None)
    p.add_argument("--save-frames", default=None)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("render", help="single-process offline render")
    _add_common(p)
    p.add_argument("--scene", default="gloss")
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--spp", type=int, default=64)
    p.add_argument("--max-depth", type=int, default=10)
    p.add_argument("--seed-root", type=int, default=0)
    p.add_argument("--frame-id", type=int, default=0)
    p.add_argument("--denoise", action="store_true")
    p.add_argument("--out", required=True, help=".png or .npy")
    p.set_defaults(fn=_cmd_render)

    p = sub.add_parser("bridge", help="WebSocket bridge for the browser viewer")
    _add_common(p)
    p.add_argument("--connect", type=_host_port, required=True)
    p.add_argument("--ws-host", default="127.0.0.1")
    p.add_argument("--ws-port", type=int, default=8765)
    p.add_argument("--ready-file", default=None)
    p.set_defaults(fn=_cmd_bridge)

    p = sub.add_parser("scenes", help="list bundled scenes")
    _add_common(p)
    p.set_defaults(fn=_cmd_scenes)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("fatal", exc_info=True)
        print(f"clusterpt: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
