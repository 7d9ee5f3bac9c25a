"""Command-line entry point for all workflows.

Subcommands: serve, simulate, simulate-client, track, analyze, segment,
genpanel, export. Figures are written as static SVG; exit status is 0 on
success, 2 for usage/validation errors and 1 for runtime failures with a
one-line machine-parseable message on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import signal
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, analysis, persistence, plots
from ._kernels import BACKEND
from .model import StageLabel
from .panel import PanelSpec, generate_pattern, write_svg
from .segmentation import CalibrationError, VialLayout, VialPriors, calibrate
from .simulate import GENOTYPES, LifecycleSimulator, SimConfig, get_genotype
from .tracker import TrackerConfig, track_detections


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {text}")
    return value


def _period_grid(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
        return analysis.default_period_grid(lo, hi, step)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LO:HI:STEP hours, got {text!r}") from exc


def _host_port(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vialtrack",
        description="Developmental monitoring of rearing vials: simulate, track, analyze.",
    )
    parser.add_argument("--version", action="version", version=f"vialtrack {__version__}")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="print effective parameters to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a ground-truthed detection stream")
    p.add_argument("--genotype", choices=sorted(GENOTYPES), default="wildtype")
    p.add_argument("--vials", type=_positive_int, default=3)
    p.add_argument("--n", type=_positive_int, default=100, help="specimens per vial")
    p.add_argument("--days", type=_positive_float, default=14.0)
    p.add_argument("--interval-min", type=_positive_float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", action="store_true", help="apply detector confusion noise")
    p.add_argument("--images", type=Path, default=None, help="also write synthetic PNG frames")
    p.add_argument("--image-scale", type=_positive_float, default=0.25)
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="associate a detection stream into tracks")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--config", type=Path, default=None, help="tracker parameters (JSON)")
    p.add_argument("--layout", type=Path, default=None, help="vial layout calibration (JSON)")
    p.add_argument("--genotype", default=None, help="genotype tag recorded in the session")
    p.add_argument("--out", type=Path, required=True, help="session file (HDF5)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("analyze", help="extract events and rhythm statistics from a session")
    p.add_argument("--session", type=Path, required=True)
    p.add_argument("--tau", type=_positive_int, default=7, help="event confirmation window")
    p.add_argument("--bin-minutes", type=_positive_float, default=10.0)
    p.add_argument("--period-grid", type=_period_grid, default=None, metavar="LO:HI:STEP")
    p.add_argument("--alpha", type=_fraction, default=0.05)
    p.add_argument("--plot-period", type=_positive_float, default=24.0)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("segment", help="calibrate vial regions from a full-frame image")
    p.add_argument("image", type=Path)
    p.add_argument("--lambda", dest="lam", type=_fraction, default=0.1)
    p.add_argument("--min-vial-width", type=_positive_int, default=1000)
    p.add_argument("--min-gap", type=int, default=200)
    p.add_argument("--vials", type=_positive_int, default=3)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("genpanel", help="generate a light-guide carving pattern (SVG)")
    p.add_argument("--width-mm", type=_positive_float, default=93.0)
    p.add_argument("--height-mm", type=_positive_float, default=220.0)
    p.add_argument("--dmin", type=_positive_float, default=1.0)
    p.add_argument("--dstmin", type=float, default=2.0)
    p.add_argument(
        "--gradient",
        type=_positive_float,
        default=None,
        help="carving diameter at the edge opposite the LEDs (default 2.5 x dmin)",
    )
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_genpanel)

    p = sub.add_parser("serve", help="run the acquisition server")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--data-dir", type=Path, required=True)
    p.add_argument("--workspace", type=Path, default=None)
    p.add_argument("--time-scale", type=_positive_float, default=1.0)
    p.add_argument("--interval-min", type=_positive_float, default=10.0)
    p.add_argument("--days", type=_positive_float, default=None,
                   help="push a default capture schedule of this length to every box")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("simulate-client", help="run one simulated box client")
    p.add_argument("--server", type=_host_port, required=True, metavar="HOST:PORT")
    p.add_argument("--box-id", type=_positive_int, required=True)
    p.add_argument("--genotype", choices=sorted(GENOTYPES), default="wildtype")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-scale", type=_positive_float, default=None)
    p.add_argument("--vials", type=_positive_int, default=3)
    p.add_argument("--n", type=_positive_int, default=6, help="specimens per vial")
    p.set_defaults(func=cmd_simulate_client)

    p = sub.add_parser("export", help="export session events as rhythm-analysis CSV")
    p.add_argument("--session", type=Path, required=True)
    p.add_argument("--tau", type=_positive_int, default=7)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        effective = {k: str(v) for k, v in vars(args).items() if k not in ("func",)}
        print(f"vialtrack: kernel={BACKEND} {json.dumps(effective, sort_keys=True)}",
              file=sys.stderr)
    try:
        return args.func(args)
    except (
        CalibrationError,
        persistence.SchemaError,
        FileNotFoundError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# -- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = SimConfig(
        vials=args.vials,
        specimens_per_vial=args.n,
        frame_interval_s=args.interval_min * 60.0,
        duration_days=args.days,
        seed=args.seed,
        noise=args.noise,
    )
    simulator = LifecycleSimulator(cfg, get_genotype(args.genotype))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    detections = []
    for _, _, frame_dets in simulator.frames():
        detections.extend(frame_dets)
    persistence.write_detections_csv(detections, out / "detections.csv")
    persistence.write_truth_csv(simulator.truth_rows(), out / "truth.csv")
    simulator.vial_layout().save(out / "layout.json")
    if args.images is not None:
        from PIL import Image

        args.images.mkdir(parents=True, exist_ok=True)
        for f in range(cfg.n_frames):
            img = simulator.render_image(f, scale=args.image_scale)
            Image.fromarray(img).save(args.images / f"{f}.png")
    print(
        f"simulated {args.genotype}: {cfg.vials} vial(s) x {args.n} specimens, "
        f"{cfg.n_frames} frames, {len(detections)} detections -> {out}"
    )
    return 0


def cmd_track(args) -> int:
    if args.config is not None:
        config = TrackerConfig.from_dict(json.loads(args.config.read_text()))
    else:
        config = TrackerConfig()
    layout_json = None
    if args.layout is not None:
        layout_json = json.dumps(VialLayout.load(args.layout).to_dict(), sort_keys=True)

    detections = persistence.read_detections_csv(args.detections)
    tracks = track_detections(detections, config)
    config_json = json.dumps(config.to_dict(), sort_keys=True)
    meta = {
        "source": str(args.detections),
        "tracker_config": config_json,
        "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
        "interval": _infer_interval(detections),
        "kernel": BACKEND,
    }
    if layout_json is not None:
        meta["layout"] = layout_json
    if args.genotype is not None:
        meta["genotype"] = args.genotype
    persistence.write_session(args.out, tracks, [], [], meta)
    print(f"tracked {len(detections)} detections into {len(tracks)} track(s) -> {args.out}")
    return 0


def _infer_interval(detections) -> float:
    timestamps = sorted({d.timestamp for d in detections})
    if len(timestamps) < 2:
        return 600.0
    return float(min(b - a for a, b in zip(timestamps, timestamps[1:])))


def cmd_analyze(args) -> int:
    tracks, _, _, meta = persistence.read_session(args.session)
    events = []
    for track in tracks:
        events.extend(analysis.extract_events(track, tau=args.tau))
    bin_width = args.bin_minutes * 60.0
    t_end = max(
        (s.timestamp for t in tracks for s in t.samples[-1:]),
        default=bin_width,
    ) + bin_width

    args.out_dir.mkdir(parents=True, exist_ok=True)
    persistence.export_events_csv(events, args.out_dir / "events.csv")

    grid = args.period_grid if args.period_grid is not None else analysis.default_period_grid()
    summary: dict = {
        "session": str(args.session),
        "genotype": meta.get("genotype"),
        "tau": args.tau,
        "bin_minutes": args.bin_minutes,
        "alpha": args.alpha,
        "kernel": BACKEND,
        "vials": {},
    }

    eclosions = [e for e in events if e.kind.key == "eclosion"]
    pooled_series = analysis.bin_events(eclosions, bin_width, 0.0, t_end)
    summary["pooled"] = _rhythm_stats(pooled_series, grid, args.alpha)
    for vial_id in sorted({e.vial_id for e in eclosions}):
        series = analysis.bin_events(
            [e for e in eclosions if e.vial_id == vial_id], bin_width, 0.0, t_end
        )
        summary["vials"][str(vial_id)] = _rhythm_stats(series, grid, args.alpha)

    act = analysis.actogram(pooled_series, period_hours=args.plot_period)
    plots.plot_actogram(act, args.out_dir / "actogram.svg", title=str(meta.get("genotype") or ""))
    if summary["pooled"].get("peak_period_hours") is not None:
        pg = analysis.lomb_scargle(pooled_series, grid, alpha=args.alpha)
        plots.plot_periodogram(
            pg, args.out_dir / "periodogram.svg", title=str(meta.get("genotype") or "")
        )

    (args.out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(
        f"analyzed {len(tracks)} track(s): {len(events)} event(s); "
        f"pooled peak {summary['pooled'].get('peak_period_hours')} h -> {args.out_dir}"
    )
    return 0


def _rhythm_stats(series, grid, alpha) -> dict:
    stats = {"n_events": analysis.series_total(series)}
    try:
        pg = analysis.lomb_scargle(series, grid, alpha=alpha)
    except ValueError as exc:
        stats.update(
            {"peak_period_hours": None, "peak_power": None, "significant": None, "note": str(exc)}
        )
        return stats
    period, power, significant = analysis.peak_period(pg)
    stats.update(
        {
            "peak_period_hours": period,
            "peak_power": power,
            "significant": significant,
            "threshold": pg.threshold,
        }
    )
    return stats


def cmd_segment(args) -> int:
    from PIL import Image

    image = np.asarray(Image.open(args.image).convert("L"), dtype=np.float64)
    priors = VialPriors(
        min_vial_width=args.min_vial_width, min_gap_width=args.min_gap, max_vials=args.vials
    )
    layout = calibrate(image, lam=args.lam, priors=priors)
    layout.save(args.out)
    regions = ", ".join(f"[{a}, {b})" for a, b in layout.regions)
    print(f"calibrated {len(layout.regions)} vial region(s): {regions} -> {args.out}")
    return 0


def cmd_genpanel(args) -> int:
    spec = PanelSpec(
        width_mm=args.width_mm,
        height_mm=args.height_mm,
        d_min_mm=args.dmin,
        d_max_mm=args.gradient,
        dst_min_mm=args.dstmin,
    )
    circles = generate_pattern(spec)
    write_svg(spec, circles, args.out)
    print(f"generated {len(circles)} carvings on {spec.width_mm}x{spec.height_mm} mm -> {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .protocol.server import AcquisitionServer, WorkspaceConfig
    from .protocol.wire import DEFAULT_PORT

    workspace = WorkspaceConfig.load(args.workspace) if args.workspace else None
    default_schedule = None
    if args.days is not None:
        default_schedule = {
            "interval_s": args.interval_min * 60.0,
            "start_s": 0.0,
            "end_s": args.days * 86400.0,
            "active": True,
        }
    server = AcquisitionServer(
        data_dir=args.data_dir,
        host=args.host,
        port=args.port if args.port is not None else DEFAULT_PORT,
        workspace=workspace,
        time_scale=args.time_scale,
        default_schedule=default_schedule,
    )
    stop = {"requested": False}

    def _sigint(signum, frame):
        stop["requested"] = True

    signal.signal(signal.SIGINT, _sigint)
    signal.signal(signal.SIGTERM, _sigint)
    server.start()
    print(f"serving on {args.host}:{server.port}, data in {args.data_dir}")
    try:
        while not stop["requested"]:
            time.sleep(0.2)
    finally:
        server.stop()
        print("server stopped, sessions flushed")
    return 0


def cmd_simulate_client(args) -> int:
    from .protocol.client import SimulatedBoxClient

    host, port = args.server
    client = SimulatedBoxClient(
        host=host,
        port=port,
        box_id=args.box_id,
        genotype=args.genotype,
        seed=args.seed,
        time_scale=args.time_scale,
        vials=args.vials,
        specimens_per_vial=args.n,
    )
    stop = {"requested": False}

    def _sigint(signum, frame):
        stop["requested"] = True

    signal.signal(signal.SIGINT, _sigint)
    signal.signal(signal.SIGTERM, _sigint)
    client.start()
    print(f"box {args.box_id} connecting to {host}:{port}")
    try:
        while not stop["requested"] and not client.finished.is_set():
            time.sleep(0.2)
    finally:
        client.stop()
        print(f"box {args.box_id} stopped after {client.frames_sent} frame(s)")
    return 0


def cmd_export(args) -> int:
    tracks, events, _, _ = persistence.read_session(args.session)
    if not events:
        for track in tracks:
            events.extend(analysis.extract_events(track, tau=args.tau))
    persistence.export_events_csv(events, args.out)
    print(f"exported {len(events)} event(s) -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
