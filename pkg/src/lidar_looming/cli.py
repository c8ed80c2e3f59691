"""Command-line driver: simulate, project, estimate, classify, render, evaluate.

Exit codes: 0 success, 1 validation or parse error, 2 an acceptance bound
(``eval`` / ``bench`` limits) was not met.
"""

from __future__ import annotations

import argparse
import logging
import statistics
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .errors import InvalidInputError, LoomingError
from .geometry import Vec3
from .looming import (
    DEFAULT_L_MAX,
    DEFAULT_THRESHOLDS,
    ThreatClass,
    classify_threat,
    compare_maps,
    loom_from_grids,
    loom_from_velocity,
    validate_thresholds,
)
from .range_image import GridSpec, PointCloud, RangeImage, decimate, fill_gaps, project
from .synth import DEMO_RATE_HZ, DEMO_SPEED, VehicleState, demo_scene, ground_truth_map, load_scene, simulate_scan

log = logging.getLogger("lidar_looming")

EXIT_OK, EXIT_INVALID, EXIT_BOUND = 0, 1, 2


class UsageError(LoomingError):
    pass


# -- value parsers shared by flags and config files ------------------------------------------


def _floats(text: str, n: int, what: str) -> tuple[float, ...]:
    parts = text.split(",")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} comma-separated numbers, got {text!r}")
    return vals


def parse_grid(text: str) -> tuple[int, int]:
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"grid: expected WxH, got {text!r}") from None
    return w, h


def _int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"{what}: expected an integer, got {text!r}") from None


def _float(text: str, what: str) -> float:
    return _floats(text, 1, what)[0]


_CONVERTERS = {
    "grid": parse_grid,
    "dt": lambda s: _float(s, "dt"),
    "thresholds": lambda s: _floats(s, 3, "thresholds"),
    "clamp": lambda s: _float(s, "clamp"),
    "fill": lambda s: _int(s, "fill"),
    "decimate": lambda s: tuple(int(v) for v in _floats(s, 2, "decimate")),
    "scale": lambda s: _float(s, "scale"),
    "noise": lambda s: _float(s, "noise"),
    "seed": lambda s: _int(s, "seed"),
    "edge": lambda s: _int(s, "edge"),
    "velocity": lambda s: Vec3(*_floats(s, 3, "velocity")),
}


@dataclass(frozen=True)
class RunConfig:
    grid: tuple[int, int] = (2000, 64)
    dt: Optional[float] = None
    thresholds: tuple[float, float, float] = DEFAULT_THRESHOLDS
    clamp: float = DEFAULT_L_MAX
    fill: int = 0
    decimate: tuple[int, int] = (1, 1)
    scale: float = 1.0
    noise: float = 0.0
    seed: int = 0
    edge: int = 1
    velocity: Optional[Vec3] = None

    def validate(self) -> "RunConfig":
        spec = self.spec
        if self.dt is not None and not self.dt > 0:
            raise InvalidInputError("dt must be > 0")
        validate_thresholds(*self.thresholds)
        if not self.clamp > 0:
            raise InvalidInputError("clamp must be > 0")
        if self.fill < 0:
            raise InvalidInputError("fill must be >= 0")
        if min(self.decimate) < 1 or spec.width % self.decimate[0] or spec.height % self.decimate[1]:
            raise InvalidInputError(f"decimation {self.decimate} must divide the grid {spec.width}x{spec.height}")
        io.ColorScale(self.scale)
        if not self.noise >= 0:
            raise InvalidInputError("noise must be >= 0")
        if self.edge < 0:
            raise InvalidInputError("edge exclusion must be >= 0")
        return self

    @property
    def spec(self) -> GridSpec:
        return GridSpec(width=self.grid[0], height=self.grid[1])


def load_config(path) -> dict:
    """Read a flat ``key=value`` file; keys are the long flag names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _CONVERTERS:
            raise UsageError(f"{path}: line {lineno}: unknown or malformed setting {line!r}")
        out[key] = _CONVERTERS[key](value.strip())
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = replace(cfg, **load_config(args.config))
    flags = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name, None) is not None}
    cfg = replace(cfg, **{k: _CONVERTERS[k](v) for k, v in flags.items()})
    return cfg.validate()


# -- helpers ------------------------------------------------------------------------------------------


def _is_velodyne(path) -> bool:
    return Path(path).suffix.lower() == ".bin"


def read_scan(path, cfg: RunConfig, timestamp: float = 0.0) -> RangeImage:
    """Load an RGRID file as is, or project a Velodyne ``.bin`` onto the configured grid."""
    if not _is_velodyne(path):
        img = io.read_rgrid(path)
    else:
        cloud = io.read_velodyne_bin(path, timestamp)
        img = project(cloud, cfg.spec)
        log.info("%s: %d points, %d binned, %d dropped", path, img.stats.total, img.stats.binned, img.stats.dropped)
    if cfg.fill:
        img = fill_gaps(img, cfg.fill)
    if cfg.decimate != (1, 1):
        img = decimate(img, *cfg.decimate)
    return img


def read_cloud(path, timestamp: float = 0.0) -> PointCloud:
    if not _is_velodyne(path):
        return io.read_rgrid(path).to_cloud()
    return io.read_velodyne_bin(path, timestamp)


def _write_map(lmap, cfg: RunConfig, out: Path) -> None:
    io.write_lgrid(lmap, out)
    io.write_looming_ppm(lmap, io.ColorScale(cfg.scale), out.with_suffix(".ppm"))
    print(f"wrote {out} and {out.with_suffix('.ppm')}: {lmap.valid_count} cells, clamped={lmap.clamped}")


# -- commands -------------------------------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> int:
    scene = load_scene(args.scene) if args.scene else demo_scene()
    t = cfg.velocity if cfg.velocity is not None else Vec3(DEMO_SPEED, 0.0, 0.0)
    state = VehicleState(t=t, omega_z=args.yaw_rate)
    dt = cfg.dt if cfg.dt is not None else 1.0 / DEMO_RATE_HZ
    rng = np.random.default_rng(cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.spec
    for k in range(args.frames):
        at = k * dt
        scan = simulate_scan(scene, state, spec, at, noise_sigma=cfg.noise, rng=rng)
        truth = ground_truth_map(scene, state, spec, at, l_max=cfg.clamp)
        truth.dt = dt
        io.write_rgrid(scan, out / f"frame_{k:03d}.rgrid")
        io.write_lgrid(truth, out / f"truth_{k:03d}.lgrid")
    print(f"wrote {args.frames} frames to {out} (dt={dt:g} s, grid {spec.width}x{spec.height})")
    return EXIT_OK


def cmd_project(args, cfg: RunConfig) -> int:
    img = read_scan(args.scan, cfg, args.timestamp)
    io.write_rgrid(img, args.out)
    print(f"wrote {args.out}: {img.valid_count} of {img.spec.width * img.spec.height} cells valid")
    return EXIT_OK


def cmd_loom_grid(args, cfg: RunConfig) -> int:
    prev = read_scan(args.prev, cfg)
    curr = read_scan(args.curr, cfg)
    dt = cfg.dt
    if dt is None:
        gap = curr.timestamp - prev.timestamp
        dt = gap if gap > 0 else 1.0 / DEMO_RATE_HZ
    lmap = loom_from_grids(prev, curr, dt, cfg.clamp)
    _write_map(lmap, cfg, Path(args.out))
    return EXIT_OK


def cmd_loom_imu(args, cfg: RunConfig) -> int:
    cloud = read_cloud(args.scan, args.timestamp)
    if args.ego:
        stamp = args.timestamp if args.timestamp is not None else cloud.timestamp
        t = io.velocity_at(io.read_ego_motion(args.ego), stamp)
    elif cfg.velocity is not None:
        t = cfg.velocity
    else:
        raise UsageError("loom-imu needs --ego FILE or --velocity X,Y,Z")
    spec = cfg.spec
    lmap = loom_from_velocity(cloud, t, spec, l_max=cfg.clamp)
    _write_map(lmap, cfg, Path(args.out))
    return EXIT_OK


def cmd_threat(args, cfg: RunConfig) -> int:
    lmap = io.read_lgrid(args.lgrid, cfg.clamp)
    tmap = classify_threat(lmap, *cfg.thresholds)
    io.write_threat_ppm(tmap, args.out)
    counts = tmap.counts()
    print(" ".join(f"{c.name.lower()}={counts[c]}" for c in ThreatClass))
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    est = io.read_lgrid(args.est, cfg.clamp)
    truth = io.read_lgrid(args.truth, cfg.clamp)
    ranges = io.read_rgrid(args.ranges).ranges if args.ranges else None
    stats = compare_maps(est, truth, cfg.edge, ranges)
    print(stats.line())
    if stats.empty:
        print("error: no cells are VALID in both maps outside the edge band", file=sys.stderr)
        return EXIT_BOUND
    failed = []
    if args.min_frac10 is not None and not stats.frac10 >= args.min_frac10:
        failed.append(f"frac10 {stats.frac10:.6g} < {args.min_frac10:g}")
    if args.max_median is not None and not stats.median <= args.max_median:
        failed.append(f"median {stats.median:.6g} > {args.max_median:g}")
    if args.max_p90 is not None and not stats.p90 <= args.max_p90:
        failed.append(f"p90 {stats.p90:.6g} > {args.max_p90:g}")
    for msg in failed:
        print(f"bound failed: {msg}", file=sys.stderr)
    return EXIT_BOUND if failed else EXIT_OK


def _demo_pair(spec: GridSpec, dt: float) -> tuple[PointCloud, PointCloud]:
    """Two noisy demo-scene clouds, cast at twice the azimuth resolution so
    the point count is close to a real 64-beam sweep."""
    scene, state = demo_scene(), VehicleState(t=Vec3(DEMO_SPEED, 0.0, 0.0))
    rng = np.random.default_rng(0)
    dense = spec.with_size(2 * spec.width, spec.height)
    clouds = []
    for at in (0.0, dt):
        scan = simulate_scan(scene, state, dense, at, noise_sigma=0.02, rng=rng)
        cloud = scan.to_cloud()
        cloud.timestamp = at
        clouds.append(cloud)
    return clouds[0], clouds[1]


def bench_pair(prev: PointCloud, curr: PointCloud, spec: GridSpec, dt: float, iterations: int) -> list[float]:
    """Wall time in ms of projecting both clouds and running the grid estimator."""
    times = []
    for _ in range(iterations):
        start = time.perf_counter()
        loom_from_grids(project(prev, spec), project(curr, spec), dt)
        times.append((time.perf_counter() - start) * 1e3)
    return times


def cmd_bench(args, cfg: RunConfig) -> int:
    spec = cfg.spec
    dt = cfg.dt if cfg.dt is not None else 1.0 / DEMO_RATE_HZ
    if args.scans:
        if len(args.scans) != 2:
            raise UsageError("bench takes either no scans or exactly two .bin files")
        prev, curr = (read_cloud(p) for p in args.scans)
    else:
        prev, curr = _demo_pair(spec, dt)
    bench_pair(prev, curr, spec, dt, 1)  # warm-up
    if args.iterations < 1:
        raise UsageError("--iterations must be >= 1")
    times = bench_pair(prev, curr, spec, dt, args.iterations)
    median = statistics.median(times)
    print(
        f"median_ms={median:.3f} min_ms={min(times):.3f} max_ms={max(times):.3f} "
        f"iterations={args.iterations} points={len(prev)}+{len(curr)} grid={spec.width}x{spec.height}"
    )
    if args.max_ms is not None and median >= args.max_ms:
        print(f"bound failed: median {median:.3f} ms >= {args.max_ms:g} ms", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("pipeline settings (override --config)")
    g.add_argument("--config", metavar="PATH", help="flat key=value settings file")
    g.add_argument("--grid", metavar="WxH", help="range image size (default 2000x64)")
    g.add_argument("--dt", metavar="S", help="scan interval in seconds")
    g.add_argument("--thresholds", metavar="L1,L2,L3", help="threat thresholds in 1/s")
    g.add_argument("--clamp", metavar="L", help="looming magnitude clamp in 1/s")
    g.add_argument("--fill", metavar="N", help="fill azimuth gaps up to N cells")
    g.add_argument("--decimate", metavar="A,B", help="block-min decimation factors (azimuth, elevation)")
    g.add_argument("--scale", metavar="L", help="looming that maps to full color")
    g.add_argument("--noise", metavar="SIGMA", help="simulated range noise in metres")
    g.add_argument("--seed", metavar="N", help="noise seed")
    g.add_argument("--edge", metavar="N", help="edge exclusion radius in cells")
    g.add_argument("--velocity", metavar="X,Y,Z", help="sensor-frame translation velocity in m/s")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="lidar-looming", description="Looming estimation from LiDAR range images.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="ray-cast scans and ground-truth looming")
    p.add_argument("--scene", help="scene file (default: built-in demo scene)")
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--yaw-rate", type=float, default=0.0, metavar="RAD_S")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("project", parents=[common], help="Velodyne .bin to RGRID")
    p.add_argument("scan")
    p.add_argument("--timestamp", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("loom-grid", parents=[common], help="looming from two consecutive scans")
    p.add_argument("prev")
    p.add_argument("curr")
    p.add_argument("--out", required=True, help="output LGRID; a PPM is written next to it")
    p.set_defaults(func=cmd_loom_grid)

    p = sub.add_parser("loom-imu", parents=[common], help="looming from one scan and ego velocity")
    p.add_argument("scan")
    p.add_argument("--ego", help="ego-motion CSV (timestamp,vx,vy,vz)")
    p.add_argument("--timestamp", type=float, default=None, help="scan time for the ego-motion lookup")
    p.add_argument("--out", required=True, help="output LGRID; a PPM is written next to it")
    p.set_defaults(func=cmd_loom_imu)

    p = sub.add_parser("threat", parents=[common], help="threat-zone image from an LGRID")
    p.add_argument("lgrid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_threat)

    p = sub.add_parser("eval", parents=[common], help="compare an estimate against ground truth")
    p.add_argument("est")
    p.add_argument("truth")
    p.add_argument("--ranges", help="RGRID locating range edges for exclusion")
    p.add_argument("--min-frac10", type=float)
    p.add_argument("--max-median", type=float)
    p.add_argument("--max-p90", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="time project + loom_from_grids")
    p.add_argument("scans", nargs="*", help="two .bin scans (default: simulated demo pair)")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--max-ms", type=float, help="exit 2 if the median is not below this")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except (LoomingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
