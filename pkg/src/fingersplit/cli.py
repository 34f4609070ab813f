"""``fingersplit`` command line: single plans and batch benchmarks.

Exit codes: 0 success, 1 configuration or I/O error, 2 no feasible seed or
unmappable grasp, 3 planner error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import io, meshes
from .cpo import CpoParams
from .kinematics import default_hand_path, load_hand
from .ppo import PpoParams
from .quality import QualityWeights
from .splitter import (
    InfeasibleGraspError,
    ParallelGrasp,
    SeedingError,
    SplitterParams,
    make_proxy,
    max_span,
    run_split,
    seed_antipodal,
)
from .surface import SurfaceModel, load_mesh

log = logging.getLogger("fingersplit")

EXIT_OK, EXIT_IO, EXIT_SEED, EXIT_PLANNER = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
SPLITTER_SCALARS = tuple(f.name for f in fields(SplitterParams) if f.name not in ("cpo", "ppo", "weights"))
BENCH_COLUMNS = (
    "object", "outer_iters", "cpo_iters", "ppo_iters", "time_ms", "n_vertices",
    "Q_before", "Q_after", "isotropy_before", "isotropy_after", "volume_before", "volume_after",
    "fc_before", "fc_after", "map_ms", "cpo_ms", "ppo_ms", "tangent_ms", "projection_ms", "collision_ms", "reason",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mesh: Optional[str] = None
    format: Optional[str] = None
    scale: float = 1.0
    hand: Optional[str] = None
    seed: int = 0
    n_samples: int = 256
    grasp: Optional[str] = None
    out: str = "out"
    workers: int = 1
    cpo: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    splitter: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def splitter_params(self) -> SplitterParams:
        try:
            extra = set(self.splitter) - set(SPLITTER_SCALARS)
            if extra:
                raise ConfigError(f"unknown splitter keys: {sorted(extra)}")
            return SplitterParams(
                cpo=CpoParams(**self.cpo),
                ppo=PpoParams(**self.ppo),
                weights=QualityWeights(**self.weights),
                **self.splitter,
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def hand_path(self) -> str:
        return self.hand or str(default_hand_path())

    def echo(self) -> dict:
        d = asdict(self)
        d["resolved"] = asdict(self.splitter_params())
        return d


def parse_grasp(text: str) -> ParallelGrasp:
    """``'c1x,c1y,c1z;c2x,c2y,c2z;vx,vy,vz'``."""
    parts = [p for p in text.split(";")]
    if len(parts) != 3:
        raise ConfigError("--grasp needs three ';'-separated vectors")
    try:
        vecs = [np.array([float(x) for x in p.split(",")]) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad --grasp value: {exc}") from exc
    if any(v.shape != (3,) for v in vecs):
        raise ConfigError("--grasp vectors need three components")
    try:
        return ParallelGrasp(*vecs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def setup_logging() -> None:
    level = os.environ.get("FS_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_surface(spec: str, fmt: Optional[str], scale: float):
    if spec.startswith("fixture:"):
        try:
            surf = meshes.fixture(spec.split(":", 1)[1])
        except KeyError as exc:
            raise FileNotFoundError(str(exc)) from exc
        if scale != 1.0:
            surf = SurfaceModel.from_arrays(surf.vertices * scale, surf.triangles, surf.vertex_normals, center=False)
        return surf
    return load_mesh(spec, fmt, scale)


def plan_once(cfg: RunConfig, surface=None, hand=None):
    """Seed (unless a grasp is given), map and plan.  Returns a PlanResult."""
    params = cfg.splitter_params()
    hand = load_hand(cfg.hand_path()) if hand is None else hand
    surface = _load_surface(cfg.mesh, cfg.format, cfg.scale) if surface is None else surface
    span = max_span(hand)
    proxy = make_proxy(surface, params.proxy_cell_fraction)
    if cfg.grasp:
        g = parse_grasp(cfg.grasp)
    else:
        g = seed_antipodal(surface, cfg.n_samples, params.mu, cfg.seed, span=span)
    return run_split(g, surface, hand, params, proxy, span=span), surface, hand


def cmd_plan(cfg: RunConfig) -> int:
    if not cfg.mesh:
        log.error("plan needs --mesh")
        return EXIT_IO
    try:
        params_echo = cfg.echo()
        hand = load_hand(cfg.hand_path())
        surface = _load_surface(cfg.mesh, cfg.format, cfg.scale)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_IO
    except (OSError, ValueError) as exc:
        log.error("cannot read input: %s", exc)
        return EXIT_IO
    try:
        result, surface, hand = plan_once(cfg, surface, hand)
    except (SeedingError, InfeasibleGraspError) as exc:
        log.error("no feasible grasp: %s", exc)
        return EXIT_SEED
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        log.error("planner failed: %s", exc)
        return EXIT_PLANNER
    try:
        out = io.ensure_dir(cfg.out)
        io.write_grasp_json(out / "grasp.json", result, params_echo)
        io.write_trace_csv(out / "trace.csv", result.trace)
        io.export_scene(result.final, hand, surface, out / "scene.obj")
    except OSError as exc:
        log.error("cannot write outputs: %s", exc)
        return EXIT_IO
    log.info("plan finished: %s after %d outer iterations, %.1f ms", result.reason, result.outer_iterations,
             result.timing["total_ms"])
    return EXIT_PLANNER if result.reason == "error" else EXIT_OK


def read_mesh_list(path) -> list:
    """Entries ``PATH [SCALE]`` or ``fixture:NAME``; ``#`` starts a comment."""
    entries = []
    base = Path(path).parent
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            spec = parts[0]
            if not spec.startswith("fixture:") and not Path(spec).is_absolute():
                spec = str(base / spec)
            entries.append((spec, float(parts[1]) if len(parts) > 1 else 1.0))
    return entries


def _object_name(spec: str) -> str:
    return spec.split(":", 1)[1] if spec.startswith("fixture:") else Path(spec).stem


def bench_row(args) -> dict:
    """One benchmark row; failures become rows carrying the reason."""
    cfg, spec, scale = args
    row = {"object": _object_name(spec)}
    try:
        surface = _load_surface(spec, None, scale)
        row["n_vertices"] = surface.n_vertices
        t0 = time.perf_counter()
        result, _, _ = plan_once(replace(cfg, mesh=spec, scale=scale), surface)
        elapsed = 1e3 * (time.perf_counter() - t0)
    except (SeedingError, InfeasibleGraspError) as exc:
        row["reason"] = f"infeasible: {exc}"
        return row
    except Exception as exc:  # noqa: BLE001 - recorded in the row
        row["reason"] = f"error: {type(exc).__name__}: {exc}"
        return row
    b, a = result.metrics_before, result.metrics_after
    row.update(
        outer_iters=result.outer_iterations,
        cpo_iters=sum(result.cpo_iterations),
        ppo_iters=sum(result.ppo_iterations),
        time_ms=elapsed,
        Q_before=b.q_total, Q_after=a.q_total,
        isotropy_before=b.isotropy, isotropy_after=a.isotropy,
        volume_before=b.wrench_volume, volume_after=a.wrench_volume,
        fc_before=b.ferrari_canny, fc_after=a.ferrari_canny,
        reason=result.reason,
    )
    for k in ("map_ms", "cpo_ms", "ppo_ms", "tangent_ms", "projection_ms", "collision_ms"):
        row[k] = result.timing[k]
    return row


def mean_row(rows) -> dict:
    out = {"object": "mean"}
    ok = [r for r in rows if "outer_iters" in r]
    for col in BENCH_COLUMNS[1:-1]:
        vals = [r[col] for r in ok if col in r]
        if vals:
            out[col] = float(np.mean(vals))
    out["reason"] = f"{len(ok)}/{len(rows)} planned"
    return out


def write_bench_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            cells = []
            for col in BENCH_COLUMNS:
                v = r.get(col, "")
                cells.append(io.fmt(v) if isinstance(v, (float, np.floating)) else v)
            w.writerow(cells)


def cmd_bench(cfg: RunConfig, mesh_list: str) -> int:
    try:
        entries = read_mesh_list(mesh_list)
        cfg.splitter_params()
    except (OSError, ValueError) as exc:
        log.error("cannot read benchmark list: %s", exc)
        return EXIT_IO
    if not entries:
        log.error("benchmark list is empty")
        return EXIT_IO
    jobs = [(cfg, spec, scale) for spec, scale in entries]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(bench_row, jobs))
    else:
        rows = [bench_row(j) for j in jobs]
    rows.append(mean_row(rows))
    try:
        out = io.ensure_dir(cfg.out)
        write_bench_csv(out / "bench.csv", rows)
    except OSError as exc:
        log.error("cannot write outputs: %s", exc)
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fingersplit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--hand", help="hand config JSON (default: bundled 8-DOF hand)")
    common.add_argument("--config", help="JSON run config; command-line flags override it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for antipodal sampling")

    plan = sub.add_parser("plan", parents=[common], help="plan one grasp")
    plan.add_argument("--mesh", help="OBJ/STL/PLY file or fixture:NAME")
    plan.add_argument("--format", choices=("obj", "stl", "ply"))
    plan.add_argument("--scale", type=float)
    plan.add_argument("--grasp", help="parallel grasp 'c1x,c1y,c1z;c2x,c2y,c2z;vx,vy,vz'")

    bench = sub.add_parser("bench", parents=[common], help="plan every mesh of a list")
    bench.add_argument("--list", required=True, dest="mesh_list", help="mesh list file")
    bench.add_argument("--workers", type=int)
    return p


def config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    cfg = RunConfig.from_dict(base)
    overrides = {k: getattr(args, k, None) for k in ("mesh", "format", "scale", "hand", "seed", "grasp", "out", "workers")}
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except (OSError, ValueError, TypeError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_IO
    if args.command == "plan":
        return cmd_plan(cfg)
    return cmd_bench(cfg, args.mesh_list)


if __name__ == "__main__":
    sys.exit(main())
