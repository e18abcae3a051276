"""Headless exploration loop, golden-run journals, replay verification and benchmarks.

Scenario file format (``.scenario``)::

    # explore3d-scenario v1
    world = maze            # generator name (maze | building | pillars) or a .scene path
    seed = 3                # generator seed and smoothing seed
    size = 20 20 3          # world extent for generators (m)
    resolution = 0.2
    start = 1 1 1
    d_min = 0.5
    d_max = 1.5
    lambda = 0.5
    l_x = 0.8
    ...

Every key is optional except ``world``; see :class:`Scenario` for defaults.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import statistics
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .frontier import FrontierStore, detect
from .oracles import AabbRgDetector, AabbWfdDetector, exhaustive_plan, naive_detect
from .planner import GainCache, UtilityParams, plan, smooth, trapezoid_time
from .roadmap import (RoadMap, RoadmapParams, assign_candidates, check_invariants,
                      determine_regions, extend, prune, segment_free)
from .sensor import Pose, SensorSpec, capture
from .voxel_map import FREE, OCCUPIED, UNKNOWN, VoxelMap
from .world import GENERATORS, GroundTruthWorld, parse_key_values

SCENARIO_HEADER = "# explore3d-scenario v1"
METRICS_SCHEMA = "explore3d-metrics/1"
JOURNAL_SCHEMA = "explore3d-journal/1"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BUDGET = 2


@dataclass
class Scenario:
    world: str = "maze"
    seed: int = 0
    size: tuple[float, float, float] = (20.0, 20.0, 3.0)
    resolution: float = 0.2
    start: tuple[float, float, float] = (1.0, 1.0, 1.0)
    start_yaw: float = 0.0
    hfov: float = 110.0
    vfov: float = 90.0
    min_range: float = 0.5
    max_range: float = 5.0
    d_min: float = 0.5
    d_max: float = 1.5
    lam: float = 0.5
    l_x: float = 0.8
    l_y: float = 0.8
    l_z: float = 0.8
    n_max: int = 200
    yaw_bins: int = 8
    gain_stride: int = 2
    v_max: float = 1.0
    a_max: float = 1.0
    z_min: float = 0.5
    z_max: float = 2.5
    smooth_iterations: int = 50
    max_epochs: int = 5000
    max_sim_time: float = 36000.0
    base_dir: Optional[str] = field(default=None, repr=False)

    # file key -> attribute, where they differ
    _ALIASES = {"lambda": "lam"}

    def __post_init__(self):
        positive = ["resolution", "max_range", "d_min", "d_max", "l_x", "l_y", "l_z",
                    "v_max", "a_max"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("n_max", "yaw_bins", "gain_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lam < 0 or self.max_epochs < 0 or self.max_sim_time < 0:
            raise ValueError("lambda and budgets must be non-negative")
        if self.d_min > self.d_max:
            raise ValueError("d_min must not exceed d_max")
        if self.z_min > self.z_max:
            raise ValueError("z_min must not exceed z_max")

    # -- derived parameter bundles -------------------------------------------
    @property
    def sensor(self) -> SensorSpec:
        return SensorSpec(self.hfov, self.vfov, self.min_range, self.max_range)

    @property
    def roadmap_params(self) -> RoadmapParams:
        return RoadmapParams(d_min=self.d_min, d_max=self.d_max, l=(self.l_x, self.l_y, self.l_z),
                             z_band=(self.z_min, self.z_max))

    def utility_params(self) -> UtilityParams:
        return UtilityParams.for_sensor(self.sensor, self.resolution, lam=self.lam,
                                        yaw_bins=self.yaw_bins, ray_stride=self.gain_stride)

    def world_path(self) -> Optional[Path]:
        """Scene file of a file-based world (resolved against ``base_dir``), else None."""
        if self.world in GENERATORS:
            return None
        path = Path(self.world)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return path

    def resolved(self) -> "Scenario":
        """Copy whose world reference no longer depends on the scenario file's directory."""
        path = self.world_path()
        if path is None:
            return self
        return replace(self, world=str(path.resolve()), base_dir=None)

    def build_world(self) -> GroundTruthWorld:
        path = self.world_path()
        if path is None:
            return GENERATORS[self.world](self.seed, size=self.size, resolution=self.resolution)
        return GroundTruthWorld.load(path, resolution=self.resolution)

    # -- text format -------------------------------------------------------
    @classmethod
    def _keys(cls) -> dict[str, str]:
        names = {f.name: f.name for f in fields(cls) if f.name != "base_dir"}
        names.pop("lam")
        names.update(cls._ALIASES)
        return names

    def to_text(self) -> str:
        lines = [SCENARIO_HEADER]
        for key, attr in self._keys().items():
            v = getattr(self, attr)
            if isinstance(v, tuple):
                v = " ".join(f"{x:g}" for x in v)
            elif isinstance(v, float):
                v = f"{v:g}"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base_dir: Optional[str] = None, **overrides) -> "Scenario":
        keys = cls._keys()
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, value in parse_key_values(text, SCENARIO_HEADER):
            if key not in keys:
                raise ValueError(f"unknown scenario key {key!r}")
            attr = keys[key]
            default = getattr(cls, attr) if hasattr(cls, attr) else None
            kw[attr] = _convert(value, default, types[attr], key)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(base_dir=base_dir, **kw)

    @classmethod
    def load(cls, path, **overrides) -> "Scenario":
        path = Path(path)
        return cls.from_text(path.read_text(), base_dir=str(path.parent), **overrides)


def _convert(value: str, default, type_name, key: str):
    try:
        if isinstance(default, tuple):
            parts = tuple(float(p) for p in value.split())
            if len(parts) != len(default):
                raise ValueError
            return parts
        if isinstance(default, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except ValueError:
        raise ValueError(f"bad value for {key!r}: {value!r}") from None


# -- metrics -------------------------------------------------------------------

@dataclass
class RunMetrics:
    header: dict
    steps: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: list[dict] = field(default_factory=list)  # wall-clock, kept out of the stream

    def lines(self) -> list[str]:
        out = [json.dumps(self.header, sort_keys=True)]
        out += [json.dumps(s, sort_keys=True) for s in self.steps]
        out.append(json.dumps({"summary": self.summary}, sort_keys=True))
        return out

    def to_jsonl(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def summary_csv(self) -> str:
        buf = io.StringIO()
        keys = sorted(self.summary)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        w.writerow([self.summary[k] for k in keys])
        return buf.getvalue()

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(self.to_jsonl())
        path.with_suffix(".csv").write_text(self.summary_csv())

    def write_timings(self, path) -> None:
        Path(path).write_text("".join(json.dumps(t, sort_keys=True) + "\n" for t in self.timings))


@dataclass
class RunResult:
    metrics: RunMetrics
    complete: bool
    journal: list[dict]
    violations: list[str]
    vmap: VoxelMap
    graph: RoadMap
    graph_log: list[dict] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.complete else EXIT_BUDGET


def frontier_digest(store: FrontierStore) -> str:
    return hashlib.sha256(store.frontier_keys().astype("<i8").tobytes()).hexdigest()


def _segment_safe(world: GroundTruthWorld, vmap: VoxelMap, a, b) -> bool:
    """Every point of a->b lies in a voxel that is Free in the map and in the world."""
    geo = vmap.geometry
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(2, int(math.ceil(np.linalg.norm(b - a) / (0.25 * geo.resolution))) + 1)
    pts = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
    idx = np.floor(geo.to_grid(pts)).astype(np.int64)
    if not geo.in_bounds_many(idx).all():
        return False
    mapped = vmap.flat[geo.keys(idx)] == FREE
    truth = ~world.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]]
    return bool(mapped.all() and truth.all())


def update_roadmap(graph: RoadMap, vmap: VoxelMap, fovs, report, rparams: RoadmapParams) -> list[int]:
    """Extend the roadmap into this epoch's sampling regions, then prune it."""
    if report.lost_occupied_keys.size:
        graph.forget_walled()
    regions = determine_regions(fovs, report.new_frontiers, vmap.geometry)
    added = extend(vmap, regions, graph, rparams)
    prune(graph, vmap, report.lost_free_keys, rparams)
    return added


class EpochChecker:
    """Per-epoch cross-checks against the oracles; collects violation messages."""

    def __init__(self, rparams: RoadmapParams, uparams: UtilityParams, d_max: float):
        self.rparams = rparams
        self.uparams = uparams
        self.d_max = d_max
        self.violations: list[str] = []

    def _fail(self, epoch: int, msg: str) -> None:
        self.violations.append(f"epoch {epoch}: {msg}")

    def detector(self, epoch, vmap, store, report) -> None:
        truth = naive_detect(vmap).keys
        got = store.frontier_keys()
        if not np.array_equal(truth, got):
            miss = np.setdiff1d(truth, got).size
            extra = np.setdiff1d(got, truth).size
            self._fail(epoch, f"frontier set differs from naive ({miss} missing, {extra} extra)")
        try:
            store.check()
        except AssertionError as e:
            self._fail(epoch, f"frontier store inconsistent: {e}")
        if report.max_examinations > 1:
            self._fail(epoch, f"voxel examined {report.max_examinations} times")

    def roadmap(self, epoch, graph, vmap) -> None:
        for v in check_invariants(graph, vmap, self.rparams):
            self._fail(epoch, f"roadmap: {v}")

    def planner(self, epoch, graph, candidates, robot, vmap, gains, lazy) -> None:
        ref = exhaustive_plan(graph, candidates, robot, vmap, self.uparams, gains, self.d_max)
        node = lazy.best.node if lazy.best else None
        util = lazy.best.utility if lazy.best else 0.0
        if node != ref.node or util != ref.utility:
            self._fail(epoch, f"lazy plan ({node}, {util}) != exhaustive ({ref.node}, {ref.utility})")
        if lazy.evaluated > ref.evaluated:
            self._fail(epoch, "lazy planner evaluated more gains than exhaustive")


class Explorer:
    """State of one exploration run; :meth:`run` drives the epoch loop."""

    def __init__(self, scenario: Scenario, world: Optional[GroundTruthWorld] = None,
                 verify: bool = False, record_graph: bool = False):
        self.sc = scenario
        self.graph_log: Optional[list[dict]] = [] if record_graph else None
        self.world = world or scenario.build_world()
        self.geo = self.world.geometry
        if not self.world.is_free(scenario.start):
            raise ValueError(f"start {scenario.start} is not in free space")
        self.spec = scenario.sensor
        self.rparams = scenario.roadmap_params
        self.uparams = scenario.utility_params()
        self.vmap = VoxelMap.from_geometry(self.geo)
        self.store = FrontierStore(self.geo)
        self.graph = RoadMap(scenario.start)
        self.gains = GainCache(self.vmap, self.graph, self.spec, self.uparams)
        self.checker = EpochChecker(self.rparams, self.uparams, scenario.d_max) if verify else None
        self.target = self.world.coverage_target(scenario.start)
        self.target_count = int(self.target.sum())
        self.robot = np.array(scenario.start, dtype=float)
        self.scan_id = 0
        self.pending = []
        self.pending_poses = []
        self.sim_time = 0.0
        self.distance = 0.0
        self.unsafe = 0
        self.blacklist: set[int] = set()
        self.path = None
        self.wp = 0
        self.goal = None
        self.journal: list[dict] = []

    # -- sensing -------------------------------------------------------------
    def capture(self, yaw: float) -> bool:
        self.scan_id += 1
        pose = Pose(tuple(self.robot), yaw)
        scan, fov = capture(pose, self.spec, self.world, self.scan_id)
        before = self.vmap.journal_end
        self.vmap.integrate_scan(scan, self.scan_id)
        self.pending.append(fov)
        self.pending_poses.append([*pose.position, pose.yaw])
        return self.vmap.journal_end != before

    def coverage(self) -> tuple[float, float]:
        known = self.vmap.states != UNKNOWN
        explored = float(np.count_nonzero(known)) * self.geo.resolution ** 3
        cov = float(np.count_nonzero(known & self.target)) / self.target_count
        return explored, cov

    def _step_record(self, epoch, report=None, result=None) -> dict:
        explored, cov = self.coverage()
        rec = {"epoch": epoch, "sim_time": self.sim_time, "distance": self.distance,
               "explored_m3": explored, "coverage": cov, "frontiers": len(self.store),
               "nodes": len(self.graph), "edges": self.graph.n_edges}
        if report is not None:
            rec["detector"] = report.to_record()
        if result is not None:
            rec["planner"] = result.to_record()
        return rec

    # -- planning ------------------------------------------------------------
    def _needs_replan(self, removed: set[int]) -> bool:
        if self.path is None or self.wp >= len(self.path.points):
            return True
        if self.goal["node"] not in self.graph.positions:
            return True
        if removed & set(self.goal["frontiers"]):
            return True
        return not segment_free(self.vmap, self.robot, self.path.points[self.wp])

    def _replan(self, epoch: int):
        cands = assign_candidates(self.graph, self.store.frontiers.values(), self.vmap,
                                  self.rparams, exclude=self.blacklist)
        result = plan(self.graph, cands, self.robot, self.vmap, self.uparams, self.gains,
                      self.sc.d_max)
        if self.checker is not None:
            self.checker.planner(epoch, self.graph, cands, self.robot, self.vmap, self.gains, result)
        best = result.best
        if best is None:
            self.path = None
            return result
        pts = [self.robot] + [self.graph.positions[n] for n in best.path]
        pts = [p for i, p in enumerate(pts) if i == 0 or np.linalg.norm(p - pts[i - 1]) > 1e-9]
        self.path = smooth(pts, self.vmap, self.sc.smooth_iterations,
                           seed=self.sc.seed * 100_003 + epoch,
                           v_max=self.sc.v_max, a_max=self.sc.a_max, final_yaw=best.yaw)
        self.wp = 1
        self.goal = {"node": best.node, "frontiers": best.frontier_ids, "yaw": best.yaw}
        return result

    def _advance(self) -> None:
        pts = self.path.points
        if self.wp < len(pts):
            nxt = pts[self.wp]
            seg = float(np.linalg.norm(nxt - self.robot))
            if not _segment_safe(self.world, self.vmap, self.robot, nxt):
                self.unsafe += 1
            self.sim_time += trapezoid_time(seg, self.sc.v_max, self.sc.a_max)
            self.distance += seg
            heading = math.atan2(nxt[1] - self.robot[1], nxt[0] - self.robot[0]) if seg > 0 else None
            self.robot = np.array(nxt, dtype=float)
            self.wp += 1
        else:
            heading = None
        if self.wp < len(pts):
            self.capture(heading if heading is not None else self.goal["yaw"])
            return
        # terminal pose: capture along the approach heading and at the optimized yaw
        changed = False
        if heading is not None:
            changed |= self.capture(heading)
        changed |= self.capture(self.goal["yaw"])
        if not changed:
            self.blacklist.add(self.goal["node"])
        self.path = None

    # -- loop ----------------------------------------------------------------
    def run(self) -> RunResult:
        sc = self.sc
        metrics = RunMetrics(header={"schema": METRICS_SCHEMA, "scenario": sc.to_text(),
                                     "coverage_target_voxels": self.target_count})
        # the journal must replay from any working directory
        self.journal.append({"schema": JOURNAL_SCHEMA, "scenario": sc.resolved().to_text()})
        for k in range(4):
            self.capture(sc.start_yaw + k * math.pi / 2.0)
        metrics.steps.append(self._step_record(-1))
        epoch = 0
        complete = False
        while epoch < sc.max_epochs and self.sim_time < sc.max_sim_time:
            t0 = time.perf_counter()
            fovs, poses = self.pending, self.pending_poses
            self.pending, self.pending_poses = [], []
            report = detect(self.vmap, fovs, self.store, sc.n_max,
                            instrument=self.checker is not None)
            self.gains.invalidate(report.changed_keys)
            t1 = time.perf_counter()
            update_roadmap(self.graph, self.vmap, fovs, report, self.rparams)
            t2 = time.perf_counter()
            if self.graph_log is not None:
                self.graph_log.append({"epoch": epoch, "graph": self.graph.to_records()})
            if self.checker is not None:
                self.checker.detector(epoch, self.vmap, self.store, report)
                self.checker.roadmap(epoch, self.graph, self.vmap)
            entry = {"epoch": epoch, "captures": poses, "digest": frontier_digest(self.store)}
            result = None
            if self._needs_replan(set(report.removed)):
                entry["plan"] = {"robot": self.robot.tolist(), "exclude": sorted(self.blacklist)}
                result = self._replan(epoch)
                entry["plan"]["node"] = result.best.node if result.best else None
            t3 = time.perf_counter()
            self.journal.append(entry)
            if result is not None and result.best is None:
                complete = True
                metrics.steps.append(self._step_record(epoch, report, result))
                metrics.timings.append({"epoch": epoch, "detect": t1 - t0, "roadmap": t2 - t1,
                                        "plan": t3 - t2})
                break
            self._advance()
            metrics.steps.append(self._step_record(epoch, report, result))
            metrics.timings.append({"epoch": epoch, "detect": t1 - t0, "roadmap": t2 - t1,
                                    "plan": t3 - t2, "execute": time.perf_counter() - t3})
            epoch += 1
        explored, cov = self.coverage()
        violations = self.checker.violations if self.checker else []
        metrics.summary = {"status": "complete" if complete else "incomplete",
                           "epochs": epoch, "coverage": cov, "explored_m3": explored,
                           "distance": self.distance, "sim_time": self.sim_time,
                           "safety_violations": self.unsafe, "check_violations": len(violations)}
        return RunResult(metrics, complete, self.journal, violations, self.vmap, self.graph,
                         self.graph_log or [])


def run(scenario: Scenario, verify: bool = False, world: Optional[GroundTruthWorld] = None,
        record_graph: bool = False) -> RunResult:
    """Run one scenario; ``record_graph`` keeps a roadmap snapshot after every update."""
    return Explorer(scenario, world=world, verify=verify, record_graph=record_graph).run()


# -- journals and replay -------------------------------------------------------

def write_journal(entries: list[dict], path) -> None:
    Path(path).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in entries))


def read_journal(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    entries = [json.loads(ln) for ln in lines]
    if not entries or entries[0].get("schema") != JOURNAL_SCHEMA:
        raise ValueError("not an exploration journal")
    return entries


@dataclass
class ReplayVerdict:
    ok: bool
    epochs: int
    failed_epoch: Optional[int] = None
    messages: list[str] = field(default_factory=list)
    mutations: int = 0

    def __str__(self) -> str:
        if self.ok:
            return f"PASS: {self.epochs} epochs verified"
        return f"FAIL at epoch {self.failed_epoch}: {self.messages[0]}"


def _mutate(vmap: VoxelMap, fovs, count: int, rng: np.random.Generator, scan_id: int) -> int:
    boxes = [f.aabb for f in fovs if f.aabb is not None]
    done = 0
    for _ in range(count):
        if not boxes:
            break
        box = boxes[int(rng.integers(len(boxes)))]
        idx = tuple(int(rng.integers(lo, hi + 1)) for lo, hi in zip(box.lo, box.hi))
        cur = int(vmap.state_at(idx))
        new = int(rng.choice([s for s in (UNKNOWN, FREE, OCCUPIED) if s != cur]))
        vmap.set_state(idx, new, scan_id)
        done += 1
    return done


def replay(entries: list[dict], mutations: int = 0, seed: int = 0,
           world: Optional[GroundTruthWorld] = None, stop_at_first: bool = True) -> ReplayVerdict:
    """Re-apply recorded captures and check every epoch against the oracles.

    With ``mutations > 0`` that many random voxel-state changes are injected
    inside the recorded FOV boxes (spread over the epochs); the recorded
    frontier digests and plan targets are then not compared, only the
    oracle equivalences and roadmap invariants.
    """
    sc = Scenario.from_text(entries[0]["scenario"])
    world = world or sc.build_world()
    geo = world.geometry
    spec = sc.sensor
    rparams = sc.roadmap_params
    uparams = sc.utility_params()
    vmap = VoxelMap.from_geometry(geo)
    store = FrontierStore(geo)
    graph = RoadMap(sc.start)
    gains = GainCache(vmap, graph, spec, uparams)
    checker = EpochChecker(rparams, uparams, sc.d_max)
    rng = np.random.default_rng(seed)
    epochs = entries[1:]
    per_epoch = [mutations // max(1, len(epochs)) + (1 if i < mutations % max(1, len(epochs)) else 0)
                 for i in range(len(epochs))]
    verdict = ReplayVerdict(ok=True, epochs=0)
    scan_id = 0
    for i, rec in enumerate(epochs):
        epoch = rec["epoch"]
        fovs = []
        for x, y, z, yaw in rec["captures"]:
            scan_id += 1
            scan, fov = capture(Pose((x, y, z), yaw), spec, world, scan_id)
            vmap.integrate_scan(scan, scan_id)
            fovs.append(fov)
        if per_epoch[i]:
            verdict.mutations += _mutate(vmap, fovs, per_epoch[i], rng, scan_id)
        report = detect(vmap, fovs, store, sc.n_max, instrument=True)
        gains.invalidate(report.changed_keys)
        n_before = len(checker.violations)
        checker.detector(epoch, vmap, store, report)
        if not mutations and frontier_digest(store) != rec["digest"]:
            checker._fail(epoch, "frontier set digest does not match the journal")
        update_roadmap(graph, vmap, fovs, report, rparams)
        checker.roadmap(epoch, graph, vmap)
        if "plan" in rec:
            p = rec["plan"]
            cands = assign_candidates(graph, store.frontiers.values(), vmap, rparams,
                                      exclude=p["exclude"])
            result = plan(graph, cands, np.array(p["robot"]), vmap, uparams, gains, sc.d_max)
            checker.planner(epoch, graph, cands, np.array(p["robot"]), vmap, gains, result)
            node = result.best.node if result.best else None
            if not mutations and node != p["node"]:
                checker._fail(epoch, f"plan target {node} differs from recorded {p['node']}")
        verdict.epochs += 1
        if len(checker.violations) > n_before:
            if verdict.ok:
                verdict.ok = False
                verdict.failed_epoch = epoch
            verdict.messages.extend(checker.violations[n_before:])
            if stop_at_first:
                break
    return verdict


# -- detector benchmark -------------------------------------------------------

DETECTORS = ("f3d", "aabb_rg", "aabb_wfd", "naive")


@dataclass
class BenchResult:
    rows: list[tuple[str, int, int, float]]  # detector, iteration, scanned voxels, microseconds
    mismatches: list[str]

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in dict.fromkeys(r[0] for r in self.rows):
            us = [r[3] for r in self.rows if r[0] == name]
            sc = [r[2] for r in self.rows if r[0] == name]
            out[name] = {"avg_us": statistics.fmean(us), "std_us": statistics.pstdev(us),
                         "avg_scanned": statistics.fmean(sc), "total_scanned": int(sum(sc)),
                         "iterations": len(us)}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detector", "iteration", "scanned", "micros"])
        for name, it, sc, us in self.rows:
            w.writerow([name, it, sc, f"{us:.1f}"])
        return buf.getvalue()


def bench(entries: list[dict], detectors=DETECTORS, world: Optional[GroundTruthWorld] = None,
          check: bool = True) -> BenchResult:
    """Replay one recorded capture stream through several detectors on a shared map."""
    unknown = set(detectors) - set(DETECTORS)
    if unknown:
        raise ValueError(f"unknown detectors: {sorted(unknown)}")
    sc = Scenario.from_text(entries[0]["scenario"])
    world = world or sc.build_world()
    geo = world.geometry
    vmap = VoxelMap.from_geometry(geo)
    store = FrontierStore(geo)
    rg = AabbRgDetector(vmap)
    wfd = AabbWfdDetector(vmap)
    rows = []
    mismatches = []
    scan_id = 0
    for it, rec in enumerate(entries[1:]):
        fovs = []
        for x, y, z, yaw in rec["captures"]:
            scan_id += 1
            scan, fov = capture(Pose((x, y, z), yaw), sc.sensor, world, scan_id)
            vmap.integrate_scan(scan, scan_id)
            fovs.append(fov)
        boxes = [f.aabb for f in fovs]
        seeds = [geo.world_to_index(f.pose.position) for f in fovs]
        sets = {}
        for name in detectors:
            if name == "f3d":
                t0 = time.perf_counter()
                rep = detect(vmap, fovs, store, sc.n_max)
                us = (time.perf_counter() - t0) * 1e6
                sets[name] = store.frontier_keys()
                rows.append((name, it, rep.scanned, us))
            else:
                if name == "aabb_rg":
                    rep = rg.detect(vmap, boxes)
                elif name == "aabb_wfd":
                    rep = wfd.detect(vmap, boxes, seeds)
                else:
                    rep = naive_detect(vmap)
                sets[name] = rep.keys
                rows.append((name, it, rep.scanned, rep.elapsed * 1e6))
        if check and len(sets) > 1:
            ref_name, ref = next(iter(sets.items()))
            for name, keys in sets.items():
                if not np.array_equal(ref, keys):
                    mismatches.append(f"iteration {it}: {name} differs from {ref_name}")
    return BenchResult(rows, mismatches)
