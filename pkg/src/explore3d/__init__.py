"""Fast frontier-based exploration of 3-D voxel worlds.

Modules:

* :mod:`~explore3d.voxel_map` -- ternary voxel grid with a change journal
* :mod:`~explore3d.sensor` -- simulated depth camera
* :mod:`~explore3d.frontier` -- incremental FOV-based frontier detection
* :mod:`~explore3d.roadmap` -- incremental Sukharev-grid roadmap
* :mod:`~explore3d.planner` -- lazy utility-maximizing planner and smoothing
* :mod:`~explore3d.oracles` -- independent reference implementations
* :mod:`~explore3d.sim` -- exploration loop, replay and benchmarks
"""
from .frontier import Frontier, FrontierStore, detect
from .planner import UtilityParams, optimize_yaw, plan, radius_bound, smooth, utility, voxel_gain
from .roadmap import RoadMap, RoadmapParams, assign_candidates, determine_regions, extend, prune
from .sensor import Pose, SensorSpec, capture
from .sim import Scenario, run
from .voxel_map import Aabb, GridGeometry, VoxelMap, VoxelState
from .world import GroundTruthWorld

__version__ = "0.1.0"

__all__ = [
    "Aabb", "Frontier", "FrontierStore", "GridGeometry", "GroundTruthWorld", "Pose", "RoadMap",
    "RoadmapParams", "Scenario", "SensorSpec", "UtilityParams", "VoxelMap", "VoxelState",
    "assign_candidates", "capture", "detect", "determine_regions", "extend", "optimize_yaw",
    "plan", "prune", "radius_bound", "run", "smooth", "utility", "voxel_gain",
]
