"""Frontier-based autonomous exploration for a simulated depth-camera MAV.

The map is a Morton-indexed occupancy octree whose blocks double as
frontier clusters; candidate next-views are stride-sampled from the sorted
frontier list, reached with informed RRT*, and ranked by visible map
entropy over travel time.
"""

from .driver import (
    IterationPlan,
    MetricsLog,
    RunResult,
    StartPoseError,
    export_map,
    export_metrics,
    plan_iteration,
    run_exploration,
)
from .evaluation import (
    CandidatePose,
    DepthImage360,
    EntropyImage,
    assign_intermediate_yaws,
    optimal_yaw,
    ray_entropy,
    raycast_entropy_360,
    travel_time,
    utility,
    voxel_entropy,
)
from .integration import (
    FrontierList,
    explored_volume,
    integrate_depth,
    is_frontier,
    update_frontiers,
)
from .morton import morton_decode, morton_encode
from .octree import OccupancyOctree, VoxelBlock
from .planning import (
    Path,
    PlannerConfig,
    collision_free_point,
    collision_free_segment,
    plan_path,
    simplify_path,
)
from .sampling import Candidate, filter_frontier_blocks, sample_candidates
from .scenarios import ExplorationConfig, ScenarioError, load_preset, load_scenario
from .types import DepthImage, MavConfig, MavState, SensorModel
from .world import (
    WorldModel,
    observable_volume,
    ray_intersect,
    render_depth,
    step_mav,
)

__version__ = "0.1.0"
