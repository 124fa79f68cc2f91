"""Sketch-decomposed pick-and-place planning in a 2D tabletop world."""

from .bench import BenchSpec, GenerationFailed, generate
from .features import FeatureEvaluator, blocking_counts, compute_features
from .geometry import Pose2, Rect
from .plans import load_plan, replay_plan, save_plan
from .sampling import (DensityCapReached, GroundAction, MoveBase, Pick, Place,
                       SampleSet, SamplingDensity, SamplingExhausted, escalate)
from .search import Plan, PlannerConfig, RunMetrics, lazy_iw, siw_baseline, siwr
from .sketch import (FeatureVec, NoApplicableRule, Sketch, SketchRule, active_rule,
                     check_termination, default_sketch, pair_satisfies, parse_sketch)
from .validation import MotionPlan, PipelineStats, validate
from .world import (GoalNone, GoalPose, GoalRegion, GoalWordSlot, InvariantViolation,
                    MovableObject, RobotParams, Table, Task, WorldState, is_goal,
                    load_task, misplaced_set, save_task, words_valid_prefix)

__version__ = "0.1.0"
