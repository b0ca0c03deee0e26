from spinsplat.planning.planner import (
    CameraRig, PlannerConfig, Strategy, StrategyKind,
    capture_time, generate_schedule, sample_count, solve_budget,
)
from spinsplat.planning.coverage import CoverageStats, coverage_stats

__all__ = [
    'CameraRig', 'PlannerConfig', 'Strategy', 'StrategyKind',
    'capture_time', 'generate_schedule', 'sample_count', 'solve_budget',
    'CoverageStats', 'coverage_stats',
]
