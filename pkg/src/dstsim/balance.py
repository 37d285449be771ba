"""Power-peer load monitoring and query-load redistribution."""

from dstsim._kernel import check_load, collect_load, plan_redistribution

__all__ = ["check_load", "collect_load", "plan_redistribution"]
