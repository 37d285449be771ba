"""Q-table scoring operations: initialization, rewards, updates, merging.

Thin public surface over the kernel so callers and tests never care
whether the compiled extension is active.
"""

from dstsim._kernel import (
    HIT,
    MISS,
    NOT_ASKED,
    EligibilityError,
    QueryQTable,
    compute_qp,
    init_neighbour_q,
    merge_top_k,
    reward_neighbour,
    reward_power,
    reward_query,
    round_half_away,
    t_max,
    update_neighbour_q,
    update_power_q,
    update_query_q,
)

__all__ = [
    "HIT", "MISS", "NOT_ASKED", "EligibilityError", "QueryQTable",
    "compute_qp", "init_neighbour_q", "merge_top_k", "reward_neighbour",
    "reward_power", "reward_query", "round_half_away", "t_max",
    "update_neighbour_q", "update_power_q", "update_query_q",
]
