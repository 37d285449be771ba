"""Walker routing surface: message types, engine, termination reasons.

The Engine owns routing; `Engine.decide` and `Engine.decide_duplicate`
expose the hop decisions without side effects for direct testing.
"""

from dstsim._kernel import (
    ALGO_APS,
    ALGO_DST,
    ALGO_RW,
    END_DEAD,
    END_DUP,
    END_HIT,
    END_RETIRED,
    END_TTL,
    Engine,
    Params,
    Query,
    Walker,
)

__all__ = [
    "ALGO_APS", "ALGO_DST", "ALGO_RW", "END_DEAD", "END_DUP", "END_HIT",
    "END_RETIRED", "END_TTL", "Engine", "Params", "Query", "Walker",
]
