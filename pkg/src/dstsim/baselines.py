"""Comparator search schemes: k-random walk and adaptive probabilistic search.

Both run on raw adjacency under the same TTL and walker budget as the
learning scheme; neither uses power peers, TTL extension or free-rider
exclusion.
"""

from dstsim._kernel import aps_select, aps_update, random_walk_step

__all__ = ["random_walk_step", "aps_select", "aps_update"]
