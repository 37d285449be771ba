"""Network construction: topology, object placement, power seeding, churn."""

import hashlib
import random

from dstsim._kernel import (
    ConfigurationError,
    Network,
    POWER,
    Peer,
    Thresholds,
    broadcast_power_peer,
    churn_flip,
    compute_qp,
    dump_qtables,
    effective_f_th,
    eligible_neighbour,
    init_neighbour_q,
    promote_power_peer,
    qp_for_peer,
)

__all__ = [
    "generate_topology", "distribute_objects", "assign_power_peers",
    "build_neighbour_tables", "initial_broadcasts", "apply_churn",
    "topology_hash", "eligible_neighbour", "promote_power_peer",
    "broadcast_power_peer", "compute_qp", "Thresholds", "Network", "Peer",
    "dump_qtables",
]


def generate_topology(n, avg_degree, free_riders, seed, qq_capacity=512):
    """Connected random graph: a random spanning tree plus random extra edges.

    Edges are added until the edge count matches round(n*avg_degree/2), so
    the mean degree lands within 1/n of the target. `free_riders` randomly
    chosen peers are flagged to stay empty-handed. Deterministic per seed.
    """
    if n < 2:
        raise ConfigurationError("nodes: need at least 2 peers")
    if avg_degree < 1:
        raise ConfigurationError("avg_degree: must be >= 1")
    if avg_degree >= n - 1 and n > 2:
        raise ConfigurationError("avg_degree: must be below n-1")
    if free_riders >= n:
        raise ConfigurationError("free_riders: must be below n")
    backbone_mean = 2.0 * (n - 1) / n
    if avg_degree < backbone_mean * 0.95:
        raise ConfigurationError(
            "avg_degree: below the spanning backbone's mean degree")

    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    edges = set()
    for i in range(1, n):
        a = order[i]
        b = order[rng.randrange(i)]
        edges.add((a, b) if a < b else (b, a))

    target_edges = max(n - 1, round(n * avg_degree / 2.0))
    max_edges = n * (n - 1) // 2
    target_edges = min(target_edges, max_edges)
    while len(edges) < target_edges:
        a = rng.randrange(n)
        b = rng.randrange(n)
        if a == b:
            continue
        edge = (a, b) if a < b else (b, a)
        if edge not in edges:
            edges.add(edge)

    adj = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    for nbrs in adj:
        nbrs.sort()

    peers = [Peer(pid, qq_capacity) for pid in range(n)]
    for pid in range(n):
        peers[pid].degree = len(adj[pid])
    net = Network(peers, adj, seed=seed)
    net.free_rider_ids = set(rng.sample(range(n), free_riders))
    return net


def set_up_fraction(net, up_fraction, seed):
    """Mark a random (1 - up_fraction) share of peers as down."""
    rng = random.Random(seed)
    n = net.n()
    n_down = round(n * (1.0 - up_fraction))
    for pid in rng.sample(range(n), n_down):
        net.peers[pid].alive = False


def distribute_objects(net, n_objects, keyword_pool, seed,
                       max_keywords_per_object=8, staple_weight=0.8,
                       storage_min=3, storage_max=12,
                       second_object_prob=0.3, third_object_prob=0.1,
                       keyword_share_prob=0.0):
    """Create the object catalogue and seed every sharer with 1-3 objects.

    Each object carries 1..max_keywords_per_object keywords drawn from the
    pool; with `keyword_share_prob` a draw reuses a keyword some earlier
    object already carries (content on the same subjects shares terms).
    Placement is popularity-skewed: object 0 takes `staple_weight` of the
    draws and the rest split the remainder evenly, but every object is
    seeded on at least one peer. Second and third copies land with the
    given probabilities so initial shared counts (and with them the
    initial neighbour scores) vary. Free riders get nothing and zero
    storage; sharer capacities are drawn from [storage_min, storage_max].
    """
    if n_objects < 1:
        raise ConfigurationError("objects: need at least 1")
    if keyword_pool < n_objects:
        raise ConfigurationError("keyword_pool: must be >= objects")
    sharers = [p.pid for p in net.peers if p.pid not in net.free_rider_ids]
    if len(sharers) < n_objects:
        raise ConfigurationError(
            "objects: not enough non-free-rider peers to seed every object")

    rng = random.Random(seed)
    net.obj_keywords = []
    net.obj_popularity = [0] * n_objects
    kw_objects = {}
    assigned = []
    for oid in range(n_objects):
        count = rng.randint(1, max_keywords_per_object)
        kws = set()
        for _ in range(count):
            if assigned and rng.random() < keyword_share_prob:
                kws.add(assigned[rng.randrange(len(assigned))])
            else:
                kws.add(rng.randrange(keyword_pool))
        net.obj_keywords.append(frozenset(kws))
        for kw in kws:
            kw_objects.setdefault(kw, []).append(oid)
            assigned.append(kw)
    net.kw_objects = {kw: tuple(oids) for kw, oids in kw_objects.items()}

    if n_objects > 1:
        rest = (1.0 - staple_weight) / (n_objects - 1)
        weights = [staple_weight] + [rest] * (n_objects - 1)
    else:
        weights = [1.0]
    cumulative = []
    acc = 0.0
    for w in weights:
        acc += w
        cumulative.append(acc)

    def weighted_object():
        r = rng.random() * acc
        for j, c in enumerate(cumulative):
            if r < c:
                return j
        return n_objects - 1

    order = list(sharers)
    rng.shuffle(order)
    for i, pid in enumerate(order):
        peer = net.peers[pid]
        # Guarantee every object at least one home.
        peer.shared.add(i if i < n_objects else weighted_object())
        if rng.random() < second_object_prob:
            peer.shared.add(weighted_object())
        if rng.random() < third_object_prob:
            peer.shared.add(weighted_object())
        peer.capacity = max(len(peer.shared),
                            rng.randint(storage_min, storage_max))
    for pid in net.free_rider_ids:
        net.peers[pid].capacity = 0
    return net


def assign_power_peers(net, thresholds, fraction, seed,
                       queue_cap_min=50, queue_cap_max=200):
    """Grant power status to the top share of sharers by (degree, objects).

    Free riders are never promoted. Also draws every peer's fixed queue
    capacity. Returns the chosen peer ids.
    """
    net.thresholds = thresholds
    rng = random.Random(seed)
    for peer in net.peers:
        peer.queue_capacity = rng.randint(queue_cap_min, queue_cap_max)
    ranked = sorted(
        (p for p in net.peers if p.pid not in net.free_rider_ids),
        key=lambda p: (-p.degree, -len(p.shared), p.pid))
    count = int(net.n() * fraction)
    chosen = [p.pid for p in ranked[:count]]
    for pid in chosen:
        net.peers[pid].klass = POWER
    return chosen


def build_neighbour_tables(net, thresholds):
    """Fill every peer's neighbour table from its eligible adjacent peers.

    Scores come from the shared-object ratio against the selector's
    effective threshold; power neighbours below that count fall back to
    their advertised score. Membership is fixed for the rest of the run.
    """
    net.thresholds = thresholds
    for peer in net.peers:
        eff = effective_f_th(peer, thresholds.f_th)
        for nbr_id in net.adj[peer.pid]:
            nbr = net.peers[nbr_id]
            if not eligible_neighbour(peer, nbr, thresholds.f_th):
                continue
            shared = len(nbr.shared)
            if shared >= eff:
                peer.nq[nbr_id] = init_neighbour_q(shared, eff)
            else:
                peer.nq[nbr_id] = qp_for_peer(nbr, thresholds)


def initial_broadcasts(net, n_hops):
    """Every current power peer announces itself; fills power-peer tables."""
    for peer in net.peers:
        if peer.klass == POWER:
            broadcast_power_peer(net, peer.pid, n_hops)


def apply_churn(net, seed):
    """One scheduled churn event: half the down peers swap with up peers."""
    return churn_flip(net, random.Random(seed))


def topology_hash(net):
    """Stable digest of the graph, object placement and catalogue."""
    h = hashlib.sha256()
    h.update(f"n={net.n()}".encode())
    for a, b in sorted(net.edges()):
        h.update(f";{a}-{b}".encode())
    for peer in net.peers:
        h.update(f";s{peer.pid}:{sorted(peer.shared)}".encode())
    for kws in net.obj_keywords:
        h.update(f";k{sorted(kws)}".encode())
    return h.hexdigest()
