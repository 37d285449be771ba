"""Simulation kernel: Q-table scoring, walker routing, baselines, load accounting.

Everything on the per-message hot path lives in this module so a single
compiled build (see setup.py) covers the whole inner loop. The code is
plain Python; the compiled and interpreted forms behave identically.
"""

import math
from collections import deque

try:
    import cython
    COMPILED = cython.compiled
except ImportError:
    COMPILED = False

ORDINARY = 0
POWER = 1

ALGO_DST = 0
ALGO_APS = 1
ALGO_RW = 2

HIT = "hit"
MISS = "miss"
NOT_ASKED = "not_asked"

# Walker termination reasons (conservation accounting). Retirement ends
# the sibling walkers of a query whose search already succeeded.
END_HIT = "hit"
END_TTL = "ttl_death"
END_DEAD = "dead_end"
END_DUP = "dup_drop"
END_RETIRED = "retired"


class ConfigurationError(ValueError):
    """Invalid parameter or simulation configuration."""


class EligibilityError(ValueError):
    """Neighbour-selection precondition violated."""


# ---------------------------------------------------------------------------
# Scoring primitives
# ---------------------------------------------------------------------------

def round_half_away(x):
    """Round to the nearest integer with halves away from zero."""
    if x >= 0:
        return int(math.floor(x + 0.5))
    return -int(math.floor(0.5 - x))


def t_max(ttl0):
    """Maximum hop budget a walker may reach after a TTL extension."""
    if ttl0 < 1:
        raise ConfigurationError("ttl must be >= 1")
    return ttl0 + round_half_away(ttl0 / 2.0)


def init_neighbour_q(f_i, f_th, k=100.0):
    """Initial score for an eligible neighbour sharing f_i objects.

    f_th must be the effective (clamped) threshold the eligibility test
    used, so the ratio is >= 1 and the score >= k.
    """
    if f_th < 1:
        raise ConfigurationError("f_th must be >= 1")
    if f_i < f_th:
        raise EligibilityError(f"f_i={f_i} below threshold {f_th}")
    return float(round_half_away((f_i / f_th) * k))


def reward_query(ttl0, hp, nr, qr_w1, qr_w2):
    """Reward for a hit reported with hp hops and nr matching objects."""
    if hp < 1:
        raise ValueError("hit reward needs hp >= 1")
    if nr < 1:
        raise ValueError("hit reward needs nr >= 1")
    return ((ttl0 / (qr_w1 * hp)) + (nr / qr_w2)) * 100.0


def update_query_q(q, r, alpha, outcome):
    """Per-keyword score update; hits move toward r, misses decay."""
    if outcome == HIT:
        q = q + alpha * (r - q)
    elif outcome == MISS:
        q = q * (1.0 - alpha)
    elif outcome != NOT_ASKED:
        raise ValueError(f"unknown outcome {outcome!r}")
    return q if q > 0.0 else 0.0


def reward_neighbour(hits_produced, queries_received, k=100.0):
    """Hit-rate reward; 0 for peers that never received a query."""
    if queries_received <= 0:
        return 0.0
    return k * (hits_produced / queries_received)


def update_neighbour_q(q, r_n, nb_w1, nb_w2, hit):
    """Overall neighbour score update: reward r_n/w1 on hit, -r_n/w2 on miss."""
    if hit:
        q = q + r_n / nb_w1
    else:
        q = q - r_n / nb_w2
    return q if q > 0.0 else 0.0


def reward_power(ttl0, hp, pp_w1, k=100.0):
    """Hop-efficiency reward for a hit routed through a power peer."""
    if hp < 1:
        raise ValueError("power reward needs hp >= 1")
    return (t_max(ttl0) / (hp * pp_w1)) * k


def update_power_q(q, r, alpha, outcome):
    """Power-peer score update; same shape as update_query_q."""
    return update_query_q(q, r, alpha, outcome)


def compute_qp(s_s, s_th, d_d, d_th, f_i, f_th, w1, w2, w3, k=100.0):
    """Advertised score of a freshly promoted power peer."""
    if s_th <= 0 or d_th <= 0 or f_th <= 0:
        raise ConfigurationError("thresholds must be positive")
    total = w1 * (s_s / s_th) + w2 * (d_d / d_th) + w3 * (f_i / f_th)
    return float(round_half_away(total * k))


def merge_top_k(nq, pq, k, alive=None):
    """Top-k peer ids from the union of both tables.

    Sorted by score descending, ties by ascending id; `alive` filters
    candidates when given. Disjoint tables are assumed; on overlap the
    neighbour entry wins.
    """
    if k <= 0:
        return []
    merged = dict(pq)
    merged.update(nq)
    items = []
    for pid, q in merged.items():
        if alive is None or alive(pid):
            items.append((-q, pid))
    items.sort()
    return [pid for _, pid in items[:k]]


def _best_entry(table, allowed):
    """Highest-score id in `table` passing `allowed`; -1 if none.

    Ties broken by ascending id, independent of insertion order.
    """
    best = -1
    best_q = -1.0
    for pid, q in table.items():
        if not allowed(pid):
            continue
        if q > best_q or (q == best_q and pid < best):
            best = pid
            best_q = q
    return best


# ---------------------------------------------------------------------------
# Query Q-table (keyword rows with LRU eviction)
# ---------------------------------------------------------------------------

class QueryQTable:
    """Per-peer map of seen keywords to per-neighbour scores.

    Rows are kept in recency order (oldest first); inserting past
    capacity evicts the least recently used row.
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ConfigurationError("query table capacity must be >= 1")
        self.capacity = capacity
        self.rows = {}        # keyword -> {pid: score}, recency-ordered
        self.last_used = {}   # keyword -> tick

    def __len__(self):
        return len(self.rows)

    def __contains__(self, keyword):
        return keyword in self.rows

    def get(self, keyword):
        return self.rows.get(keyword)

    def touch(self, keyword, tick):
        """Mark a row as used; moves it to the fresh end."""
        row = self.rows.pop(keyword, None)
        if row is None:
            return None
        self.rows[keyword] = row
        self.last_used[keyword] = tick
        return row

    def insert(self, keyword, snapshot, tick):
        """New row copied from a neighbour-table snapshot; LRU-evicts at capacity.

        Re-inserting an existing keyword only refreshes its recency.
        """
        if keyword in self.rows:
            self.touch(keyword, tick)
            return
        if len(self.rows) >= self.capacity:
            oldest = next(iter(self.rows))
            del self.rows[oldest]
            del self.last_used[oldest]
        self.rows[keyword] = dict(snapshot)
        self.last_used[keyword] = tick

    def insert_from_column_averages(self, keyword, snapshot, tick):
        """New row from per-neighbour column means over existing rows.

        Falls back to the snapshot value for columns with no history, and
        to a plain snapshot copy when the table is empty.
        """
        if keyword in self.rows:
            self.touch(keyword, tick)
            return
        if not self.rows:
            self.insert(keyword, snapshot, tick)
            return
        row = {}
        for pid, fallback in snapshot.items():
            total = 0.0
            count = 0
            for other in self.rows.values():
                if pid in other:
                    total += other[pid]
                    count += 1
            row[pid] = total / count if count else fallback
        if len(self.rows) >= self.capacity:
            oldest = next(iter(self.rows))
            del self.rows[oldest]
            del self.last_used[oldest]
        self.rows[keyword] = row
        self.last_used[keyword] = tick

    def delete(self, keyword):
        """Drop a row; no-op when absent."""
        if keyword in self.rows:
            del self.rows[keyword]
            del self.last_used[keyword]


# ---------------------------------------------------------------------------
# Peers and network state
# ---------------------------------------------------------------------------

class Thresholds:
    """Promotion thresholds and the weights of the advertised power score."""

    def __init__(self, f_th, s_th, d_th=7, w1=0.34, w2=0.33, w3=0.33, k=100.0):
        if f_th < 1:
            raise ConfigurationError("f_th must be >= 1")
        if d_th < 1:
            raise ConfigurationError("d_th must be >= 1")
        if s_th < 1:
            raise ConfigurationError("s_th must be >= 1")
        if abs((w1 + w2 + w3) - 1.0) > 1e-9:
            raise ConfigurationError("qp weights must sum to 1")
        if k != 100.0:
            raise ConfigurationError("normalizing constant k is fixed at 100")
        self.f_th = f_th
        self.s_th = s_th
        self.d_th = d_th
        self.w1 = w1
        self.w2 = w2
        self.w3 = w3
        self.k = k


class Peer:
    """One node: class, liveness, shared objects, counters and Q-tables."""

    def __init__(self, pid, qq_capacity=512):
        self.pid = pid
        self.klass = ORDINARY
        self.alive = True
        self.shared = set()           # object ids
        self.capacity = 0             # storage slots (objects)
        self.degree = 0
        self.queries_received = 0
        self.hits_produced = 0
        self.queue_capacity = 1
        self.queue = deque()          # queued message ids (load accounting)
        self.peak_queue = 0
        self.nq = {}                  # neighbour id -> score
        self.pq = {}                  # power peer id -> score
        self.qq = QueryQTable(qq_capacity)
        self.aps = {}                 # keyword -> {neighbour id: index}

    def hit_rate(self):
        if self.queries_received <= 0:
            return 0.0
        return self.hits_produced / self.queries_received

    def is_free_rider(self):
        return len(self.shared) == 0


class Network:
    """Peers plus undirected adjacency and the shared object catalogue."""

    def __init__(self, peers, adj, seed=0, thresholds=None):
        self.peers = peers
        self.adj = adj                    # pid -> sorted list of neighbour pids
        self.seed = seed
        self.thresholds = thresholds
        self.obj_keywords = []            # object id -> frozenset of keywords
        self.obj_popularity = []          # object id -> download count
        self.kw_objects = {}              # keyword -> tuple of object ids
        self.free_rider_ids = set()

    def n(self):
        return len(self.peers)

    def edges(self):
        """Canonical (a, b) edge list with a < b."""
        out = []
        for a, nbrs in enumerate(self.adj):
            for b in nbrs:
                if a < b:
                    out.append((a, b))
        return out

    def alive_count(self):
        count = 0
        for p in self.peers:
            if p.alive:
                count += 1
        return count

    def match_count(self, pid, keyword):
        """Number of objects shared by pid whose keyword set contains keyword."""
        peer = self.peers[pid]
        if not peer.shared:
            return 0
        oids = self.kw_objects.get(keyword)
        if not oids:
            return 0
        count = 0
        for oid in oids:
            if oid in peer.shared:
                count += 1
        return count


def effective_f_th(selector, f_th):
    """Selector-side clamp of the sharing threshold, floored at one object."""
    shared = len(selector.shared)
    return max(1, min(f_th, shared))


def eligible_neighbour(selector, candidate, f_th):
    """Whether candidate may enter selector's neighbour table.

    Power peers always qualify; others need at least the effective
    threshold worth of shared objects, so free riders never qualify.
    """
    if candidate.pid == selector.pid:
        raise ValueError("a peer cannot neighbour itself")
    if candidate.klass == POWER:
        return True
    shared = len(candidate.shared)
    if shared == 0:
        return False
    return shared >= effective_f_th(selector, f_th)


def qp_for_peer(peer, th):
    """Advertised score computed from a peer's current state."""
    return compute_qp(peer.capacity, th.s_th, peer.degree, th.d_th,
                      len(peer.shared), th.f_th, th.w1, th.w2, th.w3, th.k)


def broadcast_power_peer(net, pid, n_hops):
    """Announce a power peer to every alive node within n_hops.

    Receivers insert (pid, qp) into their power-peer table unless the
    sender already sits in their neighbour table. Returns notified ids.
    """
    source = net.peers[pid]
    if source.klass != POWER:
        raise ValueError("only power peers broadcast")
    notified = set()
    if n_hops <= 0:
        return notified
    qp = qp_for_peer(source, net.thresholds)
    seen = {pid}
    frontier = [pid]
    depth = 0
    while frontier and depth < n_hops:
        depth += 1
        nxt = []
        for cur in frontier:
            for nbr in net.adj[cur]:
                if nbr in seen:
                    continue
                seen.add(nbr)
                peer = net.peers[nbr]
                if not peer.alive:
                    continue
                nxt.append(nbr)
                notified.add(nbr)
                if pid not in peer.nq:
                    peer.pq[pid] = qp
        frontier = nxt
    return notified


def promote_power_peer(net, pid, n_hops):
    """Promote pid when it meets all three thresholds; broadcasts on success.

    Returns True only on an actual promotion; re-promoting is a no-op.
    """
    peer = net.peers[pid]
    if not peer.alive:
        raise ValueError("cannot promote a down peer")
    if peer.klass == POWER:
        return False
    th = net.thresholds
    if (peer.degree >= th.d_th and len(peer.shared) >= th.f_th
            and peer.capacity >= th.s_th):
        peer.klass = POWER
        broadcast_power_peer(net, pid, n_hops)
        return True
    return False


def churn_flip(net, rng):
    """Flip half the down peers up (rounding half up) and as many up peers down.

    Returns (n_up, n_down) flip counts; total peer count is unchanged.
    """
    down = [p.pid for p in net.peers if not p.alive]
    up = [p.pid for p in net.peers if p.alive]
    n_flip = (len(down) + 1) // 2
    n_flip = min(n_flip, len(up))
    if n_flip == 0:
        return (0, 0)
    to_up = rng.sample(down, n_flip)
    to_down = rng.sample(up, n_flip)
    for pid in to_up:
        net.peers[pid].alive = True
    for pid in to_down:
        net.peers[pid].alive = False
    return (n_flip, n_flip)


def dump_qtables(net):
    """Flat Q-table dump, one `kind,owner,key,peer,score` line per entry.

    Scores are serialized as integers (halves away from zero). Lines are
    sorted so dumps diff cleanly.
    """
    lines = []
    for peer in net.peers:
        owner = peer.pid
        for pid in sorted(peer.nq):
            lines.append(f"nq,{owner},,{pid},{round_half_away(peer.nq[pid])}")
        for pid in sorted(peer.pq):
            lines.append(f"pq,{owner},,{pid},{round_half_away(peer.pq[pid])}")
        for kw in sorted(peer.qq.rows):
            row = peer.qq.rows[kw]
            for pid in sorted(row):
                lines.append(f"qq,{owner},{kw},{pid},{round_half_away(row[pid])}")
    lines.sort()
    return lines


# ---------------------------------------------------------------------------
# Load balancing
# ---------------------------------------------------------------------------

def check_load(peer, threshold=0.6):
    """True when the queue has reached the trigger fraction of its capacity."""
    if peer.klass != POWER:
        raise ValueError("load checks apply to power peers")
    if peer.queue_capacity <= 0:
        raise ConfigurationError("queue capacity must be positive")
    return len(peer.queue) >= threshold * peer.queue_capacity


def collect_load(net, pid):
    """(peer, queue_len, capacity, utilization) for each alive power peer
    listed in pid's power-peer table."""
    peer = net.peers[pid]
    reports = []
    for other_id in sorted(peer.pq):
        other = net.peers[other_id]
        if not other.alive or other.klass != POWER:
            continue
        qlen = len(other.queue)
        cap = other.queue_capacity
        reports.append((other_id, qlen, cap, qlen / cap))
    return reports


def plan_redistribution(reports, pending, threshold=0.6):
    """Greedy assignment of pending messages to the least-utilized reporters.

    Re-evaluates utilization after every assignment and never pushes a
    target past the threshold. Returns {message: target id}; messages
    with no viable target are left out.
    """
    if not reports:
        return {}
    loads = [[qlen, cap, pid] for pid, qlen, cap, _ in reports]
    assignment = {}
    for msg in pending:
        best = -1
        best_util = 2.0
        for i, (qlen, cap, pid) in enumerate(loads):
            if (qlen + 1) / cap > threshold:
                continue
            util = qlen / cap
            if util < best_util or (util == best_util
                                    and pid < loads[best][2]):
                best = i
                best_util = util
        if best < 0:
            continue
        loads[best][0] += 1
        assignment[msg] = loads[best][2]
    return assignment


# ---------------------------------------------------------------------------
# Baseline selection primitives
# ---------------------------------------------------------------------------

def random_walk_step(net, pid, rng, exclude=-1):
    """Uniform choice among alive neighbours; avoids `exclude` when it can.

    Returns -1 with no alive neighbour. The excluded peer (the sender)
    is kept as a last resort when it is the only option.
    """
    candidates = [b for b in net.adj[pid] if net.peers[b].alive]
    if not candidates:
        return -1
    if len(candidates) >= 2 and exclude in candidates:
        candidates.remove(exclude)
    return candidates[rng.randrange(len(candidates))]


def aps_select(net, pid, keyword, k, rng, init=30.0, exclude=-1):
    """k distinct alive neighbours sampled without replacement, with
    probability proportional to the per-keyword index values."""
    if k < 1:
        raise ValueError("k must be >= 1")
    peer = net.peers[pid]
    pool = [b for b in net.adj[pid] if net.peers[b].alive]
    if len(pool) >= 2 and exclude in pool:
        pool.remove(exclude)
    idx = peer.aps.get(keyword)
    weights = [idx.get(b, init) if idx is not None else init for b in pool]
    picked = []
    while pool and len(picked) < k:
        total = 0.0
        for w in weights:
            total += w
        r = rng.random() * total
        acc = 0.0
        chosen = len(pool) - 1
        for i, w in enumerate(weights):
            acc += w
            if r < acc:
                chosen = i
                break
        picked.append(pool.pop(chosen))
        weights.pop(chosen)
    return picked


def aps_update(peer, keyword, neighbour, hit, reward=10.0, penalty=5.0,
               floor=1.0, init=30.0):
    """Adjust one (neighbour, keyword) index: +reward on hit, -penalty
    floored at `floor` on miss."""
    idx = peer.aps.get(keyword)
    if idx is None:
        idx = {}
        peer.aps[keyword] = idx
    cur = idx.get(neighbour, init)
    if hit:
        idx[neighbour] = cur + reward
    else:
        nxt = cur - penalty
        idx[neighbour] = nxt if nxt > floor else floor


# ---------------------------------------------------------------------------
# Walkers and queries
# ---------------------------------------------------------------------------

class Walker:
    """One query message travelling hop by hop."""

    __slots__ = ("mid", "qid", "keyword", "ttl", "hops", "path", "path_set",
                 "enhanced", "via_row", "first_hop", "first_is_nbr")

    def __init__(self, mid, qid, keyword, ttl, source, target, via_row,
                 first_is_nbr):
        self.mid = mid
        self.qid = qid
        self.keyword = keyword
        self.ttl = ttl - 1          # launch consumes one hop
        self.hops = 1
        self.path = [source, target]
        self.path_set = {source, target}
        self.enhanced = False
        self.via_row = via_row
        self.first_hop = target
        self.first_is_nbr = first_is_nbr


class Query:
    """Per-query bookkeeping alive while any of its walkers fly."""

    __slots__ = ("qid", "source", "keyword", "interval", "visited", "carried",
                 "outstanding", "resolved", "resolved_tick", "fresh_row",
                 "nbr_hit", "hit_path", "hit_hops")

    def __init__(self, qid, source, keyword, interval):
        self.qid = qid
        self.source = source
        self.keyword = keyword
        self.interval = interval
        self.visited = {source}
        self.carried = {source}
        self.outstanding = 0
        self.resolved = False
        self.resolved_tick = -1
        self.fresh_row = False
        self.nbr_hit = False
        self.hit_path = None
        self.hit_hops = -1


class Params:
    """Engine knobs; filled by the harness from a validated SimConfig."""

    def __init__(self, algo=ALGO_DST, ttl0=6, k_walkers=6, alpha=0.2,
                 qr_w1=0.4, qr_w2=0.6, nb_w1=0.8, nb_w2=0.4, pp_w1=0.5,
                 broadcast_hops=4, lb_enabled=True, lb_threshold=0.6,
                 service_rate=8, metric_interval=5000,
                 churn_interval=50000, aps_init=30.0, aps_reward=10.0,
                 aps_penalty=5.0, aps_floor=1.0, aps_optimistic=False,
                 cache_at_source=True):
        self.algo = algo
        self.ttl0 = ttl0
        self.tmax = t_max(ttl0)
        self.k_walkers = k_walkers
        self.alpha = alpha
        self.qr_w1 = qr_w1
        self.qr_w2 = qr_w2
        self.nb_w1 = nb_w1
        self.nb_w2 = nb_w2
        self.pp_w1 = pp_w1
        self.broadcast_hops = broadcast_hops
        self.lb_enabled = lb_enabled
        self.lb_threshold = lb_threshold
        self.service_rate = service_rate
        self.metric_interval = metric_interval
        self.churn_interval = churn_interval
        self.aps_init = aps_init
        self.aps_reward = aps_reward
        self.aps_penalty = aps_penalty
        self.aps_floor = aps_floor
        self.aps_optimistic = aps_optimistic
        self.cache_at_source = cache_at_source


# Metric column names, in emission order.
METRIC_FIELDS = (
    "queries_issued", "hits", "success_rate", "sum_hops_on_hits", "avg_hops",
    "hits_per_query", "duplicates_generated", "duplicates_forwarded",
    "duplicates_dropped", "coverage_fraction", "ttl_enhancements_used",
    "hits_via_enhancement", "hits_by_ordinary", "hits_by_power",
    "hits_via_query_table", "hits_via_parallel_routing",
    "free_rider_msgs_received",
)

_COUNTERS = (
    "queries_issued", "hits", "sum_hops_on_hits", "hit_events",
    "duplicates_generated", "duplicates_forwarded", "duplicates_dropped",
    "ttl_enhancements_used", "hits_via_enhancement", "hits_by_ordinary",
    "hits_by_power", "hits_via_query_table", "hits_via_parallel_routing",
    "free_rider_msgs_received",
)


class Engine:
    """Single-threaded tick loop owning all mutable simulation state.

    Hops take one tick; per-peer queues account for processing load only
    and never delay or drop a walker, so runs that differ only in load
    balancing produce identical routing metrics.
    """

    def __init__(self, net, params, rng_route, rng_churn=None, trace=None):
        self.net = net
        self.p = params
        self.rng = rng_route
        self.rng_churn = rng_churn
        self.trace = trace              # list to append trace tuples, or None
        self.tick = 0
        self.next_mid = 0
        self.issued = 0
        self.skipped = 0
        self.queries = {}               # active qid -> Query
        self.arrivals = {}              # tick -> [walker, ...]
        self.visited_ever = set()
        self.walkers_launched = 0
        self.end_counts = {END_HIT: 0, END_TTL: 0, END_DEAD: 0, END_DUP: 0,
                           END_RETIRED: 0}
        self.intervals = {}             # name -> list of per-interval counts
        for name in _COUNTERS:
            self.intervals[name] = []
        self.coverage = {}              # interval -> fraction at finalize
        self.load_snapshots = []        # (tick, pid, queue_len, capacity)
        self._interval_open = {}        # interval -> outstanding queries
        self._interval_issued_full = set()
        self._next_flush = 0
        self._launch_schedule = {}      # tick -> [(source, keyword), ...]
        self._last_launch_tick = -1
        self._churn_due = 0

    # -- workload ----------------------------------------------------------

    def set_workload(self, launches_by_tick):
        self._launch_schedule = launches_by_tick
        last = -1
        for t in launches_by_tick:
            if t > last:
                last = t
        self._last_launch_tick = last

    def run(self):
        """Run the full scheduled workload to completion."""
        while (self.tick <= self._last_launch_tick or self.arrivals
               or self.queries):
            self._step()
        self._drain_all_queues()
        self._flush_intervals(final=True)

    def run_until_idle(self):
        """Advance ticks until no walkers remain in flight."""
        while self.arrivals or self.queries:
            self._step()

    def inject_query(self, source, keyword):
        """Issue one ad-hoc query and run it to completion; returns its record."""
        query = self._launch(source, keyword)
        self.run_until_idle()
        return query

    def _step(self):
        t = self.tick
        for source, keyword in self._launch_schedule.pop(t, ()):
            if self.net.peers[source].alive:
                self._launch(source, keyword)
            else:
                self.skipped += 1
        for walker in self.arrivals.pop(t, ()):
            self._deliver(walker)
        self._drain_queues()
        if self._churn_due and self.rng_churn is not None:
            while self._churn_due:
                churn_flip(self.net, self.rng_churn)
                self._churn_due -= 1
        self._flush_intervals(final=False)
        self.tick += 1

    # -- metric accounting ---------------------------------------------------

    def _bump(self, name, interval, amount=1):
        col = self.intervals[name]
        while len(col) <= interval:
            col.append(0)
        col[interval] += amount

    def _interval_of(self, qid):
        return qid // self.p.metric_interval

    def _coverage_now(self):
        total = 0
        covered = 0
        for peer in self.net.peers:
            if peer.alive and peer.pid not in self.net.free_rider_ids:
                total += 1
                if peer.pid in self.visited_ever:
                    covered += 1
        return covered / total if total else 1.0

    def _flush_intervals(self, final):
        # Intervals flush strictly in order so the cumulative coverage
        # series stays monotone apart from churn swaps.
        while self._next_flush in self._interval_open:
            interval = self._next_flush
            if self._interval_open[interval] != 0:
                break
            if not final and interval not in self._interval_issued_full:
                break
            self._next_flush += 1
            self.coverage[interval] = self._coverage_now()
            for peer in self.net.peers:
                if peer.klass == POWER:
                    self.load_snapshots.append(
                        (self.tick, peer.pid, len(peer.queue),
                         peer.queue_capacity))

    # -- load accounting ---------------------------------------------------

    def _enqueue_load(self, pid, mid):
        peer = self.net.peers[pid]
        if len(peer.queue) < peer.queue_capacity:
            peer.queue.append(mid)
        qlen = len(peer.queue)
        if qlen > peer.peak_queue:
            peer.peak_queue = qlen
        if (self.p.lb_enabled and self.p.algo == ALGO_DST
                and peer.klass == POWER
                and qlen >= self.p.lb_threshold * peer.queue_capacity):
            self._rebalance(peer)

    def _rebalance(self, peer):
        watermark = int(math.ceil(self.p.lb_threshold * peer.queue_capacity))
        excess = len(peer.queue) - watermark
        if excess <= 0:
            return
        reports = collect_load(self.net, peer.pid)
        if not reports:
            return
        pending = [peer.queue[-1 - i] for i in range(excess)]
        moved = plan_redistribution(reports, pending, self.p.lb_threshold)
        if not moved:
            return
        kept = []
        remaining = len(moved)
        while remaining and peer.queue:
            mid = peer.queue.pop()
            if mid in moved:
                remaining -= 1
                target = self.net.peers[moved[mid]]
                target.queue.append(mid)
                if len(target.queue) > target.peak_queue:
                    target.peak_queue = len(target.queue)
            else:
                kept.append(mid)
        while kept:
            peer.queue.append(kept.pop())

    def _drain_queues(self):
        rate = self.p.service_rate
        for peer in self.net.peers:
            q = peer.queue
            for _ in range(min(rate, len(q))):
                q.popleft()

    def _drain_all_queues(self):
        for peer in self.net.peers:
            peer.queue.clear()

    # -- launching ---------------------------------------------------------

    def launch_targets(self, source, keyword):
        """(targets, via_row): walker targets for a fresh query at source.

        An existing keyword row supplies up to k of its own neighbours;
        otherwise the merged neighbour/power ranking is used.
        """
        peer = self.net.peers[source]
        peers = self.net.peers
        k = self.p.k_walkers
        row = peer.qq.touch(keyword, self.tick)
        if row is not None:
            items = []
            for pid, q in row.items():
                if peers[pid].alive:
                    items.append((-q, pid))
            items.sort()
            return [pid for _, pid in items[:k]], True
        return (merge_top_k(peer.nq, peer.pq, k,
                            lambda pid: peers[pid].alive), False)

    def _baseline_targets(self, source, keyword):
        alive = [pid for pid in self.net.adj[source]
                 if self.net.peers[pid].alive]
        k = min(self.p.k_walkers, len(alive))
        if k == 0:
            return []
        if self.p.algo == ALGO_RW:
            return self.rng.sample(alive, k)
        return aps_select(self.net, source, keyword, k, self.rng,
                          init=self.p.aps_init)

    def _launch(self, source, keyword):
        qid = self.issued
        self.issued += 1
        interval = self._interval_of(qid)
        if (qid + 1) % self.p.metric_interval == 0:
            self._interval_issued_full.add(interval)
        if self.p.churn_interval and self.issued % self.p.churn_interval == 0:
            self._churn_due += 1
        self._bump("queries_issued", interval)
        self._interval_open[interval] = self._interval_open.get(interval, 0)

        query = Query(qid, source, keyword, interval)
        peer = self.net.peers[source]

        # Source storage satisfies the query outright.
        nr = self.net.match_count(source, keyword)
        if nr > 0:
            query.resolved = True
            query.resolved_tick = self.tick
            query.hit_hops = 0
            query.hit_path = [source]
            self._bump("hits", interval)
            self._bump("hit_events", interval)
            self._bump("hits_by_power" if peer.klass == POWER
                       else "hits_by_ordinary", interval)
            self._trace(query.qid, -1, source, "local_hit", -1, 0)
            return query

        dst = self.p.algo == ALGO_DST
        if dst:
            targets, via_row = self.launch_targets(source, keyword)
            if not via_row and targets:
                peer.qq.insert(keyword, peer.nq, self.tick)
                query.fresh_row = True
        else:
            targets, via_row = self._baseline_targets(source, keyword), False

        if not targets:
            return query  # immediate miss; finalized with zero walkers

        self.queries[qid] = query
        query.outstanding = len(targets)
        self._interval_open[interval] += 1
        aps = self.p.algo == ALGO_APS
        for target in targets:
            mid = self.next_mid
            self.next_mid += 1
            is_nbr = target in peer.nq
            walker = Walker(mid, qid, keyword, self.p.ttl0, source, target,
                            via_row, is_nbr)
            self.walkers_launched += 1
            query.carried.add(target)
            if aps:
                self._aps_walk_decrement(source, target, keyword)
            self._schedule(walker, target)
            self._trace(qid, mid, source, "launch", target, walker.ttl)
        return query

    def _schedule(self, walker, target):
        t = self.tick + 1
        box = self.arrivals.get(t)
        if box is None:
            box = []
            self.arrivals[t] = box
        box.append(walker)
        self._enqueue_load(target, walker.mid)

    # -- delivery and routing ------------------------------------------------

    def _deliver(self, walker):
        pid = walker.path[-1]
        peer = self.net.peers[pid]
        query = self.queries[walker.qid]
        if not peer.alive:
            self._end_walker(walker, query, END_DEAD)
            return
        if pid in self.net.free_rider_ids:
            self._bump("free_rider_msgs_received", query.interval)
        if query.resolved and self.tick > query.resolved_tick:
            # The search already succeeded; outstanding siblings retire.
            # Hits landing in the resolution tick still process fully.
            self._end_walker(walker, query, END_RETIRED)
            return
        if pid in query.visited:
            self._handle_duplicate(walker, query, peer)
            return
        query.visited.add(pid)
        self.visited_ever.add(pid)
        peer.queries_received += 1
        nr = self.net.match_count(pid, walker.keyword)
        if nr > 0:
            peer.hits_produced += 1
            self._on_hit(walker, query, peer, nr)
            return
        self._forward(walker, query, peer)

    def decide(self, pid, walker):
        """Routing decision at pid without mutating state.

        Returns ("hit", nr), ("forward", next_pid) or ("terminate", reason).
        """
        peer = self.net.peers[pid]
        nr = self.net.match_count(pid, walker.keyword)
        if nr > 0:
            return ("hit", nr)
        if walker.ttl <= 0 and not (self.p.algo == ALGO_DST
                                    and peer.klass == POWER
                                    and not walker.enhanced):
            return ("terminate", END_TTL)
        nxt = self._next_hop(peer, walker)
        if nxt < 0:
            return ("terminate", END_DEAD)
        return ("forward", nxt)

    def _forward(self, walker, query, peer):
        if walker.ttl <= 0:
            if (self.p.algo == ALGO_DST and peer.klass == POWER
                    and not walker.enhanced):
                walker.ttl += self.p.tmax - self.p.ttl0
                walker.enhanced = True
                self._bump("ttl_enhancements_used", query.interval)
                self._trace(query.qid, walker.mid, peer.pid, "enhance", -1,
                            walker.ttl)
            else:
                self._end_walker(walker, query, END_TTL)
                return
        nxt = self._next_hop(peer, walker)
        if nxt < 0:
            self._end_walker(walker, query, END_DEAD)
            return
        walker.ttl -= 1
        walker.hops += 1
        walker.path.append(nxt)
        walker.path_set.add(nxt)
        query.carried.add(nxt)
        if self.p.algo == ALGO_APS:
            self._aps_walk_decrement(peer.pid, nxt, walker.keyword)
        self._schedule(walker, nxt)
        self._trace(query.qid, walker.mid, peer.pid, "forward", nxt,
                    walker.ttl)

    def _next_hop(self, peer, walker):
        if self.p.algo != ALGO_DST:
            return self._baseline_next_hop(peer, walker)
        peers = self.net.peers
        path = walker.path_set
        allowed = lambda pid: pid not in path and peers[pid].alive
        if peer.klass == POWER:
            # Power peers relay through other power peers only.
            return _best_entry(peer.pq, allowed)
        row = peer.qq.touch(walker.keyword, self.tick)
        if row is not None:
            return _best_entry(row, allowed)
        best_n = _best_entry(peer.nq, allowed)
        best_p = _best_entry(peer.pq, allowed)
        if best_n < 0:
            return best_p
        if best_p < 0:
            return best_n
        qn = peer.nq[best_n]
        qp = peer.pq[best_p]
        if qn > qp or (qn == qp and best_n < best_p):
            return best_n
        return best_p

    def _baseline_next_hop(self, peer, walker):
        sender = walker.path[-2]
        if self.p.algo == ALGO_RW:
            return random_walk_step(self.net, peer.pid, self.rng,
                                    exclude=sender)
        picked = aps_select(self.net, peer.pid, walker.keyword, 1, self.rng,
                            init=self.p.aps_init, exclude=sender)
        return picked[0] if picked else -1

    # -- duplicates ----------------------------------------------------------

    def decide_duplicate(self, pid, walker, query):
        """Next hop for a walker revisiting a peer that already served its query.

        The sender's class picks the ranking table; peers that already
        carried the query are excluded. Returns -1 when undeliverable.
        """
        peer = self.net.peers[pid]
        peers = self.net.peers
        sender = peers[walker.path[-2]]
        table = peer.pq if sender.klass == POWER else peer.nq
        carried = query.carried
        return _best_entry(table, lambda t: t not in carried
                           and peers[t].alive)

    def _handle_duplicate(self, walker, query, peer):
        self._bump("duplicates_generated", query.interval)
        algo = self.p.algo
        if algo == ALGO_APS:
            # Duplicate arrivals are failure states; the walker dies.
            self._bump("duplicates_dropped", query.interval)
            self._end_walker(walker, query, END_DUP)
            return
        if walker.ttl <= 0:
            self._bump("duplicates_dropped", query.interval)
            self._end_walker(walker, query,
                             END_TTL if algo != ALGO_DST else END_DUP)
            return
        if algo == ALGO_RW:
            nxt = self._baseline_next_hop(peer, walker)
        else:
            nxt = self.decide_duplicate(peer.pid, walker, query)
        if nxt < 0:
            self._bump("duplicates_dropped", query.interval)
            self._end_walker(walker, query,
                             END_DEAD if algo != ALGO_DST else END_DUP)
            return
        self._bump("duplicates_forwarded", query.interval)
        walker.ttl -= 1
        walker.hops += 1
        walker.path.append(nxt)
        walker.path_set.add(nxt)
        query.carried.add(nxt)
        self._schedule(walker, nxt)
        self._trace(query.qid, walker.mid, peer.pid, "dup_forward", nxt,
                    walker.ttl)

    # -- hits and reinforcement ----------------------------------------------

    def _on_hit(self, walker, query, responder, nr):
        interval = query.interval
        first_hit = not query.resolved
        self._bump("hit_events", interval)
        self._trace(query.qid, walker.mid, responder.pid, "hit", -1,
                    walker.ttl)
        if first_hit:
            query.resolved = True
            query.resolved_tick = self.tick
            query.hit_hops = walker.hops
            query.hit_path = list(walker.path)
            self._bump("hits", interval)
            self._bump("sum_hops_on_hits", interval, walker.hops)
            self._bump("hits_by_power" if responder.klass == POWER
                       else "hits_by_ordinary", interval)
            if walker.enhanced:
                self._bump("hits_via_enhancement", interval)
            # Baseline walkers count as parallel routing: the launch fans
            # out over plain neighbours rather than a keyword row.
            self._bump("hits_via_query_table" if walker.via_row
                       else "hits_via_parallel_routing", interval)
        if walker.first_is_nbr:
            query.nbr_hit = True
        if self.p.algo == ALGO_DST:
            self._reverse_updates(walker, query, responder, nr)
            if first_hit and self.p.cache_at_source:
                self._cache_at_source(query, responder)
        elif self.p.algo == ALGO_APS:
            self._aps_path_update(walker, True)
        self._end_walker(walker, query, END_HIT, decay=False)

    def _reverse_updates(self, walker, query, responder, nr):
        """Reinforce every table on the reverse path that routed the walker."""
        p = self.p
        path = walker.path
        keyword = walker.keyword
        peers = self.net.peers
        hp = walker.hops
        r_nq = reward_query(p.ttl0, hp, nr, p.qr_w1, p.qr_w2)
        r_pq = reward_power(p.ttl0, hp, p.pp_w1)
        for i in range(len(path) - 2, -1, -1):
            node = peers[path[i]]
            if not node.alive:
                continue
            nxt = path[i + 1]
            row = node.qq.get(keyword)
            if row is not None:
                if nxt in row:
                    row[nxt] = update_query_q(row[nxt], r_nq, p.alpha, HIT)
            elif nxt in node.nq:
                # A hit through a neighbour seeds the keyword row from
                # column averages of past queries.
                node.qq.insert_from_column_averages(keyword, node.nq,
                                                    self.tick)
                row = node.qq.get(keyword)
                row[nxt] = update_query_q(row[nxt], r_nq, p.alpha, HIT)
            if nxt in node.nq:
                r_n = reward_neighbour(peers[nxt].hits_produced,
                                       peers[nxt].queries_received)
                node.nq[nxt] = update_neighbour_q(node.nq[nxt], r_n,
                                                  p.nb_w1, p.nb_w2, True)
            if nxt in node.pq:
                node.pq[nxt] = update_power_q(node.pq[nxt], r_pq, p.alpha,
                                              HIT)

    def _cache_at_source(self, query, responder):
        """Copy one matching object into the query source's storage."""
        oids = self.net.kw_objects.get(query.keyword)
        best = -1
        for oid in oids:
            if oid in responder.shared and (best < 0 or oid < best):
                best = oid
        if best < 0:
            return
        self.net.obj_popularity[best] += 1
        source = self.net.peers[query.source]
        if not source.alive or best in source.shared:
            return
        if len(source.shared) >= source.capacity:
            return
        source.shared.add(best)
        if source.klass != POWER:
            promoted = promote_power_peer(self.net, source.pid,
                                          self.p.broadcast_hops)
            if not promoted:
                self._refresh_neighbour_entries(source)

    def _refresh_neighbour_entries(self, source):
        """A grown library can make the source newly eligible for the
        neighbour tables of adjacent peers."""
        f_th = self.net.thresholds.f_th
        shared = len(source.shared)
        for nbr_id in self.net.adj[source.pid]:
            nbr = self.net.peers[nbr_id]
            if source.pid in nbr.nq or source.pid in nbr.pq:
                continue
            eff = effective_f_th(nbr, f_th)
            if shared >= eff:
                nbr.nq[source.pid] = init_neighbour_q(shared, eff)

    def _source_miss_decay(self, walker, query):
        """Negative reinforcement at the source for a failed walker's first hop."""
        p = self.p
        source = self.net.peers[query.source]
        if not source.alive:
            return
        first = walker.first_hop
        row = source.qq.get(walker.keyword)
        if row is not None and first in row:
            row[first] = update_query_q(row[first], 0.0, p.alpha, MISS)
        if first in source.nq:
            peer = self.net.peers[first]
            r_n = reward_neighbour(peer.hits_produced, peer.queries_received)
            source.nq[first] = update_neighbour_q(source.nq[first], r_n,
                                                  p.nb_w1, p.nb_w2, False)
        if first in source.pq:
            source.pq[first] = update_power_q(source.pq[first], 0.0,
                                              p.alpha, MISS)

    def _aps_walk_decrement(self, pid, target, keyword):
        """Pessimistic walking: an edge is charged the moment a walker
        crosses it, which also steers concurrent siblings apart. A later
        hit restores the charge on top of the reward."""
        if self.p.aps_optimistic:
            return
        aps_update(self.net.peers[pid], keyword, target, False,
                   penalty=self.p.aps_penalty, floor=self.p.aps_floor,
                   init=self.p.aps_init)

    def _aps_path_update(self, walker, hit):
        """Settle a finished walker's per-keyword indices along its path.

        Pessimistic mode charged each edge in flight: a hit refunds the
        charge and adds the reward; a failure stands as charged.
        Optimistic mode settles everything here instead.
        """
        p = self.p
        path = walker.path
        keyword = walker.keyword
        peers = self.net.peers
        if not p.aps_optimistic:
            if not hit:
                return
            bonus = p.aps_reward + p.aps_penalty
            for i in range(len(path) - 1):
                aps_update(peers[path[i]], keyword, path[i + 1], True,
                           reward=bonus, init=p.aps_init)
            return
        for i in range(len(path) - 1):
            aps_update(peers[path[i]], keyword, path[i + 1], hit,
                       reward=p.aps_reward, penalty=p.aps_penalty,
                       floor=p.aps_floor, init=p.aps_init)

    # -- walker termination ----------------------------------------------------

    def _end_walker(self, walker, query, reason, decay=True):
        self.end_counts[reason] += 1
        if reason != END_HIT:
            self._trace(query.qid, walker.mid, walker.path[-1], reason, -1,
                        walker.ttl)
        if decay:
            if self.p.algo == ALGO_DST:
                self._source_miss_decay(walker, query)
            elif self.p.algo == ALGO_APS:
                self._aps_path_update(walker, False)
        query.outstanding -= 1
        if query.outstanding <= 0:
            self._finalize_query(query)

    def _finalize_query(self, query):
        self.queries.pop(query.qid, None)
        self._interval_open[query.interval] -= 1
        if self.p.algo == ALGO_DST and query.fresh_row and not query.nbr_hit:
            # A keyword row added at launch is kept only when some hit came
            # back through a neighbour walker.
            source = self.net.peers[query.source]
            source.qq.delete(query.keyword)

    def _trace(self, qid, mid, pid, action, nxt, ttl):
        if self.trace is not None:
            self.trace.append((self.tick, qid, mid, pid, action, nxt, ttl))
