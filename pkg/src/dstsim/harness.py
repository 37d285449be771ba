"""Experiment harness: deterministic setup, event loop runs, result bundles."""

import random
from dataclasses import dataclass, field

from dstsim import model
from dstsim._kernel import (
    ALGO_APS,
    ALGO_DST,
    ALGO_RW,
    Engine,
    POWER,
    Params,
    Thresholds,
)
from dstsim.config import SimConfig, config_lines
from dstsim.metrics import MetricsRow, build_series

__all__ = ["run_experiment", "RunResult", "measure_coverage",
           "build_network", "manifest_lines"]

_ALGO_CODES = {"dst": ALGO_DST, "aps": ALGO_APS, "rw": ALGO_RW}

# Sub-seed derivation order is part of the determinism contract.
_STREAMS = ("topology", "up", "objects", "power", "workload", "churn",
            "routing")


@dataclass
class RunResult:
    config: SimConfig
    series: list                      # MetricsRow records
    topology_hash: str
    walkers_launched: int
    end_counts: dict
    queries_issued: int
    queries_skipped: int
    peak_utilization: dict            # power peer id -> peak queue fraction
    load_snapshots: list              # (tick, pid, queue_len, capacity)
    net: object = None
    trace: list = field(default_factory=list)

    def quartile_rows(self):
        """Interval rows split into four contiguous groups."""
        rows = self.series
        n = len(rows)
        bounds = [round(n * i / 4) for i in range(5)]
        return [rows[bounds[i]:bounds[i + 1]] for i in range(4)]


def _derive_seeds(seed):
    master = random.Random(seed)
    return {name: master.getrandbits(63) for name in _STREAMS}


def build_network(cfg, seeds=None):
    """Construct the topology, objects, tables and power peers for a config."""
    seeds = seeds or _derive_seeds(cfg.seed)
    net = model.generate_topology(cfg.nodes, cfg.avg_degree, cfg.free_riders,
                                  seeds["topology"],
                                  qq_capacity=cfg.query_table_capacity)
    model.set_up_fraction(net, cfg.up_fraction, seeds["up"])
    model.distribute_objects(
        net, cfg.objects, cfg.keyword_pool, seeds["objects"],
        max_keywords_per_object=cfg.max_keywords_per_object,
        keyword_share_prob=cfg.keyword_share_prob,
        staple_weight=cfg.placement_staple_weight,
        storage_min=cfg.storage_min, storage_max=cfg.storage_max,
        second_object_prob=cfg.second_object_prob,
        third_object_prob=cfg.third_object_prob)
    thresholds = Thresholds(cfg.f_th, cfg.s_th, cfg.d_th,
                            cfg.qp_w1, cfg.qp_w2, cfg.qp_w3)
    model.assign_power_peers(net, thresholds, cfg.power_init_fraction,
                             seeds["power"], queue_cap_min=cfg.queue_cap_min,
                             queue_cap_max=cfg.queue_cap_max)
    model.build_neighbour_tables(net, thresholds)
    model.initial_broadcasts(net, cfg.broadcast_hops)
    return net


def build_workload(net, cfg, seed):
    """Per-tick launch lists: every node's query stream from a random slot.

    Query keywords are drawn uniformly from keywords some object actually
    carries, so every query has at least one satisfiable target.
    """
    rng = random.Random(seed)
    keywords = sorted(net.kw_objects)
    launches = {}
    for pid in range(net.n()):
        offset = rng.randrange(cfg.query_interval_ticks)
        for j in range(cfg.queries_per_node):
            tick = offset + j * cfg.query_interval_ticks
            kw = keywords[rng.randrange(len(keywords))]
            launches.setdefault(tick, []).append((pid, kw))
    return launches


def _make_params(cfg):
    return Params(
        algo=_ALGO_CODES[cfg.algo], ttl0=cfg.ttl, k_walkers=cfg.walkers,
        alpha=cfg.alpha, qr_w1=cfg.qr_w1, qr_w2=cfg.qr_w2, nb_w1=cfg.nb_w1,
        nb_w2=cfg.nb_w2, pp_w1=cfg.pp_w1, broadcast_hops=cfg.broadcast_hops,
        lb_enabled=cfg.lb_enabled, lb_threshold=cfg.lb_threshold,
        service_rate=cfg.service_rate, metric_interval=cfg.metric_interval,
        churn_interval=cfg.churn_interval_queries, aps_init=cfg.aps_init,
        aps_reward=cfg.aps_reward, aps_penalty=cfg.aps_penalty,
        aps_floor=cfg.aps_floor, aps_optimistic=cfg.aps_optimistic,
        cache_at_source=cfg.cache_at_source)


def run_experiment(cfg, keep_net=False, trace=False):
    """Run one full experiment; identical configs give identical results."""
    cfg.validate()
    seeds = _derive_seeds(cfg.seed)
    net = build_network(cfg, seeds)
    topo_hash = model.topology_hash(net)
    workload = build_workload(net, cfg, seeds["workload"])
    engine = Engine(net, _make_params(cfg),
                    rng_route=random.Random(seeds["routing"]),
                    rng_churn=random.Random(seeds["churn"]),
                    trace=[] if trace else None)
    engine.set_workload(workload)
    engine.run()

    peaks = {}
    for peer in net.peers:
        if peer.klass == POWER:
            peaks[peer.pid] = peer.peak_queue / peer.queue_capacity
    return RunResult(
        config=cfg,
        series=build_series(engine),
        topology_hash=topo_hash,
        walkers_launched=engine.walkers_launched,
        end_counts=dict(engine.end_counts),
        queries_issued=engine.issued,
        queries_skipped=engine.skipped,
        peak_utilization=peaks,
        load_snapshots=list(engine.load_snapshots),
        net=net if keep_net else None,
        trace=engine.trace or [],
    )


def measure_coverage(net, ttl, sample_queries, walkers=6, seed=0,
                     params=None):
    """Fraction of alive sharers visited by at least one walker.

    Issues `sample_queries` live queries from random alive peers on the
    given network (tables learn as usual). The denominator excludes the
    source only when the whole sample came from a single peer; an empty
    denominator is vacuously full coverage.
    """
    rng = random.Random(seed)
    params = params or Params(algo=ALGO_DST, ttl0=ttl, k_walkers=walkers)
    engine = Engine(net, params, rng_route=random.Random(seed))
    alive = [p.pid for p in net.peers if p.alive]
    keywords = sorted(net.kw_objects)
    if not alive or not keywords:
        return 1.0
    sources = set()
    for _ in range(sample_queries):
        source = alive[rng.randrange(len(alive))]
        sources.add(source)
        engine.inject_query(source, keywords[rng.randrange(len(keywords))])
    lone_source = next(iter(sources)) if len(sources) == 1 else None
    total = 0
    covered = 0
    for peer in net.peers:
        if not peer.alive or peer.pid in net.free_rider_ids:
            continue
        if peer.pid == lone_source:
            continue
        total += 1
        if peer.pid in engine.visited_ever:
            covered += 1
    return covered / total if total else 1.0


def manifest_lines(cfg, result, extra=()):
    """Resolved config plus run facts, in the config file format."""
    lines = ["# resolved configuration"]
    lines.extend(config_lines(cfg))
    lines.append("# run facts")
    lines.append(f"topology_hash = {result.topology_hash}")
    lines.append(f"queries_issued = {result.queries_issued}")
    lines.append(f"queries_skipped = {result.queries_skipped}")
    lines.append(f"walkers_launched = {result.walkers_launched}")
    for reason, count in sorted(result.end_counts.items()):
        lines.append(f"walkers_{reason} = {count}")
    lines.extend(extra)
    return lines
