"""Per-interval metric rows and CSV emission."""

import csv
from dataclasses import dataclass, fields

__all__ = ["MetricsRow", "build_series", "emit_csv", "emit_loads_csv",
           "read_csv", "METRIC_COLUMNS"]


@dataclass
class MetricsRow:
    interval: int
    queries_issued: int
    hits: int
    success_rate: float
    sum_hops_on_hits: int
    avg_hops: float
    hits_per_query: float
    duplicates_generated: int
    duplicates_forwarded: int
    duplicates_dropped: int
    coverage_fraction: float
    ttl_enhancements_used: int
    hits_via_enhancement: int
    hits_by_ordinary: int
    hits_by_power: int
    hits_via_query_table: int
    hits_via_parallel_routing: int
    free_rider_msgs_received: int


METRIC_COLUMNS = tuple(f.name for f in fields(MetricsRow))
_FLOAT_COLUMNS = {"success_rate", "avg_hops", "hits_per_query",
                  "coverage_fraction"}


def build_series(engine):
    """Assemble MetricsRow records from an engine's interval counters."""
    counts = engine.intervals
    n_intervals = len(counts["queries_issued"])

    def get(name, i):
        col = counts[name]
        return col[i] if i < len(col) else 0

    rows = []
    for i in range(n_intervals):
        queries = get("queries_issued", i)
        hits = get("hits", i)
        sum_hops = get("sum_hops_on_hits", i)
        # Hop averages cover queries resolved by walkers; answers served
        # straight from the source's own storage involve no search hops.
        walker_hits = (get("hits_via_query_table", i)
                       + get("hits_via_parallel_routing", i))
        rows.append(MetricsRow(
            interval=i,
            queries_issued=queries,
            hits=hits,
            success_rate=hits / queries if queries else 0.0,
            sum_hops_on_hits=sum_hops,
            avg_hops=sum_hops / walker_hits if walker_hits else 0.0,
            hits_per_query=get("hit_events", i) / queries if queries else 0.0,
            duplicates_generated=get("duplicates_generated", i),
            duplicates_forwarded=get("duplicates_forwarded", i),
            duplicates_dropped=get("duplicates_dropped", i),
            coverage_fraction=engine.coverage.get(i, 0.0),
            ttl_enhancements_used=get("ttl_enhancements_used", i),
            hits_via_enhancement=get("hits_via_enhancement", i),
            hits_by_ordinary=get("hits_by_ordinary", i),
            hits_by_power=get("hits_by_power", i),
            hits_via_query_table=get("hits_via_query_table", i),
            hits_via_parallel_routing=get("hits_via_parallel_routing", i),
            free_rider_msgs_received=get("free_rider_msgs_received", i),
        ))
    return rows


def _format(name, value):
    if name in _FLOAT_COLUMNS:
        return f"{value:.6f}"
    return str(value)


def emit_csv(series, path):
    """Write the interval series as CSV: header plus one row per interval."""
    if not series:
        raise ValueError("refusing to emit an empty series")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in series:
            writer.writerow([_format(name, getattr(row, name))
                             for name in METRIC_COLUMNS])


def emit_loads_csv(snapshots, path):
    """Write per-interval power-peer queue snapshots."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("tick", "peer_id", "queue_len", "capacity"))
        for tick, pid, qlen, cap in snapshots:
            writer.writerow((tick, pid, qlen, cap))


def read_csv(path):
    """Parse a metrics CSV back into MetricsRow records."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            kwargs = {}
            for name in METRIC_COLUMNS:
                raw = rec[name]
                kwargs[name] = float(raw) if name in _FLOAT_COLUMNS \
                    else int(raw)
            rows.append(MetricsRow(**kwargs))
    return rows
