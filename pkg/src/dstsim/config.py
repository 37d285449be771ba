"""Simulation configuration: defaults, validation, file and override parsing.

Config files are flat `key = value` lines with `#` comments, one key per
line, matching the manifest format the harness writes back out.
"""

from dataclasses import dataclass, fields

from dstsim._kernel import ConfigurationError

ALGOS = ("dst", "aps", "rw")


@dataclass
class SimConfig:
    # Network
    nodes: int = 10000
    avg_degree: float = 3.5
    free_riders: int = 50
    up_fraction: float = 0.8
    # Objects and keywords
    objects: int = 100
    keyword_pool: int = 30000
    max_keywords_per_object: int = 4
    keyword_share_prob: float = 0.0
    placement_staple_weight: float = 0.5
    second_object_prob: float = 0.3
    third_object_prob: float = 0.1
    storage_min: int = 3
    storage_max: int = 12
    # Workload
    queries_per_node: int = 100
    query_interval_ticks: int = 20
    churn_interval_queries: int = 50000
    metric_interval: int = 5000
    # Search
    algo: str = "dst"
    walkers: int = 6
    ttl: int = 6
    # Learning
    alpha: float = 0.2
    qr_w1: float = 0.4
    qr_w2: float = 0.6
    nb_w1: float = 0.8
    nb_w2: float = 0.4
    pp_w1: float = 0.5
    # Power peers
    f_th: int = 4
    s_th: int = 4
    d_th: int = 7
    qp_w1: float = 0.34
    qp_w2: float = 0.33
    qp_w3: float = 0.33
    broadcast_hops: int = 4
    power_init_fraction: float = 0.1
    query_table_capacity: int = 512
    cache_at_source: bool = True
    # Load balancing
    lb_enabled: bool = True
    lb_threshold: float = 0.6
    queue_cap_min: int = 50
    queue_cap_max: int = 200
    service_rate: int = 8
    # Baseline tuning
    aps_init: float = 30.0
    aps_reward: float = 10.0
    aps_penalty: float = 5.0
    aps_floor: float = 1.0
    aps_optimistic: bool = False
    # Reproducibility
    seed: int = 1

    def validate(self):
        c = self
        checks = [
            (c.nodes >= 2, "nodes", "need at least 2"),
            (1 <= c.avg_degree < c.nodes, "avg_degree", "must be in [1, nodes)"),
            (0 <= c.free_riders < c.nodes, "free_riders", "must be in [0, nodes)"),
            (0.0 < c.up_fraction <= 1.0, "up_fraction", "must be in (0, 1]"),
            (c.objects >= 1, "objects", "need at least 1"),
            (c.keyword_pool >= c.objects, "keyword_pool", "must be >= objects"),
            (c.max_keywords_per_object >= 1, "max_keywords_per_object",
             "must be >= 1"),
            (0.0 <= c.keyword_share_prob < 1.0, "keyword_share_prob",
             "must be in [0, 1)"),
            (0.0 < c.placement_staple_weight <= 1.0,
             "placement_staple_weight", "must be in (0, 1]"),
            (0.0 <= c.second_object_prob <= 1.0, "second_object_prob",
             "must be in [0, 1]"),
            (0.0 <= c.third_object_prob <= 1.0, "third_object_prob",
             "must be in [0, 1]"),
            (1 <= c.storage_min <= c.storage_max, "storage_min",
             "must be in [1, storage_max]"),
            (c.queries_per_node >= 1, "queries_per_node", "must be >= 1"),
            (c.query_interval_ticks >= 1, "query_interval_ticks",
             "must be >= 1"),
            (c.churn_interval_queries >= 0, "churn_interval_queries",
             "must be >= 0 (0 disables churn)"),
            (c.metric_interval >= 1, "metric_interval", "must be >= 1"),
            (c.algo in ALGOS, "algo", f"must be one of {ALGOS}"),
            (c.walkers >= 1, "walkers", "must be >= 1"),
            (c.ttl >= 1, "ttl", "must be >= 1"),
            (0.0 < c.alpha <= 1.0, "alpha", "must be in (0, 1]"),
            (0.0 < c.qr_w1 < c.qr_w2 < 1.0, "qr_w1",
             "need 0 < qr_w1 < qr_w2 < 1"),
            (abs(c.qr_w1 + c.qr_w2 - 1.0) <= 1e-9, "qr_w2",
             "qr weights must sum to 1"),
            (0.1 <= c.nb_w2 < c.nb_w1 <= 1.0, "nb_w1",
             "need 0.1 <= nb_w2 < nb_w1 <= 1"),
            (0.0 < c.pp_w1 < 1.0, "pp_w1", "must be in (0, 1)"),
            (c.f_th >= 1, "f_th", "must be >= 1"),
            (c.s_th >= 1, "s_th", "must be >= 1"),
            (c.d_th >= 1, "d_th", "must be >= 1"),
            (abs(c.qp_w1 + c.qp_w2 + c.qp_w3 - 1.0) <= 1e-9, "qp_w1",
             "qp weights must sum to 1"),
            (all(0.0 < w < 1.0 for w in (c.qp_w1, c.qp_w2, c.qp_w3)),
             "qp_w1", "qp weights must each be in (0, 1)"),
            (c.broadcast_hops >= 0, "broadcast_hops", "must be >= 0"),
            (0.0 <= c.power_init_fraction <= 1.0, "power_init_fraction",
             "must be in [0, 1]"),
            (c.query_table_capacity >= 1, "query_table_capacity",
             "must be >= 1"),
            (0.0 < c.lb_threshold <= 1.0, "lb_threshold", "must be in (0, 1]"),
            (1 <= c.queue_cap_min <= c.queue_cap_max, "queue_cap_min",
             "must be in [1, queue_cap_max]"),
            (c.service_rate >= 1, "service_rate", "must be >= 1"),
            (c.aps_init > 0, "aps_init", "must be > 0"),
            (c.aps_reward > 0, "aps_reward", "must be > 0"),
            (c.aps_penalty > 0, "aps_penalty", "must be > 0"),
            (c.aps_floor > 0, "aps_floor", "must be > 0"),
        ]
        for ok, field, msg in checks:
            if not ok:
                raise ConfigurationError(f"{field}: {msg}")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _parse_value(key, raw):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool" or kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int" or kind is int:
            return int(raw)
        if kind == "float" or kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r}") from None


def parse_config_text(text, base=None):
    """Build a SimConfig from `key = value` lines on top of `base`."""
    cfg = SimConfig(**vars(base)) if base is not None else SimConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigurationError(
                f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def load_config(path=None, overrides=()):
    """Config from an optional file plus repeated `key=value` overrides."""
    cfg = SimConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read(), base=cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"override: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg.validate()


def config_lines(cfg):
    """Canonical `key = value` dump, one field per line."""
    return [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(SimConfig)]
