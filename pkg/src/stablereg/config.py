"""Line-oriented configuration files and scenario descriptions.

A config file lists the storage servers plus protocol parameters::

    server 127.0.0.1:7000
    server 127.0.0.1:7001
    f 0
    k 2
    variant CASSS
    delta 16
    maxint 18446744073709551615
    maxinc 4294967295
    clients 4

Simulation scenarios reuse the same format with ``scenario.*`` keys, e.g.
``scenario.loss_prob 0.1`` or ``scenario.fault 2500 crash s1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .core import (DEFAULT_DELTA, DEFAULT_MAXINC, DEFAULT_MAXINT,
                   InvalidConfig, QuorumConfig, Variant)


class ConfigError(InvalidConfig):
    """Malformed configuration input; message carries the line number."""


FAULT_KINDS = ("crash", "restart", "corruptStore", "corruptChannel",
               "corruptResetState", "corruptIncQueue", "injectOverflowTag")


@dataclass(frozen=True)
class FaultInjection:
    """One scheduled fault: fires at `time_ms` on node `target`."""

    time_ms: float
    kind: str
    target: str

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise InvalidConfig(f"unknown fault kind {self.kind!r}")


@dataclass(frozen=True)
class LinkModel:
    """Per-link fault and latency model for the simulator."""

    loss_prob: float = 0.0
    dup_prob: float = 0.0
    reorder_prob: float = 0.0
    latency_min_ms: float = 15.0
    latency_mode_ms: float = 25.0
    latency_max_ms: float = 60.0
    bandwidth_bytes_per_ms: float = 12_500.0  # ~100 Mbit/s

    def __post_init__(self):
        if not 0.0 <= self.loss_prob < 1.0:
            raise InvalidConfig("loss_prob must be in [0, 1) for fairness")
        for p in (self.dup_prob, self.reorder_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidConfig("probabilities must be in [0, 1]")
        if not 0 < self.latency_min_ms <= self.latency_mode_ms <= self.latency_max_ms:
            raise InvalidConfig("latency distribution requires min <= mode <= max")
        if self.bandwidth_bytes_per_ms <= 0:
            raise InvalidConfig("bandwidth must be positive")

    def mean_rtt_ms(self) -> float:
        one_way = (self.latency_min_ms + self.latency_mode_ms + self.latency_max_ms) / 3
        return 2 * one_way


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a deterministic simulation run needs besides code."""

    quorum: QuorumConfig
    seed: int = 0
    n_writers: int = 1
    n_readers: int = 1
    object_size: int = 64
    op_count: int = 5
    inter_op_delay_ms: tuple[float, float] = (0.0, 200.0)
    link: LinkModel = field(default_factory=LinkModel)
    faults: tuple[FaultInjection, ...] = ()
    gossip_period_ms: float = 100.0
    reset_exchange_period_ms: float = 25.0
    retransmit_timeout_ms: float | None = None
    phase_timeout_ms: float | None = None
    channel_cap: int = 8
    bulk_threshold: int = 8192
    max_run_ms: float = 600_000.0
    mixed_ops: bool = False  # every client flips a seeded coin per operation

    def __post_init__(self):
        if self.n_writers < 0 or self.n_readers < 0 or self.n_clients < 1:
            raise InvalidConfig("need at least one client")
        if self.object_size < 1:
            raise InvalidConfig("object_size must be >= 1 byte")
        if self.op_count < 0:
            raise InvalidConfig("op_count must be >= 0")
        lo, hi = self.inter_op_delay_ms
        if lo < 0 or hi < lo:
            raise InvalidConfig("inter_op_delay_ms must satisfy 0 <= lo <= hi")
        if self.channel_cap < 1:
            raise InvalidConfig("channel_cap must be >= 1")
        crash_targets = {f.target for f in self.faults if f.kind == "crash"
                         and f.target.startswith("s")}
        overflow = any(f.kind == "injectOverflowTag" for f in self.faults)
        if not overflow and len(crash_targets) > self.quorum.f:
            raise InvalidConfig("more server crashes than f outside reset scenarios")

    @property
    def n_clients(self) -> int:
        return self.n_writers + self.n_readers

    def rto_ms(self) -> float:
        if self.retransmit_timeout_ms is not None:
            return self.retransmit_timeout_ms
        return 2.0 * self.link.mean_rtt_ms()

    def phase_deadline_ms(self) -> float:
        if self.phase_timeout_ms is not None:
            return self.phase_timeout_ms
        return 10.0 * self.link.mean_rtt_ms()


def _parse_value(key: str, raw: str, lineno: int):
    try:
        if key in ("f", "k", "delta", "clients", "seed", "object_size",
                   "op_count", "channel_cap", "bulk_threshold",
                   "n_writers", "n_readers"):
            return int(raw)
        if key in ("maxint", "maxinc"):
            return int(raw)
        if key.endswith("_prob") or key.endswith("_ms") or key in ("bandwidth",):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key!r}") from None


def parse_config_text(text: str) -> dict:
    """Parse config text into a settings dict; raises ConfigError with line numbers."""
    settings: dict = {"servers": [], "faults": []}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key == "server":
            if len(parts) != 2:
                raise ConfigError(f"line {lineno}: expected 'server <addr>'")
            settings["servers"].append(parts[1])
        elif key == "scenario.fault":
            if len(parts) != 4:
                raise ConfigError(
                    f"line {lineno}: expected 'scenario.fault <time_ms> <kind> <target>'")
            try:
                t = float(parts[1])
            except ValueError:
                raise ConfigError(f"line {lineno}: bad fault time {parts[1]!r}") from None
            if parts[2] not in FAULT_KINDS:
                raise ConfigError(f"line {lineno}: unknown fault kind {parts[2]!r}")
            settings["faults"].append(FaultInjection(t, parts[2], parts[3]))
        elif len(parts) == 2:
            name = key[len("scenario."):] if key.startswith("scenario.") else key
            settings[name] = _parse_value(name, parts[1], lineno)
        else:
            raise ConfigError(f"line {lineno}: cannot parse {line!r}")
    return settings


def quorum_config_from_settings(settings: dict) -> QuorumConfig:
    servers = tuple(settings.get("servers", ()))
    if not servers:
        raise ConfigError("no 'server' lines in config")
    try:
        variant = Variant(settings.get("variant", "CASSS"))
    except ValueError:
        raise ConfigError(f"unknown variant {settings.get('variant')!r}") from None
    n = len(servers)
    f = int(settings.get("f", 0))
    k = int(settings.get("k", max(1, n - 2 * f) if variant is not Variant.MWABD else 1))
    return QuorumConfig(
        servers=servers,
        f=f,
        k=k,
        variant=variant,
        delta=int(settings.get("delta", DEFAULT_DELTA)),
        maxint=int(settings.get("maxint", DEFAULT_MAXINT)),
        maxinc=int(settings.get("maxinc", DEFAULT_MAXINC)),
        n_clients=int(settings.get("clients", 8)),
    )


def scenario_from_settings(settings: dict) -> ScenarioConfig:
    quorum = quorum_config_from_settings(settings)
    link_kwargs = {}
    for name in ("loss_prob", "dup_prob", "reorder_prob", "latency_min_ms",
                 "latency_mode_ms", "latency_max_ms"):
        if name in settings:
            link_kwargs[name] = float(settings[name])
    if "bandwidth" in settings:
        link_kwargs["bandwidth_bytes_per_ms"] = float(settings["bandwidth"])
    kwargs = {}
    for name in ("seed", "n_writers", "n_readers", "object_size", "op_count",
                 "channel_cap", "bulk_threshold"):
        if name in settings:
            kwargs[name] = int(settings[name])
    for name in ("gossip_period_ms", "reset_exchange_period_ms",
                 "retransmit_timeout_ms", "phase_timeout_ms", "max_run_ms"):
        if name in settings:
            kwargs[name] = float(settings[name])
    if "inter_op_delay_lo_ms" in settings or "inter_op_delay_hi_ms" in settings:
        kwargs["inter_op_delay_ms"] = (
            float(settings.get("inter_op_delay_lo_ms", 0.0)),
            float(settings.get("inter_op_delay_hi_ms", 200.0)),
        )
    return ScenarioConfig(
        quorum=quorum,
        link=LinkModel(**link_kwargs),
        faults=tuple(settings.get("faults", ())),
        **kwargs,
    )


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def load_scenario(path: str) -> ScenarioConfig:
    return scenario_from_settings(load_config(path))


def with_variant(scenario: ScenarioConfig, variant: Variant) -> ScenarioConfig:
    """Same scenario under a different protocol variant (k forced valid)."""
    q = scenario.quorum
    k = q.k if variant is not Variant.MWABD else q.k
    return replace(scenario, quorum=replace(q, variant=variant, k=k))
