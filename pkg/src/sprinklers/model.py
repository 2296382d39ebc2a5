"""Core domain types shared by the simulator, the analysis code and the CLI.

Ports are numbered 1..N everywhere in the public surface; all modular
arithmetic is normalized to that convention (residues {1..N} rather than
{0..N-1}).  These types carry no algorithmic logic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional


class Policy(str, Enum):
    SPRINKLERS = "sprinklers"
    BASELINE = "baseline"
    UFS = "ufs"
    FOFF = "foff"
    PF = "pf"


class DestDist(str, Enum):
    UNIFORM = "uniform"
    DIAGONAL = "diagonal"


class QueueStage(str, Enum):
    INPUT_TO_INTERMEDIATE = "in2mid"
    INTERMEDIATE_TO_OUTPUT = "mid2out"


def is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class TrafficSpec:
    """Bernoulli arrival process: per slot, each input receives a packet with
    probability `load`; the destination is drawn from `dest_dist`.

    uniform:  output j with probability 1/N.
    diagonal: output j = i with probability 1/2, any other output with
              probability 1/(2(N-1)).
    """

    load: float
    dest_dist: DestDist = DestDist.UNIFORM

    def __post_init__(self) -> None:
        if not (0.0 <= self.load <= 1.0):
            raise ValueError(f"load must be in [0, 1], got {self.load}")


@dataclass
class SwitchConfig:
    """Full description of one simulation run.

    `warmup_slots`, `pf_threshold` and `ewma_half_life` default to
    duration/10, N/2 and 16*N^2 respectively when left as None.
    `backend` selects the engine: "reference" is the readable object model,
    "fast" the compiled kernel (sprinklers/baseline, oracle rates only),
    "auto" picks for you.
    """

    n_ports: int
    duration_slots: int
    seed: int
    policy: Policy = Policy.SPRINKLERS
    traffic: TrafficSpec = field(default_factory=lambda: TrafficSpec(0.5))
    pf_threshold: Optional[int] = None
    resize_hysteresis: float = 1.25
    warmup_slots: Optional[int] = None
    rate_mode: str = "oracle"  # "oracle" | "measured"
    ewma_half_life: Optional[int] = None
    backend: str = "auto"  # "auto" | "reference" | "fast"
    trace: bool = False
    debug_checks: bool = False

    def __post_init__(self) -> None:
        self.policy = Policy(self.policy)
        if isinstance(self.traffic, Mapping):
            self.traffic = TrafficSpec(
                load=float(self.traffic["load"]),
                dest_dist=DestDist(self.traffic.get("dest_dist", "uniform")),
            )
        self.validate()

    def validate(self) -> None:
        n = self.n_ports
        if not is_power_of_two(n) or n < 2:
            raise ValueError(f"n_ports must be a power of two >= 2, got {n}")
        if self.duration_slots < n:
            raise ValueError(
                f"duration_slots ({self.duration_slots}) must be >= n_ports ({n})"
            )
        if not (0 <= self.seed < (1 << 64)):
            raise ValueError("seed must fit in 64 unsigned bits")
        if self.pf_threshold is not None and self.pf_threshold < 1:
            raise ValueError("pf_threshold must be a positive integer")
        if self.resize_hysteresis < 1.0:
            raise ValueError("resize_hysteresis must be >= 1")
        if self.warmup_slots is not None and self.warmup_slots < 0:
            raise ValueError("warmup_slots must be >= 0")
        if self.rate_mode not in ("oracle", "measured"):
            raise ValueError(f"unknown rate_mode {self.rate_mode!r}")
        if self.backend not in ("auto", "reference", "fast"):
            raise ValueError(f"unknown backend {self.backend!r}")

    # Resolved defaults -----------------------------------------------------

    @property
    def effective_warmup(self) -> int:
        return self.warmup_slots if self.warmup_slots is not None else self.duration_slots // 10

    @property
    def effective_pf_threshold(self) -> int:
        return self.pf_threshold if self.pf_threshold is not None else self.n_ports // 2

    @property
    def effective_ewma_half_life(self) -> int:
        if self.ewma_half_life is not None:
            return self.ewma_half_life
        return 16 * self.n_ports * self.n_ports

    # Serialization ---------------------------------------------------------

    @classmethod
    def from_mapping(cls, m: Mapping) -> "SwitchConfig":
        known = {
            "n_ports", "duration_slots", "seed", "policy", "pf_threshold",
            "resize_hysteresis", "warmup_slots", "rate_mode", "ewma_half_life",
            "backend", "trace", "debug_checks",
        }
        kwargs = {k: m[k] for k in known if k in m}
        unknown = set(m) - known - {"load", "dest_dist", "traffic"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "traffic" in m:
            kwargs["traffic"] = m["traffic"]
        else:
            kwargs["traffic"] = TrafficSpec(
                load=float(m.get("load", 0.5)),
                dest_dist=DestDist(m.get("dest_dist", "uniform")),
            )
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        return {
            "n_ports": self.n_ports,
            "duration_slots": self.duration_slots,
            "seed": self.seed,
            "policy": self.policy.value,
            "load": self.traffic.load,
            "dest_dist": self.traffic.dest_dist.value,
            "pf_threshold": self.effective_pf_threshold,
            "resize_hysteresis": self.resize_hysteresis,
            "warmup_slots": self.effective_warmup,
            "rate_mode": self.rate_mode,
            "ewma_half_life": self.effective_ewma_half_life,
            "backend": self.backend,
        }


@dataclass(frozen=True)
class StripeInterval:
    """Dyadic range (lo, hi] of intermediate ports, i.e. ports lo+1..hi.

    hi - lo must be a power of two and lo must be divisible by it, so the
    interval is a cell of the recursive halving of (0, N].
    """

    lo: int
    hi: int

    def __post_init__(self) -> None:
        length = self.hi - self.lo
        if self.lo < 0 or not is_power_of_two(length):
            raise ValueError(f"({self.lo}, {self.hi}] is not a dyadic interval")
        if self.lo % length != 0:
            raise ValueError(f"({self.lo}, {self.hi}] is not aligned to its size")

    @property
    def length(self) -> int:
        return self.hi - self.lo

    def contains(self, port: int) -> bool:
        return self.lo < port <= self.hi

    def ports(self) -> range:
        return range(self.lo + 1, self.hi + 1)


@dataclass(slots=True)
class Packet:
    """One fixed-size packet.  `id` is a globally unique monotone sequence
    number and doubles as the exact reordering oracle: within a VOQ, arrival
    order equals id order."""

    id: int
    input: int
    output: int
    arrival_slot: int
    stripe_size: int = 0        # header stamped when the stripe forms
    depart_slot: int = -1       # set at the output; must end up > arrival_slot
    enter_slot: int = -1        # slot the packet entered the intermediate stage
    voq_seq: int = -1           # per-VOQ sequence number (resequencer bookkeeping)
    fake: bool = False          # padding packet, never counted in metrics


@dataclass(slots=True)
class Stripe:
    """Ordered group of 2^k same-VOQ packets switched as one unit."""

    voq: tuple[int, int]
    size: int
    interval: StripeInterval
    packets: list
    formation_slot: int
    # Service progress, used to assert slot/port continuity at both stages.
    s1_served: int = 0
    s1_last_slot: int = -1
    s2_served: int = 0
    s2_last_slot: int = -1

    def __post_init__(self) -> None:
        if len(self.packets) != self.size or self.size != self.interval.length:
            raise ValueError("stripe size, packet count and interval length must agree")
        ids = [p.id for p in self.packets]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("packet ids within a stripe must be strictly increasing")


@dataclass(frozen=True)
class QueueId:
    """Identity of one of the 2N^2 single-server queues (service rate 1/N)."""

    stage: QueueStage
    a: int  # input port (stage 1) or intermediate port (stage 2)
    b: int  # intermediate port (stage 1) or output port (stage 2)


@dataclass
class SimMetrics:
    """Per-run statistics.  Delay statistics cover packets that arrived at or
    after the warm-up boundary; conservation counters cover everything."""

    mean_delay: float
    p99_delay: int
    delay_histogram: dict
    reorder_events: int
    per_queue_peak: dict
    served_packets: int
    arrivals: int
    idle_despite_backlog: int
    flagged_queues: list
    max_resequencer_occupancy: int = 0
    warmup_slots: int = 0
    duration_slots: int = 0

    def csv_row(self, config: SwitchConfig) -> dict:
        return {
            "policy": config.policy.value,
            "n_ports": config.n_ports,
            "load": config.traffic.load,
            "dest_dist": config.traffic.dest_dist.value,
            "seed": config.seed,
            "mean_delay": self.mean_delay,
            "p99_delay": self.p99_delay,
            "reorder_events": self.reorder_events,
            "served_packets": self.served_packets,
            "idle_despite_backlog": self.idle_despite_backlog,
        }


class InvariantViolation(AssertionError):
    """A structural invariant of the switch was broken; the run aborts."""
