"""Load-balanced switch with randomized dyadic striping: simulator,
comparator policies, and executable stability/delay analysis."""

from .model import (
    DestDist,
    Packet,
    Policy,
    QueueId,
    QueueStage,
    SimMetrics,
    Stripe,
    StripeInterval,
    SwitchConfig,
    TrafficSpec,
)

__all__ = [
    "DestDist",
    "Packet",
    "Policy",
    "QueueId",
    "QueueStage",
    "SimMetrics",
    "Stripe",
    "StripeInterval",
    "SwitchConfig",
    "TrafficSpec",
    "run",
]

__version__ = "0.1.0"


def run(config):
    """Run one simulation; see sprinklers.engine.run."""
    from .engine import run as _run

    return _run(config)
