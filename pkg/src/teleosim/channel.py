"""A simulated one-way transport with latency, jitter, and packet drops.

Samples are queued with a delivery deadline of send time plus latency plus
a uniform jitter term, or dropped outright with a fixed probability. All
randomness comes from one seeded generator per channel, so a run is fully
reproducible. Delivery order is (deadline, sequence number), which keeps
ties stable and never compares payloads.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any

import numpy as np

# Deadline comparisons get a hair of slack so "latency equal to a whole
# number of ticks" delivers on that tick regardless of float rounding.
_TIME_EPS = 1e-12


@dataclass(frozen=True)
class ChannelConfig:
    rate_hz: float
    latency_s: float = 0.0
    jitter_s: float = 0.0
    drop_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.rate_hz > 0.0:
            raise ValueError("rate_hz must be positive")
        if self.latency_s < 0.0:
            raise ValueError("latency_s must be nonnegative")
        if not 0.0 <= self.jitter_s <= max(self.latency_s, 0.0):
            raise ValueError("jitter_s must satisfy 0 <= jitter_s <= latency_s")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")


@dataclass(frozen=True)
class ChannelStats:
    sent: int
    delivered: int
    dropped: int
    in_flight: int


class Channel:
    """One direction of transport. Use two instances for a bilateral link."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        self._rng = np.random.default_rng(config.seed)
        self._pending: list[tuple[float, int, Any]] = []
        self._seq = 0
        self._sent = 0
        self._delivered = 0
        self._dropped = 0

    def send(self, payload: Any, t_now: float) -> None:
        self._seq += 1
        self._sent += 1
        if self.config.drop_prob > 0.0 and self._rng.random() < self.config.drop_prob:
            self._dropped += 1
            return
        delay = self.config.latency_s
        if self.config.jitter_s > 0.0:
            delay += float(self._rng.uniform(-self.config.jitter_s, self.config.jitter_s))
        heapq.heappush(self._pending, (t_now + delay, self._seq, payload))

    def deliver(self, t_now: float) -> list[Any]:
        """All payloads whose deadline has passed, oldest deadline first."""
        out = []
        limit = t_now + _TIME_EPS
        while self._pending and self._pending[0][0] <= limit:
            out.append(heapq.heappop(self._pending)[2])
        self._delivered += len(out)
        return out

    def stats(self) -> ChannelStats:
        return ChannelStats(
            sent=self._sent,
            delivered=self._delivered,
            dropped=self._dropped,
            in_flight=len(self._pending),
        )


def channel_stats(channel: Channel) -> ChannelStats:
    return channel.stats()
