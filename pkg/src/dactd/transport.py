"""Simulated communication medium with bounded delays and packet loss.

Every directed edge carries independent lossy traffic: a send attempt at tick
``t`` is dropped with probability ``drop_prob`` unless the edge has already
accumulated ``t1`` consecutive drops, in which case delivery is forced — so
over any window of ``t1 + 1`` attempts at least one succeeds.  A successful
send at ``t_s`` is assigned a delivery tick ``t_r ∈ [t_s, t_s + t2]`` by the
configured delay law.  Payloads are carried verbatim (never copied or
altered) and a successful send is delivered exactly once.

A channel is owned by a single run's lockstep loop; determinism follows from
the seeded generator plus the caller iterating edges in a fixed order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigurationError, TransportError
from .topology import GraphSchedule

DELAY_LAWS = ("uniform", "fixed")


@dataclass(frozen=True)
class ChannelModel:
    """Edge-level channel parameters.

    t1: max ticks between forced successes (0 = every send succeeds);
    t2: max delivery delay in ticks (>= 1);
    drop_prob: per-attempt loss probability, in [0, 1);
    delay_law: "uniform" draws the delay from {0..t2}, "fixed" always uses t2.
    """

    t1: int = 0
    t2: int = 1
    drop_prob: float = 0.0
    delay_law: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.t1 < 0:
            raise ValueError(f"t1 must be non-negative, got {self.t1}")
        if self.t2 < 1:
            raise ValueError(f"t2 must be positive, got {self.t2}")
        if not (0.0 <= self.drop_prob < 1.0):
            raise ConfigurationError(
                f"drop_prob must lie in [0, 1), got {self.drop_prob}; "
                "1.0 would force every send and contradict the loss model")
        if self.delay_law not in DELAY_LAWS:
            raise ConfigurationError(
                f"unknown delay_law {self.delay_law!r}, expected one of {DELAY_LAWS}")


@dataclass
class Message:
    src: int
    dst: int
    payload: Any
    sent_tick: int
    deliver_tick: int


@dataclass
class SendAttempt:
    """Trace record of one attempt_send call (for post-hoc guarantee checks)."""

    tick: int
    src: int
    dst: int
    success: bool
    deliver_tick: int | None


class Channel:
    """Stateful medium binding a ChannelModel to a GraphSchedule."""

    def __init__(self, model: ChannelModel, graph: GraphSchedule,
                 trace: bool = False):
        self.model = model
        self.graph = graph
        self._rng = np.random.default_rng(model.seed)
        self._pending: dict[tuple[int, int], list[Message]] = {}
        self._drop_streak: dict[tuple[int, int], int] = {}
        self.attempt_log: list[SendAttempt] | None = [] if trace else None
        self.delivery_log: list[Message] | None = [] if trace else None

    def attempt_send(self, edge: tuple[int, int], payload: Any, t: int) -> int | None:
        """Try to send payload over edge at tick t.

        Returns the delivery tick on success, None on a drop.  Delivery is
        forced once the edge has seen t1 consecutive drops.
        """
        if edge not in self.graph.edges_at(t):
            raise TransportError(f"edge {edge} is not active at tick {t}")
        src, dst = edge
        streak = self._drop_streak.get(edge, 0)
        if streak >= self.model.t1:
            success = True
        else:
            success = self._rng.random() >= self.model.drop_prob
        if not success:
            self._drop_streak[edge] = streak + 1
            if self.attempt_log is not None:
                self.attempt_log.append(SendAttempt(t, src, dst, False, None))
            return None
        self._drop_streak[edge] = 0
        if self.model.delay_law == "fixed":
            delay = self.model.t2
        else:
            delay = int(self._rng.integers(0, self.model.t2 + 1))
        deliver = t + delay
        msg = Message(src=src, dst=dst, payload=payload,
                      sent_tick=t, deliver_tick=deliver)
        self._pending.setdefault((deliver, dst), []).append(msg)
        if self.attempt_log is not None:
            self.attempt_log.append(SendAttempt(t, src, dst, True, deliver))
        return deliver

    def drain(self, dst: int, t: int) -> list[Message]:
        """All messages for dst deliverable exactly at tick t, ordered by
        (src, sent_tick) with arrival order breaking ties."""
        msgs = self._pending.pop((t, dst), [])
        msgs.sort(key=lambda m: (m.src, m.sent_tick))
        if self.delivery_log is not None:
            self.delivery_log.extend(msgs)
        return msgs

    def pending_count(self) -> int:
        return sum(len(v) for v in self._pending.values())


def payload_digest(payload: Any) -> str:
    """Short stable hash of a payload (numpy arrays, scalars, tuples/lists)."""
    h = hashlib.blake2b(digest_size=8)

    def feed(obj: Any) -> None:
        if isinstance(obj, np.ndarray):
            h.update(b"A")
            h.update(str(obj.dtype).encode())
            h.update(str(obj.shape).encode())
            h.update(np.ascontiguousarray(obj).tobytes())
        elif isinstance(obj, (tuple, list)):
            h.update(b"T")
            for item in obj:
                feed(item)
        else:
            h.update(b"S")
            h.update(repr(obj).encode())

    feed(payload)
    return h.hexdigest()


def check_delivery_guarantee(attempts: list[SendAttempt], t1: int, t2: int) -> bool:
    """Post-hoc check of the channel guarantee on a send-attempt trace:
    no edge accumulates more than t1 consecutive drops, and every delivery
    delay is at most t2."""
    streaks: dict[tuple[int, int], int] = {}
    for a in attempts:
        edge = (a.src, a.dst)
        if a.success:
            if a.deliver_tick is None or not (0 <= a.deliver_tick - a.tick <= t2):
                return False
            streaks[edge] = 0
        else:
            streaks[edge] = streaks.get(edge, 0) + 1
            if streaks[edge] > t1:
                return False
    return True
