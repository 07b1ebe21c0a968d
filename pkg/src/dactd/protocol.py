"""TD-error aggregation protocols.

Agents recover the exact team-average TD error of tick ``t - K`` at tick
``t``, where K is the worst-case propagation bound of the medium:

* the **general protocol** floods, every tick, a window of per-origin
  vectors holding each agent's local TD error with an explicit known/unknown
  state per slot; receivers fill in unknown slots verbatim (write-once), so
  the recovered mean is bitwise equal to a centralized collector's;
* the **acyclic protocol** runs on static connected acyclic (tree) graphs
  with unit delay and no losses, exchanging only K per-cohort increments per
  edge; per-neighbor correction buffers cancel the overlap between adjacent
  neighborhoods so every value is counted exactly once.

Unknown is an explicit slot state rather than a zero sentinel: a genuinely
zero TD error stays "known" and is never overwritten.  Cohorts before the
start of time are defined as zero (all-known), so read-outs are well defined
from tick 0 on.

Slot values are scalars in the per-step regime and fixed-shape arrays (one
TD error per episode step) in the episodic regime; ``value_shape`` selects
between them and all bookkeeping is shape-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

from .errors import (ConfigurationError, IncompleteAggregationError,
                     ProtocolCorruptionError)
from .topology import GraphSchedule, classify
from .transport import Channel, Message


def ascending_mean(values: np.ndarray) -> Any:
    """Mean over the leading (agent) axis, accumulated in strict ascending
    agent-id order so rounding is reproducible and identical across callers."""
    n = values.shape[0]
    if n == 0:
        raise ValueError("cannot average an empty collection")
    total = values[0].copy() if values.ndim > 1 else float(values[0])
    for j in range(1, n):
        total = total + values[j]
    return total / n


def centralized_team_td(all_deltas: np.ndarray) -> Any:
    """Reference aggregator: mean of the N local TD errors, fixed order."""
    arr = np.asarray(all_deltas, dtype=np.float64)
    return ascending_mean(arr)


# ---------------------------------------------------------------------------
# General protocol: windowed fill-in of per-origin TD vectors
# ---------------------------------------------------------------------------

@dataclass
class TDVector:
    """Per-origin collection of local TD errors with known/unknown slots."""

    origin_tick: int
    values: np.ndarray          # (n_agents, *value_shape)
    known: np.ndarray           # (n_agents,) bool


def init_td_vector(i: int, delta_i: Any, t: int, n_agents: int,
                   value_shape: tuple[int, ...] = ()) -> TDVector:
    """Fresh vector for origin t: slot i known with agent i's TD error,
    every other slot unknown."""
    if not (1 <= i <= n_agents):
        raise ValueError(f"agent id {i} outside 1..{n_agents}")
    values = np.zeros((n_agents, *value_shape))
    known = np.zeros(n_agents, dtype=bool)
    values[i - 1] = delta_i
    known[i - 1] = True
    return TDVector(origin_tick=t, values=values, known=known)


@dataclass(frozen=True)
class WindowPayload:
    """Snapshot of a sender's freshest K origins (the per-tick message).

    Contains exactly K*N slots regardless of per-slot width.
    """

    origins: tuple[int, ...]    # newest first
    values: np.ndarray          # (K, n_agents, *value_shape), read-only
    known: np.ndarray           # (K, n_agents) bool, read-only

    @property
    def slot_count(self) -> int:
        return self.known.shape[0] * self.known.shape[1]

    def vectors(self) -> list[TDVector]:
        return [TDVector(o, self.values[r], self.known[r])
                for r, o in enumerate(self.origins)]

    def as_tuple(self) -> tuple:
        return (self.origins, self.values, self.known)


class TDHistory:
    """Ring buffer of K+1 TD vectors, indexed by age tau = newest - origin.

    Rows for cohorts before tick 0 start out all-known zero, matching the
    protocols' zero initialization.
    """

    def __init__(self, owner: int, n_agents: int, K: int,
                 value_shape: tuple[int, ...] = ()):
        if K < 1:
            raise ValueError(f"window bound K must be >= 1, got {K}")
        if not (1 <= owner <= n_agents):
            raise ValueError(f"agent id {owner} outside 1..{n_agents}")
        self.owner = owner
        self.n_agents = n_agents
        self.K = K
        self.value_shape = tuple(value_shape)
        self.newest_tick = -1
        self._base = 0
        self._values = np.zeros((K + 1, n_agents, *self.value_shape))
        self._known = np.ones((K + 1, n_agents), dtype=bool)

    def _row(self, origin_tick: int) -> int:
        tau = self.newest_tick - origin_tick
        if not (0 <= tau <= self.K):
            raise ValueError(
                f"origin {origin_tick} outside window "
                f"[{self.newest_tick - self.K}, {self.newest_tick}]")
        return (self._base + tau) % (self.K + 1)

    def advance(self, t: int) -> None:
        """Slide the window to newest tick t (lockstep: t = previous + 1).
        The oldest cohort is evicted; the new row starts all-unknown."""
        if t != self.newest_tick + 1:
            raise ValueError(f"ticks must advance by 1, got {self.newest_tick} -> {t}")
        self.newest_tick = t
        self._base = (self._base - 1) % (self.K + 1)
        self._values[self._base] = 0.0
        self._known[self._base] = False

    def set_own(self, t: int, value: Any) -> None:
        if t != self.newest_tick:
            raise ValueError("own TD error must be recorded at the current tick")
        r = self._row(t)
        if self._known[r, self.owner - 1]:
            raise ProtocolCorruptionError(
                f"agent {self.owner}: own slot for tick {t} already written")
        self._values[r, self.owner - 1] = value
        self._known[r, self.owner - 1] = True

    def merge(self, received: Iterable[TDVector]) -> "TDHistory":
        """Fill-in rule: copy received known values into unknown slots.

        Write-once — known slots are never touched; receiving a bitwise
        different value for an already-known slot raises
        ProtocolCorruptionError.  Idempotent and order-independent.
        """
        for vec in received:
            r = self._row(vec.origin_tick)
            both = self._known[r] & vec.known
            if both.any():
                if not np.array_equal(self._values[r][both], vec.values[both]):
                    raise ProtocolCorruptionError(
                        f"agent {self.owner}: conflicting values for origin "
                        f"{vec.origin_tick}")
            new = vec.known & ~self._known[r]
            if new.any():
                self._values[r][new] = vec.values[new]
                self._known[r][new] = True
        return self

    def merge_payload(self, payload: WindowPayload) -> "TDHistory":
        """Vectorized merge of a whole window payload.

        Identical semantics to merge(payload.vectors()) — write-once fill-in
        with a bitwise conflict check — done in whole-window array ops.
        Rows older than the local window are silently dropped (their cohort
        was already read out and can no longer change).
        """
        oldest = self.newest_tick - self.K
        keep = [r for r, o in enumerate(payload.origins)
                if oldest <= o <= self.newest_tick]
        if not keep:
            return self
        origins = [payload.origins[r] for r in keep]
        inc_vals = payload.values[keep]
        inc_known = payload.known[keep]
        rows = [(self._base + (self.newest_tick - o)) % (self.K + 1)
                for o in origins]
        loc_vals = self._values[rows]
        loc_known = self._known[rows]
        both = loc_known & inc_known
        if both.any():
            differ = loc_vals != inc_vals
            if differ.ndim > 2:
                differ = differ.any(axis=tuple(range(2, differ.ndim)))
            if (both & differ).any():
                bad = np.argwhere(both & differ)[0]
                raise ProtocolCorruptionError(
                    f"agent {self.owner}: conflicting values for origin "
                    f"{origins[int(bad[0])]}")
        new = inc_known & ~loc_known
        if new.any():
            loc_vals[new] = inc_vals[new]
            self._values[rows] = loc_vals
            self._known[rows] = loc_known | inc_known
        return self

    def vector_at(self, origin_tick: int) -> TDVector:
        r = self._row(origin_tick)
        return TDVector(origin_tick, self._values[r].copy(), self._known[r].copy())

    def team_td(self, t_minus_K: int) -> Any:
        """Team-average TD error of the requested origin tick, summed in
        ascending agent-id order.  Raises IncompleteAggregationError naming
        the missing agents if any slot is still unknown."""
        r = self._row(t_minus_K)
        if not self._known[r].all():
            missing = [j + 1 for j in range(self.n_agents) if not self._known[r, j]]
            raise IncompleteAggregationError(t_minus_K, self.owner, missing)
        return ascending_mean(self._values[r])

    def window_payload(self) -> WindowPayload:
        """Copy of the K freshest rows (ages 0..K-1), newest first."""
        origins = tuple(self.newest_tick - tau for tau in range(self.K))
        rows = [self._row(o) for o in origins]
        values = self._values[rows].copy()
        known = self._known[rows].copy()
        values.setflags(write=False)
        known.setflags(write=False)
        return WindowPayload(origins=origins, values=values, known=known)

    def trace_rows(self) -> list[tuple]:
        """(tick, agent, tau, slot, value, known) rows for the current window
        (scalar slot values only)."""
        rows = []
        for tau in range(self.K + 1):
            r = self._row(self.newest_tick - tau)
            for j in range(self.n_agents):
                rows.append((self.newest_tick, self.owner, tau, j + 1,
                             float(np.asarray(self._values[r, j]).ravel()[0]),
                             bool(self._known[r, j])))
        return rows


def merge(hist: TDHistory, received: Iterable[TDVector]) -> TDHistory:
    return hist.merge(received)


def team_td(hist: TDHistory, t_minus_K: int) -> Any:
    return hist.team_td(t_minus_K)


class TeamTDAggregator:
    """Per-agent driver of the general protocol over a real channel.

    Per tick: begin_tick (slide window, record own TD error), absorb any
    delivered payloads (stale origins are ignored — the delivery guarantee
    makes them redundant), emit window_payload for every out-edge, absorb
    same-tick deliveries, then read the team TD error of tick t - K.
    """

    def __init__(self, agent: int, n_agents: int, K: int,
                 value_shape: tuple[int, ...] = ()):
        self.history = TDHistory(agent, n_agents, K, value_shape)

    @property
    def agent(self) -> int:
        return self.history.owner

    def begin_tick(self, t: int, own_delta: Any) -> None:
        self.history.advance(t)
        self.history.set_own(t, own_delta)

    def absorb(self, messages: Iterable[Message]) -> None:
        for msg in messages:
            self.history.merge_payload(msg.payload)

    def payload(self) -> WindowPayload:
        return self.history.window_payload()

    def read_team(self, t_minus_K: int) -> Any:
        return self.history.team_td(t_minus_K)


# ---------------------------------------------------------------------------
# Acyclic protocol: per-cohort increments with per-neighbor corrections
# ---------------------------------------------------------------------------

@dataclass
class AcyclicState:
    """Per-agent state of the acyclic protocol.

    After the step at tick w, ``level_sums[d]`` holds the cohort-(w-d) sum
    of local TD errors over all agents within distance d of this agent;
    ``outbox[d]`` is the increment between successive levels (the K-value
    message sent to every neighbor); ``corrections[j][d]`` is the cohort-
    (w-d) sum over agents at distance exactly d from this agent that are
    *not* within distance d-1 of neighbor j — the overlap that must be
    subtracted when fusing neighbor j's increments.  Two ticks of correction
    history are kept because the recursion consumes corrections computed two
    ticks earlier.
    """

    agent: int
    n_agents: int
    K: int
    neighbors: tuple[int, ...]
    level_sums: np.ndarray                       # (K+1, *vs)
    outbox: np.ndarray                           # (K, *vs)
    corrections: dict[int, np.ndarray]           # neighbor -> (K, *vs)
    corrections_prev: dict[int, np.ndarray]      # neighbor -> (K, *vs)
    tick: int = -1

    @property
    def readout_origin(self) -> int:
        return self.tick - self.K

    def read_team(self) -> Any:
        val = self.level_sums[self.K] / self.n_agents
        return float(val) if val.ndim == 0 else val.copy()


def make_acyclic_state(agent: int, n_agents: int, K: int, neighbors: Iterable[int],
                       value_shape: tuple[int, ...] = ()) -> AcyclicState:
    if K < 1:
        raise ValueError(f"window bound K must be >= 1, got {K}")
    vs = tuple(value_shape)
    nbrs = tuple(sorted(neighbors))
    return AcyclicState(
        agent=agent, n_agents=n_agents, K=K, neighbors=nbrs,
        level_sums=np.zeros((K + 1, *vs)),
        outbox=np.zeros((K, *vs)),
        corrections={j: np.zeros((K, *vs)) for j in nbrs},
        corrections_prev={j: np.zeros((K, *vs)) for j in nbrs},
    )


def build_acyclic_states(graph: GraphSchedule, K: int,
                         value_shape: tuple[int, ...] = ()) -> dict[int, AcyclicState]:
    """States for every agent, after validating the graph: static, symmetric
    edges, connected and acyclic (a tree)."""
    cls = classify(graph)  # raises ConfigurationError on time-varying schedules
    edges = graph.edges_at(0)
    if any((dst, src) not in edges for (src, dst) in edges):
        raise ConfigurationError(
            "acyclic protocol requires symmetric (undirected) edges")
    if not cls.acyclic_undirected:
        raise ConfigurationError("acyclic protocol requires an acyclic graph")
    if graph.n_agents > 1 and not cls.strongly_connected:
        raise ConfigurationError("acyclic protocol requires a connected graph")
    return {i: make_acyclic_state(i, graph.n_agents, K, graph.out_neighbors(i),
                                  value_shape)
            for i in range(1, graph.n_agents + 1)}


def _shift1(arr: np.ndarray) -> np.ndarray:
    """[0, a_0, ..., a_{K-2}] along the slot axis."""
    out = np.zeros_like(arr)
    out[1:] = arr[:-1]
    return out


def _shift2(arr: np.ndarray) -> np.ndarray:
    """[0, 0, a_0, ..., a_{K-3}] along the slot axis."""
    out = np.zeros_like(arr)
    out[2:] = arr[:-2]
    return out


def acyclic_step(st: AcyclicState, delta_i: Any,
                 received: dict[int, np.ndarray]) -> AcyclicState:
    """One lockstep tick of the acyclic protocol.

    ``received`` maps each neighbor to the increment message (K slots) it
    sent last tick; pass all-zero arrays on the first tick.  Slot 0 of every
    buffer restarts at the own TD error; higher slots advance one cohort via

        level_sums'[d]     = level_sums[d-1]
                             + sum_j (received[j][d-1] - corrections2[j][d-2])
        outbox'[d]         = level_sums'[d] - level_sums[d-1]
        corrections'[j][d] = corrections2[j][d-2] + outbox'[d] - received[j][d-1]

    where corrections2 are the corrections of two ticks ago and out-of-range
    indices read as zero.  Mutates and returns ``st``; afterwards the team
    read-out for tick ``st.tick - K`` is available via read_team().
    """
    if set(received) != set(st.neighbors):
        raise ValueError(
            f"agent {st.agent}: received increments from {sorted(received)}, "
            f"expected exactly neighbors {list(st.neighbors)}")
    K = st.K
    x = st.level_sums
    corr2 = st.corrections_prev
    delta_arr = np.asarray(delta_i, dtype=np.float64)
    if delta_arr.shape != x.shape[1:]:
        raise ValueError(
            f"TD value shape {delta_arr.shape} != expected {x.shape[1:]}")

    new_x = np.empty_like(x)
    new_x[0] = delta_arr
    acc = x[:-1].copy()
    for j in st.neighbors:
        inc = np.asarray(received[j])
        if inc.shape != st.outbox.shape:
            raise ValueError(
                f"agent {st.agent}: increment from {j} has shape {inc.shape}, "
                f"expected {st.outbox.shape}")
        acc += inc - _shift1(corr2[j])
    new_x[1:] = acc

    new_y = np.empty_like(st.outbox)
    new_y[0] = delta_arr
    if K >= 2:
        new_y[1:] = new_x[1:K] - x[: K - 1]

    new_corr = {}
    for j in st.neighbors:
        zj = np.empty_like(corr2[j])
        zj[0] = delta_arr
        if K >= 2:
            zj[1:] = _shift2(corr2[j])[1:] + new_y[1:] - received[j][: K - 1]
        new_corr[j] = zj

    st.level_sums = new_x
    st.outbox = new_y
    st.corrections_prev = st.corrections
    st.corrections = new_corr
    st.tick += 1
    return st


# ---------------------------------------------------------------------------
# Centralized reference aggregator
# ---------------------------------------------------------------------------

class CentralizedAggregator:
    """Oracle collector: sees every local TD error directly and serves the
    team mean with the same K-tick lag as the real protocols."""

    def __init__(self, n_agents: int, K: int, value_shape: tuple[int, ...] = ()):
        self.n_agents = n_agents
        self.K = K
        self.value_shape = tuple(value_shape)
        self._per_tick: dict[int, np.ndarray] = {}
        self.tick = -1

    def begin_tick(self, t: int, all_deltas: np.ndarray) -> None:
        if t != self.tick + 1:
            raise ValueError(f"ticks must advance by 1, got {self.tick} -> {t}")
        self.tick = t
        arr = np.asarray(all_deltas, dtype=np.float64)
        if arr.shape != (self.n_agents, *self.value_shape):
            raise ValueError(f"expected shape {(self.n_agents, *self.value_shape)}, "
                             f"got {arr.shape}")
        self._per_tick[t] = arr.copy()
        self._per_tick.pop(t - self.K - 1, None)

    def read_team(self, origin: int) -> Any:
        if origin < 0:
            return np.zeros(self.value_shape) if self.value_shape else 0.0
        return ascending_mean(self._per_tick[origin])


# ---------------------------------------------------------------------------
# Per-tick drivers: one canonical lockstep round per protocol
# ---------------------------------------------------------------------------

class GeneralProtocolDriver:
    """One lockstep round of the general protocol over a real channel.

    Round order matters: deliveries from earlier ticks are merged *before*
    the window snapshot is taken (receive, merge, forward within one round),
    and a second drain after sending absorbs zero-delay deliveries so they
    cannot be lost.  tick() returns every agent's read-out of tick t - K.
    """

    def __init__(self, graph: GraphSchedule, channel: Channel, K: int,
                 value_shape: tuple[int, ...] = ()):
        self.graph = graph
        self.channel = channel
        self.K = K
        self.n_agents = graph.n_agents
        self.value_shape = tuple(value_shape)
        self.aggs = {i: TeamTDAggregator(i, graph.n_agents, K, value_shape)
                     for i in range(1, graph.n_agents + 1)}

    @property
    def payload_slots(self) -> int:
        return self.K * self.n_agents

    def tick(self, t: int, deltas: np.ndarray) -> np.ndarray:
        n = self.n_agents
        pre = {i: self.channel.drain(i, t) for i in range(1, n + 1)}
        for i in range(1, n + 1):
            self.aggs[i].begin_tick(t, deltas[i - 1])
            self.aggs[i].absorb(pre[i])
        payloads = {i: self.aggs[i].payload() for i in range(1, n + 1)}
        for (src, dst) in sorted(self.graph.edges_at(t)):
            if payloads[src].slot_count != self.payload_slots:
                raise ProtocolCorruptionError("window payload has wrong slot count")
            self.channel.attempt_send((src, dst), payloads[src], t)
        for i in range(1, n + 1):
            self.aggs[i].absorb(self.channel.drain(i, t))
        origin = t - self.K
        return np.stack([self.aggs[i].read_team(origin) for i in range(1, n + 1)])

    def trace_rows(self) -> list[tuple]:
        rows: list[tuple] = []
        for i in sorted(self.aggs):
            rows.extend(self.aggs[i].history.trace_rows())
        return rows


class AcyclicProtocolDriver:
    """One lockstep round of the acyclic protocol.

    Increment messages move through an internal mailbox with exactly one
    tick of latency — the degenerate lossless unit-delay channel this
    protocol is defined for.
    """

    def __init__(self, graph: GraphSchedule, K: int,
                 value_shape: tuple[int, ...] = ()):
        self.graph = graph
        self.K = K
        self.n_agents = graph.n_agents
        self.states = build_acyclic_states(graph, K, value_shape)
        zero = np.zeros((K, *value_shape))
        self._inbox = {i: {j: zero.copy() for j in self.states[i].neighbors}
                       for i in self.states}

    @property
    def payload_slots(self) -> int:
        return self.K

    def tick(self, t: int, deltas: np.ndarray) -> np.ndarray:
        n = self.n_agents
        for i in range(1, n + 1):
            acyclic_step(self.states[i], deltas[i - 1], self._inbox[i])
        outboxes = {i: self.states[i].outbox.copy() for i in self.states}
        self._inbox = {i: {j: outboxes[j] for j in self.states[i].neighbors}
                       for i in self.states}
        return np.stack([self.states[i].read_team() for i in range(1, n + 1)])

    def snapshot(self) -> dict[int, tuple]:
        return {i: (st.level_sums.copy(),
                    {j: st.corrections[j].copy() for j in st.neighbors})
                for i, st in self.states.items()}

    def trace_rows(self) -> list[tuple]:
        rows = []
        for i, st in sorted(self.states.items()):
            for tau in range(self.K + 1):
                rho = (float(np.asarray(st.outbox[tau]).ravel()[0])
                       if tau < self.K else float("nan"))
                rows.append((st.tick, i, tau,
                             float(np.asarray(st.level_sums[tau]).ravel()[0]), rho))
        return rows


class CentralizedProtocolDriver:
    """Oracle collector with the same K-tick lag and read-out arithmetic."""

    def __init__(self, n_agents: int, K: int, value_shape: tuple[int, ...] = ()):
        self.agg = CentralizedAggregator(n_agents, K, value_shape)
        self.n_agents = n_agents
        self.K = K

    @property
    def payload_slots(self) -> int:
        return 0

    def tick(self, t: int, deltas: np.ndarray) -> np.ndarray:
        self.agg.begin_tick(t, deltas)
        team = self.agg.read_team(t - self.K)
        return np.stack([np.copy(team) for _ in range(self.n_agents)])


# ---------------------------------------------------------------------------
# Exchange runs: protocols driven by exogenous TD streams
# ---------------------------------------------------------------------------

@dataclass
class ExchangeResult:
    """Read-outs of a protocol run driven by a fixed TD-error stream.

    readouts[t, i-1] is agent i's recovered team TD error of tick t - K (the
    pre-start cohorts read as zero); reference[t] is the centralized mean of
    the same origin.  payload_slots is the per-edge per-tick message size in
    slot values.
    """

    K: int
    readouts: np.ndarray
    reference: np.ndarray
    payload_slots: int
    trace_rows: list[tuple] | None = None
    snapshots: list[dict[int, tuple]] | None = None


def run_general_exchange(graph: GraphSchedule, channel: Channel,
                         deltas: np.ndarray, K: int,
                         collect_trace: bool = False) -> ExchangeResult:
    """Drive the general protocol for deltas.shape[0] ticks over a channel.

    deltas has shape (ticks, n_agents, *value_shape); agents exchange their
    windows every tick over the scheduled edges and read out tick t - K."""
    deltas = np.asarray(deltas, dtype=np.float64)
    ticks, n = deltas.shape[0], deltas.shape[1]
    if n != graph.n_agents:
        raise ValueError("delta stream width != n_agents")
    driver = GeneralProtocolDriver(graph, channel, K, deltas.shape[2:])
    readouts = np.zeros_like(deltas)
    reference = np.zeros((ticks, *deltas.shape[2:]))
    trace: list[tuple] | None = [] if collect_trace else None
    for t in range(ticks):
        readouts[t] = driver.tick(t, deltas[t])
        if trace is not None:
            trace.extend(driver.trace_rows())
        origin = t - K
        reference[t] = centralized_team_td(deltas[origin]) if origin >= 0 else 0.0
    return ExchangeResult(K=K, readouts=readouts, reference=reference,
                          payload_slots=driver.payload_slots, trace_rows=trace)


def run_acyclic_exchange(graph: GraphSchedule, deltas: np.ndarray, K: int,
                         collect_trace: bool = False,
                         collect_snapshots: bool = False) -> ExchangeResult:
    """Drive the acyclic protocol (unit delay, no losses) on a tree."""
    deltas = np.asarray(deltas, dtype=np.float64)
    ticks, n = deltas.shape[0], deltas.shape[1]
    if n != graph.n_agents:
        raise ValueError("delta stream width != n_agents")
    driver = AcyclicProtocolDriver(graph, K, deltas.shape[2:])
    readouts = np.zeros_like(deltas)
    reference = np.zeros((ticks, *deltas.shape[2:]))
    trace: list[tuple] | None = [] if collect_trace else None
    snaps: list[dict[int, tuple]] | None = [] if collect_snapshots else None
    for t in range(ticks):
        readouts[t] = driver.tick(t, deltas[t])
        if trace is not None:
            trace.extend(driver.trace_rows())
        if snaps is not None:
            snaps.append(driver.snapshot())
        origin = t - K
        reference[t] = centralized_team_td(deltas[origin]) if origin >= 0 else 0.0
    return ExchangeResult(K=K, readouts=readouts, reference=reference,
                          payload_slots=driver.payload_slots, trace_rows=trace,
                          snapshots=snaps)


def check_neighborhood_invariant(graph: GraphSchedule, deltas: np.ndarray,
                                 snapshots: list[dict[int, tuple]],
                                 K: int) -> float:
    """Worst absolute deviation of traced acyclic-protocol state from the
    exact-distance neighborhood sums it must equal.

    For every tick w, agent i, depth d in [1, K]: level_sums[d] must equal
    the sum of tick-(w-d) TD errors over agents within distance <= d of i;
    for every neighbor j and depth d in [1, K-1]: corrections[j][d] must
    equal the sum over agents at distance exactly d of i minus those within
    distance d-1 of j.  Cohorts before tick 0 count as zero.
    """
    from .topology import khop_neighbors

    deltas = np.asarray(deltas, dtype=np.float64)
    n = graph.n_agents
    maxd = max(K, 1)
    exact: dict[int, list[set[int]]] = {
        i: [khop_neighbors(graph, i, d) for d in range(maxd + 1)]
        for i in range(1, n + 1)}
    cum: dict[int, list[set[int]]] = {}
    for i in range(1, n + 1):
        run: set[int] = set()
        cum[i] = []
        for d in range(maxd + 1):
            run = run | exact[i][d]
            cum[i].append(set(run))

    def cohort_sum(agents: set[int], origin: int) -> np.ndarray:
        shape = deltas.shape[2:]
        if origin < 0 or not agents:
            return np.zeros(shape) if shape else np.float64(0.0)
        total = np.zeros(shape) if shape else np.float64(0.0)
        for a in sorted(agents):
            total = total + deltas[origin, a - 1]
        return total

    worst = 0.0
    for w, snap in enumerate(snapshots):
        for i, (level_sums, corrections) in snap.items():
            for d in range(1, K + 1):
                expected = cohort_sum(cum[i][d], w - d)
                worst = max(worst, float(np.max(np.abs(level_sums[d] - expected))))
            for j, zarr in corrections.items():
                for d in range(1, K):
                    ring = exact[i][d] - cum[j][d - 1]
                    expected = cohort_sum(ring, w - d)
                    worst = max(worst, float(np.max(np.abs(zarr[d] - expected))))
    return worst
