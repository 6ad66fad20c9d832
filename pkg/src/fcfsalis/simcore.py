"""Discrete-event simulation of a parallel service system under FCFS-ALIS.

A freed server takes the longest-waiting compatible customer (FCFS); an
arriving customer takes the longest-idle compatible server (ALIS). Customers
abandon when service has not started by their patience deadline.

Waiting customers are held in one FIFO per customer type, idle servers in one
FIFO per server type; the global FCFS/ALIS choice is the minimum over the
heads of the compatible FIFOs. Abandonment is an ordinary scheduled event
that flags the customer; flagged entries are discarded when they reach the
head of their FIFO.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import count
from typing import List, Optional, Sequence

import numpy as np

from .distributions import substreams
from .model import ModelError, SystemSpec, indices_of

__all__ = [
    "SimConfig",
    "RawReplicationStats",
    "Simulation",
    "run_replication",
    "run_replications",
    "WAITING",
    "IN_SERVICE",
    "ABANDONED",
    "SERVED",
]

# customer status codes
WAITING, IN_SERVICE, ABANDONED, SERVED = 0, 1, 2, 3
# event kinds
ARRIVAL, COMPLETION, ABANDONMENT = 0, 1, 2


@dataclass(frozen=True)
class SimConfig:
    spec: SystemSpec
    workforce: tuple
    total_customers: int
    warmup_customers: int = 0
    seed: int = 0

    def __post_init__(self):
        wf = tuple(int(n) for n in self.workforce)
        if len(wf) != self.spec.J:
            raise ModelError(f"workforce has {len(wf)} entries for {self.spec.J} server types")
        if min(wf) < 1:
            raise ModelError(f"every server type needs at least one server: {wf}")
        if self.total_customers < 1:
            raise ModelError("total_customers must be positive")
        if not 0 <= self.warmup_customers < self.total_customers:
            raise ModelError("warmup_customers must lie in [0, total_customers)")
        object.__setattr__(self, "workforce", wf)


@dataclass(eq=False)
class RawReplicationStats:
    """Counts and samples from one replication.

    Arrays suffixed ``_all`` cover every customer; everything else covers the
    measured customers only (arrival index >= warm-up) and the services and
    idle gaps that follow their service.
    """

    match_counts: np.ndarray
    arrivals: np.ndarray
    served: np.ndarray
    abandoned: np.ndarray
    waits: np.ndarray
    wait_types: np.ndarray
    idle_gaps: np.ndarray
    gap_types: np.ndarray
    no_wait: int
    no_idle: int
    arrivals_all: np.ndarray
    served_all: np.ndarray
    abandoned_all: np.ndarray
    in_system_all: np.ndarray
    horizon: float
    events: int

    @property
    def in_system(self) -> np.ndarray:
        return self.arrivals - self.served - self.abandoned

    def fingerprint(self) -> tuple:
        """Hashable summary used for determinism checks."""
        return (self.match_counts.tobytes(), self.abandoned.tobytes(), self.waits.tobytes(),
                self.idle_gaps.tobytes(), self.no_wait, self.no_idle, self.horizon, self.events)


class Simulation:
    """State and event handlers of one replication.

    ``run`` drives the loop; the ``handle_*`` methods are public so the
    policy can be exercised one event at a time.
    """

    def __init__(self, config: SimConfig, replication: int = 0):
        spec = config.spec
        self.config = config
        I, J = spec.I, spec.J
        N = config.total_customers
        self.N = N
        self.warmup = config.warmup_customers
        g = spec.graph
        self.servers_of = [indices_of(g.servers_of(i)) for i in range(I)]
        self.customers_of = [indices_of(g.customers_of(j)) for j in range(J)]

        rng = substreams(config.seed, replication)
        gaps = spec.interarrival_law().sample_many(rng["arrivals"], N)
        self.arrival_time = np.cumsum(gaps).tolist()
        cum = np.cumsum(spec.alpha.as_array())
        cum[-1] = 1.0
        types = np.minimum(np.searchsorted(cum, rng["types"].random(N), side="right"), I - 1)
        self.ctype = types.tolist()
        u = rng["patience"].random(N)
        patience = np.empty(N)
        for i in range(I):
            sel = types == i
            patience[sel] = spec.patience[i].ppf(u[sel])
        self.deadline = (np.asarray(self.arrival_time) + patience).tolist()
        # at most one service per customer, so N uniforms always suffice
        self._service_u = rng["services"].random(N).tolist()
        self._service_pos = 0
        self._service_ppf = {e: d.scalar_ppf() for e, d in spec.service.items()}

        self.status = [WAITING] * N
        self.start_time = [0.0] * N
        self.waiting = [deque() for _ in range(I)]

        self.stype: List[int] = []
        for j, n in enumerate(config.workforce):
            self.stype.extend([j] * n)
        S = len(self.stype)
        self.busy_with = [-1] * S
        self.idle_since = [0.0] * S
        self.idle_rank = list(range(S))
        self._idle_counter = count(S)
        # True while the gap after a measured service is still open
        self.gap_open = [False] * S
        self.idle = [deque() for _ in range(J)]
        for k, j in enumerate(self.stype):
            self.idle[j].append(k)

        self.now = 0.0
        self.events: list = []
        self._seq = count()
        self.event_count = 0

        self.match_counts = np.zeros((I, J), dtype=np.int64)
        self.abandoned_all = [0] * I
        self.abandoned_measured = [0] * I
        self.served_all = [0] * I
        self.waits: List[float] = []
        self.wait_types: List[int] = []
        self.gaps: List[float] = []
        self.gap_types: List[int] = []
        self.no_wait = 0
        self.no_idle = 0

    # -- scheduling --------------------------------------------------------
    def schedule(self, time: float, kind: int, ident: int) -> None:
        heapq.heappush(self.events, (time, next(self._seq), kind, ident))

    def _draw_service(self, i: int, j: int) -> float:
        u = self._service_u[self._service_pos]
        self._service_pos += 1
        return self._service_ppf[(i, j)](u)

    def start_service(self, k: int, n: int) -> None:
        """Server ``k`` begins serving customer ``n`` at the current time."""
        now = self.now
        if self.gap_open[k]:
            gap = now - self.idle_since[k]
            self.gaps.append(gap)
            self.gap_types.append(self.stype[k])
            if gap == 0.0:
                self.no_idle += 1
            self.gap_open[k] = False
        self.status[n] = IN_SERVICE
        self.start_time[n] = now
        self.busy_with[k] = n
        self.schedule(now + self._draw_service(self.ctype[n], self.stype[k]), COMPLETION, k)

    def set_idle(self, k: int) -> None:
        """Append server ``k`` to its type's idle line, idle since now."""
        self.busy_with[k] = -1
        self.idle_since[k] = self.now
        self.idle_rank[k] = next(self._idle_counter)
        self.idle[self.stype[k]].append(k)

    # -- event handlers ----------------------------------------------------
    def handle_arrival(self, n: int) -> None:
        i = self.ctype[n]
        best = -1
        best_rank = 0
        rank = self.idle_rank
        for j in self.servers_of[i]:
            q = self.idle[j]
            if q:
                k = q[0]
                if best < 0 or rank[k] < best_rank:
                    best, best_rank = k, rank[k]
        if best >= 0:
            self.idle[self.stype[best]].popleft()
            self.start_service(best, n)
        else:
            self.status[n] = WAITING
            self.waiting[i].append(n)
            d = self.deadline[n]
            if d != math.inf:
                self.schedule(d, ABANDONMENT, n)

    def handle_completion(self, k: int) -> None:
        n = self.busy_with[k]
        i, j = self.ctype[n], self.stype[k]
        self.status[n] = SERVED
        self.served_all[i] += 1
        if n >= self.warmup:
            self.match_counts[i, j] += 1
            w = self.start_time[n] - self.arrival_time[n]
            self.waits.append(w)
            self.wait_types.append(i)
            if w == 0.0:
                self.no_wait += 1
            self.gap_open[k] = True
        status = self.status
        best = -1
        for c in self.customers_of[j]:
            q = self.waiting[c]
            while q and status[q[0]] != WAITING:
                q.popleft()
            if q and (best < 0 or q[0] < best):
                best = q[0]
        self.idle_since[k] = self.now
        if best >= 0:
            self.waiting[self.ctype[best]].popleft()
            self.start_service(k, best)
        else:
            self.set_idle(k)

    def handle_abandonment(self, n: int) -> None:
        if self.status[n] != WAITING:
            return
        self.status[n] = ABANDONED
        i = self.ctype[n]
        self.abandoned_all[i] += 1
        if n >= self.warmup:
            self.abandoned_measured[i] += 1

    def dispatch(self, event) -> None:
        time, _, kind, ident = event
        self.now = time
        self.event_count += 1
        if kind == COMPLETION:
            self.handle_completion(ident)
        elif kind == ARRIVAL:
            self.handle_arrival(ident)
            if ident + 1 < self.N:
                self.schedule(self.arrival_time[ident + 1], ARRIVAL, ident + 1)
        else:
            self.handle_abandonment(ident)

    def run(self) -> RawReplicationStats:
        """Process events through the last arrival; later events are left pending."""
        self.schedule(self.arrival_time[0], ARRIVAL, 0)
        horizon = self.arrival_time[-1]
        events = self.events
        pop = heapq.heappop
        dispatch = self.dispatch
        while events and events[0][0] <= horizon:
            dispatch(pop(events))
        return self.stats()

    def stats(self) -> RawReplicationStats:
        I = self.config.spec.I
        ctype = np.asarray(self.ctype, dtype=np.int64)
        status = np.asarray(self.status, dtype=np.int64)
        # customers not yet arrived at the current time count as nothing
        arrived = np.asarray(self.arrival_time) <= self.now
        measured = np.arange(self.N) >= self.warmup

        def by_type(mask):
            return np.bincount(ctype[mask], minlength=I).astype(np.int64)

        arrivals_all = by_type(arrived)
        served_all = np.array(self.served_all, dtype=np.int64)
        abandoned_all = np.array(self.abandoned_all, dtype=np.int64)
        return RawReplicationStats(
            match_counts=self.match_counts.copy(),
            arrivals=by_type(arrived & measured),
            served=self.match_counts.sum(axis=1),
            abandoned=np.array(self.abandoned_measured, dtype=np.int64),
            waits=np.array(self.waits, dtype=float),
            wait_types=np.array(self.wait_types, dtype=np.int64),
            idle_gaps=np.array(self.gaps, dtype=float),
            gap_types=np.array(self.gap_types, dtype=np.int64),
            no_wait=self.no_wait,
            no_idle=self.no_idle,
            arrivals_all=arrivals_all,
            served_all=served_all,
            abandoned_all=abandoned_all,
            in_system_all=by_type(arrived & ((status == WAITING) | (status == IN_SERVICE))),
            horizon=self.now,
            events=self.event_count,
        )

    # -- diagnostics -------------------------------------------------------
    def waiting_customers(self) -> List[int]:
        return sorted(n for q in self.waiting for n in q if self.status[n] == WAITING)

    def idle_servers(self) -> List[int]:
        return [k for q in self.idle for k in q]

    def work_conservation_violations(self) -> List[tuple]:
        """(server, customer) pairs that are idle/waiting yet compatible."""
        bad = []
        g = self.config.spec.graph
        for k in self.idle_servers():
            for n in self.waiting_customers():
                if g.has_edge(self.ctype[n], self.stype[k]):
                    bad.append((k, n))
        return bad


def run_replication(config: SimConfig, replication: int = 0) -> RawReplicationStats:
    """Simulate ``config.total_customers`` arrivals; deterministic in (seed, replication)."""
    return Simulation(config, replication).run()


def _run_one(args):
    config, r = args
    return run_replication(config, r)


def run_replications(config: SimConfig, replications: int, workers: int = 1) -> List[RawReplicationStats]:
    """Independent replications ``0..R-1``, returned in replication order."""
    jobs = [(config, r) for r in range(replications)]
    if workers > 1 and replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]
