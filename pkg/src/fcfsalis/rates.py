"""FCFS infinite bipartite matching rates.

Complete resource pooling (CRP) test, exact matching rates by summation over
all server-type permutations, the closed form for almost complete graphs,
decomposition of non-pooled systems, service capacity, and a Monte Carlo
simulation of the matching itself.
"""

from __future__ import annotations

import itertools
import math
import warnings
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    CompatibilityGraph,
    ModelError,
    ProbabilityVector,
    SystemSpec,
    indices_of,
    mask_of,
)

__all__ = [
    "CRPViolation",
    "EnumerationLimitError",
    "DecompositionError",
    "RateMatrix",
    "CRPResult",
    "PermutationTerms",
    "Subsystem",
    "Decomposition",
    "check_crp",
    "matching_rates",
    "compute_B",
    "permutation_terms",
    "matching_rates_reference",
    "matching_rates_almost_complete",
    "decompose",
    "validate_decomposition",
    "capacity",
    "mc_matching_oracle",
    "MAX_ENUMERATION_J",
    "SOFT_ENUMERATION_J",
]

MAX_ENUMERATION_J = 12
SOFT_ENUMERATION_J = 8
CRP_TOL = 1e-12

# permutations are processed in fixed blocks sharing a prefix; the block
# layout never depends on the worker count, so merged sums are bit-stable
_BLOCK_TAIL = 8


class CRPViolation(ModelError):
    """Complete resource pooling fails; ``witness`` is a server-type bitmask."""

    def __init__(self, message: str, witness: int):
        super().__init__(message)
        self.witness = witness


class EnumerationLimitError(ModelError):
    pass


class DecompositionError(ModelError):
    pass


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """``I x J`` matrix of matching rates, zero off the graph's edges."""

    values: np.ndarray
    graph: CompatibilityGraph

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.graph.I, self.graph.J):
            raise ModelError(f"rate matrix shape {v.shape} does not match graph {(self.graph.I, self.graph.J)}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ModelError("matching rates must be finite and nonnegative")
        if np.any(v[~self.graph.adjacency()] != 0):
            raise ModelError("nonzero matching rate on a non-edge")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, key):
        return self.values[key]

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.values.sum(axis=0)

    def total(self) -> float:
        return float(self.values.sum())

    def identity_error(self, alpha, beta) -> float:
        """Largest violation of the row-sum, column-sum and total identities."""
        a = np.asarray(tuple(alpha), dtype=float)
        b = np.asarray(tuple(beta), dtype=float)
        return float(max(np.max(np.abs(self.row_sums() - a)),
                         np.max(np.abs(self.col_sums() - b)),
                         abs(self.total() - 1.0)))

    def edge_items(self):
        for i, j in self.graph.sorted_edges():
            yield i, j, float(self.values[i, j])


@dataclass(frozen=True)
class CRPResult:
    pooled: bool
    witness: Optional[int]
    slack: float

    def __bool__(self):
        return self.pooled


def _vectors(alpha, beta, graph: CompatibilityGraph):
    a = np.asarray(tuple(alpha), dtype=float)
    b = np.asarray(tuple(beta), dtype=float)
    if a.shape != (graph.I,) or b.shape != (graph.J,):
        raise ModelError(f"dimension mismatch: alpha {a.shape}, beta {b.shape} for graph I={graph.I}, J={graph.J}")
    return a, b


def _mass_table(weights: np.ndarray) -> np.ndarray:
    """``table[S]`` = sum of ``weights`` over the bits of ``S``."""
    n = len(weights)
    table = np.zeros(1 << n)
    for k in range(n):
        half = 1 << k
        table[half:2 * half] = table[:half] + weights[k]
    return table


def _union_table(masks: Sequence[int]) -> np.ndarray:
    """``table[S]`` = OR of ``masks[k]`` over the bits ``k`` of ``S``."""
    n = len(masks)
    table = np.zeros(1 << n, dtype=np.int64)
    for k in range(n):
        half = 1 << k
        table[half:2 * half] = table[:half] | masks[k]
    return table


class _SubsetTables:
    """Per-server-subset quantities shared by every permutation prefix."""

    def __init__(self, a: np.ndarray, b: np.ndarray, graph: CompatibilityGraph):
        J = graph.J
        full = graph.all_servers
        self.alpha_of_customers = _mass_table(a)
        self.beta = _mass_table(b)
        self.compatible = _union_table([graph.customers_of(j) for j in range(J)])
        complement = full ^ np.arange(1 << J, dtype=np.int64)
        self.unique = graph.all_customers & ~self.compatible[complement]
        self.alpha_unique = self.alpha_of_customers[self.unique]


def check_crp(alpha, beta, graph: CompatibilityGraph) -> CRPResult:
    """Test ``beta_S > alpha_U(S)`` over all nonempty proper server subsets.

    On violation the witness is the subset with the smallest slack.
    """
    a, b = _vectors(alpha, beta, graph)
    if graph.J == 1:
        return CRPResult(True, None, math.inf)
    t = _SubsetTables(a, b, graph)
    slack = (t.beta - t.alpha_unique)[1:-1]
    k = int(np.argmin(slack))
    worst = float(slack[k])
    if worst > CRP_TOL:
        return CRPResult(True, None, worst)
    return CRPResult(False, k + 1, worst)


def _require_crp(alpha, beta, graph):
    res = check_crp(alpha, beta, graph)
    if not res.pooled:
        names = ", ".join(graph.server_label(j) for j in indices_of(res.witness))
        raise CRPViolation(
            f"complete resource pooling fails: beta_S <= alpha_U(S) for S = {{{names}}} "
            f"(slack {res.slack:.3g})", res.witness)
    return res


def _blocks(J: int) -> List[Tuple[int, ...]]:
    """Fixed permutation prefixes; each block enumerates the remaining tail."""
    plen = max(0, J - _BLOCK_TAIL)
    return list(itertools.permutations(range(J), plen))


def _block_sums(args):
    """Partial rate numerators (per sorted edge) and partial ``B^-1`` for one block."""
    prefix, J, tables, edge_tabs = args
    beta_t, alpha_u = tables
    rest = [s for s in range(J) if s not in prefix]
    tails = np.array(list(itertools.permutations(rest)), dtype=np.int64).reshape(-1, len(rest))
    if prefix:
        perms = np.hstack([np.broadcast_to(np.array(prefix, dtype=np.int64), (len(tails), len(prefix))), tails])
    else:
        perms = tails
    prefixes = np.bitwise_or.accumulate(np.left_shift(1, perms), axis=1)[:, :J - 1]
    gap = beta_t[prefixes] - alpha_u[prefixes]
    weight = 1.0 / np.prod(gap, axis=1)
    nums = np.empty(len(edge_tabs))
    for e, (phi_t, psi_t, last) in enumerate(edge_tabs):
        if J == 1:
            nums[e] = weight.sum() * last
            continue
        # phi_k * a_k and psi_k * a_k; the zero-mass convention is implicit here
        pa = phi_t[prefixes]
        den = gap + pa + psi_t[prefixes]
        h = gap / den
        tele = np.cumprod(h, axis=1)
        before = np.hstack([np.ones((len(h), 1)), tele[:, :-1]])
        bracket = (pa / den * before).sum(axis=1) + last * tele[:, -1]
        nums[e] = (weight * bracket).sum()
    return nums, weight.sum()


def _edge_tables(a, graph, t: _SubsetTables):
    tabs = []
    for i, j in graph.sorted_edges():
        bit = 1 << i
        phi_t = np.where(t.unique & bit, a[i], 0.0)
        psi_t = t.alpha_of_customers[t.unique & graph.customers_of(j) & ~bit]
        whole = a[i] + t.alpha_of_customers[graph.customers_of(j) & ~bit]
        last = a[i] / whole if whole > 0 else 0.0
        tabs.append((phi_t, psi_t, last))
    return tabs


def _enumerate(alpha, beta, graph, workers: int):
    a, b = _vectors(alpha, beta, graph)
    J = graph.J
    if J > MAX_ENUMERATION_J:
        raise EnumerationLimitError(
            f"J={J} exceeds the enumeration cap {MAX_ENUMERATION_J}; use mc_matching_oracle instead")
    if J > SOFT_ENUMERATION_J:
        warnings.warn(f"enumerating {math.factorial(J)} permutations for J={J}; this may be slow",
                      RuntimeWarning, stacklevel=3)
    _require_crp(a, b, graph)
    t = _SubsetTables(a, b, graph)
    edge_tabs = _edge_tables(a, graph, t)
    jobs = [(prefix, J, (t.beta, t.alpha_unique), edge_tabs) for prefix in _blocks(J)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_sums, jobs))
    else:
        parts = [_block_sums(job) for job in jobs]
    nums = np.zeros(len(edge_tabs))
    binv = 0.0
    for n, w in parts:  # fixed merge order
        nums = nums + n
        binv += w
    return a, b, nums, binv


def compute_B(alpha, beta, graph: CompatibilityGraph, workers: int = 1) -> float:
    """Normalizing constant of the permutation sum."""
    _, _, _, binv = _enumerate(alpha, beta, graph, workers)
    return 1.0 / binv


def matching_rates(alpha, beta, graph: CompatibilityGraph, workers: int = 1) -> RateMatrix:
    """Exact FCFS infinite matching rates for a pooled system.

    Sums over all ``J!`` orderings of server types. Raises
    :class:`CRPViolation` (with a witness subset) if pooling fails and
    :class:`EnumerationLimitError` above ``J = 12``.
    """
    a, b, nums, binv = _enumerate(alpha, beta, graph, workers)
    r = np.zeros((graph.I, graph.J))
    for (i, j), num in zip(graph.sorted_edges(), nums):
        r[i, j] = b[j] * num / binv
    return RateMatrix(r, graph)


@dataclass(frozen=True)
class PermutationTerms:
    """Every quantity entering one permutation's term for one target pair."""

    permutation: Tuple[int, ...]
    target: Tuple[int, int]
    alpha_k: Tuple[float, ...]
    beta_k: Tuple[float, ...]
    phi: Tuple[float, ...]
    psi: Tuple[float, ...]
    chi: Tuple[float, ...]
    weight: float
    bracket: float
    B: float

    @property
    def contribution(self) -> float:
        """This permutation's share of ``r / beta_j``."""
        return self.B * self.weight * self.bracket


def permutation_terms(alpha, beta, graph: CompatibilityGraph, permutation: Sequence[int],
                      target: Tuple[int, int], B: Optional[float] = None) -> PermutationTerms:
    """Scalar evaluation of one permutation's term, written out literally.

    ``B`` is computed when not supplied.
    """
    a, b = _vectors(alpha, beta, graph)
    J = graph.J
    perm = tuple(int(s) for s in permutation)
    if sorted(perm) != list(range(J)):
        raise ModelError(f"{permutation!r} is not a permutation of range({J})")
    i, j = target
    from .model import uniquely_servable

    ak, bk, phi, psi, chi = [], [], [], [], []
    prefix = 0
    for s in perm:
        prefix |= 1 << s
        u = uniquely_servable(graph, prefix)
        mass = float(sum(a[c] for c in indices_of(u)))
        ak.append(mass)
        bk.append(float(sum(b[x] for x in indices_of(prefix))))
        if mass > 0:
            f = (a[i] if u >> i & 1 else 0.0) / mass
            g = float(sum(a[c] for c in indices_of(u & graph.customers_of(j) & ~(1 << i)))) / mass
        else:
            f = g = 0.0
        phi.append(f)
        psi.append(g)
        chi.append(1.0 - f - g)

    weight = 1.0
    for k in range(J - 1):
        weight /= bk[k] - ak[k]
    bracket = 0.0
    running = 1.0
    for k in range(J - 1):
        bracket += phi[k] * ak[k] / (bk[k] - ak[k] * chi[k]) * running
        running *= (bk[k] - ak[k]) / (bk[k] - ak[k] * chi[k])
    end = phi[-1] + psi[-1]
    bracket += (phi[-1] / end if end > 0 else 0.0) * running
    if B is None:
        B = compute_B(a, b, graph)
    return PermutationTerms(perm, (i, j), tuple(ak), tuple(bk), tuple(phi), tuple(psi),
                            tuple(chi), weight, bracket, B)


def matching_rates_reference(alpha, beta, graph: CompatibilityGraph) -> RateMatrix:
    """Slow scalar path through :func:`permutation_terms`; small ``J`` only."""
    a, b = _vectors(alpha, beta, graph)
    _require_crp(a, b, graph)
    B = compute_B(a, b, graph)
    r = np.zeros((graph.I, graph.J))
    for perm in itertools.permutations(range(graph.J)):
        for i, j in graph.sorted_edges():
            r[i, j] += b[j] * permutation_terms(a, b, graph, perm, (i, j), B).contribution
    return RateMatrix(r, graph)


def matching_rates_almost_complete(alpha, beta) -> RateMatrix:
    """Closed form when server type ``j`` serves all customer types but ``j``."""
    a = np.asarray(tuple(alpha), dtype=float)
    b = np.asarray(tuple(beta), dtype=float)
    n = len(a)
    if b.shape != (n,) or n < 2:
        raise ModelError("almost complete graph needs alpha, beta of equal length >= 2")
    from .model import almost_complete_graph

    bad = np.flatnonzero(a + b >= 1.0)
    if len(bad):
        raise CRPViolation(f"alpha_c{bad[0] + 1} + beta_s{bad[0] + 1} >= 1",
                           ((1 << n) - 1) & ~(1 << int(bad[0])))
    slack = 1.0 - a - b
    norm = 1.0 + float(np.sum(a * b / slack))
    r = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                r[i, j] = (a[i] * b[j] * ((1 - a[i]) * (1 - b[j]) - a[j] * b[i])
                           / (slack[i] * slack[j]) / norm)
    return RateMatrix(r, almost_complete_graph(n))


@dataclass(frozen=True)
class Subsystem:
    customers: Tuple[int, ...]
    servers: Tuple[int, ...]
    graph: CompatibilityGraph
    alpha: ProbabilityVector
    beta: ProbabilityVector
    ratio: float


@dataclass(frozen=True)
class Decomposition:
    subsystems: Tuple[Subsystem, ...]

    @property
    def pooled(self) -> bool:
        return len(self.subsystems) == 1

    def __len__(self):
        return len(self.subsystems)

    def __iter__(self):
        return iter(self.subsystems)


def _submasks(mask: int) -> np.ndarray:
    subs = []
    s = mask
    while s:
        subs.append(s)
        s = (s - 1) & mask
    return np.array(subs[::-1], dtype=np.int64)


def decompose(alpha, beta, graph: CompatibilityGraph) -> Decomposition:
    """Split a system into pooled subsystems with increasing ``beta/alpha`` ratios.

    Repeatedly takes, within the remaining types, the server subset ``S``
    minimising ``beta_S / alpha_U(S)`` (union of all minimisers on ties)
    together with the customers only it can serve. The result is checked by
    :func:`validate_decomposition`; failures raise :class:`DecompositionError`.
    """
    a, b = _vectors(alpha, beta, graph)
    t = _SubsetTables(a, b, graph)
    rem_c, rem_s = graph.all_customers, graph.all_servers
    parts = []
    while rem_s:
        subs = _submasks(rem_s)
        unique = rem_c & ~t.compatible[rem_s & ~subs]
        amass = t.alpha_of_customers[unique]
        ok = amass > 0
        if not ok.any():
            raise DecompositionError(
                f"remaining customer types {list(indices_of(rem_c))} carry no mass; ratio ordering undefined")
        ratio = np.full(len(subs), np.inf)
        ratio[ok] = t.beta[subs[ok]] / amass[ok]
        best = ratio.min()
        chosen = 0
        for s in subs[ratio <= best * (1 + 1e-12)]:
            chosen |= int(s)
        cust = int(rem_c & ~t.compatible[rem_s & ~chosen])
        parts.append((cust, chosen))
        rem_c &= ~cust
        rem_s &= ~chosen
    if rem_c:
        raise DecompositionError(f"customer types {list(indices_of(rem_c))} left without servers")

    subsystems = []
    for cust, serv in parts:
        cs, ss = indices_of(cust), indices_of(serv)
        try:
            sub = graph.induced(cs, ss)
            sa = ProbabilityVector.normalized(a[list(cs)])
            sb = ProbabilityVector.normalized(b[list(ss)])
        except ModelError as exc:
            raise DecompositionError(f"degenerate subsystem {cs}/{ss}: {exc}") from exc
        subsystems.append(Subsystem(cs, ss, sub, sa, sb, float(b[list(ss)].sum() / a[list(cs)].sum())))
    dec = Decomposition(tuple(subsystems))
    validate_decomposition(a, b, graph, dec)
    return dec


def validate_decomposition(alpha, beta, graph: CompatibilityGraph, dec: Decomposition) -> None:
    """Raise :class:`DecompositionError` unless ``dec`` partitions the types,
    has strictly increasing ratios, and every subsystem is pooled."""
    a, b = _vectors(alpha, beta, graph)
    cs = [c for s in dec for c in s.customers]
    ss = [x for s in dec for x in s.servers]
    if sorted(cs) != list(range(graph.I)) or sorted(ss) != list(range(graph.J)):
        raise DecompositionError("subsystems do not partition the customer and server types")
    ratios = [b[list(s.servers)].sum() / a[list(s.customers)].sum() for s in dec]
    for lo, hi in zip(ratios, ratios[1:]):
        if not hi > lo * (1 + 1e-12):
            raise DecompositionError(f"subsystem ratios not strictly increasing: {ratios}")
    for s in dec:
        if not check_crp(s.alpha, s.beta, s.graph).pooled:
            raise DecompositionError(f"subsystem {s.customers}/{s.servers} is not pooled")


def capacity(rates: RateMatrix, spec: SystemSpec) -> float:
    """Total service capacity: sum of ``r * mu`` over the edges."""
    if rates.graph.edges - spec.graph.edges:
        raise ModelError("rates supported outside the system's edges")
    mu = spec.service_rate()
    return float(sum(rates.values[i, j] * mu[i, j] for i, j in rates.graph.sorted_edges()))


def _type_draws(rng: np.random.Generator, probs: np.ndarray, size: int) -> List[int]:
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    return np.minimum(np.searchsorted(cum, rng.random(size), side="right"), len(probs) - 1).tolist()


def mc_matching_oracle(alpha, beta, graph: CompatibilityGraph, match_count: int, seed: int,
                       block: int = 1 << 16) -> RateMatrix:
    """Simulate FCFS matching of two i.i.d. type sequences directly.

    Server ``n`` takes the earliest not-yet-matched compatible customer in
    the customer sequence, which is drawn as far ahead as needed. Returns
    match counts over the first ``match_count`` servers divided by
    ``match_count``.
    """
    if match_count < 1:
        raise ModelError("match_count must be >= 1")
    a, b = _vectors(alpha, beta, graph)
    rng_c, rng_s = (np.random.Generator(np.random.PCG64(s))
                    for s in np.random.SeedSequence(seed).spawn(2))
    compat = [indices_of(graph.customers_of(j)) for j in range(graph.J)]
    pending = [deque() for _ in range(graph.I)]
    counts = np.zeros((graph.I, graph.J), dtype=np.int64)
    cust_buf: List[int] = []
    pos = 0  # next unread position of cust_buf
    drawn = 0  # global index of cust_buf[0]
    done = 0
    while done < match_count:
        servers = _type_draws(rng_s, b, min(block, match_count - done))
        for j in servers:
            best_i, best_pos = -1, -1
            for i in compat[j]:
                q = pending[i]
                if q and (best_pos < 0 or q[0] < best_pos):
                    best_i, best_pos = i, q[0]
            while best_i < 0:
                if pos == len(cust_buf):
                    drawn += len(cust_buf)
                    cust_buf = _type_draws(rng_c, a, block)
                    pos = 0
                c = cust_buf[pos]
                if graph.servers_of(c) >> j & 1:
                    best_i = c
                else:
                    pending[c].append(drawn + pos)
                pos += 1
            if best_pos >= 0:
                pending[best_i].popleft()
            counts[best_i, j] += 1
        done += len(servers)
    return RateMatrix(counts / match_count, graph)
