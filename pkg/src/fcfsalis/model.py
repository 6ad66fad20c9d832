"""Domain types: compatibility graph, probability vectors, system specification.

Subsets of customer or server types are plain ``int`` bitmasks over the type
indices (bit ``i`` set means type ``i`` is in the subset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .distributions import Distribution, Exponential

__all__ = [
    "MAX_TYPES",
    "PROBABILITY_TOL",
    "ModelError",
    "CompatibilityGraph",
    "ProbabilityVector",
    "SystemSpec",
    "mask_of",
    "indices_of",
    "compatible_customers",
    "compatible_servers",
    "uniquely_servable",
    "subset_mass",
    "almost_complete_graph",
]

MAX_TYPES = 16
PROBABILITY_TOL = 1e-12

Subset = Union[int, Iterable[int]]


class ModelError(ValueError):
    """Invalid model input."""


def mask_of(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        if i < 0:
            raise ModelError(f"negative type index {i}")
        mask |= 1 << i
    return mask


def indices_of(mask: int) -> Tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _as_mask(subset: Subset, size: int, what: str) -> int:
    mask = subset if isinstance(subset, int) else mask_of(subset)
    if mask < 0 or mask >> size:
        raise ModelError(f"{what} subset {subset!r} has an index out of range [0, {size})")
    return mask


@dataclass(frozen=True)
class CompatibilityGraph:
    """Bipartite graph between ``I`` customer types and ``J`` server types.

    ``edges`` holds ``(customer, server)`` index pairs. Labels are metadata only.
    """

    customer_count: int
    server_count: int
    edges: frozenset
    customer_labels: Optional[Tuple[str, ...]] = None
    server_labels: Optional[Tuple[str, ...]] = None
    _servers_of: Tuple[int, ...] = field(init=False, repr=False, compare=False)
    _customers_of: Tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        I, J = self.customer_count, self.server_count
        if not (1 <= I <= MAX_TYPES and 1 <= J <= MAX_TYPES):
            raise ModelError(f"need 1 <= I, J <= {MAX_TYPES}, got I={I}, J={J}")
        edges = frozenset((int(i), int(j)) for i, j in self.edges)
        servers_of = [0] * I
        customers_of = [0] * J
        for i, j in edges:
            if not (0 <= i < I and 0 <= j < J):
                raise ModelError(f"edge {(i, j)} out of range for I={I}, J={J}")
            servers_of[i] |= 1 << j
            customers_of[j] |= 1 << i
        lonely_c = [i for i in range(I) if not servers_of[i]]
        lonely_s = [j for j in range(J) if not customers_of[j]]
        if lonely_c:
            raise ModelError(f"customer types {lonely_c} have no compatible server type")
        if lonely_s:
            raise ModelError(f"server types {lonely_s} have no compatible customer type")
        for labels, n, what in ((self.customer_labels, I, "customer"), (self.server_labels, J, "server")):
            if labels is not None and len(labels) != n:
                raise ModelError(f"{len(labels)} {what} labels for {n} types")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_servers_of", tuple(servers_of))
        object.__setattr__(self, "_customers_of", tuple(customers_of))

    @property
    def I(self) -> int:
        return self.customer_count

    @property
    def J(self) -> int:
        return self.server_count

    @property
    def all_customers(self) -> int:
        return (1 << self.customer_count) - 1

    @property
    def all_servers(self) -> int:
        return (1 << self.server_count) - 1

    def servers_of(self, i: int) -> int:
        """Bitmask of server types compatible with customer type ``i``."""
        return self._servers_of[i]

    def customers_of(self, j: int) -> int:
        """Bitmask of customer types compatible with server type ``j``."""
        return self._customers_of[j]

    def sorted_edges(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(sorted(self.edges))

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self.edges

    def customer_label(self, i: int) -> str:
        return self.customer_labels[i] if self.customer_labels else f"c{i + 1}"

    def server_label(self, j: int) -> str:
        return self.server_labels[j] if self.server_labels else f"s{j + 1}"

    def adjacency(self) -> np.ndarray:
        """Boolean ``I x J`` adjacency matrix."""
        adj = np.zeros((self.customer_count, self.server_count), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = True
        return adj

    def induced(self, customers: Sequence[int], servers: Sequence[int]) -> "CompatibilityGraph":
        """Subgraph on the given types, re-indexed in the order given."""
        cpos = {c: a for a, c in enumerate(customers)}
        spos = {s: b for b, s in enumerate(servers)}
        edges = {(cpos[i], spos[j]) for i, j in self.edges if i in cpos and j in spos}
        clab = tuple(self.customer_label(c) for c in customers)
        slab = tuple(self.server_label(s) for s in servers)
        return CompatibilityGraph(len(customers), len(servers), frozenset(edges), clab, slab)

    def without_edges(self, removed: Iterable[Tuple[int, int]]) -> "CompatibilityGraph":
        return CompatibilityGraph(self.customer_count, self.server_count,
                                  self.edges - frozenset(removed),
                                  self.customer_labels, self.server_labels)


def compatible_customers(graph: CompatibilityGraph, servers: Subset) -> int:
    """Customer types servable by at least one server type in ``servers``."""
    mask = _as_mask(servers, graph.server_count, "server")
    out = 0
    j = 0
    while mask:
        if mask & 1:
            out |= graph.customers_of(j)
        mask >>= 1
        j += 1
    return out


def compatible_servers(graph: CompatibilityGraph, customers: Subset) -> int:
    mask = _as_mask(customers, graph.customer_count, "customer")
    out = 0
    i = 0
    while mask:
        if mask & 1:
            out |= graph.servers_of(i)
        mask >>= 1
        i += 1
    return out


def uniquely_servable(graph: CompatibilityGraph, servers: Subset) -> int:
    """Customer types that only server types in ``servers`` can serve."""
    mask = _as_mask(servers, graph.server_count, "server")
    return graph.all_customers & ~compatible_customers(graph, graph.all_servers & ~mask)


@dataclass(frozen=True)
class ProbabilityVector:
    entries: Tuple[float, ...]

    def __post_init__(self):
        entries = tuple(float(x) for x in self.entries)
        if not entries:
            raise ModelError("empty probability vector")
        if any(not math.isfinite(x) or x < 0 for x in entries):
            raise ModelError(f"probabilities must be finite and >= 0: {entries}")
        total = math.fsum(entries)
        if abs(total - 1.0) > PROBABILITY_TOL:
            raise ModelError(f"probabilities sum to {total!r}, not 1 (tolerance {PROBABILITY_TOL})")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def normalized(cls, weights: Iterable[float]) -> "ProbabilityVector":
        """Explicit renormalization, for derived vectors (never applied to user input)."""
        w = [float(x) for x in weights]
        total = math.fsum(w)
        if not total > 0:
            raise ModelError("cannot normalize weights with zero total")
        scaled = [x / total for x in w]
        # absorb the last-ulp residual so the sum check passes exactly
        scaled[-1] = max(0.0, 1.0 - math.fsum(scaled[:-1]))
        return cls(tuple(scaled))

    @classmethod
    def uniform(cls, n: int) -> "ProbabilityVector":
        return cls.normalized([1.0] * n)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, k):
        return self.entries[k]

    def __iter__(self):
        return iter(self.entries)

    def as_array(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    def mass(self, subset: Subset) -> float:
        return subset_mass(self, subset)


def subset_mass(vector: Union[ProbabilityVector, Sequence[float]], subset: Subset) -> float:
    """Sum of ``vector`` over the indices in ``subset``."""
    entries = vector.entries if isinstance(vector, ProbabilityVector) else tuple(vector)
    mask = _as_mask(subset, len(entries), "index")
    return math.fsum(entries[k] for k in indices_of(mask))


def almost_complete_graph(n: int) -> CompatibilityGraph:
    """``n x n`` graph where server type ``j`` serves every customer type except ``j``."""
    if n < 2:
        raise ModelError("almost complete graph needs n >= 2")
    return CompatibilityGraph(n, n, frozenset((i, j) for i in range(n) for j in range(n) if i != j))


@dataclass(frozen=True)
class SystemSpec:
    """Full description of a parallel service system.

    ``interarrival`` gives the *shape* of the renewal law; it is rescaled to
    mean ``1/arrival_rate`` when simulating (see :meth:`interarrival_law`).
    """

    graph: CompatibilityGraph
    arrival_rate: float
    alpha: ProbabilityVector
    service: Mapping[Tuple[int, int], Distribution]
    patience: Tuple[Distribution, ...]
    interarrival: Distribution = Exponential(1.0)

    def __post_init__(self):
        g = self.graph
        if not (self.arrival_rate > 0 and math.isfinite(self.arrival_rate)):
            raise ModelError(f"arrival rate must be positive, got {self.arrival_rate}")
        if not isinstance(self.alpha, ProbabilityVector):
            object.__setattr__(self, "alpha", ProbabilityVector(tuple(self.alpha)))
        if len(self.alpha) != g.customer_count:
            raise ModelError(f"alpha has {len(self.alpha)} entries for {g.customer_count} customer types")
        service = {(int(i), int(j)): d for (i, j), d in dict(self.service).items()}
        if set(service) != set(g.edges):
            extra = sorted(set(service) - g.edges)
            missing = sorted(g.edges - set(service))
            raise ModelError(f"service laws must match edges exactly (missing {missing}, extra {extra})")
        for e, d in service.items():
            m = d.mean()
            if not (m > 0 and math.isfinite(m)):
                raise ModelError(f"service mean on edge {e} must be positive and finite, got {m}")
        patience = tuple(self.patience)
        if len(patience) != g.customer_count:
            raise ModelError(f"{len(patience)} patience laws for {g.customer_count} customer types")
        m = self.interarrival.mean()
        if not (m > 0 and math.isfinite(m)):
            raise ModelError("inter-arrival law needs a positive finite mean")
        object.__setattr__(self, "service", service)
        object.__setattr__(self, "patience", patience)

    @property
    def I(self) -> int:
        return self.graph.customer_count

    @property
    def J(self) -> int:
        return self.graph.server_count

    def mean_service(self) -> np.ndarray:
        """``I x J`` matrix of mean service times, 0 on non-edges."""
        m = np.zeros((self.I, self.J))
        for (i, j), d in self.service.items():
            m[i, j] = d.mean()
        return m

    def service_rate(self) -> np.ndarray:
        """``I x J`` matrix of service rates ``1/m``, 0 on non-edges."""
        m = self.mean_service()
        out = np.zeros_like(m)
        np.divide(1.0, m, out=out, where=m > 0)
        return out

    def interarrival_law(self) -> Distribution:
        return self.interarrival.scaled(1.0 / (self.arrival_rate * self.interarrival.mean()))

    def with_arrival_rate(self, arrival_rate: float) -> "SystemSpec":
        return SystemSpec(self.graph, arrival_rate, self.alpha, self.service, self.patience, self.interarrival)

    def with_graph(self, graph: CompatibilityGraph) -> "SystemSpec":
        """Same system on a subgraph; service laws of dropped edges are discarded."""
        service = {e: d for e, d in self.service.items() if e in graph.edges}
        return SystemSpec(graph, self.arrival_rate, self.alpha, service, self.patience, self.interarrival)

    def restrict(self, customers: Sequence[int], servers: Sequence[int]) -> "SystemSpec":
        """Isolated subsystem on the given types.

        The arrival rate becomes the subsystem's share ``lambda * alpha_C`` and
        ``alpha`` is renormalized within it.
        """
        share = subset_mass(self.alpha, customers)
        if not share > 0:
            raise ModelError(f"customer types {list(customers)} receive no arrivals")
        sub = self.graph.induced(customers, servers)
        cpos = {c: a for a, c in enumerate(customers)}
        spos = {s: b for b, s in enumerate(servers)}
        service = {(cpos[i], spos[j]): d for (i, j), d in self.service.items()
                   if i in cpos and j in spos}
        alpha = ProbabilityVector.normalized(self.alpha[c] for c in customers)
        return SystemSpec(sub, self.arrival_rate * share, alpha, service,
                          tuple(self.patience[c] for c in customers), self.interarrival)
