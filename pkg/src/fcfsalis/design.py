"""Staffing algorithms for ED, QD, QED and differentiated service."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .model import (
    CompatibilityGraph,
    ModelError,
    ProbabilityVector,
    SystemSpec,
    mask_of,
)
from .rates import CRPViolation, RateMatrix, matching_rates

__all__ = [
    "DesignError",
    "QoSTarget",
    "DesignResult",
    "PriorityPartition",
    "ClassDesign",
    "DifferentiatedDesign",
    "design_qd",
    "design_ed",
    "design_qed",
    "design",
    "redesign_graph",
    "design_differentiated",
    "round_workforce",
    "ed_adjustment",
    "design_alpha",
]


class DesignError(ModelError):
    pass


@dataclass(frozen=True)
class QoSTarget:
    """Requested service quality: ``ed`` (mean wait W), ``qd`` (mean idle T) or ``qed``."""

    regime: str
    value: float = 0.0

    def __post_init__(self):
        if self.regime not in ("ed", "qd", "qed"):
            raise ModelError(f"unknown regime {self.regime!r}")
        if self.regime == "qed":
            if self.value != 0:
                raise ModelError("qed target takes no parameter")
        elif not (self.value > 0 and math.isfinite(self.value)):
            raise ModelError(f"{self.regime} target needs a positive parameter, got {self.value}")

    @classmethod
    def ed(cls, W: float) -> "QoSTarget":
        return cls("ed", float(W))

    @classmethod
    def qd(cls, T: float) -> "QoSTarget":
        return cls("qd", float(T))

    @classmethod
    def qed(cls) -> "QoSTarget":
        return cls("qed")

    @property
    def W(self) -> float:
        return self.value if self.regime == "ed" else 0.0

    @property
    def T(self) -> float:
        return self.value if self.regime == "qd" else 0.0

    def __str__(self):
        if self.regime == "qed":
            return "QED"
        return f"{self.regime.upper()}({'W' if self.regime == 'ed' else 'T'}={self.value:g})"


def round_workforce(real: Sequence[float]) -> Tuple[int, ...]:
    """Round half up, never below one server per type."""
    out = []
    for x in real:
        if not x > 0:
            raise DesignError(f"workforce entries must be positive, got {x}")
        out.append(max(1, int(math.floor(x + 0.5))))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class DesignResult:
    target: QoSTarget
    workforce_real: np.ndarray
    workforce: Tuple[int, ...]
    adjusted_alpha: ProbabilityVector
    effective_lambda: float
    abandonment: Tuple[float, ...]
    rates: RateMatrix
    beta: ProbabilityVector

    @property
    def total(self) -> int:
        return sum(self.workforce)

    @property
    def total_real(self) -> float:
        return float(np.sum(self.workforce_real))


def _check_beta(spec: SystemSpec, beta) -> ProbabilityVector:
    beta = beta if isinstance(beta, ProbabilityVector) else ProbabilityVector(tuple(beta))
    if len(beta) != spec.J:
        raise ModelError(f"beta has {len(beta)} entries for {spec.J} server types")
    return beta


def _staff(load: float, rates: RateMatrix, spec: SystemSpec, extra: float) -> np.ndarray:
    # Little's law per server type: busy (and idle) time per unit time
    m = spec.mean_service()
    adj = spec.graph.adjacency()
    return (load * rates.values * np.where(adj, m + extra, 0.0)).sum(axis=0)


def _result(target, spec, beta, alpha, lam, abandon, extra, workers) -> DesignResult:
    rates = matching_rates(alpha, beta, spec.graph, workers=workers)
    real = _staff(lam, rates, spec, extra)
    real.setflags(write=False)
    return DesignResult(target, real, round_workforce(real), alpha, lam, tuple(abandon), rates, beta)


def design_qd(spec: SystemSpec, beta, T: float, workers: int = 1) -> DesignResult:
    """Each server type is staffed for its work plus an idle time ``T`` per service."""
    target = QoSTarget.qd(T)
    beta = _check_beta(spec, beta)
    return _result(target, spec, beta, spec.alpha, spec.arrival_rate, [0.0] * spec.I, target.T, workers)


def design_qed(spec: SystemSpec, beta, workers: int = 1) -> DesignResult:
    beta = _check_beta(spec, beta)
    return _result(QoSTarget.qed(), spec, beta, spec.alpha, spec.arrival_rate, [0.0] * spec.I, 0.0, workers)


def ed_adjustment(spec: SystemSpec, W: float) -> Tuple[np.ndarray, float, ProbabilityVector]:
    """Abandonment ``p_i = F_i(W)``, effective arrival rate and the thinned type mix."""
    p = np.array([float(F.cdf(W)) for F in spec.patience])
    thinned = spec.alpha.as_array() * spec.arrival_rate * (1.0 - p)
    eff = float(math.fsum(thinned))
    if not eff > 0:
        raise DesignError(f"no customer survives a wait of W={W}: effective arrival rate is 0")
    return p, eff, ProbabilityVector.normalized(thinned)


def design_ed(spec: SystemSpec, beta, W: float, workers: int = 1) -> DesignResult:
    """Staff for the customers still patient after waiting ``W``.

    Abandonment thins each type independently; the thinned mix is the
    ``alpha`` that enters the matching-rate computation.
    """
    target = QoSTarget.ed(W)
    beta = _check_beta(spec, beta)
    p, eff, alpha = ed_adjustment(spec, target.W)
    return _result(target, spec, beta, alpha, eff, p, 0.0, workers)


def design_alpha(spec: SystemSpec, target: QoSTarget) -> ProbabilityVector:
    """The type mix the matching rates are computed for under ``target``."""
    return ed_adjustment(spec, target.W)[2] if target.regime == "ed" else spec.alpha


def design(spec: SystemSpec, beta, target: QoSTarget, workers: int = 1) -> DesignResult:
    if target.regime == "ed":
        return design_ed(spec, beta, target.W, workers)
    if target.regime == "qd":
        return design_qd(spec, beta, target.T, workers)
    return design_qed(spec, beta, workers)


@dataclass(frozen=True)
class PriorityPartition:
    """Customer and server classes, highest priority first.

    Within the listed order, QD classes come first with decreasing idle
    targets, then at most one QED class, then ED classes with increasing
    wait targets.
    """

    customer_classes: Tuple[Tuple[int, ...], ...]
    server_classes: Tuple[Tuple[int, ...], ...]
    targets: Tuple[QoSTarget, ...]
    betas: Tuple[ProbabilityVector, ...]

    def __post_init__(self):
        cc = tuple(tuple(int(c) for c in k) for k in self.customer_classes)
        sc = tuple(tuple(int(s) for s in k) for k in self.server_classes)
        betas = tuple(b if isinstance(b, ProbabilityVector) else ProbabilityVector(tuple(b)) for b in self.betas)
        L = len(cc)
        if not (L >= 1 and len(sc) == len(self.targets) == len(betas) == L):
            raise ModelError("partition needs the same positive number of customer classes, "
                             "server classes, targets and betas")
        for k, (s, b) in enumerate(zip(sc, betas)):
            if not s or not cc[k]:
                raise ModelError(f"class {k + 1} is empty")
            if len(b) != len(s):
                raise ModelError(f"class {k + 1}: beta has {len(b)} entries for {len(s)} server types")
        order = {"qd": 0, "qed": 1, "ed": 2}
        ranks = [order[t.regime] for t in self.targets]
        if ranks != sorted(ranks) or ranks.count(1) > 1:
            raise ModelError("class targets must run QD..., at most one QED, then ED... (highest priority first)")
        qd = [t.T for t in self.targets if t.regime == "qd"]
        ed = [t.W for t in self.targets if t.regime == "ed"]
        if any(x <= y for x, y in zip(qd, qd[1:])):
            raise ModelError(f"QD idle targets must decrease with priority: {qd}")
        if any(x >= y for x, y in zip(ed, ed[1:])):
            raise ModelError(f"ED wait targets must increase as priority drops: {ed}")
        object.__setattr__(self, "customer_classes", cc)
        object.__setattr__(self, "server_classes", sc)
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "betas", betas)

    def __len__(self):
        return len(self.customer_classes)

    def validate_for(self, graph: CompatibilityGraph) -> None:
        cs = sorted(c for k in self.customer_classes for c in k)
        ss = sorted(s for k in self.server_classes for s in k)
        if cs != list(range(graph.I)) or ss != list(range(graph.J)):
            raise ModelError("partition classes must partition the customer and server types exactly")
        for k, (cls, srv) in enumerate(zip(self.customer_classes, self.server_classes)):
            own = mask_of(srv)
            for c in cls:
                if not graph.servers_of(c) & own:
                    raise ModelError(f"customer type {graph.customer_label(c)} has no compatible "
                                     f"server type in class {k + 1}")

    def customer_class_of(self) -> List[int]:
        out = [0] * sum(len(k) for k in self.customer_classes)
        for k, cls in enumerate(self.customer_classes):
            for c in cls:
                out[c] = k
        return out

    def server_class_of(self) -> List[int]:
        out = [0] * sum(len(k) for k in self.server_classes)
        for k, cls in enumerate(self.server_classes):
            for s in cls:
                out[s] = k
        return out


def redesign_graph(graph: CompatibilityGraph, partition: PriorityPartition) -> CompatibilityGraph:
    """Drop every edge from a server of class ``l`` to a customer of class ``k < l``."""
    partition.validate_for(graph)
    cclass = partition.customer_class_of()
    sclass = partition.server_class_of()
    removed = [(i, j) for i, j in graph.edges if cclass[i] < sclass[j]]
    try:
        return graph.without_edges(removed)
    except ModelError as exc:
        raise DesignError(f"graph redesign isolates a type: {exc}") from exc


@dataclass(frozen=True)
class ClassDesign:
    index: int
    customers: Tuple[int, ...]
    servers: Tuple[int, ...]
    spec: SystemSpec
    result: DesignResult


@dataclass(frozen=True, eq=False)
class DifferentiatedDesign:
    classes: Tuple[ClassDesign, ...]
    graph: CompatibilityGraph
    server_count: int

    @property
    def workforce(self) -> Tuple[int, ...]:
        out = [0] * self.server_count
        for cd in self.classes:
            for s, n in zip(cd.servers, cd.result.workforce):
                out[s] = n
        return tuple(out)

    @property
    def workforce_real(self) -> np.ndarray:
        out = np.zeros(self.server_count)
        for cd in self.classes:
            out[list(cd.servers)] = cd.result.workforce_real
        return out

    def combined_rates(self) -> RateMatrix:
        """Whole-system rates: class rates weighted by each class's share of services."""
        I = sum(len(cd.customers) for cd in self.classes)
        volume = np.array([cd.result.effective_lambda for cd in self.classes])
        share = volume / volume.sum()
        r = np.zeros((I, self.server_count))
        for cd, w in zip(self.classes, share):
            r[np.ix_(cd.customers, cd.servers)] = w * cd.result.rates.values
        return RateMatrix(r, self.graph)


def design_differentiated(spec: SystemSpec, partition: PriorityPartition,
                          workers: int = 1) -> DifferentiatedDesign:
    """Design each priority class in isolation and prune the graph for simulation."""
    graph = redesign_graph(spec.graph, partition)
    classes = []
    for k, (cls, srv, target, beta) in enumerate(zip(partition.customer_classes, partition.server_classes,
                                                       partition.targets, partition.betas)):
        try:
            sub = spec.restrict(cls, srv)
            res = design(sub, beta, target, workers)
        except CRPViolation as exc:
            # witness is a mask over the class's own server types
            raise CRPViolation(f"class {k + 1} ({target}): {exc}", exc.witness) from exc
        except ModelError as exc:
            raise DesignError(f"class {k + 1} ({target}): {exc}") from exc
        classes.append(ClassDesign(k, cls, srv, sub, res))
    return DifferentiatedDesign(tuple(classes), graph, spec.J)
