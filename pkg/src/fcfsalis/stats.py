"""Aggregation of replications into reports, and design-vs-simulation comparison.

Point estimates pool counts and samples across replications (exact sums via
``math.fsum``, so they do not depend on replication order); standard errors
come from the spread of per-replication estimates.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .model import CompatibilityGraph, ModelError
from .rates import RateMatrix
from .simcore import RawReplicationStats

__all__ = [
    "Histogram",
    "SimulationReport",
    "Tolerances",
    "Deviation",
    "histogram",
    "aggregate",
    "compare_to_design",
    "report_tables",
    "write_report_csv",
    "format_report",
    "format_deviations",
]

DEFAULT_BIN_WIDTH = 0.05


@dataclass(frozen=True, eq=False)
class Histogram:
    """Counts of strictly positive values in bins ``[k*w, (k+1)*w)``; zeros kept apart."""

    bin_width: float
    counts: np.ndarray
    zero_count: int
    total: int

    @property
    def zero_mass(self) -> float:
        return self.zero_count / self.total if self.total else math.nan

    @property
    def masses(self) -> np.ndarray:
        return self.counts / self.total if self.total else self.counts.astype(float)

    def edges(self) -> np.ndarray:
        return self.bin_width * np.arange(len(self.counts) + 1)


def histogram(values: np.ndarray, bin_width: float) -> Histogram:
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    values = np.asarray(values, dtype=float)
    pos = values[values > 0]
    zero = int(len(values) - len(pos))
    if len(pos):
        idx = np.floor(pos / bin_width).astype(np.int64)
        counts = np.bincount(idx)
    else:
        counts = np.zeros(0, dtype=np.int64)
    return Histogram(bin_width, counts, zero, len(values))


def _fmean(x: np.ndarray) -> float:
    return math.fsum(x) / len(x) if len(x) else math.nan


def _fstd(x: np.ndarray) -> float:
    if len(x) < 2:
        return math.nan
    m = _fmean(x)
    return math.sqrt(math.fsum((x - m) ** 2) / (len(x) - 1))


def _se(per_rep: np.ndarray) -> float:
    per_rep = per_rep[np.isfinite(per_rep)]
    return _fstd(per_rep) / math.sqrt(len(per_rep)) if len(per_rep) >= 2 else math.nan


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(np.broadcast(num, den).shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass(frozen=True, eq=False)
class SimulationReport:
    replications: int
    graph: CompatibilityGraph
    services: int
    rates: RateMatrix
    rate_se: np.ndarray
    mean_wait: float
    sd_wait: float
    mean_wait_se: float
    wait_sum_by_type: np.ndarray
    wait_count_by_type: np.ndarray
    abandonment: np.ndarray
    abandonment_se: np.ndarray
    abandonment_overall: float
    idle_sum_by_type: np.ndarray
    idle_count_by_type: np.ndarray
    mean_idle: float
    mean_idle_se: float
    no_wait_fraction: float
    no_idle_fraction: float
    wait_histogram: Histogram
    idle_histogram: Histogram

    @property
    def mean_wait_by_type(self) -> np.ndarray:
        return _ratio(self.wait_sum_by_type, self.wait_count_by_type)

    @property
    def mean_idle_by_type(self) -> np.ndarray:
        return _ratio(self.idle_sum_by_type, self.idle_count_by_type)

    def mean_wait_of(self, customer_types: Sequence[int]) -> float:
        sel = list(customer_types)
        n = self.wait_count_by_type[sel].sum()
        return math.fsum(self.wait_sum_by_type[sel]) / n if n else math.nan

    def mean_idle_of(self, server_types: Sequence[int]) -> float:
        sel = list(server_types)
        n = self.idle_count_by_type[sel].sum()
        return math.fsum(self.idle_sum_by_type[sel]) / n if n else math.nan


def aggregate(reps: Sequence[RawReplicationStats], graph: CompatibilityGraph,
              wait_bin: Optional[float] = None, idle_bin: Optional[float] = None) -> SimulationReport:
    """Pool replications into one report."""
    reps = list(reps)
    if not reps:
        raise ModelError("aggregate needs at least one replication")
    I, J = graph.I, graph.J
    for r in reps:
        if r.match_counts.shape != (I, J):
            raise ModelError(f"replication has shape {r.match_counts.shape}, expected {(I, J)}")
    R = len(reps)

    counts = sum((r.match_counts for r in reps), np.zeros((I, J), dtype=np.int64))
    services = int(counts.sum())
    rates = counts / services if services else np.zeros((I, J))
    per_rep_rates = np.array([r.match_counts / max(1, r.match_counts.sum()) for r in reps])
    rate_se = np.array([[_se(per_rep_rates[:, i, j]) for j in range(J)] for i in range(I)])

    waits = np.concatenate([r.waits for r in reps])
    wtypes = np.concatenate([r.wait_types for r in reps])
    gaps = np.concatenate([r.idle_gaps for r in reps])
    gtypes = np.concatenate([r.gap_types for r in reps])

    wait_sum = np.array([math.fsum(waits[wtypes == i]) for i in range(I)])
    wait_cnt = np.bincount(wtypes, minlength=I)
    idle_sum = np.array([math.fsum(gaps[gtypes == j]) for j in range(J)])
    idle_cnt = np.bincount(gtypes, minlength=J)

    served = sum(r.served for r in reps)
    abandoned = sum(r.abandoned for r in reps)
    resolved = served + abandoned
    per_rep_ab = np.array([_ratio(r.abandoned, r.served + r.abandoned) for r in reps])

    return SimulationReport(
        replications=R,
        graph=graph,
        services=services,
        rates=RateMatrix(rates, graph),
        rate_se=rate_se,
        mean_wait=_fmean(waits),
        sd_wait=_fstd(waits),
        mean_wait_se=_se(np.array([_fmean(r.waits) for r in reps])),
        wait_sum_by_type=wait_sum,
        wait_count_by_type=wait_cnt,
        abandonment=_ratio(abandoned, resolved),
        abandonment_se=np.array([_se(per_rep_ab[:, i]) for i in range(I)]),
        abandonment_overall=float(abandoned.sum() / resolved.sum()) if resolved.sum() else math.nan,
        idle_sum_by_type=idle_sum,
        idle_count_by_type=idle_cnt,
        mean_idle=_fmean(gaps),
        mean_idle_se=_se(np.array([_fmean(r.idle_gaps) for r in reps])),
        no_wait_fraction=sum(r.no_wait for r in reps) / len(waits) if len(waits) else math.nan,
        no_idle_fraction=sum(r.no_idle for r in reps) / len(gaps) if len(gaps) else math.nan,
        wait_histogram=histogram(waits, wait_bin or DEFAULT_BIN_WIDTH),
        idle_histogram=histogram(gaps, idle_bin or DEFAULT_BIN_WIDTH),
    )


@dataclass(frozen=True)
class Tolerances:
    """Pass/fail thresholds for :func:`compare_to_design`; ``None`` disables a check."""

    rate_abs: Optional[float] = 0.005
    wait_rel: Optional[float] = 0.05
    idle_rel: Optional[float] = 0.10
    abandonment_abs: Optional[float] = 0.01
    no_wait_min: Optional[float] = None
    no_idle_min: Optional[float] = None

    @classmethod
    def from_mapping(cls, data: dict) -> "Tolerances":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ModelError(f"unknown tolerance keys: {sorted(unknown)}")
        return cls(**{k: (None if v is None else float(v)) for k, v in data.items()})


@dataclass(frozen=True)
class Deviation:
    quantity: str
    expected: float
    observed: float
    tolerance: Optional[float] = None
    kind: str = "abs"  # "abs", "rel" or "min"

    @property
    def deviation(self) -> float:
        return float(self.expected - self.observed)

    @property
    def ok(self) -> Optional[bool]:
        if self.tolerance is None:
            return None
        if not math.isfinite(self.observed):
            return False
        # plain bool: callers test ``ok is False``
        if self.kind == "min":
            return bool(self.observed >= self.tolerance)
        if self.kind == "rel":
            return bool(abs(self.deviation) <= self.tolerance * abs(self.expected))
        return bool(abs(self.deviation) <= self.tolerance)


def _rate_rows(expected: RateMatrix, report: SimulationReport, tol) -> List[Deviation]:
    g = report.graph
    rows = []
    for i in range(g.I):
        for j in range(g.J):
            e, o = float(expected.values[i, j]), float(report.rates.values[i, j])
            if g.has_edge(i, j) or e:
                rows.append(Deviation(f"rate[{g.customer_label(i)},{g.server_label(j)}]", e, o, tol))
    return rows


def _regime_rows(report, target, customers, servers, abandonment, tol: Tolerances, label="") -> List[Deviation]:
    g = report.graph
    rows = []
    if target.regime == "ed":
        rows.append(Deviation(f"mean_wait{label}", target.W, report.mean_wait_of(customers), tol.wait_rel, "rel"))
        for i, p in zip(customers, abandonment):
            rows.append(Deviation(f"abandonment[{g.customer_label(i)}]", float(p),
                                  float(report.abandonment[i]), tol.abandonment_abs))
    elif target.regime == "qd":
        rows.append(Deviation(f"mean_idle{label}", target.T, report.mean_idle_of(servers), tol.idle_rel, "rel"))
    return rows


def compare_to_design(report: SimulationReport, design, tolerances: Tolerances = Tolerances()) -> List[Deviation]:
    """Deviation rows (expected minus observed) with pass flags.

    ``design`` is a :class:`~fcfsalis.design.DesignResult` or a
    :class:`~fcfsalis.design.DifferentiatedDesign`.
    """
    from .design import DesignResult, DifferentiatedDesign

    g = report.graph
    if isinstance(design, DifferentiatedDesign):
        expected = design.combined_rates()
        if expected.values.shape != report.rates.values.shape:
            raise ModelError("report and design dimensions differ")
        rows = _rate_rows(expected, report, tolerances.rate_abs)
        for cd in design.classes:
            rows += _regime_rows(report, cd.result.target, cd.customers, cd.servers,
                                 cd.result.abandonment, tolerances, f"[class {cd.index + 1}]")
    elif isinstance(design, DesignResult):
        if design.rates.values.shape != report.rates.values.shape:
            raise ModelError("report and design dimensions differ")
        rows = _rate_rows(design.rates, report, tolerances.rate_abs)
        rows += _regime_rows(report, design.target, range(g.I), range(g.J), design.abandonment, tolerances)
    else:
        raise TypeError(f"cannot compare against {type(design).__name__}")
    if tolerances.no_wait_min is not None:
        rows.append(Deviation("no_wait_fraction", tolerances.no_wait_min, report.no_wait_fraction,
                              tolerances.no_wait_min, "min"))
    if tolerances.no_idle_min is not None:
        rows.append(Deviation("no_idle_fraction", tolerances.no_idle_min, report.no_idle_fraction,
                              tolerances.no_idle_min, "min"))
    return rows


# -- serialization -----------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def report_tables(report: SimulationReport, deviations: Optional[List[Deviation]] = None) -> Dict[str, List[list]]:
    """Report sections as header-first row lists, in a fixed order."""
    g = report.graph
    tables: Dict[str, List[list]] = {}
    tables["rates"] = [["customer", "server", "rate", "se"]] + [
        [g.customer_label(i), g.server_label(j), report.rates.values[i, j], report.rate_se[i, j]]
        for i, j in g.sorted_edges()]
    tables["customers"] = [["customer", "served", "mean_wait", "abandonment", "abandonment_se"]] + [
        [g.customer_label(i), report.wait_count_by_type[i], report.mean_wait_by_type[i],
         report.abandonment[i], report.abandonment_se[i]] for i in range(g.I)]
    tables["servers"] = [["server", "completions", "mean_idle"]] + [
        [g.server_label(j), report.idle_count_by_type[j], report.mean_idle_by_type[j]] for j in range(g.J)]
    tables["summary"] = [["statistic", "value", "se"],
                         ["replications", report.replications, None],
                         ["services", report.services, None],
                         ["mean_wait", report.mean_wait, report.mean_wait_se],
                         ["sd_wait", report.sd_wait, None],
                         ["mean_idle", report.mean_idle, report.mean_idle_se],
                         ["abandonment", report.abandonment_overall, None],
                         ["no_wait_fraction", report.no_wait_fraction, None],
                         ["no_idle_fraction", report.no_idle_fraction, None]]
    hist = [["statistic", "bin_low", "bin_high", "mass"]]
    for name, h in (("wait", report.wait_histogram), ("idle", report.idle_histogram)):
        hist.append([name, 0.0, 0.0, h.zero_mass])
        for k, m in enumerate(h.masses):
            hist.append([name, k * h.bin_width, (k + 1) * h.bin_width, m])
    tables["histograms"] = hist
    if deviations is not None:
        tables["deviations"] = [["quantity", "expected", "observed", "deviation", "tolerance", "kind", "ok"]] + [
            [d.quantity, d.expected, d.observed, d.deviation, d.tolerance, d.kind,
             "" if d.ok is None else d.ok] for d in deviations]
    return tables


def _csv_text(rows: List[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(rows[0])
    for row in rows[1:]:
        w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])
    return buf.getvalue()


def write_report_csv(report: SimulationReport, outdir: Union[str, os.PathLike],
                     deviations: Optional[List[Deviation]] = None, prefix: str = "") -> List[str]:
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for name, rows in report_tables(report, deviations).items():
        path = os.path.join(outdir, f"{prefix}{name}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(_csv_text(rows))
        paths.append(path)
    return paths


def format_deviations(deviations: List[Deviation]) -> str:
    lines = [f"{'quantity':<28}{'expected':>11}{'observed':>11}{'dev':>10}  check"]
    for d in deviations:
        flag = "" if d.ok is None else ("ok" if d.ok else "FAIL")
        lines.append(f"{d.quantity:<28}{d.expected:>11.4f}{d.observed:>11.4f}{d.deviation:>10.4f}  {flag}")
    return "\n".join(lines)


def format_report(report: SimulationReport) -> str:
    g = report.graph
    out = [f"replications: {report.replications}   measured services: {report.services}", "",
           "matching rates (rows: server types)"]
    out.append("      " + "".join(f"{g.customer_label(i):>9}" for i in range(g.I)))
    for j in range(g.J):
        cells = "".join(f"{report.rates.values[i, j]:9.3f}" if g.has_edge(i, j) else " " * 9 for i in range(g.I))
        out.append(f"{g.server_label(j):<6}{cells}")
    out += ["",
            f"mean wait {report.mean_wait:.4f} (se {report.mean_wait_se:.2g}), sd {report.sd_wait:.4f}",
            f"mean idle {report.mean_idle:.4f} (se {report.mean_idle_se:.2g})",
            f"no wait {report.no_wait_fraction:.3f}   no idling {report.no_idle_fraction:.3f}",
            "abandonment " + "  ".join(f"{g.customer_label(i)}={report.abandonment[i]:.3f}" for i in range(g.I))]
    return "\n".join(out)
