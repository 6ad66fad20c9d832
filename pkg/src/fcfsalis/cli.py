"""Command-line front end: rates, crp, decompose, design, simulate, validate.

Exit codes: 0 success, 1 usage or configuration error, 2 resource pooling
violated, 3 validation failed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig, fixture_names, load_config, tomllib
from .design import DifferentiatedDesign, design, design_alpha, design_differentiated
from .model import ModelError, ProbabilityVector, indices_of
from .rates import CRPViolation, DecompositionError, capacity, check_crp, compute_B, decompose, matching_rates
from .simcore import SimConfig, run_replications
from .stats import Tolerances, aggregate, compare_to_design, format_deviations, format_report, write_report_csv

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_CRP", "EXIT_VALIDATION"]

log = logging.getLogger("fcfsalis")

EXIT_OK, EXIT_USAGE, EXIT_CRP, EXIT_VALIDATION = 0, 1, 2, 3
# arrivals, completions and abandonments: at most three events per customer
EVENTS_PER_CUSTOMER = 3


class BudgetExceeded(ModelError):
    pass


def _write_csv(out: Optional[str], filename: str, header: Sequence[str], rows: List[list]) -> None:
    if not out:
        return
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, filename), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _labels(g, idx, customers: bool) -> str:
    label = g.customer_label if customers else g.server_label
    return "{" + ",".join(label(k) for k in idx) + "}"


def _need_design(cfg: ScenarioConfig, command: str):
    if cfg.design is None:
        raise ConfigError("design", f"the {command} command needs a [design] table")
    return cfg.design


def _scopes(cfg: ScenarioConfig):
    """(label, spec, alpha, beta) per pooled unit the design works with."""
    d = _need_design(cfg, "this")
    spec = cfg.spec
    if d.mode != "diff":
        return [("system", spec, design_alpha(spec, d.target), d.beta)]
    out = []
    for k, c in enumerate(d.classes):
        sub = spec.restrict(c.customers, c.servers)
        out.append((f"class {k + 1}", sub, design_alpha(sub, c.target), c.beta))
    return out


def _run_design(cfg: ScenarioConfig, workers: int):
    d = _need_design(cfg, "this")
    if d.mode == "diff":
        return design_differentiated(cfg.spec, d.partition(), workers)
    return design(cfg.spec, d.beta, d.target, workers)


def _lambdas(cfg: ScenarioConfig, args) -> List[ScenarioConfig]:
    return [cfg.with_arrival_rate(lam) for lam in args.lam] if args.lam else [cfg]


# -- commands ----------------------------------------------------------------

def cmd_crp(cfg: ScenarioConfig, args) -> int:
    rows, code = [], EXIT_OK
    for label, spec, alpha, beta in _scopes(cfg):
        res = check_crp(alpha, beta, spec.graph)
        g = spec.graph
        if res.pooled:
            print(f"{label}: pooled (min slack {res.slack:.6g})")
        else:
            wit = indices_of(res.witness)
            print(f"{label}: NOT pooled; witness servers {_labels(g, wit, False)} "
                  f"(beta_S - alpha_U(S) = {res.slack:.6g})")
            code = EXIT_CRP
        rows.append([label, "true" if res.pooled else "false",
                     "" if res.pooled else " ".join(g.server_label(j) for j in indices_of(res.witness)), res.slack])
    _write_csv(args.out, "crp.csv", ["scope", "pooled", "witness", "slack"], rows)
    return code


def _rate_table(g, values) -> str:
    lines = ["      " + "".join(f"{g.customer_label(i):>8}" for i in range(g.I))]
    for j in range(g.J):
        cells = "".join(f"{values[i, j]:8.3f}" if g.has_edge(i, j) else " " * 8 for i in range(g.I))
        lines.append(f"{g.server_label(j):<6}{cells}")
    return "\n".join(lines)


def cmd_rates(cfg: ScenarioConfig, args) -> int:
    if cmd_crp(cfg, argparse.Namespace(out=None)) != EXIT_OK:
        return EXIT_CRP
    rows = []
    for label, spec, alpha, beta in _scopes(cfg):
        r = matching_rates(alpha, beta, spec.graph, workers=args.threads)
        B = compute_B(alpha, beta, spec.graph, workers=args.threads)
        print(f"\n{label}: B = {B:.10g}, capacity mu = {capacity(r, spec):.6g}")
        print(_rate_table(spec.graph, r.values))
        g = spec.graph
        rows += [[label, g.customer_label(i), g.server_label(j), r.values[i, j]] for i, j in g.sorted_edges()]
    if cfg.design.mode == "diff":
        comb = _run_design(cfg, args.threads).combined_rates()
        print("\nwhole system (class rates weighted by served volume)")
        print(_rate_table(comb.graph, comb.values))
        g = comb.graph
        rows += [["combined", g.customer_label(i), g.server_label(j), comb.values[i, j]] for i, j in g.sorted_edges()]
    _write_csv(args.out, "rates.csv", ["scope", "customer", "server", "rate"], rows)
    return EXIT_OK


def cmd_decompose(cfg: ScenarioConfig, args) -> int:
    d = _need_design(cfg, "decompose")
    spec = cfg.spec
    if d.mode == "diff":
        # served type mix against arrival-weighted server shares, on the redesigned graph
        dd = _run_design(cfg, args.threads)
        alpha = ProbabilityVector.normalized(dd.combined_rates().row_sums())
        beta = np.zeros(spec.J)
        for c in d.classes:
            beta[list(c.servers)] = spec.alpha.mass(c.customers) * c.beta.as_array()
        beta = ProbabilityVector.normalized(beta)
        graph = dd.graph
    else:
        alpha, beta, graph = design_alpha(spec, d.target), d.beta, spec.graph
    try:
        dec = decompose(alpha, beta, graph)
    except DecompositionError as exc:
        print(f"decomposition failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    rows = []
    print(f"{len(dec)} subsystem(s){' (system is pooled)' if dec.pooled else ''}")
    for k, s in enumerate(dec, 1):
        print(f"  {k}: customers {_labels(graph, s.customers, True)} servers {_labels(graph, s.servers, False)} "
              f"ratio {s.ratio:.6g}")
        rows.append([k, " ".join(graph.customer_label(i) for i in s.customers),
                     " ".join(graph.server_label(j) for j in s.servers), s.ratio])
    _write_csv(args.out, "decomposition.csv", ["subsystem", "customers", "servers", "ratio"], rows)
    return EXIT_OK


def _design_rows(lam, res, g):
    """Workforce rows and per-customer rows for one design."""
    wf_rows = [[lam, g.server_label(j), res.workforce_real[j], res.workforce[j]] for j in range(g.J)]
    if isinstance(res, DifferentiatedDesign):
        cust = {}
        for cd in res.classes:
            r = cd.result
            for a, i in enumerate(cd.customers):
                cust[i] = [lam, g.customer_label(i), cd.index + 1, r.adjusted_alpha[a], r.abandonment[a]]
        return wf_rows, [cust[i] for i in range(g.I)]
    return wf_rows, [[lam, g.customer_label(i), 1, res.adjusted_alpha[i], res.abandonment[i]] for i in range(g.I)]


def cmd_design(cfg: ScenarioConfig, args) -> int:
    wf_rows, c_rows = [], []
    g = cfg.spec.graph
    print(f"{'lambda':>8}  " + "".join(f"{g.server_label(j):>8}" for j in range(g.J)) + "   total")
    for c in _lambdas(cfg, args):
        res = _run_design(c, args.threads)
        lam = c.spec.arrival_rate
        print(f"{lam:8g}  " + "".join(f"{n:8d}" for n in res.workforce) + f"   {sum(res.workforce)}")
        w, cr = _design_rows(lam, res, g)
        wf_rows += w
        c_rows += cr
        if isinstance(res, DifferentiatedDesign):
            for cd in res.classes:
                print(f"          class {cd.index + 1} {cd.result.target}: "
                      f"effective lambda {cd.result.effective_lambda:.6g}, real {np.round(cd.result.workforce_real, 3)}")
            removed = sorted(cfg.spec.graph.edges - res.graph.edges)
            print("          removed links: " + ", ".join(f"({g.customer_label(i)},{g.server_label(j)})"
                                                       for i, j in removed))
        else:
            print(f"          {res.target}: effective lambda {res.effective_lambda:.6g} "
                  f"({res.effective_lambda / lam:.4f} lambda), real {np.round(res.workforce_real, 3)}")
            if res.target.regime == "ed":
                print("          adjusted alpha " + " ".join(f"{a:.4f}" for a in res.adjusted_alpha)
                      + "; predicted abandonment " + " ".join(f"{p:.4f}" for p in res.abandonment))
    _write_csv(args.out, "design.csv", ["lambda", "server", "workforce_real", "workforce"], wf_rows)
    _write_csv(args.out, "design_customers.csv", ["lambda", "customer", "class", "adjusted_alpha", "abandonment"],
               c_rows)
    return EXIT_OK


def _bin_widths(d):
    targets = [c.target for c in d.classes] if d is not None and d.mode == "diff" else \
        ([d.target] if d is not None else [])
    W = [t.W for t in targets if t.regime == "ed"]
    T = [t.T for t in targets if t.regime == "qd"]
    return (min(W) / 20 if W else None), (min(T) / 20 if T else None)


def _simulate(cfg: ScenarioConfig, args, tolerances: Tolerances):
    sim = cfg.simulate
    sim = dataclasses.replace(sim, **{k: v for k, v in (("seed", args.seed), ("replications", args.reps),
                                                        ("customers", args.customers), ("warmup", args.warmup),
                                                        ("threads", args.threads if args.threads != 1 else None),
                                                        ("max_events", args.max_events)) if v is not None})
    if sim.warmup >= sim.customers:
        raise ConfigError("simulate.warmup", "must be smaller than simulate.customers")
    budget = sim.replications * sim.customers * EVENTS_PER_CUSTOMER
    if budget > sim.max_events:
        raise BudgetExceeded(f"refusing to run: about {budget:.3g} events exceeds the cap of {sim.max_events:.3g} "
                             "(raise with --max-events or simulate.max_events)")
    res = _run_design(cfg, sim.threads) if cfg.design is not None else None
    spec = cfg.spec
    if isinstance(res, DifferentiatedDesign):
        spec = spec.with_graph(res.graph)
    workforce = sim.workforce or (res.workforce if res is not None else None)
    if workforce is None:
        raise ConfigError("simulate.workforce", "needed when the config has no [design] table")
    log.info("simulating %d x %d customers, workforce %s", sim.replications, sim.customers, workforce)
    reps = run_replications(SimConfig(spec, tuple(workforce), sim.customers, sim.warmup, sim.seed),
                            sim.replications, workers=sim.threads)
    wait_bin, idle_bin = _bin_widths(cfg.design)
    report = aggregate(reps, spec.graph, wait_bin, idle_bin)
    deviations = compare_to_design(report, res, tolerances) if res is not None else None
    print(f"workforce {tuple(workforce)}")
    print(format_report(report))
    if deviations is not None:
        print()
        print(format_deviations(deviations))
    if args.out:
        write_report_csv(report, args.out, deviations)
    return report, deviations


def _tolerances(cfg: ScenarioConfig, args) -> Tolerances:
    if not args.tolerance_file:
        return cfg.tolerances
    try:
        with open(args.tolerance_file, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(args.tolerance_file, f"TOML syntax error: {exc}") from exc
    data = data.get("validate", data)
    try:
        Tolerances.from_mapping(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(args.tolerance_file, str(exc)) from exc
    return dataclasses.replace(cfg.tolerances, **{k: float(v) for k, v in data.items()})


def cmd_simulate(cfg: ScenarioConfig, args) -> int:
    _simulate(cfg, args, _tolerances(cfg, args))
    return EXIT_OK


def cmd_validate(cfg: ScenarioConfig, args) -> int:
    _need_design(cfg, "validate")
    _, deviations = _simulate(cfg, args, _tolerances(cfg, args))
    failed = [d for d in deviations if d.ok is False]
    print()
    if failed:
        print(f"FAIL: {len(failed)} of {sum(d.ok is not None for d in deviations)} checks outside tolerance: "
              + ", ".join(d.quantity for d in failed))
        return EXIT_VALIDATION
    print(f"PASS: all {sum(d.ok is not None for d in deviations)} checks within tolerance")
    return EXIT_OK


COMMANDS = {
    "rates": cmd_rates,
    "crp": cmd_crp,
    "decompose": cmd_decompose,
    "design": cmd_design,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors, which is reserved for CRP violations here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="fcfsalis",
        description="Matching rates, staffing designs and simulation for FCFS-ALIS service systems.",
        epilog="CONFIG is a scenario TOML file or the name of a bundled fixture: " + ", ".join(fixture_names()),
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", metavar="CONFIG")
    p.add_argument("--out", metavar="DIR", help="write CSV tables into DIR")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--customers", type=int, help="customers per replication")
    p.add_argument("--warmup", type=int, help="customers discarded at the start of each replication")
    p.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--lambda", dest="lam", type=float, action="append",
                   help="override the arrival rate; repeat to design for several rates")
    p.add_argument("--tolerance-file", metavar="PATH", help="TOML file with tolerance overrides")
    p.add_argument("--max-events", type=int, help="refuse simulations estimated above this many events")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    for name in ("threads", "reps", "customers"):
        v = getattr(args, name)
        if v is not None and v < 1:
            parser.error(f"--{name} must be positive")
    try:
        cfg = load_config(args.config)
        if args.lam and args.command in ("simulate", "validate"):
            if len(args.lam) > 1:
                parser.error("simulate and validate take a single --lambda")
            cfg = cfg.with_arrival_rate(args.lam[0])
        elif args.lam and args.command != "design":
            cfg = cfg.with_arrival_rate(args.lam[0])
        return COMMANDS[args.command](cfg, args)
    except CRPViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CRP
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
