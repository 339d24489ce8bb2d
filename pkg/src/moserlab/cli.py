"""Command-line front end.

Exit codes: 0 success; 1 finished but a non-advisory audit check failed;
2 configuration error or missing input; 3 solver failure (report still
written); 4 audit failure under ``--strict`` (pipeline stopped).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, reports
from .audit import NonFiniteEvaluation
from .config import ConfigError, initial_field, load_config
from .hypotheses import UNBOUNDED, critical_exponent_boundary, critical_exponent_domain, verify_boundary_holder, verify_growth
from .operators import StructureSamples, check_structure_HA
from .registry import make_field
from .solver import AssemblyError, NonConvergence, SingularLinearization, solve

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_SOLVER, EXIT_STRICT = 0, 1, 2, 3, 4
DEFAULT_OUT = "moserlab-reports"

log = logging.getLogger("moserlab")


class MissingInput(Exception):
    pass


class _Run:
    """Shared state of one invocation: config, flags and report sink."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config)
        out = args.out or self.cfg.output.get("dir") or DEFAULT_OUT
        self.out = Path(out)
        self.format = args.format or self.cfg.output.get("format") or "both"
        self.seed = args.seed
        self.written = []

    def emit(self, stage, status, data, csv_files=()):
        rep = reports.envelope(stage, status, self.cfg.digest(stage, self.seed), data)
        if self.format in ("json", "both"):
            self.written.append(reports.write_json(self.out, stage, rep))
        if self.format in ("csv", "both"):
            for name, text in csv_files:
                self.written.append(reports.write_text(self.out, name, text))
        return rep


# ---------------------------------------------------------------- stages


def stage_audit(run):
    cfg = run.cfg
    req = cfg.audit or {"structure": True, "growth": True, "holder": False, "advisory": []}
    audits, errors = [], []
    try:
        if req["structure"]:
            audits.append(check_structure_HA(cfg.operator, StructureSamples(seed=run.seed)))
        if req["growth"]:
            audits.append(verify_growth(cfg.reaction, cfg.operator, cfg.exponents, cfg.constants))
        if req["holder"]:
            audits.append(verify_boundary_holder(cfg.reaction.c, cfg.constants, seed=run.seed))
    except NonFiniteEvaluation as exc:
        errors.append(str(exc))
    advisory = set(req["advisory"])
    blocking = [f"{a.subject}:{c.id}" for a in audits for c in a.failures() if c.id not in advisory]
    status = "error" if errors else ("fail" if blocking else "pass")
    data = {
        "audits": [a.to_dict() for a in audits],
        "advisory": sorted(advisory),
        "blocking_failures": blocking,
        "errors": errors,
    }
    for a in audits:
        for c in a.failures():
            log.warning("audit %s %s FAIL witness=%s", a.subject, c.id, c.witness)
    run.emit("audit", status, data)
    return status == "pass"


def _field_csv(mesh, u):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "u"])
    for (x, y), v in zip(mesh.nodes.tolist(), np.asarray(u).tolist()):
        w.writerow([repr(x), repr(y), repr(v)])
    return buf.getvalue()


def stage_solve(run):
    cfg = run.cfg
    try:
        rep = solve(cfg.spec, initial_field(cfg))
    except (NonConvergence, SingularLinearization) as exc:
        status = "singular" if isinstance(exc, SingularLinearization) else "nonconverged"
        data = {
            "converged": False,
            "message": str(exc),
            "iterations": exc.iterations,
            "residual_history": [float(r) for r in exc.history],
            "best_iterate": exc.best.values.tolist(),
        }
        run.emit("solve", status, data)
        log.error("solve failed: %s", exc)
        return None
    except AssemblyError as exc:
        run.emit("solve", "error", {"converged": False, "message": str(exc), "element": exc.element, "where": exc.where})
        log.error("assembly failed: %s", exc)
        return None
    data = rep.to_dict()
    exact = cfg.analysis.get("exact")
    if exact:
        err = analysis.error_norm(cfg.mesh, rep.field, make_field(exact))
        data["exact"] = exact
        data["l2_error"] = err
        thr = cfg.analysis.get("l2_threshold")
        if thr is not None:
            data["l2_threshold"] = thr
            data["l2_within_threshold"] = bool(err <= thr)
    run.emit("solve", "converged", data, [("solution.csv", _field_csv(cfg.mesh, rep.field.values))])
    return rep.field.values


def load_solution(path, n_nodes):
    """Nodal values from a solve report (JSON) or a solution CSV."""
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"solution file not found: {path}")
    text = p.read_text(encoding="utf-8")
    try:
        if p.suffix == ".csv":
            rows = list(csv.DictReader(io.StringIO(text)))
            vals = [float(r["u"]) for r in rows]
        else:
            doc = json.loads(text)
            if doc.get("stage") != "solve" or doc.get("status") != "converged":
                raise MissingInput(f"{path} is not a converged solve report")
            vals = doc["data"]["field"]
    except (KeyError, ValueError, TypeError) as exc:
        raise MissingInput(f"cannot read a solution from {path}: {exc}") from None
    if len(vals) != n_nodes:
        raise MissingInput(f"solution has {len(vals)} values, mesh has {n_nodes} nodes")
    return np.asarray(vals, dtype=float)


def stage_ladder(run, u):
    cfg = run.cfg
    lad = cfg.analysis.get("ladder") or {"kinds": ["domain", "boundary"], "alpha_cap": 400.0, "q_tilde": None, "kappa0": None}
    data = {"ladders": {}, "csv_columns": ["kappa", "alpha", "log_norm", "norm"]}
    files = []
    for kind in lad["kinds"]:
        r = analysis.norm_ladder(cfg.mesh, u, cfg.exponents, kind, lad["q_tilde"], lad["alpha_cap"], lad["kappa0"])
        data["ladders"][kind] = r.to_dict()
        files.append((f"ladder_{kind}.csv", r.to_csv()))
    dmax, bmax = analysis.sup_norms(cfg.mesh, u)
    data["direct_max"] = {"domain": dmax, "boundary": bmax}

    exps, p = cfg.exponents, cfg.exponents.p
    ps, pb = float(exps.critical_domain), float(exps.critical_boundary)
    tails_req = cfg.analysis.get("tails") or {"L": None, "G": None, "n_thresholds": 20}
    if ps > p and pb > p:
        n = tails_req["n_thresholds"]
        L = tails_req["L"] or np.linspace(0.0, 1.05 * dmax ** (ps - p), n).tolist()
        G = tails_req["G"] or np.linspace(0.0, 1.05 * bmax ** (pb - p), n).tolist()
        H, K = analysis.tail_functionals(cfg.mesh, u, p, exps.N, L, G, p_star=ps, p_boundary=pb)
        data["tails"] = {"L": L, "H": H.tolist(), "G": G, "K": K.tolist(), "p_star": ps, "p_boundary": pb}
    else:
        data["tails"] = {"skipped": "tail functionals need p* > p and p_* > p"}
    run.emit("ladder", "ok", data, files)


def stage_trace(run):
    cfg = run.cfg
    tr = cfg.analysis.get("trace")
    if tr is None:
        raise ConfigError("analysis.trace", "is required for the trace-fit stage", cfg.source)
    xy = cfg.mesh.nodes
    samples = [make_field(name)(xy[:, 0], xy[:, 1]) for name in tr["samples"]]
    try:
        r = analysis.trace_interpolation_fit(cfg.mesh, tr["p"], tr["q_hat"], samples, tr["epsilons"], N=cfg.exponents.N)
    except ValueError as exc:
        raise ConfigError("analysis.trace", str(exc), cfg.source) from None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "c_eps"])
    for e, c in zip(r.epsilons, r.c_eps):
        w.writerow([repr(e), repr(c)])
    data = r.to_dict()
    data["samples"] = tr["samples"]
    run.emit("trace_fit", "ok" if r.holds else "fail", data, [("trace_fit.csv", buf.getvalue())])
    return r.holds


# ---------------------------------------------------------------- commands


def cmd_run(args):
    run = _Run(args)
    audit_ok = True
    if run.cfg.audit is not None:
        audit_ok = stage_audit(run)
        if not audit_ok and args.strict:
            return EXIT_STRICT
    u = stage_solve(run)
    if u is None:
        return EXIT_SOLVER
    an = run.cfg.analysis
    if "ladder" in an or "tails" in an:
        stage_ladder(run, u)
    if "trace" in an:
        stage_trace(run)
    return EXIT_OK if audit_ok else EXIT_AUDIT


def cmd_solve(args):
    return EXIT_OK if stage_solve(_Run(args)) is not None else EXIT_SOLVER


def cmd_audit(args):
    if stage_audit(_Run(args)):
        return EXIT_OK
    return EXIT_STRICT if args.strict else EXIT_AUDIT


def cmd_ladder(args):
    run = _Run(args)
    if not args.solution:
        raise MissingInput("ladder needs --solution (a solve report or solution.csv)")
    stage_ladder(run, load_solution(args.solution, run.cfg.mesh.n_nodes))
    return EXIT_OK


def cmd_trace_fit(args):
    stage_trace(_Run(args))
    return EXIT_OK


def _fmt(v):
    return "UNBOUNDED" if v is UNBOUNDED else f"{v:.12g}"


def cmd_exponents(args):
    try:
        ps, pb = critical_exponent_domain(args.p, args.N), critical_exponent_boundary(args.p, args.N)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.format == "json":
        print(json.dumps({"p": args.p, "N": args.N, "p_star": _fmt(ps), "p_sub_star": _fmt(pb)}, sort_keys=True))
    else:
        print(f"p*={_fmt(ps)}")
        print(f"p_*={_fmt(pb)}")
    return EXIT_OK


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (TOML)")
    common.add_argument("--strict", action="store_true", help="treat audit failures as fatal")
    common.add_argument("--out", help="report directory")
    common.add_argument("--format", choices=("json", "csv", "both"), help="report formats to write")
    common.add_argument("--seed", type=_u64, default=0, help="sampling seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="moserlab", description="Solve, audit and analyse quasilinear problems with nonlinear boundary flux.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="audit, solve and analyse").set_defaults(func=cmd_run)
    sub.add_parser("solve", parents=[common], help="solve only").set_defaults(func=cmd_solve)
    sub.add_parser("audit", parents=[common], help="hypothesis audits only").set_defaults(func=cmd_audit)
    lp = sub.add_parser("ladder", parents=[common], help="norm ladders and tails of a solution")
    lp.add_argument("--solution", help="solve report (JSON) or solution.csv")
    lp.set_defaults(func=cmd_ladder)
    sub.add_parser("trace-fit", parents=[common], help="trace-interpolation fit").set_defaults(func=cmd_trace_fit)
    ep = sub.add_parser("exponents", help="critical exponents p* and p_*")
    ep.add_argument("--p", type=float, required=True)
    ep.add_argument("--N", type=int, required=True)
    ep.add_argument("--format", choices=("text", "json"), default="text")
    ep.set_defaults(func=cmd_exponents)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
