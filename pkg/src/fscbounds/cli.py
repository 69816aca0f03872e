"""Command-line front end: ``fscbounds <command> ...``; every command writes CSV."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .channels import FAMILIES, ChannelError, make_builtin, read_channel
from .encoders import (ENCODERS, GRAPHS, ValidityError, bfc2_kkt_candidate, bfc2_kkt_multipliers,
                       builtin_encoder, encoder_params, encoder_rate_formula, find_pstar,
                       kkt_verify)
from .lower import CertificationError, NoCertifiedEncoder, read_encoder, solve_lb, write_encoder
from .markov import ChainError
from .posterior_matching import SimulationError, empirical_rate, simulate
from .qgraph import QGraph, QGraphError, enumerate_qgraphs, markov_qgraph, read_qgraph
from .upper import InvalidGraphError, SolverError, solve_ub

HARD_ERRORS = (ChannelError, QGraphError, CertificationError, SimulationError, OSError,
               ValueError, KeyError, json.JSONDecodeError)
SOFT_ERRORS = (SolverError, NoCertifiedEncoder, InvalidGraphError, ChainError, ValidityError,
               CertificationError)


ZERO_PRINT = 1e-14


class UsageError(ValueError):
    pass


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        if np.isnan(v):
            return ""
        # roundoff-level values print as 0 so output does not depend on it
        return "0" if abs(v) < ZERO_PRINT else f"{float(v):.10g}"
    return str(v)


def write_rows(header, rows, out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return text


def parse_p_values(args) -> list:
    if args.p is not None and args.p_range is not None:
        raise UsageError("give either --p or --p-range, not both")
    if args.p_range is not None:
        try:
            a, b, step = (float(v) for v in args.p_range.split(":"))
        except ValueError:
            raise UsageError(f"--p-range expects a:b:step, got {args.p_range!r}") from None
        if step <= 0 or b < a:
            raise UsageError("--p-range needs a <= b and step > 0")
        n = int(np.floor((b - a) / step + 1e-9)) + 1
        values = [round(a + i * step, 12) for i in range(n)]
    elif args.p is not None:
        values = [float(v) for v in args.p]
    else:
        raise UsageError("a channel parameter is required (--p or --p-range)")
    if not values or any(not 0.0 <= v <= 1.0 for v in values):
        raise UsageError("p values must lie in [0, 1]")
    return values


def channel_for(source: str, p):
    if source.startswith("file:"):
        return read_channel(source[5:])
    if source not in FAMILIES:
        raise UsageError(f"unknown channel {source!r}; use one of {FAMILIES} or file:PATH")
    return make_builtin(source, p)


def graphs_for(source: str, output_count: int) -> list:
    kind, _, arg = source.partition(":")
    if kind == "markov":
        return [markov_qgraph(int(arg), output_count)]
    if kind == "pool":
        n = int(arg)
        if n < 1:
            raise UsageError("pool size must be at least 1")
        return [QGraph(g.transition, name=g.label())
                for k in range(1, n + 1) for g in enumerate_qgraphs(k, output_count)]
    if kind == "file":
        return [read_qgraph(arg)]
    if source in GRAPHS:
        return [QGraph(GRAPHS[source], name=source)]
    raise UsageError(f"unknown graph source {source!r}")


def _note(errors: list, tag: str, exc) -> None:
    errors.append(f"{tag}: {type(exc).__name__}: {exc}".replace("\n", " "))


def _plot(args, x, curves, **kw):
    if getattr(args, "plot", None):
        from .plotting import plot_curves

        plot_curves(args.plot, x, curves, **kw)


# ---------------------------------------------------------------------------
# commands

BOUNDS_HEADER = ["p", "graph_id", "ub", "lb", "gap", "ub_graph", "lb_graph",
                 "feas_residual", "opt_gap", "bcjr_residual", "status"]


def _bound_row(args, ch, p, graphs, pool_id):
    ub = lb = (np.nan, "", np.nan, np.nan)
    best_ub, best_lb = None, None
    errors = []
    coupled = 0
    for g in graphs:
        usable = True
        if args.bound in ("ub", "both"):
            try:
                r = solve_ub(ch, g, feas_tol=args.tol_feas, obj_tol=args.tol_obj, seed=args.seed)
                if best_ub is None or r.certified_value < best_ub[0]:
                    best_ub = (r.certified_value, g.label(), r.feasibility_residual,
                               r.optimality_gap)
            except InvalidGraphError as exc:
                if len(graphs) == 1:
                    _note(errors, "ub", exc)
                continue
            except SOFT_ERRORS as exc:
                _note(errors, f"ub[{g.label()}]", exc)
        if args.bound in ("lb", "both") and not args.encoder:
            try:
                r = solve_lb(ch, g, starts=args.starts, seed=args.seed, feas_tol=args.tol_feas)
                if best_lb is None or r.value > best_lb[0]:
                    best_lb = (r.value, g.label(), r.best.bcjr_residual)
            except InvalidGraphError as exc:
                usable = False
                if len(graphs) == 1:
                    _note(errors, "lb", exc)
            except SOFT_ERRORS as exc:
                _note(errors, f"lb[{g.label()}]", exc)
        coupled += usable
    if args.encoder and args.bound in ("lb", "both"):
        try:
            enc = builtin_encoder(args.encoder, p)
            best_lb = (enc.rate, args.encoder, enc.bcjr_residual)
        except SOFT_ERRORS as exc:
            _note(errors, "lb", exc)
    if best_ub is not None:
        ub = best_ub
    if best_lb is not None:
        lb = best_lb
    gap = ub[0] - lb[0] if best_ub is not None and best_lb is not None else np.nan
    status = "; ".join(errors) if errors else "ok"
    row = [p, pool_id, ub[0], lb[0], gap, ub[1], lb[1],
           ub[2] if best_ub is not None else np.nan,
           ub[3] if best_ub is not None else np.nan,
           lb[2] if best_lb is not None else np.nan, status]
    return row, coupled


def cmd_bounds(args) -> int:
    file_channel = args.channel.startswith("file:")
    ps = [np.nan] if file_channel else parse_p_values(args)
    probe = channel_for(args.channel, 0.5 if file_channel else ps[0])
    graphs = graphs_for(args.graph, probe.output_count)
    pool_id = args.graph if args.graph.startswith(("pool:", "markov:")) else graphs[0].label()
    rows, tried = [], 0
    for p in ps:
        ch = probe if file_channel else make_builtin(args.channel, p)
        row, n = _bound_row(args, ch, p, graphs, pool_id)
        rows.append(row)
        tried += n
    if tried == 0:
        print("warning: no graph in the pool couples validly with the channel",
              file=sys.stderr)
        rows = []
    rows.sort(key=lambda r: (-1.0 if np.isnan(r[0]) else r[0], r[1]))
    write_rows(BOUNDS_HEADER, rows, args.out)
    if rows and not file_channel:
        _plot(args, [r[0] for r in rows], {"upper": [r[2] for r in rows],
                                           "lower": [r[3] for r in rows]},
              title=f"{args.channel}, {pool_id}")
    return 0


def cmd_enumerate(args) -> int:
    graphs = list(enumerate_qgraphs(args.nodes, args.outputs))
    if args.list:
        rows = [(args.nodes, args.outputs, i, g.label()) for i, g in enumerate(graphs)]
        write_rows(["nodes", "outputs", "index", "transition"], rows, args.out)
    else:
        write_rows(["nodes", "outputs", "count"], [(args.nodes, args.outputs, len(graphs))],
                   args.out)
    return 0


def _load_encoder(args):
    if args.encoder_file:
        enc = read_encoder(args.encoder_file)
        return enc, enc.channel, args.encoder_file
    if not args.encoder:
        raise UsageError("give --encoder ID (with --p) or --encoder-file PATH")
    if args.p is None or len(args.p) != 1:
        raise UsageError("a built-in encoder needs exactly one --p value")
    enc = builtin_encoder(args.encoder, args.p[0])
    return enc, enc.channel, args.encoder


SIM_HEADER = ["encoder", "p", "certified_rate", "trials", "n", "messages", "mean_rate",
              "stderr", "success_fraction", "max_normalization_error", "flagged_steps"]


def cmd_simulate(args) -> int:
    enc, ch, name = _load_encoder(args)
    rates, ok, worst, flagged = [], 0, 0.0, 0
    for i in range(args.trials):
        tr = simulate(enc, ch, args.messages, args.n, seed=args.seed + i)
        rates.append(empirical_rate(tr))
        ok += tr.success
        worst = max(worst, float(tr.normalization_error.max()))
        flagged += len(tr.flags)
        if i == 0:
            if args.transcript:
                tr.write_csv(args.transcript)
            if args.plot:
                from .plotting import plot_running_rate

                plot_running_rate(args.plot, tr.log_growth, enc.rate, title=name)
    rates = np.asarray(rates)
    stderr = rates.std(ddof=1) / np.sqrt(len(rates)) if len(rates) > 1 else np.nan
    p = (ch.params or {}).get("p", np.nan)
    write_rows(SIM_HEADER, [(name, p, enc.rate, args.trials, args.n, args.messages,
                             rates.mean(), stderr, ok / args.trials, worst, flagged)], args.out)
    return 0


def cmd_encoders(args) -> int:
    if args.action == "list":
        rows = [(e.id, e.family, e.formula, e.p_range[0], e.p_range[1],
                 "open" if e.p_range[2] else "closed", "open" if e.p_range[3] else "closed",
                 " ".join(e.params), e.description) for e in ENCODERS.values()]
        write_rows(["id", "channel", "formula", "p_min", "p_max", "min_end", "max_end",
                    "params", "description"], rows, args.out)
        return 0
    if not args.id:
        raise UsageError(f"encoders {args.action} needs an encoder id")
    if args.id not in ENCODERS:
        raise UsageError(f"unknown encoder {args.id!r}; see 'encoders list'")
    if args.action == "export":
        if args.p is None or len(args.p) != 1 or not args.out:
            raise UsageError("encoders export needs one --p and --out PATH")
        write_encoder(builtin_encoder(args.id, args.p[0]), args.out)
        return 0
    rows = []
    for p in parse_p_values(args):
        try:
            params = encoder_params(args.id, p)
            enc = builtin_encoder(args.id, p, params)
            rows.append((args.id, p, enc.rate, encoder_rate_formula(args.id, p, params),
                         " ".join(f"{v:.10g}" for v in params), enc.bcjr_residual, "ok"))
        except SOFT_ERRORS as exc:
            rows.append((args.id, p, np.nan, np.nan, "", np.nan,
                         f"{type(exc).__name__}: {exc}"))
    write_rows(["encoder", "p", "rate", "formula_rate", "params", "bcjr_residual", "status"],
               rows, args.out)
    _plot(args, [r[1] for r in rows], {args.id: [r[2] for r in rows]}, title=args.id)
    return 0


def cmd_kkt(args) -> int:
    if args.channel != "bfc2":
        raise UsageError("a closed-form candidate is only available for bfc2")
    g = graphs_for(args.graph, 2)[0]
    rows = []
    for p in parse_p_values(args):
        ch = make_builtin("bfc2", p)
        rep = kkt_verify(ch, g, bfc2_kkt_candidate(p), tol=args.tol)
        mu1, mu2 = bfc2_kkt_multipliers(p)
        rows.append((p, g.label(), rep.verdict, rep.min_mu, rep.stationarity_residual,
                     rep.complementary_slackness_violation, rep.feasibility_residual,
                     rep.mu[1, 0, 0, 0], rep.mu[1, 0, 1, 0], mu1, mu2))
    write_rows(["p", "graph_id", "verdict", "min_multiplier", "stationarity_residual",
                "slackness_violation", "feas_residual", "mu_a", "mu_b", "mu_a_closed_form",
                "mu_b_closed_form"], rows, args.out)
    _plot(args, [r[0] for r in rows], {"mu_a": [r[9] for r in rows],
                                       "mu_b": [r[10] for r in rows]},
          ylabel="multiplier", title="bfc2 KKT multipliers")
    return 0


def cmd_pstar(args) -> int:
    write_rows(["channel", "pstar"], [(args.channel, find_pstar(args.channel))], args.out)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fscbounds",
                                 description="Feedback-capacity bounds for unifilar "
                                             "finite-state channels.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, grid=True):
        if grid:
            p.add_argument("--p", type=float, nargs="+", help="channel parameter value(s)")
            p.add_argument("--p-range", metavar="A:B:STEP", help="inclusive grid of p values")
        p.add_argument("--out", metavar="PATH", help="CSV destination (default stdout)")

    b = sub.add_parser("bounds", help="upper/lower bounds over a p grid")
    b.add_argument("--channel", required=True, help=f"{'|'.join(FAMILIES)} or file:PATH")
    b.add_argument("--graph", default="markov:1",
                   help="markov:k | pool:n | file:PATH | built-in graph name")
    b.add_argument("--bound", choices=("ub", "lb", "both"), default="both")
    b.add_argument("--encoder", help="take the lower bound from this built-in encoder")
    b.add_argument("--starts", type=int, default=16, help="lower-bound random starts")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--tol-feas", type=float, default=1e-8)
    b.add_argument("--tol-obj", type=float, default=1e-6)
    b.add_argument("--plot", metavar="PATH", help="also render the bounds to an image")
    common(b)
    b.set_defaults(func=cmd_bounds)

    e = sub.add_parser("enumerate", help="count valid Q-graphs up to relabeling")
    e.add_argument("--nodes", type=int, required=True)
    e.add_argument("--outputs", type=int, default=2)
    e.add_argument("--list", action="store_true", help="list the graphs instead of counting")
    common(e, grid=False)
    e.set_defaults(func=cmd_enumerate)

    s = sub.add_parser("simulate", help="posterior-matching simulation of an encoder")
    s.add_argument("--encoder", help="built-in encoder id (needs --p)")
    s.add_argument("--encoder-file", metavar="PATH")
    s.add_argument("--p", type=float, nargs=1)
    s.add_argument("--n", type=int, default=100000, help="channel uses per trial")
    s.add_argument("--messages", type=int, default=16)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--transcript", metavar="PATH", help="CSV of the first trial's steps")
    s.add_argument("--plot", metavar="PATH", help="running rate of the first trial")
    s.add_argument("--out", metavar="PATH")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("encoders", help="built-in graph-based encoders")
    c.add_argument("action", choices=("list", "eval", "export"))
    c.add_argument("id", nargs="?")
    c.add_argument("--plot", metavar="PATH")
    common(c)
    c.set_defaults(func=cmd_encoders)

    k = sub.add_parser("kkt", help="optimality check of the closed-form bfc2 candidate")
    k.add_argument("--channel", default="bfc2")
    k.add_argument("--graph", default="bfc2_3node")
    k.add_argument("--tol", type=float, default=1e-7)
    k.add_argument("--plot", metavar="PATH")
    common(k)
    k.set_defaults(func=cmd_kkt)

    t = sub.add_parser("pstar", help="threshold parameter of a channel family")
    t.add_argument("--channel", required=True, choices=("bfc2", "trapdoor"))
    common(t, grid=False)
    t.set_defaults(func=cmd_pstar)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))
    except HARD_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
