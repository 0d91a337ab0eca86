"""Command-line front end: one subcommand per module.

Exit codes: 0 success, 1 a certification or check failed, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import enum
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import coupling_cert, lattice, map_core, toom, transfer
from ._rational import parse_rational
from .config import ExperimentConfig, ParseError, from_mapping, parse_config
from .io import IoError, atomic_write_text, csv_text, version_string, write_json

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CheckFailed(Exception):
    """A check ran to completion and did not pass."""


# ------------------------------------------------------------------ helpers


def jsonable(obj):
    """Recursively convert reports to JSON-friendly values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if hasattr(obj, "passed"):
            out["pass"] = bool(obj.passed)
        return out
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(jsonable(k)): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        return [jsonable(x) for x in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.complexfloating) or isinstance(obj, complex):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, transfer.StepDensity):
        return {"cells": [[str(a), str(b)] for a, b in obj.cells], "heights": [str(h) for h in obj.heights]}
    return obj


def metadata(cfg: ExperimentConfig, k: int | None) -> dict:
    """Self-description embedded in every artifact."""
    p = cfg.params
    try:
        eps2 = str(coupling_cert.compute_epsilon2(p))
    except coupling_cert.NoAdmissibleEps:
        eps2 = None
    resolved = cfg.to_dict()
    if k is not None:
        resolved["k"] = k
    return {
        "config": resolved,
        "k": k,
        "eps2": eps2,
        "version": version_string(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def resolve_k(cfg: ExperimentConfig) -> int:
    if cfg.k is not None:
        return cfg.k
    return map_core.select_k(cfg.params, 4, cfg.profile).k


def emit_json(doc: dict, out: str | None) -> None:
    if out:
        write_json(out, doc)
    print(json.dumps(doc, indent=2, default=str))


def emit_csv(header, rows, meta, out: str | None) -> None:
    text = csv_text(header, rows, meta)
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------- arguments


def _rational_arg(s: str) -> Fraction:
    try:
        return parse_rational(s)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML experiment file; flags override its keys")
    p.add_argument("--eta", type=_rational_arg)
    p.add_argument("--delta", type=_rational_arg)
    p.add_argument("--gamma", type=_rational_arg)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--k", type=int)
    g.add_argument("--profile", choices=[m.value for m in map_core.Profile])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output file or directory")


_OVERRIDABLE = ("eta", "delta", "gamma", "k", "profile", "seed", "out", "L", "steps", "replicas",
                "p", "sigma", "eps_grid", "n_max")


def build_config(args) -> ExperimentConfig:
    base = parse_config(args.config).to_dict() if getattr(args, "config", None) else {}
    for key in _OVERRIDABLE:
        val = getattr(args, key, None)
        if val is not None:
            base[key] = str(val) if isinstance(val, Fraction) else val
    base["module"] = args.command
    return from_mapping(base)


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cml", description="Coupled map lattice toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("map", help="build local maps and select k")
    p.add_argument("action", choices=["build", "select"])
    p.add_argument("--which", choices=["tilde", "acute", "hat", "check"], default="tilde")
    _common(p)

    p = sub.add_parser("transfer", help="transfer-operator analysis")
    p.add_argument("action", choices=["density", "expansion", "mixing", "covering", "contraction"])
    p.add_argument("--alpha", type=_rational_arg, default=Fraction(1, 2))
    p.add_argument("--kappa", type=float, default=0.1)
    _common(p)

    p = sub.add_parser("certify", help="exact coupling-inequality certificate")
    p.add_argument("--eps-lo", type=_rational_arg)
    p.add_argument("--eps-hi", type=_rational_arg)
    _common(p)

    p = sub.add_parser("run", help="lattice sweep from a config file")
    p.add_argument("--L", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--eps-grid", dest="eps_grid", type=float, nargs="+")
    _common(p)

    p = sub.add_parser("pca", help="Toom majority PCA")
    p.add_argument("--p", type=float)
    p.add_argument("--L", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--init", choices=["plus", "minus", "random"], default="plus")
    _common(p)

    p = sub.add_parser("peierls", help="Peierls series bound")
    p.add_argument("--delta-num", default="1")
    p.add_argument("--delta-den", default="4*48^8")

    p = sub.add_parser("smooth", help="smoothed circle-map checks")
    p.add_argument("action", choices=["build", "kr1", "kr2"])
    p.add_argument("--sigma", type=float, nargs="+")
    p.add_argument("--n-max", dest="n_max", type=int)
    p.add_argument("--csv", help="sample zeta_sigma to this CSV (build)")
    p.add_argument("--grid", type=int, default=1 << 16, help="kr2 grid size")
    _common(p)

    p = sub.add_parser("report", help="CSV summaries, optionally with figures")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.add_argument("--L", type=int)
    p.add_argument("--steps", type=int)
    _common(p)
    return ap


# ------------------------------------------------------------- subcommands


def cmd_map(args, cfg: ExperimentConfig) -> int:
    params = cfg.params
    if args.action == "select":
        sel = map_core.select_k(params, 4, cfg.profile) if cfg.k is None else None
        doc = {"meta": metadata(cfg, sel.k if sel else cfg.k),
               "selection": sel.summary() if sel else {"k": cfg.k}}
        emit_json(doc, cfg.out)
        return EXIT_OK
    k = resolve_k(cfg) if args.which in ("hat", "check") else None
    if args.which == "tilde":
        m = map_core.build_tilde_tau(params)
    elif args.which == "acute":
        m = map_core.build_acute_tau(params)
    elif args.which == "hat":
        m = map_core.build_hat_tau(params, k).as_piecewise()
    else:
        m = map_core.build_check_tau(params, k).as_piecewise()
    doc = json.loads(m.to_json())
    doc["meta"] = metadata(cfg, k)
    doc["which"] = args.which
    if cfg.out:
        write_json(cfg.out, doc)
    print(json.dumps({"which": args.which, "k": k, "pieces": m.n_pieces, "out": cfg.out}))
    return EXIT_OK


def cmd_transfer(args, cfg: ExperimentConfig) -> int:
    params = cfg.params
    if args.action == "density":
        h = transfer.h_tilde_alpha(params, args.alpha)
        meta = metadata(cfg, None)
        meta["alpha"] = str(args.alpha)
        emit_csv(("x_left", "x_right", "height"), h.csv_rows(), meta, cfg.out)
        return EXIT_OK
    if args.action == "expansion":
        rep = transfer.gamma_expansion_check(params.eta, params.delta)
        k = None
    elif args.action == "mixing":
        rep = transfer.estimate_mixing_rate(params)
        k = None
    elif args.action == "covering":
        k = resolve_k(cfg)
        rep = transfer.covering_check(params, k)
    else:
        k = resolve_k(cfg) if cfg.k is not None else None
        rep = transfer.contraction_check(params, args.kappa, k_values=[k] if k else None)
    doc = {"meta": metadata(cfg, k), "report": jsonable(rep)}
    emit_json(doc, cfg.out)
    return EXIT_OK if getattr(rep, "passed", True) else EXIT_FAIL


def cmd_certify(args, cfg: ExperimentConfig) -> int:
    params = cfg.params
    rep = coupling_cert.certify_cases(params, args.eps_lo, args.eps_hi)
    doc = {"meta": metadata(cfg, None), **rep.as_dict()}
    emit_json(doc, cfg.out)
    return EXIT_OK if rep.passed else EXIT_FAIL


def sweep_from_config(cfg: ExperimentConfig) -> lattice.SweepConfig:
    return lattice.SweepConfig(
        cfg.params, resolve_k(cfg), list(cfg.eps_grid), cfg.L, cfg.steps, cfg.replicas, cfg.seed,
        cfg.boundary, cfg.ordering, cfg.init, cfg.fixed_value,
    )


def cmd_run(args, cfg: ExperimentConfig) -> int:
    sc = sweep_from_config(cfg)
    sc.validate()
    out = Path(cfg.out or "runs")
    res = lattice.run_sweep(sc)
    meta = metadata(cfg, sc.k)
    rows = ([getattr(r, f) for f in lattice.SweepRecord.FIELDS] for r in res.records())
    atomic_write_text(out / "sweep.csv", csv_text(lattice.SweepRecord.FIELDS, rows, meta))
    summary = [
        (r.eps, r.replica, r.seed, r.init, r.time_average(), r.time_average(r.n_steps // 2), r.error_rate())
        for r in res.runs
    ]
    header = ("eps", "replica", "seed", "init", "mean_magnetization", "mean_magnetization_last_half",
              "error_rate")
    atomic_write_text(out / "summary.csv", csv_text(header, summary, meta))
    if cfg.snapshots:
        for r in res.runs:
            lattice.write_snapshot(out / f"final_eps{r.eps:g}_r{r.replica}.bin", r.final)
    write_json(out / "meta.json", meta)
    for row in summary:
        print(",".join(map(str, row)))
    return EXIT_OK


def cmd_pca(args, cfg: ExperimentConfig) -> int:
    L = cfg.L if args.L is not None else 64
    steps = cfg.steps if args.steps is not None else 1000
    run = toom.run_pca(L, cfg.p, steps, cfg.seed, args.init)
    header = ("p", "L", "seed", "t", "magnetization", "frac_negative", "origin_sign", "error_sites")
    rows = (
        (cfg.p, L, cfg.seed, t + 1, float(run.magnetization[t]), float(run.frac_negative[t]),
         int(run.origin_sign[t]), int(run.error_sites[t]))
        for t in range(steps)
    )
    meta = {"config": {"p": cfg.p, "L": L, "steps": steps, "seed": cfg.seed, "init": args.init},
            "version": version_string()}
    emit_csv(header, rows, meta, cfg.out)
    return EXIT_OK


def cmd_peierls(args) -> int:
    delta = parse_rational(args.delta_num) / parse_rational(args.delta_den)
    print(toom.peierls_series(delta))
    return EXIT_OK


def cmd_smooth(args, cfg: ExperimentConfig) -> int:
    from . import smooth

    if args.eta is None and args.delta is None and args.gamma is None and not args.config:
        params, k = smooth.default_smooth_params()
        cfg = dataclasses.replace(cfg, eta=params.eta, delta=params.delta, gamma=params.gamma, k=k)
    params = cfg.params
    k = resolve_k(cfg)
    zeta = smooth.build_zeta(smooth.build_check_tau_symbolic(params, k), k)
    sigmas = list(cfg.sigma)
    meta = metadata(cfg, k)
    if args.action == "build":
        sups = {str(s): smooth.sup_deviation(zeta, s) for s in sigmas}
        doc = {"meta": meta, "p": zeta.p, "nodes": len(zeta.xs), "kinks": len(zeta.kinks[0]),
               "sup_deviation": sups}
        if args.csv:
            x = np.linspace(-1.0, min(7.0, 2 * zeta.p - 1.0), 4001)
            cols = [x, zeta(x)] + [smooth.smooth_zeta(zeta, s)(x) for s in sigmas]
            header = ["x", "zeta"] + [f"zeta_sigma_{s:g}" for s in sigmas]
            atomic_write_text(args.csv, csv_text(header, zip(*[c.tolist() for c in cols]), meta))
        emit_json(doc, cfg.out)
        return EXIT_OK
    if args.action == "kr2":
        rep = smooth.kr2_check(zeta, sigmas, n_grid=args.grid)
    else:
        rep = smooth.kr1_check(zeta, sigmas, n_max=cfg.n_max)
    doc = {"meta": meta, "report": jsonable(rep)}
    emit_json(doc, cfg.out)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_report(args, cfg: ExperimentConfig) -> int:
    """Small-scale summaries of every module as CSV, plus optional figures."""
    out = Path(cfg.out or "report")
    params = cfg.params
    k = resolve_k(cfg)
    meta = metadata(cfg, k)
    written = []

    def put(name, header, rows):
        atomic_write_text(out / name, csv_text(header, rows, meta))
        written.append(str(out / name))

    rows = []
    for g in (Fraction(1, 100), Fraction(1, 1000), Fraction(1, 10**4)):
        pg = map_core.validate_params(params.eta, params.delta, g)
        sel = map_core.select_k(pg, 4, cfg.profile)
        rows.append((str(g), sel.profile.value, sel.k, float(sel.min_slope_hat)))
    put("k_table.csv", ("gamma", "profile", "k", "min_slope"), rows)

    cert = coupling_cert.certify_cases(params)
    put("certify.csv", ("case", "statement", "extreme", "target", "margin", "margin_at_eta", "pass"),
        [(c.name, c.statement, str(c.extreme), str(c.target), str(c.margin), str(c.margin_at_eta),
          c.passed) for c in cert.cases])

    exp = transfer.gamma_expansion_check(params.eta, params.delta)
    put("expansion.csv", ("integral", "formula", "fitted", "rel_error", "gamma2_coef"),
        [tuple(r.values()) for r in exp.rows()])

    h = transfer.h_tilde_alpha(params, Fraction(1, 2))
    put("density.csv", ("x_left", "x_right", "height"), h.csv_rows())

    pb = toom.peierls_series(toom.peierls_delta())
    put("peierls.csv", ("delta", "ratio", "series"), [(str(pb.delta), str(pb.ratio), str(pb))])

    L = args.L or 16
    steps = args.steps or 2000
    lmap = lattice.LatticeMap.from_params(params, k)
    series = {}
    sweep_rows = []
    for e in (0.01, 0.1, 0.19):
        for init in ("lambda_plus", "lambda_minus"):
            st = lattice.INITS[init](params, L, cfg.seed)
            r = lattice.simulate(st, e, lmap, steps)
            series[f"eps={e} {init}"] = r.magnetization
            sweep_rows.append((e, init, L, steps, r.time_average(), r.time_average(steps // 2),
                               r.error_rate()))
    put("sweep_summary.csv", ("eps", "init", "L", "steps", "mean_magnetization",
                              "mean_magnetization_last_half", "error_rate"), sweep_rows)

    err_rows = []
    for g, row in zip((Fraction(1, 100), Fraction(1, 1000), Fraction(1, 10**4)), rows):
        pg = map_core.validate_params(params.eta, params.delta, g)
        lm = lattice.LatticeMap.from_params(pg, row[2])
        st = lattice.init_lambda_plus(pg, L, cfg.seed)
        r = lattice.simulate(st, 0.19, lm, min(steps, 400))
        err_rows.append((str(g), row[2], r.error_rate()))
    put("error_scaling.csv", ("gamma", "k", "error_rate"), err_rows)

    if args.figures:
        from . import figures

        t = map_core.build_tilde_tau(params)
        xs = [float(x) for x in t.breakpoints]
        written.append(figures.plot_map(xs, [float(t(x)) for x in t.breakpoints], out / "tilde_tau.png",
                                        "piecewise-linear local map"))
        written.append(figures.plot_density([(float(a), float(b)) for a, b in h.cells],
                                            [float(v) for v in h.heights], out / "density.png"))
        written.append(figures.plot_magnetization(series, out / "magnetization.png"))
        rates = [max(r[2], 1e-12) for r in err_rows]
        written.append(figures.plot_loglog([float(Fraction(r[0])) for r in err_rows], rates,
                                           out / "error_scaling.png", "gamma", "error sites per site-step"))
    for w in written:
        print(w)
    return EXIT_OK


# -------------------------------------------------------------------- main


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.command == "peierls":
            return cmd_peierls(args)
        cfg = build_config(args)
        handler = {
            "map": cmd_map, "transfer": cmd_transfer, "certify": cmd_certify, "run": cmd_run,
            "pca": cmd_pca, "smooth": cmd_smooth, "report": cmd_report,
        }[args.command]
        return handler(args, cfg)
    except (ParseError, map_core.ParameterError, lattice.ConfigError, IoError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckFailed, AssertionError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
