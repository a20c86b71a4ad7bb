"""Command-line front end: ``sae analyze | select-gamma | simulate``.

Exit codes: 0 success, 1 I/O failure, 2 malformed input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from .estimator import SolverConfig
from .inference import GRID_PRESETS, GammaGrid, analyze, select_gamma
from .model import AreaDataset, NotConverged, ValidationError, validate_dataset
from .simulator import (SimScenario, SimReport, generate_replication, run_fixed_gamma_study,
                        run_monte_carlo)
from . import rng

log = logging.getLogger("robsae")

EXIT_OK, EXIT_IO, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
TABLE_S1_GAMMAS = (0.0, 0.1, 0.2, 0.3)


class InputError(Exception):
    pass


def fmt(x) -> str:
    """17 significant digits so that values round-trip exactly."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def read_area_csv(path: str) -> AreaDataset:
    """Parse ``area_id,y,D,x1,...,xp``; the intercept must be an explicit column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 4 or header[:3] != ["area_id", "y", "D"]:
        raise InputError(f"{path}: header must be area_id,y,D,x1,...,xp; got {','.join(header)}")
    ids, y, D, X = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
        vals = []
        for col, cell in zip(header[1:], row[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: row {lineno}, column {col}: not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: row {lineno}, column {col}: non-finite value {cell!r}")
            vals.append(v)
        ids.append(row[0])
        y.append(vals[0])
        D.append(vals[1])
        X.append(vals[2:])
    try:
        return validate_dataset(AreaDataset(np.array(y), np.array(D), np.array(X).reshape(len(y), -1),
                                            tuple(ids)))
    except ValidationError as exc:
        idx = getattr(exc, "index", None)
        where = f" (row {idx + 2})" if isinstance(idx, int) else ""
        raise InputError(f"{path}: {exc}{where}") from None


def write_area_csv(path: str, data: AreaDataset) -> None:
    header = ["area_id", "y", "D"] + [f"x{j + 1}" for j in range(data.p)]
    rows = [[a, data.y[i], data.D[i], *data.X[i]] for i, a in enumerate(data.area_id)]
    write_table(path, header, rows, "csv")


def write_table(path: str, header: Sequence[str], rows, fmt_kind: str) -> None:
    if fmt_kind == "json":
        records = [dict(zip(header, (_jsonable(v) for v in row))) for row in rows]
        with open(path, "w") as fh:
            json.dump(records, fh, indent=2)
            fh.write("\n")
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def parse_grid(spec: str, weights: str) -> GammaGrid:
    if spec in GRID_PRESETS:
        return GammaGrid.preset(spec, weights)
    try:
        values = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--grid must be a preset {sorted(GRID_PRESETS)} or a comma list") from None
    try:
        return GammaGrid(values, weights)
    except ValueError as exc:
        raise InputError(f"--grid: {exc}") from None


def read_config(path: Optional[str]) -> Dict[str, str]:
    """Flat ``key = value`` file; keys are flag names without dashes."""
    if not path:
        return {}
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key=value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _solver_args(p: argparse.ArgumentParser):
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--n-starts", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid", default="default", help="default | app | coarse | comma-separated list")
    p.add_argument("--weights", default="unit", choices=["unit", "inv-d"])
    p.add_argument("--out", default=".")
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="EB, GD and direct estimates for an area CSV")
    a.add_argument("--input", required=True)
    _solver_args(a)

    s = sub.add_parser("select-gamma", help="selection criterion over the gamma grid")
    s.add_argument("--input", required=True)
    _solver_args(s)

    m = sub.add_parser("simulate", help="Monte Carlo study of the simulation design")
    m.add_argument("--scenario", default="i", choices=["i", "ii", "iii", "iv", "v"])
    m.add_argument("--A", type=float, default=1.0, dest="A")
    m.add_argument("--m", type=int, default=100, dest="m")
    m.add_argument("--R", type=int, default=2000, dest="R")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--gamma", type=float, help="fixed-gamma mode (no selection)")
    m.add_argument("--threads", type=int, help="worker threads (default: SAE_THREADS or CPU count)")
    m.add_argument("--dump-data", type=int, default=0, metavar="N",
                   help="also write the first N simulated datasets as area CSVs")
    tables = m.add_mutually_exclusive_group()
    tables.add_argument("--table1", action="store_true", help="MSE and mean selected gamma")
    tables.add_argument("--table2", action="store_true", help="coverage and average length")
    tables.add_argument("--tableS1", action="store_true", help="fixed gamma in {0, 0.1, 0.2, 0.3}")
    _solver_args(m)
    return parser


def parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = read_config(args.config)
    if cfg:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            if k not in known:
                raise InputError(f"{args.config}: unknown key {k!r}")
            act = known[k]
            if act.const is True and act.nargs == 0:
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[k] = act.type(v) if act.type else v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if not 0 < args.alpha < 1:
        raise InputError("--alpha must lie in (0, 1)")
    return args


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(args.grad_tol, args.max_iter, args.n_starts)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _ext(args) -> str:
    return "json" if args.format == "json" else "csv"


def _selection_rows(sel):
    return [[g, c, bool(ok), k == sel.index]
            for k, (g, c, ok) in enumerate(zip(sel.grid.values, sel.criterion, sel.converged))]


def cmd_analyze(args) -> int:
    data = read_area_csv(args.input)
    grid = parse_grid(args.grid, args.weights.replace("-", "_"))
    res = analyze(data, grid, args.alpha, _config(args))
    os.makedirs(args.out, exist_ok=True)
    ext = _ext(args)
    header = ["area_id", "y", "D"]
    for m in ("EB", "GD", "DR"):
        header += [f"{m}_theta", f"{m}_s2", f"{m}_lower", f"{m}_upper"]
    header += ["GD_s2_floored", "gamma_op"]
    rows = []
    for i, aid in enumerate(data.area_id):
        row = [aid, data.y[i], data.D[i]]
        for mres in res.methods():
            row += [mres.theta[i], mres.s2[i], mres.lower[i], mres.upper[i]]
        row += [bool(res.gd.s2_floored[i]), res.selection.gamma_op]
        rows.append(row)
    write_table(os.path.join(args.out, f"areas.{ext}"), header, rows, args.format)
    write_table(os.path.join(args.out, f"selection.{ext}"),
                ["gamma", "criterion", "converged", "selected"], _selection_rows(res.selection), args.format)
    prow = []
    for name, fit in (("EB", res.eb_fit), ("GD", res.gd_fit)):
        scaled_len = float(np.mean((getattr(res, name.lower()).upper - getattr(res, name.lower()).lower)
                                   / np.sqrt(data.D)))
        prow.append([name, fit.gamma, *fit.params.beta, fit.params.A, scaled_len,
                     fit.converged, fit.a_floored])
    pheader = (["method", "gamma"] + [f"beta{j + 1}" for j in range(data.p)]
               + ["A", "scaled_avg_length", "converged", "a_floored"])
    write_table(os.path.join(args.out, f"params.{ext}"), pheader, prow, args.format)
    if not res.eb_fit.converged or not res.gd_fit.converged:
        log.error("selected fit did not converge")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_select_gamma(args) -> int:
    data = read_area_csv(args.input)
    grid = parse_grid(args.grid, args.weights.replace("-", "_"))
    sel = select_gamma(data, grid, _config(args))
    os.makedirs(args.out, exist_ok=True)
    write_table(os.path.join(args.out, f"selection.{_ext(args)}"),
                ["gamma", "criterion", "converged", "selected"], _selection_rows(sel), args.format)
    print(f"gamma_op={fmt(sel.gamma_op)}")
    return EXIT_OK


def _report_rows(reports: List[SimReport]):
    header = ["scenario", "A", "m", "R", "seed", "fixed_gamma", "method", "MSE", "CP", "AL",
              "gamma_mean", "gamma_median", "gamma_zero_fraction", "n_nonconverged", "n_redraws"]
    rows = []
    for rep in reports:
        sc = rep.scenario
        for name, ms in rep.methods.items():
            rows.append([sc["id"], sc["A"], sc["m"], rep.n_replications, sc["base_seed"],
                         "" if rep.fixed_gamma is None else rep.fixed_gamma, name, ms.mse, ms.cp, ms.al,
                         rep.gamma_mean, rep.gamma_median, rep.gamma_zero_fraction,
                         rep.n_nonconverged, rep.n_redraws])
    return header, rows


def cmd_simulate(args) -> int:
    if args.R < 1 or args.m < 1:
        raise InputError("--R and --m must be positive")
    try:
        scenario = SimScenario(args.scenario.upper(), args.A, args.m)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    grid = parse_grid(args.grid, args.weights.replace("-", "_"))
    config = _config(args)
    threads = args.threads
    os.makedirs(args.out, exist_ok=True)
    ext = _ext(args)
    for r in range(min(args.dump_data, args.R)):
        data, _, _ = generate_replication(scenario, rng.replication_seed(args.seed, r))
        write_area_csv(os.path.join(args.out, f"data_r{r:04d}.csv"), data)

    if args.tableS1 or args.gamma is not None:
        gammas = TABLE_S1_GAMMAS if args.tableS1 else (args.gamma,)
        reports = run_fixed_gamma_study(scenario, gammas, args.R, args.alpha, args.seed, config, threads)
    else:
        reports = [run_monte_carlo(scenario, args.R, grid, args.alpha, args.seed, config, threads)]

    header, rows = _report_rows(reports)
    write_table(os.path.join(args.out, f"report.{ext}"), header, rows, args.format)

    label = f"({args.scenario})"
    if args.table1:
        rep = reports[0]
        trows = [["GD", rep.methods["GD"].mse], ["(gamma_opt)", rep.gamma_mean],
                 ["EB", rep.methods["EB"].mse]]
        write_table(os.path.join(args.out, f"table1.{ext}"), ["method", label], trows, args.format)
    elif args.table2:
        rep = reports[0]
        trows = [["CP", k, rep.methods[k].cp] for k in ("EB", "GD", "DR")]
        trows += [["AL", k, rep.methods[k].al] for k in ("EB", "GD", "DR")]
        write_table(os.path.join(args.out, f"table2.{ext}"), ["metric", "method", label], trows, args.format)
    elif args.tableS1:
        hdr = ["A"] + [f"CP_{g:g}" for g in TABLE_S1_GAMMAS] + [f"AL_{g:g}" for g in TABLE_S1_GAMMAS]
        trow = [args.A] + [r.methods["GD"].cp for r in reports] + [r.methods["GD"].al for r in reports]
        write_table(os.path.join(args.out, f"tableS1.{ext}"), hdr, [trow], args.format)
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "select-gamma": cmd_select_gamma, "simulate": cmd_simulate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except InputError as exc:
        print(f"sae: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"sae: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"sae: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NotConverged as exc:
        print(f"sae: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"sae: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
