"""Command-line interface.

Subcommands
-----------
validate     check a model file and report derived quantities
analyze      extremal paths, curvatures, prefactors, and atoms
pde          solve the parameter-distribution system, emit CSV + sidecar
asymptotics  exceedance approximation constants and a p(N) table
simulate     one rare-event estimate (naive / is / combined)
sweep        estimates across a range of N, CSV in scaled form
dist         empirical distribution of the parameter, CSV
capacity     smallest level with estimate below a target

All stochastic commands honor ``--seed`` (bit-reproducible) and
``--threads`` (or the MMISQ_THREADS variable); results go to stdout or
``--out``.  Exit codes: 0 success, 2 rejected input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .asymptotics import exact_asymptotic, rate
from .errors import MmisqError
from .functionals import (
    atom_catalog,
    boundary_prefactors,
    extremal_info_from_dict,
    extremal_path,
)
from .errors import DZeroError, NotRegularError, UnsupportedDegeneracyError
from .model import Variant, initial_weights, load_model, stationary
from .montecarlo import (
    ISConfig,
    RngStream,
    capacity_search,
    combined_estimator,
    default_is_config,
    is_estimator,
    naive_estimator,
    parameter_values,
    sample_path_batch,
)
from .pde import Grid, default_grid, solve_model1, solve_model2

SCHEMA_VERSION = 1


def _parse_n_range(text):
    """Parse 'start:stop:step' (inclusive) or a comma list of N values."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("N range must be start:stop:step")
        start, stop, step = (int(p) for p in parts)
        if step <= 0 or stop < start:
            raise ValueError("bad N range")
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",") if p]


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _emit_json(doc, out_path):
    doc = {"schema_version": SCHEMA_VERSION, **doc}
    _emit(json.dumps(doc, indent=2), out_path)


def _analysis_doc(model, t, a=None):
    info_max = extremal_path(model, t, "max")
    info_min = extremal_path(model, t, "min")
    doc = {
        "t": t,
        "variant": model.variant.value,
        "max": info_max.to_dict(),
        "min": info_min.to_dict(),
        "D": int(info_max.D),
        "switch_epochs": [float(s) for s in info_max.switch_epochs],
        "states": [int(s) + 1 for s in info_max.states],
        "bound": float(info_max.bound),
        "omegas": None if info_max.omegas is None
        else [float(w) for w in info_max.omegas],
        "kappa_bar": None,
        "kappa_hat": None,
        "kappa_error": None,
        "atoms": atom_catalog(model, t).to_dicts(),
    }
    if model.variant is Variant.II and info_max.D >= 1:
        try:
            pref = boundary_prefactors(info_max, model, initial_weights(model))
            doc["kappa_bar"] = pref.kappa_bar
            doc["kappa_hat"] = pref.kappa_hat
        except (NotRegularError, UnsupportedDegeneracyError) as exc:
            doc["kappa_error"] = exc.code
    if a is not None:
        rp = rate(a, info_max.bound)
        doc["rate"] = {"a": a, "alpha": info_max.bound, "I": rp.I,
                       "theta": rp.theta, "xi": rp.xi}
    return doc


def _load_precomputed(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return extremal_info_from_dict(doc["max"])


def _add_common(p, model=True, seed=True):
    if model:
        p.add_argument("--model", required=True, help="model JSON file")
    if seed:
        p.add_argument("--seed", type=int, default=1, help="base RNG seed")
        p.add_argument("--threads", type=int,
                       default=int(os.environ.get("MMISQ_THREADS", "1")),
                       help="worker cap for sampling shards")
    p.add_argument("--out", help="write output to this file instead of stdout")


def build_parser():
    root = argparse.ArgumentParser(
        prog="mmisq",
        description="Markov-modulated infinite-server queue toolkit")
    root.add_argument("--version", action="version", version=__version__)
    sub = root.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file")
    _add_common(p, seed=False)

    p = sub.add_parser("analyze", help="extremal paths, prefactors, atoms")
    _add_common(p, seed=False)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--a", type=float, help="also report the rate at level a")

    p = sub.add_parser("pde", help="parameter-distribution grid solve")
    _add_common(p, seed=False)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--na", type=int, default=2048)
    p.add_argument("--nt", type=int)
    p.add_argument("--scheme", choices=["upwind", "characteristic"],
                   default="upwind")
    p.add_argument("--i0", type=int, default=1,
                   help="1-based start state (variant I)")
    p.add_argument("--slices", type=int, default=33,
                   help="stored time slices in the CSV")
    p.add_argument("--sidecar", help="atoms/grid metadata JSON path")

    p = sub.add_parser("asymptotics", help="exceedance approximation")
    _add_common(p, seed=False)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--N", default="20:300:20", help="start:stop:step or list")
    p.add_argument("--precomputed", help="analysis JSON to reuse")

    p = sub.add_parser("simulate", help="one rare-event estimate")
    _add_common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--N", type=float, required=True)
    p.add_argument("--runs", type=int, default=1 << 17)
    p.add_argument("--method", choices=["naive", "is", "combined"],
                   default="is")
    p.add_argument("--delta", type=float, help="tube half-width override")
    p.add_argument("--precomputed", help="analysis JSON to reuse")

    p = sub.add_parser("sweep", help="estimates across N, scaled CSV")
    _add_common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--N", default="20:300:20")
    p.add_argument("--runs", type=int, default=1 << 16)
    p.add_argument("--method", choices=["naive", "is", "combined"],
                   default="is")
    p.add_argument("--delta", type=float)
    p.add_argument("--precomputed", help="analysis JSON to reuse")

    p = sub.add_parser("dist", help="empirical parameter distribution CSV")
    _add_common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--samples", type=int, default=1 << 20)
    p.add_argument("--points", type=int, default=2001)

    p = sub.add_parser("capacity", help="smallest level below epsilon")
    _add_common(p)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--N", type=float, required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--method", choices=["is", "naive", "asymptotic"],
                   default="is")
    p.add_argument("--runs", type=int, default=1 << 16)
    p.add_argument("--a-hi", type=float, dest="a_hi")
    return root


def _cmd_validate(args):
    model = load_model(args.model)
    pi = stationary(model)
    doc = {
        "valid": True,
        "d": model.d,
        "variant": model.variant.value,
        "exit_rates": [float(x) for x in model.q],
        "stationary": [float(x) for x in pi.pi],
        "duplicate_groups": [[i + 1 for i in g] for g in model.duplicate_groups],
    }
    _emit_json(doc, args.out)
    return 0


def _cmd_analyze(args):
    model = load_model(args.model)
    _emit_json(_analysis_doc(model, args.t, a=args.a), args.out)
    return 0


def _cmd_pde(args):
    model = load_model(args.model)
    grid = default_grid(model, args.t, n_a=args.na)
    if args.nt:
        grid = Grid(a_min=grid.a_min, a_max=grid.a_max, n_a=grid.n_a,
                    t_end=grid.t_end, n_t=args.nt)
    if model.variant is Variant.I:
        sol = solve_model1(model, args.i0 - 1, grid, max_slices=args.slices,
                           scheme=args.scheme)
    else:
        sol = solve_model2(model, grid, max_slices=args.slices,
                           scheme=args.scheme)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["t", "a", "state", "value"])
    for k, tk in enumerate(sol.times):
        for i in range(model.d):
            for j, aj in enumerate(sol.a):
                writer.writerow([f"{tk:.9g}", f"{aj:.9g}", i + 1,
                                 f"{sol.values[i, k, j]:.9g}"])
    _emit(buf.getvalue(), args.out)
    sidecar = args.sidecar or ((args.out + ".json") if args.out else None)
    meta = {
        "t_end": sol.t_end,
        "scheme": sol.scheme,
        "n_a": grid.n_a,
        "n_t": sol.n_t,
        "a_min": grid.a_min,
        "a_max": grid.a_max,
        "interpretation": sol.interpretation,
        "atoms": sol.atoms.to_dicts(),
    }
    if sidecar:
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump({"schema_version": SCHEMA_VERSION, **meta}, fh, indent=2)
    else:
        sys.stdout.write(json.dumps({"schema_version": SCHEMA_VERSION, **meta},
                                    indent=2) + "\n")
    return 0


def _cmd_asymptotics(args):
    model = load_model(args.model)
    Ns = _parse_n_range(args.N)
    res = exact_asymptotic(model, args.t, args.a, N_values=Ns)
    doc = res.to_dict()
    if args.precomputed:
        info = _load_precomputed(args.precomputed)
        doc["precomputed_bound"] = info.bound
    _emit_json(doc, args.out)
    return 0


def _make_cfg(args, info):
    if args.delta is not None:
        return ISConfig(delta=args.delta, m1=args.runs, m2=args.runs)
    cfg = default_is_config(info, m1=args.runs, m2=args.runs)
    return cfg


def _cmd_simulate(args):
    model = load_model(args.model)
    rng = RngStream(seed=args.seed)
    info = _load_precomputed(args.precomputed) if args.precomputed \
        else extremal_path(model, args.t, "max")
    started = time.perf_counter()
    if args.method == "naive":
        est = naive_estimator(model, args.N, args.a, args.t, args.runs, rng,
                              threads=args.threads)
    elif args.method == "is":
        est = is_estimator(model, args.N, args.a, args.t, _make_cfg(args, info),
                           rng, threads=args.threads, info=info)
    else:
        est = combined_estimator(model, args.N, args.a, args.t,
                                 _make_cfg(args, info), rng,
                                 threads=args.threads, info=info)
    doc = {
        "estimate": est.mean,
        "ci95": est.half_width_95,
        "n": est.n_samples,
        "second_moment": est.second_moment,
        "seconds": time.perf_counter() - started,
        "method": args.method,
        "N": args.N,
        "a": args.a,
        "t": args.t,
        "seed": args.seed,
    }
    _emit_json(doc, args.out)
    return 0


def _cmd_sweep(args):
    model = load_model(args.model)
    Ns = _parse_n_range(args.N)
    info = _load_precomputed(args.precomputed) if args.precomputed \
        else extremal_path(model, args.t, "max")
    rp = rate(args.a, info.bound)
    power = (info.D + 1) / 2.0
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["N", "estimate", "ci95", "scaled"])
    for j, N in enumerate(Ns):
        rng = RngStream(seed=args.seed, stream=j)
        if args.method == "naive":
            est = naive_estimator(model, N, args.a, args.t, args.runs, rng,
                                  threads=args.threads)
        elif args.method == "is":
            try:
                est = is_estimator(model, N, args.a, args.t,
                                   _make_cfg(args, info), rng,
                                   threads=args.threads, info=info)
            except DZeroError:
                est = naive_estimator(model, N, args.a, args.t, args.runs, rng,
                                      threads=args.threads)
        else:
            est = combined_estimator(model, N, args.a, args.t,
                                     _make_cfg(args, info), rng,
                                     threads=args.threads, info=info)
        scaled = N ** power * math.exp(N * rp.I) * est.mean
        writer.writerow([N, f"{est.mean:.9g}", f"{est.half_width_95:.3g}",
                         f"{scaled:.6g}"])
    _emit(buf.getvalue(), args.out)
    return 0


def _cmd_dist(args):
    model = load_model(args.model)
    gen = RngStream(seed=args.seed).generator(0)
    values = []
    remaining = args.samples
    while remaining > 0:
        n = min(remaining, 1 << 19)
        batch = sample_path_batch(model, args.t, n, gen)
        values.append(parameter_values(model, batch))
        remaining -= n
    values = np.sort(np.concatenate(values))
    agrid = np.linspace(values[0], values[-1], args.points)
    cdf = np.searchsorted(values, agrid, side="right") / values.shape[0]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["a", "cdf"])
    for aj, cj in zip(agrid, cdf):
        writer.writerow([f"{aj:.9g}", f"{cj:.9g}"])
    _emit(buf.getvalue(), args.out)
    return 0


def _cmd_capacity(args):
    model = load_model(args.model)
    res = capacity_search(model, args.N, args.epsilon, args.t,
                          RngStream(seed=args.seed), method=args.method,
                          a_hi=args.a_hi, runs=args.runs,
                          threads=args.threads)
    doc = {
        "a": res.a,
        "servers": res.servers,
        "epsilon": res.epsilon,
        "N": args.N,
        "t": args.t,
        "method": args.method,
        "evaluations": [{"servers": k, "estimate": p, "ci95": hw}
                        for k, p, hw in res.evaluations],
    }
    _emit_json(doc, args.out)
    return 0


_HANDLERS = {
    "validate": _cmd_validate,
    "analyze": _cmd_analyze,
    "pde": _cmd_pde,
    "asymptotics": _cmd_asymptotics,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "dist": _cmd_dist,
    "capacity": _cmd_capacity,
}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except MmisqError as exc:
        sys.stderr.write(json.dumps(
            {"error": exc.code, "message": str(exc)}) + "\n")
        return exc.exit_code
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2


def main():  # console entry point
    raise SystemExit(run())
