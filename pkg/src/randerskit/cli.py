"""Command-line front end: ``randerskit COMMAND --scenario FILE [options]``.

Exit status: 0 on success, 2 when a convexity certificate fails or is
missing (results are still written, labelled HEURISTIC), 1 on hard errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .convexity import certificate_for
from .errors import CertificateMissing, ConfigError, DomainExit, RandersError
from .geodesic import GeodesicState, integrate, speed_drift
from .scenario import Scenario, load, packaged_scenarios
from .shooting import energy_bound, enumerate_geodesics, finiteness_report
from .spacetime import count_lightlike_images, count_timelike
from .variation import conjugate_points

COMMANDS = ("geodesic", "enumerate", "distance", "certify", "finiteness", "lens", "timelike", "selftest")
EXIT_OK, EXIT_ERROR, EXIT_CERTIFICATE = 0, 1, 2


def _clean(obj):
    """JSON-ready copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _write(out: Path, name: str, payload) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(dumps(payload))
    return path


def _write_csv(out: Path, name: str, header, rows) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _plot_rows(enum, dim, out, fmt, name="trajectories"):
    header = ["solution", "s"] + [f"x{i + 1}" for i in range(dim)]
    rows = enum.trajectory_rows()
    if fmt == "csv":
        return _write_csv(out, name + ".csv", header, rows)
    return _write(out, name + ".json", {"columns": header, "rows": rows})


def _endpoints(scen: Scenario):
    e = scen.require("endpoints")
    return np.asarray(e["p"], dtype=float), np.asarray(e["q"], dtype=float)


def _emax(scen: Scenario, args):
    return args.emax if args.emax is not None else scen.data.get("emax")


def _header(scen: Scenario, command: str, args):
    return {"scenario": scen.name, "command": command, "version": __version__,
            "seed": scen.sampling()["seed"], "workers_independent": True}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_geodesic(scen: Scenario, args, out: Path):
    R = scen.structure()
    g = scen.require("geodesic")
    tol = args.tol or scen.tolerances()["integrator"]
    state = GeodesicState(g["x"], g["y"], g.get("convention", "randers"))
    status = "ok"
    try:
        traj = integrate(R, state, float(g["S"]), tol, jacobi=True)
    except DomainExit as exc:
        if exc.partial is None:
            raise
        traj, status = exc.partial, f"domain_exit at s={exc.s_exit!r}"
    report = _header(scen, "geodesic", args)
    report.update({
        "status": status,
        "convention": traj.convention,
        "S": traj.S,
        "endpoint": traj.endpoint,
        "endpoint_wrapped": R.chart.wrap(traj.endpoint),
        "end_velocity": traj.end_velocity,
        "randers_length": traj.randers_length,
        "speed_drift": speed_drift(R, traj),
        "steps": len(traj.s) - 1,
        "conjugacy": conjugate_points(traj).to_dict(),
    })
    _write(out, "geodesic.json", report)
    if args.format == "csv":
        (out / "trajectory.csv").write_text(traj.to_csv(R))
    else:
        (out / "trajectory.json").write_text(traj.to_json(R) + "\n")
    print(f"geodesic: endpoint {np.round(traj.endpoint, 10).tolist()}, length {traj.randers_length:.12g}")
    return EXIT_OK


def _resolve_cap(scen, args):
    """Energy cap from --emax / scenario, else from a certified energy bound."""
    emax = _emax(scen, args)
    if emax is not None:
        return float(emax), "user", None
    f = scen.convex_function()
    if f is None:
        raise ConfigError("no energy cap: give 'emax' in the scenario, --emax, or a convex_function")
    p, q = _endpoints(scen)
    s = scen.sampling()
    bound = energy_bound(scen.structure(), f, p, q, seed=s["seed"], samples=s["certificate_samples"],
                         region=scen.region())
    return bound.E_max, "certified", bound


def cmd_enumerate(scen: Scenario, args, out: Path):
    R = scen.structure()
    p, q = _endpoints(scen)
    E_max, source, bound = _resolve_cap(scen, args)
    enum = enumerate_geodesics(R, p, q, E_max, scen.shooting_config(args.tol), workers=args.workers,
                               complete=bound is not None)
    report = _header(scen, "enumerate", args)
    report.update(enum.to_dict())
    report["energy_cap_source"] = source
    report["energy_bound"] = bound.to_dict() if bound else None
    _write(out, "enumerate.json", report)
    _plot_rows(enum, R.dim, out, args.format)
    print(f"enumerate: {enum.count} geodesic(s), lengths {[round(x, 10) for x in enum.lengths]}")
    return EXIT_OK


def cmd_distance(scen: Scenario, args, out: Path):
    R = scen.structure()
    p, q = _endpoints(scen)
    E_max, source, _ = _resolve_cap(scen, args)
    enum = enumerate_geodesics(R, p, q, E_max, scen.shooting_config(args.tol), workers=args.workers)
    report = _header(scen, "distance", args)
    report.update({"p": p, "q": q, "energy_cap": E_max, "energy_cap_source": source, "count": enum.count})
    if not enum.solutions:
        report["distance"] = None
        _write(out, "distance.json", report)
        raise RandersError(f"no geodesic from {p.tolist()} to {q.tolist()} below energy {E_max}")
    best = min(enum.solutions, key=lambda s: s.randers_length)
    report.update({"distance": best.randers_length, "v": best.v})
    _write(out, "distance.json", report)
    print(f"distance: {best.randers_length:.12g}")
    return EXIT_OK


def cmd_certify(scen: Scenario, args, out: Path):
    R = scen.structure()
    f = scen.convex_function()
    if f is None:
        raise ConfigError("certify needs a 'convex_function'")
    region = scen.region()
    level = None
    if region is None:
        if "endpoints" not in scen.data:
            raise ConfigError("certify needs a 'region' or 'endpoints' to derive one")
        from .shooting import sublevel_box
        p, q = _endpoints(scen)
        level = max(float(f(p)), float(f(q)))
        region = sublevel_box(R, f, p, q, level)
    s = scen.sampling()
    cert = certificate_for(R, f, region, seed=s["seed"], samples=s["certificate_samples"], level=level)
    report = _header(scen, "certify", args)
    report["certificate"] = cert.to_dict()
    _write(out, "certificate.json", report)
    print(f"certify ({cert.kind}): {'pass' if cert.passed else 'FAIL'}, margin {cert.margin:.6g}")
    return EXIT_OK if cert.passed else EXIT_CERTIFICATE


def _finiteness_exit(certificate):
    """Exit 2 when no passing convexity certificate backs the count."""
    return EXIT_OK if certificate is not None and certificate.passed else EXIT_CERTIFICATE


def cmd_finiteness(scen: Scenario, args, out: Path):
    R = scen.structure()
    p, q = _endpoints(scen)
    s = scen.sampling()
    rep = finiteness_report(R, scen.convex_function(), p, q, emax=_emax(scen, args),
                            config=scen.shooting_config(args.tol), workers=args.workers, seed=s["seed"],
                            samples=s["certificate_samples"], region=scen.region())
    report = _header(scen, "finiteness", args)
    report.update(rep.to_dict())
    _write(out, "finiteness.json", report)
    _plot_rows(rep.enumeration, R.dim, out, args.format)
    print(f"finiteness: {rep.count} geodesic(s), label {rep.label}")
    return _finiteness_exit(rep.certificate)


def cmd_lens(scen: Scenario, args, out: Path):
    sp = scen.spacetime()
    o = scen.require("observer")
    s = scen.sampling()
    rep = count_lightlike_images(sp, o["x0"], float(o.get("t0", 0.0)), o["x1"], scen.convex_function(),
                                 emax=_emax(scen, args), config=scen.shooting_config(args.tol),
                                 workers=args.workers, seed=s["seed"])
    report = _header(scen, "lens", args)
    report.update(rep.to_dict())
    _write(out, "lens.json", report)
    _plot_rows(rep.finiteness.enumeration, sp.chart.dim, out, args.format)
    print(f"lens: {rep.count} image(s), arrival times {[round(t, 10) for t in rep.arrival_times]}, "
          f"label {rep.label}")
    return _finiteness_exit(rep.finiteness.certificate)


def cmd_timelike(scen: Scenario, args, out: Path):
    sp = scen.spacetime()
    o = scen.require("observer")
    if "T" not in o:
        raise ConfigError("observer.T (proper time) is required for 'timelike'")
    s = scen.sampling()
    rep = count_timelike(sp, o["x0"], float(o.get("t0", 0.0)), o["x1"], float(o["T"]), scen.convex_function(),
                         emax=_emax(scen, args), config=scen.shooting_config(args.tol), workers=args.workers,
                         seed=s["seed"])
    report = _header(scen, "timelike", args)
    report.update(rep.to_dict())
    _write(out, "timelike.json", report)
    _plot_rows(rep.finiteness.enumeration, sp.chart.dim + 1, out, args.format)
    print(f"timelike: {rep.count} geodesic(s), arrival times {[round(t, 10) for t in rep.arrival_times]}, "
          f"label {rep.label}")
    return _finiteness_exit(rep.finiteness.certificate)


def cmd_selftest(args, out: Path | None):
    from .selftest import run_selftest
    rows = run_selftest()
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    if out is not None:
        _write(out, "selftest.json", {"results": [{"name": n, "pass": ok, "detail": d} for n, ok, d in rows]})
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_ERROR


HANDLERS = {"geodesic": cmd_geodesic, "enumerate": cmd_enumerate, "distance": cmd_distance,
            "certify": cmd_certify, "finiteness": cmd_finiteness, "lens": cmd_lens, "timelike": cmd_timelike}


def build_parser():
    ap = argparse.ArgumentParser(prog="randerskit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"randerskit {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", help="scenario JSON file or packaged scenario name "
                                       f"({', '.join(packaged_scenarios())})")
    ap.add_argument("--out", default=".", help="output directory (default: current directory)")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for shooting (default 1)")
    ap.add_argument("--tol", type=float, default=None, help="integrator tolerance (overrides the scenario)")
    ap.add_argument("--seed", type=int, default=None, help="sampler seed (overrides the scenario)")
    ap.add_argument("--emax", type=float, default=None, help="energy cap override")
    ap.add_argument("--format", choices=("json", "csv"), default="csv",
                    help="format of trajectory/plot data (reports are always JSON)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.tol is not None and not args.tol > 0:
            raise ConfigError("--tol must be > 0")
        if args.emax is not None and not args.emax > 0:
            raise ConfigError("--emax must be > 0")
        if args.command == "selftest":
            return cmd_selftest(args, out if args.out != "." else None)
        if not args.scenario:
            raise ConfigError(f"'{args.command}' needs --scenario")
        scen = load(args.scenario)
        if args.seed is not None:
            scen.data.setdefault("sampling", {})["seed"] = args.seed
        return HANDLERS[args.command](scen, args, out)
    except CertificateMissing as exc:
        print(f"randerskit: certificate: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except (RandersError, ValueError) as exc:
        print(f"randerskit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
