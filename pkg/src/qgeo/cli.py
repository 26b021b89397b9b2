"""qgeo command line: solve-qlc, check, geodesic, sweep.

Exit codes: 0 success, 1 residual check failed, 2 no solution, 3 blowup,
64 usage or malformed input.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import cayley as cy
from . import lattice as lz
from .connection import (Connection, ConnectionCoeffs, GraphMetric, build_connection,
                         hermiticity_defects, qlc_residual, square_metric_condition)
from .connection import format_key
from .geodesic import Blowup, RealityLoss, evolve, reality_defect, write_rows
from .graph import TOL, DirectedGraph, GraphError
from .star import phase_scan_defect, solve_star, solve_star2_family

EXIT_OK, EXIT_FAIL, EXIT_NO_SOLUTION, EXIT_BLOWUP, EXIT_USAGE = 0, 1, 2, 3, 64
FORCE_MODES = ("generated", "zero")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- json helpers --------------------------------------------------------------

def cnum(z):
    z = complex(z)
    return [z.real, z.imag]


def cvec(a):
    return [cnum(z) for z in np.asarray(a, dtype=complex).ravel()]


def parse_cvec(data, n=None, what="vector"):
    """Accept [re, im] pairs or plain reals."""
    try:
        out = np.array([complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
                        for v in data])
    except (TypeError, ValueError, IndexError):
        raise UsageError(f"{what}: expected a list of numbers or [re, im] pairs") from None
    if n is not None and len(out) != n:
        raise UsageError(f"{what}: expected {n} entries, got {len(out)}")
    return out


def load_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serialisable: {type(v).__name__}")


# -- run configuration ----------------------------------------------------------------

@dataclass
class RunConfig:
    scenario: str | None = None
    params: dict = field(default_factory=dict)
    inline: dict | None = None
    ds: float = 1e-3
    steps: int = 1000
    cap: float = 1e6
    tol: float = 1e-8
    force_mode: str = "generated"
    allow_complex: bool = False
    path: str = "real"
    record_every: int = 1
    seed: int = 0

    KNOWN = {"scenario", "ds", "steps", "cap", "tol", "force_mode", "allow_complex", "path",
             "record_every", "seed", "graph", "metric", "coeffs", "connection", "mu", "X0", "psi0"}

    def validate(self):
        if not (isinstance(self.ds, (int, float)) and self.ds > 0 and math.isfinite(self.ds)):
            raise UsageError("ds: must be a positive number")
        if not isinstance(self.steps, int) or self.steps < 1:
            raise UsageError("steps: must be an integer >= 1")
        if not self.tol > 0:
            raise UsageError("tol: must be positive")
        if not self.cap > 0:
            raise UsageError("cap: must be positive")
        if self.force_mode not in FORCE_MODES:
            raise UsageError(f"force_mode: must be one of {FORCE_MODES}")
        if self.path not in ("real", "complex"):
            raise UsageError("path: must be 'real' or 'complex'")
        if not isinstance(self.record_every, int) or self.record_every < 1:
            raise UsageError("record_every: must be an integer >= 1")
        if self.scenario is None and self.inline is None:
            raise UsageError("config needs a 'scenario' or an inline 'graph'/'connection'")
        return self

    @classmethod
    def from_dict(cls, data: dict):
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        data = dict(data)
        kw = {k: data.pop(k) for k in ("ds", "steps", "cap", "tol", "force_mode", "allow_complex",
                                       "path", "record_every", "seed") if k in data}
        name = data.pop("scenario", None)
        inline = None
        if name is None:
            inline = data
            params = {}
        elif name == "star4":
            params = data
        elif name in lz.SCENARIO_DEFAULTS:
            unknown = set(data) - set(lz.SCENARIO_DEFAULTS[name])
            if unknown:
                raise UsageError(f"unknown field(s) for scenario {name}: {sorted(unknown)}")
            params = data
        else:
            raise UsageError(f"scenario: unknown name {name!r}")
        return cls(scenario=name, params=params, inline=inline, **kw).validate()

    def to_dict(self):
        out = asdict(self)
        out.pop("inline")
        if self.inline is not None:
            out["inline"] = self.inline
        return out


def _star4_setup(params, rng):
    sols = solve_star(4, params.get("legs"))
    conn = sols[0].connection
    g = conn.graph
    mu = np.asarray(params.get("mu", np.ones(5)), dtype=float)
    X = np.zeros(g.n_arrows, dtype=complex)
    X[g.index[(1, 0)]] = 1.0
    X[g.index[(0, 1)]] = -mu[1] / mu[0]
    psi = np.zeros(5, dtype=complex)
    psi[int(params.get("psi_vertex", 1))] = 1.0 / math.sqrt(mu[int(params.get("psi_vertex", 1))])
    return conn, mu, X, psi


def _inline_setup(data, rng):
    try:
        if "connection" in data:
            conn = Connection.from_json(data["connection"])
        else:
            graph = DirectedGraph.from_json(data["graph"])
            metric = GraphMetric.from_dict(graph, data["metric"])
            conn = build_connection(metric, ConnectionCoeffs.from_json(data.get("coeffs", {})))
    except KeyError as exc:
        raise UsageError(f"inline config missing field {exc.args[0]!r}") from None
    except (GraphError, ValueError) as exc:
        raise UsageError(f"inline config: {exc}") from None
    g = conn.graph
    mu = np.asarray(data.get("mu", np.ones(g.n)), dtype=float)
    if mu.shape != (g.n,):
        raise UsageError(f"mu: expected {g.n} entries")
    X0 = data.get("X0", {"random": 1.0})
    if isinstance(X0, dict) and "random" in X0:
        X = float(X0["random"]) * (rng.normal(size=g.n_arrows) + 1j * rng.normal(size=g.n_arrows))
        X = 0.5 * (X - (mu[g.dst] / mu[g.src]) * np.conj(X[g.reverse]))
    else:
        X = parse_cvec(X0, g.n_arrows, "X0")
    psi0 = data.get("psi0")
    if psi0 is None:
        psi = rng.normal(size=g.n) + 1j * rng.normal(size=g.n)
    else:
        psi = parse_cvec(psi0, g.n, "psi0")
    psi = psi / math.sqrt(np.sum(mu * np.abs(psi) ** 2))
    return conn, mu, X, psi


def run_geodesic(cfg: RunConfig, out: Path) -> dict:
    """Run one configuration into ``out``; returns the summary (also written)."""
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    summary = {"config": cfg.to_dict(), "seed": cfg.seed, "status": "ok"}
    csv_path = out / "trajectory.csv"

    if cfg.scenario in lz.SCENARIO_DEFAULTS:
        try:
            scn = lz.scenario(cfg.scenario, **cfg.params)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"scenario parameters: {exc}") from None
        run = lz.evolve_lattice(scn, cfg.ds, cfg.steps, cfg.path, cfg.record_every)
        with open(csv_path, "w", newline="") as fh:
            write_rows(fh, run.header(scn.metric.N), run.rows())
        summary.update(run.summary())
        summary["scenario_params"] = scn.params
        dump(summary, out / "summary.json")
        return summary

    if cfg.scenario == "star4":
        conn, mu, X, psi = _star4_setup(cfg.params, rng)
    else:
        conn, mu, X, psi = _inline_setup(cfg.inline, rng)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            traj = evolve(conn, mu, (X, psi), cfg.ds, cfg.steps, cfg.force_mode, cap=cfg.cap,
                          tol=cfg.tol, allow_complex=cfg.allow_complex,
                          record_every=cfg.record_every)
        if caught:
            summary["warnings"] = [str(w.message) for w in caught]
    except Blowup as exc:
        traj = exc.trajectory
        summary.update(status="blowup", s_last=exc.s_last, s_cross=exc.s_cross)
    except RealityLoss as exc:
        summary.update(status="reality_loss", s=exc.s, defect=exc.defect)
        if exc.trajectory is None:
            dump(summary, out / "summary.json")
            return summary
        traj = exc.trajectory
    traj.write_csv(csv_path)
    s, _, _, mass, rd = traj.arrays()
    summary.update(s_final=float(s[-1]), mass_drift=float(np.max(np.abs(mass - mass[0]))),
                   max_reality_defect=float(np.max(rd)), complexified=traj.complexified,
                   records=len(s))
    dump(summary, out / "summary.json")
    return summary


def _status_code(summary):
    return {"ok": EXIT_OK, "blowup": EXIT_BLOWUP, "reality_loss": EXIT_FAIL}[summary["status"]]


# -- commands -----------------------------------------------------------------------

def _residual_dict(r):
    return {"metric": r.metric, "torsion": r.torsion, "star": r.star}


def cmd_solve_qlc(args) -> int:
    if args.star is not None:
        n = args.star
        legs = None
        if args.legs:
            try:
                legs = [float(v) for v in args.legs.split(",")]
            except ValueError:
                raise UsageError("--legs: expected comma separated numbers") from None
        try:
            if args.phase is not None:
                if n != 2:
                    raise UsageError("--phase only applies to the 2-star family")
                sols = [solve_star2_family(complex(math.cos(args.phase), math.sin(args.phase)), legs)]
            else:
                sols = solve_star(n, legs)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        report = {"star": n, "solutions": []}
        for sol in sols:
            r = sol.residuals()
            report["solutions"].append({
                "kind": sol.kind, "phases": [cnum(z) for z in sol.s],
                "residuals": _residual_dict(r), "ratio_defect": sol.ratio_defect(),
                "connection": sol.connection.to_json()})
        if not sols:
            report["status"] = "no solution"
            report["min_phase_scan_defect"] = phase_scan_defect(n)
        dump(report, args.out_file)
        return EXIT_OK if sols else EXIT_NO_SOLUTION

    data = load_json(args.lattice)
    try:
        m = lz.LatticeMetric.from_json(data)
        G = lz.lattice_group(m.N)
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"{args.lattice}: {exc}") from None
    Xi = lz.qlc_z(m)
    gpm = m.g_pm()
    conn = cy.to_graph_connection(G, Xi, gpm)
    report = {"lattice": m.to_json(), "group": G.to_json(),
              "Xi": Xi.tolist(), "generators": list(G.generators),
              "residuals": {"hermitian": cy.hermitian_check_cayley(G, cy.h_from_g(G, gpm), Xi),
                            "star_compat": cy.star_compat_cayley(G, Xi),
                            "torsion": cy.torsion_check_cayley(G, Xi)},
              "graph_residuals": _residual_dict(qlc_residual(conn)),
              "connection": conn.to_json()}
    dump(report, args.out_file)
    return EXIT_OK


def _check_connection(data, tol):
    try:
        graph = DirectedGraph.from_json(data["graph"])
        metric = GraphMetric.from_dict(graph, data["metric"])
        coeffs = ConnectionCoeffs.from_json(data.get("coeffs", {}))
    except KeyError as exc:
        raise UsageError(f"connection missing field {exc.args[0]!r}") from None
    except (GraphError, ValueError, TypeError) as exc:
        raise UsageError(f"connection: {exc}") from None
    defects = sorted(hermiticity_defects(metric, coeffs), key=lambda kd: -kd[1])
    flagged = [{"key": format_key(k), "defect": d} for k, d in defects if d > tol]
    squares = square_metric_condition(metric, tol)
    report = {"hermitian": {"max": defects[0][1] if defects else 0.0, "flagged": flagged},
              "square_condition": [list(map(int, s)) for s in squares]}
    res = qlc_residual(Connection(metric, coeffs))
    report["residuals"] = _residual_dict(res)
    ok = not flagged and res.ok(tol)
    report["ok"] = ok
    return report, ok


def _check_cayley(data, tol):
    try:
        G = cy.GroupSpec.from_json(data["group"])
        Xi = np.array(data["Xi"], dtype=complex)
        g = np.array(data["g"], dtype=float)
    except KeyError as exc:
        raise UsageError(f"cayley data missing field {exc.args[0]!r}") from None
    except (ValueError, TypeError) as exc:
        raise UsageError(f"cayley data: {exc}") from None
    viol = cy.support_violations(G, Xi, tol)
    report = {"support_violations": [list(v) for v in viol]}
    if not viol:
        report.update(hermitian=cy.hermitian_check_cayley(G, cy.h_from_g(G, g), Xi),
                      star_compat=cy.star_compat_cayley(G, Xi),
                      torsion=cy.torsion_check_cayley(G, Xi))
    ok = not viol and max(report["hermitian"], report["star_compat"], report["torsion"]) < tol
    report["ok"] = ok
    return report, ok


def cmd_check(args) -> int:
    data = load_json(args.file)
    if not isinstance(data, dict):
        raise UsageError(f"{args.file}: expected a JSON object")
    tol = args.tol if args.tol is not None else TOL
    items = []
    if "solutions" in data:
        items = [s.get("connection", s) for s in data["solutions"]]
    elif "connection" in data:
        items = [data["connection"]]
    elif "group" in data and "Xi" in data and "g" in data:
        report, ok = _check_cayley(data, tol)
        dump(report, args.out_file)
        return EXIT_OK if ok else EXIT_FAIL
    else:
        items = [data]
    reports, all_ok = [], True
    for item in items:
        rep, ok = _check_connection(item, tol)
        reports.append(rep)
        all_ok &= ok
    dump({"checks": reports, "ok": all_ok, "tol": tol}, args.out_file)
    return EXIT_OK if all_ok else EXIT_FAIL


def _config_from_args(args) -> RunConfig:
    data = load_json(args.config)
    if not isinstance(data, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    for flag in ("ds", "steps", "tol", "seed"):
        v = getattr(args, flag, None)
        if v is not None:
            data[flag] = v
    if getattr(args, "force_mode", None):
        data["force_mode"] = args.force_mode
    return RunConfig.from_dict(data)


def cmd_geodesic(args) -> int:
    cfg = _config_from_args(args)
    summary = run_geodesic(cfg, Path(args.out))
    print(json.dumps({k: summary[k] for k in summary if k not in ("config", "scenario_params")},
                     default=_jsonable))
    return _status_code(summary)


def _sweep_worker(item):
    cfg_dict, out = item
    try:
        return run_geodesic(RunConfig.from_dict(cfg_dict), Path(out))
    except UsageError as exc:
        return {"status": "usage", "error": str(exc)}


def expand_sweep(data) -> list[dict]:
    if "runs" in data:
        runs = data["runs"]
        if not isinstance(runs, list) or not runs:
            raise UsageError("runs: expected a non-empty list of configs")
        return [dict(r) for r in runs]
    if "base" not in data or "vary" not in data:
        raise UsageError("sweep config needs 'runs' or both 'base' and 'vary'")
    keys = sorted(data["vary"])
    grids = [data["vary"][k] for k in keys]
    if any(not isinstance(g, list) or not g for g in grids):
        raise UsageError("vary: every entry must be a non-empty list")
    import itertools
    return [{**data["base"], **dict(zip(keys, combo))} for combo in itertools.product(*grids)]


def sweep_workers(n_jobs: int) -> int:
    env = os.environ.get("QGEO_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise UsageError("QGEO_THREADS must be an integer") from None
    return max(1, min(cap, n_jobs))


def cmd_sweep(args) -> int:
    data = load_json(args.config)
    if not isinstance(data, dict):
        raise UsageError(f"{args.config}: expected a JSON object")
    runs = expand_sweep(data)
    for i, r in enumerate(runs):
        try:
            RunConfig.from_dict(r)
        except UsageError as exc:
            raise UsageError(f"run {i}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    items = [(r, str(out / f"run_{i:03d}")) for i, r in enumerate(runs)]
    workers = sweep_workers(len(items))
    if workers == 1:
        results = [_sweep_worker(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, items))
    index = [{"run": Path(o).name, "status": r["status"]} for (_, o), r in zip(items, results)]
    dump({"runs": index, "workers": workers}, out / "sweep_summary.json")
    print(json.dumps({"runs": len(index), "workers": workers,
                      "statuses": [r["status"] for r in results]}))
    codes = [_status_code(r) if r["status"] != "usage" else EXIT_USAGE for r in results]
    return max(codes)


def build_parser() -> Parser:
    p = Parser(prog="qgeo", description=__doc__,
               formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("solve-qlc", help="solve for a Levi-Civita connection")
    grp = s.add_mutually_exclusive_group(required=True)
    grp.add_argument("--star", type=int, metavar="N", help="n-leg star graph")
    grp.add_argument("--lattice", metavar="METRIC_JSON", help="lattice metric file")
    s.add_argument("--legs", help="comma separated g_{0->i} values (default all 1)")
    s.add_argument("--phase", type=float, help="phase angle of the 2-star family member")
    s.add_argument("--out", dest="out_file", help="write the report here instead of stdout")
    s.set_defaults(func=cmd_solve_qlc)

    c = sub.add_parser("check", help="audit a stored connection")
    c.add_argument("file")
    c.add_argument("--tol", type=float)
    c.add_argument("--out", dest="out_file")
    c.set_defaults(func=cmd_check)

    for name, func, helptext in (("geodesic", cmd_geodesic, "integrate one geodesic flow"),
                                 ("sweep", cmd_sweep, "run several configs in parallel")):
        g = sub.add_parser(name, help=helptext)
        g.add_argument("--config", required=True)
        g.add_argument("--out", required=True, help="output directory")
        if name == "geodesic":
            g.add_argument("--ds", type=float)
            g.add_argument("--steps", type=int)
            g.add_argument("--force-mode", choices=FORCE_MODES)
            g.add_argument("--tol", type=float)
            g.add_argument("--seed", type=int)
        g.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"qgeo {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
