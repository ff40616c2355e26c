"""Batch driver: one experiment per invocation, reports written to ``--out``.

Exit codes
----------
0  the run completed and its checks passed (an expected mathematical
   failure, such as (B) failing for ``example4``, is a finding and still 0)
1  input error (bad flags, unreadable or malformed files)
2  degeneracy error (a form fell below the invertibility margin)
3  domain error (a point or trajectory left its region)
4  the run completed but a numerical check missed its tolerance
"""

import argparse
import os
import sys
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import loopspace, moser, odelimit
from .dirlim import DLVector, MarsdenSpec, default_marsden, shrinkage_experiment, strictly_decreasing
from .exceptions import DegeneracyError, DomainError, InputError
from .fields import (CLOSED_BUILTINS, ball_samples, field_from_dict, field_to_dict, named_field)
from .io import read_json, read_text, write_csv, write_report
from .symplin import j_std

EXIT_OK, EXIT_INPUT, EXIT_DEGENERACY, EXIT_DOMAIN, EXIT_CHECK = 0, 1, 2, 3, 4
OUT_ENV = "WEAKDARBOUX_OUT"


@dataclass
class ExperimentConfig:
    """Resolved settings of one run; embedded verbatim in every report."""

    command: str
    input: str | None = None
    out: str = "."
    format: str = "report"
    steps: int | None = None
    grid: int | None = None
    margin: float | None = None
    tol: float | None = None
    levels: tuple | None = None
    seed: int = 0
    fixed_e: bool = False
    family: str | None = None
    k: int = 1
    p: float = 2.0

    def to_dict(self):
        d = asdict(self)
        d["levels"] = list(self.levels) if self.levels is not None else None
        return d


def parse_levels(text):
    """``"A..B"`` or ``"A"`` to an inclusive ``(A, B)`` pair of positive ints."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise InputError(f"--levels expects A..B with integers, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise InputError(f"--levels needs 1 <= A <= B, got {text!r}")
    return lo, hi


def _positive(name, value, kind=float):
    if value is not None and not value > 0:
        raise InputError(f"--{name} must be positive, got {value}")
    return value if value is None else kind(value)


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors: exit 1, not argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="input file (field JSON, Marsden JSON, family JSON or loop text)")
    common.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--format", choices=("csv", "report"), default="report")
    common.add_argument("--steps", type=int, help="RK4 steps (moser) or ODE steps over tau (odelimit)")
    common.add_argument("--grid", type=int, help="sample count (moser, odelimit), ray count "
                        "(counterexample) or loop nodes N (loop)")
    common.add_argument("--margin", type=float, help="invertibility margin on sigma_min")
    common.add_argument("--tol", type=float, help="pass tolerance of the main check")
    common.add_argument("--levels", help="level range A..B")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--fixed-e", action="store_true", help="counterexample: contrast run with fixed e")
    common.add_argument("--family", help="named field, ODE family (example3, example4, file) or loop tower")
    common.add_argument("--k", type=int, default=1, help="loop: Sobolev order")
    common.add_argument("--p", type=float, default=2.0, help="loop: Sobolev exponent")

    parser = _Parser(prog="weakdarboux", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("moser", parents=[common], help="local Darboux chart by Moser's path method")
    sub.add_parser("counterexample", parents=[common], help="shrinking Darboux radii on the Marsden tower")
    sub.add_parser("odelimit", parents=[common], help="conditions (A),(B),(C) and the limit ODE")
    sub.add_parser("loop", parents=[common], help="loop-space form diagnostics")
    return parser


def config_from_args(args):
    levels = parse_levels(args.levels) if args.levels else None
    for name in ("steps", "grid"):
        _positive(name, getattr(args, name), int)
    for name in ("margin", "tol"):
        _positive(name, getattr(args, name))
    if args.k < 0:
        raise InputError("--k must be >= 0")
    if not args.p > 1:
        raise InputError("--p must be > 1")
    out = args.out or os.environ.get(OUT_ENV) or "."
    return ExperimentConfig(args.command, args.input, out, args.format, args.steps, args.grid,
                            args.margin, args.tol, levels, args.seed, args.fixed_e, args.family,
                            args.k, args.p)


def _emit(cfg, report, rows, columns):
    """Write the structured report or the CSV table; returns the path."""
    path = os.path.join(cfg.out, f"{cfg.command}.{'json' if cfg.format == 'report' else 'csv'}")
    if cfg.format == "report":
        write_report(path, {**report, "rows": rows})
    else:
        write_csv(path, rows, columns)
    return path


# ----------------------------------------------------------------------------
# moser


def _moser_inputs(cfg):
    doc = read_json(cfg.input) if cfg.input else None
    if doc is None:
        fld = named_field(cfg.family or "perturbed_canonical")
        x0, sample_radius = None, None
    elif isinstance(doc, dict) and "field" in doc:
        fld = field_from_dict(doc["field"])
        x0, sample_radius = doc.get("x0"), doc.get("sample_radius")
    elif isinstance(doc, dict):
        fld = field_from_dict(doc)
        x0, sample_radius = None, None
    else:
        raise InputError("moser input must be a JSON object")
    x0 = np.zeros(fld.dim) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (fld.dim,):
        raise InputError(f"x0 must have length {fld.dim}")
    if sample_radius is None:
        sample_radius = 0.5 * fld.region.radius
    return fld, x0, float(sample_radius)


def cmd_moser(cfg):
    fld, x0, sample_radius = _moser_inputs(cfg)
    cfg.steps = cfg.steps or moser.DEFAULT_STEPS
    cfg.grid = cfg.grid or 100
    cfg.margin = cfg.margin or moser.DEFAULT_MARGIN
    cfg.tol = cfg.tol or 1e-5
    cfg.family = cfg.family or (None if cfg.input else "perturbed_canonical")
    rng = np.random.default_rng(cfg.seed)
    pts = ball_samples(rng, cfg.grid, x0, sample_radius, fld.region.norm)
    base = {"config": cfg.to_dict(), "field": _field_doc(fld), "x0": x0,
            "sample_radius": sample_radius}
    chart = moser.darboux_chart(fld, x0, pts, cfg.steps, cfg.margin, tol=cfg.tol)
    rep = chart.residual_report
    study = moser.convergence_study(fld, x0, pts, margin=cfg.margin)
    rows = [{"kind": "moser", "t": t, "steps": cfg.steps, "residual": r}
            for t, r in sorted(rep["moser"].items())]
    rows.append({"kind": "darboux", "t": 1.0, "steps": cfg.steps, "residual": rep["darboux"]})
    rows += [{"kind": "doubling", "t": 1.0, "steps": s, "residual": r}
             for s, r in zip(study["steps"], study["residuals"])]
    ok = bool(rep["ok"])
    report = {**base, "status": "ok" if ok else "tolerance_exceeded", "darboux_residual": rep["darboux"],
              "tol": cfg.tol, "linear_map": rep["linear_map"], "step_doubling": study}
    path = _emit(cfg, report, rows, ["kind", "t", "steps", "residual"])
    print(f"moser: darboux residual {rep['darboux']:.3e} (tol {cfg.tol:g}) -> {path}")
    return EXIT_OK if ok else EXIT_CHECK


def _field_doc(fld):
    try:
        return field_to_dict(fld)
    except InputError:
        return {"name": fld.name, "kind": fld.kind}


# ----------------------------------------------------------------------------
# counterexample


def cmd_counterexample(cfg):
    cfg.margin = cfg.margin or 1e-4
    cfg.tol = cfg.tol or 1e-3
    cfg.grid = cfg.grid or 32
    if cfg.input:
        spec = MarsdenSpec.from_dict(read_json(cfg.input))
        if cfg.fixed_e:
            spec = MarsdenSpec(spec.sigma, tuple(spec.points[0] for _ in spec.points))
        lo, hi = cfg.levels or (1, spec.n_levels)
    else:
        lo, hi = cfg.levels or (1, 6)
        spec = default_marsden(n_levels=hi, fixed_e=cfg.fixed_e)
    cfg.levels = (lo, hi)
    if hi > spec.n_levels:
        raise InputError(f"--levels up to {hi} but the tower has {spec.n_levels} levels")
    res = shrinkage_experiment(spec, range(lo, hi + 1), cfg.margin, n_dirs=cfg.grid,
                               tol=cfg.tol, seed=cfg.seed)
    rows = [{"n": n, "dim": d, "r_n": r, "sigma_min": s} for n, d, r, s in res]
    radii = [r["r_n"] for r in rows]
    shrinks = strictly_decreasing(radii) and len(radii) > 1
    if cfg.fixed_e:
        note = "shrinkage" if shrinks else "no shrinkage"
        ok = True
    else:
        note = "strictly decreasing" if strictly_decreasing(radii) else "not strictly decreasing"
        ok = strictly_decreasing(radii)
    report = {"config": cfg.to_dict(), "spec": {"base_dim": spec.base_dim,
                                                 "n_levels": spec.n_levels,
                                                 "fixed_e": cfg.fixed_e},
              "status": "ok" if ok else "check_failed", "note": note,
              "r_last_over_r_first": radii[-1] / radii[0]}
    path = _emit(cfg, report, rows, ["n", "dim", "r_n", "sigma_min"])
    print(f"counterexample: r_n = {', '.join(f'{r:.4f}' for r in radii)} ({note}) -> {path}")
    return EXIT_OK if ok else EXIT_CHECK


# ----------------------------------------------------------------------------
# odelimit


def family_from_dict(d):
    """ODE family document: ``{"kind": "power", "power": p, "radius": r}`` or
    ``{"kind": "stabilizing", "matrix": [[...]]}``."""
    if not isinstance(d, dict) or "kind" not in d:
        raise InputError("family document must be an object with a 'kind' key")
    try:
        if d["kind"] == "power":
            return odelimit.power_family(float(d["power"]), float(d.get("radius", 1.5)),
                                         name=d.get("name"))
        if d["kind"] == "stabilizing":
            M = np.array(d["matrix"], dtype=float)
            if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
                raise InputError("stabilizing family needs a finite square matrix")
            return odelimit.stabilizing_family(M, d.get("name", "stabilizing"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed family document: {exc!r}") from exc
    raise InputError(f"unknown family kind {d['kind']!r}")


def _ode_oracle_check(fam, power, tau, cfg):
    """RK4 against the tan formula from seeded data in ``B(0, 1/2)``, plus level independence."""
    rng = np.random.default_rng(cfg.seed)
    h = tau / cfg.steps if cfg.steps else 1e-4
    levels = tuple(range(1, 65))
    err = level_gap = 0.0
    for _ in range(cfg.grid or 10):
        d = int(rng.integers(1, 6))
        a = rng.uniform(-1.0, 1.0, d)
        a *= 0.5 * rng.random() / np.sum(np.abs(a))
        v = DLVector(tuple(a), levels)
        ts, X = odelimit.solve_limit_ode(fam, v, tau=tau, h=h)
        y0 = np.zeros(X.shape[1])
        y0[:v.support] = v.coords
        err = max(err, float(np.max(np.abs(X - odelimit.analytic_solution(power, y0, ts, fam.t0)))))
        _, X3 = odelimit.solve_limit_ode(fam, v, tau=tau, h=h, level=v.min_level + 3)
        level_gap = max(level_gap, float(np.max(np.abs(X3[:, :X.shape[1]] - X))))
    return {"h": h, "samples": cfg.grid or 10, "max_error": err, "level_gap": level_gap}


def cmd_odelimit(cfg):
    cfg.family = cfg.family or "example3"
    if cfg.family == "example3":
        fam, power = odelimit.example3_family(), 2.0
    elif cfg.family == "example4":
        fam, power = odelimit.example4_family(), 1.0
    elif cfg.family == "file":
        if not cfg.input:
            raise InputError("--family file needs --input")
        doc = read_json(cfg.input)
        fam = family_from_dict(doc)
        power = float(doc["power"]) if doc.get("kind") == "power" else None
    else:
        raise InputError(f"unknown family {cfg.family!r}; use example3, example4 or file")
    lo, hi = cfg.levels or (1, 200 if cfg.family == "example4" else 50)
    cfg.levels = (lo, hi)
    cfg.tol = cfg.tol or 1e-8
    tau = 1.0 / fam.bound_limit if fam.bound_limit else None
    rep = odelimit.condition_check(fam, hi, tau, levels=range(lo, hi + 1))
    out = rep.to_dict()
    out["check_config"] = out.pop("config")
    ratios = rep.r_over_K
    out["ratio_last_over_first"] = ratios[-1] / ratios[0]
    ok = True
    if power is not None:
        ode = _ode_oracle_check(fam, power, rep.tau, cfg)
        out["ode"] = ode
        ok = ode["max_error"] <= cfg.tol
    report = {"config": cfg.to_dict(), "status": "ok" if ok else "tolerance_exceeded", **out}
    report.pop("rows")
    path = _emit(cfg, report, rep.rows(),
                 ["n", "K0", "K1", "K", "K_closed", "r", "r/K", "r-tauK", "A"])
    f = rep.flags
    print(f"odelimit[{fam.name}]: A={all(f['A'])} B={f['B']} C={f['C']} tau={rep.tau:.6g}"
          f" trend={rep.trend['verdict']} -> {path}")
    return EXIT_OK if ok else EXIT_CHECK


# ----------------------------------------------------------------------------
# loop


def resolution_schedule(N, base=loopspace.DEFAULT_N):
    """Tolerance factor ``(base/N)^2`` below ``base`` nodes; modes above ``N/4`` dropped."""
    under = N < base
    return {"factor": (base / N) ** 2 if under else 1.0, "max_mode": N // 4,
            "under_resolved": under}


LOOP_TOLS = {"closedness": 1e-6, "pairing": 1e-12, "isometry": 1e-12, "rotation_lift": 1e-12,
             "global_darboux": 1e-8}
LOOP_MODES = (1, 2, 4, 8, 16, 32)


def _loop_for(dim, cfg, given, rng, amplitude=0.2):
    if given is not None and given.m == dim:
        g = given
    else:
        g = loopspace.random_loop(rng, cfg.grid, dim, amplitude=amplitude)
    names = list(g.fields)
    while len(names) < 3:
        name = f"R{len(names)}"
        g = g.with_fields(**{name: loopspace.random_smooth_field(rng, g.N, dim)})
        names.append(name)
    return g, names[:3]


def cmd_loop(cfg):
    given = loopspace.LoopGrid.from_text(read_text(cfg.input)) if cfg.input else None
    cfg.grid = given.N if given is not None else (cfg.grid or loopspace.DEFAULT_N)
    loopspace.LoopGrid(np.zeros((cfg.grid, 1)))  # validates N
    cfg.family = cfg.family or "shear_tower"
    lo, hi = cfg.levels or (1, 3)
    cfg.levels = (lo, hi)
    sched = resolution_schedule(cfg.grid)
    tols = {k: v * sched["factor"] for k, v in LOOP_TOLS.items()}
    if cfg.tol:
        tols["global_darboux"] = cfg.tol
    notes = []
    if sched["under_resolved"]:
        msg = (f"N={cfg.grid} is below {loopspace.DEFAULT_N}: tolerances relaxed by "
               f"{sched['factor']:g}, modes above {sched['max_mode']} dropped")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    rng = np.random.default_rng(cfg.seed)
    rows = []

    def add(check, param, value, tol):
        rows.append({"check": check, "param": param, "value": value, "tol": tol,
                     "ok": None if tol is None else bool(abs(value) <= tol)})

    for name in CLOSED_BUILTINS:
        fld = named_field(name)
        g, (a, b, c) = _loop_for(fld.dim, cfg, given, rng)
        add("closedness", name, loopspace.loop_closedness(fld, g, a, b, c), tols["closedness"])
        X, Y = g.field(a), g.field(b)
        add("pairing", name, dual_gap(fld, g, X, Y), tols["pairing"])

    spec0 = loopspace.SobolevSpec(0, 2.0)
    for m in (2, 4):
        g, (a, _, _) = _loop_for(m, cfg, given, rng)
        X = g.field(a)
        ratio = loopspace.dual_norm_estimate(X @ j_std(m), spec0).value / loopspace.sobolev_norm(X, spec0)
        add("isometry", f"m={m}", ratio - 1.0, tols["isometry"])

    spec = loopspace.SobolevSpec(cfg.k, cfg.p)
    modes = [ell for ell in LOOP_MODES if ell <= sched["max_mode"]] if sched["under_resolved"] \
        else list(LOOP_MODES)
    n_diag = cfg.grid if sched["under_resolved"] else loopspace.auto_grid_size(modes, cfg.grid)
    table = loopspace.weak_strong_diagnostic(spec, j_std(2), modes, N=n_diag)
    for r in table:
        add("mode_ratio", r["ell"], r["ratio"], None)
    ratios = [r["ratio"] for r in table]
    decay_ok = all(b < a for a, b in zip(ratios, ratios[1:])) if cfg.k >= 1 else True
    if cfg.k >= 1 and modes[-1] == 32:
        decay_ok = decay_ok and ratios[-1] < 0.01 * ratios[0]

    g, names = _loop_for(2, cfg, given, rng)
    J = named_field("canonical")
    J = J.with_region(loopspace.whole_space(2))
    add("rotation_lift", "s=0.7", loopspace.lift_pullback_check(
        loopspace.rotation_isotopy(), 0.7, J, J, g, seed=cfg.seed), tols["rotation_lift"])

    tower = loopspace.named_tower(cfg.family)
    for n in range(lo, hi + 1):
        g, _ = _loop_for(2 * n, cfg, given, rng, amplitude=0.3)
        add("global_darboux", n, loopspace.global_loop_darboux(tower, n, g, seed=cfg.seed),
            tols["global_darboux"])

    ok = decay_ok and all(r["ok"] is not False for r in rows)
    report = {"config": cfg.to_dict(), "status": "ok" if ok else "tolerance_exceeded",
              "tolerances": tols, "schedule": sched, "notes": notes,
              "mode_decay_ok": decay_ok, "mode_grid": n_diag}
    path = _emit(cfg, report, rows, ["check", "param", "value", "tol", "ok"])
    print(f"loop: {sum(r['ok'] is True for r in rows)} checks passed, "
          f"mode decay {'ok' if decay_ok else 'FAILED'} -> {path}")
    return EXIT_OK if ok else EXIT_CHECK


def dual_gap(fld, g, X, Y):
    return loopspace.dual_pairing(loopspace.loop_flat(fld, g, X), Y) - loopspace.loop_form(fld, g, X, Y)


COMMANDS = {"moser": cmd_moser, "counterexample": cmd_counterexample,
            "odelimit": cmd_odelimit, "loop": cmd_loop}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits on --help (0) and on bad arguments (1, see _Parser)
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    cfg = None
    try:
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegeneracyError, DomainError) as exc:
        code = EXIT_DEGENERACY if isinstance(exc, DegeneracyError) else EXIT_DOMAIN
        print(f"{exc.to_dict()['error']} error: {exc}", file=sys.stderr)
        if cfg is not None:
            path = os.path.join(cfg.out, f"{cfg.command}.json")
            write_report(path, {"config": cfg.to_dict(), "status": "error", **exc.to_dict()})
        return code


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
