"""Batch front end: ``gammaforge <command> --job job.json [--out report.json] [--seed S] [--tol T]``.

Exit status: 0 when every checked inequality holds, 1 when one fails (the
report is still written), 2 for usage, schema, parse or domain errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import itertools
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import __version__
from . import curvature as cv
from . import diffusion as df
from . import expr as ex
from . import spectral as sp
from . import transform as tf

log = logging.getLogger("gammaforge")

DEFAULT_SEED = 20240601
COMMANDS = (
    "gamma", "gamma2", "hessian", "ricci", "check-be", "best-k", "transform", "verify-conformal",
    "verify-bound", "falsify-constants", "spectral-gap", "lichnerowicz", "bonnet-myers", "mms-kprime",
)
DEFAULT_TOL = {
    "check-be": 1e-8, "verify-conformal": 1e-7, "verify-bound": 1e-7, "falsify-constants": 1e-6,
    "lichnerowicz": 1e-2, "bonnet-myers": 1e-9, "mms-kprime": 1e-9, "transform": 1e-9,
}

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_ext_real = {"oneOf": [{"type": "number"}, {"type": "string", "enum": ["inf", "+inf", "infinity", "-inf"]}]}
_scalar = {"oneOf": [{"type": "number"}, {"type": "string"}]}
_strings = {"type": "array", "items": {"type": "string"}}

JOB_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "operator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dim": {"type": "integer", "minimum": 1},
                "a": {"type": "array", "items": _strings},
                "b": _strings,
                "metric": {"type": "array", "items": _strings},
                "preset": {"enum": ["euclidean", "ornstein-uhlenbeck", "sphere-radial"]},
            },
            "required": ["dim"],
        },
        "transform": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(tf.KINDS)},
                "f": {"type": "string"},
                "w": {"type": "string"},
                "h": {"type": "string"},
                "rho": {"type": "string"},
                "N": _ext_real,
                "pairs": {"type": "array", "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}},
            },
            "required": ["kind"],
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                **{k: {"type": "string"} for k in ("f", "g", "h", "u", "v", "w")},
                "u_tests": _strings,
                "K": _scalar,
                "N": _ext_real,
                "N_prime": _ext_real,
                "N_star": _ext_real,
                "K_bound": {"type": "number"},
                "n": {"type": "integer", "minimum": 1},
                "trials": {"type": "integer", "minimum": 1},
                "degree": {"type": "integer", "minimum": 1, "maximum": 4},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "axes": {"type": "array", "items": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}},
                "points": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
            },
        },
        "domain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lo": {"type": "number"},
                "hi": {"type": "number"},
                "circle": {"type": "boolean"},
                "length": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "m": {"type": "integer", "minimum": 3},
        "seed": {"type": "integer", "minimum": 0},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"report": {"type": "string"}, "table": {"type": "string"}},
        },
    },
}


class UsageError(Exception):
    pass


class JobResult:
    def __init__(self, body: dict, columns: list[str], rows: list[list], exit_code: int):
        self.body, self.columns, self.rows, self.exit_code = body, columns, rows, exit_code


# parsing helpers ---------------------------------------------------------------------------

def ext_real(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s == "-inf":
            return -math.inf
        raise UsageError(f"not an extended real: {v!r}")
    return float(v)


def jsonable(v):
    """Floats to JSON-safe values; infinities become strings."""
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def grid_expand(spec) -> list[tuple[float, ...]]:
    """Points from per-axis (min, max, count) triples in lexicographic order, or an explicit list."""
    if spec is None:
        raise UsageError("grid is required for this command")
    if isinstance(spec, dict) and "points" in spec:
        if "axes" in spec:
            raise UsageError("grid: give either axes or points")
        pts = [tuple(float(t) for t in p) for p in spec["points"]]
        if not pts:
            raise UsageError("grid: empty point list")
        if len({len(p) for p in pts}) != 1:
            raise UsageError("grid: points differ in dimension")
        return pts
    axes = spec["axes"] if isinstance(spec, dict) else spec
    if not axes:
        raise UsageError("grid: no axes")
    values = []
    for k, ax in enumerate(axes):
        lo, hi, count = ax
        if count != int(count) or count < 1:
            raise UsageError(f"grid axis {k}: count must be a positive integer")
        if lo > hi:
            raise UsageError(f"grid axis {k}: min > max")
        count = int(count)
        values.append([float(lo)] if count == 1 else [float(t) for t in np.linspace(lo, hi, count)])
    return [tuple(p) for p in itertools.product(*values)]


def build_operator(doc: dict, sphere_dim: int = 3) -> df.DiffusionOperator:
    n = doc["dim"]
    keys = {k for k in ("a", "b", "metric", "preset") if k in doc}
    if keys == {"preset"}:
        p = doc["preset"]
        if p == "euclidean":
            return df.euclidean(n)
        if p == "ornstein-uhlenbeck":
            return df.ornstein_uhlenbeck(n)
        if n != 1:
            raise UsageError("sphere-radial preset is one-dimensional")
        return sp.sphere_radial(sphere_dim)
    if keys == {"metric"}:
        g = doc["metric"]
        if len(g) != n or any(len(r) != n for r in g):
            raise UsageError(f"operator.metric must be {n}x{n}")
        return df.laplace_beltrami(df.RiemannianSpec.from_strings(g))
    if keys == {"a", "b"}:
        if len(doc["b"]) != n or len(doc["a"]) != n or any(len(r) != n for r in doc["a"]):
            raise UsageError(f"operator.a must be {n}x{n} and operator.b of length {n}")
        return df.DiffusionOperator.from_strings(doc["a"], doc["b"])
    raise UsageError("operator needs exactly one of: a and b, metric, preset")


def build_transform(doc: dict, n: int) -> tf.TransformSpec:
    kind = doc["kind"]

    def e(key):
        if key not in doc:
            raise UsageError(f"transform.{key} is required for kind {kind}")
        return ex.parse(doc[key], n)

    if kind == "time_change":
        return tf.TransformSpec.time_change(e("f"))
    if kind == "drift":
        if "pairs" in doc:
            return tf.TransformSpec.drift_field([(ex.parse(g, n), ex.parse(h, n)) for g, h in doc["pairs"]])
        return tf.TransformSpec.drift(e("h"))
    if kind == "metric":
        return tf.TransformSpec.metric(e("f"))
    if kind == "conformal":
        N = ext_real(doc.get("N", "inf"))
        if "w" in doc:
            return tf.TransformSpec.conformal(N, w=e("w"))
        return tf.TransformSpec.conformal(N, f=e("f"))
    if kind == "doob":
        return tf.TransformSpec.doob(e("rho"))
    if kind == "time_drift":
        return tf.TransformSpec.time_drift(e("f"), e("h"))
    pairs = [(ex.parse(g, n), ex.parse(h, n)) for g, h in doc.get("pairs", [])]
    return tf.TransformSpec.general(e("f"), pairs)


class Ctx:
    def __init__(self, job: dict, command: str, seed: int, tol: float):
        self.job, self.command, self.seed, self.tol = job, command, seed, tol
        self.params = job.get("params", {})
        self._op = None

    @property
    def op(self) -> df.DiffusionOperator:
        if self._op is None:
            if "operator" not in self.job:
                raise UsageError("operator document is required")
            self._op = build_operator(self.job["operator"], int(self.params.get("n", 3)))
        return self._op

    def expr(self, key: str, default: str | None = None) -> ex.Expr:
        s = self.params.get(key, default)
        if s is None:
            raise UsageError(f"params.{key} is required for {self.command}")
        return ex.parse(s, self.op.n)

    def number(self, key: str, default=None) -> float:
        v = self.params.get(key, default)
        if v is None:
            raise UsageError(f"params.{key} is required for {self.command}")
        return ext_real(v)

    def K(self, default=None):
        v = self.params.get("K", default)
        if v is None:
            raise UsageError(f"params.K is required for {self.command}")
        if isinstance(v, str):
            try:
                return ext_real(v)
            except UsageError:
                return ex.parse(v, self.op.n)
        return float(v)

    def grid(self) -> list[tuple[float, ...]]:
        pts = grid_expand(self.job.get("grid"))
        if "operator" in self.job and len(pts[0]) != self.op.n:
            raise UsageError(f"grid points have dimension {len(pts[0])}, operator has {self.op.n}")
        return pts

    def transform(self) -> tf.TransformSpec:
        if "transform" not in self.job:
            raise UsageError(f"transform document is required for {self.command}")
        return build_transform(self.job["transform"], self.op.n)

    def domain(self):
        d = self.job.get("domain")
        if d is None:
            raise UsageError(f"domain is required for {self.command}")
        if d.get("circle"):
            return sp.Domain.circle(d.get("length", 2 * math.pi))
        if "lo" not in d or "hi" not in d:
            raise UsageError("domain needs lo and hi, or circle")
        return sp.Domain(d["lo"], d["hi"])


def _coords(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


# commands -----------------------------------------------------------------------------------

def _field_command(ctx: Ctx, build) -> JobResult:
    pts = ctx.grid()
    e = build()
    vals = ex.evaluate(e, np.array(pts))
    vals = np.atleast_1d(np.broadcast_to(vals, (len(pts),)))
    rows = [list(p) + [float(v)] for p, v in zip(pts, vals)]
    body = {
        "expression": str(e),
        "records": [{"point": list(p), "value": float(v)} for p, v in zip(pts, vals)],
        "aggregates": {"min": float(vals.min()), "max": float(vals.max())},
        "passed": True,
    }
    return JobResult(body, _coords(ctx.op.n) + ["value"], rows, EXIT_PASS)


def cmd_gamma(ctx):
    return _field_command(ctx, lambda: df.gamma(ctx.op, ctx.expr("u"), ctx.expr("v", ctx.params.get("u"))))


def cmd_gamma2(ctx):
    return _field_command(ctx, lambda: df.gamma2(ctx.op, ctx.expr("u"), ctx.expr("v", ctx.params.get("u"))))


def cmd_hessian(ctx):
    return _field_command(ctx, lambda: df.hessian(ctx.op, ctx.expr("f"), ctx.expr("g"), ctx.expr("h")))


def cmd_ricci(ctx):
    f, N = ctx.expr("f"), ctx.number("N")
    pts = ctx.grid()
    recs, rows = [], []
    for p in pts:
        pf = cv.point_frame(ctx.op, p, f)
        R = cv.ricci_from_frame(pf, N)
        recs.append({"point": list(p), "ricci": R, "gamma": pf.gf, "rank": pf.rank})
        rows.append(list(p) + [R, pf.gf, pf.rank])
    body = {"records": recs, "aggregates": {"min_ricci": min(r["ricci"] for r in recs)}, "passed": True, "N": N}
    return JobResult(body, _coords(ctx.op.n) + ["ricci", "gamma", "rank"], rows, EXIT_PASS)


def _be_rows(rep: cv.BEReport, n: int):
    recs = [
        {"point": list(r.point), "mu": r.mu, "K": r.K, "residual": r.residual, "rank": r.rank, "minus_infinity": r.minus_infinity}
        for r in rep.records
    ]
    rows = [list(r.point) + [r.mu, r.K, r.residual, r.rank, int(r.minus_infinity)] for r in rep.records]
    return recs, rows, _coords(n) + ["mu", "K", "residual", "rank", "minus_infinity"]


def cmd_check_be(ctx):
    rep = cv.check_be(ctx.op, ctx.K(), ctx.number("N"), ctx.grid(), tol=ctx.tol)
    recs, rows, cols = _be_rows(rep, ctx.op.n)
    body = {
        "records": recs,
        "aggregates": {"best_k": rep.best_k, "min_residual": rep.min_residual, "violations": len(rep.violations)},
        "violating_points": [list(r.point) for r in rep.violations],
        "passed": rep.passed,
        "N": rep.N,
    }
    return JobResult(body, cols, rows, EXIT_PASS if rep.passed else EXIT_FAIL)


def cmd_best_k(ctx):
    rep = cv.check_be(ctx.op, 0.0, ctx.number("N"), ctx.grid(), tol=math.inf)
    recs, rows, cols = _be_rows(rep, ctx.op.n)
    body = {"records": recs, "aggregates": {"best_k": rep.best_k}, "passed": True, "N": rep.N}
    return JobResult(body, cols, rows, EXIT_PASS)


def cmd_transform(ctx):
    spec = ctx.transform()
    grid = ctx.grid() if "grid" in ctx.job else None
    op2 = tf.transform_operator(ctx.op, spec, grid)
    body = {
        "kind": spec.kind,
        "operator": {"a": [[str(v) for v in r] for r in op2.a], "b": [str(v) for v in op2.b]},
        "passed": True,
    }
    rows, cols = [], _coords(ctx.op.n) + ["kprime"]
    if "K" in ctx.params and grid is not None:
        kp = tf.kprime_general(ctx.op, spec, ctx.K(), ctx.number("N"), ctx.number("N_prime"), grid)
        body["records"] = [{"point": list(p), "kprime": v} for p, v in zip(grid, kp.pointwise)]
        body["aggregates"] = {"kprime": kp.value}
        rows = [list(p) + [v] for p, v in zip(grid, kp.pointwise)]
    return JobResult(body, cols, rows, EXIT_PASS)


def cmd_verify_conformal(ctx):
    pts = ctx.grid()
    chk = tf.conformal_ricci_identity(ctx.op, ctx.expr("w"), ctx.number("N"), ctx.expr("u"), pts)
    recs = [{"point": list(p), "lhs": l, "rhs": r} for p, l, r in zip(pts, chk.lhs, chk.rhs)]
    rows = [list(p) + [l, r] for p, l, r in zip(pts, chk.lhs, chk.rhs)]
    ok = chk.ok(ctx.tol)
    body = {
        "records": recs,
        "aggregates": {"max_residual": chk.max_residual, "max_scaled_residual": chk.max_scaled_residual},
        "passed": ok,
    }
    return JobResult(body, _coords(ctx.op.n) + ["lhs", "rhs"], rows, EXIT_PASS if ok else EXIT_FAIL)


def cmd_verify_bound(ctx):
    spec = ctx.transform()
    us = [ex.parse(s, ctx.op.n) for s in ctx.params.get("u_tests", [])] or [ctx.expr("u")]
    chk = tf.verify_transform_bound(ctx.op, spec, ctx.number("N"), ctx.number("N_prime"), us, ctx.grid())
    recs = [{"point": list(p), "u": u, "lhs": l, "rhs": r, "residual": res, "scale": s} for p, u, l, r, res, s in chk.records]
    rows = [list(p) + [u, l, r, res, s] for p, u, l, r, res, s in chk.records]
    ok = chk.ok(ctx.tol)
    body = {
        "records": recs,
        "skipped": [list(s) for s in chk.skipped],
        "aggregates": {"min_scaled_residual": chk.min_scaled_residual},
        "passed": ok,
    }
    return JobResult(body, _coords(ctx.op.n) + ["u", "lhs", "rhs", "residual", "scale"], rows, EXIT_PASS if ok else EXIT_FAIL)


def cmd_falsify(ctx):
    n = int(ctx.params.get("n", 3))
    N = ctx.number("N", n)
    rep = tf.wrong_constants_falsifier(
        n, N, trials=int(ctx.params.get("trials", 10_000)), seed=ctx.seed,
        degree=int(ctx.params.get("degree", 3)), threshold=ctx.tol,
    )
    recs, rows = [], []
    for name in tf.PAIRS:
        c1, c2 = tf.PAIRS[name](rep.N)
        wit = rep.witnesses.get(name)
        recs.append({
            "pair": name, "c1": c1, "c2": c2, "violations": rep.violations[name],
            "min_scaled_residual": rep.min_scaled_residual[name],
            "witness": None if wit is None else wit._asdict(),
        })
        rows.append([name, c1, c2, rep.violations[name], rep.min_scaled_residual[name]])
    ok = rep.violations[tf.CORRECT] == 0 and all(rep.found(p) for p in tf.PAIRS if p != tf.CORRECT)
    body = {"records": recs, "aggregates": {"trials": rep.trials, "n": rep.n, "N": rep.N}, "passed": ok}
    return JobResult(body, ["pair", "c1", "c2", "violations", "min_scaled_residual"], rows, EXIT_PASS if ok else EXIT_FAIL)


def cmd_spectral_gap(ctx):
    d = sp.discretize_1d(ctx.op, ctx.domain(), int(ctx.job.get("m", 512)))
    lam = sp.spectrum(d, 6)
    body = {
        "aggregates": {
            "gap": sp.spectral_gap(d),
            "self_adjointness_residual": d.self_adjointness_residual(),
            "row_sum_residual": d.row_sum_residual(),
        },
        "records": [{"index": k, "eigenvalue": float(v)} for k, v in enumerate(lam)],
        "passed": True,
    }
    return JobResult(body, ["index", "eigenvalue"], [[k, float(v)] for k, v in enumerate(lam)], EXIT_PASS)


def cmd_lichnerowicz(ctx):
    spec = ctx.transform() if "transform" in ctx.job else None
    rep = sp.lichnerowicz_check(
        ctx.op, ctx.K(), ctx.number("N"), ctx.domain(), int(ctx.job.get("m", 512)), spec=spec,
        Np=ctx.number("N_prime") if spec is not None else None,
        grid=ctx.grid() if spec is not None else None, tol=ctx.tol,
    )
    body = {"aggregates": rep._asdict(), "records": [], "passed": rep.passed}
    return JobResult(body, ["gap", "bound", "slack"], [[rep.gap, rep.bound, rep.slack]], EXIT_PASS if rep.passed else EXIT_FAIL)


def cmd_bonnet_myers(ctx):
    kb = ctx.params.get("K_bound")
    rep = sp.bonnet_myers_check(
        ctx.op, ctx.expr("f", "1"), kb, ctx.number("N"), ctx.number("N_star"), ctx.domain(), K=ctx.K(0.0), tol=ctx.tol
    )
    body = {"aggregates": rep._asdict(), "records": [], "passed": rep.passed}
    return JobResult(body, ["diameter", "bound", "K_bound"], [[rep.diameter, rep.bound, rep.K_bound]], EXIT_PASS if rep.passed else EXIT_FAIL)


def cmd_mms(ctx):
    v, w = ctx.expr("v", "0"), ctx.expr("w", "0")
    K, N, Np = ctx.K(), ctx.number("N"), ctx.number("N_prime")
    grid = ctx.grid()
    direct = tf.mms_kprime(ctx.op, v, w, K, N, Np, grid)
    recs = [{"point": list(p), "kprime": k} for p, k in zip(grid, direct.pointwise)]
    rows = [list(p) + [k] for p, k in zip(grid, direct.pointwise)]
    body = {"records": recs, "aggregates": {"kprime": direct.value}, "passed": True}
    if not math.isinf(N) and Np > N:
        general = tf.kprime_general(ctx.op, tf.mms_spec(v, w), K, N, Np, grid)
        diff = max(abs(a - b) for a, b in zip(direct.pointwise, general.pointwise))
        body["aggregates"]["kprime_general"] = general.value
        body["aggregates"]["max_route_difference"] = diff
        body["passed"] = diff <= ctx.tol * (1 + abs(direct.value))
    return JobResult(body, _coords(ctx.op.n) + ["kprime"], rows, EXIT_PASS if body["passed"] else EXIT_FAIL)


HANDLERS = {
    "gamma": cmd_gamma, "gamma2": cmd_gamma2, "hessian": cmd_hessian, "ricci": cmd_ricci,
    "check-be": cmd_check_be, "best-k": cmd_best_k, "transform": cmd_transform,
    "verify-conformal": cmd_verify_conformal, "verify-bound": cmd_verify_bound,
    "falsify-constants": cmd_falsify, "spectral-gap": cmd_spectral_gap, "lichnerowicz": cmd_lichnerowicz,
    "bonnet-myers": cmd_bonnet_myers, "mms-kprime": cmd_mms,
}


# orchestration ----------------------------------------------------------------------------

def validate_job(job: Any) -> None:
    v = jsonschema.Draft202012Validator(JOB_SCHEMA)
    errors = sorted(v.iter_errors(job), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise UsageError(f"job schema violation at {path}: {e.message}")


def run(job: dict, command: str | None = None, seed: int | None = None, tol: float | None = None) -> JobResult:
    """Validate and execute one job; raises UsageError / ExprError / ValueError for exit-2 conditions."""
    validate_job(job)
    command = command or job.get("command")
    if command not in HANDLERS:
        raise UsageError(f"unknown command {command!r}")
    if job.get("command", command) != command:
        raise UsageError(f"job is for command {job['command']!r}, not {command!r}")
    seed = DEFAULT_SEED if seed is None and "seed" not in job else (seed if seed is not None else job["seed"])
    tol = tol if tol is not None else job.get("tolerance", DEFAULT_TOL.get(command, 1e-8))
    ctx = Ctx(job, command, seed, tol)
    res = HANDLERS[command](ctx)
    res.body = {
        "command": command,
        "job": job,
        "tolerance": tol,
        "provenance": {"tool": "gammaforge", "version": __version__, "seed": seed},
        "exit_code": res.exit_code,
        **res.body,
    }
    return res


def render_body(body: dict) -> str:
    return json.dumps(jsonable(body), sort_keys=True, indent=2, allow_nan=False)


def render_report(body: dict, timestamp: str | None = None) -> str:
    ts = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat()
    return json.dumps({"body": jsonable(body), "generated_at": ts}, sort_keys=True, indent=2, allow_nan=False) + "\n"


def render_csv(columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gammaforge", description="Gamma-calculus verification jobs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--job", required=True, help="JSON job document")
    p.add_argument("--out", help="report path (JSON); a CSV table is written next to it")
    p.add_argument("--seed", type=int, help="random seed (default fixed)")
    p.add_argument("--tol", type=float, help="tolerance override")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        job = json.loads(Path(args.job).read_text())
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: cannot read job {args.job}: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = args.out or (job.get("output", {}).get("report") if isinstance(job, dict) else None)
    try:
        res = run(job, args.command, args.seed, args.tol)
    except ex.ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ex.ExprError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    report = render_report(res.body)
    table = render_csv(res.columns, res.rows)
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report)
        tpath = Path(job.get("output", {}).get("table") or path.with_suffix(".csv"))
        tpath.write_text(table, newline="")
        log.info("wrote %s and %s", path, tpath)
    else:
        sys.stdout.write(report)
    if res.exit_code == EXIT_FAIL:
        print(f"{args.command}: FAILED (see report)", file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
