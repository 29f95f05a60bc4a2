"""Command-line entry point ``carnot-gap``.

Exit codes: 0 success, 1 verdict failed, 2 usage or structural error, 3 numeric failure.
Indices on the command line and in output files are 1-based.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import get_entry, list_entries
from .diffops import gradient_norm_ratio, gradient_length, sub_laplacian
from .errors import (
    CarnotGapError,
    DictionaryDegenerate,
    DomainError,
    InvalidArgument,
    NotFound,
    NumericFailure,
    PreconditionFailed,
    StructureError,
    UnsupportedOperation,
)
from .groups import CarnotGroup, group_from_json, load_group_file
from .measure import MeasureSpec, estimate_normalization, mcmc_sample
from .quasinorms import preset, sample_sphere, spec_from_json

log = logging.getLogger("carnot_gap")

EXIT_OK, EXIT_VERDICT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- resolution of groups, norms and measures --------------------------------

def _resolve_group(args):
    if getattr(args, "group_file", None):
        return load_group_file(args.group_file), None
    name = getattr(args, "group", None)
    if not name:
        raise UsageError("a group is required (--group NAME, --group-file F or --spec F)")
    entry = get_entry(name)
    return entry.group, entry


def _resolve_norm(args, group, entry):
    name = getattr(args, "norm", None)
    if name is None:
        if entry is None:
            raise UsageError("--norm is required with --group-file")
        return entry.norm()
    if name.lstrip().startswith("{"):
        return spec_from_json(json.loads(name), group)
    if entry is not None and name in entry.norm_presets:
        return entry.norm(name)
    return preset(name, group)


def _load_spec_file(path):
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read spec file {path}: {err}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise StructureError(f"{path}: line {err.lineno}: {err.msg}") from None


def _resolve_measure(args):
    """Group, norm and (a, p) from ``--spec`` and/or individual flags (flags win)."""
    spec = _load_spec_file(args.spec) if getattr(args, "spec", None) else {}
    g = spec.get("group")
    entry = None
    if args.group or args.group_file:
        group, entry = _resolve_group(args)
    elif isinstance(g, str):
        entry = get_entry(g)
        group = entry.group
    elif isinstance(g, dict):
        group = group_from_json(g)
    else:
        raise UsageError("a group is required (--group NAME, --group-file F or --spec F)")
    if args.norm is not None:
        norm = _resolve_norm(args, group, entry)
    elif "norm" in spec:
        n = spec["norm"]
        norm = entry.norm(n) if isinstance(n, str) and entry and n in entry.norm_presets else spec_from_json(n, group)
    elif entry is not None:
        norm = entry.norm()
    else:
        raise UsageError("a norm is required")
    a = args.a if args.a is not None else float(spec.get("a", 1.0))
    p = args.p if args.p is not None else float(spec.get("p", 2.0))
    gamma = getattr(args, "gamma", None) or spec.get("gamma")
    return MeasureSpec(group, norm, a, p, gamma=gamma), entry


def _config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


# -- output -----------------------------------------------------------------

def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def _clean(obj):
    """Replace non-finite floats with strings so payloads stay valid JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


class Run:
    """Collects outputs of one command and writes the manifest next to them."""

    def __init__(self, command, args):
        self.command = command
        self.args = args
        self.start = time.time()
        self.outputs = []

    def write_text(self, path, text):
        if path is None or path == "-":
            sys.stdout.write(text)
            return
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        path.write_text(text)
        self.outputs.append(path)

    def write_json(self, path, payload):
        self.write_text(path, _dumps(_clean(payload)))

    def finish(self, seed=None):
        if not self.outputs:
            return
        first = self.outputs[0]
        manifest = {
            "command": self.command,
            "config": _clean(_config(self.args)),
            "seed": seed,
            "toolVersion": __version__,
            "wallTimeSeconds": round(time.time() - self.start, 3),
            "startedAt": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(self.start)),
            "outputs": {str(p): hashlib.sha256(p.read_bytes()).hexdigest() for p in self.outputs},
        }
        mpath = first.with_name(first.name + ".manifest.json")
        mpath.write_text(_dumps(manifest))


def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("CARNOT_GAP_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"CARNOT_GAP_THREADS={env!r} is not an integer") from None


# -- commands ---------------------------------------------------------------

def cmd_catalog(args, run):
    if args.action == "list":
        payload = [e.summary() for e in list_entries(args.experimental)]
    else:
        if not args.name:
            raise UsageError("catalog show needs an entry name")
        e = get_entry(args.name)
        payload = e.summary()
        payload["group"] = e.group.to_json()
        payload["normPresets"] = {k: v.to_json() for k, v in e.norm_presets.items()}
    run.write_json(args.out, payload)
    return EXIT_OK


def cmd_validate(args, run):
    group, entry = _resolve_group(args)
    payload = {
        "valid": True,
        "name": group.name,
        "n": group.n,
        "step": group.step,
        "weights": list(group.weights),
        "homogeneousDimension": group.strat.homogeneous_dimension,
    }
    run.write_json(args.out, payload)
    return EXIT_OK


def cmd_grad_check(args, run):
    group, entry = _resolve_group(args)
    norm = _resolve_norm(args, group, entry)
    field = norm.build(group)
    rng = np.random.default_rng(args.seed)
    pts = sample_sphere(field, group, args.count, rng) if args.sphere else rng.standard_normal((args.count, group.n))
    glen = gradient_length(group, field, pts)
    lap = sub_laplacian(group, field, pts)
    j0 = args.j0 - 1
    gamma = args.gamma
    ratio, status = gradient_norm_ratio(group, field, j0, gamma, pts)
    lines = []
    header = [f"x{k + 1}" for k in range(group.n)] + ["gradNorm", "subLaplacian", "ratio", "ratioStatus"]
    lines.append(",".join(header))
    for i in range(len(pts)):
        row = [repr(float(v)) for v in pts[i]] + [repr(float(glen[i])), repr(float(lap[i])),
                                                   repr(float(ratio[i])), status[i].value]
        lines.append(",".join(row))
    run.write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_check_condition(args, run):
    from .verifier import estimate_condition_constant

    group, entry = _resolve_group(args)
    norm = _resolve_norm(args, group, entry)
    rep = estimate_condition_constant(group, norm, args.j0 - 1, args.gamma, args.budget, args.seed,
                                      threads=_threads(args))
    payload = rep.to_json()
    payload.update(group=group.name, norm=norm.to_json())
    run.write_json(args.out, payload)
    log.info("infimum %.6g, verdict %s", rep.infimumEstimate, rep.verdict)
    return EXIT_OK if rep.verdict == "holds" else EXIT_VERDICT


def cmd_sample(args, run):
    spec, _ = _resolve_measure(args)
    batch = mcmc_sample(spec, args.count, args.chains, args.seed)
    meta = batch.metadata()
    meta.update(spec=spec.to_json())
    buf = ["# " + json.dumps(_clean(meta), sort_keys=True, default=_json_default)]
    buf.append(",".join(f"x{k + 1}" for k in range(spec.group.n)))
    for row in batch.points:
        buf.append(",".join(repr(float(v)) for v in row))
    run.write_text(args.out, "\n".join(buf) + "\n")
    for f in batch.flags:
        log.warning(f)
    return EXIT_OK


def cmd_ubound_fit(args, run):
    from .verifier import fit_u_bound_constants, ubound_function_sets

    spec, _ = _resolve_measure(args)
    if args.gamma is None:
        raise UsageError("--gamma is required")
    q = args.q if args.q is not None else spec.p / (spec.p - 1)
    train, hold = ubound_function_sets(spec.group, args.dict_degree, args.train, args.holdout, args.seed)
    batch = mcmc_sample(spec, args.count, args.chains, args.seed)
    fit = fit_u_bound_constants(spec.group, spec.norm, args.j0 - 1, args.gamma, spec.p, q, train, hold,
                                batch.points, seed=args.seed)
    payload = fit.to_json()
    payload.update(spec=spec.to_json(), j0=args.j0, samples=batch.metadata())
    if payload.get("worstHoldoutIndex") is not None:
        payload["worstHoldoutIndex"] += 1
    run.write_json(args.out, payload)
    return EXIT_OK if fit.passed else EXIT_VERDICT


def _gap_estimates(args, spec):
    from .spectral import build_dictionary, grid_gap_oracle, ritz_gap_estimate

    out = {}
    if args.method in ("ritz", "both"):
        batch = mcmc_sample(spec, args.count, args.chains, args.seed)
        d = build_dictionary(spec, args.dict_degree)
        out["ritz"] = ritz_gap_estimate(spec, d, batch, seed=args.seed)
    if args.method in ("grid", "both"):
        out["grid"] = grid_gap_oracle(spec, points_per_axis=args.grid_points)
    return out


def cmd_estimate_gap(args, run):
    spec, _ = _resolve_measure(args)
    est = _gap_estimates(args, spec)
    payload = {"spec": spec.to_json(), "estimates": {k: v.to_json() for k, v in est.items()}}
    for v in payload["estimates"].values():
        v["diagnostics"].pop("seconds", None)
        v["diagnostics"].pop("eigenfunctionCoefficients", None)
    if len(est) == 2:
        r, g = est["ritz"].lambda1, est["grid"].lambda1
        payload["relativeDifference"] = abs(r - g) / g
    if args.normalization:
        Z, rel = estimate_normalization(spec, seed=args.seed)
        payload["normalization"] = {"Z": Z, "relativeError": rel}
    run.write_json(args.out, payload)
    if args.emit_plot:
        _emit_plot(args, spec, run)
    return EXIT_OK


def _emit_plot(args, spec, run):
    from .spectral import build_dictionary, grid_gap_oracle, ritz_gap_estimate

    rows = ["curve,size,lambda1"]
    if args.method in ("ritz", "both"):
        batch = mcmc_sample(spec, args.count, args.chains, args.seed)
        for D in range(1, args.dict_degree + 1):
            d = build_dictionary(spec, D)
            rows.append(f"ritz,{len(d)},{ritz_gap_estimate(spec, d, batch, bootstrap=0).lambda1!r}")
    if args.method in ("grid", "both"):
        P = args.grid_points
        sizes = sorted({max(3, (P // 4) | 1), max(3, (P // 2) | 1), P})
        for s in sizes:
            g = grid_gap_oracle(spec, points_per_axis=s)
            rows.append(f"grid,{min(g.sizeParams['spacing'])!r},{g.lambda1!r}")
    run.write_text(args.emit_plot, "\n".join(rows) + "\n")


def cmd_poincare_ratio(args, run):
    from .spectral import build_dictionary, empirical_poincare_ratio

    spec, _ = _resolve_measure(args)
    batch = mcmc_sample(spec, args.count, args.chains, args.seed)
    d = build_dictionary(spec, args.dict_degree)
    res = empirical_poincare_ratio(spec, args.q, d, batch, seed=args.seed, theorem_mode=not args.exploration)
    payload = res.to_json()
    payload["spec"] = spec.to_json()
    run.write_json(args.out, payload)
    return EXIT_OK


def _report_key(doc):
    spec = doc.get("spec") or {}
    group = spec.get("group") or doc.get("group") or "?"
    norm = spec.get("norm") or doc.get("norm") or "?"
    p = spec.get("p", doc.get("p", "-"))
    return group, json.dumps(norm, sort_keys=True), p


def cmd_report(args, run):
    groups = {}
    for path in args.inputs:
        doc = _load_spec_file(path)
        if not isinstance(doc, dict):
            raise StructureError(f"{path}: expected a JSON object")
        groups.setdefault(_report_key(doc), []).append((path, doc))
    md = ["# carnot-gap report", ""]
    rows = ["group,norm,p,source,quantity,value"]
    for (group, norm, p), docs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        md.append(f"## {group} | p = {p}")
        md.append("")
        md.append(f"norm: `{norm}`")
        md.append("")
        md.append("| source | quantity | value |")
        md.append("|---|---|---|")
        for path, doc in docs:
            for q, v in _report_quantities(doc):
                md.append(f"| {Path(path).name} | {q} | {v} |")
                rows.append(",".join(json.dumps(str(x)) for x in (group, norm, p, Path(path).name, q, v)))
        md.append("")
    out_dir = Path(args.out_dir)
    run.write_text(out_dir / "report.md", "\n".join(md) + "\n")
    run.write_text(out_dir / "report.csv", "\n".join(rows) + "\n")
    return EXIT_OK


def _report_quantities(doc):
    keys = ("infimumEstimate", "verdict", "A", "B", "worstHoldoutMargin", "passed", "ratio", "q",
            "relativeDifference")
    for k in keys:
        if k in doc:
            yield k, doc[k]
    for name, est in (doc.get("estimates") or {}).items():
        yield f"lambda1[{name}]", est.get("lambda1")
        if est.get("mcStderr"):
            yield f"stderr[{name}]", est.get("mcStderr")


# -- parser -----------------------------------------------------------------

def _add_group(p, norm=True):
    p.add_argument("--group", help="catalog entry name")
    p.add_argument("--group-file", help="group JSON file")
    if norm:
        p.add_argument("--norm", help="norm preset name or JSON object")


def _add_measure(p):
    _add_group(p)
    p.add_argument("--spec", help="JSON file composing group, norm, a, p")
    p.add_argument("--a", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--count", type=int, default=100_000, help="Monte Carlo sample count")
    p.add_argument("--chains", type=int, default=4)


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output file (default: standard output)")


def build_parser():
    parser = _Parser(prog="carnot-gap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("catalog", help="list or show catalog entries")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.add_argument("--experimental", action="store_true")
    _common(p)
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("validate", help="structural checks on a group")
    _add_group(p, norm=False)
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("grad-check", help="CSV of |grad N|, sub-Laplacian and gradient ratio")
    _add_group(p)
    p.add_argument("--j0", type=int, default=1)
    p.add_argument("--gamma", type=int, default=2)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--sphere", action="store_true", help="sample on {N = 1}")
    _common(p)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("check-condition", help="estimate the gradient condition constant")
    _add_group(p)
    p.add_argument("--j0", type=int, required=True)
    p.add_argument("--gamma", type=int, required=True)
    p.add_argument("--budget", type=int, default=100_000)
    _common(p)
    p.set_defaults(func=cmd_check_condition)

    p = sub.add_parser("sample", help="MCMC samples of exp(-a N^p)")
    _add_measure(p)
    p.add_argument("--gamma", type=int)
    _common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("ubound-fit", help="fit the U-bound constants A, B")
    _add_measure(p)
    p.add_argument("--j0", type=int, default=1)
    p.add_argument("--gamma", type=int)
    p.add_argument("--q", type=float)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--holdout", type=int, default=200)
    p.add_argument("--dict-degree", type=int, default=2)
    _common(p)
    p.set_defaults(func=cmd_ubound_fit)

    p = sub.add_parser("estimate-gap", help="spectral gap by Ritz and/or grid")
    _add_measure(p)
    p.add_argument("--method", choices=["ritz", "grid", "both"], default="both")
    p.add_argument("--dict-degree", type=int, default=6)
    p.add_argument("--grid-points", type=int, default=2001)
    p.add_argument("--normalization", action="store_true", help="also report an estimate of Z")
    p.add_argument("--emit-plot", help="CSV of convergence curves")
    _common(p)
    p.set_defaults(func=cmd_estimate_gap)

    p = sub.add_parser("poincare-ratio", help="empirical q-Poincare ratio")
    _add_measure(p)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--dict-degree", type=int, default=6)
    p.add_argument("--exploration", action="store_true", help="allow q not conjugate to p")
    _common(p)
    p.set_defaults(func=cmd_poincare_ratio)

    p = sub.add_parser("report", help="bundle JSON outputs into markdown and CSV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_report, seed=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            log.setLevel(logging.DEBUG)
        if not args.command:
            raise UsageError("a subcommand is required")
        run = Run(args.command, args)
        code = args.func(args, run)
        run.finish(getattr(args, "seed", None))
        return code
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (StructureError, InvalidArgument, NotFound, DomainError, PreconditionFailed,
            UnsupportedOperation) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericFailure, DictionaryDegenerate) as err:
        point = getattr(err, "point", None)
        extra = f" at {point}" if point is not None else ""
        print(f"numeric failure: {err}{extra}", file=sys.stderr)
        return EXIT_NUMERIC
    except CarnotGapError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
