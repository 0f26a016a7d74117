"""Command line runner.

    python -m fractalcover <subcommand> [flags]

Subcommands: validate-measure, scan, estimate-critical, compare-open-closed,
dump-realization.  A --config file holds flat key=value lines whose keys are
flag names without the leading dashes; flags given on the command line win.

Exit codes: 0 success, 2 configuration error, 3 failed check (--check).
"""

import argparse
import csv
import json
import math
import os
import sys

from . import experiments as ex
from .sampler import SampleConfig, dump_realization, sample_process

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3

# flag name -> (config attribute, parser)
_KEYS = {
    "family": ("family", str),
    "dim": ("dim", int),
    "lambda": ("lam", float),
    "lambda-grid": ("lam_grid", lambda s: tuple(float(x) for x in s.split(",") if x.strip())),
    "n": ("n_max", int),
    "bigN": ("N", int),
    "depth": ("L", int),
    "replicates": ("replicates", int),
    "seed": ("seed", int),
    "out": ("out", str),
    "tau": ("tau", float),
    "probe": ("probe", str),
    "steps": ("steps", int),
    "bracket": ("bracket", lambda s: tuple(float(x) for x in s.split(","))),
}


def _parse_param(text):
    key, _, value = text.partition("=")
    if not key or not _:
        raise ex.ConfigError(f"parameter {text!r} is not key=value")
    try:
        return key.strip(), int(value)
    except ValueError:
        try:
            return key.strip(), float(value)
        except ValueError:
            return key.strip(), value.strip()


def read_config_file(path):
    """Flat key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().lstrip("-")
            if not sep:
                raise ex.ConfigError(f"{path}:{lineno}: expected key=value")
            if key not in _KEYS and not key.startswith("param."):
                raise ex.ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def build_config(args):
    values = {}
    params = {}
    if args.config:
        for key, value in read_config_file(args.config).items():
            if key.startswith("param."):
                params[key[6:]] = _parse_param(f"{key[6:]}={value}")[1]
            else:
                values[key] = value
    for key in _KEYS:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            values[key] = v
    for text in args.param or []:
        k, v = _parse_param(text)
        params[k] = v
    kw = {}
    for key, value in values.items():
        attr, conv = _KEYS[key]
        try:
            kw[attr] = conv(value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ex.ConfigError(f"bad value for {key}: {value!r}") from exc
    kw["params"] = params
    return ex.ExperimentConfig(**kw)


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def _write_csv(rows, path, fields=None):
    fields = fields or (list(rows[0].keys()) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fields})


def _out_dir(cfg):
    d = cfg.out or "."
    os.makedirs(d, exist_ok=True)
    return d


def cmd_validate(cfg, args):
    rep = ex.validate_measure(cfg)
    d = _out_dir(cfg)
    _write_json(rep, os.path.join(d, "validate.json"))
    _write_csv(rep["sequences"], os.path.join(d, "sequences.csv"),
               ["sequence", "n", "value", "limit", "error", "method"])
    trend_rows = []
    for name in ("extracond", "thinness"):
        t = rep[name]
        for k, v, lo, hi in zip(t["k"], t["values"], t["lower"], t["upper"]):
            trend_rows.append({"integral": name, "k": k, "value": v, "lower": lo, "upper": hi,
                               "method": t["method"]})
    _write_csv(trend_rows, os.path.join(d, "trends.csv"),
               ["integral", "k", "value", "lower", "upper", "method"])
    for c in rep["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}: {c['detail']}")
    print(f"mu(A_1) = {rep['mu_A1']['value']!r} [{rep['mu_A1']['method']}]")
    print(f"lambda_e = {rep['lambda_e']['value']!r} [analytic]")
    print(f"extracond: {rep['extracond']['verdict']}; thinness: {rep['thinness']['verdict']}; "
          f"thin: {'yes' if rep['thin']['value'] else 'no'}")
    return rep["passed"]


def cmd_scan(cfg, args):
    res = ex.scan_lambda(cfg)
    d = _out_dir(cfg)
    _write_csv(res["boxes"], os.path.join(d, "scan_boxes.csv"))
    _write_csv(res["survival"], os.path.join(d, "scan_survival.csv"))
    _write_json({"config": res["config"]}, os.path.join(d, "scan.json"))
    freqs = [r["survival"] for r in res["survival"]]
    for r in res["survival"]:
        print(f"lambda = {r['lambda']!r}: survival {r['survival']:.3f} +- {r['se']:.3f}")
    if cfg.probe != "uncovered":
        return True
    return all(a >= b for a, b in zip(freqs, freqs[1:]))


def cmd_critical(cfg, args):
    try:
        est = ex.estimate_critical(cfg)
    except ex.BracketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise ex.ConfigError(str(exc)) from exc
    d = _out_dir(cfg)
    _write_json({"config": cfg.echo(), "estimate": est.as_json()}, os.path.join(d, "critical.json"))
    _write_csv([{"lambda": a, "survival": b} for a, b in est.frequencies],
               os.path.join(d, "critical_probes.csv"), ["lambda", "survival"])
    print(f"lambda_hat = {est.lam_hat!r} in [{est.lo!r}, {est.hi!r}] "
          f"(reference {est.reference!r}, relative error {est.rel_error:.4f})")
    return est.rel_error <= args.check_tol


def cmd_compare(cfg, args):
    res = ex.compare_open_closed(cfg)
    d = _out_dir(cfg)
    _write_json(res, os.path.join(d, "compare.json"))
    print(f"boxes differing: {res['boxes_differing']} of {res['boxes_compared']}")
    print(f"closed: {res['closed']['lambda_hat']!r}, open: {res['open']['lambda_hat']!r}, "
          f"overlap: {'yes' if res['bracket_overlap'] else 'no'}")
    return res["bracket_overlap"] and res["boxes_differing"] == 0


def cmd_dump(cfg, args):
    if cfg.lam is None:
        raise ex.ConfigError("dump-realization needs --lambda")
    m = cfg.build_measure()
    r = sample_process(SampleConfig(m, cfg.lam, cfg.n_max, seed=cfg.seed))
    d = _out_dir(cfg)
    path = os.path.join(d, "realization.jsonl")
    dump_realization(r, path)
    print(f"{len(r)} sets written to {path}")
    return True


COMMANDS = {
    "validate-measure": cmd_validate,
    "scan": cmd_scan,
    "estimate-critical": cmd_critical,
    "compare-open-closed": cmd_compare,
    "dump-realization": cmd_dump,
}


def make_parser():
    p = argparse.ArgumentParser(prog="fractalcover", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--family")
        s.add_argument("--dim", type=str)
        s.add_argument("--lambda", dest="lambda", type=str)
        s.add_argument("--lambda-grid", dest="lambda_grid", type=str, help="comma separated, increasing")
        s.add_argument("--n", type=str, help="grid depth for box tables / realization depth")
        s.add_argument("--bigN", type=str, help="levels per generation")
        s.add_argument("--depth", type=str, help="generations L; the probe depth is bigN * depth")
        s.add_argument("--replicates", type=str)
        s.add_argument("--seed", type=str)
        s.add_argument("--out", type=str, help="output directory")
        s.add_argument("--tau", type=str)
        s.add_argument("--probe", type=str, choices=ex.PROBES)
        s.add_argument("--steps", type=str)
        s.add_argument("--bracket", type=str, help="lo,hi as multiples of the closed-form value")
        s.add_argument("--param", action="append", help="family parameter key=value (repeatable)")
        s.add_argument("--config", type=str, help="flat key=value file")
        s.add_argument("--check", action="store_true", help="exit 3 when the run's check fails")
        s.add_argument("--check-tol", type=float, default=0.25,
                       help="relative error accepted by estimate-critical --check")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        ok = COMMANDS[args.command](cfg, args)
    except (ex.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.check and not ok:
        return EXIT_CHECK
    return EXIT_OK
