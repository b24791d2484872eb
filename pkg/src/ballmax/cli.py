"""Config-driven experiment runner.

A config is an INI file::

    [integrand]
    family = linear-cutoff
    a = 1
    p = 2
    n = 1
    ; any other key is a family parameter (c, m, gamma, q); a tabulated family
    ; reads ``table = file.csv`` relative to the config file

    [grid]
    r_max_multiple = 4      ; or r_max = <absolute radius>
    n_r = 512
    n_dir = 128

    [run]
    seed = 0
    output = results
    workers = 1
    check_hypotheses = true

    [tolerances]
    tol_scale = 1
    hypothesis_tol = 1e-10

    [family:translate_ball]
    taus = 0.02, 0.04, 0.06  ; multiples of the ball radius R for every family
    seeds = 0, 1             ; random families only, offsets to the global seed

Exit status: 0 all checks pass, 2 config error, 3 hypothesis failure,
4 inequality violation.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import integrand, perturb, radial, stability

OUT_ENV = "BALLMAX_OUT"
DEFAULT_OUT = "ballmax-out"

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_INEQUALITY = 0, 2, 3, 4

HYPOTHESIS_COLUMNS = (
    "family", "params", "n", "p", "a", "h1_pass", "h1_violation", "condition_pass",
    "condition_violation", "strict_decrease_pass", "lambda_hat", "h2_pass", "h2_violation",
    "h2_alpha_integral",
)
CHAIN_COLUMNS = (
    "family", "tau", "seed", "F_u", "F_v", "F_w", "gap_uv", "gap_vw", "delta", "tol_chain",
    "quad_error", "ok",
)

_INTEGRAND_KEYS = {"family", "a", "p", "n", "table"}
UNIQUENESS_LHS = 0.01
UNIQUENESS_FACTOR = 10.0


class ConfigError(ValueError):
    """The config file cannot be parsed into an :class:`ExperimentConfig`."""


@dataclass(frozen=True)
class FamilySweep:
    family: str
    taus: tuple
    seeds: tuple = (0,)


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    params: dict = field(default_factory=dict)
    a: float = 1.0
    p: float = 2.0
    n: int = 1
    table: str | None = None
    r_max: float | None = None
    r_max_multiple: float = 4.0
    n_r: int = 512
    n_dir: int | None = None
    sweeps: tuple = ()
    output: str | None = None
    seed: int = 0
    workers: int = 1
    check_hypotheses: bool = True
    tol_scale: float = 1.0
    hypothesis_tol: float = integrand.TOL
    base_dir: str = "."


# ---------------------------------------------------------------------------
# parsing and validation


def _floats(text, key):
    try:
        return tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a list of numbers, got {text!r}") from exc


def _get(section, key, conv, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: cannot read {raw!r}") from exc


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(text)
    return int(value)


def parse_config(path):
    """Read an INI file into an :class:`ExperimentConfig` (raises :class:`ConfigError`)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_parser(parser, base_dir=str(Path(path).resolve().parent))


def config_from_parser(parser, base_dir="."):
    if "integrand" not in parser:
        raise ConfigError("missing [integrand] section")
    sec = parser["integrand"]
    if "family" not in sec:
        raise ConfigError("[integrand] needs a family")
    params = {k: _get(sec, k, float, None) for k in sec if k not in _INTEGRAND_KEYS}
    grid = parser["grid"] if "grid" in parser else {}
    run = parser["run"] if "run" in parser else {}
    tols = parser["tolerances"] if "tolerances" in parser else {}

    def get(s, key, conv, default):
        return _get(s, key, conv, default) if s else default

    sweeps = []
    for name in parser.sections():
        if not name.startswith("family:"):
            continue
        fs = parser[name]
        taus = _floats(fs.get("taus", "0"), f"[{name}] taus")
        seeds = tuple(int(s) for s in _floats(fs.get("seeds", "0"), f"[{name}] seeds"))
        sweeps.append(FamilySweep(name.split(":", 1)[1].strip(), taus, seeds))
    return ExperimentConfig(
        family=sec["family"].strip(),
        params=params,
        a=_get(sec, "a", float, 1.0),
        p=_get(sec, "p", float, 2.0),
        n=_get(sec, "n", _int, 1),
        table=sec.get("table"),
        r_max=get(grid, "r_max", float, None),
        r_max_multiple=get(grid, "r_max_multiple", float, 4.0),
        n_r=get(grid, "n_r", _int, 512),
        n_dir=get(grid, "n_dir", _int, None),
        sweeps=tuple(sweeps),
        output=run.get("output") if run else None,
        seed=get(run, "seed", _int, 0),
        workers=get(run, "workers", _int, 1),
        check_hypotheses=parser.getboolean("run", "check_hypotheses", fallback=True),
        tol_scale=get(tols, "tol_scale", float, 1.0),
        hypothesis_tol=get(tols, "hypothesis_tol", float, integrand.TOL),
        base_dir=base_dir,
    )


def _radius(cfg):
    return (math.gamma(cfg.n / 2 + 1) / (math.pi ** (cfg.n / 2) * cfg.a**cfg.p)) ** (1.0 / cfg.n)


def truncation_radius(cfg):
    return cfg.r_max if cfg.r_max is not None else cfg.r_max_multiple * _radius(cfg)


def validate(cfg):
    """Human-readable problems with ``cfg``; empty iff :func:`run` would start."""
    out = []
    if cfg.n not in (1, 2, 3):
        out.append(f"unsupported dimension n={cfg.n} (expected 1, 2 or 3)")
    if cfg.family not in integrand.FAMILIES:
        out.append(f"unknown integrand family {cfg.family!r}")
    if not cfg.a > 0:
        out.append("amplitude cap a must be positive")
    if not cfg.p >= 1:
        out.append("constraint exponent p must be >= 1")
    if cfg.n_r < 16 or cfg.n_r % 2:
        out.append("n_r must be an even integer >= 16")
    if cfg.n_dir is not None and cfg.n_dir < 1:
        out.append("n_dir must be >= 1")
    if cfg.workers < 1:
        out.append("workers must be >= 1")
    if not cfg.tol_scale > 0 or not cfg.hypothesis_tol >= 0:
        out.append("tolerances must be positive")
    if cfg.family == "tabulated":
        if not cfg.table:
            out.append("tabulated family needs table = <csv file>")
        elif not Path(cfg.base_dir, cfg.table).is_file():
            out.append(f"table file {cfg.table!r} not found")
    if out:
        return out
    R = _radius(cfg)
    R_max = truncation_radius(cfg)
    if not R_max >= R:
        out.append(f"truncation smaller than maximizer: R_max={R_max:g} < R={R:g}")
    if not cfg.sweeps:
        out.append("no perturbation families configured")
    for sw in cfg.sweeps:
        if sw.family not in perturb.FAMILIES:
            out.append(f"unknown perturbation family {sw.family!r}")
            continue
        for tau in sw.taus:
            if not tau >= 0:
                out.append(f"{sw.family}: tau must be >= 0, got {tau:g}")
            elif sw.family == "translate_ball" and tau * R >= R_max - R and tau > 0:
                out.append(f"{sw.family}: tau={tau:g} needs tau*R < R_max - R")
            elif sw.family in ("dilate_ball",) and tau >= 1:
                out.append(f"{sw.family}: tau={tau:g} must be < 1")
            elif sw.family in ("scale_height", "smooth_bump") and tau > 1:
                out.append(f"{sw.family}: tau={tau:g} must be <= 1")
    try:
        build_integrand(cfg)
    except (ValueError, OSError) as exc:
        out.append(f"integrand: {exc}")
    return out


def _read_table(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    s_values = [float(v) for v in rows[0][1:]]
    r_values = [float(r[0]) for r in rows[1:]]
    values = [[float(v) for v in r[1:]] for r in rows[1:]]
    return r_values, s_values, values


def build_integrand(cfg):
    if cfg.family == "tabulated":
        r, s, v = _read_table(Path(cfg.base_dir, cfg.table))
        return integrand.tabulated(r, s, v, a=cfg.a, p=cfg.p, n=cfg.n)
    params = dict(cfg.params)
    if cfg.family == "linear-cutoff":
        # c = R_max keeps F(., a) strictly decreasing on the whole truncated domain
        params.setdefault("c", truncation_radius(cfg))
    return integrand.Integrand(cfg.family, params, a=cfg.a, p=cfg.p, n=cfg.n)


# ---------------------------------------------------------------------------
# running


def competitor_specs(cfg):
    """Perturbation specs in config order; tau is converted from units of R."""
    R = _radius(cfg)
    out = []
    for sw in cfg.sweeps:
        seeds = sw.seeds if sw.family == "random_rays" else (0,)
        for tau in sw.taus:
            t = tau * R if sw.family == "translate_ball" else tau
            for s in seeds:
                out.append(perturb.PerturbationSpec(sw.family, t, cfg.seed + s))
    return out


@lru_cache(maxsize=4)
def _setup(cfg):
    F = build_integrand(cfg)
    grid = radial.build_grid(cfg.n, truncation_radius(cfg), cfg.n_r, cfg.n_dir)
    profile = radial.ball_radius(cfg.n, cfg.a, cfg.p, F, grid.R_max)
    return F, grid, profile


def _hashable(cfg):
    return replace(cfg, params=tuple(sorted(cfg.params.items())))


def _run_one(args):
    hcfg, spec = args
    F, grid, profile = _setup(hcfg)
    u = perturb.generate(spec, profile, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", radial.ConstraintWarning)
        return stability.stability_report(
            F, u, family=spec.family, tau=spec.tau, tol_scale=hcfg.tol_scale, check_hypotheses=False
        )


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if v is None:
        return ""
    return str(v)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


@dataclass
class RunResult:
    status: int
    out_dir: Path
    checks: dict
    messages: list


def output_dir(cfg, override=None):
    if override:
        return Path(override)
    if cfg.output:
        return Path(cfg.base_dir, cfg.output)
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def _hypothesis_row(cfg, F, grid):
    hyp = integrand.hypothesis_report(F, grid.r_nodes, tol=cfg.hypothesis_tol)
    row = {c: getattr(hyp, c, None) for c in HYPOTHESIS_COLUMNS}
    row.update(family=F.family, params=stability.describe(F), n=F.n, p=float(F.p), a=float(F.a))
    return hyp, row


def run(cfg, out=None, workers=None, tol_scale=None):
    """Run every configured sweep and write the CSV tables and ``summary.txt``."""
    problems = validate(cfg)
    if problems:
        return RunResult(EXIT_CONFIG, output_dir(cfg, out), {}, problems)
    if tol_scale is not None:
        cfg = replace(cfg, tol_scale=float(tol_scale))
    workers = cfg.workers if workers is None else int(workers)
    dest = output_dir(cfg, out)
    dest.mkdir(parents=True, exist_ok=True)
    hcfg = _hashable(cfg)
    F, grid, profile = _setup(hcfg)
    hyp, hrow = _hypothesis_row(cfg, F, grid)
    _write_csv(dest / "hypotheses.csv", HYPOTHESIS_COLUMNS, [hrow])

    checks = {}
    messages = []
    # lambda > 0 is needed to form any stability ratio, checks enabled or not
    failed = (hyp.failed if cfg.check_hypotheses else []) + ([] if hyp.lambda_hat > 0 else ["lambda"])
    if cfg.check_hypotheses or failed:
        checks["hypotheses"] = not failed
        if failed:
            messages.append("hypothesis failure: " + ", ".join(failed))
            for name in ("chain.csv", "stability.csv"):
                (dest / name).unlink(missing_ok=True)
            _write_summary(dest, cfg, checks, messages, None, EXIT_HYPOTHESIS)
            return RunResult(EXIT_HYPOTHESIS, dest, checks, messages)

    specs = competitor_specs(cfg)
    jobs = [(hcfg, s) for s in specs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_one(j) for j in jobs]
    reports = results

    chain_rows, stab_rows = [], []
    for spec, rep in zip(specs, reports):
        chain_rows.append(
            dict(
                family=spec.family, tau=float(spec.tau), seed=spec.seed, F_u=rep.F_u, F_v=rep.F_v,
                F_w=rep.F_w, gap_uv=rep.F_v - rep.F_u, gap_vw=rep.F_w - rep.F_v, delta=rep.delta,
                tol_chain=rep.tol_chain, quad_error=rep.quad_error, ok=rep.chain_ok,
            )
        )
        stab_rows.append(dict(zip(stability.CSV_COLUMNS, rep.csv_row())))
    _write_csv(dest / "chain.csv", CHAIN_COLUMNS, chain_rows)
    _write_csv(dest / "stability.csv", stability.CSV_COLUMNS, stab_rows)

    checks["maximality"] = all(r.delta >= -r.tol_chain for r in reports)
    checks["chain"] = all(r.chain_ok for r in reports)
    checks["quant1"] = all(r.quant1_ok for r in reports)
    checks["quant2"] = all(r.quant2_ok for r in reports)
    checks["lhs_bound"] = all(r.lhs_bound_ok for r in reports)
    if hyp.strict_decrease_pass:
        checks["uniqueness"] = all(
            r.delta > UNIQUENESS_FACTOR * r.quad_error for r in reports if r.lhs >= UNIQUENESS_LHS
        )
    for name, ok in checks.items():
        if not ok:
            messages.append(f"inequality violation: {name}")
    constant = None
    live = [r for r in reports if r.ratio > 0]
    if live:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", stability.CalibrationWarning)
            constant = stability.calibrate_constant(live)
    status = EXIT_OK if all(checks.values()) else EXIT_INEQUALITY
    _write_summary(dest, cfg, checks, messages, constant, status, len(reports))
    return RunResult(status, dest, checks, messages)


def _write_summary(dest, cfg, checks, messages, constant, status, runs=0):
    lines = [
        f"integrand: {cfg.family} n={cfg.n} p={cfg.p:g} a={cfg.a:g}",
        f"grid: R_max={truncation_radius(cfg):.17g} n_r={cfg.n_r} n_dir={cfg.n_dir or radial.DEFAULT_N_DIR[cfg.n]}",
        f"competitors: {runs}",
    ]
    for name, ok in checks.items():
        lines.append(f"{name}: {'PASS' if ok else 'FAIL'}")
    if constant is not None:
        lines.append(f"calibrated constant C(n={constant.n}, p={constant.p:g}, a={constant.a:g}): "
                     f"{constant.value:.17g} over {constant.runs} runs")
    lines.extend(messages)
    lines.append(f"status: {status} ({'PASS' if status == EXIT_OK else 'FAIL'})")
    (dest / "summary.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# command line


def build_parser():
    ap = argparse.ArgumentParser(prog="ballmax", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the configured sweeps")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default: config, then ${OUT_ENV}, then ./{DEFAULT_OUT})")
    r.add_argument("--workers", type=int, help="parallel competitor runs")
    r.add_argument("--tol-scale", type=float, help="multiply the chain tolerance")
    v = sub.add_parser("validate", help="list problems with a config")
    v.add_argument("config")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        problems = validate(cfg)
        for msg in problems:
            print(msg)
        return EXIT_OK if not problems else EXIT_CONFIG
    if args.workers is not None and args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    res = run(cfg, out=args.out, workers=args.workers, tol_scale=args.tol_scale)
    for msg in res.messages:
        print(msg, file=sys.stderr)
    if res.status != EXIT_CONFIG:
        print(f"wrote {res.out_dir}")
    return res.status


if __name__ == "__main__":
    sys.exit(main())
