"""Command-line front end.

Exit codes: 0 success, 1 parameter/usage errors (including a missing TW
cache), 2 numerical or convergence failures, 3 a failed acceptance check
when ``--check`` is given.

Configuration can come from a flat ``key = value`` file (``--config``)
with namespaced keys such as ``ensemble.N`` or ``experiment.trials``;
command-line flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import Distribution, EnsembleParams
from .errors import CacheError, NumericalError, ParameterError
from .experiments import (
    SCHEMA_VERSION,
    ExperimentConfig,
    dumps_report,
    run_density_compare,
    run_edge_norm,
    run_flow_tracking,
    run_local_law,
    run_rigidity_deloc,
    run_tw_limit,
    validate_report,
    write_report,
)
from .law import LawParams, density, dP_dw, edge_newton, spectral_domain, stieltjes, P
from .twref import DEFAULT_COUNT, DEFAULT_N_INTERNAL, build_reference

EXIT_OK, EXIT_PARAM, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

EXPERIMENTS = {
    "local-law": run_local_law,
    "edge-norm": run_edge_norm,
    "tw-limit": run_tw_limit,
    "flow": run_flow_tracking,
    "rigidity": run_rigidity_deloc,
    "density": run_density_compare,
}

# flag dest -> namespaced config key
FLAG_KEYS = {
    "N": "ensemble.N",
    "M": "ensemble.M",
    "d": "ensemble.d",
    "q": "ensemble.q",
    "p": "ensemble.p",
    "dist": "ensemble.dist",
    "s4": "law.s4",
    "t": "experiment.t",
    "trials": "experiment.trials",
    "grid_spec": "experiment.grid_spec",
    "t_grid": "experiment.t_grid",
    "constant": "experiment.constant",
    "bins": "experiment.bins",
    "seed": "seed",
    "jobs": "jobs",
    "out": "out",
    "tw_cache": "tw.cache",
    "count": "tw.count",
    "n_internal": "tw.n_internal",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParameterError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def _floats(spec: str) -> list[float]:
    return [float(x) for x in str(spec).replace(";", ",").split(",") if x.strip()]


def _parse_grid_spec(spec: str):
    """``E_lo:E_hi:nE,eta_lo:eta_hi:neta``; etas are log-spaced."""
    try:
        e_part, eta_part = spec.split(",")
        e0, e1, ne = e_part.split(":")
        h0, h1, nh = eta_part.split(":")
        E = np.linspace(float(e0), float(e1), int(ne))
        eta = np.geomspace(float(h0), float(h1), int(nh))
    except ValueError as exc:
        raise ParameterError(f"bad --grid-spec {spec!r}: expected E_lo:E_hi:nE,eta_lo:eta_hi:neta") from exc
    return E, eta


def _get(cfg, key, cast=None, default=None):
    v = cfg.get(key, default)
    if v is None or cast is None:
        return v
    try:
        return cast(v)
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"bad value for {key}: {v!r}") from exc


def _num(x):
    return float(x) if str(x).strip().lower() not in ("inf", "infinity") else math.inf


def _law_params(cfg) -> LawParams:
    d = _get(cfg, "law.d", _num) or _get(cfg, "ensemble.d", _num)
    if d is None:
        N, M = _get(cfg, "ensemble.N", int), _get(cfg, "ensemble.M", int)
        if N is None or M is None:
            raise ParameterError("law evaluation needs --d (or --N and --M)")
        d = N / M
    q = _get(cfg, "law.q", _num) or _get(cfg, "ensemble.q", _num, math.inf)
    s4 = _get(cfg, "law.s4", _num, 1.0)
    t = _get(cfg, "law.t", _num) or _get(cfg, "experiment.t", _num, 0.0)
    return LawParams(d=d, q=q, s4=s4, t=t)


def _ensemble(cfg, seed: int) -> EnsembleParams:
    N = _get(cfg, "ensemble.N", int)
    if N is None:
        raise ParameterError("--N is required")
    M = _get(cfg, "ensemble.M", int)
    if M is None:
        d = _get(cfg, "ensemble.d", _num, 1.0)
        M = max(1, int(round(N / d)))
    dist = _get(cfg, "ensemble.dist", str, Distribution.SPARSE_BERNOULLI.value)
    try:
        dist = Distribution(dist)
    except ValueError as exc:
        raise ParameterError(f"unknown distribution {dist!r}") from exc
    return EnsembleParams(
        N=N, M=M, p=_get(cfg, "ensemble.p", float), q=_get(cfg, "ensemble.q", float), dist=dist, seed=seed
    )


def _experiment_config(cfg, seed: int, jobs: int) -> ExperimentConfig:
    ens = _ensemble(cfg, seed)
    kw = {}
    if "experiment.grid_spec" in cfg:
        E, eta = _parse_grid_spec(cfg["experiment.grid_spec"])
        kw["E_grid"], kw["eta_grid"] = list(E), list(eta)
    if "experiment.E_grid" in cfg:
        kw["E_grid"] = [e.strip() if e.strip() in ("L_plus", "bulk") else float(e)
                        for e in cfg["experiment.E_grid"].split(",")]
    if "experiment.eta_grid" in cfg:
        kw["eta_grid"] = _floats(cfg["experiment.eta_grid"])
    if "experiment.t_grid" in cfg:
        kw["t_grid"] = _floats(cfg["experiment.t_grid"])
    for key, cast in (("trials", int), ("t", float), ("constant", float), ("quantile", float),
                      ("bins", int), ("j_max", int), ("deloc_eps", float), ("delta", float)):
        v = _get(cfg, f"experiment.{key}", cast)
        if v is not None:
            kw[key] = v
    kw["tw_cache"] = cfg.get("tw.cache")
    return ExperimentConfig(ens, jobs=jobs, **kw)


def _law_eval_csv(cfg) -> str:
    law = _law_params(cfg)
    N = _get(cfg, "ensemble.N", int, 1000)
    if "experiment.grid_spec" in cfg:
        E, eta = _parse_grid_spec(cfg["experiment.grid_spec"])
    else:
        dom = spectral_domain(law)
        E, eta = np.linspace(dom.E_lo, dom.E_hi, 41), np.geomspace(1e-3, 1.0, 4)
    Z = (E[:, None] + 1j * eta[None, :]).ravel()
    w = stieltjes(Z, law)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(["E", "eta", "re_w", "im_w", "rho", "alpha1", "alpha2_abs", "beta", "residual"])
    rho_cache = {}
    for z, wz in zip(Z, w):
        if z.real not in rho_cache:
            rho_cache[z.real] = density(z.real, law)
        beta = 1.0 / (N * z.imag) + 1.0 / law.q_t**2
        writer.writerow([repr(float(v)) for v in (
            z.real, z.imag, wz.real, wz.imag, rho_cache[z.real], wz.imag,
            abs(dP_dw(wz, z, law)), beta, abs(P(wz, z, law)))])
    return buf.getvalue()


def _edges_report(cfg) -> dict:
    law = _law_params(cfg)
    plus = edge_newton(law, "plus").to_dict()
    summary = {"plus": plus}
    if law.d > 1:
        summary["minus"] = edge_newton(law, "minus").to_dict()
    summary.update(
        L_plus=plus["L"],
        L_plus_asym=plus["L_plus_asym"],
        L_minus=summary["minus"]["L"] if law.d > 1 else None,
        L_minus_asym=plus["L_minus_asym"],
        Ldot=plus["Ldot"],
        lambda_plus=law.lam_plus,
        lambda_minus=law.lam_minus,
        passed=True,
    )
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": "edges",
        "version": __version__,
        "config": {"law": law.to_dict()},
        "summary": summary,
        "records": [],
        "warnings": [],
    }


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (u64); drawn from entropy if absent")
    common.add_argument("--jobs", type=int, help="number of concurrent trials")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--check", action="store_true", help="exit 3 if the report's pass criterion fails")
    for flag, typ in (("--N", int), ("--M", int), ("--d", str), ("--q", str), ("--p", float), ("--s4", str),
                      ("--t", float), ("--trials", int), ("--constant", float), ("--bins", int)):
        common.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))
    common.add_argument("--grid-spec", dest="grid_spec", help="E_lo:E_hi:nE,eta_lo:eta_hi:neta")
    common.add_argument("--t-grid", dest="t_grid", help="comma-separated flow times")
    common.add_argument("--dist", choices=[d.value for d in Distribution])
    common.add_argument("--tw-cache", dest="tw_cache", help="path of the TW reference cache")
    common.add_argument("--count", type=int, help="TW reference draws")
    common.add_argument("--n-internal", dest="n_internal", type=int, help="TW tridiagonal dimension")

    parser = _Parser(prog="sparsemp", description="Sparse sample covariance laboratory.")
    parser.add_argument("--version", action="version", version=f"sparsemp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("law-eval", "evaluate w, density and derived parameters on a grid (CSV)"),
        ("edges", "corrected spectral edges (JSON)"),
        ("density", "histogram of pooled eigenvalues against the law"),
        ("local-law", "local law experiment"),
        ("edge-norm", "largest eigenvalue against the corrected edge"),
        ("tw-limit", "Tracy-Widom limit of the rescaled largest eigenvalue"),
        ("flow", "edge tracking along the Dyson matrix flow"),
        ("rigidity", "rigidity and delocalisation"),
        ("tw-build-cache", "build the TW reference cache"),
    ):
        sub.add_parser(name, parents=[common], help=help_)
    return parser


def resolve(args) -> dict:
    cfg = parse_config_file(args.config) if args.config else {}
    for dest, key in FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            cfg[key] = v
    # law subcommands read --d/--q/--s4 as law parameters
    if args.command in ("law-eval", "edges"):
        for k in ("d", "q"):
            if f"ensemble.{k}" in cfg and f"law.{k}" not in cfg:
                cfg[f"law.{k}"] = cfg[f"ensemble.{k}"]
        if "experiment.t" in cfg:
            cfg.setdefault("law.t", cfg["experiment.t"])
    if cfg.get("seed") is None:
        cfg["seed"] = secrets.randbits(64)
    return cfg


def _emit(text: str, out_dir, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
    else:
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        (p / name).write_text(text, encoding="utf-8", newline="")


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return EXIT_PARAM
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        seed = _get(cfg, "seed", int)
        jobs = _get(cfg, "jobs", int, 1)
        out = cfg.get("out")
        cmd = args.command
        if cmd == "law-eval":
            law = _law_params(cfg)
            _emit(_law_eval_csv(cfg), out, f"law-eval_d{law.d:g}_q{law.q:g}_s4{law.s4:g}_t{law.t:g}.csv")
            return EXIT_OK
        if cmd == "edges":
            report = _edges_report(cfg)
            validate_report(report)
            law = _law_params(cfg)
            _emit(dumps_report(report), out, f"edges_d{law.d:g}_q{law.q:g}_s4{law.s4:g}_t{law.t:g}.json")
            return EXIT_OK
        if cmd == "tw-build-cache":
            path = cfg.get("tw.cache")
            if path is None:
                raise ParameterError("--tw-cache is required")
            ref = build_reference(
                count=_get(cfg, "tw.count", int, DEFAULT_COUNT),
                n_internal=_get(cfg, "tw.n_internal", int, DEFAULT_N_INTERNAL),
                seed=seed,
                path=path,
                jobs=jobs,
            )
            sys.stdout.write(json.dumps({"path": str(path), "count": ref.count, "n_internal": ref.n_internal,
                                         "seed": ref.seed, "mean": float(ref.samples.mean()),
                                         "variance": float(ref.samples.var(ddof=1)) if ref.count > 1 else None})
                             + "\n")
            return EXIT_OK
        config = _experiment_config(cfg, seed, jobs)
        report = EXPERIMENTS[cmd](config)
        validate_report(report)
        if out is None:
            sys.stdout.write(dumps_report(report))
        else:
            write_report(report, out)
        if args.check and not report["summary"].get("passed", False):
            return EXIT_CHECK
        return EXIT_OK
    except (ParameterError, CacheError) as exc:
        sys.stderr.write(f"sparsemp: error: {exc}\n")
        return EXIT_PARAM
    except NumericalError as exc:
        sys.stderr.write(f"sparsemp: numerical error: {exc}\n")
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
