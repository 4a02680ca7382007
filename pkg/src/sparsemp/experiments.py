"""Monte Carlo harness for the local law, edge location and edge statistics.

Stochastic domination ``A < B`` is checked as ``A <= C * B`` on at least a
``quantile`` fraction of instances, with ``C`` configurable (default 10).

Every ``run_*`` function returns a JSON-serialisable report dict carrying the
resolved configuration, the package version, per-record data and a summary.
Trials are independent given ``(seed, trial)`` and results are assembled in
trial order, so reports do not depend on ``jobs``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .ensemble import (
    STREAM_GAUSS_REF,
    EnsembleParams,
    MatrixSample,
    dyson_flow_at,
    flow_state,
    gaussian_matrix,
    sample_matrix,
    trial_rng,
)
from .errors import ParameterError, SparseMPError
from .law import (
    LawParams,
    classical_locations,
    edge_asymptotic,
    edge_newton,
    integrated_density,
    spectral_domain,
    stieltjes,
    support_edges,
    tw_gamma,
)
from .spectra import delocalization_parts, eigenvalues, empirical_stieltjes
from .twref import load_reference, ks_distance

__all__ = [
    "ExperimentConfig",
    "SCHEMA_VERSION",
    "REPORT_SCHEMA",
    "run_local_law",
    "run_edge_norm",
    "run_tw_limit",
    "run_flow_tracking",
    "run_rigidity_deloc",
    "run_density_compare",
    "validate_report",
    "write_report",
]

SCHEMA_VERSION = 1

REPORT_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "experiment", "version", "config", "summary", "records", "warnings"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "experiment": {
            "enum": ["local-law", "edge-norm", "tw-limit", "flow", "rigidity", "density", "edges", "law-eval"]
        },
        "version": {"type": "string"},
        "config": {"type": "object"},
        "summary": {"type": "object"},
        "records": {"type": "array", "items": {"type": "object"}},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}


@dataclass
class ExperimentConfig:
    """Resolved configuration of one experiment run.

    ``E_grid`` and ``eta_grid`` default per experiment; ``E_grid`` entries may
    be the strings ``"L_plus"`` and ``"bulk"``, resolved against the law.
    """

    ensemble: EnsembleParams
    trials: int = 20
    t: float = 0.0
    E_grid: Optional[Sequence] = None
    eta_grid: Optional[Sequence[float]] = None
    t_grid: Optional[Sequence[float]] = None
    constant: float = 10.0
    quantile: float = 0.95
    deloc_eps: float = 0.25
    j_max: int = 20
    bins: int = 40
    delta: float = 0.0
    tw_cache: Optional[str] = None
    jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")
        if self.jobs < 1:
            raise ParameterError("jobs must be at least 1")
        if not 0 < self.quantile <= 1:
            raise ParameterError("quantile must lie in (0, 1]")

    @property
    def law(self) -> LawParams:
        return LawParams.from_ensemble(self.ensemble, self.t)

    def to_dict(self) -> dict:
        # jobs is deliberately left out: reports must not depend on it
        return {
            "ensemble": self.ensemble.to_dict(),
            "law": self.law.to_dict(),
            "trials": self.trials,
            "t": self.t,
            "E_grid": None if self.E_grid is None else [e if isinstance(e, str) else float(e) for e in self.E_grid],
            "eta_grid": None if self.eta_grid is None else [float(x) for x in self.eta_grid],
            "t_grid": None if self.t_grid is None else [float(x) for x in self.t_grid],
            "constant": self.constant,
            "quantile": self.quantile,
            "deloc_eps": self.deloc_eps,
            "j_max": self.j_max,
            "bins": self.bins,
            "delta": self.delta,
            "tw_cache": self.tw_cache,
        }


def _iter_trials(fn, trials: int, jobs: int):
    """Yield ``fn(k)`` in trial order, running up to ``jobs`` trials concurrently."""
    if jobs == 1:
        for k in range(trials):
            yield fn(k)
        return
    with ThreadPoolExecutor(jobs) as pool:
        yield from pool.map(fn, range(trials))


def _map_trials(fn, trials: int, jobs: int):
    return list(_iter_trials(fn, trials, jobs))


def _report(name: str, config: ExperimentConfig, summary: dict, records: list, warns: list) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": name,
        "version": __version__,
        "config": config.to_dict(),
        "summary": summary,
        "records": records,
        "warnings": warns,
    }


def _flowed(config: ExperimentConfig, trial: int, t: float) -> MatrixSample:
    X0 = sample_matrix(config.ensemble, trial)
    if t == 0:
        return X0
    return dyson_flow_at(flow_state(X0, t))


def _resolve_E(config: ExperimentConfig, law: LawParams, default) -> list[float]:
    L_minus, L_plus = support_edges(law)
    out = []
    for e in config.E_grid if config.E_grid is not None else default:
        if e == "L_plus":
            out.append(L_plus)
        elif e == "bulk":
            out.append(0.5 * (L_minus + L_plus))
        else:
            out.append(float(e))
    return out


def run_local_law(config: ExperimentConfig) -> dict:
    """Compare ``m`` of sampled matrices with the deterministic ``m~`` on a grid."""
    law = config.law
    Es = _resolve_E(config, law, ["L_plus", "bulk"])
    etas = list(config.eta_grid) if config.eta_grid is not None else list(np.geomspace(1e-3, 1.0, 25))
    if not Es or not etas:
        raise ParameterError("empty spectral grid")
    dom = spectral_domain(law)
    Z = np.array([[complex(E, eta) for eta in etas] for E in Es]).ravel()
    outside = [z for z in Z if not dom.contains(z)]
    if outside:
        raise ParameterError(f"grid point {outside[0]} lies outside the spectral domain")
    N = config.ensemble.N
    w = stieltjes(Z, law)
    bound = 1.0 / law.q_t**2 + 1.0 / (N * Z.imag)

    def one(trial):
        spec = eigenvalues(_flowed(config, trial, config.t))
        return np.abs(empirical_stieltjes(spec, Z) - w)

    records = []
    ratios = []
    try:
        for trial, err in enumerate(_iter_trials(one, config.trials, config.jobs)):
            r = err / bound
            ratios.append(r)
            records.extend(
                {"trial": trial, "E": z.real, "eta": z.imag, "Lambda": float(e), "bound": float(b), "ratio": float(x)}
                for z, e, b, x in zip(Z, err, bound, r)
            )
    except SparseMPError as exc:
        exc.partial_report = _report("local-law", config, {}, records, [])
        raise
    ratios = np.concatenate(ratios)
    frac = float(np.mean(ratios <= config.constant))
    summary = {
        "points": int(ratios.size),
        "fraction_within": frac,
        "ratio_quantiles": {str(qq): float(np.quantile(ratios, qq)) for qq in (0.5, 0.9, 0.95, 0.99, 1.0)},
        "passed": frac >= config.quantile,
    }
    return _report("local-law", config, summary, records, [])


def _top_eigenvalues(config: ExperimentConfig, t: float = 0.0) -> np.ndarray:
    return np.array(_map_trials(lambda k: eigenvalues(_flowed(config, k, t)).top, config.trials, config.jobs))


def run_edge_norm(config: ExperimentConfig) -> dict:
    """Largest eigenvalue against the corrected edge and the Marchenko-Pastur edge."""
    law = config.law
    L_plus = edge_newton(law).L
    lam_plus = law.lam_plus
    lam1 = _top_eigenvalues(config, config.t)
    N, q = config.ensemble.N, law.q_t
    mean = float(lam1.mean())
    rms = float(np.sqrt(np.mean((lam1 - L_plus) ** 2)))
    bound = config.constant * (q**-4 + N ** (-2.0 / 3.0))
    summary = {
        "L_plus": L_plus,
        "lambda_plus": lam_plus,
        "mean_lambda1": mean,
        "stderr_lambda1": float(lam1.std(ddof=1) / math.sqrt(len(lam1))) if len(lam1) > 1 else None,
        "bias_corrected": abs(mean - L_plus),
        "bias_mp": abs(mean - lam_plus),
        "rms_corrected": rms,
        "rms_mp": float(np.sqrt(np.mean((lam1 - lam_plus) ** 2))),
        "rms_bound": bound,
        "passed": bool(abs(mean - L_plus) <= abs(mean - lam_plus) and rms <= bound),
    }
    records = [
        {"trial": k, "lambda1": float(x), "lambda1_minus_L_plus": float(x - L_plus), "lambda1_minus_lambda_plus": float(x - lam_plus)}
        for k, x in enumerate(lam1)
    ]
    return _report("edge-norm", config, summary, records, [])


def run_tw_limit(config: ExperimentConfig) -> dict:
    """KS distance of ``gamma N^(2/3) (lambda_1 - L_plus)`` to the TW_1 reference."""
    if config.tw_cache is None:
        raise ParameterError("tw_cache path is required")
    ref = load_reference(config.tw_cache)
    law = config.law
    N = config.ensemble.N
    warns = []
    threshold = N ** (1.0 / 6.0 + config.delta)
    if law.q_t < threshold:
        msg = f"q = {law.q_t:.3g} below N^(1/6 + delta) = {threshold:.3g}; TW limit not guaranteed"
        warnings.warn(msg)
        warns.append(msg)
    L_plus = edge_newton(law).L
    lam_plus = law.lam_plus
    gamma = tw_gamma(law.d)
    lam1 = _top_eigenvalues(config, config.t)
    scale = gamma * N ** (2.0 / 3.0)
    corrected = np.sort(scale * (lam1 - L_plus))
    uncorrected = np.sort(scale * (lam1 - lam_plus))
    ks_c = ks_distance(corrected, ref)
    ks_u = ks_distance(uncorrected, ref)
    summary = {
        "gamma": gamma,
        "L_plus": L_plus,
        "lambda_plus": lam_plus,
        "ks_corrected": ks_c,
        "ks_uncorrected": ks_u,
        "mean_rescaled": float(corrected.mean()),
        "var_rescaled": float(corrected.var(ddof=1)) if len(corrected) > 1 else None,
        "reference_count": ref.count,
        "reference_n_internal": ref.n_internal,
        "reference_mean": float(ref.samples.mean()),
        "passed": bool(ks_c < 0.10 and ks_c < ks_u),
    }
    records = [{"trial": k, "lambda1": float(x), "rescaled": float(scale * (x - L_plus))} for k, x in enumerate(lam1)]
    return _report("tw-limit", config, summary, records, warns)


def default_t_grid(N: int) -> list[float]:
    return [0.0, 0.5, 1.0, 2.0, 4.0, 6.0 * math.log(N)]


def flow_slope(law: LawParams, h: float = 1e-3) -> float:
    """Central finite-difference slope of the Newton edge at ``law.t`` (one-sided at 0)."""
    if law.t >= h:
        return (edge_newton(law.at_time(law.t + h)).L - edge_newton(law.at_time(law.t - h)).L) / (2 * h)
    L0 = edge_newton(law).L
    L1 = edge_newton(law.at_time(law.t + h)).L
    L2 = edge_newton(law.at_time(law.t + 2 * h)).L
    return (-3 * L0 + 4 * L1 - L2) / (2 * h)


def run_flow_tracking(config: ExperimentConfig) -> dict:
    """Follow ``lambda_1(X_t)`` along the flow and compare with ``L_t``."""
    N, M = config.ensemble.N, config.ensemble.M
    t_grid = list(config.t_grid) if config.t_grid is not None else default_t_grid(N)
    if any(t < 0 or t > 6 * math.log(N) + 1e-9 for t in t_grid):
        raise ParameterError("t_grid must lie in [0, 6 log N]")
    law0 = LawParams.from_ensemble(config.ensemble, 0.0)

    def one(trial):
        X0 = sample_matrix(config.ensemble, trial)
        st = flow_state(X0, 0.0)
        out = []
        for t in t_grid:
            st.t = t
            out.append(eigenvalues(dyson_flow_at(st)).top)
        return out

    lam = np.array(_map_trials(one, config.trials, config.jobs))  # trials x len(t_grid)
    gauss = np.array(
        _map_trials(
            lambda k: eigenvalues(gaussian_matrix(M, N, trial_rng(config.ensemble.seed, k, STREAM_GAUSS_REF))).top,
            config.trials,
            config.jobs,
        )
    )
    records = []
    L_newton = []
    for i, t in enumerate(t_grid):
        lt = law0.at_time(t)
        Ln = edge_newton(lt).L
        La = edge_asymptotic(lt)[0]
        L_newton.append(Ln)
        col = lam[:, i]
        records.append(
            {
                "t": float(t),
                "mean_lambda1": float(col.mean()),
                "stderr_lambda1": float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else None,
                "L_newton": Ln,
                "L_asymptotic": La,
            }
        )
    diffs = np.diff(L_newton)
    monotone = bool(np.all(diffs < 0)) if law0.s4 > 0 else bool(np.all(np.abs(diffs) < 1e-12))
    slope = flow_slope(law0)
    Ldot0 = edge_asymptotic(law0)[2]
    slope_rel = abs(slope - Ldot0) / abs(Ldot0) if Ldot0 != 0 else 0.0
    end = lam[:, -1]
    se = math.sqrt(end.var(ddof=1) / len(end) + gauss.var(ddof=1) / len(gauss)) if len(end) > 1 else math.inf
    end_diff = abs(end.mean() - gauss.mean())
    summary = {
        "L_newton_monotone": monotone,
        "slope_fd": slope,
        "Ldot0": Ldot0,
        "slope_rel_error": slope_rel,
        "slope_checked": law0.q >= 20,
        "endpoint_t": float(t_grid[-1]),
        "endpoint_mean": float(end.mean()),
        "gaussian_mean": float(gauss.mean()),
        "endpoint_diff": float(end_diff),
        "endpoint_se": se,
        "endpoint_ok": bool(end_diff <= 3 * se),
    }
    summary["passed"] = bool(
        monotone and summary["endpoint_ok"] and (slope_rel <= 0.2 or not summary["slope_checked"])
    )
    return _report("flow", config, summary, records, [])


def run_rigidity_deloc(config: ExperimentConfig) -> dict:
    """Top eigenvalues against classical locations, and eigenvector sup-norms."""
    law = config.law
    N = config.ensemble.N
    q = law.q_t
    warns = []
    if q < N ** (1.0 / 3.0):
        msg = f"q = {q:.3g} below N^(1/3); rigidity estimate not covered"
        warnings.warn(msg)
        warns.append(msg)
    js = np.arange(1, config.j_max + 1)
    gam = classical_locations(js, N, law)
    scale = js ** (-1.0 / 3.0) * N ** (-2.0 / 3.0) + q**-2
    deloc_bound = N ** (-0.5 + config.deloc_eps)

    def one(trial):
        X = _flowed(config, trial, config.t)
        spec = eigenvalues(X)
        return spec.lambdas[: config.j_max], delocalization_parts(X)

    out = _map_trials(one, config.trials, config.jobs)
    records = []
    ratios = []
    delocs = []
    # eigenvectors of X X^T live in R^M, whose natural sup-norm scale is
    # M^(-1/2); the scaled variant is reported alongside as a diagnostic
    shrink = math.sqrt(config.ensemble.M / N)
    scaled = []
    for trial, (lam, (u_max, v_max)) in enumerate(out):
        r = np.abs(lam - gam) / scale
        ratios.append(r)
        delocs.append(max(u_max, v_max))
        scaled.append(max(u_max, shrink * v_max))
        records.extend(
            {"trial": trial, "j": int(j), "lambda_j": float(x), "gamma_j": float(g), "ratio": float(rr)}
            for j, x, g, rr in zip(js, lam, gam, r)
        )
    ratios = np.concatenate(ratios)
    delocs = np.array(delocs)
    frac_rig = float(np.mean(ratios <= config.constant))
    frac_deloc = float(np.mean(delocs <= deloc_bound))
    summary = {
        "gamma_j": [float(g) for g in gam],
        "rigidity_fraction": frac_rig,
        "rigidity_max_ratio": float(ratios.max()),
        "deloc_bound": deloc_bound,
        "deloc_fraction": frac_deloc,
        "deloc_max": float(delocs.max()),
        "deloc_values": [float(x) for x in delocs],
        "deloc_dimension_scaled_fraction": float(np.mean(np.array(scaled) <= deloc_bound)),
        "passed": bool(frac_rig >= config.quantile and frac_deloc >= config.quantile),
    }
    return _report("rigidity", config, summary, records, warns)


def _bin_masses(edges: np.ndarray, law: LawParams) -> np.ndarray:
    return np.array([integrated_density(a, b, law) for a, b in zip(edges[:-1], edges[1:])])


def run_density_compare(config: ExperimentConfig) -> dict:
    """Histogram of pooled eigenvalues against the corrected and the plain law."""
    law = config.law
    N = config.ensemble.N
    L_minus, L_plus = support_edges(law)
    dom = spectral_domain(law)
    lo = max(L_minus, dom.E_lo) if config.ensemble.d == 1 else L_minus
    edges = np.linspace(lo, L_plus, config.bins + 1)
    if edges[0] < 0 or edges[-1] > dom.E_hi:
        raise ParameterError("bin edges leave the spectral domain")
    spectra = _map_trials(lambda k: eigenvalues(_flowed(config, k, config.t)).lambdas, config.trials, config.jobs)
    pooled = np.concatenate(spectra)
    total = pooled.size
    counts = np.array([np.count_nonzero((pooled > a) & (pooled <= b)) for a, b in zip(edges[:-1], edges[1:])])
    atom = int(np.count_nonzero(pooled == 0.0)) if config.ensemble.d > 1 else 0
    tail = total - int(counts.sum()) - atom
    frac = counts / total
    expected = _bin_masses(edges, law)
    expected_mp = _bin_masses(edges, LawParams(law.d))
    se = np.sqrt(np.maximum(expected * (1 - expected), 1e-300) / total)
    z = np.abs(frac - expected) / se
    allowance = (edges[1] - edges[0]) / law.q_t**2 + 1.0 / N
    records = [
        {
            "E_lo": float(a),
            "E_hi": float(b),
            "count": int(c),
            "fraction": float(f),
            "expected": float(e),
            "expected_mp": float(em),
            "z_score": float(zz),
        }
        for a, b, c, f, e, em, zz in zip(edges[:-1], edges[1:], counts, frac, expected, expected_mp, z)
    ]
    summary = {
        "pooled": total,
        "bin_mass": float(counts.sum() / total),
        "atom_mass": atom / total,
        "tail_mass": tail / total,
        "mass_total": (int(counts.sum()) + atom + tail) / total,
        "max_abs_deviation": float(np.abs(frac - expected).max()),
        "allowance": allowance,
        "max_z": float(z.max()),
        "ssd_corrected": float(np.sum((frac - expected) ** 2)),
        "ssd_mp": float(np.sum((frac - expected_mp) ** 2)),
    }
    summary["passed"] = bool(summary["max_abs_deviation"] <= config.constant * allowance)
    return _report("density", config, summary, records, [])


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, REPORT_SCHEMA)


def report_basename(report: dict) -> str:
    ens = report["config"].get("ensemble", {})
    law = report["config"].get("law", {})
    N = ens.get("N", "na")
    d = ens.get("d", law.get("d", "na"))
    q = ens.get("q", law.get("q", "na"))
    seed = ens.get("seed", "na")

    def fmt(x):
        return f"{x:.6g}" if isinstance(x, float) else str(x)

    return f"{report['experiment']}_N{fmt(N)}_d{fmt(d)}_q{fmt(q)}_seed{seed}"


def _finite(obj):
    # strict JSON has no NaN/Infinity; those become null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_finite(report), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_report(report: dict, out_dir) -> list[Path]:
    """Write ``<name>.json`` and ``<name>_records.csv``; returns the paths."""
    validate_report(report)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = report_basename(report)
    paths = [out / f"{base}.json"]
    paths[0].write_text(dumps_report(report), encoding="utf-8")
    if report["records"]:
        keys = list(report["records"][0].keys())
        p = out / f"{base}_records.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\r\n")
            w.writeheader()
            for rec in report["records"]:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.items()})
        paths.append(p)
    return paths
