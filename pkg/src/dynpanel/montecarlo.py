"""Seeded replication engine: simulate, estimate, aggregate against theory.

Replication r draws its data from ``SeedSequence(master_seed, spawn_key=(r,))``,
so each replication's numbers depend only on (config, r). Workers may finish
in any order; aggregation always runs over replication index with
compensated sums, so summaries do not depend on the thread count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .asymptotics import (
    info_conditional,
    info_lancaster,
    info_mile,
    lancaster_sandwich_direct,
    sandwich,
)
from .dgp import DgpConfig, EtaLaw, PanelData, difference_panel, simulate
from .estimators import (
    SELECTION_RULES,
    SearchConfig,
    estimate_mile_conditional_stats,
    estimate_mile_stats,
    lancaster_roots_stats,
)
from .kernels import conditional_invariant, maximal_invariant
from .likelihoods import Theta, Theta1, hessian_mile, score_components, score_mile

Array = NDArray[np.float64]

COLLECT_FLAGS = ("score-at-truth", "hessian-at-truth", "root-multiplicity", "estimates")
PARAMS = {
    "mile": ("rho", "sigma2", "omega2"),
    "lancaster": ("rho", "sigma2"),
    "conditional": ("rho", "sigma2", "delta", "omega2"),
}
# coordinates that carry a theory variance
THEORY_DIM = {"mile": 3, "lancaster": 2, "conditional": 2}
MAX_FAILURE_SHARE = 0.5


class McAbort(RuntimeError):
    """More than half of the replications failed for some estimator."""

    def __init__(self, message: str, reasons: dict[str, int]):
        super().__init__(message)
        self.reasons = reasons


def _parse_estimator(spec: str) -> tuple[str, Optional[str]]:
    """'mile', 'conditional', 'lancaster' or 'lancaster(<rule>)'."""
    spec = spec.strip()
    if spec in ("mile", "conditional"):
        return spec, None
    if spec == "lancaster":
        return "lancaster", "min-abs-sml"
    if spec.startswith("lancaster(") and spec.endswith(")"):
        rule = spec[len("lancaster("):-1]
        if rule in SELECTION_RULES:
            return "lancaster", rule
    raise ValueError(
        f"unknown estimator {spec!r}; use mile, conditional, lancaster or lancaster(<rule>) "
        f"with rule in {SELECTION_RULES}"
    )


@dataclass(frozen=True)
class McConfig:
    dgp: DgpConfig
    estimators: tuple[str, ...] = ("mile",)
    replications: int = 100
    collect: tuple[str, ...] = ("estimates",)
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self) -> None:
        if self.replications < 2:
            raise ValueError("replications must be >= 2")
        for e in self.estimators:
            _parse_estimator(e)
        names = [_parse_estimator(e)[0] for e in self.estimators]
        if len(set(names)) != len(names):
            raise ValueError("each estimator may appear once")
        for c in self.collect:
            if c not in COLLECT_FLAGS:
                raise ValueError(f"collect flags must be among {COLLECT_FLAGS}, got {c!r}")
        if not self.estimators and not self.collect:
            raise ValueError("set at least one estimator or collect flag")
        if "conditional" in names and self.dgp.init_regime.kind == "zero":
            raise ValueError("the conditional estimator needs a nonzero initial regime")
        needs_mile_truth = {"score-at-truth", "hessian-at-truth"} & set(self.collect)
        if needs_mile_truth and self.dgp.init_regime.kind != "zero":
            raise ValueError("score-at-truth and hessian-at-truth need the zero initial regime")

    @property
    def parsed(self) -> list[tuple[str, Optional[str]]]:
        return [_parse_estimator(e) for e in self.estimators]


def replication_seed(master_seed: int, rep: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(rep,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- one replication ---------------------------------------------------------------


def _omega2_of(eta: Array, sigma2: float) -> float:
    return float(eta @ eta) / (sigma2 * eta.shape[0])


def _run_one(config: McConfig, rep: int) -> dict[str, Any]:
    dgp = config.dgp.with_seed(replication_seed(config.dgp.seed, rep))
    data = simulate(dgp)
    rho, s2 = dgp.rho_star, dgp.sigma2_star
    out: dict[str, Any] = {"rep": rep, "est": {}, "truth": {}, "fail": {}}

    diff = data if data.zero_initial else difference_panel(data)
    truth_m = Theta(rho, s2, _omega2_of(diff.eta_true, s2))
    out["truth"]["mile"] = [truth_m.rho, truth_m.sigma2, truth_m.omega2]
    out["truth"]["lancaster"] = [rho, s2]
    stats_m = maximal_invariant(diff.Y) if ({"mile", "lancaster"} & {n for n, _ in config.parsed}
                                             or config.collect) else None
    y1 = data.y1
    if np.any(y1 != 0.0):
        yy = float(y1 @ y1)
        delta = float(y1 @ data.eta_true) / yy
        resid = data.eta_true - delta * y1
        out["truth"]["conditional"] = [rho, s2, delta, _omega2_of(resid, s2)]
        out["y1_norm_bar2"] = yy / data.N

    for name, rule in config.parsed:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if name == "mile":
                    res = estimate_mile_stats(stats_m, config.search)
                    est = [res.theta_hat.rho, res.theta_hat.sigma2, res.theta_hat.omega2]
                elif name == "lancaster":
                    res = lancaster_roots_stats(stats_m, config.search, rule)
                    est = [res.theta_hat.rho, res.theta_hat.sigma2]
                    out["n_roots"] = res.n_local_maxima
                else:
                    res = estimate_mile_conditional_stats(conditional_invariant(data.Y, y1), config.search)
                    t = res.theta_hat
                    est = [t.rho, t.sigma2, t.delta, t.omega2]
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            out["fail"][name] = f"{type(exc).__name__}: {exc}"
            continue
        if not res.converged:
            out["fail"][name] = "not converged" if not res.boundary else "maximum at search bound"
            continue
        out["est"][name] = est

    NT = data.N * data.T
    if "score-at-truth" in config.collect:
        sm = score_mile(truth_m, stats_m)
        _, sl, sml = score_components(rho, stats_m)
        out["score"] = [float(v) * math.sqrt(NT) for v in (*sm, sl, sml)]
    if "hessian-at-truth" in config.collect:
        out["hessian"] = [float(v) for v in (-hessian_mile(truth_m, stats_m)).ravel()]
    return out


def _run_chunk(args) -> list[dict[str, Any]]:
    config, reps = args
    return [_run_one(config, r) for r in reps]


def _execute(config: McConfig, threads: Optional[int]) -> list[dict[str, Any]]:
    R = config.replications
    n = threads if threads is not None else (os.cpu_count() or 1)
    n = max(1, min(n, R))
    if n == 1:
        return [_run_one(config, r) for r in range(R)]
    chunks = [list(range(i, R, n)) for i in range(n)]
    with ProcessPoolExecutor(max_workers=n) as pool:
        parts = list(pool.map(_run_chunk, [(config, c) for c in chunks]))
    rows = [row for part in parts for row in part]
    rows.sort(key=lambda d: d["rep"])
    return rows


# -- aggregation -------------------------------------------------------------------


def _mean(rows: Sequence[Sequence[float]]) -> Array:
    k = len(rows[0])
    return np.array([math.fsum(r[j] for r in rows) / len(rows) for j in range(k)])


def _cov(rows: Sequence[Sequence[float]]) -> Array:
    """Sample covariance (divisor n - 1) with compensated sums."""
    n = len(rows)
    m = _mean(rows)
    k = len(m)
    C = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            C[a, b] = C[b, a] = math.fsum((r[a] - m[a]) * (r[b] - m[b]) for r in rows) / (n - 1)
    return C


def _ratio(emp: Array, theory: Array) -> Array:
    out = np.full(emp.shape, np.nan)
    nz = theory != 0
    out[nz] = emp[nz] / theory[nz]
    return out


@dataclass
class EstimatorSummary:
    parameters: tuple[str, ...]
    n_ok: int
    n_failed: int
    mean_bias: Array
    mean_abs_bias: Array
    empirical_var_scaled: Array
    theory_avar: Optional[Array]
    ratio: Optional[Array]
    theory_point: dict[str, float]
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class McSummary:
    config: dict[str, Any]
    replications: int
    estimators: dict[str, EstimatorSummary]
    failures: int
    failure_reasons: dict[str, int]
    score_cov_scaled: Optional[dict[str, Any]] = None
    hessian_mean: Optional[Array] = None
    root_histogram: Optional[dict[int, int]] = None
    local_shift: Optional[dict[str, Any]] = None
    per_replication: list[dict[str, Any]] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return _clean({
            "config": self.config,
            "replications": self.replications,
            "failures": self.failures,
            "failure_reasons": self.failure_reasons,
            "estimators": {k: vars(v) for k, v in self.estimators.items()},
            "score_cov_scaled": self.score_cov_scaled,
            "hessian_mean": self.hessian_mean,
            "root_histogram": None if self.root_histogram is None
            else {str(k): v for k, v in sorted(self.root_histogram.items())},
            "local_shift": self.local_shift,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def long_csv(self) -> str:
        """One row per (replication, estimator, parameter)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replication", "estimator", "parameter", "estimate"])
        for row in self.per_replication:
            for name in sorted(row["est"]):
                for p, v in zip(PARAMS[name], row["est"][name]):
                    w.writerow([row["rep"], name, p, format(v, ".17g")])
        return buf.getvalue()


def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _theory(name: str, point: list[float], T: int, ybar2: Optional[float]):
    """(theory avar, extra) at an averaged truth point."""
    extra: dict[str, Any] = {}
    if name == "mile":
        th = Theta(point[0], point[1], point[2])
        return np.linalg.inv(info_mile(th, T)), extra
    if name == "lancaster":
        th = Theta(point[0], point[1], point[2])
        I, Sig, flags = info_lancaster(th, T)
        extra["flags"] = flags
        if flags:
            return None, extra
        extra["sandwich_direct"] = lancaster_sandwich_direct(th, T)
        return sandwich(I, Sig), extra
    th1 = Theta1(point[0], point[1], point[2], point[3])
    return np.linalg.inv(info_conditional(th1, T, ybar2)), extra


def summarize(config: McConfig, rows: list[dict[str, Any]]) -> McSummary:
    dgp = config.dgp
    N, T = dgp.N, dgp.T
    sNT = math.sqrt(N * T)
    R = len(rows)
    reasons: Counter = Counter()
    failed_reps = set()
    for row in rows:
        for name, why in row["fail"].items():
            reasons[f"{name}: {why}"] += 1
            failed_reps.add(row["rep"])

    mile_truth = _mean([r["truth"]["mile"] for r in rows])
    ests: dict[str, EstimatorSummary] = {}
    for name, rule in config.parsed:
        ok = [r for r in rows if name in r["est"]]
        n_fail = R - len(ok)
        if n_fail > MAX_FAILURE_SHARE * R:
            raise McAbort(
                f"{name}: {n_fail} of {R} replications failed",
                dict(sorted(reasons.items())),
            )
        truth_key = name
        errs = [[e - t for e, t in zip(r["est"][name], r["truth"][truth_key])] for r in ok]
        k = THEORY_DIM[name]
        emp = _cov([[sNT * v for v in e[:k]] for e in errs]) if len(ok) >= 2 else np.full((k, k), np.nan)
        if name == "conditional":
            point = list(_mean([r["truth"]["conditional"] for r in rows]))
            ybar2 = math.fsum(r["y1_norm_bar2"] for r in rows) / R
        else:
            point = list(mile_truth)
            ybar2 = None
        theory, extra = _theory(name, point, T, ybar2)
        if rule is not None:
            extra["rule"] = rule
        if "sandwich_direct" in extra:
            extra["ratio_direct"] = _ratio(emp, extra["sandwich_direct"])
        if ybar2 is not None:
            extra["y1_norm_bar2"] = ybar2
        ests[name] = EstimatorSummary(
            parameters=PARAMS[name],
            n_ok=len(ok),
            n_failed=n_fail,
            mean_bias=_mean(errs) if ok else np.full(len(PARAMS[name]), np.nan),
            mean_abs_bias=_mean([[abs(v) for v in e] for e in errs]) if ok else np.full(len(PARAMS[name]), np.nan),
            empirical_var_scaled=emp,
            theory_avar=theory,
            ratio=None if theory is None else _ratio(emp, theory),
            theory_point=dict(zip(PARAMS[name], point)),
            extra=extra,
        )

    score_cov = None
    if "score-at-truth" in config.collect:
        sc = [r["score"] for r in rows]
        C = _cov(sc)
        IM = info_mile(Theta(*mile_truth), T)
        dec = C[3:, 3:]
        score_cov = {
            "mile": C[:3, :3],
            "mile_info": IM,
            "mile_ratio": _ratio(C[:3, :3], IM),
            "decomposition": dec,
            "decomposition_corr": float(dec[0, 1] / math.sqrt(dec[0, 0] * dec[1, 1])),
            "mean": _mean(sc),
        }
    hess = None
    if "hessian-at-truth" in config.collect:
        hess = _mean([r["hessian"] for r in rows]).reshape(3, 3)
    hist = None
    if "root-multiplicity" in config.collect:
        hist = dict(Counter(r["n_roots"] for r in rows if r.get("n_roots") is not None))

    keep = "estimates" in config.collect
    return McSummary(
        config=mc_config_to_dict(config),
        replications=R,
        estimators=ests,
        failures=len(failed_reps),
        failure_reasons=dict(sorted(reasons.items())),
        score_cov_scaled=score_cov,
        hessian_mean=hess,
        root_histogram=hist,
        per_replication=rows if keep else [],
    )


def run(config: McConfig, threads: Optional[int] = 1) -> McSummary:
    """Run all replications; ``threads=None`` uses every core."""
    return summarize(config, _execute(config, threads))


def run_local_shift(config: McConfig, h: float, threads: Optional[int] = 1) -> McSummary:
    """Replications with omega2 drifting to omega2* + h / sqrt(N).

    The DGP must use ``scaled-to-omega`` effects and the zero initial regime.
    Estimation errors are centred at the undrifted point (rho*, sigma2*, omega2*).
    ``local_shift`` reports the mean of sqrt(NT)(theta_hat - theta*) with
    standard errors, the same quantity on the sqrt(N) scale, and the
    covariance ratio against the inverse information at theta*.
    """
    dgp = config.dgp
    if dgp.eta_law.kind != "scaled-to-omega" or dgp.init_regime.kind != "zero":
        raise ValueError("run_local_shift needs scaled-to-omega effects and the zero initial regime")
    if [n for n, _ in config.parsed] != ["mile"]:
        raise ValueError("run_local_shift runs the mile estimator only")
    w0 = dgp.eta_law.omega2
    w = w0 + h / math.sqrt(dgp.N)
    if w < 0:
        raise ValueError(f"omega2* + h/sqrt(N) = {w} is negative")
    drifted = replace(config, dgp=replace(dgp, eta_law=replace(dgp.eta_law, omega2=w)))
    if h == 0:
        drifted = config
    rows = _execute(drifted, threads)
    summary = summarize(config if h == 0 else drifted, rows)
    summary.config = mc_config_to_dict(config)
    summary.config["h"] = h

    star = [dgp.rho_star, dgp.sigma2_star, w0]
    ok = [r for r in rows if "mile" in r["est"]]
    N, T = dgp.N, dgp.T
    n = len(ok)
    if n >= 2:
        z = [[math.sqrt(N * T) * (e - t) for e, t in zip(r["est"]["mile"], star)] for r in ok]
        m = _mean(z)
        C = _cov(z)
        se = np.sqrt(np.diag(C) / n)
        Iinv = np.linalg.inv(info_mile(Theta(*star), T))
        summary.local_shift = {
            "h": h,
            "omega2_star": w0,
            "omega2_drifted": w,
            "mean_shift": m,
            "mean_shift_se": se,
            "expected_shift": [0.0, 0.0, h],
            "mean_shift_sqrtN": m / math.sqrt(T),
            "mean_shift_sqrtN_se": se / math.sqrt(T),
            "cov": C,
            "cov_ratio": _ratio(C, Iinv),
        }
    return summary


# -- config (de)serialization ---------------------------------------------------------


def mc_config_to_dict(config: McConfig) -> dict[str, Any]:
    s = config.search
    return {
        "dgp": config.dgp.to_dict(),
        "estimators": list(config.estimators),
        "replications": config.replications,
        "collect": list(config.collect),
        "search": {
            "rho_bounds": list(s.rho_bounds),
            "grid_points": s.grid_points,
            "gradient_tol": s.gradient_tol,
            "max_refine_iters": s.max_refine_iters,
            "dj_interval": s.dj_interval,
        },
    }


def mc_config_from_dict(d: dict[str, Any]) -> McConfig:
    search = dict(d.get("search") or {})
    if "rho_bounds" in search:
        search["rho_bounds"] = tuple(search["rho_bounds"])
    return McConfig(
        dgp=DgpConfig.from_dict(d["dgp"]),
        estimators=tuple(d.get("estimators", ("mile",))),
        replications=int(d.get("replications", 100)),
        collect=tuple(d.get("collect", ("estimates",))),
        search=SearchConfig(**search),
    )
