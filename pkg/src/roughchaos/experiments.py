"""Experiment drivers behind the ``roughchaos`` command.

Each ``run_*`` function takes a resolved config dict (see :mod:`config`) and
returns a :class:`Report`. Replicas are farmed out to a thread pool but every
replica draws from its own seed stream, so results do not depend on the
number of threads.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .calculus import VectorField, constant_field, linear_field, rde_solve_arrays
from .config import content_hash
from .lift import LiftConfig, approximation_error_decay, levy_area, lift_arrays, total_level2
from .mckean_vlasov import sample_iid_mkv, solve_mkv_fixed_point
from .measures import RoughPathMeasure
from .particle import (constant_interaction, dirac_law, gaussian_law, make_interaction,
                       simulate_brownian_ensemble, simulate_ips)
from .rates import constant_drift_log_density, rho_n_arrays
from .seeding import make_rng, split_seed
from .transport import wasserstein1, wasserstein1_points


@dataclass
class Table:
    header: list
    rows: list

    def write(self, path: Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            for row in self.rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])


@dataclass
class Report:
    experiment: str
    config: dict
    criteria: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    plots: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, **detail) -> None:
        self.criteria.append({"name": name, "passed": bool(passed), **_clean(detail)})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.criteria)

    def as_dict(self) -> dict:
        cfg = {k: v for k, v in self.config.items() if k != "threads"}
        return {
            "experiment": self.experiment,
            "schema": 1,
            "config": cfg,
            "config_hash": content_hash(self.config),
            "criteria": self.criteria,
            "passed": self.passed,
            "tables": {name: f"{name}.csv" for name in self.tables},
            "plots": {name: f"plot_{name}.csv" for name in self.plots},
            "summary": _clean(self.summary),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def write(self, out) -> Path:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, table in self.tables.items():
            table.write(out / f"{name}.csv")
        for name, rows in self.plots.items():
            Table(["x", "y", "lo", "hi"], rows).write(out / f"plot_{name}.csv")
        path = out / "report.json"
        path.write_text(self.to_json())
        return path


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _pmap(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _law(cfg: dict, dim: int):
    if cfg["law"] == "dirac":
        return dirac_law(0.0, dim)
    if cfg["law"] == "gaussian":
        return gaussian_law(0.0, cfg["law_std"], dim)
    raise ValueError(f"unknown initial law {cfg['law']!r}")


def _monotone(dist, sigma, n_list) -> tuple[bool, list]:
    """Pairs (n_i, n_{i+1}) whose distance increases by more than 2 combined sigma."""
    bad = []
    for i in range(len(dist) - 1):
        band = 2.0 * math.hypot(sigma[i], sigma[i + 1])
        if dist[i + 1] > dist[i] + band:
            bad.append([n_list[i], n_list[i + 1]])
    return not bad, bad


# ---------------------------------------------------------------------------
# particle tuples vs McKean-Vlasov copies


def ips_tuple_paths(b, law, n: int, k: int, n_tuples: int, horizon: float, steps: int,
                    seed: int, threads: int = 1) -> np.ndarray:
    """Disjoint k-tuples of distinct particles from independent IPS replicas.

    Returns fine paths of shape (n_tuples, k, steps+1, d); replica r
    contributes tuples (0..k-1), (k..2k-1), ... of its particles.
    """
    per = n // k
    reps = -(-n_tuples // per)

    def one(r):
        ens = simulate_ips(b, law, n, horizon, steps, seed, replica=r)
        return ens.paths[:per * k].reshape(per, k, steps + 1, law.dim)

    return np.concatenate(_pmap(one, range(reps), threads))[:n_tuples]


def stack_layers(tuples: np.ndarray) -> np.ndarray:
    """(A, k, M+1, d) -> (A, M+1, kd)."""
    A, k, M1, d = tuples.shape
    return np.transpose(tuples, (0, 2, 1, 3)).reshape(A, M1, k * d)


def tuple_statistics(level1: np.ndarray, level2: np.ndarray) -> np.ndarray:
    """Endpoints and all Levy areas over [0, T] of batched lifts."""
    e = level1.shape[-1]
    total = total_level2(level1, level2)
    areas = [levy_area(total, i, j) for i in range(e) for j in range(i + 1, e)]
    return np.column_stack([level1[:, -1, :], *areas]) if areas else level1[:, -1, :]


def _bootstrap_w1(x, y, reps: int, seed: int, groups: np.ndarray | None = None) -> float:
    """Bootstrap sd of W1(x, y).

    With ``groups`` the x side is resampled by whole groups (replicas share an
    empirical measure, so their tuples are dependent) and then redrawn to its
    original size.
    """
    if reps < 2:
        return 0.0
    rng = make_rng(seed)
    labels = np.unique(groups) if groups is not None else None
    vals = []
    for _ in range(reps):
        if groups is None:
            i = rng.integers(0, len(x), len(x))
        else:
            pick = rng.choice(labels, labels.size)
            pool = np.concatenate([np.flatnonzero(groups == g) for g in pick])
            i = rng.choice(pool, len(x))
        j = rng.integers(0, len(y), len(y))
        vals.append(wasserstein1_points(x[i], y[j]))
    return float(np.std(vals, ddof=1))


def _trig_field(state: int, drive: int) -> VectorField:
    """f(y)_{0, l} = sin(y + l) on a scalar state."""
    shift = np.arange(drive, dtype=float)

    def value(y):
        return np.sin(np.asarray(y)[..., :, None] + shift)

    def jac(y):
        return np.cos(np.asarray(y)[..., :, None] + shift)[..., None]

    return VectorField(1, 1, drive, value, jac, {"value": 1.0, "d1": 1.0, "d2": 1.0}, "trig")


def _make_field(cfg: dict, drive: int) -> VectorField:
    kind = cfg["field"]
    if kind == "identity":
        return constant_field(np.eye(drive), drive)
    if kind == "trig":
        return _trig_field(1, drive)
    if kind == "linear":
        coeffs = np.repeat(np.asarray(cfg["coeffs"], dtype=float), cfg["d"])
        return linear_field(coeffs[:, None, None])
    if kind == "zero":
        return constant_field(np.zeros((1, drive)), 1)
    raise ValueError(f"unknown vector field {kind!r}")


def _flow_statistic(cfg: dict, f: VectorField):
    y0 = np.full(f.in_dim, cfg["y0"]) if cfg["field"] != "identity" else np.zeros(f.in_dim)

    def stat(times, l1, l2):
        return rde_solve_arrays(None, f, times, l1, l2, y0)[:, -1, :]

    return stat


def _poc_pipeline(cfg: dict, report: Report, statistic, name: str):
    """Shared W1-vs-n pipeline; ``statistic(times, level1, level2) -> (A, p)``."""
    d, k, m, r, T = cfg["d"], cfg["k"], cfg["m"], cfg["r"], cfg["T"]
    M = m * r
    b = make_interaction(cfg["b"], cfg["theta"], d)
    law = _law(cfg, d)
    seed, threads = cfg["seed"], cfg["threads"]
    times = np.linspace(0.0, T, m + 1)

    fp = solve_mkv_fixed_point(b, law, cfg["ref_particles"], T, M, tol=cfg["fp_tol"],
                               seed=split_seed(seed, 1))
    ref = sample_iid_mkv(fp.flow, b, law, k, cfg["tuples"], seed=split_seed(seed, 2),
                         cfg=LiftConfig(m, r))
    ref_stat = statistic(times, ref.level1, ref.level2)
    report.summary["fixed_point_trace"] = fp.trace
    # W1 between two independent reference samples: the Monte Carlo floor
    ref_b = sample_iid_mkv(fp.flow, b, law, k, cfg["tuples"], seed=split_seed(seed, 5),
                           cfg=LiftConfig(m, r))
    floor = wasserstein1_points(statistic(times, ref_b.level1, ref_b.level2), ref_stat)
    report.summary["noise_floor_w1"] = floor

    rows, plot, dist, sig = [], [], [], []
    lifts = {}
    for n in cfg["n_list"]:
        paths = ips_tuple_paths(b, law, n, k, cfg["tuples"], T, M, split_seed(seed, 3, n), threads)
        l1, l2 = lift_arrays(stack_layers(paths), r)
        lifts[n] = (l1, l2)
        x = statistic(times, l1, l2)
        w = wasserstein1_points(x, ref_stat)
        groups = np.arange(len(x)) // (n // k)
        s = _bootstrap_w1(x, ref_stat, cfg["bootstrap"], split_seed(seed, 4, n), groups)
        dist.append(w)
        sig.append(s)
        path_w1 = None
        if "path_w1_max_n" in cfg and n <= cfg["path_w1_max_n"]:
            a = cfg["path_w1_atoms"]
            wts = np.full(a, 1.0 / a)
            mu = RoughPathMeasure(times, wts, l2[:a], level1=l1[:a], k=k, d=d)
            nu = RoughPathMeasure(times, wts, ref.level2[:a], level1=ref.level1[:a], k=k, d=d)
            path_w1 = wasserstein1(mu, nu, "homogeneous_rough", cfg["alpha"])[0]
        rows.append([n, w, s, w - 2 * s, w + 2 * s, floor, "" if path_w1 is None else path_w1])
        plot.append([n, w, w - 2 * s, w + 2 * s])
    report.tables[name] = Table(["n", "w1", "boot_sd", "lo", "hi", "noise_floor", "path_w1"], rows)
    report.plots[name] = plot
    ok, bad = _monotone(dist, sig, cfg["n_list"])
    report.check(f"{name}_decreasing", ok, distances=dist, boot_sd=sig, violations=bad)
    return lifts, ref


def run_poc(cfg: dict) -> Report:
    """Particle k-tuple statistics against i.i.d. McKean-Vlasov copies, over n."""
    report = Report("poc", cfg)
    lifts, _ = _poc_pipeline(cfg, report, lambda t, l1, l2: tuple_statistics(l1, l2), "w1_vs_n")
    if cfg["b"] == "zero" and cfg["k"] >= 2:
        # cross area of two independent polygon-lifted Brownian layers
        area = np.concatenate([levy_area(total_level2(l1, l2), 0, cfg["d"])
                               for l1, l2 in lifts.values()])
        M = cfg["m"] * cfg["r"]
        expected = cfg["T"] ** 2 / 4 * (1 - 1 / M)
        var = float(np.var(area, ddof=1))
        c = area - area.mean()
        se = math.sqrt(max(float(np.mean(c ** 4)) - var ** 2, 0.0) / area.size)
        report.check("cross_area_variance", abs(var - expected) <= 3 * se,
                     variance=var, expected=expected, se=se)
    return report


def run_rde_flow(cfg: dict) -> Report:
    """Terminal RDE values driven by particle tuples vs by McKean-Vlasov tuples."""
    report = Report("rde-flow", cfg)
    f = _make_field(cfg, cfg["k"] * cfg["d"])
    _poc_pipeline(cfg, report, _flow_statistic(cfg, f), "flow_w1_vs_n")
    return report


def run_klayer_rde(cfg: dict) -> Report:
    """k-layer RDE pushforward of enhanced empirical measures, with oracles."""
    report = Report("klayer-rde", cfg)
    k, d = cfg["k"], cfg["d"]
    f = _make_field(cfg, k * d)
    stat = _flow_statistic(cfg, f)
    lifts, ref = _poc_pipeline(cfg, report, stat, "klayer_w1_vs_n")
    times = np.linspace(0.0, cfg["T"], cfg["m"] + 1)
    l1, l2 = lifts[cfg["n_list"][0]]
    if cfg["field"] == "linear" and cfg["b"] == "zero":
        # commuting scalar fields: Y_T = y0 exp(sum_l a_l X^l_{0,T})
        coeffs = np.repeat(np.asarray(cfg["coeffs"]), d)
        exact = cfg["y0"] * np.exp((l1[:, -1] - l1[:, 0]) @ coeffs)
        w = wasserstein1_points(stat(times, l1, l2)[:, 0], exact)
        report.check("closed_form_pushforward", w <= cfg["oracle_tol"], w1=w, tol=cfg["oracle_tol"])
    # equal fields on every layer: relabelling the tuple leaves each solution unchanged
    sym = dict(cfg, coeffs=[cfg["coeffs"][0]] * k) if cfg["field"] == "linear" else cfg
    g = _make_field(sym, k * d)
    perm = np.concatenate([np.arange(j * d, (j + 1) * d) for j in reversed(range(k))])
    y = rde_solve_arrays(None, g, times, l1, l2, np.full(g.in_dim, cfg["y0"]))[:, -1]
    yp = rde_solve_arrays(None, g, times, l1[..., perm], l2[..., perm, :][..., perm],
                          np.full(g.in_dim, cfg["y0"]))[:, -1]
    gap = float(np.max(np.abs(y - yp) / np.maximum(1.0, np.abs(y))))
    if cfg["field"] in ("linear", "identity", "zero"):
        report.check("symmetrization_invariance", gap <= 1e-10, max_rel_gap=gap)
    else:
        report.summary["symmetrization_gap"] = gap
    return report


# ---------------------------------------------------------------------------


def girsanov_functionals(paths: np.ndarray, factor: int) -> dict:
    """Bounded functionals of the two-layer lift of particles 0 and 1."""
    pair = np.concatenate([paths[..., 0, :, :], paths[..., 1, :, :]], axis=-1)
    l1, l2 = lift_arrays(pair, factor)
    d = paths.shape[-1]
    area = levy_area(total_level2(l1, l2), 0, d)
    x1, x2 = l1[:, -1, 0], l1[:, -1, d]
    return {
        "sigmoid_endpoint": 1.0 / (1.0 + np.exp(-x1)),
        "tanh_endpoint_product": np.tanh(x1 * x2),
        "tanh_cross_area": np.tanh(area),
        "tanh_sq_cross_area": np.tanh(4.0 * area ** 2),
    }


def run_girsanov_check(cfg: dict) -> Report:
    """E[e^rho] = 1 and E[e^rho phi(B)] = E[phi(X)] for a panel of functionals."""
    report = Report("girsanov-check", cfg)
    n, R, M, T, r = cfg["n"], cfg["samples"], cfg["m"], cfg["T"], cfg["r"]
    if n < 2:
        raise ValueError("girsanov-check needs n >= 2")
    b = make_interaction(cfg["b"], cfg["theta"], 1)
    law = _law(cfg, 1)
    seed, threads = cfg["seed"], cfg["threads"]
    times = np.linspace(0.0, T, M + 1)
    chunk = 500

    def block(c):
        reps = range(c * chunk, min((c + 1) * chunk, R))
        B = np.stack([simulate_brownian_ensemble(law, n, 1, T, M, split_seed(seed, 1), r_).paths
                      for r_ in reps])
        X = np.stack([simulate_ips(b, law, n, T, M, split_seed(seed, 2), r_).paths for r_ in reps])
        return B, X, rho_n_arrays(b, B, times, r)

    parts = _pmap(block, range(-(-R // chunk)), threads)
    B = np.concatenate([p[0] for p in parts])
    X = np.concatenate([p[1] for p in parts])
    w = np.exp(np.concatenate([p[2] for p in parts]))
    se = float(w.std(ddof=1) / math.sqrt(R))
    report.check("normalization", abs(w.mean() - 1.0) <= 3 * se, mean=float(w.mean()), se=se)
    rows = [["normalization", float(w.mean()), 1.0, se]]
    phi_b = girsanov_functionals(B, r)
    phi_x = girsanov_functionals(X, r)
    for name in phi_b:
        a = w * phi_b[name]
        c = phi_x[name]
        s = math.sqrt(a.var(ddof=1) / R + c.var(ddof=1) / R)
        report.check(f"paired_{name}", abs(a.mean() - c.mean()) <= 3 * s,
                     reweighted=float(a.mean()), direct=float(c.mean()), se=s)
        rows.append([name, float(a.mean()), float(c.mean()), s])
    report.tables["girsanov"] = Table(["functional", "reweighted", "direct", "se"], rows)
    report.summary["effective_sample_size"] = float(w.sum() ** 2 / np.sum(w * w))
    return report


# ---------------------------------------------------------------------------


def _sanov_block(n: int, size: int, steps: int, T: float, theta: float, rng) -> tuple:
    h = T / steps
    inc = rng.standard_normal((size, n, steps, 1)) * math.sqrt(h) + theta * h
    return np.cumsum(inc, axis=2)[..., -1, :]


def run_sanov_decay(cfg: dict) -> Report:
    """Decay rate of P[mean endpoint > delta] for Brownian particles from 0."""
    report = Report("sanov-decay", cfg)
    delta, T, S, steps = cfg["delta"], cfg["T"], cfg["samples"], cfg["m"]
    seed, threads = cfg["seed"], cfg["threads"]
    theta = delta / T
    rate = delta ** 2 / (2 * T)
    chunk = 1000

    def estimate(n, samples, tilt, stream):
        def block(c):
            size = min(chunk, samples - c * chunk)
            rng = make_rng(seed, stream, n, c)
            disp = _sanov_block(n, size, steps, T, tilt, rng)
            hit = disp[..., 0].mean(axis=-1) > delta
            logw = -constant_drift_log_density(disp, tilt, T)
            return hit * np.exp(logw)

        vals = np.concatenate(_pmap(block, range(-(-samples // chunk)), threads))
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))

    rows, plot, ys, ns = [], [], [], []
    for n in cfg["n_list"]:
        p, se = estimate(n, S, theta, 1)
        exact = float(norm.sf(delta * math.sqrt(n / T)))
        rows.append([n, p, se, -math.log(p) / n if p > 0 else float("inf"), exact])
        if p <= 0:
            report.check("nonzero_hits", False, n=n,
                         message="no hits; increase samples or enable the tilt")
            continue
        ys.append(-math.log(p))
        ns.append(n)
        lo, hi = max(p - 2 * se, 1e-300), p + 2 * se
        plot.append([n, -math.log(p) / n, -math.log(hi) / n, -math.log(lo) / n])
        if n <= cfg["direct_max_n"]:
            q, qse = estimate(n, cfg["direct_samples"], 0.0, 2)
            s = math.hypot(se, qse)
            report.check(f"tilted_vs_direct_n{n}", abs(p - q) <= 3 * s, tilted=p, direct=q, se=s)
    report.tables["sanov"] = Table(["n", "p_hat", "se", "neg_log_p_over_n", "gaussian_p"], rows)
    report.plots["sanov"] = plot

    # the closed-form tilt density is rho_n of the constant interaction
    n0 = cfg["n_list"][0]
    rng = make_rng(seed, 3)
    h = T / steps
    inc = rng.standard_normal((20, n0, steps, 1)) * math.sqrt(h)
    paths = np.concatenate([np.zeros((20, n0, 1, 1)), np.cumsum(inc, axis=2)], axis=2)
    rho = rho_n_arrays(constant_interaction(theta), paths, np.linspace(0, T, steps + 1))
    closed = constant_drift_log_density(paths[..., -1, :], theta, T)
    gap = float(np.max(np.abs(rho - closed)))
    report.check("tilt_density_matches_rho_n", gap <= 1e-9, max_gap=gap)

    if len(ns) >= 2:
        slope = float(np.polyfit(ns, ys, 1)[0])
        tol = max(cfg["rel_tol"] * rate, cfg["abs_tol"])
        report.check("decay_rate", abs(slope - rate) <= tol, fitted=slope, analytic=rate, tol=tol)
    return report


# ---------------------------------------------------------------------------


def run_lift_approx(cfg: dict) -> Report:
    """Decay of d_alpha between Brownian lifts and their m-point polygon lifts."""
    report = Report("lift-approx", cfg)
    lc = LiftConfig(cfg["target"], cfg["r"], cfg["seed"])
    rows = approximation_error_decay(cfg["d"], cfg["T"], cfg["alpha"], cfg["m_list"], lc,
                                     n_samples=cfg["samples"], c=cfg["c"], eta=cfg["eta"])
    report.tables["lift_decay"] = Table(
        ["m", "mean_distance", "se", "exp_moment", "exp_moment_se"],
        [[x.m, x.mean_distance, x.std_error, x.exp_moment, x.exp_moment_se] for x in rows])
    report.plots["lift_decay"] = [[x.m, x.mean_distance, x.mean_distance - 2 * x.std_error,
                                   x.mean_distance + 2 * x.std_error] for x in rows]
    means = [x.mean_distance for x in rows]
    strict = all(b < a for a, b in zip(means, means[1:]))
    report.check("mean_distance_decreasing", strict, means=means,
                 se=[x.std_error for x in rows])
    moments = [x.exp_moment for x in rows]
    bound = cfg["moment_ratio"] * moments[0]
    report.check("exp_moment_bounded", max(moments) <= bound, moments=moments, bound=bound)
    return report


RUNNERS = {
    "poc": run_poc,
    "girsanov-check": run_girsanov_check,
    "sanov-decay": run_sanov_decay,
    "lift-approx": run_lift_approx,
    "rde-flow": run_rde_flow,
    "klayer-rde": run_klayer_rde,
}


def run_experiment(cfg: dict) -> Report:
    return RUNNERS[cfg["experiment"]](cfg)
