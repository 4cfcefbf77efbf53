"""Experiment runner: solver sweeps, the verification suite, and file outputs.

A single JSON config (ExperimentSpec) drives both sweep runs (recovery error
versus measurement count or outlier count) and verification runs (the
configured subset of theory checks). Every run writes a run.json echo of the
fully resolved configuration; result rows carry full seed provenance so any
row can be reproduced.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from ._common import child_seeds, substream
from .generator import (Activation, GeneratorNetwork, LEAKY_RELU, forward,
                        net_to_dict, random_gaussian_net)
from .measurement import GAUSSIAN, MeasurementModel, build_instance
from .solvers import SolverConfig, SolverDiverged, metrics, multi_restart
from . import theory

SWEEP_AXES = ("measurements", "outliers", "rho_grid")

RESULT_COLUMNS = ("sweep_value", "trial", "solver", "eps_m", "eps_r",
                  "eps_r_per_pixel", "iters", "restart_index", "seed", "wall_ms")
SUMMARY_COLUMNS = ("sweep_value", "solver", "trials", "eps_m_median", "eps_m_iqr",
                   "eps_r_median", "eps_r_iqr", "eps_r_per_pixel_median",
                   "eps_r_per_pixel_iqr")


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully resolved description of one experiment run."""

    name: str
    net: dict                      # {"dims": [...], "activation": {...}, "seed": int}
    measurement: dict              # matrix_kind / outlier / noise settings
    sweep: dict                    # {"axis": ..., "values": [...]}
    solvers: tuple[SolverConfig, ...]
    trials_per_point: int
    seed: int
    output_dir: str | None = None
    checks: tuple[dict, ...] | None = None   # verify-mode check list; None = default suite

    def __post_init__(self):
        axis = self.sweep.get("axis")
        if axis not in SWEEP_AXES:
            raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
        values = list(self.sweep.get("values", []))
        if not values:
            raise ValueError("sweep values must be nonempty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        solvers = tuple(SolverConfig.from_dict(s) for s in d.get("solvers", []))
        checks = d.get("checks")
        return cls(
            name=d.get("name", "experiment"),
            net=d.get("net", {}),
            measurement=d.get("measurement", {}),
            sweep=d["sweep"],
            solvers=solvers,
            trials_per_point=int(d.get("trials_per_point", 1)),
            seed=int(d.get("seed", 0)),
            output_dir=d.get("output_dir"),
            checks=tuple(checks) if checks is not None else None,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name, "net": self.net, "measurement": self.measurement,
            "sweep": self.sweep, "solvers": [s.to_dict() for s in self.solvers],
            "trials_per_point": self.trials_per_point, "seed": self.seed,
            "output_dir": self.output_dir,
            "checks": list(self.checks) if self.checks is not None else None,
        }


def build_net(net_spec: dict) -> GeneratorNetwork:
    act = Activation.from_dict(net_spec.get("activation", {"kind": "identity"}))
    return random_gaussian_net(net_spec["dims"], act, int(net_spec.get("seed", 0)))


def _measurement_model(spec: ExperimentSpec, n: int, sweep_value: int,
                       model_seed: int) -> MeasurementModel:
    ms = spec.measurement
    axis = spec.sweep["axis"]
    m = int(sweep_value) if axis == "measurements" else int(ms["m"])
    l = int(sweep_value) if axis == "outliers" else int(ms.get("outlier_count", 0))
    return MeasurementModel(
        m=m, n=n,
        matrix_kind=ms.get("matrix_kind", GAUSSIAN),
        outlier_count=l,
        outlier_range=tuple(ms.get("outlier_range", (5000.0, 10000.0))),
        outlier_signed=bool(ms.get("outlier_signed", False)),
        noise_target=float(ms.get("noise_target", 0.0)),
        seed=model_seed,
    )


def _run_one_trial(spec: ExperimentSpec, net: GeneratorNetwork, point_idx: int,
                   sweep_value, trial: int) -> list[dict]:
    model_seed, inst_seed = child_seeds(spec.seed, 2, spawn_key=(point_idx, trial))
    model = _measurement_model(spec, net.n, sweep_value, model_seed)
    inst = build_instance(net, model, seed=inst_seed)
    rows = []
    for si, cfg in enumerate(spec.solvers):
        solver_seed = child_seeds(spec.seed, 1, spawn_key=(point_idx, trial, si))[0]
        run_cfg = replace(cfg, seed=solver_seed)
        t0 = time.perf_counter()
        try:
            res = multi_restart(net, inst.M, inst.y, run_cfg)
            mets = metrics(net, inst.M, inst.y, res.z_hat, inst.x0)
            row = {
                "sweep_value": sweep_value, "trial": trial, "solver": cfg.method,
                "eps_m": mets.eps_m, "eps_r": mets.eps_r,
                "eps_r_per_pixel": mets.eps_r_per_pixel,
                "iters": res.iters_used, "restart_index": res.restart_index,
                "seed": inst_seed, "wall_ms": (time.perf_counter() - t0) * 1e3,
            }
        except SolverDiverged:
            row = {
                "sweep_value": sweep_value, "trial": trial, "solver": cfg.method,
                "eps_m": float("nan"), "eps_r": float("nan"),
                "eps_r_per_pixel": float("nan"),
                "iters": 0, "restart_index": -1,
                "seed": inst_seed, "wall_ms": (time.perf_counter() - t0) * 1e3,
            }
        rows.append(row)
    return rows


def _trial_task(args) -> list[dict]:
    spec_dict, net_dict, point_idx, sweep_value, trial = args
    from .generator import net_from_dict
    spec = ExperimentSpec.from_dict(spec_dict)
    return _run_one_trial(spec, net_from_dict(net_dict), point_idx, sweep_value, trial)


def run_sweep(spec: ExperimentSpec, workers: int = 1):
    """Run every sweep point x trial x solver; return (rows, summary_rows).

    Rows are ordered by (sweep point, trial, solver) regardless of worker
    count; all non-timing columns are deterministic functions of the spec.
    When output_dir is set, writes run.json, results.csv, and summary.csv.
    """
    axis = spec.sweep["axis"]
    if axis == "rho_grid":
        raise ValueError("rho_grid sweeps run through run_verify, not run_sweep")
    if not spec.solvers:
        raise ValueError("sweep needs at least one solver config")
    net = build_net(spec.net)

    tasks = [(pi, value, trial)
             for pi, value in enumerate(spec.sweep["values"])
             for trial in range(spec.trials_per_point)]
    rows: list[dict] = []
    if workers > 1:
        net_dict = net_to_dict(net)
        payloads = [(spec.to_dict(), net_dict, pi, value, trial)
                    for pi, value, trial in tasks]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_trial_task, payloads):
                rows.extend(chunk)
    else:
        for pi, value, trial in tasks:
            rows.extend(_run_one_trial(spec, net, pi, value, trial))

    summary = summarize_rows(rows)
    if spec.output_dir:
        os.makedirs(spec.output_dir, exist_ok=True)
        _write_run_echo(spec, workers)
        write_csv(os.path.join(spec.output_dir, "results.csv"), RESULT_COLUMNS, rows)
        write_csv(os.path.join(spec.output_dir, "summary.csv"), SUMMARY_COLUMNS, summary)
    return rows, summary


def summarize_rows(rows: list[dict]) -> list[dict]:
    """Per (sweep_value, solver): median and interquartile range of each error."""
    groups: dict[tuple, list[dict]] = {}
    order = []
    for row in rows:
        key = (row["sweep_value"], row["solver"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    def med_iqr(vals):
        arr = np.asarray(vals, dtype=np.float64)
        if np.all(np.isnan(arr)):
            return float("nan"), float("nan")
        return (float(np.nanmedian(arr)),
                float(np.nanpercentile(arr, 75) - np.nanpercentile(arr, 25)))

    summary = []
    for key in order:
        grp = groups[key]
        em_med, em_iqr = med_iqr([g["eps_m"] for g in grp])
        er_med, er_iqr = med_iqr([g["eps_r"] for g in grp])
        ep_med, ep_iqr = med_iqr([g["eps_r_per_pixel"] for g in grp])
        summary.append({
            "sweep_value": key[0], "solver": key[1], "trials": len(grp),
            "eps_m_median": em_med, "eps_m_iqr": em_iqr,
            "eps_r_median": er_med, "eps_r_iqr": er_iqr,
            "eps_r_per_pixel_median": ep_med, "eps_r_per_pixel_iqr": ep_iqr,
        })
    return summary


def write_csv(path, columns, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_run_echo(spec: ExperimentSpec, workers: int) -> None:
    echo = {"config": spec.to_dict(), "workers": workers, "version": __version__}
    with open(os.path.join(spec.output_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(echo, fh, indent=2)


# ---------------------------------------------------------------------------
# Verification suite
# ---------------------------------------------------------------------------

def default_checks() -> list[dict]:
    """The default verification suite: one entry per theory check, with
    desk-scale parameters. Entries marked required must report zero failures."""
    return [
        {"name": "gaussian_full_rank", "shapes": [[12, 7], [40, 20], [100, 784]],
         "trials": 20, "required": True},
        {"name": "every_r_rows_full_rank", "n": 12, "k": 3, "outliers": 2,
         "required": True},
        {"name": "leaky_beta_range", "trials": 10_000, "required": True},
        {"name": "leaky_layer_lift", "dims": [6, 24, 48], "h": 0.2, "pairs": 50,
         "required": True},
        {"name": "k_majority", "dims": [10, 40, 160], "h": 0.2, "trials": 200,
         "rho_grid": [0.02, 0.05, 0.1], "K_mode": "worst_by_magnitude",
         "require_max_rho": 0.02, "required": True},
        {"name": "relu_path_slope", "n": 50, "cases": 200, "tol": 1e-9,
         "required": True},
        {"name": "norm_bounds", "n": 200, "alpha": 0.5, "h": 0.5, "trials": 2000,
         "required": True},
        {"name": "l0_roundtrip", "cases": 12, "required": True},
    ]


def _check_gaussian_full_rank(params, seed):
    trials = int(params.get("trials", 20))
    shapes = [tuple(s) for s in params.get("shapes", [[12, 7]])]
    failures = 0
    total = 0
    min_margin = math.inf
    for si, shape in enumerate(shapes):
        for t in range(trials):
            rng = substream(seed, (si, t))
            a = rng.standard_normal(shape)
            sv = np.linalg.svd(a, compute_uv=False)
            margin = float(sv[-1]) - 1e-10 * float(sv[0])
            min_margin = min(min_margin, margin)
            total += 1
            if margin <= 0:
                failures += 1
    return [(theory.ConditionReport(
        "gaussian_full_rank", total, failures, min_margin,
        {"shapes": [list(s) for s in shapes], "trials_per_shape": trials,
         "seed": seed}), True)]


def _check_every_r_rows(params, seed):
    if "matrix" in params:
        w = np.asarray(params["matrix"], dtype=np.float64)
        n, k = w.shape
    else:
        n, k = int(params["n"]), int(params["k"])
        mid = int(params.get("mid", k))
        rng = substream(seed, ())
        w = rng.standard_normal((n, mid)) @ rng.standard_normal((mid, k))
    l = int(params.get("outliers", 2))
    r = int(params.get("r", n - (2 * l + 1)))
    report = theory.every_r_rows_full_rank(w, r)
    report.params.update({"outliers": l, "seed": seed})
    return [(report, True)]


def _check_leaky_beta_range(params, seed):
    trials = int(params.get("trials", 10_000))
    rng = substream(seed, ())
    failures = 0
    min_margin = math.inf
    for _ in range(trials):
        x, y = rng.standard_normal(2)
        while x == y:
            x, y = rng.standard_normal(2)
        h = rng.uniform(1e-6, 1.0)
        beta = theory.leaky_beta(x, y, h)
        margin = min(beta - h, 1.0 - beta)
        min_margin = min(min_margin, margin)
        if not h <= beta <= 1.0:
            failures += 1
    return [(theory.ConditionReport(
        "leaky_beta_range", trials, failures, min_margin, {"seed": seed}), True)]


def _check_leaky_layer_lift(params, seed):
    dims = list(params.get("dims", [6, 24, 48]))
    h = float(params.get("h", 0.2))
    pairs = int(params.get("pairs", 50))
    net = random_gaussian_net(dims, Activation(LEAKY_RELU, h), seed)
    failures = 0
    min_margin = math.inf
    for t in range(pairs):
        rng = substream(seed, (t,))
        z = rng.standard_normal(net.k)
        z0 = rng.standard_normal(net.k)
        for ratios in theory.leaky_layer_ratios(net, z, z0):
            finite = ratios[np.isfinite(ratios)]
            if finite.size == 0:
                continue
            margin = float(min(np.min(finite) - h, 1.0 - np.max(finite)))
            min_margin = min(min_margin, margin)
            if margin < 0:
                failures += 1
    return [(theory.ConditionReport(
        "leaky_layer_lift", pairs, failures, min_margin,
        {"dims": dims, "h": h, "bias": "gaussian", "seed": seed}), True)]


def _check_k_majority(params, seed):
    dims = list(params.get("dims", [10, 40, 160]))
    h = float(params.get("h", 0.2))
    net = random_gaussian_net(dims, Activation(LEAKY_RELU, h), seed)
    reports = theory.estimate_rho_star(
        net,
        trials=int(params.get("trials", 200)),
        rho_grid=params.get("rho_grid", [0.02, 0.05, 0.1]),
        K_mode=params.get("K_mode", "worst_by_magnitude"),
        seed=seed)
    require_max = float(params.get("require_max_rho", 0.0))
    out = []
    for rep in reports:
        rep.params["rho_star_hat"] = theory.rho_star_from_reports(reports)
        rep.params["bias"] = "gaussian"
        out.append((rep, rep.params["rho"] <= require_max))
    return out


def _check_relu_path_slope(params, seed):
    n = int(params.get("n", 50))
    cases = int(params.get("cases", 200))
    tol = float(params.get("tol", 1e-9))
    failures = 0
    worst = 0.0
    for t in range(cases):
        rng = substream(seed, (t,))
        hcol, gc, tval, eps = _safe_slope_case(rng, n)
        slope = theory.relu_path_slope(hcol, gc, tval)
        fd = (theory.relu_path_value(hcol, gc, tval + eps)
              - theory.relu_path_value(hcol, gc, tval)) / eps
        err = abs(slope - fd)
        worst = max(worst, err)
        if err > tol:
            failures += 1
    return [(theory.ConditionReport(
        "relu_path_slope", cases, failures, tol - worst,
        {"n": n, "tol": tol, "seed": seed}), True)]


def _safe_slope_case(rng, n, min_piece=4e-4):
    """Random (hcol, Hc, t) with t in the interior of a linear piece wide
    enough for an exact forward difference; eps is half the gap to the next
    kink."""
    while True:
        hcol = rng.standard_normal(n)
        gc = rng.standard_normal(n)
        t = rng.uniform(0.0, 3.0)
        kinks = theory.relu_path_kinks(hcol, gc)
        ahead = kinks[kinks > t + min_piece]
        behind = kinks[(kinks <= t) & (kinks > t - 1e-12)]
        if behind.size:   # t essentially on a kink; resample
            continue
        gap = float(ahead[0] - t) if ahead.size else 1.0
        if gap < min_piece:
            continue
        return hcol, gc, t, min(gap / 2.0, 0.5)


def _check_norm_bounds(params, seed):
    n = int(params.get("n", 200))
    alpha = float(params.get("alpha", 0.5))
    h = float(params.get("h", 0.5))
    trials = int(params.get("trials", 2000))
    nm = n - int(round(alpha * n))
    rng = substream(seed, ())
    mat = rng.standard_normal((n, nm))
    report = theory.norm_bounds_check(mat, trials, h,
                                      rho_grid=params.get("rho_grid"), seed=seed)
    report.params["seed"] = seed
    return [(report, True)]


def _check_l0_roundtrip(params, seed):
    cases = int(params.get("cases", 12))
    discrepancies = 0
    details = []
    for t in range(cases):
        rng = substream(seed, (t,))
        good = t % 3 != 2   # two generic cases, then one engineered failure
        if good:
            m, l = 11 + t % 5, 1 + t % 2
            net = random_gaussian_net([1, 6], Activation("identity"), int(rng.integers(2**31)))
            mat = rng.standard_normal((m, net.n))
        else:
            # Composite output touches only 2l coordinates: separation == 2l.
            l = 1
            m = 6
            w = np.zeros((m, 1))
            w[:2 * l, 0] = 1.0
            net = GeneratorNetwork((1, m), (w,), (np.zeros(m),),
                                   Activation("identity"), 0)
            mat = np.eye(m)
        grid = theory.latent_grid(1, points=111)
        z0 = grid[int(rng.integers(grid.shape[0]))]
        zero_tol = None
        seps = [theory.l0_separation(net, mat, z, z0,
                                     theory.default_zero_tol(mat @ forward(net, z0)))
                for z in grid if not np.array_equal(z, z0)]
        predicted = min(seps) >= 2 * l + 1
        recovered, _ = theory.l0_recovery_bruteforce(net, mat, z0, l, grid, zero_tol)
        if recovered != predicted:
            discrepancies += 1
        details.append({"case": t, "l": l, "min_separation": int(min(seps)),
                        "predicted": bool(predicted), "recovered": bool(recovered)})
    margin = 1.0 if discrepancies == 0 else -float(discrepancies)
    return [(theory.ConditionReport(
        "l0_roundtrip", cases, discrepancies, margin,
        {"details": details, "seed": seed}), True)]


_CHECK_RUNNERS = {
    "gaussian_full_rank": _check_gaussian_full_rank,
    "every_r_rows_full_rank": _check_every_r_rows,
    "leaky_beta_range": _check_leaky_beta_range,
    "leaky_layer_lift": _check_leaky_layer_lift,
    "k_majority": _check_k_majority,
    "relu_path_slope": _check_relu_path_slope,
    "norm_bounds": _check_norm_bounds,
    "l0_roundtrip": _check_l0_roundtrip,
}


def run_verify(spec: ExperimentSpec, workers: int = 1) -> dict:
    """Execute the configured verification checks and build a manifest.

    The manifest's all_passed is False iff any required check reported
    failures. When output_dir is set, writes run.json and manifest.json.
    """
    checks = list(spec.checks) if spec.checks is not None else default_checks()
    if spec.checks is None and spec.sweep.get("axis") == "rho_grid":
        for entry in checks:
            if entry["name"] == "k_majority":
                entry["rho_grid"] = list(spec.sweep["values"])
    reports = []
    for ci, entry in enumerate(checks):
        name = entry["name"]
        if name not in _CHECK_RUNNERS:
            raise ValueError(f"unknown check {name!r}; known: {sorted(_CHECK_RUNNERS)}")
        required_default = bool(entry.get("required", True))
        seed = child_seeds(spec.seed, 1, spawn_key=(ci,))[0]
        for report, required in _CHECK_RUNNERS[name](entry, seed):
            item = report.to_dict()
            item["required"] = required and required_default
            reports.append(item)
    all_passed = all(not r["required"] or r["failures"] == 0 for r in reports)
    manifest = {"name": spec.name, "seed": spec.seed, "version": __version__,
                "reports": reports, "all_passed": all_passed}
    if spec.output_dir:
        os.makedirs(spec.output_dir, exist_ok=True)
        _write_run_echo(spec, workers)
        with open(os.path.join(spec.output_dir, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
    return manifest


def report_long_format(results_csv_path: str):
    """Melt a results.csv into plot-ready long rows
    (sweep_value, trial, solver, metric, value)."""
    out = []
    with open(results_csv_path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            for metric in ("eps_m", "eps_r", "eps_r_per_pixel"):
                out.append({
                    "sweep_value": row["sweep_value"], "trial": row["trial"],
                    "solver": row["solver"], "metric": metric,
                    "value": row[metric],
                })
    return out
