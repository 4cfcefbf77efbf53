"""Recovery solvers for min_z || M G(z) - y || objectives.

Four methods: linearized ADMM on the l1 objective, and gradient descent on
the squared l1, squared l2, and ridge-regularized squared l2 objectives.
Shared primitives (soft-thresholding, SVD pseudo-inverse, Armijo line search
with a Barzilai-Borwein trial step, multi-restart driver) live here too.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from ._common import as_matrix, as_vector, substream
from .generator import GeneratorNetwork, forward, jacobian

ADMM_L1 = "admm-l1"
GD_L1SQ = "gd-l1sq"
GD_L2SQ = "gd-l2sq"
GD_L2SQ_REG = "gd-l2sq-reg"
METHODS = (ADMM_L1, GD_L1SQ, GD_L2SQ, GD_L2SQ_REG)

_MAX_BACKTRACKS = 100


class SolverDiverged(RuntimeError):
    """Raised when a solver produces non-finite iterates. Carries the trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass(frozen=True)
class SolverConfig:
    method: str = ADMM_L1
    rho: float = 1.0                # ADMM penalty
    lambda_reg: float = 0.0         # ridge weight for gd-l2sq-reg
    max_iters: int = 1000
    restarts: int = 1
    init_scale: float = 1.0         # sd of the random z0
    step_init: float = 1.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    tol_primal: float | None = None  # default 1e-6 * sqrt(m), resolved per run
    tol_step: float = 1e-8
    zero_tol: float | None = None    # default 1e-8 * (1 + |y|_inf), per run
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.rho <= 0:
            raise ValueError("rho must be > 0")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be >= 0")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be >= 1")
        if not 0 < self.armijo_c < 1 or not 0 < self.armijo_shrink < 1:
            raise ValueError("armijo_c and armijo_shrink must lie in (0, 1)")
        if self.step_init <= 0 or self.tol_step <= 0:
            raise ValueError("step_init and tol_step must be > 0")
        if self.tol_primal is not None and self.tol_primal <= 0:
            raise ValueError("tol_primal must be > 0 when given")
        if self.zero_tol is not None and self.zero_tol <= 0:
            raise ValueError("zero_tol must be > 0 when given")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")

    def to_dict(self) -> dict:
        return {
            "method": self.method, "rho": self.rho, "lambda_reg": self.lambda_reg,
            "max_iters": self.max_iters, "restarts": self.restarts,
            "init_scale": self.init_scale, "step_init": self.step_init,
            "armijo_c": self.armijo_c, "armijo_shrink": self.armijo_shrink,
            "tol_primal": self.tol_primal, "tol_step": self.tol_step,
            "zero_tol": self.zero_tol, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    primal_residual: float
    eps_m: float


@dataclass
class RecoveryResult:
    z_hat: np.ndarray
    x_hat: np.ndarray
    eps_m: float
    eps_r: float | None = None
    iters_used: int = 0
    trace: list[TraceRecord] = field(default_factory=list)
    restart_index: int = 0
    converged: bool = False


class Metrics(NamedTuple):
    eps_m: float
    eps_r: float | None
    eps_r_per_pixel: float | None


def soft_threshold(v, tau: float) -> np.ndarray:
    """Element-wise shrink toward zero by tau (proximal operator of |.|_1)."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def pseudo_inverse(a) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below eps * max(p, q) * sigma_max are treated as zero.
    """
    a = as_matrix(a, name="A")
    if not np.all(np.isfinite(a)):
        raise ValueError("pseudo_inverse requires finite entries")
    rcond = np.finfo(np.float64).eps * max(a.shape)
    return np.linalg.pinv(a, rcond=rcond)


def default_zero_tol(y) -> float:
    """Threshold for l0 counting of residuals against measurement scale."""
    y = np.asarray(y, dtype=np.float64)
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    return 1e-8 * (1.0 + peak)


def metrics(net: GeneratorNetwork, M, y, z_hat, x0=None) -> Metrics:
    """Measurement misfit eps_m = |y - M G(z)|_1 and, when the ground truth
    x0 is known, the reconstruction error eps_r = |x0 - G(z)|_2^2 together
    with its per-pixel variant eps_r / n."""
    M = as_matrix(M, name="M")
    y = as_vector(y, M.shape[0], "y")
    x_hat = forward(net, z_hat)
    eps_m = float(np.sum(np.abs(y - M @ x_hat)))
    if x0 is None:
        return Metrics(eps_m, None, None)
    x0 = as_vector(x0, net.n, "x0")
    eps_r = float(np.sum((x0 - x_hat) ** 2))
    return Metrics(eps_m, eps_r, eps_r / net.n)


def _initial_z(net: GeneratorNetwork, cfg: SolverConfig, restart: int) -> np.ndarray:
    rng = substream(cfg.seed, (restart,))
    return rng.normal(0.0, cfg.init_scale, size=net.k)


def _check_method(cfg: SolverConfig, *allowed: str) -> None:
    if cfg.method not in allowed:
        raise ValueError(f"config method {cfg.method!r} does not match solver {allowed}")


def admm_l1(net: GeneratorNetwork, M, y, cfg: SolverConfig, z0=None,
            probe: Callable[[dict], None] | None = None) -> RecoveryResult:
    """Linearized ADMM for min_z ||M G(z) - y||_1.

    Each iteration linearizes G at the current iterate, solves the resulting
    least-squares z-subproblem through the pseudo-inverse, soft-thresholds
    the split variable w, and takes a dual ascent step on the multiplier.
    Initialization: w0 = M G(z0) - y (feasible, so the first primal residual
    is zero by construction) and multiplier 0. Because the trajectory need
    not be monotone on a nonconvex G, the iterate with the smallest l1
    measurement misfit is returned, not the last one.

    `probe`, when given, is called once per iteration with the internal
    quantities (A, rhs, z_new, w_input, w, lam) for diagnostics.
    """
    _check_method(cfg, ADMM_L1)
    M = as_matrix(M, name="M")
    m = M.shape[0]
    y = as_vector(y, m, "y")
    if M.shape[1] != net.n:
        raise ValueError(f"M has {M.shape[1]} columns, net outputs {net.n}")

    rho = cfg.rho
    tol_primal = cfg.tol_primal if cfg.tol_primal is not None else 1e-6 * math.sqrt(m)
    z = _initial_z(net, cfg, 0) if z0 is None else as_vector(z0, net.k, "z0").copy()
    mgz = M @ forward(net, z)
    w = mgz - y
    lam = np.zeros(m)

    eps_m = float(np.sum(np.abs(y - mgz)))
    best_eps, best_z = eps_m, z.copy()
    trace = [TraceRecord(0, eps_m, float(np.linalg.norm(mgz - w - y)), eps_m)]
    converged = False
    iters = 0

    for q in range(1, cfg.max_iters + 1):
        a = M @ jacobian(net, z)
        rhs = w + y - lam / rho - (mgz - a @ z)
        z_new = pseudo_inverse(a) @ rhs
        if not np.all(np.isfinite(z_new)):
            raise SolverDiverged(f"non-finite z iterate at iteration {q}", trace)
        mgz_new = M @ forward(net, z_new)
        w_input = mgz_new - y + lam / rho
        w = soft_threshold(w_input, 1.0 / rho)
        lam = lam + rho * (mgz_new - w - y)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(lam))):
            raise SolverDiverged(f"non-finite w/lambda at iteration {q}", trace)

        primal = float(np.linalg.norm(mgz_new - w - y))
        eps_m = float(np.sum(np.abs(y - mgz_new)))
        trace.append(TraceRecord(q, eps_m, primal, eps_m))
        if probe is not None:
            probe({"iteration": q, "A": a, "rhs": rhs, "z_prev": z, "z_new": z_new,
                   "w_input": w_input, "w": w, "lam": lam, "rho": rho})

        step = float(np.linalg.norm(z_new - z))
        z, mgz = z_new, mgz_new
        iters = q
        if eps_m < best_eps:
            best_eps, best_z = eps_m, z.copy()
        if primal < tol_primal and step < cfg.tol_step:
            converged = True
            break

    return RecoveryResult(z_hat=best_z, x_hat=forward(net, best_z), eps_m=best_eps,
                          iters_used=iters, trace=trace, converged=converged)


def _descend(net: GeneratorNetwork, M, y, cfg: SolverConfig, z0,
             value: Callable, grad: Callable) -> RecoveryResult:
    """Armijo-backtracked descent with a Barzilai-Borwein trial step.

    `value(z) -> (f, r)` returns the objective and residual M G(z) - y;
    `grad(z, r) -> g` the (sub)gradient. Accepted steps never increase the
    objective; iteration stops at max_iters, on ||step|| < tol_step, or when
    backtracking cannot find any decrease (a nonsmooth stall).
    """
    z = _initial_z(net, cfg, 0) if z0 is None else as_vector(z0, net.k, "z0").copy()
    f, r = value(z)
    if not np.isfinite(f):
        raise SolverDiverged("non-finite objective at the initial point", [])
    g = grad(z, r)
    if not np.all(np.isfinite(g)):
        raise SolverDiverged("non-finite gradient at the initial point", [])
    eps_m = float(np.sum(np.abs(r)))
    trace = [TraceRecord(0, f, float("nan"), eps_m)]
    converged = False
    iters = 0

    if not np.any(g):
        return RecoveryResult(z_hat=z, x_hat=forward(net, z), eps_m=eps_m,
                              iters_used=0, trace=trace, converged=True)

    t_trial = cfg.step_init
    for q in range(1, cfg.max_iters + 1):
        gg = float(g @ g)
        if gg == 0.0:
            converged = True
            break
        t = t_trial
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            z_new = z - t * g
            f_new, r_new = value(z_new)
            if np.isfinite(f_new) and f_new <= f - cfg.armijo_c * t * gg:
                accepted = True
                break
            t *= cfg.armijo_shrink
        if not accepted:
            break
        g_new = grad(z_new, r_new)
        if not (np.all(np.isfinite(z_new)) and np.all(np.isfinite(g_new))):
            raise SolverDiverged(f"non-finite iterate at iteration {q}", trace)

        s = z_new - z
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 0 and np.isfinite(sy):
            t_trial = min(max(float(s @ s) / sy, 1e-20), 1e20)
        else:
            t_trial = cfg.step_init

        step = float(np.linalg.norm(s))
        z, f, g = z_new, f_new, g_new
        trace.append(TraceRecord(q, f, float("nan"), float(np.sum(np.abs(r_new)))))
        iters = q
        if step < cfg.tol_step:
            converged = True
            break

    return RecoveryResult(z_hat=z, x_hat=forward(net, z), eps_m=trace[-1].eps_m,
                          iters_used=iters, trace=trace, converged=converged)


def gd_squared_l1(net: GeneratorNetwork, M, y, cfg: SolverConfig, z0=None) -> RecoveryResult:
    """Gradient descent on f(z) = ||M G(z) - y||_1^2.

    The descent direction comes from the subgradient
    2 ||r||_1 J^T M^T sign(r) with sign(0) = 0; the objective is
    non-differentiable only on a measure-zero set.
    """
    _check_method(cfg, GD_L1SQ)
    M = as_matrix(M, name="M")
    y = as_vector(y, M.shape[0], "y")
    if M.shape[1] != net.n:
        raise ValueError(f"M has {M.shape[1]} columns, net outputs {net.n}")

    def value(z):
        r = M @ forward(net, z) - y
        l1 = float(np.sum(np.abs(r)))
        return l1 * l1, r

    def grad(z, r):
        l1 = float(np.sum(np.abs(r)))
        return 2.0 * l1 * (jacobian(net, z).T @ (M.T @ np.sign(r)))

    return _descend(net, M, y, cfg, z0, value, grad)


def gd_squared_l2(net: GeneratorNetwork, M, y, cfg: SolverConfig, z0=None) -> RecoveryResult:
    """Gradient descent on ||M G(z) - y||_2^2, plus lambda_reg ||z||_2^2 for
    the regularized method."""
    _check_method(cfg, GD_L2SQ, GD_L2SQ_REG)
    M = as_matrix(M, name="M")
    y = as_vector(y, M.shape[0], "y")
    if M.shape[1] != net.n:
        raise ValueError(f"M has {M.shape[1]} columns, net outputs {net.n}")
    lam = cfg.lambda_reg if cfg.method == GD_L2SQ_REG else 0.0

    def value(z):
        r = M @ forward(net, z) - y
        f = float(r @ r)
        if lam > 0:
            f += lam * float(z @ z)
        return f, r

    def grad(z, r):
        g = 2.0 * (jacobian(net, z).T @ (M.T @ r))
        if lam > 0:
            g = g + 2.0 * lam * z
        return g

    return _descend(net, M, y, cfg, z0, value, grad)


_SOLVERS: dict[str, Callable] = {
    ADMM_L1: admm_l1,
    GD_L1SQ: gd_squared_l1,
    GD_L2SQ: gd_squared_l2,
    GD_L2SQ_REG: gd_squared_l2,
}


def multi_restart(net: GeneratorNetwork, M, y, cfg: SolverConfig,
                  solver: Callable | None = None) -> RecoveryResult:
    """Run cfg.restarts independent starts z0 ~ N(0, init_scale^2 I) and keep
    the result with the smallest l1 measurement misfit.

    Restart i draws from the i-th substream of cfg.seed, so restart 0 equals
    a single run with the same config. Divergence of individual restarts is
    tolerated; the error propagates only if every restart diverges.
    """
    if solver is None:
        solver = _SOLVERS[cfg.method]
    best: RecoveryResult | None = None
    last_err: SolverDiverged | None = None
    for i in range(cfg.restarts):
        z0 = _initial_z(net, cfg, i)
        try:
            res = solver(net, M, y, cfg, z0=z0)
        except SolverDiverged as err:
            last_err = err
            continue
        res.restart_index = i
        if best is None or res.eps_m < best.eps_m:
            best = res
    if best is None:
        raise SolverDiverged("all restarts diverged",
                             last_err.trace if last_err else [])
    return best


def solve(net: GeneratorNetwork, M, y, cfg: SolverConfig) -> RecoveryResult:
    """Dispatch on cfg.method, honoring cfg.restarts."""
    return multi_restart(net, M, y, cfg)


def write_trace(trace: list[TraceRecord], path) -> None:
    """Export an iterate trace as CSV rows (iter, objective, primal_residual, eps_m)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "objective", "primal_residual", "eps_m"])
        for rec in trace:
            writer.writerow([rec.iteration, repr(rec.objective),
                             repr(rec.primal_residual), repr(rec.eps_m)])
