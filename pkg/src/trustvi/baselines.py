"""Comparison optimizers sharing the same estimators and call accounting.

The SGD baseline tunes its learning rate on short trial runs and then
descends with an accumulating-squared-gradient step normalization.  The
Newton baseline takes raw conjugate-gradient Newton steps with no step-size
control at all; on overflow it stops and reports divergence.
"""

import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import Array, NumericalOverflow, VariationalParams
from .loop import RunSummary, TraceRecord
from .objective import as_objective


@dataclass(frozen=True)
class AdviConfig:
    rate_grid: Tuple[float, ...] = (100.0, 10.0, 1.0, 0.1, 0.01, 0.001)
    adaptation_iters: int = 50
    n_grad: int = 256
    decay_exponent: float = -0.5 + 1e-16
    smoothing: float = 0.1  # weight of the newest squared gradient
    rate_offset: float = 1.0
    budget: int = 100_000
    seed: int = 0
    omega0: Optional[Array] = None

    def __post_init__(self):
        if not (1 <= len(self.rate_grid) <= 6):
            raise ValueError("rate grid must hold between 1 and 6 entries")
        if self.adaptation_iters < 1 or self.n_grad < 16:
            raise ValueError("bad adaptation or batch settings")


@dataclass(frozen=True)
class NewtonBaselineConfig:
    n_grad: int = 256
    n_hvp: int = 85
    cg_tol: float = 1e-6
    cg_max_iter: int = 250
    budget: int = 100_000
    seed: int = 0
    omega0: Optional[Array] = None


@dataclass(frozen=True)
class BaselineResult:
    trace: List[TraceRecord]
    summary: RunSummary
    final_omega: VariationalParams


def _init_omega(objective, omega0) -> VariationalParams:
    if omega0 is not None:
        return VariationalParams.from_vector(np.asarray(omega0, dtype=float))
    return VariationalParams.from_vector(np.zeros(objective.dim))


def _final_elbo(objective, omega, seed, stream, n, fallback_trace):
    try:
        batch = objective.draw(seed, stream, n)
        return float(objective.elbo(omega, batch))
    except NumericalOverflow:
        finite = [r.elbo_est for r in fallback_trace if math.isfinite(r.elbo_est)]
        return finite[-1] if finite else float("nan")


def _sgd_run(
    objective,
    cfg,
    omega,
    rate,
    stream_base,
    trace,
    start_iter,
    max_iters=None,
    max_calls=None,
):
    """Adaptive SGD from omega; returns the final iterate and calls charged.

    The step size is rate * i^decay / (offset + sqrt(acc)) with acc an
    exponential accumulation of squared gradients.  An overflow at an
    iterate is recorded and the offending step is halved until evaluation
    succeeds again; every evaluation attempt costs one oracle call.
    """
    acc = None
    calls = 0
    it = start_iter
    prev = omega
    last_step = None
    i = 0
    while True:
        i += 1
        if max_iters is not None and i > max_iters:
            break
        if max_calls is not None and calls >= max_calls:
            break
        t0 = time.perf_counter()
        grad_calls = 1
        batch = objective.draw(cfg.seed, (stream_base, it), cfg.n_grad)
        while True:
            try:
                elbo, gs = objective.elbo_and_gradient(omega, batch)
                break
            except NumericalOverflow:
                # Back off along the last step until the iterate is sane.
                if last_step is None:
                    raise
                last_step = 0.5 * last_step
                omega = prev.shifted(last_step)
                grad_calls += 1
        g = gs.mean_gradient
        # inf is fine here: a wild step is caught by the overflow backoff
        with np.errstate(over="ignore", invalid="ignore"):
            g2 = g * g
            acc = (
                g2
                if acc is None
                else cfg.smoothing * g2 + (1 - cfg.smoothing) * acc
            )
            step = (
                rate
                * i**cfg.decay_exponent
                / (cfg.rate_offset + np.sqrt(acc))
                * g
            )
        prev = omega
        last_step = step
        omega = omega.shifted(step)
        calls += grad_calls
        trace.append(
            TraceRecord(
                iter=it,
                cum_oracle_calls=0,  # filled in by the caller
                elbo_est=elbo,
                delta=0.0,
                m_prime=0.0,
                ell_prime=0.0,
                n_assess=0,
                sigma_hat=0.0,
                accepted=True,
                grad_calls=grad_calls,
                hvp_calls=0,
                assess_calls=0,
                wall_time=time.perf_counter() - t0,
            )
        )
        it += 1
    return omega, calls, it


def advi_optimize(model, cfg: AdviConfig) -> BaselineResult:
    """Two-phase SGD: learning-rate trials, then a full run with the winner.

    Each trial runs adaptation_iters iterations from the initial point; the
    trial score is the mean estimated objective over its last ten
    iterations, with ties resolved toward the smaller rate.
    """
    objective = as_objective(model)
    omega0 = _init_omega(objective, cfg.omega0)
    trace: List[TraceRecord] = []
    scores = []
    it = 0
    for idx, rate in enumerate(cfg.rate_grid):
        before = len(trace)
        _, _, it = _sgd_run(
            objective,
            cfg,
            omega0,
            rate,
            idx,
            trace,
            it,
            max_iters=cfg.adaptation_iters,
        )
        tail = [r.elbo_est for r in trace[before:]][-10:]
        finite = [v for v in tail if math.isfinite(v)]
        scores.append(np.mean(finite) if finite else -math.inf)
    best = min(
        range(len(cfg.rate_grid)),
        key=lambda i: (-scores[i], cfg.rate_grid[i]),
    )
    winner = cfg.rate_grid[best]

    spent = sum(r.grad_calls for r in trace)
    remaining = max(cfg.budget - spent, 0)
    omega, _, it = _sgd_run(
        objective,
        cfg,
        omega0,
        winner,
        len(cfg.rate_grid),
        trace,
        it,
        max_calls=remaining,
    )
    # Cumulative accounting over both phases.
    cum = 0
    rows: List[TraceRecord] = []
    for r in trace:
        cum += r.grad_calls
        rows.append(
            TraceRecord(
                iter=r.iter,
                cum_oracle_calls=cum,
                elbo_est=r.elbo_est,
                delta=r.delta,
                m_prime=r.m_prime,
                ell_prime=r.ell_prime,
                n_assess=r.n_assess,
                sigma_hat=r.sigma_hat,
                accepted=r.accepted,
                grad_calls=r.grad_calls,
                hvp_calls=r.hvp_calls,
                assess_calls=r.assess_calls,
                wall_time=r.wall_time,
            )
        )
    final = _final_elbo(
        objective, omega, cfg.seed, (99, 0), 10 * cfg.n_grad, rows
    )
    summary = RunSummary(
        model=getattr(objective, "name", "unknown"),
        method="advi",
        seed=cfg.seed,
        final_elbo=final,
        total_oracle_calls=rows[-1].cum_oracle_calls if rows else 0,
        accept_rate=1.0,
        diverged=False,
    )
    return BaselineResult(trace=rows, summary=summary, final_omega=omega)


def _plain_cg(op, b: Array, tol: float, max_iter: int) -> Array:
    """Unpreconditioned conjugate gradients on op(x) = b, no safeguards."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    bnorm = math.sqrt(rr)
    if bnorm == 0.0:
        return x
    for _ in range(max_iter):
        # curvature estimates at wild iterates can be inf; the products go
        # inf/nan on purpose and the finiteness check below raises
        with np.errstate(over="ignore", invalid="ignore"):
            ap = np.asarray(op(p), dtype=float)
            curv = float(p @ ap)
            if curv == 0.0:
                break
            alpha = rr / curv
            x = x + alpha * p
            r = r - alpha * ap
            rr_next = float(r @ r)
        if not (math.isfinite(rr_next) and np.isfinite(x).all()):
            raise NumericalOverflow("conjugate gradient iterates overflowed")
        if math.sqrt(rr_next) <= tol * bnorm:
            break
        p = r + (rr_next / rr) * p
        rr = rr_next
    return x


def hfsgvi_optimize(model, cfg: NewtonBaselineConfig) -> BaselineResult:
    """Newton steps from sampled gradients and curvature, full step every
    time.  Any overflow ends the run with a diverged flag."""
    objective = as_objective(model)
    omega = _init_omega(objective, cfg.omega0)
    trace: List[TraceRecord] = []
    cum = 0
    it = 0
    diverged = False
    while cum + 3 <= cfg.budget:
        t0 = time.perf_counter()
        try:
            e_grad = objective.draw(cfg.seed, (1, it), cfg.n_grad)
            elbo, gs = objective.elbo_and_gradient(omega, e_grad)
            g = gs.mean_gradient
            e_hvp = objective.draw(cfg.seed, (2, it), cfg.n_hvp)
            hvp = objective.hvp_operator(omega, e_hvp)
            # Newton step for a maximization: solve (-H) s = g.
            s = _plain_cg(
                lambda v: -np.asarray(hvp(v), dtype=float),
                g,
                cfg.cg_tol,
                min(objective.dim, cfg.cg_max_iter),
            )
            if not np.isfinite(s).all():
                raise NumericalOverflow("non-finite Newton step")
            omega = omega.shifted(s)
        except NumericalOverflow:
            diverged = True
            break
        cum += 3
        trace.append(
            TraceRecord(
                iter=it,
                cum_oracle_calls=cum,
                elbo_est=elbo,
                delta=0.0,
                m_prime=0.0,
                ell_prime=0.0,
                n_assess=0,
                sigma_hat=0.0,
                accepted=True,
                grad_calls=1,
                hvp_calls=2,
                assess_calls=0,
                wall_time=time.perf_counter() - t0,
            )
        )
        it += 1
    final = _final_elbo(
        objective, omega, cfg.seed, (99, 1), 10 * cfg.n_grad, trace
    )
    summary = RunSummary(
        model=getattr(objective, "name", "unknown"),
        method="hfsgvi",
        seed=cfg.seed,
        final_elbo=final,
        total_oracle_calls=cum,
        accept_rate=1.0,
        diverged=diverged,
    )
    return BaselineResult(trace=trace, summary=summary, final_omega=omega)
