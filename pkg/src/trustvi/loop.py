"""The stochastic trust-region optimizer and its replay probe.

Each iteration draws a fresh gradient batch, builds a sampled quadratic
model (the curvature batch is reused across at most two consecutive
iterations while the iterate is unchanged), solves the ball-constrained
subproblem by truncated conjugate gradients, and submits the step to the
matched-pairs acceptance test.  Accepted steps grow the radius, rejected
ones shrink it.  Oracle-call accounting is one unit per gradient batch, two
per curvature batch used, and one per assessment batch drawn.
"""

import math
import time
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .assessment import AcceptanceParams, assess
from .core import (
    Array,
    BaseBatch,
    ConfigurationError,
    NumericalOverflow,
    VariationalParams,
    adapt_gradient_batch,
    jackknife_grad_norm_sd,
)
from .objective import as_objective
from .subproblem import QuadraticModel, solve_tr_krylov


@dataclass(frozen=True)
class OptimizerConfig:
    """Tunables for the trust-region optimizer.

    alpha defaults to ten times its lower bound lambda / (1 - gamma^-2).
    The nu, zeta, kappa_h, and delta_minus entries only shape the radius
    threshold reported by the theory probe; the optimizer itself never
    reads them.
    """

    eta: float = 0.1
    gamma: float = 2.0
    lam: float = 1e-2
    alpha: Optional[float] = None
    nu1: float = 0.1
    nu2: float = 0.5
    nu3: float = 0.4
    zeta0: float = 0.75
    zeta1: float = 0.75
    kappa_h: float = math.inf
    delta_minus: float = math.inf
    delta0: float = 1.0
    delta_max: float = 10.0
    n_grad: int = 256
    n_grad_min: int = 64
    n_grad_max: int = 8192
    jackknife_subbatches: int = 16
    c_low: float = 2.0
    c_high: float = 10.0
    n_hvp: int = 85
    n_assess_min: int = 128
    n_cap: int = 2**20
    sigma_prior0: float = 1.0
    tr_tol: float = 1e-6
    tr_max_iter: int = 250
    budget: int = 100_000
    seed: int = 0
    delta_stop: float = 1e-6
    stop_patience: int = 10
    omega0: Optional[Array] = None

    def __post_init__(self):
        if self.alpha is None:
            bound = self.lam / (1.0 - self.gamma**-2)
            object.__setattr__(self, "alpha", 10.0 * bound)
        self.acceptance_params()  # range checks on eta, gamma, lam, alpha, zeta1
        if not (0.0 < self.nu1 < 1.0 - self.eta):
            raise ConfigurationError("nu1 must lie in (0, 1 - eta)")
        if not (0.0 < self.nu2 < 1.0):
            raise ConfigurationError("nu2 must lie in (0, 1)")
        if not (0.0 < self.nu3 < 1.0 - self.eta - self.nu1):
            raise ConfigurationError("nu3 must lie in (0, 1 - eta - nu1)")
        if not (0.5 < self.zeta0 < 1.0):
            raise ConfigurationError("zeta0 must lie in (1/2, 1)")
        if not self.zeta1 > 1.0 / (2.0 * self.zeta0):
            raise ConfigurationError("zeta1 must exceed 1 / (2 zeta0)")
        if not self.kappa_h >= 0.0:
            raise ConfigurationError("kappa_h must be nonnegative")
        if not self.delta_minus > 0.0:
            raise ConfigurationError("delta_minus must be positive")
        if not (0.0 < self.delta_max < math.inf):
            raise ConfigurationError("delta_max must be positive and finite")
        if not (0.0 < self.delta0 <= self.delta_max):
            raise ConfigurationError("delta0 must lie in (0, delta_max]")
        if self.n_grad < self.n_grad_min:
            raise ConfigurationError("n_grad must be at least n_grad_min")
        if self.n_grad_max < self.n_grad:
            raise ConfigurationError("n_grad_max must be at least n_grad")
        if self.n_grad % self.jackknife_subbatches != 0:
            raise ConfigurationError(
                "n_grad must be a multiple of jackknife_subbatches"
            )
        if self.budget < 0 or self.seed < 0:
            raise ConfigurationError("budget and seed must be nonnegative")

    def acceptance_params(self) -> AcceptanceParams:
        return AcceptanceParams(
            eta=self.eta,
            lam=self.lam,
            alpha=self.alpha,
            gamma=self.gamma,
            zeta1=self.zeta1,
        )


@dataclass
class OptimizerState:
    omega: VariationalParams
    delta: float
    k: int = 0
    n_grad: int = 256
    sigma_prior: float = 1.0
    sigma_prior_delta: float = float("nan")
    cum_calls: int = 0
    cum_grad_calls: int = 0
    cum_hvp_calls: int = 0
    cum_assess_calls: int = 0
    accepted_count: int = 0
    next_stream: int = 0
    cached_hvp: Optional[BaseBatch] = None
    cached_hvp_uses: int = 0
    last_rejected: bool = False
    collapse_count: int = 0
    budget_exhausted: bool = False


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    cum_oracle_calls: int
    elbo_est: float
    delta: float
    m_prime: float
    ell_prime: float
    n_assess: int
    sigma_hat: float
    accepted: bool
    grad_calls: int
    hvp_calls: int
    assess_calls: int
    wall_time: float = 0.0


@dataclass(frozen=True)
class RunSummary:
    model: str
    method: str
    seed: int
    final_elbo: float
    total_oracle_calls: int
    accept_rate: float
    diverged: bool


@dataclass(frozen=True)
class OptimizeResult:
    trace: List[TraceRecord]
    summary: RunSummary
    state: OptimizerState


def init_state(objective, config: OptimizerConfig) -> OptimizerState:
    if config.omega0 is not None:
        omega = VariationalParams.from_vector(np.asarray(config.omega0, float))
        if omega.dim != objective.dim:
            raise ConfigurationError("omega0 length does not match the model")
    else:
        omega = VariationalParams.from_vector(np.zeros(objective.dim))
    return OptimizerState(
        omega=omega,
        delta=config.delta0,
        n_grad=config.n_grad,
        sigma_prior=config.sigma_prior0,
    )


def trustvi_step(objective, state: OptimizerState, config: OptimizerConfig):
    """One optimizer iteration; returns the new state and its trace record."""
    t0 = time.perf_counter()
    st = replace_state(state)
    ap = config.acceptance_params()
    seed = config.seed
    delta_k = st.delta

    grad_calls, hvp_calls, assess_calls = 1, 0, 0
    elbo = float("nan")
    m_prime = float("nan")
    ell_prime = float("nan")
    n_assess = 0
    sigma_hat = st.sigma_prior
    accepted = False

    stream = st.next_stream
    st.next_stream += 1
    e_grad = objective.draw(seed, stream, st.n_grad)
    try:
        elbo, gs = objective.elbo_and_gradient(
            st.omega, e_grad, config.jackknife_subbatches
        )
    except NumericalOverflow:
        # The fresh batch exposed an overflow at the current iterate; back
        # the radius off and retry from the same point next iteration.
        st.delta = delta_k / config.gamma
        st.last_rejected = True
    else:
        g = gs.mean_gradient
        gnorm = float(np.linalg.norm(g))
        sd = jackknife_grad_norm_sd(gs)
        st.n_grad = adapt_gradient_batch(
            st.n_grad,
            gnorm,
            sd,
            config.c_low,
            config.c_high,
            config.n_grad_min,
            config.n_grad_max,
        )

        if (
            state.last_rejected
            and state.cached_hvp is not None
            and state.cached_hvp_uses < 2
        ):
            e_hvp = state.cached_hvp
            uses = state.cached_hvp_uses
        else:
            e_hvp = objective.draw(seed, st.next_stream, config.n_hvp)
            st.next_stream += 1
            uses = 0
        hvp_calls = 2
        op = objective.hvp_operator(st.omega, e_hvp)
        try:
            step = solve_tr_krylov(
                QuadraticModel(g, op, delta_k),
                config.tr_tol,
                min(objective.dim, config.tr_max_iter),
            )
        except NumericalOverflow:
            st.delta = delta_k / config.gamma
            st.last_rejected = True
            st.cached_hvp = e_hvp
            st.cached_hvp_uses = uses + 1
        else:
            m_prime = step.m_prime
            prior = st.sigma_prior
            if math.isfinite(st.sigma_prior_delta) and st.sigma_prior_delta > 0:
                # paired-test noise scales with the step length, so carry
                # the estimate across radius changes as a slope
                prior = st.sigma_prior * (delta_k / st.sigma_prior_delta)
            res = assess(
                objective,
                st.omega,
                step.s,
                step.m_prime,
                delta_k,
                ap,
                prior,
                seed,
                st.next_stream,
                grad_norm=gnorm,
                nu1=config.nu1,
                n_assess_min=config.n_assess_min,
                n_cap=config.n_cap,
                grad_batch_size=st.n_grad,
            )
            st.next_stream += 1
            assess_calls = res.oracle_calls_charged
            ell_prime = res.ell_prime
            n_assess = res.n_samples
            sigma_hat = res.sigma_hat
            if res.oracle_calls_charged and not res.overflowed:
                st.sigma_prior = res.sigma_hat
                st.sigma_prior_delta = delta_k
            accepted = res.accepted
            if accepted:
                st.omega = st.omega.shifted(step.s)
                st.delta = min(config.gamma * delta_k, config.delta_max)
                st.cached_hvp = None
                st.cached_hvp_uses = 0
                st.last_rejected = False
                st.accepted_count += 1
            else:
                st.delta = delta_k / config.gamma
                st.cached_hvp = e_hvp
                st.cached_hvp_uses = uses + 1
                st.last_rejected = True

    st.k += 1
    st.cum_grad_calls += grad_calls
    st.cum_hvp_calls += hvp_calls
    st.cum_assess_calls += assess_calls
    st.cum_calls += grad_calls + hvp_calls + assess_calls
    record = TraceRecord(
        iter=st.k - 1,
        cum_oracle_calls=st.cum_calls,
        elbo_est=elbo,
        delta=delta_k,
        m_prime=m_prime,
        ell_prime=ell_prime,
        n_assess=n_assess,
        sigma_hat=sigma_hat,
        accepted=accepted,
        grad_calls=grad_calls,
        hvp_calls=hvp_calls,
        assess_calls=assess_calls,
        wall_time=time.perf_counter() - t0,
    )
    return st, record


def replace_state(state: OptimizerState) -> OptimizerState:
    return replace(state)


def optimize(model, config: OptimizerConfig) -> OptimizeResult:
    """Run the optimizer until the oracle budget runs out or the radius
    collapses below delta_stop for stop_patience consecutive iterations."""
    objective = as_objective(model)
    state = init_state(objective, config)
    trace: List[TraceRecord] = []
    while True:
        if state.cum_calls >= config.budget:
            state.budget_exhausted = True
            break
        state, record = trustvi_step(objective, state, config)
        trace.append(record)
        if state.delta < config.delta_stop:
            state.collapse_count += 1
            if state.collapse_count >= config.stop_patience:
                break
        else:
            state.collapse_count = 0

    try:
        eval_batch = objective.draw(
            config.seed, state.next_stream, 10 * config.n_grad
        )
        state.next_stream += 1
        final_elbo = objective.elbo(state.omega, eval_batch)
    except NumericalOverflow:
        finite = [r.elbo_est for r in trace if math.isfinite(r.elbo_est)]
        final_elbo = finite[-1] if finite else float("nan")
    accept_rate = state.accepted_count / state.k if state.k else 0.0
    summary = RunSummary(
        model=getattr(objective, "name", "unknown"),
        method="trustvi",
        seed=config.seed,
        final_elbo=float(final_elbo),
        total_oracle_calls=state.cum_calls,
        accept_rate=float(accept_rate),
        diverged=False,
    )
    return OptimizeResult(trace=trace, summary=summary, state=state)


@dataclass(frozen=True)
class ProbeStats:
    mode: str
    replications: int
    delta: float
    grad_norm_true: float
    mean_dphi: float
    se_dphi: float
    decrease_bound: float
    accept_freq: float
    accept_se: float
    accept_floor: float
    delta_minus_min: float
    frac_delta_ok: float
    kappa_hat: float
    lip_bound: float
    m_prime: float = float("nan")
    ell_true: float = float("nan")
    bad_step_bound: float = float("inf")
    gate_passed: bool = False


def _operator_norm(op, dim: int, seed: int, iters: int = 40) -> float:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(23,)))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    nrm = 0.0
    for _ in range(iters):
        w = np.asarray(op(v), dtype=float)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
    return nrm


def theory_probe(
    model,
    config: OptimizerConfig,
    omega: VariationalParams,
    delta: float,
    replications: int,
    frozen_proposal: bool = True,
    probe_seed: Optional[int] = None,
) -> ProbeStats:
    """Replay one iteration from a frozen state many times.

    With frozen_proposal the quadratic model and step are drawn once and only
    the acceptance test is replayed, which isolates the potential-decrease
    and bad-step guarantees.  Otherwise the whole iteration is replayed,
    which exercises the small-radius acceptance guarantee.  Requires a model
    with a closed-form objective and gradient.
    """
    objective = as_objective(model)
    if objective.analytic_value is None or objective.analytic_grad is None:
        raise ValueError("theory probe needs a closed-form objective")
    if replications < 2:
        raise ValueError("need at least two replications")
    ap = config.acceptance_params()
    seed = config.seed if probe_seed is None else probe_seed
    value = objective.analytic_value
    omega_vec = omega.as_vector()
    base_value = float(value(omega_vec))
    grad_true = np.asarray(objective.analytic_grad(omega_vec), dtype=float)
    gl_norm = float(np.linalg.norm(grad_true))

    def propose(tag: int):
        e_g = objective.draw(seed, (3, tag), config.n_grad)
        _, gs = objective.elbo_and_gradient(
            omega, e_g, config.jackknife_subbatches
        )
        g = gs.mean_gradient
        e_h = objective.draw(seed, (5, tag), config.n_hvp)
        op = objective.hvp_operator(omega, e_h)
        step = solve_tr_krylov(
            QuadraticModel(g, op, delta),
            config.tr_tol,
            min(objective.dim, config.tr_max_iter),
        )
        return g, op, step

    # Curvature scale for the radius threshold: configured bound if finite,
    # otherwise the largest operator norm seen over a few sampled batches.
    if math.isfinite(config.kappa_h):
        kappa = config.kappa_h
    else:
        kappa = 0.0
        for j in range(3):
            e_h = objective.draw(seed, (7, j), config.n_hvp)
            op = objective.hvp_operator(omega, e_h)
            kappa = max(kappa, _operator_norm(op, objective.dim, seed + j))
    if objective.hessian_norm_bound is not None:
        lip = float(objective.hessian_norm_bound(omega_vec, delta))
    else:
        lip = kappa

    third = (
        config.nu2
        * config.nu3
        * gl_norm
        / (config.nu2 * lip + config.nu2 * config.eta * kappa + 8.0 * kappa)
        if gl_norm > 0.0
        else 0.0
    )

    grow2 = min(config.gamma * delta, config.delta_max) ** 2 - delta * delta
    shrink2 = (delta / config.gamma) ** 2 - delta * delta

    def delta_phi(accepted: bool, lprime_true: float) -> float:
        if accepted:
            return lprime_true - config.alpha * grow2
        return -config.alpha * shrink2

    dphis = np.empty(replications)
    accepts = np.zeros(replications, dtype=bool)
    delta_ok = np.zeros(replications, dtype=bool)
    dmin_all = math.inf
    m_prime = float("nan")
    ell_true = float("nan")
    gate_passed = False
    bad_bound = math.inf

    if frozen_proposal:
        g, op, step = propose(0)
        m_prime = step.m_prime
        gate_passed = ap.eta * m_prime >= ap.lam * delta * delta
        ell_true = float(value(omega_vec + step.s)) - base_value
        t2d = ap.tau2 * delta * delta
        if ell_true < t2d:
            bad_bound = ap.tau1 * delta * delta / (t2d - ell_true)
        dmin_all = min(
            config.delta_minus,
            math.sqrt(max(ap.eta * m_prime, 0.0) / ap.lam),
            third if third > 0.0 else math.inf,
        )
        gnorm = float(np.linalg.norm(g))
        for r in range(replications):
            res = assess(
                objective,
                omega,
                step.s,
                m_prime,
                delta,
                ap,
                config.sigma_prior0,
                seed,
                1_000_000 + r,
                grad_norm=gnorm,
                nu1=config.nu1,
                n_assess_min=config.n_assess_min,
                n_cap=config.n_cap,
            )
            accepts[r] = res.accepted
            delta_ok[r] = delta <= dmin_all
            dphis[r] = delta_phi(res.accepted, ell_true)
    else:
        for r in range(replications):
            g, op, step = propose(r)
            lprime = float(value(omega_vec + step.s)) - base_value
            gnorm = float(np.linalg.norm(g))
            res = assess(
                objective,
                omega,
                step.s,
                step.m_prime,
                delta,
                ap,
                config.sigma_prior0,
                seed,
                1_000_000 + r,
                grad_norm=gnorm,
                nu1=config.nu1,
                n_assess_min=config.n_assess_min,
                n_cap=config.n_cap,
            )
            accepts[r] = res.accepted
            dmin = min(
                config.delta_minus,
                math.sqrt(max(ap.eta * step.m_prime, 0.0) / ap.lam),
                third if third > 0.0 else math.inf,
            )
            dmin_all = min(dmin_all, dmin)
            delta_ok[r] = delta <= dmin
            dphis[r] = delta_phi(res.accepted, lprime)

    freq = float(np.mean(accepts))
    return ProbeStats(
        mode="frozen" if frozen_proposal else "full",
        replications=replications,
        delta=delta,
        grad_norm_true=gl_norm,
        mean_dphi=float(np.mean(dphis)),
        se_dphi=float(np.std(dphis, ddof=1) / math.sqrt(replications)),
        decrease_bound=ap.lam * delta * delta,
        accept_freq=freq,
        accept_se=float(math.sqrt(freq * (1.0 - freq) / replications)),
        accept_floor=config.zeta0 * config.zeta1,
        delta_minus_min=float(dmin_all),
        frac_delta_ok=float(np.mean(delta_ok)),
        kappa_hat=float(kappa),
        lip_bound=float(lip),
        m_prime=float(m_prime),
        ell_true=float(ell_true),
        bad_step_bound=float(bad_bound),
        gate_passed=bool(gate_passed),
    )
