"""Estimators for the mean-field Gaussian variational objective.

The variational family is a diagonal Gaussian over an unconstrained latent
space: a draw is z = mu + exp(rho) * e with e standard normal, so the
objective domain has dimension D = 2*d.  The objective value is the average
log joint density over a batch of base draws plus the closed-form Gaussian
entropy (a Monte-Carlo entropy variant is available for cross-checks; it has
the same gradient because rho enters the per-draw entropy term linearly).

All model callables must broadcast over a leading batch axis: a (n, d) input
yields (n,) log densities and (n, d) gradients.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

LOG_2PI = math.log(2.0 * math.pi)


class ConfigurationError(ValueError):
    """A parameter is outside its allowed range."""


class NumericalOverflow(RuntimeError):
    """A density, gradient, or curvature evaluation produced a non-finite value.

    Carries the offending iterate (flat parameter vector) so callers can
    report or penalize it instead of crashing.
    """

    def __init__(self, message: str, omega: Optional[Array] = None):
        super().__init__(message)
        self.omega = None if omega is None else np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class ModelSpec:
    """A differentiable unnormalized log joint density on R^d.

    hvp_log_density(z, v) returns the Hessian of log_density at z applied
    to v; it may be None, in which case curvature is obtained by finite
    differences of the stochastic gradient.
    """

    name: str
    latent_dim: int
    log_density: Callable[[Array], Array]
    grad_log_density: Callable[[Array], Array]
    hvp_log_density: Optional[Callable[[Array, Array], Array]] = None


@dataclass(frozen=True)
class VariationalParams:
    """Mean and log standard deviation of the diagonal Gaussian, (mu, rho)."""

    mu: Array
    rho: Array

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if mu.ndim != 1 or rho.ndim != 1 or mu.shape != rho.shape:
            raise ValueError("mu and rho must be 1-d arrays of equal length")
        if not (np.isfinite(mu).all() and np.isfinite(rho).all()):
            raise ValueError("variational parameters must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "rho", rho)

    @property
    def latent_dim(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.mu.shape[0]

    def sigma(self) -> Array:
        # inf is fine here: downstream finiteness checks turn it into a
        # recoverable overflow signal
        with np.errstate(over="ignore"):
            return np.exp(self.rho)

    def as_vector(self) -> Array:
        return np.concatenate([self.mu, self.rho])

    @classmethod
    def from_vector(cls, vec: Array) -> "VariationalParams":
        vec = np.asarray(vec, dtype=float)
        if vec.ndim != 1 or vec.shape[0] % 2 != 0:
            raise ValueError("parameter vector must be 1-d with even length")
        d = vec.shape[0] // 2
        return cls(vec[:d], vec[d:])

    def shifted(self, s: Array) -> "VariationalParams":
        """The parameters displaced by a flat step vector s of length 2d."""
        s = np.asarray(s, dtype=float)
        d = self.latent_dim
        if s.shape != (2 * d,):
            raise ValueError("step length must match parameter dimension")
        return VariationalParams(self.mu + s[:d], self.rho + s[d:])


@dataclass(frozen=True)
class BaseBatch:
    """A batch of standard normal base draws with its seed provenance.

    Regenerating with the same (seed, stream) reproduces identical bits, so
    any quantity computed from a BaseBatch is replayable.
    """

    draws: Array
    seed: int
    stream: tuple

    @classmethod
    def draw(cls, seed: int, stream, n: int, dim: int) -> "BaseBatch":
        if n <= 0:
            raise ValueError("batch size must be positive")
        key = stream if isinstance(stream, tuple) else (int(stream),)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
        return cls(rng.standard_normal((n, dim)), seed, key)

    @property
    def size(self) -> int:
        return self.draws.shape[0]


@dataclass(frozen=True)
class GradientSample:
    """A stochastic objective gradient with per-subbatch means for jackknifing."""

    mean_gradient: Array
    subbatch_gradients: Array  # (J, D), equal-size subbatch means
    batch_size: int


def gaussian_entropy(rho: Array) -> float:
    """Closed-form entropy of the diagonal Gaussian with log scales rho."""
    rho = np.asarray(rho, dtype=float)
    d = rho.shape[0]
    return float(np.sum(rho) + 0.5 * d * (LOG_2PI + 1.0))


def reparameterize(omega: VariationalParams, batch: BaseBatch) -> Array:
    """Map base draws to latent draws, z = mu + exp(rho) * e."""
    if batch.draws.shape[1] != omega.latent_dim:
        raise ValueError("batch dimension does not match parameters")
    # overflow to inf is deliberate; the finiteness checks downstream turn
    # it into a NumericalOverflow with the offending iterate attached
    with np.errstate(over="ignore"):
        return omega.mu + omega.sigma() * batch.draws


def _check_finite(values: Array, omega: VariationalParams, what: str) -> None:
    if not np.isfinite(values).all():
        raise NumericalOverflow(
            f"non-finite {what} under current parameters", omega.as_vector()
        )


def elbo_estimate(
    model: ModelSpec,
    omega: VariationalParams,
    batch: BaseBatch,
    mc_entropy: bool = False,
) -> float:
    """Monte-Carlo objective estimate over a batch of base draws.

    With mc_entropy the per-draw negative variational log density replaces
    the closed-form entropy; the estimator stays unbiased but gains variance.
    """
    z = reparameterize(omega, batch)
    lp = np.asarray(model.log_density(z), dtype=float)
    _check_finite(lp, omega, "log density")
    if mc_entropy:
        d = omega.latent_dim
        per_draw = lp + 0.5 * np.sum(batch.draws**2, axis=1)
        return float(np.mean(per_draw) + np.sum(omega.rho) + 0.5 * d * LOG_2PI)
    return float(np.mean(lp) + gaussian_entropy(omega.rho))


def _per_draw_gradients(
    model: ModelSpec, omega: VariationalParams, batch: BaseBatch
) -> Array:
    """Per-draw gradients of the objective, shape (n, 2d).

    The rho block is grad_logp * e * sigma plus 1 from the entropy term.
    """
    z = reparameterize(omega, batch)
    g = np.asarray(model.grad_log_density(z), dtype=float)
    _check_finite(g, omega, "log density gradient")
    rho_part = g * batch.draws * omega.sigma() + 1.0
    return np.concatenate([g, rho_part], axis=1)


def stochastic_gradient(
    model: ModelSpec,
    omega: VariationalParams,
    batch: BaseBatch,
    subbatches: int = 16,
) -> GradientSample:
    """Unbiased objective gradient from a base batch, split into subbatch means."""
    n = batch.size
    if subbatches < 2 or n % subbatches != 0:
        raise ValueError("batch size must be a positive multiple of subbatches")
    per_draw = _per_draw_gradients(model, omega, batch)
    sub = per_draw.reshape(subbatches, n // subbatches, -1).mean(axis=1)
    return GradientSample(sub.mean(axis=0), sub, n)


def elbo_and_gradient(
    model: ModelSpec,
    omega: VariationalParams,
    batch: BaseBatch,
    subbatches: int = 16,
) -> "tuple[float, GradientSample]":
    """Objective estimate and gradient from one pass over a shared batch."""
    n = batch.size
    if subbatches < 2 or n % subbatches != 0:
        raise ValueError("batch size must be a positive multiple of subbatches")
    z = reparameterize(omega, batch)
    lp = np.asarray(model.log_density(z), dtype=float)
    _check_finite(lp, omega, "log density")
    g = np.asarray(model.grad_log_density(z), dtype=float)
    _check_finite(g, omega, "log density gradient")
    value = float(np.mean(lp) + gaussian_entropy(omega.rho))
    per_draw = np.concatenate([g, g * batch.draws * omega.sigma() + 1.0], axis=1)
    sub = per_draw.reshape(subbatches, n // subbatches, -1).mean(axis=1)
    return value, GradientSample(sub.mean(axis=0), sub, n)


def stochastic_hvp(
    model: ModelSpec,
    omega: VariationalParams,
    batch: BaseBatch,
    v: Array,
) -> Array:
    """Product of the batch objective Hessian with a direction v of length 2d.

    Uses the model's Hessian-vector products through the reparameterization
    when available; otherwise falls back to central finite differences of the
    stochastic gradient on the same batch.
    """
    d = omega.latent_dim
    v = np.asarray(v, dtype=float)
    if v.shape != (2 * d,):
        raise ValueError("direction length must match parameter dimension")
    if not np.any(v):
        return np.zeros(2 * d)

    if model.hvp_log_density is None:
        return _fd_hvp(model, omega, batch, v)

    z = reparameterize(omega, batch)
    es = batch.draws * omega.sigma()
    v_mu, v_rho = v[:d], v[d:]
    w = v_mu + es * v_rho
    hw = np.asarray(model.hvp_log_density(z, w), dtype=float)
    _check_finite(hw, omega, "log density curvature")
    g = np.asarray(model.grad_log_density(z), dtype=float)
    _check_finite(g, omega, "log density gradient")
    out_mu = hw.mean(axis=0)
    out_rho = (es * hw + (g * es) * v_rho).mean(axis=0)
    return np.concatenate([out_mu, out_rho])


def _fd_hvp(
    model: ModelSpec, omega: VariationalParams, batch: BaseBatch, v: Array
) -> Array:
    # Step scale balances truncation against cancellation for central
    # differences; the batch is shared so the noise cancels exactly.
    vnorm = float(np.linalg.norm(v))
    h = np.finfo(float).eps ** (1.0 / 3.0) * (
        1.0 + float(np.linalg.norm(omega.as_vector()))
    ) / vnorm
    plus = stochastic_gradient(model, omega.shifted(h * v), batch).mean_gradient
    minus = stochastic_gradient(model, omega.shifted(-h * v), batch).mean_gradient
    return (plus - minus) / (2.0 * h)


def jackknife_grad_norm_sd(sample: GradientSample) -> float:
    """Delete-one jackknife standard error of the gradient norm.

    Each leave-one-out statistic is the norm of the mean of the remaining
    subbatch means.
    """
    sub = sample.subbatch_gradients
    j = sub.shape[0]
    if j < 2:
        raise ValueError("jackknife requires at least two subbatches")
    total = sub.sum(axis=0)
    loo = (total[None, :] - sub) / (j - 1)
    theta = np.linalg.norm(loo, axis=1)
    theta_bar = theta.mean()
    return float(np.sqrt((j - 1) / j * np.sum((theta - theta_bar) ** 2)))


def adapt_gradient_batch(
    n: int,
    grad_norm: float,
    norm_sd: float,
    c_low: float = 2.0,
    c_high: float = 10.0,
    n_min: int = 64,
    n_max: int = 8192,
) -> int:
    """Next gradient batch size: double when the norm is noise-dominated,
    halve (never below n_min) when it is measured far more precisely than
    needed, otherwise keep.

    n_max keeps the doubling bounded: with a vanishing true gradient the
    noise-dominated branch would otherwise fire on every iteration.
    """
    if n < n_min:
        raise ValueError("batch size below the minimum")
    if grad_norm < c_low * norm_sd:
        return min(2 * n, max(n, n_max))
    if grad_norm > c_high * norm_sd:
        return max(n // 2, n_min)
    return n
