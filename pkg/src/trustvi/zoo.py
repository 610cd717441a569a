"""Benchmark posteriors with analytic gradients and Hessian-vector products.

Every model lives on an unconstrained R^d: positive scale parameters are
log-transformed with the prior placed directly on the log scale.  Data sets
are simulated deterministically from the model seed.  Where the posterior is
Gaussian the exact mean-field optimum and evidence are attached, along with
closed-form objective value and gradient callables used by the theory probe.
"""

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
from scipy.special import expit

from .core import LOG_2PI, Array, ModelSpec, VariationalParams


@dataclass(frozen=True)
class ZooModel(ModelSpec):
    """A benchmark model plus whatever ground truth it admits."""

    posterior_mean: Optional[Array] = None
    posterior_sd: Optional[Array] = None
    log_evidence: Optional[float] = None
    optimal_mu: Optional[Array] = None
    optimal_rho: Optional[Array] = None
    optimal_elbo: Optional[float] = None
    elbo_value: Optional[Callable[[Array], float]] = None
    elbo_grad: Optional[Callable[[Array], Array]] = None
    elbo_hessian_norm_bound: Optional[Callable[[Array, float], float]] = None


def _as_2d(z: Array) -> "tuple[Array, bool]":
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return z[None, :], True
    return z, False


def gaussian_posterior(d: int, precision) -> ZooModel:
    """Gaussian log joint -0.5 * z' P z with symmetric positive definite P.

    The mean-field optimum is exact: mu* = 0 and sigma_i* = 1/sqrt(P_ii).
    """
    precision = np.asarray(precision, dtype=float)
    if precision.ndim == 1:
        precision = np.diag(precision)
    if precision.shape != (d, d):
        raise ValueError("precision must be d x d or a length-d diagonal")
    if d > 64:
        raise ValueError("dense Gaussian models are limited to d <= 64")
    if not np.allclose(precision, precision.T, atol=1e-12):
        raise ValueError("precision must be symmetric")
    try:
        np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        raise ValueError("precision must be positive definite") from None

    p = precision
    p_diag = np.diag(p).copy()
    sign, logdet = np.linalg.slogdet(p)
    log_evidence = 0.5 * d * LOG_2PI - 0.5 * logdet
    opt_mu = np.zeros(d)
    opt_rho = -0.5 * np.log(p_diag)
    opt_elbo = 0.5 * d * LOG_2PI - 0.5 * float(np.sum(np.log(p_diag)))

    def log_density(z):
        z2, single = _as_2d(z)
        val = -0.5 * np.einsum("ni,ij,nj->n", z2, p, z2)
        return val[0] if single else val

    def grad_log_density(z):
        z2, single = _as_2d(z)
        g = -z2 @ p
        return g[0] if single else g

    def hvp_log_density(z, v):
        z2, single = _as_2d(z)
        v2, vsingle = _as_2d(v)
        out = -np.broadcast_to(v2 @ p, z2.shape)
        return out[0] if (single and vsingle) else np.array(out)

    def elbo_value(omega_vec: Array) -> float:
        w = VariationalParams.from_vector(omega_vec)
        s2 = np.exp(2.0 * w.rho)
        quad = float(w.mu @ p @ w.mu + p_diag @ s2)
        return -0.5 * quad + float(np.sum(w.rho)) + 0.5 * d * (LOG_2PI + 1.0)

    def elbo_grad(omega_vec: Array) -> Array:
        w = VariationalParams.from_vector(omega_vec)
        gmu = -p @ w.mu
        grho = 1.0 - p_diag * np.exp(2.0 * w.rho)
        return np.concatenate([gmu, grho])

    lam_max = float(np.linalg.eigvalsh(p)[-1])

    def elbo_hessian_norm_bound(omega_vec: Array, radius: float) -> float:
        # The objective Hessian is block diagonal here, so its norm anywhere
        # within the given radius is bounded by the larger block bound.
        w = VariationalParams.from_vector(omega_vec)
        rho_bound = 2.0 * float(np.max(p_diag * np.exp(2.0 * (w.rho + radius))))
        return max(lam_max, rho_bound)

    return ZooModel(
        name=f"gaussian{d}",
        latent_dim=d,
        log_density=log_density,
        grad_log_density=grad_log_density,
        hvp_log_density=hvp_log_density,
        posterior_mean=opt_mu,
        posterior_sd=1.0 / np.sqrt(p_diag),
        log_evidence=float(log_evidence),
        optimal_mu=opt_mu,
        optimal_rho=opt_rho,
        optimal_elbo=float(opt_elbo),
        elbo_value=elbo_value,
        elbo_grad=elbo_grad,
        elbo_hessian_norm_bound=elbo_hessian_norm_bound,
    )


def _seeded_precision(d: int, seed: int, cond: float = 16.0) -> Array:
    """Random rotation with log-spaced eigenvalues, condition number cond."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    a = rng.standard_normal((d, d))
    q, _ = np.linalg.qr(a)
    eigs = np.exp(np.linspace(-0.5 * math.log(cond), 0.5 * math.log(cond), d))
    return (q * eigs) @ q.T


def bayes_linear_regression(n: int = 50, p: int = 8, seed: int = 3) -> ZooModel:
    """Linear regression with unknown noise scale, z = (beta, log tau)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    x = rng.standard_normal((n, p))
    beta_true = rng.standard_normal(p)
    tau_true = 0.5
    y = x @ beta_true + tau_true * rng.standard_normal(n)
    s2_beta = 4.0  # prior variance on coefficients
    d = p + 1

    def _unpack(z2):
        return z2[:, :p], z2[:, p]

    def log_density(z):
        z2, single = _as_2d(z)
        beta, u = _unpack(z2)
        with np.errstate(over="ignore"):
            inv_var = np.exp(-2.0 * u)
        r = y[None, :] - beta @ x.T
        ll = -n * u - 0.5 * inv_var * np.sum(r * r, axis=1) - 0.5 * n * LOG_2PI
        prior = -0.5 * np.sum(beta * beta, axis=1) / s2_beta - 0.5 * u * u
        val = ll + prior
        return val[0] if single else val

    def grad_log_density(z):
        z2, single = _as_2d(z)
        beta, u = _unpack(z2)
        with np.errstate(over="ignore"):
            inv_var = np.exp(-2.0 * u)
        r = y[None, :] - beta @ x.T
        g_beta = inv_var[:, None] * (r @ x) - beta / s2_beta
        g_u = -n + inv_var * np.sum(r * r, axis=1) - u
        out = np.concatenate([g_beta, g_u[:, None]], axis=1)
        return out[0] if single else out

    def hvp_log_density(z, v):
        z2, single = _as_2d(z)
        v2, _ = _as_2d(v)
        v2 = np.broadcast_to(v2, z2.shape)
        beta, u = _unpack(z2)
        vb, vu = v2[:, :p], v2[:, p]
        with np.errstate(over="ignore"):
            inv_var = np.exp(-2.0 * u)
        r = y[None, :] - beta @ x.T
        xv = vb @ x.T
        h_beta = (
            -inv_var[:, None] * (xv @ x)
            - vb / s2_beta
            - 2.0 * inv_var[:, None] * (r @ x) * vu[:, None]
        )
        h_u = (
            -2.0 * inv_var * np.sum(r * xv, axis=1)
            + (-2.0 * inv_var * np.sum(r * r, axis=1) - 1.0) * vu
        )
        out = np.concatenate([h_beta, h_u[:, None]], axis=1)
        return out[0] if single else out

    return ZooModel(
        name=f"linreg{n}x{p}",
        latent_dim=d,
        log_density=log_density,
        grad_log_density=grad_log_density,
        hvp_log_density=hvp_log_density,
    )


def hierarchical_variance_components(
    groups: int = 6, per_group: int = 5, seed: int = 1
) -> ZooModel:
    """Grouped Gaussian observations with between and within log scales.

    Latents are (mu, log sigma_between, log sigma_within, theta_1..theta_G).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(13,)))
    mu_true, sb_true, sw_true = 1.0, 1.0, 0.5
    theta_true = mu_true + sb_true * rng.standard_normal(groups)
    y = theta_true[:, None] + sw_true * rng.standard_normal((groups, per_group))
    n_tot = groups * per_group
    s2_mu = 25.0
    d = groups + 3

    def _unpack(z2):
        return z2[:, 0], z2[:, 1], z2[:, 2], z2[:, 3:]

    def log_density(z):
        z2, single = _as_2d(z)
        mu, a, b, theta = _unpack(z2)
        with np.errstate(over="ignore"):
            iva = np.exp(-2.0 * a)
            ivb = np.exp(-2.0 * b)
        r = y[None, :, :] - theta[:, :, None]
        q = np.sum(r * r, axis=(1, 2))
        t = theta - mu[:, None]
        t2 = np.sum(t * t, axis=1)
        ll = -n_tot * b - 0.5 * ivb * q - 0.5 * n_tot * LOG_2PI
        lth = -groups * a - 0.5 * iva * t2 - 0.5 * groups * LOG_2PI
        prior = -0.5 * mu * mu / s2_mu - 0.5 * a * a - 0.5 * b * b
        val = ll + lth + prior
        return val[0] if single else val

    def grad_log_density(z):
        z2, single = _as_2d(z)
        mu, a, b, theta = _unpack(z2)
        with np.errstate(over="ignore"):
            iva = np.exp(-2.0 * a)
            ivb = np.exp(-2.0 * b)
        r = y[None, :, :] - theta[:, :, None]
        s_g = np.sum(r, axis=2)
        q = np.sum(r * r, axis=(1, 2))
        t = theta - mu[:, None]
        g_theta = ivb[:, None] * s_g - iva[:, None] * t
        g_mu = iva * np.sum(t, axis=1) - mu / s2_mu
        g_a = -groups + iva * np.sum(t * t, axis=1) - a
        g_b = -n_tot + ivb * q - b
        out = np.concatenate(
            [g_mu[:, None], g_a[:, None], g_b[:, None], g_theta], axis=1
        )
        return out[0] if single else out

    def _dense_hessian(z2):
        nb, _ = z2.shape
        mu, a, b, theta = _unpack(z2)
        with np.errstate(over="ignore"):
            iva = np.exp(-2.0 * a)
            ivb = np.exp(-2.0 * b)
        r = y[None, :, :] - theta[:, :, None]
        s_g = np.sum(r, axis=2)
        q = np.sum(r * r, axis=(1, 2))
        t = theta - mu[:, None]
        h = np.zeros((nb, d, d))
        idx = np.arange(groups) + 3
        h[:, 0, 0] = -groups * iva - 1.0 / s2_mu
        h[:, 0, 1] = h[:, 1, 0] = -2.0 * iva * np.sum(t, axis=1)
        h[:, 1, 1] = -2.0 * iva * np.sum(t * t, axis=1) - 1.0
        h[:, 2, 2] = -2.0 * ivb * q - 1.0
        h[:, idx, idx] = (-per_group * ivb - iva)[:, None]
        h[:, 0, 3:] = h[:, 3:, 0] = iva[:, None] * np.ones((nb, groups))
        h[:, 1, 3:] = h[:, 3:, 1] = 2.0 * iva[:, None] * t
        h[:, 2, 3:] = h[:, 3:, 2] = -2.0 * ivb[:, None] * s_g
        return h

    def hvp_log_density(z, v):
        z2, single = _as_2d(z)
        v2, _ = _as_2d(v)
        v2 = np.broadcast_to(v2, z2.shape)
        out = np.einsum("nij,nj->ni", _dense_hessian(z2), v2)
        return out[0] if single else out

    return ZooModel(
        name=f"varcomp{groups}x{per_group}",
        latent_dim=d,
        log_density=log_density,
        grad_log_density=grad_log_density,
        hvp_log_density=hvp_log_density,
    )


def logistic_regression(n: int = 100, p: int = 8, seed: int = 2) -> ZooModel:
    """Bernoulli regression with a Gaussian prior on the coefficients."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(17,)))
    x = rng.standard_normal((n, p))
    beta_true = rng.standard_normal(p)
    probs = expit(x @ beta_true)
    y = (rng.random(n) < probs).astype(float)
    s2 = 4.0

    def log_density(z):
        z2, single = _as_2d(z)
        logits = z2 @ x.T
        ll = np.sum(y[None, :] * logits - np.logaddexp(0.0, logits), axis=1)
        val = ll - 0.5 * np.sum(z2 * z2, axis=1) / s2
        return val[0] if single else val

    def grad_log_density(z):
        z2, single = _as_2d(z)
        logits = z2 @ x.T
        pr = expit(logits)
        out = (y[None, :] - pr) @ x - z2 / s2
        return out[0] if single else out

    def hvp_log_density(z, v):
        z2, single = _as_2d(z)
        v2, _ = _as_2d(v)
        v2 = np.broadcast_to(v2, z2.shape)
        logits = z2 @ x.T
        pr = expit(logits)
        w = pr * (1.0 - pr)
        out = -(w * (v2 @ x.T)) @ x - v2 / s2
        return out[0] if single else out

    return ZooModel(
        name=f"logistic{n}x{p}",
        latent_dim=p,
        log_density=log_density,
        grad_log_density=grad_log_density,
        hvp_log_density=hvp_log_density,
    )


def funnel(d: int = 10) -> ZooModel:
    """A funnel density: z = (v, x) with x_i ~ N(0, exp(v)), v ~ N(0, 9).

    Strong scale coupling makes the curvature indefinite and uncontrolled
    Newton steps prone to overflow.
    """
    if d < 2:
        raise ValueError("funnel needs at least two dimensions")

    def log_density(z):
        z2, single = _as_2d(z)
        v = z2[:, 0]
        x = z2[:, 1:]
        # inf scales and inf * 0 products propagate as inf/nan on purpose;
        # the finiteness checks downstream treat them as overflow
        with np.errstate(over="ignore", invalid="ignore"):
            inv = np.exp(-v)
            sx2 = np.sum(x * x, axis=1)
            val = (
                -v * v / 18.0
                - 0.5 * (d - 1) * v
                - 0.5 * inv * sx2
                - 0.5 * LOG_2PI
                - 0.5 * math.log(9.0)
                - 0.5 * (d - 1) * LOG_2PI
            )
        return val[0] if single else val

    def grad_log_density(z):
        z2, single = _as_2d(z)
        v = z2[:, 0]
        x = z2[:, 1:]
        with np.errstate(over="ignore", invalid="ignore"):
            inv = np.exp(-v)
            g_v = (
                -v / 9.0 - 0.5 * (d - 1) + 0.5 * inv * np.sum(x * x, axis=1)
            )
            g_x = -inv[:, None] * x
        out = np.concatenate([g_v[:, None], g_x], axis=1)
        return out[0] if single else out

    def hvp_log_density(z, v_dir):
        z2, single = _as_2d(z)
        v2, _ = _as_2d(v_dir)
        v2 = np.broadcast_to(v2, z2.shape)
        v = z2[:, 0]
        x = z2[:, 1:]
        wv, wx = v2[:, 0], v2[:, 1:]
        with np.errstate(over="ignore", invalid="ignore"):
            inv = np.exp(-v)
            h_vv = -1.0 / 9.0 - 0.5 * inv * np.sum(x * x, axis=1)
            out_v = h_vv * wv + inv * np.sum(x * wx, axis=1)
            out_x = inv[:, None] * x * wv[:, None] - inv[:, None] * wx
        out = np.concatenate([out_v[:, None], out_x], axis=1)
        return out[0] if single else out

    return ZooModel(
        name=f"funnel{d}",
        latent_dim=d,
        log_density=log_density,
        grad_log_density=grad_log_density,
        hvp_log_density=hvp_log_density,
    )


_REGISTRY: Dict[str, Callable[[], ZooModel]] = {
    "gaussian2": lambda: gaussian_posterior(2, [[2.0, 1.0], [1.0, 2.0]]),
    "gaussian8": lambda: gaussian_posterior(8, _seeded_precision(8, 8)),
    "gaussian8diag": lambda: gaussian_posterior(
        8, np.exp(np.linspace(-1.2, 1.2, 8))
    ),
    "gaussian32": lambda: gaussian_posterior(32, _seeded_precision(32, 32)),
    "linreg": lambda: bayes_linear_regression(50, 8, seed=3),
    "varcomp": lambda: hierarchical_variance_components(6, 5, seed=1),
    "logistic": lambda: logistic_regression(100, 8, seed=2),
    "funnel10": lambda: funnel(10),
}


def list_models() -> "list[str]":
    return sorted(_REGISTRY)


def get_model(name: str) -> ZooModel:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        known = ", ".join(list_models())
        raise KeyError(f"unknown model {name!r}; available: {known}") from None
    # registry key becomes the canonical name so run artifacts stay consistent
    return dataclasses.replace(factory(), name=name)
