"""Trust-region subproblem solvers for a quadratic model being maximized.

The model is m(s) = g.s + 0.5 * s.H s over the ball ||s|| <= delta.  The
Krylov solver only touches H through matrix-vector products and follows the
classic truncated conjugate gradient recipe: stop at the boundary when the
iterate leaves the ball or when nonpositive curvature appears.  The exact
solver factorizes a dense H and is meant as an oracle for small problems.
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .core import Array, NumericalOverflow

STATUS_INTERIOR = "interior"
STATUS_BOUNDARY = "boundary"
STATUS_NEG_CURVE = "negative-curvature"
STATUS_MAX_ITER = "max-iter"


@dataclass(frozen=True)
class QuadraticModel:
    grad: Array
    hessian_op: Callable[[Array], Array]
    delta: float

    def __post_init__(self):
        g = np.asarray(self.grad, dtype=float)
        object.__setattr__(self, "grad", g)
        if not np.isfinite(g).all():
            raise ValueError("gradient must be finite")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ValueError("radius must be positive and finite")

    def value(self, s: Array) -> float:
        return float(self.grad @ s + 0.5 * s @ self.hessian_op(s))


@dataclass(frozen=True)
class Step:
    s: Array
    m_prime: float
    status: str


def _boundary_tau(s: Array, p: Array, delta: float) -> float:
    # Positive root of ||s + tau p||^2 = delta^2.
    a = float(p @ p)
    b = 2.0 * float(s @ p)
    c = float(s @ s) - delta * delta
    disc = max(b * b - 4.0 * a * c, 0.0)
    return (-b + math.sqrt(disc)) / (2.0 * a)


def _apply(op, v, context: str) -> Array:
    out = np.asarray(op(v), dtype=float)
    if not np.isfinite(out).all():
        raise NumericalOverflow(f"non-finite curvature product in {context}")
    return out


def solve_tr_krylov(
    model: QuadraticModel, tol: float = 1e-6, max_iter: "int | None" = None
) -> Step:
    """Truncated conjugate gradient on the equivalent minimization of -m."""
    g = model.grad
    delta = model.delta
    dim = g.shape[0]
    if max_iter is None:
        max_iter = min(dim, 250)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return Step(np.zeros(dim), 0.0, STATUS_INTERIOR)

    def a_op(v):
        return -_apply(model.hessian_op, v, "krylov solve")

    s = np.zeros(dim)
    r = g.copy()  # residual of A s = g at s = 0
    p = r.copy()
    rr = float(r @ r)
    status = STATUS_MAX_ITER
    for _ in range(max_iter):
        ap = a_op(p)
        curv = float(p @ ap)
        if curv <= 0.0:
            tau = _boundary_tau(s, p, delta)
            s = s + tau * p
            status = STATUS_NEG_CURVE
            break
        alpha = rr / curv
        s_next = s + alpha * p
        if float(np.linalg.norm(s_next)) >= delta:
            tau = _boundary_tau(s, p, delta)
            s = s + tau * p
            status = STATUS_BOUNDARY
            break
        s = s_next
        r = r - alpha * ap
        rr_next = float(r @ r)
        if math.sqrt(rr_next) <= tol * gnorm:
            status = STATUS_INTERIOR
            break
        p = r + (rr_next / rr) * p
        rr = rr_next

    hs = _apply(model.hessian_op, s, "krylov solve")
    m_prime = float(g @ s + 0.5 * s @ hs)
    return Step(s, m_prime, status)


def cauchy_point(model: QuadraticModel) -> Step:
    """Best step along the gradient direction within the ball, closed form."""
    g = model.grad
    delta = model.delta
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return Step(np.zeros_like(g), 0.0, STATUS_INTERIOR)
    ghat = g / gnorm
    curv = float(ghat @ _apply(model.hessian_op, ghat, "cauchy point"))
    if curv >= 0.0:
        t = delta
        status = STATUS_BOUNDARY
    else:
        t_free = gnorm / (-curv)
        t = min(delta, t_free)
        status = STATUS_BOUNDARY if t == delta else STATUS_INTERIOR
    s = t * ghat
    m_prime = t * gnorm + 0.5 * t * t * curv
    return Step(s, m_prime, status)


def solve_tr_exact(grad: Array, hessian: Array, delta: float) -> Step:
    """Global maximizer of the quadratic model via eigendecomposition.

    Finds alpha >= max(0, lambda_max(H)) such that s = (alpha I - H)^-1 g
    has norm delta, or returns the interior stationary point when H is
    negative definite and that point already lies inside the ball.  When g
    is orthogonal to the leading eigenspace and the limit solution is short,
    the step is completed along a leading eigenvector (the hard case).
    """
    g = np.asarray(grad, dtype=float)
    h = np.asarray(hessian, dtype=float)
    dim = g.shape[0]
    if dim > 64:
        raise ValueError("dense exact solver is limited to dimension 64")
    if h.shape != (dim, dim):
        raise ValueError("hessian shape does not match gradient")
    if not np.allclose(h, h.T, atol=1e-10):
        raise ValueError("hessian must be symmetric")
    if not (delta > 0 and math.isfinite(delta)):
        raise ValueError("radius must be positive and finite")

    lam, q = np.linalg.eigh(h)
    lam_max = float(lam[-1])
    ghat = q.T @ g
    scale = max(1.0, float(np.max(np.abs(lam))), float(np.linalg.norm(g)))
    alpha_lo = max(0.0, lam_max)
    gap_tol = 1e-12 * scale

    def s_hat(alpha):
        return ghat / (alpha - lam)

    def norm_at(alpha):
        return float(np.linalg.norm(s_hat(alpha)))

    top = alpha_lo - lam <= gap_tol  # eigendirections with no damping at alpha_lo
    blocked = bool(np.any(np.abs(ghat[top]) > 1e-13 * scale))

    if not blocked:
        partial = np.where(top, 0.0, ghat / np.where(top, 1.0, alpha_lo - lam))
        nrm = float(np.linalg.norm(partial))
        if nrm <= delta:
            if alpha_lo == 0.0 and lam_max < 0.0:
                s = q @ partial
                return Step(s, float(g @ s + 0.5 * s @ h @ s), STATUS_INTERIOR)
            # Hard case: pad with a leading eigenvector up to the boundary.
            t = math.sqrt(max(delta * delta - nrm * nrm, 0.0))
            s = q @ partial + t * q[:, -1]
            return Step(s, float(g @ s + 0.5 * s @ h @ s), STATUS_BOUNDARY)

    # Secular equation in 1/norm is close to linear, which suits brentq.
    lo = alpha_lo + max(1e-14 * scale, 1e-300)
    hi = alpha_lo + float(np.linalg.norm(g)) / delta + 1e-14 * scale
    while norm_at(hi) > delta:
        hi = alpha_lo + 2.0 * (hi - alpha_lo)
    while norm_at(lo) < delta:
        # Move the bracket down toward alpha_lo until the norm crosses delta.
        gap = lo - alpha_lo
        if gap < 1e-150:
            break
        lo = alpha_lo + gap / 16.0
    alpha = brentq(
        lambda a: 1.0 / norm_at(a) - 1.0 / delta, lo, hi, xtol=1e-15, rtol=1e-15
    )
    s = q @ s_hat(alpha)
    return Step(s, float(g @ s + 0.5 * s @ h @ s), STATUS_BOUNDARY)
