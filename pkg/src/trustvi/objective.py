"""Adapters exposing a stochastic objective to the optimizer loops.

ViObjective wraps a model's variational objective through the estimator
functions.  DeterministicQuadratic is a zero-noise stand-in used to check
that the optimizers degenerate to their classical counterparts when every
estimate is exact.
"""

from typing import Callable, Optional

import numpy as np

from .core import (
    Array,
    BaseBatch,
    GradientSample,
    ModelSpec,
    VariationalParams,
    elbo_and_gradient,
    elbo_estimate,
    stochastic_hvp,
)
from .assessment import paired_improvement_samples


class ViObjective:
    """The variational objective of a model, sampled through base batches."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self.draw_dim = model.latent_dim
        self.dim = 2 * model.latent_dim
        self.name = model.name

    def draw(self, seed: int, stream, n: int) -> BaseBatch:
        return BaseBatch.draw(seed, stream, n, self.draw_dim)

    def elbo(self, omega: VariationalParams, batch: BaseBatch) -> float:
        return elbo_estimate(self.model, omega, batch)

    def elbo_and_gradient(
        self, omega: VariationalParams, batch: BaseBatch, subbatches: int = 16
    ):
        return elbo_and_gradient(self.model, omega, batch, subbatches)

    def hvp_operator(
        self, omega: VariationalParams, batch: BaseBatch
    ) -> Callable[[Array], Array]:
        def op(v):
            return stochastic_hvp(self.model, omega, batch, v)

        return op

    def paired_diffs(
        self, omega: VariationalParams, s: Array, batch: BaseBatch
    ) -> Array:
        return paired_improvement_samples(self.model, omega, s, batch)

    # Closed-form objective hooks, present only for models that carry them.

    @property
    def analytic_value(self) -> Optional[Callable[[Array], float]]:
        return getattr(self.model, "elbo_value", None)

    @property
    def analytic_grad(self) -> Optional[Callable[[Array], Array]]:
        return getattr(self.model, "elbo_grad", None)

    @property
    def hessian_norm_bound(self) -> Optional[Callable[[Array, float], float]]:
        return getattr(self.model, "elbo_hessian_norm_bound", None)


class DeterministicQuadratic:
    """value(w) = b.w + 0.5 w'A w observed without noise.

    Batches are drawn but ignored; every per-draw quantity is the exact one,
    so sample standard deviations are identically zero.
    """

    def __init__(self, a: Array, b: Array, name: str = "quadratic"):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != (b.shape[0], b.shape[0]) or b.shape[0] % 2 != 0:
            raise ValueError("need a square matrix over an even dimension")
        self.a = 0.5 * (a + a.T)
        self.b = b
        self.dim = b.shape[0]
        self.draw_dim = 1
        self.name = name

    def draw(self, seed: int, stream, n: int) -> BaseBatch:
        return BaseBatch.draw(seed, stream, n, self.draw_dim)

    def _value(self, vec: Array) -> float:
        return float(self.b @ vec + 0.5 * vec @ self.a @ vec)

    def elbo(self, omega: VariationalParams, batch: BaseBatch) -> float:
        return self._value(omega.as_vector())

    def elbo_and_gradient(
        self, omega: VariationalParams, batch: BaseBatch, subbatches: int = 16
    ):
        vec = omega.as_vector()
        g = self.b + self.a @ vec
        sub = np.tile(g, (subbatches, 1))
        return self._value(vec), GradientSample(g, sub, batch.size)

    def hvp_operator(self, omega: VariationalParams, batch: BaseBatch):
        def op(v):
            return self.a @ np.asarray(v, dtype=float)

        return op

    def paired_diffs(
        self, omega: VariationalParams, s: Array, batch: BaseBatch
    ) -> Array:
        vec = omega.as_vector()
        diff = self._value(vec + s) - self._value(vec)
        return np.full(batch.size, diff)

    @property
    def analytic_value(self):
        return self._value

    @property
    def analytic_grad(self):
        return lambda vec: self.b + self.a @ np.asarray(vec, dtype=float)

    @property
    def hessian_norm_bound(self):
        norm = float(np.linalg.norm(self.a, 2))
        return lambda vec, radius: norm


def as_objective(model):
    """Accept a ModelSpec or anything already implementing the adapter API."""
    if isinstance(model, ModelSpec):
        return ViObjective(model)
    return model
