"""Closed-form acquisition functions and their feasibility-scaled ensemble.

All functions follow the maximization convention and accept scalars or
arrays (broadcast elementwise).  Standard deviations are computed as
sqrt(max(v, VAR_EPS)) so boundary cases stay finite.

The ensemble hands three objectives to the multi-objective search:

    ( UCB(x) * PF(x),  PI(x) * PF(x),  EI(x) * PF(x) )

where PF is the product over constraints of the probability that each
constraint posterior clears its threshold.  When no feasible incumbent
exists yet, PI and EI are undefined and their slots fall back to PF itself,
so the search reduces to feasibility-seeking while UCB * PF keeps pulling
toward high predicted objectives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

VAR_EPS = 1e-12

SQRT_2PI = np.sqrt(2.0 * np.pi)

DEFAULT_UCB_BETA = 2.0


def _std(v):
    return np.sqrt(np.maximum(v, VAR_EPS))


def _norm_pdf(u):
    return np.exp(-0.5 * u * u) / SQRT_2PI


def probability_of_improvement(mu, v, incumbent):
    """PI = Phi((mu - incumbent) / std); degenerates to a step at v = 0."""
    mu = np.asarray(mu, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    out = ndtr((mu - incumbent) / _std(v))
    degenerate = v <= 0
    if np.any(degenerate):
        out = np.where(degenerate, (mu > incumbent).astype(np.float64), out)
    return out if out.ndim else float(out)


def expected_improvement(mu, v, incumbent):
    """EI = (mu - y) Phi(u) + std phi(u) with u = (mu - y)/std; >= 0 always."""
    mu = np.asarray(mu, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    std = _std(v)
    gap = mu - incumbent
    u = gap / std
    out = gap * ndtr(u) + std * _norm_pdf(u)
    degenerate = v <= 0
    if np.any(degenerate):
        out = np.where(degenerate, np.maximum(gap, 0.0), out)
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def upper_confidence_bound(mu, v, beta=DEFAULT_UCB_BETA):
    """UCB = mu + beta * v.  beta scales the variance, not the std."""
    mu = np.asarray(mu, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    out = mu + beta * v
    return out if out.ndim else float(out)


@dataclass
class ConstraintPosterior:
    """Posterior of one constraint metric at query points plus its threshold."""

    mean: np.ndarray
    variance: np.ndarray
    threshold: float
    direction: str = ">="  # ">=" keeps the metric above the threshold

    def feasibility(self) -> np.ndarray:
        sign = 1.0 if self.direction == ">=" else -1.0
        return probability_of_improvement(sign * np.asarray(self.mean),
                                          np.asarray(self.variance),
                                          sign * self.threshold)


def probability_of_feasibility(constraints: list[ConstraintPosterior]) -> np.ndarray:
    """Product over constraints of Phi(signed margin / std)."""
    if not constraints:
        raise ValueError("at least one constraint posterior is required")
    out = constraints[0].feasibility()
    for c in constraints[1:]:
        out = out * c.feasibility()
    return out


@dataclass
class AcquisitionContext:
    """Frozen posteriors and bookkeeping needed to score candidate points.

    ``objective`` and each entry of ``constraints`` expose ``posterior(X)``
    returning mean/variance arrays; ``objective_sign`` folds minimization
    metrics into the maximization convention.
    """

    objective: object
    constraints: list = field(default_factory=list)
    thresholds: list = field(default_factory=list)
    directions: list = field(default_factory=list)
    incumbent: float | None = None
    beta: float = DEFAULT_UCB_BETA
    objective_sign: float = 1.0

    def score(self, x: np.ndarray) -> np.ndarray:
        """Ensemble objective triples for a batch of points, shape (m, 3)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        post = self.objective.posterior(x)
        mu = self.objective_sign * post.mean
        v = post.variance
        if self.constraints:
            cps = []
            for model, thr, direction in zip(self.constraints, self.thresholds,
                                             self.directions):
                cp = model.posterior(x)
                cps.append(ConstraintPosterior(cp.mean, cp.variance, thr, direction))
            pf = probability_of_feasibility(cps)
        else:
            pf = np.ones(x.shape[0])
        ucb = upper_confidence_bound(mu, v, self.beta)
        if self.incumbent is None:
            pi = np.ones_like(pf)
            ei = np.ones_like(pf)
        else:
            pi = probability_of_improvement(mu, v, self.incumbent)
            ei = expected_improvement(mu, v, self.incumbent)
        return np.column_stack([ucb * pf, pi * pf, ei * pf])
