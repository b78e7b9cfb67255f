"""Trainable positive-semidefinite kernel assembled from warped base kernels.

The kernel applies a learned affine warp to both inputs, evaluates three
base kernels (linear, squared-exponential, rational-quadratic) on the
warped pair, combines them with nonnegative weights, and exponentiates:

    u       = W x + b                      (per slot)
    h_i     = base_i(u1, u2)
    k(a, b) = exp( sum_i w_i h_i + c + b_out ),   w_i, c >= 0.

Nonnegativity of the combiner (enforced by a softplus on the raw weights)
makes the exponent a conic combination of PSD kernels plus a constant, and
the exponential of a PSD kernel is PSD (its power series is a sum of Schur
products), so the construction is PSD by design.  The exponent is clamped
at EXPONENT_CLAMP with a diagnostic counter; a raw exponent beyond
EXPONENT_HARD_LIMIT raises, since that only happens with wildly mis-scaled
parameters.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from .gp import (
    AMPLITUDE_MAX,
    AMPLITUDE_MIN,
    DTYPE,
    LENGTHSCALE_MAX,
    LENGTHSCALE_MIN,
    Kernel,
    symmetrize,
)

EXPONENT_CLAMP = 30.0
EXPONENT_HARD_LIMIT = 700.0

LINEAR, RBF, RQ = "linear", "rbf", "rq"
DEFAULT_SLOTS = (LINEAR, RBF, RQ)


class KernelOverflowError(FloatingPointError):
    """Exponent exceeded the hard overflow limit; parameters are mis-scaled."""


def _softplus_inverse(value: float) -> float:
    return math.log(math.expm1(value))


class BaseKernelSlot:
    """One warped base kernel: u = W x + b, then a stationary/linear kernel."""

    def __init__(self, kind: str, warp_w: torch.Tensor, warp_b: torch.Tensor,
                 log_params: torch.Tensor):
        if kind not in DEFAULT_SLOTS:
            raise ValueError(f"unknown base kernel kind: {kind!r}")
        self.kind = kind
        self.warp_w = warp_w
        self.warp_b = warp_b
        # rbf: [log amplitude, log lengthscale]; rq: [..., log shape];
        # linear: [log variance]
        self.log_params = log_params

    @classmethod
    def create(cls, kind: str, d_in: int, d_latent: int, rng: np.random.Generator,
               linear_variance: float | None = None) -> "BaseKernelSlot":
        eye = np.eye(d_latent, d_in)
        w = torch.tensor(eye + rng.normal(0.0, 0.01, size=(d_latent, d_in)),
                         dtype=DTYPE, requires_grad=True)
        b = torch.zeros(d_latent, dtype=DTYPE, requires_grad=True)
        if kind == RBF:
            logs = [0.0, math.log(0.5)]
        elif kind == RQ:
            logs = [0.0, math.log(0.5), 0.0]
        else:
            lv = 0.5 / d_latent if linear_variance is None else linear_variance
            logs = [math.log(lv)]
        return cls(kind, w, b, torch.tensor(logs, dtype=DTYPE, requires_grad=True))

    def parameters(self):
        return [self.warp_w, self.warp_b, self.log_params]

    def _warp(self, x: torch.Tensor) -> torch.Tensor:
        return x @ self.warp_w.T + self.warp_b

    def cross(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        u1, u2 = self._warp(x1), self._warp(x2)
        if self.kind == LINEAR:
            return torch.exp(self.log_params[0]) * (u1 @ u2.T)
        # |u1 - u2|^2 via the quadratic form; clamp kills tiny negatives
        n1 = (u1 * u1).sum(-1)
        n2 = (u2 * u2).sum(-1)
        sq = torch.clamp(n1[:, None] + n2[None, :] - 2.0 * (u1 @ u2.T), min=0.0)
        amp = torch.exp(self.log_params[0])
        ell2 = torch.exp(2.0 * self.log_params[1])
        if self.kind == RBF:
            return amp * torch.exp(-sq / (2.0 * ell2))
        shape = torch.exp(self.log_params[2])
        return amp * torch.exp(-shape * torch.log1p(sq / (2.0 * shape * ell2)))

    def diag(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == LINEAR:
            u = self._warp(x)
            return torch.exp(self.log_params[0]) * (u * u).sum(-1)
        return torch.exp(self.log_params[0]).expand(x.shape[0]).clone()

    def clamp_(self) -> None:
        with torch.no_grad():
            if self.kind == LINEAR:
                self.log_params.clamp_(math.log(1e-8), math.log(AMPLITUDE_MAX))
                return
            self.log_params[0].clamp_(math.log(AMPLITUDE_MIN), math.log(AMPLITUDE_MAX))
            self.log_params[1].clamp_(math.log(LENGTHSCALE_MIN), math.log(LENGTHSCALE_MAX))
            if self.kind == RQ:
                self.log_params[2].clamp_(math.log(1e-2), math.log(1e3))


class NeuralKernel(Kernel):
    """Exponentiated nonnegative combination of warped base kernels.

    ``combiner_transform`` maps raw combiner weights/bias to their effective
    values; the default softplus keeps them nonnegative.  Tests may replace
    it to demonstrate why the constraint is required.
    """

    combiner_transform = staticmethod(F.softplus)

    def __init__(self, slots: list[BaseKernelSlot], raw_weights: torch.Tensor,
                 raw_bias: torch.Tensor, output_bias: torch.Tensor):
        if raw_weights.numel() != len(slots):
            raise ValueError("one combiner weight per slot required")
        self.slots = slots
        self.raw_weights = raw_weights
        self.raw_bias = raw_bias
        self.output_bias = output_bias
        self.clamp_count = 0
        self.eval_count = 0

    # ------------------------------------------------------------------

    @classmethod
    def initialize(cls, d_in: int, d_latent: int | None = None,
                   seed: int = 0) -> "NeuralKernel":
        """Deterministic near-identity initialization.

        Warps start I-shaped with small noise, lengthscales at 0.5 in
        unit-cube units, effective combiner weights at 1/N_k, bias near zero.
        """
        if d_in < 1:
            raise ValueError("d_in must be >= 1")
        d_latent = d_in if d_latent is None else d_latent
        if d_latent < 1:
            raise ValueError("d_latent must be >= 1")
        rng = np.random.default_rng(seed)
        slots = [BaseKernelSlot.create(kind, d_in, d_latent, rng) for kind in DEFAULT_SLOTS]
        n_k = len(slots)
        raw_w = torch.full((n_k,), _softplus_inverse(1.0 / n_k), dtype=DTYPE,
                           requires_grad=True)
        raw_b = torch.tensor(-10.0, dtype=DTYPE, requires_grad=True)
        out_b = torch.zeros((), dtype=DTYPE, requires_grad=True)
        return cls(slots, raw_w, raw_b, out_b)

    def parameters(self):
        params = []
        for slot in self.slots:
            params.extend(slot.parameters())
        params.extend([self.raw_weights, self.raw_bias, self.output_bias])
        return params

    def effective_weights(self) -> np.ndarray:
        with torch.no_grad():
            return self.combiner_transform(self.raw_weights).numpy().copy()

    @property
    def d_in(self) -> int:
        return self.slots[0].warp_w.shape[1]

    @property
    def d_latent(self) -> int:
        return self.slots[0].warp_w.shape[0]

    # ------------------------------------------------------------------

    def _exponent(self, h_stack: torch.Tensor) -> torch.Tensor:
        w = self.combiner_transform(self.raw_weights)
        bias = self.combiner_transform(self.raw_bias)
        return torch.tensordot(w, h_stack, dims=([0], [0])) + bias + self.output_bias

    def _finish(self, exponent: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            peak = float(exponent.detach().max())
            self.eval_count += exponent.numel()
            self.clamp_count += int((exponent.detach() > EXPONENT_CLAMP).sum())
        if peak > EXPONENT_HARD_LIMIT:
            raise KernelOverflowError(
                f"kernel exponent reached {peak:.3g} (> {EXPONENT_HARD_LIMIT:g}); "
                "parameters are mis-scaled")
        return torch.exp(torch.clamp(exponent, max=EXPONENT_CLAMP))

    def _default_roster(self) -> bool:
        return tuple(s.kind for s in self.slots) == DEFAULT_SLOTS

    def _cross_fused(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        """Batched warps for the standard linear/rbf/rq roster; one dispatch
        for the three warp matmuls and pair products instead of three."""
        w = torch.stack([s.warp_w for s in self.slots])
        b = torch.stack([s.warp_b for s in self.slots])
        u1 = torch.einsum("nd,sld->snl", x1, w) + b[:, None, :]
        u2 = u1 if x2 is x1 else torch.einsum("nd,sld->snl", x2, w) + b[:, None, :]
        g12 = torch.bmm(u1, u2.transpose(1, 2))
        sq = torch.clamp((u1 * u1).sum(-1)[:, :, None]
                         + (u2 * u2).sum(-1)[:, None, :] - 2.0 * g12, min=0.0)
        lp_lin, lp_rbf, lp_rq = (s.log_params for s in self.slots)
        h_lin = torch.exp(lp_lin[0]) * g12[0]
        h_rbf = torch.exp(lp_rbf[0]) * torch.exp(-sq[1] / (2.0 * torch.exp(2.0 * lp_rbf[1])))
        shape = torch.exp(lp_rq[2])
        h_rq = torch.exp(lp_rq[0]) * torch.exp(
            -shape * torch.log1p(sq[2] / (2.0 * shape * torch.exp(2.0 * lp_rq[1]))))
        return torch.stack([h_lin, h_rbf, h_rq])

    def cross(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        if self._default_roster():
            h = self._cross_fused(x1, x2)
        else:
            h = torch.stack([slot.cross(x1, x2) for slot in self.slots])
        return self._finish(self._exponent(h))

    def diag(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.stack([slot.diag(x) for slot in self.slots])
        return self._finish(self._exponent(h))

    def gram(self, x: torch.Tensor) -> torch.Tensor:
        return symmetrize(self.cross(x, x))

    def clamp_(self) -> None:
        for slot in self.slots:
            slot.clamp_()
        with torch.no_grad():
            self.raw_weights.clamp_(-30.0, 30.0)
            self.raw_bias.clamp_(-30.0, 30.0)
            self.output_bias.clamp_(-30.0, 30.0)

    def randomize(self, rng: np.random.Generator) -> "NeuralKernel":
        return NeuralKernel.initialize(self.d_in, self.d_latent,
                                       seed=int(rng.integers(0, 2**31 - 1)))

    def clamp_fraction(self) -> float:
        """Fraction of evaluations that hit the exponent clamp (mis-scaling flag)."""
        return self.clamp_count / self.eval_count if self.eval_count else 0.0


def min_gram_eigenvalue(kernel: Kernel, x: np.ndarray) -> float:
    """Smallest eigenvalue of the Gram matrix; diagnostics and tests only."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 points")
    with torch.no_grad():
        gram = kernel.gram(torch.as_tensor(x, dtype=DTYPE)).numpy()
    return float(np.linalg.eigvalsh(gram)[0])
