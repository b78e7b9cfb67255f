"""Exact Gaussian-process regression over arbitrary kernels.

The models here are deliberately small and dense: Gram assembly, Cholesky
factorization with an escalating jitter, the marginal log-likelihood

    L = -1/2 y^T (K + s2 I)^-1 y - 1/2 ln|K + s2 I| - (n/2) ln(2 pi),

and the standard predictive posterior

    mu(x) = k(x)^T (K + s2 I)^-1 y
    v(x)  = k(x, x) - k(x)^T (K + s2 I)^-1 k(x)     (latent, clamped >= 0).

Inputs are expected on the unit hypercube; targets are standardized to zero
mean / unit variance internally and predictions are returned in original
units.  Hyperparameters are stored as unconstrained logs and optimized by
Adam with random restarts; gradients come from reverse-mode autodiff
(torch), which the test suite cross-checks against central finite
differences.

A fitted ``GpModel`` is immutable: ``fit``/``refit`` build new instances,
so fitted models can be shared across threads for prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

DTYPE = torch.float64

# Jitter escalation: add lam * mean(diag) on Cholesky failure, lam growing
# tenfold from JITTER_START until JITTER_MAX, then give up.
JITTER_START = 1e-8
JITTER_MAX = 1e-2

NOISE_FLOOR = 1e-8
NOISE_CEIL = 1e2

# Lengthscale bounds in normalized-input units.
LENGTHSCALE_MIN = 1e-3
LENGTHSCALE_MAX = 1e3
AMPLITUDE_MIN = 1e-6
AMPLITUDE_MAX = 1e4


class SingularMatrixError(RuntimeError):
    """Cholesky failed even after jitter escalation."""


class GramEvaluationError(ValueError):
    """A kernel evaluation produced a non-finite value."""


@dataclass(frozen=True)
class GaussianPosterior:
    """Predictive mean and latent variance at query points, original units."""

    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.variance, 0.0))


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


def symmetrize(k: torch.Tensor) -> torch.Tensor:
    """Write both triangles from the lower one so K == K.T holds bit-exactly."""
    lower = torch.tril(k)
    return lower + lower.T - torch.diag(torch.diagonal(k))


class Kernel:
    """Covariance function with trainable, unconstrained-log parameters.

    Subclasses implement ``cross`` (torch, differentiable) and ``diag``;
    ``gram`` symmetrizes the self-covariance.  ``theta`` exposes the flat
    vector of raw (unconstrained) parameters; the transform to constrained
    space is documented per subclass.
    """

    def parameters(self) -> list[torch.Tensor]:
        raise NotImplementedError

    def cross(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def diag(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def clamp_(self) -> None:
        """Project raw parameters back into their declared bounds."""

    def randomize(self, rng: np.random.Generator) -> "Kernel":
        """Fresh kernel of the same shape for a random restart."""
        raise NotImplementedError

    def clone(self) -> "Kernel":
        new = self.randomize(np.random.default_rng(0))
        new.theta = self.theta
        return new

    def gram(self, x: torch.Tensor) -> torch.Tensor:
        return symmetrize(self.cross(x, x))

    def evaluate(self, x1, x2) -> float:
        x1 = _as_tensor(x1).reshape(1, -1)
        x2 = _as_tensor(x2).reshape(1, -1)
        with torch.no_grad():
            return float(self.cross(x1, x2)[0, 0])

    @property
    def theta(self) -> np.ndarray:
        with torch.no_grad():
            parts = [p.reshape(-1).numpy().copy() for p in self.parameters()]
        return np.concatenate(parts) if parts else np.zeros(0)

    @theta.setter
    def theta(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        offset = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(torch.as_tensor(values[offset:offset + n], dtype=DTYPE).reshape(p.shape))
                offset += n
        if offset != values.size:
            raise ValueError(f"theta has {values.size} entries, kernel expects {offset}")


class ArdKernel(Kernel):
    """Squared-exponential kernel with one inverse-squared lengthscale per dim:

        k(x, x') = a * exp(-sum_l eta_l (x_l - x'_l)^2),   eta_l = 1 / ell_l^2.

    Raw parameters are ``log a`` and ``log eta``; lengthscales ``ell`` are
    bounded to [1e-3, 1e3] in normalized-input units.
    """

    def __init__(self, amplitude: float = 1.0, lengthscales=0.5, ndim: int | None = None):
        ell = np.asarray(lengthscales, dtype=np.float64)
        if ell.ndim == 0:
            if ndim is None:
                raise ValueError("scalar lengthscale requires ndim")
            ell = np.full(ndim, float(ell))
        self.log_amplitude = torch.tensor(math.log(amplitude), dtype=DTYPE, requires_grad=True)
        self.log_inv_sq_ls = torch.tensor(np.log(1.0 / ell**2), dtype=DTYPE, requires_grad=True)

    @property
    def ndim(self) -> int:
        return self.log_inv_sq_ls.numel()

    @property
    def amplitude(self) -> float:
        return float(torch.exp(self.log_amplitude.detach()))

    @property
    def lengthscales(self) -> np.ndarray:
        with torch.no_grad():
            return np.exp(-0.5 * self.log_inv_sq_ls.numpy())

    def parameters(self):
        return [self.log_amplitude, self.log_inv_sq_ls]

    def cross(self, x1, x2):
        eta = torch.exp(self.log_inv_sq_ls)
        sq = ((x1[:, None, :] - x2[None, :, :]) ** 2 * eta).sum(-1)
        return torch.exp(self.log_amplitude) * torch.exp(-sq)

    def diag(self, x):
        return torch.exp(self.log_amplitude).expand(x.shape[0]).clone()

    def clamp_(self):
        lo = math.log(1.0 / LENGTHSCALE_MAX**2)
        hi = math.log(1.0 / LENGTHSCALE_MIN**2)
        with torch.no_grad():
            self.log_inv_sq_ls.clamp_(lo, hi)
            self.log_amplitude.clamp_(math.log(AMPLITUDE_MIN), math.log(AMPLITUDE_MAX))

    def randomize(self, rng: np.random.Generator) -> "ArdKernel":
        ell = np.exp(rng.uniform(math.log(0.05), math.log(2.0), size=self.ndim))
        return ArdKernel(amplitude=1.0, lengthscales=ell)


def assemble_gram(kernel: Kernel, x: np.ndarray) -> np.ndarray:
    """Full covariance matrix K_ij = k(x_i, x_j), symmetric by construction."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("X must be a nonempty n x d matrix")
    if not np.isfinite(x).all():
        raise ValueError("X contains non-finite entries")
    with torch.no_grad():
        k = kernel.gram(_as_tensor(x)).numpy()
    if not np.isfinite(k).all():
        i, j = np.argwhere(~np.isfinite(k))[0]
        raise GramEvaluationError(
            f"kernel produced a non-finite value at pair ({i}, {j}): "
            f"x_i={x[i].tolist()}, x_j={x[j].tolist()}")
    return k


def robust_cholesky(a: torch.Tensor) -> tuple[torch.Tensor, float]:
    """Cholesky of ``a``, adding escalating diagonal jitter on failure.

    Returns (L, jitter_used).  Raises SingularMatrixError past JITTER_MAX.
    """
    l, info = torch.linalg.cholesky_ex(a)
    if int(info) == 0 and torch.isfinite(l).all():
        return l, 0.0
    scale = float(torch.diagonal(a).mean().detach())
    lam = JITTER_START
    eye = torch.eye(a.shape[0], dtype=DTYPE)
    while lam <= JITTER_MAX:
        l, info = torch.linalg.cholesky_ex(a + lam * scale * eye)
        if int(info) == 0 and torch.isfinite(l).all():
            return l, lam * scale
        lam *= 10.0
    raise SingularMatrixError(
        f"Cholesky failed after jitter escalation up to {JITTER_MAX} * mean(diag)")


def _mll_from_chol(l: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    n = y.shape[0]
    alpha = torch.cholesky_solve(y[:, None], l)[:, 0]
    return (-0.5 * (y * alpha).sum()
            - torch.log(torch.diagonal(l)).sum()
            - 0.5 * n * math.log(2.0 * math.pi))


class GpModel:
    """Exact GP with cached Cholesky factor and solve.

    Construct through ``fit`` (MLE with restarts) or ``__init__`` for fixed
    hyperparameters.  ``standardize=False`` leaves targets untouched; useful
    for closed-form checks.
    """

    def __init__(self, x, y, kernel: Kernel, noise_variance: float = 1e-2,
                 standardize: bool = True):
        self.x = _as_tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if self.x.shape[0] != y.shape[0]:
            raise ValueError("X and y length mismatch")
        self.y_raw = y.copy()
        self.kernel = kernel
        self.standardize = standardize
        if standardize:
            self.y_mean = float(y.mean())
            std = float(y.std())
            self.y_scale = std if std > 1e-12 else 1.0
        else:
            self.y_mean, self.y_scale = 0.0, 1.0
        self.y_std = torch.as_tensor((y - self.y_mean) / self.y_scale, dtype=DTYPE)
        nv = min(max(float(noise_variance), NOISE_FLOOR), NOISE_CEIL)
        self.raw_log_noise = torch.tensor(math.log(nv), dtype=DTYPE, requires_grad=True)
        self.degraded = False
        self.jitter_used = 0.0
        self._refresh_cache()

    # ------------------------------------------------------------------
    # cache / likelihood
    # ------------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def noise_variance(self) -> float:
        return float(torch.exp(self.raw_log_noise.detach()))

    def _noisy_gram(self) -> torch.Tensor:
        k = self.kernel.gram(self.x)
        return k + torch.exp(self.raw_log_noise) * torch.eye(self.n, dtype=DTYPE)

    def _refresh_cache(self) -> None:
        with torch.no_grad():
            a = self._noisy_gram()
            self.chol, self.jitter_used = robust_cholesky(a)
            self.alpha = torch.cholesky_solve(self.y_std[:, None], self.chol)[:, 0]

    def log_marginal_likelihood(self) -> float:
        with torch.no_grad():
            return float(_mll_from_chol(self.chol, self.y_std))

    def mll_torch(self) -> torch.Tensor:
        """Differentiable marginal log-likelihood at the current parameters."""
        l, _ = robust_cholesky(self._noisy_gram())
        return _mll_from_chol(l, self.y_std)

    def mll_value_and_grad(self) -> tuple[float, np.ndarray]:
        """MLL and its gradient w.r.t. the flat raw parameter vector."""
        params = self.trainable_parameters()
        for p in params:
            if p.grad is not None:
                p.grad = None
        value = self.mll_torch()
        value.backward()
        grads = [
            (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1).numpy().copy()
            for p in params
        ]
        return float(value.detach()), np.concatenate(grads)

    def trainable_parameters(self) -> list[torch.Tensor]:
        return list(self.kernel.parameters()) + [self.raw_log_noise]

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.kernel.theta, [float(self.raw_log_noise.detach())]])

    @theta.setter
    def theta(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        self.kernel.theta = values[:-1]
        with torch.no_grad():
            self.raw_log_noise.copy_(torch.tensor(values[-1], dtype=DTYPE))
        self._refresh_cache()

    def _clamp_(self) -> None:
        self.kernel.clamp_()
        with torch.no_grad():
            self.raw_log_noise.clamp_(math.log(NOISE_FLOOR), math.log(NOISE_CEIL))

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------

    def posterior_std_torch(self, xq: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Differentiable posterior in standardized target units.

        Refactorizes the Gram against the stored data, so gradients flow to
        the kernel hyperparameters as well as to the query points.
        """
        kq = self.kernel.cross(xq, self.x)
        l, _ = robust_cholesky(self._noisy_gram())
        alpha = torch.cholesky_solve(self.y_std[:, None], l)[:, 0]
        mean_std = kq @ alpha
        v = torch.linalg.solve_triangular(l, kq.T, upper=False)
        var_std = torch.clamp(self.kernel.diag(xq) - (v * v).sum(0), min=0.0)
        return mean_std, var_std

    def posterior_std_torch_cached(self, xq: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Like ``posterior_std_torch`` but reusing the cached factorization.

        Gradients flow through the query points (and the cross-covariance)
        only; kernel hyperparameters behind the cached Cholesky are treated
        as constants, so do not optimize them through this path.
        """
        kq = self.kernel.cross(xq, self.x)
        mean_std = kq @ self.alpha
        v = torch.linalg.solve_triangular(self.chol, kq.T, upper=False)
        var_std = torch.clamp(self.kernel.diag(xq) - (v * v).sum(0), min=0.0)
        return mean_std, var_std

    def posterior_torch(self, xq: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Differentiable posterior (original units, latent variance)."""
        mean_std, var_std = self.posterior_std_torch(xq)
        return self.y_mean + self.y_scale * mean_std, self.y_scale**2 * var_std

    def posterior(self, xq: np.ndarray) -> GaussianPosterior:
        """Predictive posterior using the cached factorization."""
        xq = _as_tensor(np.atleast_2d(np.asarray(xq, dtype=np.float64)))
        if not torch.isfinite(xq).all():
            raise ValueError("query points must be finite")
        with torch.no_grad():
            kq = self.kernel.cross(xq, self.x)
            mean_std = kq @ self.alpha
            v = torch.linalg.solve_triangular(self.chol, kq.T, upper=False)
            var_std = torch.clamp(self.kernel.diag(xq) - (v * v).sum(0), min=0.0)
        return GaussianPosterior(
            mean=(self.y_mean + self.y_scale * mean_std).numpy(),
            variance=(self.y_scale**2 * var_std).numpy(),
        )

    def observation_variance(self, posterior: GaussianPosterior) -> np.ndarray:
        """Latent variance plus the learned noise, in original units."""
        return posterior.variance + self.noise_variance * self.y_scale**2

    # ------------------------------------------------------------------
    # fitting
    # ------------------------------------------------------------------

    @classmethod
    def fit(cls, x, y, kernel: Kernel, *, steps: int = 200, restarts: int = 3,
            lr: float = 0.01, seed: int = 0, noise_init: float = 1e-2,
            standardize: bool = True) -> "GpModel":
        """Maximum-likelihood fit with Adam and random restarts.

        The initial parameters always compete as restart 0, so the returned
        model's likelihood is never below the initial one.  If every restart
        diverges the best-so-far parameters are kept and ``degraded`` is set.
        """
        model = cls(x, y, kernel, noise_variance=noise_init, standardize=standardize)
        if model.n < 2:
            raise ValueError("fitting requires at least 2 training points")
        rng = np.random.default_rng(seed)
        best_theta = model.theta
        best_mll = model.log_marginal_likelihood()
        any_finite = np.isfinite(best_mll)
        for attempt in range(max(1, restarts)):
            if attempt > 0:
                model.kernel = model.kernel.randomize(rng)
                with torch.no_grad():
                    model.raw_log_noise.copy_(torch.tensor(
                        math.log(10 ** rng.uniform(-6, -1)), dtype=DTYPE))
            theta, mll, ok = _adam_maximize(model, steps=steps, lr=lr)
            any_finite = any_finite or ok
            if ok and mll > best_mll:
                best_mll, best_theta = mll, theta
        model.theta = best_theta
        model.degraded = not any_finite
        return model

    def refit(self, x, y, *, steps: int = 200) -> "GpModel":
        """Warm-started refit on new data; the old parameters are a candidate."""
        kernel = self.kernel.clone()
        new = GpModel(x, y, kernel, noise_variance=self.noise_variance,
                      standardize=self.standardize)
        start_theta = new.theta
        start_mll = new.log_marginal_likelihood()
        theta, mll, ok = _adam_maximize(new, steps=steps, lr=0.01)
        if ok and mll > start_mll:
            new.theta = theta
        else:
            new.theta = start_theta
            new.degraded = not ok
        return new


def _adam_maximize(model: GpModel, *, steps: int, lr: float) -> tuple[np.ndarray, float, bool]:
    """Run Adam on -MLL; returns (best theta, best MLL, saw_finite)."""
    params = model.trainable_parameters()
    opt = torch.optim.Adam(params, lr=lr)
    best_theta = model.theta
    best = -np.inf
    for _ in range(steps):
        opt.zero_grad()
        try:
            mll = model.mll_torch()
        except (SingularMatrixError, FloatingPointError):
            break
        if not torch.isfinite(mll):
            break
        cur = float(mll.detach())
        if cur > best:
            best = cur
            best_theta = model.theta
        (-mll).backward()
        opt.step()
        model._clamp_()
    # the loop scores parameters before each step; score the last step too
    try:
        final = float(model.mll_torch().detach())
        if np.isfinite(final) and final > best:
            best = final
            best_theta = model.theta
    except (SingularMatrixError, FloatingPointError):
        pass
    model.theta = best_theta
    return best_theta, best, np.isfinite(best)
