"""Knowledge transfer between problems via an encoder/decoder around
frozen-data source GPs.

An encoder maps target inputs into the source input space; one source GP
per source metric predicts there; a decoder maps the vector of source
predictions to the target metrics.  The source observations are never
modified: only the encoder, the decoder, the source kernel hyperparameters
and the target noise train, by maximizing the per-point Gaussian likelihood

    sum_i log N( y_i | D(mu_s(E(x_i))),  J_i diag(v_s) J_i^T + s2_t I )

where J_i is the decoder Jacobian at the source mean (first-order
uncertainty propagation; exact when the decoder is linear).

Everything decoder-side runs in standardized units: source predictions are
standardized by each source GP's own constants, target metrics by constants
refreshed from the current target data.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np
import torch

from .gp import DTYPE, GaussianPosterior, GpModel, Kernel, ArdKernel
from .neural_kernel import NeuralKernel

CHECKPOINT_VERSION = 1

NOISE_T_FLOOR = 1e-8
NOISE_T_INIT = 1e-2


class ConfigurationError(ValueError):
    """Encoder/decoder/source dimensions are inconsistent."""


class LikelihoodNumericsError(RuntimeError):
    """A per-point covariance failed to factorize."""


class ShallowNet:
    """Two-layer net: linear(d_in x width) -> sigmoid -> linear(width x d_out).

    ``activation='identity'`` skips the sigmoid, giving an exactly linear
    map; tests use it to pin down the propagation algebra.
    """

    def __init__(self, w1, b1, w2, b2, activation: str = "sigmoid"):
        if activation not in ("sigmoid", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self.activation = activation

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def d_out(self) -> int:
        return self.w2.shape[1]

    @property
    def width(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def near_identity(cls, d_in: int, d_out: int, width: int = 32, seed: int = 0,
                      center: float = 0.0, gain: float = 0.5,
                      noise: float = 0.01, activation: str = "sigmoid") -> "ShallowNet":
        """Initialize so the net approximates the (zero-padded) identity.

        The sigmoid is linearized around ``center``: with z = gain (x - c),
        sigmoid(z) ~ 1/2 + z/4, inverted by the output layer.
        """
        rng = np.random.default_rng(seed)
        m = min(d_in, d_out, width)
        w1 = np.zeros((d_in, width))
        w1[:m, :m] = np.eye(m) * gain
        w2 = np.zeros((width, d_out))
        b1 = np.zeros(width)
        b2 = np.zeros(d_out)
        if activation == "sigmoid":
            w2[:m, :m] = np.eye(m) * (4.0 / gain)
            b1[:m] = -gain * center
            b2[:m] = center - 2.0 / gain
        else:
            w2[:m, :m] = np.eye(m) / gain
        w1 += rng.normal(0.0, noise, size=w1.shape)
        w2 += rng.normal(0.0, noise, size=w2.shape)

        def t(a):
            return torch.tensor(a, dtype=DTYPE, requires_grad=True)

        return cls(t(w1), t(b1), t(w2), t(b2), activation=activation)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = x @ self.w1 + self.b1
        a = torch.sigmoid(z) if self.activation == "sigmoid" else z
        return a @ self.w2 + self.b2

    def jacobian(self, x: torch.Tensor) -> torch.Tensor:
        """Batched analytic Jacobian d out / d in, shape (m, d_out, d_in)."""
        z = x @ self.w1 + self.b1
        if self.activation == "sigmoid":
            a = torch.sigmoid(z)
            act_grad = a * (1.0 - a)
        else:
            act_grad = torch.ones_like(z)
        return torch.einsum("ko,mk,ik->moi", self.w2, act_grad, self.w1)

    @property
    def theta(self) -> np.ndarray:
        with torch.no_grad():
            return np.concatenate([p.reshape(-1).numpy().copy() for p in self.parameters()])

    @theta.setter
    def theta(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        offset = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(torch.as_tensor(values[offset:offset + n]).reshape(p.shape))
                offset += n
        if offset != values.size:
            raise ValueError("theta size mismatch")

    def to_dict(self) -> dict:
        return {"d_in": self.d_in, "d_out": self.d_out, "width": self.width,
                "activation": self.activation, "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ShallowNet":
        net = cls.near_identity(d["d_in"], d["d_out"], d["width"],
                                activation=d["activation"])
        net.theta = np.asarray(d["theta"])
        return net


class TransferGp:
    """Encoder/decoder transfer model over per-metric source GPs."""

    def __init__(self, source_models: list[GpModel], target_dim: int,
                 n_target_metrics: int, *, encoder: ShallowNet | None = None,
                 decoder: ShallowNet | None = None, width: int = 32, seed: int = 0,
                 noise_variance: float = NOISE_T_INIT,
                 standardize_targets: bool = True,
                 source_metric_names: list[str] | None = None):
        if not source_models:
            raise ConfigurationError("at least one source model is required")
        d_source = source_models[0].x.shape[1]
        if any(m.x.shape[1] != d_source for m in source_models):
            raise ConfigurationError("source models disagree on input dimension")
        n_source = len(source_models)
        self.source_models = source_models
        self.source_metric_names = source_metric_names or [
            f"m{j}" for j in range(n_source)]
        self.encoder = encoder if encoder is not None else ShallowNet.near_identity(
            target_dim, d_source, width, seed=seed, center=0.5)
        self.decoder = decoder if decoder is not None else ShallowNet.near_identity(
            n_source, n_target_metrics, width, seed=seed + 1, center=0.0)
        if self.encoder.d_in != target_dim or self.encoder.d_out != d_source:
            raise ConfigurationError(
                f"encoder maps {self.encoder.d_in}->{self.encoder.d_out}, "
                f"expected {target_dim}->{d_source}")
        if self.decoder.d_in != n_source or self.decoder.d_out != n_target_metrics:
            raise ConfigurationError(
                f"decoder maps {self.decoder.d_in}->{self.decoder.d_out}, "
                f"expected {n_source}->{n_target_metrics}")
        self.target_dim = target_dim
        self.n_target_metrics = n_target_metrics
        self.standardize_targets = standardize_targets
        nv = max(float(noise_variance), NOISE_T_FLOOR)
        self.raw_log_noise_t = torch.tensor(math.log(nv), dtype=DTYPE, requires_grad=True)
        self.t_mean = np.zeros(n_target_metrics)
        self.t_scale = np.ones(n_target_metrics)
        self.x_t = np.zeros((0, target_dim))
        self.y_t = np.zeros((0, n_target_metrics))
        self.degraded = False

    # ------------------------------------------------------------------
    # data handling
    # ------------------------------------------------------------------

    @property
    def noise_variance_t(self) -> float:
        return float(torch.exp(self.raw_log_noise_t.detach()))

    def set_target_data(self, x: np.ndarray, y: np.ndarray) -> None:
        """Replace the target dataset and refresh its standardization."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if x.shape[0] != y.shape[0] or x.shape[1] != self.target_dim \
                or y.shape[1] != self.n_target_metrics:
            raise ConfigurationError("target data shape mismatch")
        self.x_t, self.y_t = x.copy(), y.copy()
        if self.standardize_targets and len(y) > 0:
            self.t_mean = y.mean(axis=0)
            std = y.std(axis=0)
            self.t_scale = np.where(std > 1e-12, std, 1.0)

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------

    def _source_std_cached(self, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Standardized source predictions using each model's cached factor."""
        means, variances = [], []
        for m in self.source_models:
            post = m.posterior(e)
            means.append((post.mean - m.y_mean) / m.y_scale)
            variances.append(post.variance / m.y_scale**2)
        return np.column_stack(means), np.column_stack(variances)

    def predict(self, xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-metric predictive means and variances, original target units.

        Mean via the decoder; variance via the first-order propagation
        J diag(v_s) J^T, diagonal clamped at zero.
        """
        xq = np.atleast_2d(np.asarray(xq, dtype=np.float64))
        with torch.no_grad():
            e = self.encoder.forward(torch.as_tensor(xq, dtype=DTYPE)).numpy()
        mu_s, v_s = self._source_std_cached(e)
        with torch.no_grad():
            dec_in = torch.as_tensor(mu_s, dtype=DTYPE)
            mean_std = self.decoder.forward(dec_in).numpy()
            jac = self.decoder.jacobian(dec_in).numpy()
        var_std = np.maximum(np.einsum("mts,ms,mts->mt", jac, v_s, jac), 0.0)
        mean = self.t_mean + self.t_scale * mean_std
        var = self.t_scale**2 * var_std
        return mean, var

    def posterior_metric(self, index: int, xq: np.ndarray) -> GaussianPosterior:
        mean, var = self.predict(xq)
        return GaussianPosterior(mean=mean[:, index], variance=var[:, index])

    def metric_view(self, index: int) -> "TransferMetricView":
        return TransferMetricView(self, index)

    # ------------------------------------------------------------------
    # likelihood and training
    # ------------------------------------------------------------------

    def _likelihood_terms(self, cached_source: bool = False) -> torch.Tensor:
        if len(self.x_t) == 0:
            raise ValueError("no target data set")
        xt = torch.as_tensor(self.x_t, dtype=DTYPE)
        yt_std = torch.as_tensor((self.y_t - self.t_mean) / self.t_scale, dtype=DTYPE)
        e = self.encoder.forward(xt)
        mu_cols, var_cols = [], []
        for m in self.source_models:
            if cached_source:
                mu, var = m.posterior_std_torch_cached(e)
            else:
                mu, var = m.posterior_std_torch(e)
            mu_cols.append(mu)
            var_cols.append(var)
        mu_s = torch.stack(mu_cols, dim=1)
        v_s = torch.stack(var_cols, dim=1)
        mean_std = self.decoder.forward(mu_s)
        jac = self.decoder.jacobian(mu_s)
        cov = torch.einsum("mts,ms,mus->mtu", jac, v_s, jac)
        cov = 0.5 * (cov + cov.transpose(1, 2))
        n_t = self.n_target_metrics
        cov = cov + torch.exp(self.raw_log_noise_t) * torch.eye(n_t, dtype=DTYPE)
        chol, info = torch.linalg.cholesky_ex(cov)
        bad = torch.nonzero(info)
        if bad.numel() > 0:
            raise LikelihoodNumericsError(
                f"per-point covariance not positive definite at target point "
                f"{int(bad[0])}")
        resid = (yt_std - mean_std)[:, :, None]
        solved = torch.cholesky_solve(resid, chol)
        quad = (resid * solved).sum(dim=(1, 2))
        logdet = 2.0 * torch.log(torch.diagonal(chol, dim1=1, dim2=2)).sum(dim=1)
        return -0.5 * quad - 0.5 * logdet - 0.5 * n_t * math.log(2.0 * math.pi)

    def log_likelihood_torch(self, cached_source: bool = False) -> torch.Tensor:
        return self._likelihood_terms(cached_source).sum()

    def log_likelihood(self) -> float:
        with torch.no_grad():
            return float(self.log_likelihood_torch())

    def trainable_parameters(self, include_source_kernels: bool = True) -> list[torch.Tensor]:
        params = self.encoder.parameters() + self.decoder.parameters()
        if include_source_kernels:
            for m in self.source_models:
                params.extend(m.kernel.parameters())
        params.append(self.raw_log_noise_t)
        return params

    @property
    def theta(self) -> np.ndarray:
        parts = [self.encoder.theta, self.decoder.theta]
        parts.extend(m.kernel.theta for m in self.source_models)
        parts.append(np.array([float(self.raw_log_noise_t.detach())]))
        return np.concatenate(parts)

    @theta.setter
    def theta(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        offset = 0

        def take(n):
            nonlocal offset
            chunk = values[offset:offset + n]
            offset += n
            return chunk

        self.encoder.theta = take(self.encoder.theta.size)
        self.decoder.theta = take(self.decoder.theta.size)
        for m in self.source_models:
            m.kernel.theta = take(m.kernel.theta.size)
        with torch.no_grad():
            self.raw_log_noise_t.copy_(torch.tensor(take(1)[0], dtype=DTYPE))
        if offset != values.size:
            raise ValueError("theta size mismatch")
        self.refresh_source_caches()

    def refresh_source_caches(self) -> None:
        for m in self.source_models:
            m._refresh_cache()

    def value_and_grad(self) -> tuple[float, np.ndarray]:
        params = self.trainable_parameters()
        for p in params:
            if p.grad is not None:
                p.grad = None
        value = self.log_likelihood_torch()
        value.backward()
        grads = [
            (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1).numpy().copy()
            for p in params
        ]
        return float(value.detach()), np.concatenate(grads)

    def train(self, steps: int = 200, lr: float = 0.01,
              train_source_kernels: bool = True,
              encoder_lr: float | None = None) -> "TransferGp":
        """Adam on the transfer likelihood; keeps the best parameters seen.

        Source observations are untouched by construction.  On divergence
        (non-finite loss) the best checkpoint is restored and ``degraded``
        is set.  With ``train_source_kernels=False`` the source kernel
        hyperparameters stay frozen and the cached source factorization is
        reused, which makes per-iteration refreshes much cheaper.

        The encoder trains in its own parameter group at ``encoder_lr``
        (default lr/10): with few target points a flexible encoder can
        overfit and warp the input alignment away from the near-identity
        start, which poisons predictions everywhere else.
        """
        if len(self.x_t) < 2:
            raise ValueError("training requires at least 2 target points")
        cached = not train_source_kernels
        if cached:
            self.refresh_source_caches()
        enc_params = self.encoder.parameters()
        rest = [p for p in self.trainable_parameters(include_source_kernels=not cached)
                if not any(p is q for q in enc_params)]
        opt = torch.optim.Adam([
            {"params": enc_params, "lr": lr / 10 if encoder_lr is None else encoder_lr},
            {"params": rest, "lr": lr},
        ])
        best_theta = self.theta
        best = -np.inf
        diverged = False
        for _ in range(steps):
            opt.zero_grad()
            try:
                ll = self.log_likelihood_torch(cached_source=cached)
            except (RuntimeError, FloatingPointError):
                diverged = True
                break
            cur = float(ll.detach())
            if not np.isfinite(cur):
                diverged = True
                break
            if cur > best:
                best = cur
                best_theta = self.theta
            (-ll).backward()
            opt.step()
            self._clamp_()
        if not diverged:
            try:
                final = self.log_likelihood()
                if np.isfinite(final) and final > best:
                    best = final
                    best_theta = self.theta
            except (RuntimeError, FloatingPointError):
                diverged = True
        self.theta = best_theta
        self.degraded = diverged
        return self

    def _clamp_(self) -> None:
        for m in self.source_models:
            m.kernel.clamp_()
        with torch.no_grad():
            self.raw_log_noise_t.clamp_(math.log(NOISE_T_FLOOR), math.log(1e4))


class TransferMetricView:
    """Adapter exposing one target metric of a TransferGp as ``posterior``."""

    def __init__(self, model: TransferGp, index: int):
        self.model = model
        self.index = index

    def posterior(self, x: np.ndarray) -> GaussianPosterior:
        return self.model.posterior_metric(self.index, x)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def kernel_to_dict(kernel: Kernel) -> dict:
    if isinstance(kernel, NeuralKernel):
        return {"type": "neural", "d_in": kernel.d_in, "d_latent": kernel.d_latent,
                "theta": kernel.theta.tolist()}
    if isinstance(kernel, ArdKernel):
        return {"type": "ard", "ndim": kernel.ndim, "theta": kernel.theta.tolist()}
    raise TypeError(f"cannot serialize kernel of type {type(kernel).__name__}")


def kernel_from_dict(d: dict) -> Kernel:
    if d["type"] == "neural":
        k = NeuralKernel.initialize(d["d_in"], d["d_latent"], seed=0)
    elif d["type"] == "ard":
        k = ArdKernel(lengthscales=0.5, ndim=d["ndim"])
    else:
        raise ValueError(f"unknown kernel type {d['type']!r}")
    k.theta = np.asarray(d["theta"])
    return k


def gp_to_dict(model: GpModel) -> dict:
    # raw log parameters round-trip bit-exactly; derived values need not
    return {
        "x": model.x.numpy().tolist(),
        "y": model.y_raw.tolist(),
        "kernel": kernel_to_dict(model.kernel),
        "log_noise": float(model.raw_log_noise.detach()),
        "standardize": model.standardize,
    }


def gp_from_dict(d: dict) -> GpModel:
    m = GpModel(np.asarray(d["x"]), np.asarray(d["y"]),
                kernel_from_dict(d["kernel"]),
                standardize=d["standardize"])
    with torch.no_grad():
        m.raw_log_noise.copy_(torch.tensor(d["log_noise"], dtype=DTYPE))
    m._refresh_cache()
    return m


def save_source(path: str, models: list[GpModel], metric_names: list[str],
                problem_name: str = "") -> None:
    """Persist per-metric source GPs for reuse across transfer runs."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "source",
        "problem": problem_name,
        "metric_names": list(metric_names),
        "input_dim": int(models[0].x.shape[1]),
        "models": [gp_to_dict(m) for m in models],
    }
    _atomic_write_json(path, payload)


def load_source(path: str) -> tuple[list[GpModel], list[str], str]:
    with open(path) as fh:
        payload = json.load(fh)
    _check_version(payload, "source")
    models = [gp_from_dict(d) for d in payload["models"]]
    return models, payload["metric_names"], payload.get("problem", "")


def transfer_to_dict(model: TransferGp) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "kind": "transfer-model",
        "target_dim": model.target_dim,
        "n_target_metrics": model.n_target_metrics,
        "log_noise_t": float(model.raw_log_noise_t.detach()),
        "standardize_targets": model.standardize_targets,
        "t_mean": model.t_mean.tolist(),
        "t_scale": model.t_scale.tolist(),
        "encoder": model.encoder.to_dict(),
        "decoder": model.decoder.to_dict(),
        "source_metric_names": model.source_metric_names,
        "source_models": [gp_to_dict(m) for m in model.source_models],
        "x_t": model.x_t.tolist(),
        "y_t": model.y_t.tolist(),
    }


def transfer_from_dict(payload: dict) -> TransferGp:
    _check_version(payload, "transfer-model")
    source = [gp_from_dict(d) for d in payload["source_models"]]
    model = TransferGp(
        source, payload["target_dim"], payload["n_target_metrics"],
        encoder=ShallowNet.from_dict(payload["encoder"]),
        decoder=ShallowNet.from_dict(payload["decoder"]),
        standardize_targets=payload["standardize_targets"],
        source_metric_names=payload["source_metric_names"],
    )
    with torch.no_grad():
        model.raw_log_noise_t.copy_(torch.tensor(payload["log_noise_t"], dtype=DTYPE))
    model.t_mean = np.asarray(payload["t_mean"])
    model.t_scale = np.asarray(payload["t_scale"])
    x_t = np.asarray(payload["x_t"]).reshape(-1, payload["target_dim"])
    y_t = np.asarray(payload["y_t"]).reshape(-1, payload["n_target_metrics"])
    model.x_t, model.y_t = x_t, y_t
    return model


def save_transfer_model(path: str, model: TransferGp) -> None:
    _atomic_write_json(path, transfer_to_dict(model))


def load_transfer_model(path: str) -> TransferGp:
    with open(path) as fh:
        payload = json.load(fh)
    return transfer_from_dict(payload)


def _check_version(payload: dict, kind: str) -> None:
    if payload.get("kind") != kind:
        raise ValueError(f"checkpoint kind {payload.get('kind')!r}, expected {kind!r}")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')!r}")


def _atomic_write_json(path: str, payload: dict) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)
