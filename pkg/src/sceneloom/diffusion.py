"""Noise schedule, DDIM primitives, analytic mixture backend, guided composition.

Conventions: alpha_cum[t] is the cumulative product of (1 - beta_s) up to
step t, with alpha_cum[0] = 1 at the virtual step 0. Images are channels-first
float arrays; latent states are unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .guidance import GuidanceSpec, ShapeMismatch, as_mask_channels, guidance_loss_and_grad


class BadTimestepOrder(ValueError):
    """ddim_step requires t_prev < t."""


class NonFiniteState(RuntimeError):
    """Sampler state left the finite range."""

    def __init__(self, message: str, timestep: int | None = None):
        super().__init__(message)
        self.timestep = timestep


@dataclass(frozen=True)
class NoiseSchedule:
    """beta_t and cumulative alpha_t tables plus strided few-step maps."""

    betas: np.ndarray       # (T,), betas[i] = beta_{i+1}
    alphas_cum: np.ndarray  # (T+1,), alphas_cum[0] = 1.0

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T)
        alphas_cum = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(betas=betas, alphas_cum=alphas_cum)

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_cum(self, t: int) -> float:
        return float(self.alphas_cum[t])

    def strided_steps(self, n_steps: int) -> np.ndarray:
        """Ascending timestep subsequence 0 = t_0 < ... < t_n = T.

        Evenly spaced over [0, T] and rounded; both endpoints preserved.
        """
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        ts = np.unique(np.round(np.linspace(0, self.T, n_steps + 1)).astype(int))
        return ts


def _check_shapes(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise ShapeMismatch(f"shape disagreement: {sorted(shapes)}")


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray,
                  schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(a_t) * x0 + sqrt(1 - a_t) * eps."""
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    _check_shapes(x0, eps)
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [0, {schedule.T}]")
    a = schedule.alpha_cum(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def predict_x0(x_t: np.ndarray, t: int, eps_hat: np.ndarray,
               schedule: NoiseSchedule) -> np.ndarray:
    """Clean-image estimate (x_t - sqrt(1 - a_t) * eps_hat) / sqrt(a_t)."""
    x_t = np.asarray(x_t, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    _check_shapes(x_t, eps_hat)
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [1, {schedule.T}]")
    a = schedule.alpha_cum(t)
    return (x_t - np.sqrt(1.0 - a) * eps_hat) / np.sqrt(a)


def ddim_step(x_t: np.ndarray, t: int, t_prev: int, eps_hat: np.ndarray,
              schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM update from level t to t_prev (zero stochasticity)."""
    if not 0 <= t_prev < t:
        raise BadTimestepOrder(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    a_prev = schedule.alpha_cum(t_prev)
    x0_hat = predict_x0(x_t, t, eps_hat, schedule)
    return np.sqrt(a_prev) * x0_hat + np.sqrt(1.0 - a_prev) * eps_hat


class GaussianMixtureBackend:
    """Analytic noise predictor for a Gaussian-mixture image prior.

    Components are (weight, mean image, scalar sigma). The predicted noise is
    the exact posterior-mean noise under the forward corruption:
    eps_hat = (x_t - sqrt(a_t) * E[x0 | x_t]) / sqrt(1 - a_t), with the
    posterior mean a responsibility-weighted blend of per-component posterior
    means. Accepts batched states (leading axes before the image axes).
    """

    def __init__(self, components: list[tuple[float, np.ndarray, float]],
                 schedule: NoiseSchedule):
        if not components:
            raise ValueError("mixture needs at least one component")
        weights = np.array([w for w, _, _ in components], dtype=float)
        if np.any(weights <= 0):
            raise ValueError("component weights must be positive")
        self.weights = weights / weights.sum()
        self.means = np.stack([np.asarray(m, dtype=float) for _, m, _ in components])
        self.sigmas = np.array([s for _, _, s in components], dtype=float)
        if np.any(self.sigmas < 0):
            raise ValueError("component sigmas must be >= 0")
        self.schedule = schedule
        self.image_shape = self.means.shape[1:]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def posterior_x0(self, x_t: np.ndarray, t: int) -> np.ndarray:
        """E[x0 | x_t] under the mixture prior at corruption level t."""
        x = np.asarray(x_t, dtype=float)
        if x.shape[-3:] != self.image_shape:
            raise ShapeMismatch(
                f"state shape {x.shape} does not end in {self.image_shape}")
        a = self.schedule.alpha_cum(t)
        s = np.sqrt(a)
        # marginal variance of x_t per component: a*sigma^2 + (1 - a)
        var = a * self.sigmas ** 2 + (1.0 - a)                      # (K,)
        batch = x.shape[:-3]
        xb = x.reshape(batch + (1,) + self.image_shape)             # (..., 1, C,H,W)
        diff = xb - s * self.means                                  # (..., K, C,H,W)
        sq = np.sum(diff * diff, axis=(-1, -2, -3))                 # (..., K)
        n = int(np.prod(self.image_shape))
        logp = np.log(self.weights) - 0.5 * sq / var - 0.5 * n * np.log(var)
        logp = logp - logp.max(axis=-1, keepdims=True)
        resp = np.exp(logp)
        resp = resp / resp.sum(axis=-1, keepdims=True)              # (..., K)
        shrink = s * self.sigmas ** 2 / var                         # (K,)
        post = self.means + shrink[:, None, None, None] * diff      # (..., K, C,H,W)
        return np.sum(resp[..., None, None, None] * post, axis=-4)

    def predict_noise(self, x_t: np.ndarray, t: int) -> np.ndarray:
        a = self.schedule.alpha_cum(t)
        if t == 0:
            raise ValueError("predict_noise undefined at the virtual step 0")
        e_x0 = self.posterior_x0(x_t, t)
        return (np.asarray(x_t, dtype=float) - np.sqrt(a) * e_x0) / np.sqrt(1.0 - a)

    def sample_x0(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw clean images from the mixture prior."""
        n = 1 if size is None else size
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        out = self.means[comp] + self.sigmas[comp, None, None, None] \
            * rng.normal(size=(n,) + self.image_shape)
        return out[0] if size is None else out


def ddim_sample(backend, schedule: NoiseSchedule, n_steps: int,
                x_T: np.ndarray) -> np.ndarray:
    """Plain deterministic DDIM from a terminal state down to x_0."""
    ts = schedule.strided_steps(n_steps)
    x = np.asarray(x_T, dtype=float)
    for i in range(len(ts) - 1, 0, -1):
        t, t_prev = int(ts[i]), int(ts[i - 1])
        eps_hat = backend.predict_noise(x, t)
        x = ddim_step(x, t, t_prev, eps_hat, schedule)
    return x


def guided_compose(x_init: np.ndarray, mask, spec: GuidanceSpec, backend,
                   schedule: NoiseSchedule, *, steps: int = 50,
                   n_inner: int = 1, seed: int = 0, oracle=None,
                   perceptual=None) -> np.ndarray:
    """Masked guided composition: sculpt the masked region, keep the rest.

    Starts from the forward-noised source, then per (descending) timestep:
    estimate the clean image, add the guidance-loss gradient to the predicted
    noise scaled by sqrt(1 - a_t), take the DDIM foreground step, and blend
    with the source forward-noised to the destination level,
    x_{t-1} = m * x_fg + (1 - m) * noised source. Blending at the destination
    level makes the final background equal x_init exactly. The gradient is
    added (descent on the loss); subtracting it walks the loss uphill.

    With oracle None guidance is disabled and the result is the plain DDIM
    reconstruction of x_init restricted to the mask.
    """
    x_init = np.asarray(x_init, dtype=float)
    m = as_mask_channels(mask, x_init.shape)
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    spec = replace(spec, mask=mask)
    rng = np.random.default_rng(seed)
    ts = schedule.strided_steps(steps)
    t_max = int(ts[-1])
    x = forward_noise(x_init, t_max, rng.normal(size=x_init.shape), schedule)
    for i in range(len(ts) - 1, 0, -1):
        t, t_prev = int(ts[i]), int(ts[i - 1])
        x_src = x
        for _ in range(n_inner):
            eps = backend.predict_noise(x_src, t)
            if oracle is not None:
                x0_hat = predict_x0(x_src, t, eps, schedule)
                _, grad = guidance_loss_and_grad(x0_hat, spec, oracle, perceptual)
                eps_hat = eps + np.sqrt(1.0 - schedule.alpha_cum(t)) * grad
            else:
                eps_hat = eps
            x_fg = ddim_step(x_src, t, t_prev, eps_hat, schedule)
            bg = forward_noise(x_init, t_prev, rng.normal(size=x_init.shape),
                               schedule)
            x = m * x_fg + (1.0 - m) * bg
            if not np.all(np.isfinite(x)):
                raise NonFiniteState(f"non-finite state at t={t}", timestep=t)
    return x
