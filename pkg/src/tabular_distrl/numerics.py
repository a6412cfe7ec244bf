"""Special functions, samplers and likelihoods shared by the agents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Bernoulli numbers B_2 .. B_16 for the digamma asymptotic series.
_BERNOULLI = np.array(
    [1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6, -3617 / 510]
)
_ASYMPTOTIC_START = 6.0


@dataclass(frozen=True)
class AldParams:
    mu: float
    sigma: float
    tau: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")


@dataclass(frozen=True)
class InvGammaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("inverse-gamma alpha and beta must be positive")


def check_loss(u, tau):
    """Quantile-regression loss (|u| + (2 tau - 1) u) / 2."""
    u = np.asarray(u, dtype=float)
    return 0.5 * (np.abs(u) + (2.0 * np.asarray(tau) - 1.0) * u)


def check_loss_grad(u, tau):
    """Subgradient of ``check_loss`` in ``u``, taking sign(0) = +1."""
    u = np.asarray(u, dtype=float)
    return 0.5 * (np.where(u >= 0, 1.0, -1.0) + 2.0 * np.asarray(tau) - 1.0)


def _shift_to_asymptotic(x: np.ndarray, power: int) -> tuple[np.ndarray, np.ndarray]:
    acc = np.zeros_like(x)
    x = x.copy()
    while True:
        small = x < _ASYMPTOTIC_START
        if not small.any():
            return x, acc
        acc[small] += x[small] ** -power
        x[small] += 1.0


def digamma(x):
    """psi(x) for x > 0: upward recurrence to x >= 6, then the asymptotic series."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("digamma is only defined here for x > 0")
    z, shift = _shift_to_asymptotic(np.atleast_1d(arr), 1)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for k in range(len(_BERNOULLI) - 1, -1, -1):
        series = series * inv2 + _BERNOULLI[k] / (2 * (k + 1))
    out = np.log(z) - 0.5 / z - series * inv2 - shift
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def trigamma(x):
    """psi'(x) for x > 0; only needed for gradients of the DAIF objective."""
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise ValueError("trigamma is only defined here for x > 0")
    z, shift = _shift_to_asymptotic(np.atleast_1d(arr), 2)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for k in range(len(_BERNOULLI) - 1, -1, -1):
        series = series * inv2 + _BERNOULLI[k]
    out = 1.0 / z + 0.5 * inv2 + series * inv2 / z + shift
    return out.reshape(arr.shape) if arr.ndim else float(out[0])


def ald_logpdf(g, p: AldParams):
    return np.log(p.tau * (1 - p.tau)) - np.log(p.sigma) - check_loss(g - p.mu, p.tau) / p.sigma


def expected_ald_loglik(g, mu, ig: InvGammaParams | None = None, tau=0.5, *, alpha=None, beta=None):
    """ALD log-likelihood averaged over sigma ~ InvGamma(alpha, beta), in closed form.

    Uses E[log sigma] = log beta - psi(alpha) and E[1/sigma] = alpha / beta.
    Accepts either an ``InvGammaParams`` or array-valued ``alpha``/``beta``.
    """
    if ig is not None:
        alpha, beta = ig.alpha, ig.beta
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    u = np.asarray(g, dtype=float) - np.asarray(mu, dtype=float)
    return (
        np.log(tau * (1 - tau))
        - np.log(beta)
        + digamma(alpha)
        - alpha / (2 * beta) * (np.abs(u) + (2 * tau - 1) * u)
    )


def sample_gamma(shape, rng: np.random.Generator, size=None):
    """Gamma(shape, 1) draws by Marsaglia-Tsang; shape < 1 is boosted via Gamma(shape + 1).

    ``shape`` may be an array, in which case one draw per entry is returned.
    Entries with shape exactly 1 are drawn as Exponential(1) directly.
    """
    a = np.asarray(shape, dtype=float)
    if size is not None:
        a = np.broadcast_to(a, size)
    if np.any(~(a > 0)):
        raise ValueError("gamma shape must be positive")
    flat = a.ravel()
    unit = flat == 1.0
    if unit.all():
        out = rng.standard_exponential(flat.size).reshape(a.shape)
        return float(out) if out.ndim == 0 else out
    if unit.any():
        out = np.empty(flat.shape)
        out[unit] = rng.standard_exponential(int(unit.sum()))
        out[~unit] = sample_gamma(flat[~unit], rng)
        out = out.reshape(a.shape)
        return float(out) if out.ndim == 0 else out
    boosted = flat < 1
    d = np.where(boosted, flat + 1, flat) - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(flat)
    pending = None
    while True:
        dp, cp = (d, c) if pending is None else (d[pending], c[pending])
        x = rng.standard_normal(dp.size)
        u = rng.random(dp.size)
        v = 1.0 + cp * x
        v = v * v * v
        ok = v > 0
        with np.errstate(divide="ignore"):
            ok &= np.log(u) < 0.5 * x * x + dp - dp * v + dp * np.log(np.where(ok, v, 1.0))
        if pending is None:
            out[ok] = (dp * v)[ok]
            pending = np.flatnonzero(~ok)
        else:
            out[pending[ok]] = dp[ok] * v[ok]
            pending = pending[~ok]
        if not pending.size:
            break
    if boosted.any():
        idx = np.flatnonzero(boosted)
        out[idx] *= rng.random(idx.size) ** (1.0 / flat[idx])
    out = out.reshape(a.shape)
    return float(out) if out.ndim == 0 else out


def sample_dirichlet(concentration, rng: np.random.Generator):
    """Dirichlet draw(s); the last axis of ``concentration`` indexes categories."""
    conc = np.asarray(concentration, dtype=float)
    if np.any(~(conc > 0)):
        raise ValueError("Dirichlet concentration entries must be positive")
    g = sample_gamma(conc, rng)
    g = np.asarray(g)
    total = g.sum(axis=-1, keepdims=True)
    # Tiny shapes can underflow every draw in a row; fall back to the mean.
    dead = total[..., 0] <= 0
    if np.any(dead):
        g[dead] = conc[dead]
        total = g.sum(axis=-1, keepdims=True)
    return g / total
