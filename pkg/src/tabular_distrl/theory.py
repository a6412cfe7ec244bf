"""Executable contraction certificates on finite MDPs.

Return distributions are sets of equally weighted atoms obtained by Monte-Carlo
rollouts. Whenever two distributions are compared, both are generated from the
same uniform draws (common random numbers), so identical kernels give
identical atoms and the remaining sampling error is what the Monte-Carlo
slack has to absorb.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .envs import LatentRiverSwim, LatentRiverSwimSpec, TabularMDP, riverswim_kernel
from .numerics import sample_dirichlet

DEFAULT_TRUNCATION_TOL = 1e-6
DEFAULT_SLACK_COEF = 0.05
LEMMA2_TOL = 1e-9


@dataclass(frozen=True)
class EmpiricalReturnDist:
    atoms: np.ndarray

    def __post_init__(self):
        atoms = np.sort(np.asarray(self.atoms, dtype=float).ravel())
        if atoms.size == 0 or not np.all(np.isfinite(atoms)):
            raise ValueError("return distribution needs at least one finite atom")
        object.__setattr__(self, "atoms", atoms)

    @property
    def m(self) -> int:
        return self.atoms.size

    def mean(self) -> float:
        return float(self.atoms.mean())


def truncation_horizon(gamma: float, r_max: float, tol: float = DEFAULT_TRUNCATION_TOL) -> int:
    """Smallest T with gamma^T * r_max / (1 - gamma) <= tol."""
    if gamma == 0 or r_max <= 0:
        return 0
    return max(0, math.ceil(math.log(tol * (1 - gamma) / r_max) / math.log(gamma)))


def _sample_next(cum: np.ndarray, states: np.ndarray, actions: np.ndarray, u: np.ndarray) -> np.ndarray:
    rows = cum[states, actions]
    nxt = (rows <= u[..., None]).sum(axis=-1)
    return np.minimum(nxt, cum.shape[-1] - 1)


def expected_reward(mdp: TabularMDP) -> np.ndarray:
    """R(x, a) = sum_x' P*(x' | x, a) r(x'): the mean reward paid on arrival, shape (S, A)."""
    return mdp.transitions @ mdp.reward


def rollout_returns(
    kernel: np.ndarray,
    reward: np.ndarray,
    gamma: float,
    pi: np.ndarray,
    x0,
    a0,
    uniforms: np.ndarray,
) -> np.ndarray:
    """Truncated returns sum_{t=0..T} gamma^t R(x_t, a_t) with x_t ~ ``kernel``, a_t = pi(x_t) for t >= 1.

    ``reward`` is the (S, A) reward table.

    ``x0`` and ``a0`` may be arrays of start pairs (shape (P,)); ``uniforms`` has
    shape (T, m) and drives the inverse-CDF successor draws, shared by all pairs.
    Returns an array of shape (P, m) (or (m,) for scalar starts).
    """
    pi = np.asarray(pi, dtype=int)
    cum = np.cumsum(kernel, axis=-1)
    x0 = np.atleast_1d(np.asarray(x0, dtype=int))
    a0 = np.atleast_1d(np.asarray(a0, dtype=int))
    m = uniforms.shape[1]
    states = np.repeat(x0[:, None], m, axis=1)
    actions = np.repeat(a0[:, None], m, axis=1)
    g = np.repeat(reward[x0, a0][:, None], m, axis=1).astype(float)
    disc = 1.0
    for t in range(uniforms.shape[0]):
        states = _sample_next(cum, states, actions, np.broadcast_to(uniforms[t], states.shape))
        actions = pi[states]
        disc *= gamma
        g += disc * reward[states, actions]
    return g if g.shape[0] > 1 else g[0]


def return_distribution(
    mdp: TabularMDP,
    pi,
    x0: int,
    a0: int,
    horizon: int | None = None,
    m: int = 1000,
    rng: np.random.Generator | None = None,
    kernel: np.ndarray | None = None,
) -> EmpiricalReturnDist:
    """Monte-Carlo return distribution from (x0, a0), following ``pi`` afterwards.

    Rewards always come from ``mdp``; ``kernel`` only replaces the dynamics.
    """
    rng = np.random.default_rng() if rng is None else rng
    R = expected_reward(mdp)
    T = truncation_horizon(mdp.gamma, float(np.max(np.abs(R)))) if horizon is None else horizon
    P = mdp.transitions if kernel is None else kernel
    return EmpiricalReturnDist(rollout_returns(P, R, mdp.gamma, pi, x0, a0, rng.random((T, m))))


def all_return_distributions(mdp: TabularMDP, pi, uniforms: np.ndarray, kernel: np.ndarray | None = None):
    """Return distributions for every (x, a), all driven by the same uniforms."""
    S, A = mdp.num_states, mdp.num_actions
    xs, as_ = np.divmod(np.arange(S * A), A)
    P = mdp.transitions if kernel is None else kernel
    g = rollout_returns(P, expected_reward(mdp), mdp.gamma, pi, xs, as_, uniforms).reshape(S * A, -1)
    return {(int(x), int(a)): EmpiricalReturnDist(row) for x, a, row in zip(xs, as_, g)}


def wasserstein_weighted(xs, wx, ys, wy, p: float = 1.0) -> float:
    """Exact p-Wasserstein distance between two weighted point sets on the line.

    Integrates |F^-1(u) - G^-1(u)|^p over the merged quantile breakpoints.
    """
    xs, wx, ys, wy = (np.asarray(v, dtype=float) for v in (xs, wx, ys, wy))
    ox, oy = np.argsort(xs, kind="stable"), np.argsort(ys, kind="stable")
    xs, wx, ys, wy = xs[ox], wx[ox] / wx.sum(), ys[oy], wy[oy] / wy.sum()
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    u = np.union1d(cx, cy)
    lo = np.concatenate([[0.0], u[:-1]])
    mid = 0.5 * (lo + u)
    qx = xs[np.minimum(np.searchsorted(cx, mid, side="left"), xs.size - 1)]
    qy = ys[np.minimum(np.searchsorted(cy, mid, side="left"), ys.size - 1)]
    total = float(np.sum((u - lo) * np.abs(qx - qy) ** p))
    return total ** (1.0 / p)


def wasserstein_p(a: EmpiricalReturnDist, b: EmpiricalReturnDist, p: float = 1.0) -> float:
    """W_p between atom sets; the sorted coupling is optimal in one dimension."""
    if a.m == b.m:
        return float(np.mean(np.abs(a.atoms - b.atoms) ** p) ** (1.0 / p))
    return wasserstein_weighted(a.atoms, np.ones(a.m), b.atoms, np.ones(b.m), p)


def backup_draws(mdp_star: TabularMDP, x: int, a: int, m: int, rng: np.random.Generator):
    """Successor states and atom-position uniforms for one backup of (x, a)."""
    succ = rng.choice(mdp_star.num_states, size=m, p=mdp_star.transitions[x, a])
    return succ, rng.random(m)


def bellman_backup(
    eta: dict,
    mdp_star: TabularMDP,
    pi,
    x: int,
    a: int,
    rng: np.random.Generator | None = None,
    m: int | None = None,
    draws=None,
) -> EmpiricalReturnDist:
    """Sampled distributional backup R(x, a) + gamma * Z(x', pi(x')), x' ~ P*(.|x, a).

    ``draws`` (successors, uniforms) from ``backup_draws`` can be shared across
    calls to couple two backups.
    """
    if draws is None:
        m = m if m is not None else eta[next(iter(eta))].m
        draws = backup_draws(mdp_star, x, a, m, rng if rng is not None else np.random.default_rng())
    succ, u = draws
    pi = np.asarray(pi, dtype=int)
    out = np.empty(len(succ))
    for s in np.unique(succ):
        sel = succ == s
        atoms = eta[(int(s), int(pi[s]))].atoms
        idx = np.minimum((u[sel] * atoms.size).astype(int), atoms.size - 1)
        out[sel] = atoms[idx]
    r = float(mdp_star.transitions[x, a] @ mdp_star.reward)
    return EmpiricalReturnDist(r + mdp_star.gamma * out)


def mc_slack(r_max: float, gamma: float, m: int, coef: float = DEFAULT_SLACK_COEF) -> float:
    return coef * r_max / (1 - gamma) / math.sqrt(m)


@dataclass
class Certificate:
    """One machine-checked inequality ``lhs <= factor * rhs + slack``."""

    name: str
    lhs: float
    rhs: float
    factor: float
    slack: float
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def bound(self) -> float:
        return self.factor * self.rhs

    @property
    def margin(self) -> float:
        return self.bound + self.slack - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.margin >= 0)

    def to_record(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "factor": self.factor,
            "bound": self.bound,
            "slack": self.slack,
            "margin": self.margin,
            "pass": self.passed,
            **self.details,
        }


def _contraction_certificate(
    name: str,
    mdp_star: TabularMDP,
    before: tuple[np.ndarray, np.ndarray],
    after: tuple[np.ndarray, np.ndarray],
    pi,
    p: float,
    m: int,
    factor_extra: float,
    rng: np.random.Generator,
    slack_coef: float,
    horizon: int | None,
    extra: dict | None = None,
    coupled: bool = True,
) -> Certificate:
    gamma = mdp_star.gamma
    r_max = float(np.max(np.abs(expected_reward(mdp_star))))
    T = truncation_horizon(gamma, r_max) if horizon is None else horizon
    u1 = rng.random((T, m))
    u2 = u1 if coupled else rng.random((T, m))
    eta, eta_bar = (all_return_distributions(mdp_star, pi, u, k) for u, k in zip((u1, u2), before))
    if after is before:
        zeta, zeta_bar = eta, eta_bar
    else:
        zeta, zeta_bar = (all_return_distributions(mdp_star, pi, u, k) for u, k in zip((u1, u2), after))
    rhs_pairs = {xa: wasserstein_p(eta[xa], eta_bar[xa], p) for xa in eta}
    rhs = max(rhs_pairs.values())
    lhs_pairs = {}
    for x, a in zeta:
        draws = backup_draws(mdp_star, x, a, m, rng)
        t1 = bellman_backup(zeta, mdp_star, pi, x, a, draws=draws)
        if not coupled:
            draws = backup_draws(mdp_star, x, a, m, rng)
        t2 = bellman_backup(zeta_bar, mdp_star, pi, x, a, draws=draws)
        lhs_pairs[(x, a)] = wasserstein_p(t1, t2, p)
    lhs = max(lhs_pairs.values())
    factor = gamma * factor_extra
    slack = mc_slack(r_max, gamma, m, slack_coef)
    limit = factor * rhs + slack
    details = {
        "pair_margins": {f"{x},{a}": limit - v for (x, a), v in lhs_pairs.items()},
        "offending": [f"{x},{a}" for (x, a), v in lhs_pairs.items() if v > limit],
        "gamma": gamma,
        "p": p,
        "m": m,
        "horizon": T,
        "coupled": coupled,
    }
    details.update(extra or {})
    return Certificate(name, lhs, rhs, factor, slack, details)


def check_lemma1(
    mdp_star: TabularMDP,
    P_pi: np.ndarray,
    Pbar_pi: np.ndarray,
    pi,
    p: float = 1.0,
    gamma: float | None = None,
    m: int = 4000,
    rng: np.random.Generator | None = None,
    slack_coef: float = DEFAULT_SLACK_COEF,
    horizon: int | None = None,
    name: str = "lemma1",
    coupled: bool = True,
) -> Certificate:
    """Backup with P* contracts the max-W_p distance between two return-distribution families by gamma."""
    rng = np.random.default_rng() if rng is None else rng
    star = mdp_star if gamma is None else TabularMDP(mdp_star.transitions, mdp_star.reward, gamma)
    kernels = (np.asarray(P_pi, float), np.asarray(Pbar_pi, float))
    return _contraction_certificate(
        name, star, kernels, kernels, pi, p, m, 1.0, rng, slack_coef, horizon, coupled=coupled
    )


# --------------------------------------------------------------------------
# Lipschitz kernels


@dataclass(frozen=True)
class FiniteKernel:
    """Markov kernel from real points ``points`` to distributions on ``targets``."""

    points: np.ndarray
    targets: np.ndarray
    rows: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        rows = np.asarray(self.rows, dtype=float)
        tg = np.asarray(self.targets, dtype=float)
        if np.any(np.diff(pts) <= 0):
            raise ValueError("kernel points must be strictly increasing (no duplicates)")
        if rows.shape != (pts.size, tg.size):
            raise ValueError(f"rows must have shape {(pts.size, tg.size)}, got {rows.shape}")
        if np.any(rows < 0) or np.max(np.abs(rows.sum(axis=1) - 1)) > 1e-9:
            raise ValueError("kernel rows must be probability vectors")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "targets", tg)
        object.__setattr__(self, "rows", rows)

    def index_of(self, point: float) -> int:
        idx = int(np.argmin(np.abs(self.points - point)))
        if not math.isclose(self.points[idx], point, rel_tol=0, abs_tol=1e-12):
            raise ValueError(f"{point} is not a point of this kernel")
        return idx


def lipschitz_constant(k: FiniteKernel, p: float = 1.0) -> float:
    """max_{i<j} W_p(K(s_i), K(s_j)) / |s_i - s_j|."""
    if k.points.size < 2:
        raise ValueError("need at least two points")
    best = 0.0
    for i in range(k.points.size):
        for j in range(i + 1, k.points.size):
            w = wasserstein_weighted(k.targets, k.rows[i], k.targets, k.rows[j], p)
            best = max(best, w / (k.points[j] - k.points[i]))
    return best


def map_lipschitz(coords, values) -> float:
    """Largest pairwise slope |f(x_i) - f(x_j)| / |x_i - x_j| of a map on finitely many points."""
    coords = np.asarray(coords, dtype=float)
    values = np.asarray(values, dtype=float)
    dx = np.abs(coords[:, None] - coords[None, :])
    if np.any(dx[~np.eye(coords.size, dtype=bool)] == 0):
        raise ValueError("coordinates must be distinct")
    dv = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(dx, 1.0)
    return float(np.max(dv / dx))


def composite_kernel(domain, f_values, k: FiniteKernel) -> FiniteKernel:
    """(K F)(x) = K(F(x)) on the finite domain."""
    order = np.argsort(np.asarray(domain, dtype=float))
    domain = np.asarray(domain, dtype=float)[order]
    f_values = np.asarray(f_values, dtype=float)[order]
    rows = np.stack([k.rows[k.index_of(v)] for v in f_values])
    return FiniteKernel(domain, k.targets, rows)


def check_lemma2(domain, f_values, k: FiniteKernel, p: float = 1.0, tol: float = LEMMA2_TOL) -> Certificate:
    """Lip(K F) <= Lip(K) * Lip(F), exactly up to ``tol``."""
    lip_f = map_lipschitz(domain, f_values)
    lip_k = lipschitz_constant(k, p)
    lip_kf = lipschitz_constant(composite_kernel(domain, f_values, k), p)
    return Certificate("lemma2", lip_kf, lip_k, lip_f, tol, {"lip_k": lip_k, "lip_f": lip_f, "p": p})


# --------------------------------------------------------------------------
# Encoder / decoder transformed kernels


@dataclass(frozen=True)
class EncoderDecoderPair:
    """Encoder S: state -> latent coordinate, decoder P_D: latent -> states.

    ``state_coords`` embeds states on the real line (used for L_E and as the
    decoder's target coordinates).
    """

    state_coords: np.ndarray
    encoder: np.ndarray
    decoder: FiniteKernel

    def __post_init__(self):
        sc = np.asarray(self.state_coords, dtype=float)
        if np.unique(sc).size != sc.size:
            raise ValueError("state coordinates must be distinct")
        if self.decoder.rows.shape[1] != sc.size:
            raise ValueError("decoder must map onto the state set")
        object.__setattr__(self, "state_coords", sc)
        object.__setattr__(self, "encoder", np.asarray(self.encoder, dtype=float))

    def encoder_lipschitz(self) -> float:
        return map_lipschitz(self.state_coords, self.encoder)

    def decoder_lipschitz(self, p: float = 1.0) -> float:
        return lipschitz_constant(self.decoder, p)

    def reencode_matrix(self) -> np.ndarray:
        """Row x' of the result is P_D(. | S(x'))."""
        return np.stack([self.decoder.rows[self.decoder.index_of(v)] for v in self.encoder])

    def transform(self, kernel: np.ndarray) -> np.ndarray:
        """Kernel of (P_D S) P: draw x' ~ P, encode, then decode."""
        return np.asarray(kernel, dtype=float) @ self.reencode_matrix()


def identity_pair(num_states: int) -> EncoderDecoderPair:
    coords = np.arange(num_states, dtype=float)
    return EncoderDecoderPair(coords, coords, FiniteKernel(coords, coords, np.eye(num_states)))


def constant_decoder_pair(num_states: int, target_state: int = 0) -> EncoderDecoderPair:
    coords = np.arange(num_states, dtype=float)
    rows = np.zeros((num_states, num_states))
    rows[:, target_state] = 1.0
    return EncoderDecoderPair(coords, coords, FiniteKernel(coords, coords, rows))


def latent_riverswim_pair(env: LatentRiverSwim, tie_break: float | None = None) -> EncoderDecoderPair:
    """Floor-of-affine encoder and uniform-preimage decoder of Latent RiverSwim.

    Observation (i, j) sits at coordinate alpha*i + (1-alpha)*j, nudged by
    ``tie_break * (i - j)`` so that distinct cells get distinct coordinates.
    """
    spec = env.spec
    n, alpha = spec.n, spec.mix_alpha
    eps = 1e-3 / n if tie_break is None else tie_break
    coords = np.empty(n * n)
    for x in range(n * n):
        i, j = env.obs_of(x)
        coords[x] = alpha * i + (1 - alpha) * j + eps * (i - j)
    latents = np.arange(1, n + 1, dtype=float)
    rows = np.zeros((n, n * n))
    for k, cells in env.preimages.items():
        for obs in cells:
            rows[k - 1, env.state_of(obs)] = 1.0 / len(cells)
    return EncoderDecoderPair(coords, env.latent_of_state.astype(float), FiniteKernel(latents, coords, rows))


def check_theorem1(
    mdp_star: TabularMDP,
    P_pi: np.ndarray,
    Pbar_pi: np.ndarray,
    pair: EncoderDecoderPair,
    pi,
    p: float = 1.0,
    gamma: float | None = None,
    m: int = 4000,
    rng: np.random.Generator | None = None,
    slack_coef: float = DEFAULT_SLACK_COEF,
    horizon: int | None = None,
    name: str = "theorem1",
    coupled: bool = True,
) -> Certificate:
    """Backups of auto-encoded kernels contract by gamma * L_E * L_D relative to the raw kernels."""
    rng = np.random.default_rng() if rng is None else rng
    star = mdp_star if gamma is None else TabularMDP(mdp_star.transitions, mdp_star.reward, gamma)
    l_e = pair.encoder_lipschitz()
    l_d = pair.decoder_lipschitz(p)
    before = (np.asarray(P_pi, float), np.asarray(Pbar_pi, float))
    after = (pair.transform(before[0]), pair.transform(before[1]))
    return _contraction_certificate(
        name, star, before, after, pi, p, m, l_e * l_d, rng, slack_coef, horizon, {"L_E": l_e, "L_D": l_d}, coupled
    )


# --------------------------------------------------------------------------
# Instance generators and suites


def random_tabular_mdp(num_states: int, num_actions: int, gamma: float, rng: np.random.Generator) -> TabularMDP:
    """Dirichlet(1, ..., 1) rows and rewards uniform in [0, 1]."""
    P = sample_dirichlet(np.ones((num_states, num_actions, num_states)), rng)
    return TabularMDP(P, rng.random(num_states), gamma)


def random_kernel(num_states: int, num_actions: int, rng: np.random.Generator) -> np.ndarray:
    return sample_dirichlet(np.ones((num_states, num_actions, num_states)), rng)


def _lemma1_instance(args) -> Certificate:
    i, ss, num_states, num_actions, gamma, p, m, slack_coef, coupled = args
    rng = np.random.default_rng(ss)
    star = random_tabular_mdp(num_states, num_actions, gamma, rng)
    P, Pbar = random_kernel(num_states, num_actions, rng), random_kernel(num_states, num_actions, rng)
    pi = rng.integers(num_actions, size=num_states)
    return check_lemma1(star, P, Pbar, pi, p, m=m, rng=rng, slack_coef=slack_coef, name=f"lemma1[{i}]",
                        coupled=coupled)


def lemma1_suite(
    count: int = 100,
    seed: int = 0,
    num_states: int = 4,
    num_actions: int = 2,
    gamma: float = 0.9,
    p: float = 1.0,
    m: int = 4000,
    slack_coef: float = DEFAULT_SLACK_COEF,
    jobs: int = 1,
    coupled: bool = True,
) -> list[Certificate]:
    """Random (P*, P, P-bar, pi) instances; each owns a spawned seed, so ``jobs`` never changes results."""
    tasks = [
        (i, ss, num_states, num_actions, gamma, p, m, slack_coef, coupled)
        for i, ss in enumerate(np.random.SeedSequence(seed).spawn(count))
    ]
    if jobs <= 1:
        return [_lemma1_instance(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_lemma1_instance, tasks))


def random_lemma2_instance(rng: np.random.Generator, max_points: int = 8):
    n_k = int(rng.integers(2, max_points + 1))
    n_dom = int(rng.integers(2, max_points + 1))
    n_tg = int(rng.integers(1, max_points + 1))
    k_points = np.sort(rng.choice(np.arange(-20, 21), size=n_k, replace=False) + rng.random(n_k) * 0.5)
    targets = rng.normal(0, 3, size=n_tg)
    k = FiniteKernel(k_points, targets, sample_dirichlet(np.ones((n_k, n_tg)), rng))
    domain = np.sort(rng.choice(np.arange(-20, 21), size=n_dom, replace=False) + rng.random(n_dom) * 0.5)
    f_values = k_points[rng.integers(n_k, size=n_dom)]
    return domain, f_values, k


def lemma2_suite(count: int = 50, seed: int = 0, max_points: int = 8, p: float = 1.0, tol: float = LEMMA2_TOL):
    certs = []
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(count)):
        domain, f_values, k = random_lemma2_instance(np.random.default_rng(ss), max_points)
        cert = check_lemma2(domain, f_values, k, p, tol)
        cert.name = f"lemma2[{i}]"
        certs.append(cert)
    return certs


def perturbed_latent_kernels(
    env: LatentRiverSwim, perturbed: tuple[float, float] = (0.35, 0.05)
) -> tuple[np.ndarray, np.ndarray]:
    """Observation-level kernels lifted from the true chain and from a perturbed chain."""
    spec = env.spec
    alt = LatentRiverSwim(LatentRiverSwimSpec(spec.n, perturbed[0], perturbed[1], spec.mix_alpha), env.gamma)
    assert np.allclose(riverswim_kernel(alt.spec.chain).sum(-1), 1)
    return env.as_tabular_mdp().transitions, alt.as_tabular_mdp().transitions


def theorem1_suite(
    seed: int = 0,
    gamma: float = 0.9,
    p: float = 1.0,
    m: int = 4000,
    slack_coef: float = DEFAULT_SLACK_COEF,
    latent_n: int = 4,
    coupled: bool = True,
) -> list[Certificate]:
    """Identity autoencoder, constant decoder, and the Latent RiverSwim encoder/decoder."""
    root = np.random.SeedSequence(seed)
    s_rand, s_id, s_const, s_latent = root.spawn(4)
    rng = np.random.default_rng(s_rand)
    star = random_tabular_mdp(4, 2, gamma, rng)
    P, Pbar = random_kernel(4, 2, rng), random_kernel(4, 2, rng)
    pi = rng.integers(2, size=4)
    certs = [
        check_theorem1(star, P, Pbar, identity_pair(4), pi, p, m=m, rng=np.random.default_rng(s_id),
                       slack_coef=slack_coef, name="theorem1[identity]", coupled=coupled),
        check_theorem1(star, P, Pbar, constant_decoder_pair(4), pi, p, m=m, rng=np.random.default_rng(s_const),
                       slack_coef=slack_coef, name="theorem1[constant_decoder]", coupled=coupled),
    ]
    env = LatentRiverSwim(LatentRiverSwimSpec(latent_n), gamma)
    P_lat, Pbar_lat = perturbed_latent_kernels(env)
    lrng = np.random.default_rng(s_latent)
    pi_lat = lrng.integers(env.num_actions, size=env.num_states)
    certs.append(
        check_theorem1(env.as_tabular_mdp(gamma), P_lat, Pbar_lat, latent_riverswim_pair(env), pi_lat, p, m=m,
                       rng=lrng, slack_coef=slack_coef, name=f"theorem1[latent_riverswim_n{latent_n}]",
                       coupled=coupled)
    )
    return certs


def bellman_iterates(
    mdp: TabularMDP, pi, eta0: dict, sweeps: int, rng: np.random.Generator
) -> tuple[list[dict], list[float]]:
    """Repeated sampled backups of every (x, a); returns iterates and successive max-W_1 gaps."""
    etas, gaps = [eta0], []
    for _ in range(sweeps):
        prev = etas[-1]
        nxt = {xa: bellman_backup(prev, mdp, pi, xa[0], xa[1], rng) for xa in prev}
        gaps.append(max(wasserstein_p(nxt[xa], prev[xa], 1.0) for xa in prev))
        etas.append(nxt)
    return etas, gaps
