"""Hybrid MCMC: Hamiltonian Monte Carlo for the sparse coefficients inside a
Gibbs sweep over the hyperparameters (and, optionally, the dictionary
parameter).

The coefficients are sampled in log coordinates ``z = log x`` so the
dynamics are unconstrained. Two x-kernels are available: a fixed-length
leapfrog HMC step (:func:`hmc_transition`) and the no-U-turn variant with
multinomial trajectory sampling (:func:`nuts_transition`), the default.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from cfsbayes import _nuts
from cfsbayes.errors import DomainError
from cfsbayes.sparse_prior import (
    HyperPriorConfig,
    HyperState,
    KernelConfig,
    XPosterior,
    gaussian_loglik,
    hyper_logpdfs,
    joint_log_prior,
    weibull_logpdf,
)

log = logging.getLogger(__name__)

_DIVERGENCE_THRESHOLD = _nuts.DIVERGENCE_THRESHOLD


@dataclass
class HmcConfig:
    step_size: float | None = None  # None -> heuristic initial value, then adapted
    leapfrog_steps: int | None = None  # None -> no-U-turn trajectories
    masses: np.ndarray | None = None  # None -> unit masses (adapted during burn-in)
    max_tree_depth: int = 10
    adapt_target_accept: float = 0.8
    adapt_mass: bool = True

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise DomainError("step_size must be positive")
        if self.leapfrog_steps is not None and self.leapfrog_steps < 1:
            raise DomainError("leapfrog_steps must be >= 1")
        if self.max_tree_depth < 1:
            raise DomainError("max_tree_depth must be >= 1")
        if not 0 < self.adapt_target_accept < 1:
            raise DomainError("adapt_target_accept must lie in (0, 1)")


# -- integrators ----------------------------------------------------------------


def leapfrog(z, p, g, eps, inv_mass, target):
    """One leapfrog step of size ``eps``; returns ``(z, p, logp, grad)``."""
    p = p + 0.5 * eps * g
    z = z + eps * inv_mass * p
    lp, g = target(z)
    p = p + 0.5 * eps * g
    return z, p, lp, g


def _kinetic(p, inv_mass):
    return 0.5 * float(np.sum(p * p * inv_mass))


def _draw_momentum(rng, inv_mass):
    return rng.standard_normal(inv_mass.shape) / np.sqrt(inv_mass)


def integrate(z, p, eps, n_steps, inv_mass, target):
    """Run ``n_steps`` leapfrog steps; returns ``(z, p, logp, grad)``."""
    lp, g = target(z)
    for _ in range(n_steps):
        z, p, lp, g = leapfrog(z, p, g, eps, inv_mass, target)
        if not np.isfinite(lp):
            break
    return z, p, lp, g


@dataclass
class TransitionInfo:
    accepted: bool
    accept_stat: float
    energy_change: float
    n_leapfrog: int
    divergent: bool
    tree_depth: int = 0


def hmc_transition(z, target, cfg: HmcConfig, rng, inv_mass=None, logp_grad=None):
    """Fixed-length HMC step. Returns ``(z_new, accepted, delta_H)``.

    Momenta are drawn with variance equal to the particle masses; a
    non-finite trajectory is rejected and reported through ``delta_H = inf``.
    """
    z = np.asarray(z, dtype=float)
    eps = cfg.step_size if cfg.step_size is not None else 0.1
    n_steps = cfg.leapfrog_steps or 10
    if inv_mass is None:
        inv_mass = 1.0 / cfg.masses if cfg.masses is not None else np.ones_like(z)
    lp0, g0 = logp_grad if logp_grad is not None else target(z)
    if not np.isfinite(lp0):
        raise DomainError("target is not finite at the current state")
    p0 = _draw_momentum(rng, inv_mass)
    h0 = -lp0 + _kinetic(p0, inv_mass)
    z1, p, lp, g = z, p0, lp0, g0
    for _ in range(n_steps):
        z1, p, lp, g = leapfrog(z1, p, g, eps, inv_mass, target)
        if not (np.isfinite(lp) and np.all(np.isfinite(g))):
            return z, False, math.inf
    dh = (-lp + _kinetic(p, inv_mass)) - h0
    if np.log(rng.uniform()) < -dh:
        return z1, True, dh
    return z, False, dh


def nuts_transition(z, lp, g, target, eps, inv_mass, rng, max_depth=10):
    """One no-U-turn transition (multinomial sampling, biased progressive
    merging at the top level). Returns ``(z, lp, g, TransitionInfo)``.

    Targets exposing a ``params`` tuple (:class:`XPosterior`) run through the
    compiled trajectory builder; any other callable uses the same algorithm
    in plain Python. Both consume random numbers identically.
    """
    z = np.ascontiguousarray(z, dtype=float)
    inv_mass = np.ascontiguousarray(inv_mass, dtype=float)
    p0 = _draw_momentum(rng, inv_mass)
    u_dir = rng.random(max_depth)
    u_top = rng.random(max_depth)
    u_leaf = rng.random((1 << max_depth) - 1)
    if isinstance(target, XPosterior):
        out = _nuts.nuts_core_jit(z, float(lp), np.asarray(g, float), p0, float(eps), inv_mass, max_depth,
                                  u_dir, u_top, u_leaf, _nuts.x_target_jit, target.params)
    else:
        out = _nuts.nuts_core_py(z, float(lp), np.asarray(g, float), p0, float(eps), inv_mass, max_depth,
                                 u_dir, u_top, u_leaf, lambda q, _: target(q), ())
    z_new, lp_new, g_new, sum_alpha, n_alpha, divergent, depth = out
    accepted = not np.array_equal(z_new, z)
    info = TransitionInfo(
        accepted, sum_alpha / max(n_alpha, 1), float(-lp_new + lp), int(n_alpha), bool(divergent), int(depth)
    )
    return z_new, float(lp_new), g_new, info


def find_reasonable_step_size(z, lp, g, target, inv_mass, rng, eps=0.1):
    p = _draw_momentum(rng, inv_mass)
    h0 = -lp + _kinetic(p, inv_mass)

    def log_ratio(e):
        _, p1, lp1, _ = leapfrog(z, p, g, e, inv_mass, target)
        if not np.isfinite(lp1):
            return -math.inf
        return h0 - (-lp1 + _kinetic(p1, inv_mass))

    a = 1.0 if log_ratio(eps) > math.log(0.5) else -1.0
    for _ in range(60):
        if a * log_ratio(eps) <= -a * math.log(2.0):
            break
        eps *= 2.0**a
    return float(np.clip(eps, 1e-8, 10.0))


class DualAveraging:
    """Step-size adaptation toward a target mean acceptance statistic."""

    def __init__(self, eps0, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(eps0)

    def restart(self, eps0):
        self.mu = math.log(10.0 * eps0)
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0
        self.eps = eps0

    def update(self, accept_stat):
        self.m += 1
        w = 1.0 / (self.m + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_stat)
        log_eps = self.mu - math.sqrt(self.m) / self.gamma * self.h_bar
        eta = self.m ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        self.eps = math.exp(log_eps)
        return self.eps

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def adaptation_windows(n_warmup, init=0.15, term=0.1, base=25):
    """Slow-window end points (exclusive) for diagonal mass estimation."""
    if n_warmup < 20:
        return []
    start = int(n_warmup * init)
    end = n_warmup - int(n_warmup * term)
    ends, size, cur = [], base, start
    while cur < end:
        nxt = cur + size
        if nxt + 2 * size > end:
            nxt = end
        ends.append((cur, nxt))
        cur, size = nxt, size * 2
    return ends


class XKernel:
    """HMC/NUTS kernel for ``z = log x`` with warm-up adaptation state."""

    def __init__(self, cfg: HmcConfig, dim: int):
        self.cfg = cfg
        self.inv_mass = 1.0 / np.asarray(cfg.masses, float) if cfg.masses is not None else np.ones(dim)
        self.eps = cfg.step_size
        self.da = None
        self.windows = []
        self.window_draws = []
        self.divergences = 0
        self.n_leapfrog = 0

    def start_warmup(self, n_warmup):
        self.windows = adaptation_windows(n_warmup) if self.cfg.adapt_mass else []
        self.window_draws = []
        if self.da is not None and n_warmup > 0:
            self.da.restart(self.eps)

    def step(self, z, target, rng, it=None, n_warmup=0):
        lp, g = target(z)
        if not np.isfinite(lp):
            raise DomainError("x-target is not finite at the current state")
        if self.eps is None:
            self.eps = find_reasonable_step_size(z, lp, g, target, self.inv_mass, rng)
        if self.da is None:
            self.da = DualAveraging(self.eps, self.cfg.adapt_target_accept)
        warm = it is not None and it < n_warmup
        if self.cfg.leapfrog_steps is None:
            z1, _, _, info = nuts_transition(z, lp, g, target, self.eps, self.inv_mass, rng, self.cfg.max_tree_depth)
        else:
            z1, acc, dh = hmc_transition(
                z, target, HmcConfig(self.eps, self.cfg.leapfrog_steps), rng, self.inv_mass, (lp, g)
            )
            info = TransitionInfo(acc, math.exp(min(0.0, -dh)) if np.isfinite(dh) else 0.0, dh,
                                  self.cfg.leapfrog_steps, not np.isfinite(dh) or dh > _DIVERGENCE_THRESHOLD)
        self.divergences += int(info.divergent)
        self.n_leapfrog += info.n_leapfrog
        if warm:
            self.eps = self.da.update(info.accept_stat)
            for lo, hi in self.windows:
                if lo <= it < hi:
                    self.window_draws.append(np.array(z1))
                    if it == hi - 1:
                        self._update_mass(z1, target, rng)
            if it == n_warmup - 1:
                self.eps = self.da.final
        return z1, info

    def _update_mass(self, z, target, rng):
        draws = np.asarray(self.window_draws)
        self.window_draws = []
        n = len(draws)
        if n < 5:
            return
        var = draws.var(axis=0, ddof=1)
        var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
        self.inv_mass = var
        lp, g = target(z)
        self.eps = find_reasonable_step_size(z, lp, g, target, self.inv_mass, rng, self.eps)
        self.da.restart(self.eps)


# -- Gibbs sweep ------------------------------------------------------------------


class _RwMetropolis:
    """Log-scale random-walk Metropolis for one positive scalar, with
    Robbins-Monro scale adaptation during warm-up."""

    def __init__(self, scale=0.3, target=0.44):
        self.log_scale = math.log(scale)
        self.target = target
        self.n = 0

    def step(self, value, logdens, rng, adapt):
        prop = value * math.exp(math.exp(self.log_scale) * rng.standard_normal())
        # log-scale proposal: Jacobian of the log transform
        cur = logdens(value) + math.log(value)
        new = logdens(prop) + math.log(prop)
        log_a = new - cur if np.isfinite(new) else -math.inf
        accepted = math.log(rng.uniform()) < log_a
        if adapt:
            self.n += 1
            self.log_scale += (min(1.0, math.exp(min(0.0, log_a))) - self.target) / self.n**0.6
        return (prop if accepted else value), accepted


@dataclass
class SamplerConfig:
    n_samples: int = 500
    burn_in: int | None = None  # None -> half of n_samples
    hmc: HmcConfig = field(default_factory=HmcConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    hyper: HyperPriorConfig = field(default_factory=HyperPriorConfig)

    @property
    def n_burn(self):
        return self.n_samples // 2 if self.burn_in is None else self.burn_in


@dataclass
class ChainTrace:
    x: np.ndarray  # (n, N)
    hyper: np.ndarray  # (n, 4): k_w, lambda_w, lambda_delta, sigma_n2
    log_post: np.ndarray  # (n,)
    accept: np.ndarray  # (n,) bool
    burn_in: int = 0
    seed: int | None = None
    theta: np.ndarray | None = None  # (n,) S2 only
    theta_index: np.ndarray | None = None
    xi: np.ndarray | None = None  # (n, R) S2 only
    divergences: int = 0
    n_leapfrog: int = 0
    step_size: float = float("nan")

    def __len__(self):
        return len(self.log_post)

    def states(self):
        return [HyperState(*row) for row in self.hyper]

    def field(self, name):
        idx = {"k_w": 0, "lambda_w": 1, "lambda_delta": 2, "sigma_n2": 3}
        if name == "x":
            return self.x
        if name in idx:
            return self.hyper[:, idx[name]]
        if name == "theta" and self.theta is not None:
            return self.theta
        raise DomainError(f"trace has no field {name!r}")

    def write_csv(self, path_or_file):
        """One row per sample: iteration, log_post, hyperparameters,
        theta (if present), x_1..x_N."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            head = ["iteration", "log_post", "k_w", "lambda_w", "lambda_delta", "sigma_n2"]
            if self.theta is not None:
                head.append("theta")
            head += [f"x{i + 1}" for i in range(self.x.shape[1])]
            w.writerow(head)
            for i in range(len(self)):
                row = [self.burn_in + i, repr(float(self.log_post[i]))]
                row += [repr(float(v)) for v in self.hyper[i]]
                if self.theta is not None:
                    row.append(repr(float(self.theta[i])))
                row += [repr(float(v)) for v in self.x[i]]
                w.writerow(row)
        finally:
            if own:
                fh.close()


def joint_log_posterior(x, state: HyperState, y, B, kcfg: KernelConfig, hp: HyperPriorConfig) -> float:
    """log p(y | x, C) + log p~(x | C) + log p(C), kernel normalizer omitted."""
    prior = joint_log_prior(x, state, kcfg)
    if not np.isfinite(prior):
        return -math.inf
    return gaussian_loglik(y - B @ x, state.sigma_n2) + prior + sum(hyper_logpdfs(state, hp).values())


def initial_state(y, B, hp: HyperPriorConfig):
    """Nonnegative least-squares start for x and moment-based hyperparameters."""
    x0, _ = nnls(B, y, maxiter=50 * B.shape[1])
    scale = max(float(x0.max()), 1e-12)
    x0 = np.maximum(x0, 1e-3 * scale)
    s2 = max(float(y @ y) / len(y) * 0.05, 1e-12)
    k = 0.5
    beta = (hp.b + np.sum(x0**k)) / (hp.a + len(x0))
    state = HyperState(k, float(beta ** (1 / k)), hp.b2 / (hp.a2 + 1.0), s2)
    return x0, state


class GibbsSampler:
    """Outer Gibbs sweep: sigma^2, lambda_w (via beta), k_w, lambda_delta,
    then x by HMC; with a :class:`ThetaSampler` attached, also Xi and theta."""

    def __init__(self, y, B, cfg: SamplerConfig, rng, x0=None, state0=None, theta_sampler=None):
        self.y = np.asarray(y, dtype=float)
        self.cfg = cfg
        self.rng = rng
        self.theta_sampler = theta_sampler
        self.B = theta_sampler.current_B() if theta_sampler is not None else np.asarray(B, dtype=float)
        if x0 is None or state0 is None:
            xi, si = initial_state(self.y, self.B, cfg.hyper)
            x0 = xi if x0 is None else x0
            state0 = si if state0 is None else state0
        self.x = np.asarray(x0, dtype=float).copy()
        if np.any(self.x <= 0):
            raise DomainError("initial x must be strictly positive")
        self.z = np.log(self.x)
        self.state = state0
        self.kernel = XKernel(cfg.hmc, len(self.x))
        self.k_mh = _RwMetropolis()
        self.ld_mh = _RwMetropolis()
        self.it = 0
        self.n_warmup = 0

    # individual conditional updates -------------------------------------------

    def draw_sigma2(self):
        hp = self.cfg.hyper
        r = self.y - self.B @ self.x
        shape = hp.a_sigma + 0.5 * len(self.y)
        rate = hp.b_sigma + 0.5 * float(r @ r)
        return rate / self.rng.gamma(shape)

    def draw_lambda_w(self):
        hp = self.cfg.hyper
        k = self.state.k_w
        shape = hp.a + len(self.x)
        rate = hp.b + float(np.sum(self.x**k))
        beta = rate / self.rng.gamma(shape)
        return beta ** (1.0 / k)

    def _k_logdens(self, k):
        if not k > 0 or not np.isfinite(k):
            return -math.inf
        hp = self.cfg.hyper
        lam = self.state.lambda_w
        prior = hp.a1 * math.log(k) - hp.b1 * k - hp.d1**k / lam
        return prior + float(np.sum(weibull_logpdf(self.x, k, lam)))

    def _ld_logdens(self, ld):
        if not ld > 0 or not np.isfinite(ld):
            return -math.inf
        hp = self.cfg.hyper
        return -(hp.a2 + 1) * math.log(ld) - hp.b2 / ld - ld * self._kernel_roughness

    def sweep(self, adapt=False):
        st = self.state
        st = HyperState(st.k_w, st.lambda_w, st.lambda_delta, self.draw_sigma2())
        self.state = st
        self.state = HyperState(st.k_w, self.draw_lambda_w(), st.lambda_delta, st.sigma_n2)
        k, _ = self.k_mh.step(self.state.k_w, self._k_logdens, self.rng, adapt)
        st = self.state
        self.state = HyperState(k, st.lambda_w, st.lambda_delta, st.sigma_n2)
        kc = self.cfg.kernel
        a, b = self.x[:-1], self.x[1:]
        self._kernel_roughness = kc.n_x * float(np.sum(np.abs(b - a) / (a + b) ** kc.r_exp))
        ld, _ = self.ld_mh.step(self.state.lambda_delta, self._ld_logdens, self.rng, adapt)
        st = self.state
        self.state = HyperState(st.k_w, st.lambda_w, ld, st.sigma_n2)
        target = XPosterior(self.y, self.B, self.state, kc)
        self.z, info = self.kernel.step(self.z, target, self.rng, self.it if adapt else None, self.n_warmup)
        self.x = np.exp(self.z)
        if not np.all(self.x > 0):
            raise DomainError("non-positive coefficient emitted by the x-kernel")
        if self.theta_sampler is not None:
            self.theta_sampler.step(self.x, self.state.sigma_n2, self.y, self.rng)
            self.B = self.theta_sampler.current_B()
        self.it += 1
        return info

    def log_post(self):
        lp = joint_log_posterior(self.x, self.state, self.y, self.B, self.cfg.kernel, self.cfg.hyper)
        if self.theta_sampler is not None:
            lp += self.theta_sampler.log_prior()
        return lp

    def run(self, n_samples=None, burn_in=None, seed=None) -> ChainTrace:
        n = self.cfg.n_samples if n_samples is None else n_samples
        nb = self.cfg.n_burn if burn_in is None else burn_in
        if n < 1:
            raise DomainError("need at least one sample")
        self.it = 0
        self.n_warmup = nb
        self.kernel.start_warmup(nb)
        for _ in range(nb):
            self.sweep(adapt=True)
        N = len(self.x)
        xs = np.empty((n, N))
        hyper = np.empty((n, 4))
        lps = np.empty(n)
        acc = np.zeros(n, dtype=bool)
        ts = self.theta_sampler
        thetas = np.empty(n) if ts is not None else None
        tidx = np.empty(n, dtype=int) if ts is not None else None
        xis = np.empty((n, len(ts.grid))) if ts is not None else None
        for i in range(n):
            info = self.sweep(adapt=False)
            xs[i] = self.x
            hyper[i] = self.state.as_tuple()
            lps[i] = self.log_post()
            acc[i] = info.accepted
            if ts is not None:
                tidx[i] = ts.index
                thetas[i] = ts.grid.values[ts.index]
                xis[i] = ts.xi
            if not np.isfinite(lps[i]):
                log.warning("non-finite log posterior at sample %d", i)
        return ChainTrace(
            xs, hyper, lps, acc, nb, seed, thetas, tidx, xis,
            self.kernel.divergences, self.kernel.n_leapfrog, float(self.kernel.eps),
        )


def gibbs_sweep(x, state: HyperState, y, dictionary, phi, cfg: SamplerConfig, rng, kernel_eps=0.05):
    """Single stand-alone sweep from ``(x, state)``; returns ``(x', state')``.

    Without warm-up the x-kernel uses the supplied fixed step size.
    """
    A = np.asarray(getattr(dictionary, "atoms", dictionary), dtype=float)
    Phi = np.asarray(getattr(phi, "entries", phi), dtype=float)
    B = Phi @ A
    if B.shape != (len(y), len(x)):
        raise DomainError(f"shape mismatch: Phi A is {B.shape}, y {np.shape(y)}, x {np.shape(x)}")
    hmc = HmcConfig(step_size=kernel_eps, leapfrog_steps=cfg.hmc.leapfrog_steps,
                    max_tree_depth=cfg.hmc.max_tree_depth, adapt_mass=False)
    sc = SamplerConfig(cfg.n_samples, cfg.burn_in, hmc, cfg.kernel, cfg.hyper)
    g = GibbsSampler(y, B, sc, rng, x0=x, state0=state)
    g.sweep(adapt=False)
    return g.x.copy(), g.state


# -- posterior summaries --------------------------------------------------------------


def posterior_mean(trace: ChainTrace, field: str = "x"):
    """Plain Monte Carlo average of a traced quantity over stored samples."""
    if len(trace) == 0:
        raise DomainError("empty trace")
    return np.mean(trace.field(field), axis=0)


def empirical_map(trace: ChainTrace):
    """Stored sample with the largest joint log-posterior."""
    if len(trace) == 0:
        raise DomainError("empty trace")
    j = int(np.argmax(np.where(np.isfinite(trace.log_post), trace.log_post, -np.inf)))
    return trace.x[j].copy(), HyperState(*trace.hyper[j])


def extract_support(x_hat, K: int):
    """Indices of the K largest entries, ascending; ties go to the lower index."""
    x_hat = np.asarray(x_hat, dtype=float)
    if not 0 <= K <= len(x_hat):
        raise DomainError(f"K={K} outside [0, {len(x_hat)}]")
    order = np.lexsort((np.arange(len(x_hat)), -x_hat))
    return np.sort(order[:K])
