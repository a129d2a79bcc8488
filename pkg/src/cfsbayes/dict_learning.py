"""Parametric dictionary learning.

``s1_estimate``
    Monte Carlo EM: the bandwidth parameter is deterministic; each iteration
    samples ``(x, C)`` at the current estimate and maximizes the averaged
    complete-data log-likelihood over the grid.
``s2_estimate``
    Fully Bayesian: ``theta`` is categorical over the grid with Dirichlet
    probabilities and is sampled jointly with ``(x, C)`` in one chain.

Both start from a bisection search over the grid driven by the number of
significant peaks in a short-run MAP estimate of ``x``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from cfsbayes.dictionary import (
    DEFAULT_DT,
    DEFAULT_TD,
    DictionaryBank,
    GeneratingPulse,
    ThetaGrid,
    theta_grid,
)
from cfsbayes.errors import DomainError, NumericalError
from cfsbayes.sampler import (
    ChainTrace,
    GibbsSampler,
    SamplerConfig,
    empirical_map,
    extract_support,
    posterior_mean,
)
from cfsbayes.sparse_prior import HyperState

log = logging.getLogger(__name__)


@dataclass
class EmConfig:
    d_max: int = 35
    L_MC: int = 500
    theta_grid: ThetaGrid = field(default_factory=theta_grid)
    # samples discarded again after each M-step (the chain is warm-started)
    reburn: int = 50

    def __post_init__(self):
        if self.d_max < 1:
            raise DomainError("d_max must be >= 1")
        if self.L_MC < 2:
            raise DomainError("L_MC must be >= 2")


@dataclass
class EstimationConfig:
    K: int = 3
    N: int = 268
    em: EmConfig = field(default_factory=EmConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    pulse: GeneratingPulse = field(default_factory=GeneratingPulse)
    Td: float = DEFAULT_TD
    dt: float = DEFAULT_DT
    nu: float = 1.0  # Dirichlet prior count per grid point (S2)
    burst_samples: int = 30  # per bisection probe
    burst_burn: int = 30
    peak_rel_threshold: float = 0.2
    peak_merge_radius: int = 2

    @property
    def grid(self) -> ThetaGrid:
        return self.em.theta_grid


@dataclass(frozen=True)
class CategoricalThetaState:
    xi: np.ndarray
    nu: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        if abs(float(np.sum(self.xi)) - 1.0) > 1e-9 or np.any(self.xi <= 0):
            raise DomainError("xi must be a strictly positive probability vector")
        if int(np.sum(self.count)) != 1 or np.any((self.count != 0) & (self.count != 1)):
            raise DomainError("count must be one-hot")


@dataclass
class EstimationResult:
    support: np.ndarray
    x_map: np.ndarray
    theta_hat: float
    hyper_hat: HyperState
    em_iters: int
    residual: float
    theta_index: int
    x_mean: np.ndarray | None = None
    theta_mode: float | None = None
    theta_history: list = field(default_factory=list)
    q_history: list = field(default_factory=list)
    divergences: int = 0
    trace: ChainTrace | None = None

    @property
    def sigma_hat(self) -> float:
        return math.sqrt(self.hyper_hat.sigma_n2)

    @property
    def amplitudes(self) -> np.ndarray:
        return self.x_map[self.support]

    def report(self) -> str:
        """key=value report; indices are zero-based."""
        h = self.hyper_hat
        lines = [
            f"support={','.join(str(int(i)) for i in self.support)}",
            f"theta_hat={self.theta_hat!r}",
            f"theta_index={self.theta_index}",
            f"sigma_hat={self.sigma_hat!r}",
            f"k_w={h.k_w!r}",
            f"lambda_w={h.lambda_w!r}",
            f"lambda_delta={h.lambda_delta!r}",
            f"sigma_n2={h.sigma_n2!r}",
            f"em_iters={self.em_iters}",
            f"ee={self.residual!r}",
            f"amplitudes={','.join(repr(float(v)) for v in self.amplitudes)}",
            f"divergences={self.divergences}",
        ]
        if self.theta_mode is not None:
            lines.append(f"theta_mode={self.theta_mode!r}")
        return "\n".join(lines) + "\n"

    def x_map_csv(self) -> str:
        return "index,x_map\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(self.x_map))


# -- building blocks --------------------------------------------------------------


def count_peaks(x, rel_threshold=0.2, merge_radius=2) -> int:
    """Local maxima above ``rel_threshold * max(x)``; maxima closer than
    ``merge_radius`` indices count once."""
    x = np.asarray(x, dtype=float)
    if len(x) == 0 or not np.max(x) > 0:
        return 0
    padded = np.concatenate(([-np.inf], x, [-np.inf]))
    is_max = (x >= padded[:-2]) & (x > padded[2:]) & (x > rel_threshold * np.max(x))
    idx = np.flatnonzero(is_max)
    if len(idx) == 0:
        return 0
    return 1 + int(np.sum(np.diff(idx) >= merge_radius))


def bisection_search(R: int, K: int, probe, rng, start: int | None = None):
    """Bisection over grid indices ``0..R-1`` for a value whose probe reports
    exactly K peaks. ``probe(idx)`` returns the peak count; more peaks than
    K move the search to smaller indices. After the random start at most
    ``ceil(log2 R)`` further probes are made. Returns ``(index, probed)``."""
    if R < 1:
        raise DomainError("empty grid")
    lo, hi = 0, R - 1
    idx = int(rng.integers(R)) if start is None else int(start)
    probed = []
    max_splits = math.ceil(math.log2(R)) if R > 1 else 0
    while True:
        n = probe(idx)
        probed.append((idx, n))
        if n == K or len(probed) > max_splits:
            return idx, probed
        if n > K:
            hi = idx - 1
        else:
            lo = idx + 1
        if lo > hi:
            return idx, probed
        idx = (lo + hi) // 2


def q_values(bank: DictionaryBank, y, xs, sigma2s) -> np.ndarray:
    """Monte Carlo Q-function on every grid point: mean over samples of the
    Gaussian log-likelihood ``log p(y | x_l, theta, s2_l)``. Prior terms do not
    depend on theta and are left out."""
    y = np.asarray(y, dtype=float)
    xs = np.atleast_2d(xs)
    s2 = np.asarray(sigma2s, dtype=float)
    M = len(y)
    const = -0.5 * M * np.log(2 * np.pi * s2)
    out = np.empty(len(bank))
    for r in range(len(bank)):
        res = y[:, None] - bank.projected[r] @ xs.T
        rss = np.einsum("ml,ml->l", res, res)
        out[r] = float(np.mean(const - rss / (2 * s2)))
    return out


def q_function(B, y, xs, sigma2s) -> float:
    xs = np.atleast_2d(xs)
    s2 = np.asarray(sigma2s, dtype=float)
    res = np.asarray(y)[:, None] - np.asarray(B) @ xs.T
    rss = np.einsum("ml,ml->l", res, res)
    return float(np.mean(-0.5 * len(y) * np.log(2 * np.pi * s2) - rss / (2 * s2)))


def m_step(q) -> int:
    """Grid index maximizing Q; ties resolve to the smallest theta."""
    q = np.asarray(q, dtype=float)
    if len(q) == 0:
        raise DomainError("empty Q vector")
    return int(np.argmax(q))


def categorical_weights(loglik, xi) -> np.ndarray:
    """Normalized ``p_r ∝ exp(loglik_r) * xi_r`` via log-sum-exp."""
    lw = np.asarray(loglik, dtype=float) + np.log(np.asarray(xi, dtype=float))
    return np.exp(lw - logsumexp(lw))


def dirichlet_update(nu, index: int) -> np.ndarray:
    """Posterior concentration ``nu + c`` for a one-hot count at ``index``."""
    a = np.array(nu, dtype=float)
    a[index] += 1.0
    return a


class ThetaSampler:
    """Gibbs updates of ``Xi | theta ~ Dir(nu + c)`` and
    ``theta | y, x, s2, Xi ~ Cat(p_r ∝ p(y | x, theta_r, s2) Xi_r)``."""

    def __init__(self, bank: DictionaryBank, nu, index: int):
        self.bank = bank
        self.grid = bank.grid
        self.nu = np.broadcast_to(np.asarray(nu, dtype=float), (len(bank),)).copy()
        if np.any(self.nu <= 0):
            raise DomainError("Dirichlet counts must be positive")
        self.index = int(index)
        self.xi = self.nu / self.nu.sum()

    @property
    def state(self) -> CategoricalThetaState:
        c = np.zeros(len(self.nu), dtype=int)
        c[self.index] = 1
        return CategoricalThetaState(self.xi.copy(), self.nu.copy(), c)

    def current_B(self):
        return self.bank.projected[self.index]

    def loglik(self, x, sigma2, y):
        res = y[None, :] - self.bank.projected @ x
        return -np.einsum("rm,rm->r", res, res) / (2 * sigma2)

    def step(self, x, sigma2, y, rng):
        xi = rng.dirichlet(dirichlet_update(self.nu, self.index))
        self.xi = np.maximum(xi, np.finfo(float).tiny)
        self.xi /= self.xi.sum()
        p = categorical_weights(self.loglik(x, sigma2, y), self.xi)
        self.index = int(rng.choice(len(p), p=p))

    def log_prior(self):
        a = self.nu
        log_dir = gammaln(a.sum()) - gammaln(a).sum() + float(np.sum((a - 1) * np.log(self.xi)))
        return float(np.log(self.xi[self.index]) + log_dir)


def _summarize(trace: ChainTrace, K: int, B_hat, y):
    x_mean = posterior_mean(trace, "x")
    support = extract_support(x_mean, K)
    x_map, _ = empirical_map(trace)
    hyper_hat = HyperState(*(float(v) for v in np.mean(trace.hyper, axis=0)))
    r = y - B_hat @ x_map
    return x_mean, support, x_map, hyper_hat, float(r @ r)


def _check_inputs(y, phi, cfg: EstimationConfig):
    phi = np.asarray(getattr(phi, "entries", phi), dtype=float)
    y = np.asarray(y, dtype=float)
    if phi.ndim != 2 or y.shape != (phi.shape[0],):
        raise DomainError(f"shape mismatch: phi {phi.shape}, y {y.shape}")
    if not 1 <= cfg.K <= cfg.N:
        raise DomainError(f"K={cfg.K} outside [1, N={cfg.N}]")
    return y, phi


def build_bank(phi, cfg: EstimationConfig) -> DictionaryBank:
    phi = np.asarray(getattr(phi, "entries", phi), dtype=float)
    return DictionaryBank.build(cfg.grid, phi, cfg.N, cfg.Td, cfg.dt, cfg.pulse)


def bisection_init(y, phi, cfg: EstimationConfig, rng, bank: DictionaryBank | None = None):
    """Initial grid index from peak counting on short sampler bursts.

    Returns ``(index, sampler)``; the sampler is warm and positioned at the
    last probe, ready to be reused by the caller.
    """
    y, phi = _check_inputs(y, phi, cfg)
    bank = bank or build_bank(phi, cfg)
    sampler = GibbsSampler(y, bank.projected[0], cfg.sampler, rng)

    def probe(idx):
        sampler.B = bank.projected[idx]
        tr = sampler.run(cfg.burst_samples, cfg.burst_burn)
        x_map, _ = empirical_map(tr)
        n = count_peaks(x_map, cfg.peak_rel_threshold, cfg.peak_merge_radius)
        log.debug("bisection probe theta=%.4f peaks=%d", bank.grid.values[idx], n)
        return n

    idx, _ = bisection_search(len(bank), cfg.K, probe, rng)
    return idx, sampler


# -- strategies ------------------------------------------------------------------------


def s1_estimate(y, phi, cfg: EstimationConfig = EstimationConfig(), rng=None, seed=0, keep_trace=False):
    """Monte Carlo EM over the theta grid, initialized by bisection."""
    from cfsbayes.rng import make_rng

    rng = rng or make_rng(seed, 2)
    y, phi = _check_inputs(y, phi, cfg)
    bank = build_bank(phi, cfg)
    prev, sampler = bisection_init(y, phi, cfg, rng, bank)
    history, q_hist = [prev], []
    L_MC = cfg.em.L_MC
    burn = cfg.sampler.n_burn
    for d in range(1, cfg.em.d_max + 1):
        sampler.B = bank.projected[prev]
        try:
            trace = sampler.run(L_MC, burn if d == 1 else cfg.em.reburn, seed)
        except (DomainError, FloatingPointError) as exc:
            partial = {"em_iters": d - 1, "theta_history": [float(bank.grid.values[i]) for i in history],
                       "q_history": q_hist}
            raise NumericalError(f"sampler failed in EM iteration {d}: {exc}", partial) from exc
        q = q_values(bank, y, trace.x, trace.hyper[:, 3])
        new = m_step(q)
        if q[new] < q[prev]:
            raise AssertionError("EM grid ascent violated")
        q_hist.append(q)
        history.append(new)
        if new == prev or d == cfg.em.d_max:
            break
        prev = new
    B_hat = bank.projected[new]
    x_mean, support, x_map, hyper_hat, ee = _summarize(trace, cfg.K, B_hat, y)
    return EstimationResult(
        support, x_map, float(bank.grid.values[new]), hyper_hat, d, ee, new, x_mean,
        theta_history=[float(bank.grid.values[i]) for i in history], q_history=q_hist,
        divergences=trace.divergences, trace=trace if keep_trace else None,
    )


def s2_estimate(y, phi, cfg: EstimationConfig = EstimationConfig(), rng=None, seed=0, keep_trace=False):
    """Joint sampling of ``(x, C, theta, Xi)``; one outer iteration."""
    from cfsbayes.rng import make_rng

    rng = rng or make_rng(seed, 2)
    y, phi = _check_inputs(y, phi, cfg)
    bank = build_bank(phi, cfg)
    start, burst = bisection_init(y, phi, cfg, rng, bank)
    ts = ThetaSampler(bank, cfg.nu, start)
    sampler = GibbsSampler(y, None, cfg.sampler, rng, x0=burst.x, state0=burst.state, theta_sampler=ts)
    sampler.kernel = burst.kernel
    try:
        trace = sampler.run(cfg.em.L_MC, cfg.sampler.n_burn, seed)
    except (DomainError, FloatingPointError) as exc:
        raise NumericalError(f"sampler failed: {exc}", {"theta_start": float(bank.grid.values[start])}) from exc
    grid = bank.grid
    theta_mean = float(np.mean(trace.theta))
    idx = grid.nearest_index(theta_mean)
    counts = np.bincount(trace.theta_index, minlength=len(grid))
    mode = float(grid.values[int(np.argmax(counts))])
    x_mean, support, x_map, hyper_hat, ee = _summarize(trace, cfg.K, bank.projected[idx], y)
    return EstimationResult(
        support, x_map, float(grid.values[idx]), hyper_hat, 1, ee, idx, x_mean, theta_mode=mode,
        theta_history=[float(grid.values[start]), float(grid.values[idx])],
        divergences=trace.divergences, trace=trace if keep_trace else None,
    )
