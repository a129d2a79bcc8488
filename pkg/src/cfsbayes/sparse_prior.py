"""Log-densities and gradients of the hierarchical sparse model.

Model summary (all densities unnormalized where noted)::

    y | x, theta, s2     ~ N(Phi A(theta) x, s2 I)
    x | k, lam, lam_d    ~ prod_i Weibull(x_i | k, lam) * prod_i K(x_i, x_{i+1})
    K(a, b)              = exp(-lam_d |b - a| / f(a, b)),  f(a, b) = (a + b)^r / N_x
    beta = lam^k         ~ Inv-Gamma(a, b)
    k | lam              ~ k^a1 exp(-b1 k - d1^k / lam)
    lam_d                ~ Inv-Gamma(a2, b2)
    s2                   ~ Inv-Gamma(a_sigma, b_sigma)

The kernel normalizer is never evaluated; its dependence on the
hyperparameters is ignored when they are sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from cfsbayes.errors import DomainError


@dataclass(frozen=True)
class HyperState:
    k_w: float
    lambda_w: float
    lambda_delta: float
    sigma_n2: float

    def __post_init__(self):
        for name in ("k_w", "lambda_w", "sigma_n2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be finite and positive, got {v}")
        # lambda_delta = 0 switches the kernel off
        if not (np.isfinite(self.lambda_delta) and self.lambda_delta >= 0):
            raise DomainError(f"lambda_delta must be finite and non-negative, got {self.lambda_delta}")

    def as_tuple(self):
        return (self.k_w, self.lambda_w, self.lambda_delta, self.sigma_n2)


@dataclass(frozen=True)
class KernelConfig:
    r_exp: float = 0.5
    n_x: float = 1.0

    def __post_init__(self):
        if not 0 < self.r_exp <= 1:
            raise DomainError(f"r_exp must lie in (0, 1], got {self.r_exp}")
        if not (0 < self.n_x < np.inf):
            raise DomainError(f"n_x must be positive and finite, got {self.n_x}")


@dataclass(frozen=True)
class HyperPriorConfig:
    a: float = 1.0  # beta = lambda_w ** k_w
    b: float = 1.0
    a2: float = 2.0  # lambda_delta
    b2: float = 2.0
    a_sigma: float = 1.0  # sigma_n^2
    b_sigma: float = 1e-3
    a1: float = 1.0  # k_w
    b1: float = 2.0
    d1: float = 1.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if not v > 0:
                raise DomainError(f"hyperprior parameter {name} must be positive, got {v}")


def weibull_logpdf(x, k_w: float, lambda_w: float):
    """Weibull log-density; ``-inf`` outside the positive half-line."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(k_w) - k_w * np.log(lambda_w) + (k_w - 1.0) * np.log(x) - (x / lambda_w) ** k_w
    return np.where(x > 0, out, -np.inf)


def invgamma_logpdf(x, a: float, b: float):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x
    return np.where(x > 0, out, -np.inf)


def kernel_log(x_i, x_ip1, lambda_delta: float, cfg: KernelConfig = KernelConfig()):
    """Log of the similarity kernel between adjacent coefficients (always <= 0)."""
    x_i = np.asarray(x_i, dtype=float)
    x_ip1 = np.asarray(x_ip1, dtype=float)
    s = x_i + x_ip1
    if np.any(s == 0):
        raise DomainError("kernel undefined when both coefficients are zero")
    return -lambda_delta * cfg.n_x * np.abs(x_ip1 - x_i) / s**cfg.r_exp


def _kernel_sum(x, lambda_delta, cfg):
    if len(x) < 2:
        return 0.0
    return float(np.sum(kernel_log(x[:-1], x[1:], lambda_delta, cfg)))


def joint_log_prior(x, state: HyperState, cfg: KernelConfig = KernelConfig()) -> float:
    """Weibull prior times adjacent-pair kernels, without the kernel normalizer."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        return -np.inf
    w = float(np.sum(weibull_logpdf(x, state.k_w, state.lambda_w)))
    if state.lambda_delta == 0:
        return w
    return w + _kernel_sum(x, state.lambda_delta, cfg)


def conditional_log(i: int, x, state: HyperState, cfg: KernelConfig = KernelConfig()) -> float:
    """Unnormalized log p(x_i | x_{-i}); depends on x_{i-1}, x_i, x_{i+1} only."""
    x = np.asarray(x, dtype=float)
    N = len(x)
    if not 0 <= i < N:
        raise DomainError(f"index {i} outside [0, {N})")
    if x[i] <= 0:
        return -np.inf
    out = float(weibull_logpdf(x[i], state.k_w, state.lambda_w))
    if i > 0:
        out += float(kernel_log(x[i - 1], x[i], state.lambda_delta, cfg))
    if i < N - 1:
        out += float(kernel_log(x[i], x[i + 1], state.lambda_delta, cfg))
    return out


def _as_matrix(dictionary):
    return getattr(dictionary, "atoms", dictionary)


def _projected(dictionary, phi):
    A = np.asarray(_as_matrix(dictionary), dtype=float)
    P = np.asarray(getattr(phi, "entries", phi), dtype=float)
    if P.shape[1] != A.shape[0]:
        raise DomainError(f"Phi has {P.shape[1]} columns but dictionary has {A.shape[0]} rows")
    return P @ A


def gaussian_loglik(residual, sigma_n2: float) -> float:
    M = residual.shape[0]
    return float(-0.5 * M * np.log(2 * np.pi * sigma_n2) - residual @ residual / (2 * sigma_n2))


def log_posterior_x(x, y, dictionary, phi, state: HyperState, cfg: KernelConfig = KernelConfig()) -> float:
    """Gaussian log-likelihood plus :func:`joint_log_prior`."""
    B = _projected(dictionary, phi)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if B.shape != (y.shape[0], x.shape[0]):
        raise DomainError(f"dimension mismatch: B {B.shape}, y {y.shape}, x {x.shape}")
    prior = joint_log_prior(x, state, cfg)
    if not np.isfinite(prior):
        return -np.inf
    return gaussian_loglik(y - B @ x, state.sigma_n2) + prior


def _kernel_grad(x, lambda_delta, cfg):
    g = np.zeros_like(x)
    if len(x) < 2 or lambda_delta == 0:
        return g
    a, b = x[:-1], x[1:]
    s = a + b
    sr = s ** (-cfg.r_exp)
    d = b - a
    c = lambda_delta * cfg.n_x
    sgn = np.sign(d)  # subgradient 0 at exact ties
    common = cfg.r_exp * np.abs(d) * sr / s
    g[:-1] += -c * (-sgn * sr - common)
    g[1:] += -c * (sgn * sr - common)
    return g


def grad_log_prior(x, state: HyperState, cfg: KernelConfig = KernelConfig()):
    x = np.asarray(x, dtype=float)
    k, lam = state.k_w, state.lambda_w
    g = (k - 1.0) / x - (k / lam) * (x / lam) ** (k - 1.0)
    return g + _kernel_grad(x, state.lambda_delta, cfg)


def grad_log_posterior_x(x, y, dictionary, phi, state: HyperState, cfg: KernelConfig = KernelConfig()):
    B = _projected(dictionary, phi)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if B.shape != (y.shape[0], x.shape[0]):
        raise DomainError(f"dimension mismatch: B {B.shape}, y {y.shape}, x {x.shape}")
    return B.T @ (y - B @ x) / state.sigma_n2 + grad_log_prior(x, state, cfg)


def k_w_log_prior(k_w: float, lambda_w: float, hp: HyperPriorConfig) -> float:
    if not k_w > 0:
        return -np.inf
    return float(hp.a1 * np.log(k_w) - hp.b1 * k_w - hp.d1**k_w / lambda_w)


def lambda_w_log_prior(lambda_w: float, k_w: float, hp: HyperPriorConfig) -> float:
    """Density of lambda_w induced by beta = lambda_w**k_w ~ Inv-Gamma(a, b)."""
    if not lambda_w > 0:
        return -np.inf
    beta = lambda_w**k_w
    return float(invgamma_logpdf(beta, hp.a, hp.b) + np.log(k_w) + (k_w - 1.0) * np.log(lambda_w))


def hyper_logpdfs(state: HyperState, hp: HyperPriorConfig = HyperPriorConfig()) -> dict:
    return {
        "k_w": k_w_log_prior(state.k_w, state.lambda_w, hp),
        "lambda_w": lambda_w_log_prior(state.lambda_w, state.k_w, hp),
        "lambda_delta": float(invgamma_logpdf(state.lambda_delta, hp.a2, hp.b2)),
        "sigma_n2": float(invgamma_logpdf(state.sigma_n2, hp.a_sigma, hp.b_sigma)),
    }


def map_objective(x, y, B, k_w, lambda_w):
    """Penalized least-squares form of the Weibull MAP problem:
    ``|y - Bx|^2 + mu1 sum log x + mu2 sum x^k`` with ``mu1 = 1 - k``,
    ``mu2 = lambda**-k``; equals ``-2 s2 log posterior`` up to a constant
    when ``s2 = 1/2``."""
    x = np.asarray(x, dtype=float)
    r = y - B @ x
    return float(r @ r + (1 - k_w) * np.sum(np.log(x)) + lambda_w ** (-k_w) * np.sum(x**k_w))


class XPosterior:
    """Conditional posterior of ``x`` for fixed ``(theta, C)`` with the
    projected dictionary cached; evaluated in ``z = log x`` coordinates."""

    def __init__(self, y, B, state: HyperState, cfg: KernelConfig = KernelConfig()):
        self.y = np.asarray(y, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.state = state
        self.cfg = cfg

    @property
    def params(self) -> tuple:
        """Argument tuple for the compiled target in :mod:`cfsbayes._nuts`."""
        st = self.state
        return (self.y, np.ascontiguousarray(self.B), float(st.k_w), float(st.lambda_w),
                float(st.lambda_delta), float(st.sigma_n2), float(self.cfg.r_exp), float(self.cfg.n_x))

    def logp_x(self, x) -> float:
        if np.any(x <= 0):
            return -np.inf
        r = self.y - self.B @ x
        return gaussian_loglik(r, self.state.sigma_n2) + joint_log_prior(x, self.state, self.cfg)

    def __call__(self, z):
        """Return ``(log density, gradient)`` in log coordinates, Jacobian included."""
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            x = np.exp(z)
            if not np.all(np.isfinite(x)) or np.any(x <= 0):
                return -np.inf, np.full_like(z, np.nan)
            st, cfg = self.state, self.cfg
            r = self.y - self.B @ x
            k, lam = st.k_w, st.lambda_w
            xl = (x / lam) ** k
            lp = -r @ r / (2 * st.sigma_n2) + k * np.sum(z) - np.sum(xl)
            gx = self.B.T @ r / st.sigma_n2 - (k / x) * xl
            if st.lambda_delta > 0 and len(x) > 1:
                a, b = x[:-1], x[1:]
                s = a + b
                sr = s ** (-cfg.r_exp)
                lp -= st.lambda_delta * cfg.n_x * np.sum(np.abs(b - a) * sr)
                gx += _kernel_grad(x, st.lambda_delta, cfg)
            # (k - 1) log x from the Weibull plus the log-Jacobian sum z give k * sum z.
            g = gx * x + k
        return float(lp), g
