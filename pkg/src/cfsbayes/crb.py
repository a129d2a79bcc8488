"""Constrained Cramér-Rao bound for joint deterministic estimation of the
K-sparse coefficients and the dictionary parameter.

The full Fisher information of ``(x, theta)`` is singular for ``N > M``; the
sparsity constraint is imposed by projecting onto the known support, which
leaves a ``(K + 1) x (K + 1)`` reduced information matrix

    [[I_K, v], [v^T, I(theta)]]

inverted blockwise with the Schur complement ``b = I(theta) - v^T I_K^-1 v``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from cfsbayes.dictionary import build_dictionary, dictionary_derivative, theta_grid
from cfsbayes.errors import DomainError, NumericalError
from cfsbayes.sensing import ScenarioConfig, synthesize_scenario

RCRB_COLUMNS = ("snr_db", "m_over_l", "matrix_kind", "rcrb_x", "rcrb_theta")


def _entries(a):
    return np.asarray(getattr(a, "entries", getattr(a, "atoms", a)), dtype=float)


def _check_sigma(sigma_n):
    if not sigma_n > 0:
        raise DomainError(f"sigma_n must be positive, got {sigma_n}")


def fim_x(phi, dictionary, sigma_n: float) -> np.ndarray:
    """Fisher information of x: ``B^T B / sigma^2`` with ``B = Phi A``."""
    _check_sigma(sigma_n)
    B = _entries(phi) @ _entries(dictionary)
    return (B.T @ B) / sigma_n**2


def fisher_theta(x, phi, dict_derivative, sigma_n: float) -> float:
    """Fisher information of theta: ``|Phi A' x|^2 / sigma^2``."""
    _check_sigma(sigma_n)
    g = _entries(phi) @ (_entries(dict_derivative) @ np.asarray(x, dtype=float))
    return float(g @ g) / sigma_n**2


@dataclass
class CrbReport:
    fim_x: np.ndarray
    fisher_theta: float
    mixed_v: np.ndarray
    reduced_fim: np.ndarray
    b_breve: float
    mse_bound_x: float
    mse_bound_theta: float
    reduced_inverse: np.ndarray = field(repr=False, default=None)

    @property
    def rcrb_x(self) -> float:
        return math.sqrt(self.mse_bound_x)

    @property
    def rcrb_theta(self) -> float:
        return math.sqrt(self.mse_bound_theta)


def block_inverse(I_K, v, i_theta):
    """Inverse of ``[[I_K, v], [v^T, i_theta]]`` from the Schur complement
    ``b = i_theta - v^T I_K^-1 v``; returns ``(inverse, b, I_K^-1)``."""
    I_K = np.asarray(I_K, dtype=float)
    v = np.asarray(v, dtype=float)
    K = len(v)
    cond = np.linalg.cond(I_K)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise NumericalError(f"reduced FIM I_K is singular (condition number {cond:.3e})")
    inv_K = np.linalg.inv(I_K)
    w = inv_K @ v
    b = float(i_theta - v @ w)
    if not b > 0:
        raise NumericalError(f"information deficit: b = I(theta) - v^T I_K^-1 v = {b:.3e} <= 0")
    out = np.empty((K + 1, K + 1))
    out[:K, :K] = inv_K + np.outer(w, w) / b
    out[:K, K] = out[K, :K] = -w / b
    out[K, K] = 1.0 / b
    return out, b, inv_K


def joint_crb(x_true, support, theta, phi, dictionary, dict_derivative, sigma_n: float) -> CrbReport:
    """Constrained bound at the (exactly K-sparse) ground truth.

    ``MSE(x) >= tr(I_K^-1) + |I_K^-1 v|^2 / b`` and ``MSE(theta) >= 1 / b``.
    ``theta`` is informational only; the dictionary and its derivative are
    expected to be evaluated at it.
    """
    _check_sigma(sigma_n)
    x = np.asarray(x_true, dtype=float)
    S = np.asarray(support, dtype=int)
    if len(S) == 0 or len(set(S.tolist())) != len(S):
        raise DomainError("support must be a non-empty set of distinct indices")
    if np.any(S < 0) or np.any(S >= len(x)):
        raise DomainError("support index out of range")
    Phi = _entries(phi)
    A = _entries(dictionary)
    dA = _entries(dict_derivative)
    F = fim_x(Phi, A, sigma_n)
    B = Phi @ A
    g = Phi @ (dA @ x)  # Phi A' x
    i_theta = float(g @ g) / sigma_n**2
    u = (B.T @ g) / sigma_n**2  # u_i = x^T A'^T Phi^T Phi a_i / sigma^2
    I_K = F[np.ix_(S, S)]
    v = u[S]
    K = len(S)
    reduced = np.empty((K + 1, K + 1))
    reduced[:K, :K] = I_K
    reduced[:K, K] = reduced[K, :K] = v
    reduced[K, K] = i_theta
    inv, b, inv_K = block_inverse(I_K, v, i_theta)
    w = inv_K @ v
    mse_x = float(np.trace(inv_K) + (w @ w) / b)
    return CrbReport(F, i_theta, v, reduced, b, max(mse_x, 0.0), 1.0 / b, inv)


def scenario_crb(sc, delta_theta: float | None = None) -> CrbReport:
    """Bound at a synthesized scenario's ground truth; the derivative uses a
    backward difference with one default grid spacing unless given."""
    c = sc.cfg
    if delta_theta is None:
        delta_theta = theta_grid(c.theta_true).spacing
    A = build_dictionary(c.theta_true, c.L, c.N, c.Td, c.dt, c.pulse)
    dA = dictionary_derivative(c.theta_true, delta_theta, c.L, c.N, c.Td, c.dt, c.pulse)
    return joint_crb(sc.x_true, sc.support, c.theta_true, sc.phi, A, dA, sc.sigma_n)


@dataclass
class CrbSweep:
    """Cells of the RCRB table; each cell averages the MSE bounds over
    ``draws`` seeded scenarios before taking the square root."""

    snr_grid: tuple = (5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0, 22.5, 25.0)
    m_over_l: tuple = (0.3, 0.5)
    matrix_kinds: tuple = ("gauss", "df")
    draws: int = 10
    master_seed: int = 0
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sigma_scale: float = 1.0  # multiplies the SNR-derived noise level

    def __post_init__(self):
        if self.draws < 1:
            raise DomainError("draws must be >= 1")
        if not self.sigma_scale > 0:
            raise DomainError("sigma_scale must be positive")
        for f in self.m_over_l:
            if not 0 < f <= 1:
                raise DomainError(f"m_over_l must lie in (0, 1], got {f}")


def cell_config(base: ScenarioConfig, snr_db, m_over_l, kind) -> ScenarioConfig:
    M = max(1, int(round(m_over_l * base.L)))
    return replace(base, M=M, snr_db=float(snr_db), matrix_kind=kind)


def trial_seed(master_seed: int, trial: int) -> int:
    """Seed of trial ``trial``; every cell of a sweep reuses the same seeds,
    so cells differ only in the swept parameters."""
    return int(master_seed) + int(trial)


def rcrb_curves(sweep: CrbSweep) -> list[dict]:
    """One row per (snr, m_over_l, kind); failed cells report NaN."""
    rows = []
    cells = [(s, f, k) for k in sweep.matrix_kinds for f in sweep.m_over_l for s in sweep.snr_grid]
    for snr, frac, kind in cells:
        cfg = cell_config(sweep.scenario, snr, frac, kind)
        mx, mt = [], []
        try:
            for t in range(sweep.draws):
                sc = synthesize_scenario(cfg, trial_seed(sweep.master_seed, t))
                sc.sigma_n *= sweep.sigma_scale
                rep = scenario_crb(sc)
                mx.append(rep.mse_bound_x)
                mt.append(rep.mse_bound_theta)
            rx, rt = math.sqrt(float(np.mean(mx))), math.sqrt(float(np.mean(mt)))
        except (DomainError, NumericalError):
            rx = rt = math.nan
        rows.append({"snr_db": float(snr), "m_over_l": float(frac), "matrix_kind": kind, "rcrb_x": rx, "rcrb_theta": rt})
    return rows


def rcrb_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RCRB_COLUMNS)
    for r in rows:
        w.writerow([repr(r["snr_db"]), repr(r["m_over_l"]), r["matrix_kind"], repr(r["rcrb_x"]), repr(r["rcrb_theta"])])
    return buf.getvalue()
