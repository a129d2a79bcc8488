"""Translation-invariant parametric dictionaries.

Atom ``i`` of ``A(theta)`` holds samples of one generating pulse delayed by
``i * dt`` and sampled every ``Td`` seconds::

    A[l, i] = r(l * Td - i * dt, theta),   l = 1..L, i = 1..N

The pulse is a unit-peak Gaussian whose temporal width scales as
``1 / theta``, so ``theta`` acts as a relative receiver bandwidth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cfsbayes.errors import DomainError

#: Delay spacing between adjacent atoms [s].
DEFAULT_DT = 50e-9
#: Design sampling period [s]; twice the delay spacing so that N = 2L atoms
#: tile the L-sample observation window.
DEFAULT_TD = 100e-9
#: Reference pulse width at theta = 1 [s].
DEFAULT_W0 = 50e-9


@dataclass(frozen=True)
class GeneratingPulse:
    """Unit-peak Gaussian pulse ``exp(-0.5 * (t * theta / w0) ** 2)``."""

    base_width_w0: float = DEFAULT_W0
    pulse_kind: str = "gaussian"

    def __post_init__(self):
        if not self.base_width_w0 > 0:
            raise DomainError(f"base_width_w0 must be positive, got {self.base_width_w0}")
        if self.pulse_kind != "gaussian":
            raise DomainError(f"unsupported pulse kind {self.pulse_kind!r}")

    def __call__(self, t, theta):
        u = np.asarray(t, dtype=float) * theta / self.base_width_w0
        return np.exp(-0.5 * u * u)

    def derivative(self, t, theta):
        """Analytic d r / d theta."""
        t = np.asarray(t, dtype=float)
        return -(t * t * theta / self.base_width_w0**2) * self(t, theta)


def generating_pulse(t, theta: float, cfg: GeneratingPulse | None = None):
    """Evaluate the generating pulse at time(s) ``t`` for bandwidth ``theta``."""
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta}")
    cfg = cfg or GeneratingPulse()
    return cfg(t, theta)


@dataclass(frozen=True)
class ParametricDictionary:
    atoms: np.ndarray
    theta: float
    design_period_Td: float
    delay_spacing_dt: float

    @property
    def L(self) -> int:
        return self.atoms.shape[0]

    @property
    def N(self) -> int:
        return self.atoms.shape[1]


def _delay_matrix(L: int, N: int, Td: float, dt: float) -> np.ndarray:
    rows = np.arange(1, L + 1, dtype=float)[:, None] * Td
    cols = np.arange(1, N + 1, dtype=float)[None, :] * dt
    return rows - cols


def _check_dims(L, N, Td, dt):
    if int(L) < 1 or int(N) < 1:
        raise DomainError(f"L and N must be >= 1, got L={L}, N={N}")
    if not (Td > 0 and dt > 0):
        raise DomainError(f"Td and dt must be positive, got Td={Td}, dt={dt}")


def build_dictionary(
    theta: float,
    L: int,
    N: int,
    Td: float = DEFAULT_TD,
    dt: float = DEFAULT_DT,
    cfg: GeneratingPulse | None = None,
) -> ParametricDictionary:
    _check_dims(L, N, Td, dt)
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta}")
    cfg = cfg or GeneratingPulse()
    atoms = np.asarray(cfg(_delay_matrix(L, N, Td, dt), theta), dtype=float)
    return ParametricDictionary(atoms, float(theta), Td, dt)


def dictionary_derivative(
    theta0: float,
    delta_theta: float,
    L: int,
    N: int,
    Td: float = DEFAULT_TD,
    dt: float = DEFAULT_DT,
    cfg: GeneratingPulse | None = None,
) -> np.ndarray:
    """Backward-difference approximation of dA/dtheta at ``theta0``."""
    if not delta_theta > 0:
        raise DomainError(f"delta_theta must be positive, got {delta_theta}")
    if delta_theta < 64 * np.finfo(float).eps * max(abs(theta0), 1.0):
        raise DomainError(f"delta_theta={delta_theta} underflows relative to theta0={theta0}")
    if not theta0 - delta_theta > 0:
        raise DomainError("theta0 - delta_theta must stay positive")
    hi = build_dictionary(theta0, L, N, Td, dt, cfg).atoms
    lo = build_dictionary(theta0 - delta_theta, L, N, Td, dt, cfg).atoms
    return (hi - lo) / delta_theta


def analytic_dictionary_derivative(theta, L, N, Td=DEFAULT_TD, dt=DEFAULT_DT, cfg=None):
    cfg = cfg or GeneratingPulse()
    return cfg.derivative(_delay_matrix(L, N, Td, dt), theta)


@dataclass(frozen=True)
class ThetaGrid:
    values: np.ndarray
    theta_min: float
    theta_max: float

    def __len__(self):
        return len(self.values)

    @property
    def spacing(self) -> float:
        return float(self.values[1] - self.values[0]) if len(self.values) > 1 else 0.0

    def nearest_index(self, theta: float) -> int:
        """Index of the grid value closest to ``theta`` (ties -> smaller)."""
        d = np.abs(self.values - theta)
        return int(np.flatnonzero(d <= d.min() * (1 + 1e-12) + 1e-300)[0])


def theta_grid(theta_true: float = 1.0, lo_frac: float = 0.3, hi_frac: float = 1.5, R: int = 100) -> ThetaGrid:
    if not 0 < lo_frac < hi_frac:
        raise DomainError(f"need 0 < lo_frac < hi_frac, got {lo_frac}, {hi_frac}")
    if R < 2:
        raise DomainError(f"R must be >= 2, got {R}")
    lo, hi = lo_frac * theta_true, hi_frac * theta_true
    return ThetaGrid(np.linspace(lo, hi, R), lo, hi)


@dataclass
class DictionaryBank:
    """Dictionaries and projected dictionaries ``Phi @ A(theta_r)`` for every
    grid value, computed once and treated as read-only afterwards."""

    grid: ThetaGrid
    atoms: np.ndarray  # (R, L, N)
    projected: np.ndarray  # (R, M, N)
    Td: float = DEFAULT_TD
    dt: float = DEFAULT_DT
    pulse: GeneratingPulse = field(default_factory=GeneratingPulse)

    @classmethod
    def build(cls, grid: ThetaGrid, phi: np.ndarray, N: int, Td=DEFAULT_TD, dt=DEFAULT_DT, pulse=None):
        pulse = pulse or GeneratingPulse()
        L = phi.shape[1]
        delays = _delay_matrix(L, N, Td, dt)
        atoms = np.stack([pulse(delays, th) for th in grid.values])
        projected = np.einsum("ml,rln->rmn", phi, atoms, optimize=True)
        for arr in (atoms, projected):
            arr.setflags(write=False)
        return cls(grid, atoms, projected, Td, dt, pulse)

    def __len__(self):
        return len(self.grid)
