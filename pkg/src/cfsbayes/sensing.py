"""Measurement scenarios: CS matrices, ground truth, noise and a plain-text
replay format.

Indices are zero-based throughout the package.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from cfsbayes.dictionary import (
    DEFAULT_DT,
    DEFAULT_TD,
    DEFAULT_W0,
    GeneratingPulse,
    build_dictionary,
)
from cfsbayes.errors import DomainError
from cfsbayes.rng import make_rng

MATRIX_KINDS = ("gauss", "df")


@dataclass(frozen=True)
class CsMatrix:
    entries: np.ndarray
    kind: str
    seed: int

    @property
    def shape(self):
        return self.entries.shape


def gauss_matrix(M: int, L: int, seed: int) -> CsMatrix:
    """i.i.d. N(0, 1) projections."""
    if M < 1 or L < 1:
        raise DomainError(f"M and L must be >= 1, got {M}, {L}")
    rng = make_rng(seed, 0)
    return CsMatrix(rng.standard_normal((M, L)), "gauss", int(seed))


def df_matrix(M: int, L: int, seed: int) -> CsMatrix:
    """Sparse ternary projections: -1, 0, +1 with probabilities 1/6, 2/3, 1/6."""
    if M < 1 or L < 1:
        raise DomainError(f"M and L must be >= 1, got {M}, {L}")
    rng = make_rng(seed, 0)
    entries = rng.choice(np.array([-1.0, 0.0, 1.0]), size=(M, L), p=[1 / 6, 2 / 3, 1 / 6])
    return CsMatrix(entries, "df", int(seed))


def cs_matrix(kind: str, M: int, L: int, seed: int) -> CsMatrix:
    if kind == "gauss":
        return gauss_matrix(M, L, seed)
    if kind == "df":
        return df_matrix(M, L, seed)
    raise DomainError(f"unknown matrix kind {kind!r}; expected one of {MATRIX_KINDS}")


@dataclass(frozen=True)
class ScenarioConfig:
    M: int = 67
    L: int = 134
    N: int = 268
    support: tuple = (60, 64, 180)
    amplitude: float = 1.0
    theta_true: float = 1.0
    snr_db: float = 20.0
    matrix_kind: str = "gauss"
    Td: float = DEFAULT_TD
    dt: float = DEFAULT_DT
    w0: float = DEFAULT_W0
    # Optional continuous reflection delays [s]; when set, the clean signal is
    # synthesized off-grid and ``support`` is replaced by the nearest atoms.
    delays: tuple | None = None

    @property
    def K(self) -> int:
        return len(self.delays) if self.delays is not None else len(self.support)

    @property
    def pulse(self) -> GeneratingPulse:
        return GeneratingPulse(self.w0)


@dataclass
class MeasurementScenario:
    cfg: ScenarioConfig
    support: np.ndarray
    x_true: np.ndarray
    phi: CsMatrix
    y: np.ndarray
    sigma_n: float
    seed: int
    clean: np.ndarray = field(repr=False, default=None)

    @property
    def M(self):
        return self.cfg.M

    @property
    def L(self):
        return self.cfg.L

    @property
    def N(self):
        return self.cfg.N

    @property
    def K(self):
        return len(self.support)

    @property
    def true_theta(self):
        return self.cfg.theta_true

    @property
    def snr_db(self):
        return self.cfg.snr_db

    @property
    def amplitude(self):
        return self.cfg.amplitude


def _validate(cfg: ScenarioConfig):
    if cfg.K < 1:
        raise DomainError("support must not be empty")
    if not cfg.amplitude > 0:
        raise DomainError(f"amplitude must be positive, got {cfg.amplitude}")
    if not cfg.theta_true > 0:
        raise DomainError(f"theta_true must be positive, got {cfg.theta_true}")
    if math.isnan(cfg.snr_db) or cfg.snr_db == -math.inf:
        raise DomainError(f"invalid snr_db {cfg.snr_db}")
    if cfg.delays is None:
        s = np.asarray(cfg.support, dtype=int)
        if len(set(s.tolist())) != len(s):
            raise DomainError(f"support indices must be distinct, got {cfg.support}")
        if s.min() < 0 or s.max() >= cfg.N:
            raise DomainError(f"support indices must lie in [0, {cfg.N})")


def noise_sigma(clean: np.ndarray, snr_db: float) -> float:
    """Noise standard deviation giving ``10 log10(|z|^2 / (M sigma^2)) = snr_db``."""
    if snr_db == math.inf:
        return 0.0
    M = clean.shape[0]
    return float(np.sqrt(clean @ clean / (M * 10.0 ** (snr_db / 10.0))))


def synthesize_scenario(cfg: ScenarioConfig = ScenarioConfig(), seed: int = 0) -> MeasurementScenario:
    """Draw Phi and noise for ``cfg``; ``snr_db=inf`` gives noiseless data."""
    _validate(cfg)
    phi = cs_matrix(cfg.matrix_kind, cfg.M, cfg.L, seed)
    if cfg.delays is None:
        support = np.sort(np.asarray(cfg.support, dtype=int))
        x = np.zeros(cfg.N)
        x[support] = cfg.amplitude
        A = build_dictionary(cfg.theta_true, cfg.L, cfg.N, cfg.Td, cfg.dt, cfg.pulse).atoms
        clean = phi.entries @ (A @ x)
    else:
        delays = np.sort(np.asarray(cfg.delays, dtype=float))
        # atom i (zero-based) sits at delay (i + 1) * dt
        support = np.clip(np.rint(delays / cfg.dt).astype(int) - 1, 0, cfg.N - 1)
        if len(set(support.tolist())) != len(support):
            raise DomainError("off-grid delays map onto coinciding atoms")
        x = np.zeros(cfg.N)
        x[support] = cfg.amplitude
        t = np.arange(1, cfg.L + 1, dtype=float)[:, None] * cfg.Td - delays[None, :]
        clean = phi.entries @ (cfg.pulse(t, cfg.theta_true) @ np.full(len(delays), cfg.amplitude))
    sigma = noise_sigma(clean, cfg.snr_db)
    noise = make_rng(seed, 1).standard_normal(cfg.M) * sigma
    return MeasurementScenario(cfg, support, x, phi, clean + noise, sigma, int(seed), clean)


# -- plain-text replay format -------------------------------------------------
#
#   # cfsbayes scenario v1
#   key=value            (one per line; floats written with repr for exact replay)
#   [phi]
#   M lines of L comma-separated values
#   [y]
#   M lines, one value each

_HEADER = "# cfsbayes scenario v1"


def _fmt(v: float) -> str:
    return repr(float(v))


def dumps_scenario(sc: MeasurementScenario) -> str:
    c = sc.cfg
    head = {
        "M": c.M,
        "L": c.L,
        "N": c.N,
        "K": sc.K,
        "support": ",".join(str(i) for i in sc.support),
        "amplitude": _fmt(c.amplitude),
        "theta_true": _fmt(c.theta_true),
        "snr_db": _fmt(c.snr_db),
        "sigma_n": _fmt(sc.sigma_n),
        "matrix_kind": c.matrix_kind,
        "seed": sc.seed,
        "Td": _fmt(c.Td),
        "dt": _fmt(c.dt),
        "w0": _fmt(c.w0),
        "delays": "" if c.delays is None else ",".join(_fmt(d) for d in c.delays),
    }
    buf = io.StringIO()
    buf.write(_HEADER + "\n")
    for k, v in head.items():
        buf.write(f"{k}={v}\n")
    buf.write("[phi]\n")
    for row in sc.phi.entries:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    buf.write("[y]\n")
    for v in sc.y:
        buf.write(_fmt(v) + "\n")
    return buf.getvalue()


def loads_scenario(text: str) -> MeasurementScenario:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise DomainError("not a cfsbayes scenario file (line 1)")
    head, block, phi_rows, y_vals = {}, None, [], []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line in ("[phi]", "[y]"):
            block = line
            continue
        try:
            if block is None:
                k, _, v = line.partition("=")
                head[k.strip()] = v.strip()
            elif block == "[phi]":
                phi_rows.append([float(v) for v in line.split(",")])
            else:
                y_vals.append(float(line))
        except ValueError as exc:
            raise DomainError(f"line {lineno}: {exc}") from None
    try:
        delays = tuple(float(d) for d in head["delays"].split(",")) if head.get("delays") else None
        support = tuple(int(i) for i in head["support"].split(","))
        cfg = ScenarioConfig(
            M=int(head["M"]),
            L=int(head["L"]),
            N=int(head["N"]),
            support=support,
            amplitude=float(head["amplitude"]),
            theta_true=float(head["theta_true"]),
            snr_db=float(head["snr_db"]),
            matrix_kind=head["matrix_kind"],
            Td=float(head["Td"]),
            dt=float(head["dt"]),
            w0=float(head["w0"]),
            delays=delays,
        )
        seed, sigma_n = int(head["seed"]), float(head["sigma_n"])
    except KeyError as exc:
        raise DomainError(f"scenario header is missing key {exc}") from None
    except ValueError as exc:
        raise DomainError(f"bad scenario header value: {exc}") from None
    phi = np.array(phi_rows, dtype=float)
    y = np.array(y_vals, dtype=float)
    if phi.shape != (cfg.M, cfg.L) or y.shape != (cfg.M,):
        raise DomainError(f"block shapes {phi.shape}, {y.shape} disagree with header M={cfg.M}, L={cfg.L}")
    x = np.zeros(cfg.N)
    x[list(support)] = cfg.amplitude
    return MeasurementScenario(
        cfg, np.asarray(support), x, CsMatrix(phi, cfg.matrix_kind, seed), y, sigma_n, seed,
    )


def write_scenario(path, sc: MeasurementScenario) -> None:
    Path(path).write_text(dumps_scenario(sc))


def read_scenario(path) -> MeasurementScenario:
    return loads_scenario(Path(path).read_text())


def with_snr(cfg: ScenarioConfig, snr_db: float) -> ScenarioConfig:
    return replace(cfg, snr_db=snr_db)
