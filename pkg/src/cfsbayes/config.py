"""Run configuration files.

Flat ``key = value`` text under bracketed section headers; ``#`` and ``;``
start comments. Lists are comma separated. Every key maps onto a field of
the scenario, estimation, sampler, prior, EM, CRB or benchmark settings;
unknown sections or keys are errors that cite the offending line.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from cfsbayes.dict_learning import EmConfig, EstimationConfig
from cfsbayes.dictionary import theta_grid
from cfsbayes.errors import ConfigError, DomainError
from cfsbayes.sampler import HmcConfig, SamplerConfig
from cfsbayes.sensing import MATRIX_KINDS, ScenarioConfig
from cfsbayes.sparse_prior import HyperPriorConfig, KernelConfig

STRATEGIES = ("s1", "s2")


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.split(",") if v.strip())


def _strs(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _opt(conv):
    def f(s):
        return None if s.strip().lower() in ("", "none") else conv(s)

    return f


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


SCHEMA = {
    "scenario": {
        "M": int, "L": int, "N": int, "support": _ints, "amplitude": float, "theta_true": float,
        "snr_db": float, "matrix_kind": str, "Td": float, "dt": float, "w0": float,
        "delays": _opt(_floats),
    },
    "bench": {
        "snr_grid": _floats, "m_over_l": _floats, "matrix_kinds": _strs, "strategies": _strs,
        "trials": int, "master_seed": int,
    },
    "estimation": {
        "nu": float, "burst_samples": int, "burst_burn": int, "peak_rel_threshold": float,
        "peak_merge_radius": int,
    },
    "em": {"d_max": int, "L_MC": int, "reburn": int, "lo_frac": float, "hi_frac": float, "R": int},
    "sampler": {
        "burn_in": _opt(int), "step_size": _opt(float), "leapfrog_steps": _opt(int),
        "max_tree_depth": int, "adapt_target_accept": float, "adapt_mass": _bool,
    },
    "prior": {
        "a": float, "b": float, "a1": float, "b1": float, "d1": float, "a2": float, "b2": float,
        "a_sigma": float, "b_sigma": float, "r_exp": float, "n_x": float,
    },
    "crb": {"draws": int, "sigma_scale": float},
}


@dataclass
class BenchSettings:
    snr_grid: tuple = (5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0, 22.5, 25.0)
    m_over_l: tuple = (0.5,)
    matrix_kinds: tuple = ("gauss",)
    strategies: tuple = ("s2",)
    trials: int = 20
    master_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError("trials must be >= 1")
        if not self.snr_grid:
            raise DomainError("snr_grid must not be empty")
        for f in self.m_over_l:
            if not 0 < f <= 1:
                raise DomainError(f"m_over_l must lie in (0, 1], got {f}")
        for k in self.matrix_kinds:
            if k not in MATRIX_KINDS:
                raise DomainError(f"unknown matrix kind {k!r}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise DomainError(f"unknown strategy {s!r}")


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    bench: BenchSettings = field(default_factory=BenchSettings)
    estimation: dict = field(default_factory=dict)
    em: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    crb: dict = field(default_factory=dict)

    def estimation_config(self, scenario: ScenarioConfig | None = None) -> EstimationConfig:
        """Estimator settings matched to ``scenario`` (dimensions, pulse, K)."""
        sc = scenario or self.scenario
        em = dict(self.em)
        grid = theta_grid(sc.theta_true, em.pop("lo_frac", 0.3), em.pop("hi_frac", 1.5), em.pop("R", 100))
        em_cfg = EmConfig(theta_grid=grid, **em)
        pr = dict(self.prior)
        kernel = KernelConfig(**{k: pr.pop(k) for k in ("r_exp", "n_x") if k in pr})
        sm = dict(self.sampler)
        burn_in = sm.pop("burn_in", None)
        hmc = HmcConfig(**sm)
        sampler = SamplerConfig(em_cfg.L_MC, burn_in, hmc, kernel, HyperPriorConfig(**pr))
        return EstimationConfig(
            K=sc.K, N=sc.N, em=em_cfg, sampler=sampler, pulse=sc.pulse, Td=sc.Td, dt=sc.dt, **self.estimation
        )


def _line_of(text: str, section: str | None, key: str | None = None) -> int | None:
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section:
            k = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            if k == key:
                return no
    return None


def loads_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(str(exc).splitlines()[0], line) from exc
    parsed = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", _line_of(text, sec))
        out = {}
        for key, raw in cp.items(sec):
            conv = SCHEMA[sec].get(key)
            if conv is None:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", _line_of(text, sec, key))
            try:
                out[key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", _line_of(text, sec, key)) from exc
        parsed[sec] = out
    try:
        scenario = replace(ScenarioConfig(), **parsed.get("scenario", {}))
        cfg = RunConfig(
            scenario, BenchSettings(**parsed.get("bench", {})),
            parsed.get("estimation", {}), parsed.get("em", {}), parsed.get("sampler", {}),
            parsed.get("prior", {}), parsed.get("crb", {}),
        )
        cfg.estimation_config()  # validate the sub-configs eagerly
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def read_config(path) -> RunConfig:
    return loads_config(Path(path).read_text())


def dumps_config(cfg: RunConfig) -> str:
    """Inverse of :func:`loads_config` for the fields that were set."""

    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, (tuple, list)):
            return ", ".join(fmt(e) for e in v)
        if isinstance(v, float):
            return repr(v)
        return str(v).lower() if isinstance(v, bool) else str(v)

    lines = ["[scenario]"]
    lines += [f"{f.name} = {fmt(getattr(cfg.scenario, f.name))}" for f in fields(ScenarioConfig)]
    lines += ["", "[bench]"]
    lines += [f"{f.name} = {fmt(getattr(cfg.bench, f.name))}" for f in fields(BenchSettings)]
    for sec in ("estimation", "em", "sampler", "prior", "crb"):
        d = getattr(cfg, sec)
        if d:
            lines += ["", f"[{sec}]"] + [f"{k} = {fmt(v)}" for k, v in d.items()]
    return "\n".join(lines) + "\n"
