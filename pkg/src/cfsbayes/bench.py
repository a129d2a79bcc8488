"""Monte Carlo benchmark harness.

Trial t of every cell is seeded with ``master_seed + t`` and
results are gathered into indexed slots, so the output does not depend on
the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cfsbayes.config import RunConfig
from cfsbayes.crb import cell_config, scenario_crb, trial_seed
from cfsbayes.dict_learning import s1_estimate, s2_estimate
from cfsbayes.errors import DomainError, NumericalError
from cfsbayes.sensing import synthesize_scenario

log = logging.getLogger(__name__)

KEY_COLUMNS = ("strategy", "matrix_kind", "m_over_l", "snr_db")
VALUE_COLUMNS = ("rmse_s", "rmse_x_support", "rmse_theta", "rmse_sigma", "rcrb_x", "rcrb_theta")
BENCH_COLUMNS = KEY_COLUMNS + VALUE_COLUMNS + ("n_trials_ok", "trials", "degraded")
DEGRADED_FRACTION = 0.2

ESTIMATORS = {"s1": s1_estimate, "s2": s2_estimate}


def rmse(estimates, truth) -> float:
    """``sqrt(mean_t |v_t - v|^2)`` over trials."""
    truth = np.atleast_1d(np.asarray(truth, dtype=float))
    if len(estimates) == 0:
        raise DomainError("rmse needs at least one estimate")
    est = [np.atleast_1d(np.asarray(e, dtype=float)) for e in estimates]
    if any(e.shape != truth.shape for e in est):
        raise DomainError(f"dimension mismatch against truth of shape {truth.shape}")
    return math.sqrt(float(np.mean([np.sum((e - truth) ** 2) for e in est])))


@dataclass
class TrialOutcome:
    ok: bool
    support: np.ndarray | None = None
    true_support: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    theta_hat: float = math.nan
    true_theta: float = math.nan
    sigma_hat: float = math.nan
    sigma_true: float = math.nan
    crb_x: float = math.nan  # MSE bounds at the trial's ground truth
    crb_theta: float = math.nan
    error: str = ""


def run_trial(task) -> TrialOutcome:
    """One seeded trial; failures are captured, never raised."""
    strategy, scen_cfg, run_cfg, seed = task
    sc = synthesize_scenario(scen_cfg, seed)
    try:
        rep = scenario_crb(sc)
        cx, ct = rep.mse_bound_x, rep.mse_bound_theta
    except (DomainError, NumericalError):
        cx = ct = math.nan
    est_cfg = run_cfg.estimation_config(scen_cfg)
    try:
        r = ESTIMATORS[strategy](sc.y, sc.phi, est_cfg, seed=seed)
    except (DomainError, NumericalError, FloatingPointError, AssertionError) as exc:
        log.warning("trial seed=%d failed: %s", seed, exc)
        return TrialOutcome(False, true_support=sc.support, true_theta=scen_cfg.theta_true, sigma_true=sc.sigma_n,
                            crb_x=cx, crb_theta=ct, error=f"{type(exc).__name__}: {exc}")
    return TrialOutcome(True, r.support, sc.support, r.amplitudes, r.theta_hat, scen_cfg.theta_true,
                        r.sigma_hat, sc.sigma_n, cx, ct)


@dataclass
class RmseTable:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for r in self.rows:
            w.writerow([r["strategy"], r["matrix_kind"], repr(r["m_over_l"]), repr(r["snr_db"])]
                       + [repr(r[c]) for c in VALUE_COLUMNS]
                       + [r["n_trials_ok"], r["trials"], int(r["degraded"])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RmseTable":
        rd = csv.DictReader(io.StringIO(text))
        if tuple(rd.fieldnames or ()) != BENCH_COLUMNS:
            raise DomainError(f"unexpected header {rd.fieldnames}")
        rows = []
        for r in rd:
            row = {"strategy": r["strategy"], "matrix_kind": r["matrix_kind"],
                   "m_over_l": float(r["m_over_l"]), "snr_db": float(r["snr_db"])}
            row.update({c: float(r[c]) for c in VALUE_COLUMNS})
            row.update(n_trials_ok=int(r["n_trials_ok"]), trials=int(r["trials"]), degraded=bool(int(r["degraded"])))
            rows.append(row)
        return cls(rows)

    @property
    def degraded(self) -> bool:
        return any(r["degraded"] for r in self.rows)

    def plot_data(self) -> dict:
        """One CSV per (strategy, kind, m_over_l) series, SNR on the x axis."""
        out = {}
        for r in self.rows:
            name = f"rmse_{r['strategy']}_{r['matrix_kind']}_ml{round(100 * r['m_over_l'])}.csv"
            out.setdefault(name, ["snr_db," + ",".join(VALUE_COLUMNS)])
            out[name].append(",".join([repr(r["snr_db"])] + [repr(r[c]) for c in VALUE_COLUMNS]))
        return {k: "\n".join(v) + "\n" for k, v in out.items()}


def summarize_cell(outcomes, amplitude: float) -> dict:
    ok = [o for o in outcomes if o.ok]
    nan = math.nan
    cx = [o.crb_x for o in outcomes if np.isfinite(o.crb_x)]
    ct = [o.crb_theta for o in outcomes if np.isfinite(o.crb_theta)]
    row = {
        "rcrb_x": math.sqrt(float(np.mean(cx))) if cx else nan,
        "rcrb_theta": math.sqrt(float(np.mean(ct))) if ct else nan,
        "n_trials_ok": len(ok),
        "trials": len(outcomes),
        "degraded": len(outcomes) - len(ok) > DEGRADED_FRACTION * len(outcomes),
    }
    if ok:
        K = len(ok[0].true_support)
        zero_k = np.zeros(K)
        row["rmse_s"] = rmse([np.sort(o.support) - np.sort(o.true_support) for o in ok], zero_k)
        row["rmse_x_support"] = rmse([o.amplitudes for o in ok], np.full(K, amplitude))
        row["rmse_theta"] = rmse([o.theta_hat - o.true_theta for o in ok], 0.0)
        row["rmse_sigma"] = rmse([o.sigma_hat - o.sigma_true for o in ok], 0.0)
    else:
        row.update(rmse_s=nan, rmse_x_support=nan, rmse_theta=nan, rmse_sigma=nan)
    return row


def bench_tasks(cfg: RunConfig):
    """``(key, task)`` pairs in output order. Seeds depend on the trial
    index only, so both strategies and all cells see the same draws."""
    b = cfg.bench
    out = []
    cells = [(k, f, s) for k in b.matrix_kinds for f in b.m_over_l for s in b.snr_grid]
    for strategy in b.strategies:
        for kind, frac, snr in cells:
            scen = cell_config(cfg.scenario, snr, frac, kind)
            for t in range(b.trials):
                out.append(((strategy, kind, frac, snr), (strategy, scen, cfg, trial_seed(b.master_seed, t))))
    return out


def run_bench(cfg: RunConfig, threads: int = 1) -> RmseTable:
    if threads < 1:
        raise DomainError("threads must be >= 1")
    tasks = bench_tasks(cfg)
    if threads == 1:
        outcomes = [run_trial(t) for _, t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_trial, [t for _, t in tasks]))
    rows = []
    i = 0
    n = cfg.bench.trials
    while i < len(tasks):
        strategy, kind, frac, snr = tasks[i][0]
        row = {"strategy": strategy, "matrix_kind": kind, "m_over_l": float(frac), "snr_db": float(snr)}
        row.update(summarize_cell(outcomes[i:i + n], cfg.scenario.amplitude))
        rows.append(row)
        i += n
    return RmseTable(rows)
