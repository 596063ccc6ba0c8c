"""Repeated-sampling coverage study and Kaplan-Meier curves."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._rng import stream
from .dataset import Dataset, ObservedProfile, standardize_covariates, without_covariates
from .diagnostics import split_rhat
from .errors import NumericError, ValidationError
from .estimands import Grids, McConfig, summarize_posterior
from .likelihood import PriorConfig
from .sampler import SamplerConfig, run_chains
from .simulator import ScenarioConfig, simulate, true_estimands

log = logging.getLogger(__name__)

COLUMNS = ("itt", "ace_nd", "ace_d", "ace_d(1)", "ace_d(2)", "ace_d(3)", "ace_d(4)")
HEADERS = {"itt": "ITT", "ace_nd": "ACE_ND", "ace_d": "ACE_D", "ace_d(1)": "ACE_D(1)",
           "ace_d(2)": "ACE_D(2)", "ace_d(3)": "ACE_D(3)", "ace_d(4)": "ACE_D(4)"}
COVERAGE_D = (1.0, 2.0, 3.0, 4.0)

# desk-scale fit for coverage replicates
COVERAGE_SAMPLER = SamplerConfig(iters=12000, burnin=4000, thin=10, chains=2, store_latents=False)


@dataclass
class ReplicateResult:
    replicate: int
    status: str
    covered: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)
    estimate: dict = field(default_factory=dict)
    hpd: dict = field(default_factory=dict)
    acceptance: float = math.nan
    rhat_max: float = math.nan
    seconds: float = 0.0
    message: str = ""


@dataclass
class CoverageRow:
    scenario: str
    covariates: bool
    cells: dict
    completed: int
    failed: int
    bias: dict
    replicates: list

    @property
    def label(self) -> str:
        return f"{self.scenario} {'with' if self.covariates else 'w/o'} covariates"


@dataclass
class CoverageTable:
    """Coverage of 95% HPD intervals by scenario and covariate usage.

    Cells are shares of completed replicates whose interval covers the
    replicate's true value; failed replicates are excluded and counted.
    """
    rows: list

    def cell(self, scenario: str, covariates: bool, column: str) -> float:
        for r in self.rows:
            if r.scenario == scenario and r.covariates == covariates:
                return r.cells[column]
        raise KeyError((scenario, covariates))

    def row(self, scenario: str, covariates: bool) -> CoverageRow:
        for r in self.rows:
            if r.scenario == scenario and r.covariates == covariates:
                return r
        raise KeyError((scenario, covariates))

    def __add__(self, other: "CoverageTable") -> "CoverageTable":
        return CoverageTable(self.rows + other.rows)

    def write(self, directory) -> list[Path]:
        """``coverage.csv`` (scenario x covariates rows, one column per estimand), ``bias.csv`` and ``replicates.csv``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "coverage.csv", out / "bias.csv", out / "replicates.csv"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "covariates"] + [HEADERS[c] for c in COLUMNS] + ["replicates", "failed"])
            for r in self.rows:
                w.writerow([r.scenario, "with" if r.covariates else "w/o"]
                           + [_fmt(r.cells[c]) for c in COLUMNS] + [r.completed, r.failed])
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "covariates"] + [HEADERS[c] for c in COLUMNS])
            for r in self.rows:
                w.writerow([r.scenario, "with" if r.covariates else "w/o"] + [_fmt(r.bias[c]) for c in COLUMNS])
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["scenario", "covariates", "replicate", "status", "acceptance", "rhat_max", "seconds"]
            for c in COLUMNS:
                head += [f"{c}_true", f"{c}_mean", f"{c}_lo", f"{c}_hi", f"{c}_covered"]
            w.writerow(head + ["message"])
            for r in self.rows:
                for rep in r.replicates:
                    line = [r.scenario, int(r.covariates), rep.replicate, rep.status, _fmt(rep.acceptance),
                            _fmt(rep.rhat_max), f"{rep.seconds:.1f}"]
                    for c in COLUMNS:
                        lo, hi = rep.hpd.get(c, (math.nan, math.nan))
                        cov = rep.covered.get(c)
                        line += [_fmt(rep.truth.get(c, math.nan)), _fmt(rep.estimate.get(c, math.nan)),
                                 _fmt(lo), _fmt(hi), "" if cov is None else int(cov)]
                    w.writerow(line + [rep.message])
        return paths


def _fmt(x) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _truths(cd, cfg, grids: Grids) -> dict:
    tv = true_estimands(cd, cfg, d_grid=grids.d, y_grid=[1.0], dce_d_grid=[1.0])
    t = {k: tv.finite[k] for k in ("itt", "ace_nd", "ace_d")}
    for d in COVERAGE_D:
        t[f"ace_d({d:g})"] = tv.ace_d_at(d)
    return t


def run_replicate(cfg: ScenarioConfig, sampler_cfg: SamplerConfig, replicate: int, use_covariates: bool,
                  master_seed: int, prior: PriorConfig = PriorConfig(), mc_cfg: McConfig = McConfig(),
                  grids: Grids = Grids(y=(1.0,), dce_d=(1.0,))) -> ReplicateResult:
    """Simulate, fit and check HPD coverage for one replicate.

    Fit failures (numeric errors) are returned with ``status="failed"``.
    """
    t0 = time.perf_counter()
    cd, ds = simulate(cfg, seed=master_seed, replicate=replicate)
    truth = _truths(cd, cfg, grids)
    ds_fit = standardize_covariates(ds)
    if not use_covariates:
        ds_fit = without_covariates(ds_fit)
    fit_seed = int(stream(master_seed, "fit", replicate).integers(2 ** 62))
    scfg = replace(sampler_cfg, seed=fit_seed, jobs=1)
    try:
        chains = run_chains(ds_fit, prior, scfg)
        rep = summarize_posterior(chains, ds_fit.X, grids, replace(mc_cfg, seed=fit_seed), curves=False)
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as e:
        log.warning("replicate %d failed: %s", replicate, e)
        return ReplicateResult(replicate, "failed", truth=truth, seconds=time.perf_counter() - t0, message=str(e))
    est, hpd, covered = {}, {}, {}
    for c in COLUMNS:
        if c.startswith("ace_d("):
            m, h = rep.ace_d_at(float(c[6:-1]))
        else:
            m, h = rep.scalar(c)
        est[c], hpd[c] = m, (h.lower, h.upper)
        covered[c] = None if math.isnan(truth[c]) else bool(h.covers(truth[c]))
    acc = float(np.mean([np.mean(list(ch.acceptance.values())) for ch in chains]))
    rhat = max((split_rhat([ch.draws[:, j] for ch in chains]) for j in range(chains[0].draws.shape[1])),
               default=math.nan) if len(chains) > 1 else math.nan
    return ReplicateResult(replicate, "ok", covered, truth, est, hpd, acc, rhat, time.perf_counter() - t0)


def _run_packed(args):
    return run_replicate(*args)


def run_coverage(scenario_cfg: ScenarioConfig, sampler_cfg: SamplerConfig = COVERAGE_SAMPLER,
                 replicates: int = 50, use_covariates: bool = True, master_seed: int = 0,
                 prior: PriorConfig = PriorConfig(), mc_cfg: McConfig = McConfig(), jobs: int = 1,
                 progress=None) -> CoverageTable:
    """Coverage of 95% HPD intervals over simulated replicates.

    Each replicate draws its data and its fit seed from named streams of
    ``master_seed``, so cells are reproducible whatever ``jobs`` is.
    ``use_covariates=False`` fits intercept-only blocks (K = 0).
    """
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    args = [(scenario_cfg, sampler_cfg, r, use_covariates, master_seed, prior, mc_cfg) for r in range(replicates)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_packed, args))
    else:
        results = []
        for a in args:
            results.append(_run_packed(a))
            if progress is not None:
                progress(results[-1])
    results.sort(key=lambda r: r.replicate)
    ok = [r for r in results if r.status == "ok"]
    failed = len(results) - len(ok)
    if failed:
        log.warning("%d of %d replicates failed and are excluded", failed, len(results))
    cells, bias = {}, {}
    for c in COLUMNS:
        flags = [r.covered[c] for r in ok if r.covered.get(c) is not None]
        cells[c] = float(np.mean(flags)) if flags else math.nan
        diffs = [r.estimate[c] - r.truth[c] for r in ok if np.isfinite(r.truth[c])]
        bias[c] = float(np.mean(diffs)) if diffs else math.nan
    row = CoverageRow(scenario_cfg.scenario, use_covariates, cells, len(ok), failed, bias, results)
    return CoverageTable([row])


# ---------------------------------------------------------------------------
# Kaplan-Meier
# ---------------------------------------------------------------------------

@dataclass
class KmCurve:
    """Product-limit survival estimate as a right-continuous step function.

    ``time[k]`` are the distinct event times; ``survival[k]`` is the estimate
    just after ``time[k]``, ``at_risk[k]`` and ``events[k]`` the counts there.
    """
    time: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    n: int
    label: str = ""

    def at(self, t):
        """Survival at time(s) ``t``."""
        k = np.searchsorted(self.time, np.asarray(t, dtype=float), side="right")
        s = np.concatenate([[1.0], self.survival])
        return s[k]

    def rows(self):
        yield [0.0, 1.0, self.n, 0]
        for t, s, r, e in zip(self.time, self.survival, self.at_risk, self.events):
            yield [float(t), float(s), int(r), int(e)]

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "survival", "at_risk", "events"])
            for r in self.rows():
                w.writerow([repr(r[0]), repr(r[1]), r[2], r[3]])


def kaplan_meier(time_, event, label: str = "") -> KmCurve:
    """Product-limit estimator; events at a tied time precede censorings."""
    t = np.asarray(time_, dtype=float)
    e = np.asarray(event).astype(bool)
    if t.size == 0:
        raise ValidationError("Kaplan-Meier needs at least one unit")
    et = np.unique(t[e])
    n_risk = np.array([(t >= u).sum() for u in et], dtype=int)
    d = np.array([(t[e] == u).sum() for u in et], dtype=int)
    surv = np.cumprod(1.0 - d / n_risk) if et.size else np.empty(0)
    return KmCurve(et, surv, n_risk, d, int(t.size), label)


def km_curve(ds: Dataset, arm: int, subset=None) -> KmCurve:
    """Kaplan-Meier curve of ``(y_tilde, event)`` in one arm.

    Parameters
    ----------
    subset : None, bool mask, or ObservedProfile / profile name
        Optional further filter, e.g. ``"D"`` for observed discontinuers.
    """
    if arm not in (0, 1):
        raise ValidationError("arm must be 0 or 1")
    mask = ds.z == arm
    label = "treated" if arm == 1 else "control"
    if subset is not None:
        if isinstance(subset, (str, ObservedProfile)):
            name = ObservedProfile(subset).value
            mask &= ds.profiles() == name
            label += f" {name}"
        else:
            mask &= np.asarray(subset, dtype=bool)
            label += " subset"
    if not mask.any():
        raise ValidationError(f"empty subset for Kaplan-Meier curve ({label})")
    return kaplan_meier(ds.y_tilde[mask], ds.event[mask], label)
