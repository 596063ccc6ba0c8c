"""Command-line interface.

Exit codes: 0 success, 1 validation or usage error, 2 numeric failure.
Settings resolve as flags > config file > defaults.  Every output directory
gets one ``manifest.json`` recording the argv needed to replay the run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import load_csv, standardize_covariates, summarize, without_covariates, write_csv
from .errors import NumericError, ValidationError

log = logging.getLogger("pstrata")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _read_json(path, what: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{what} file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{what} file {p} is not valid JSON: {e}") from None
    if not isinstance(d, dict):
        raise ValidationError(f"{what} file {p} must hold a JSON object")
    return d


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    import scipy
    from . import BACKEND
    try:
        import numba
        nb_version = numba.__version__
    except ImportError:
        nb_version = None
    return {"pstrata": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": nb_version, "backend": BACKEND}


def write_manifest(out: Path, command: str, argv: list, config: dict, seed, inputs: list, t0: float) -> Path:
    """Write ``manifest.json`` describing a finished run."""
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    outputs = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    man = {
        "subcommand": command, "argv": list(argv), "seed": seed,
        "config": config, "config_hash": hashlib.sha256(blob).hexdigest(),
        "versions": _versions(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": outputs, "wall_time": round(time.perf_counter() - t0, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, default=str) + "\n")
    return path


def replay_argv(manifest_path, out=None) -> list:
    """argv of a recorded run, optionally redirected to a new ``--out``."""
    man = json.loads(Path(manifest_path).read_text())
    argv = list(man["argv"])
    if out is not None and "--out" in argv:
        argv[argv.index("--out") + 1] = str(out)
    return argv


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fit_dataset(ds, K: int | None = None):
    """Model-scale dataset; ``K == 0`` selects the intercept-only fit."""
    ds = standardize_covariates(ds)
    return without_covariates(ds) if K == 0 else ds


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(a, argv, t0):
    from .simulator import ScenarioConfig, load_default, simulate, true_estimands
    cfg = ScenarioConfig.from_dict(_read_json(a.config, "scenario config")) if a.config else load_default(a.scenario)
    if a.config and cfg.scenario != a.scenario:
        raise ValidationError(f"--scenario {a.scenario} does not match config scenario {cfg.scenario}")
    if a.n is not None:
        cfg = cfg.with_n(a.n)
    seed = cfg.seed if a.seed is None else a.seed
    cd, ds = simulate(cfg, seed=seed, replicate=a.replicate)
    out = _outdir(a.out)
    write_csv(ds, out / "observed.csv")
    with open(out / "complete.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "z", "i_nd", "d1", "y1", "y0", "c"] + [f"x{k + 1}" for k in range(cd.X.shape[1])])
        for i in range(cd.n):
            w.writerow([i, int(cd.z[i]), int(cd.i_nd[i]), repr(float(cd.d1[i])), repr(float(cd.y1[i])),
                        repr(float(cd.y0[i])), repr(float(cd.c[i]))] + [repr(float(x)) for x in cd.X[i]])
    tv = true_estimands(cd, cfg)
    (out / "truth.json").write_text(json.dumps(tv.to_dict(), indent=2) + "\n")
    cfg.save(out / "scenario.json")
    write_manifest(out, "simulate", argv, cfg.to_dict(), seed, [a.config] if a.config else [], t0)
    print(f"simulated {ds.n} units (scenario {cfg.scenario}, seed {seed}) -> {out}")


def _sampler_cfg(a):
    from .sampler import SamplerConfig
    base = _read_json(a.sampler, "sampler config") if a.sampler else {}
    for k in ("iters", "burnin", "thin", "chains", "seed", "jobs"):
        v = getattr(a, k, None)
        if v is not None:
            base[k] = v
    return SamplerConfig.from_dict(base)


def cmd_fit(a, argv, t0):
    from .diagnostics import summarize_chains
    from .likelihood import PriorConfig
    from .sampler import run_chains
    ds = load_csv(a.data)
    prior = PriorConfig.from_dict(_read_json(a.priors, "prior config")) if a.priors else PriorConfig()
    scfg = _sampler_cfg(a)
    dsf = _fit_dataset(ds, 0 if a.no_covariates else None)
    chains = run_chains(dsf, prior, scfg)
    out = _outdir(a.out)
    for ch in chains:
        ch.save(out)
    diag = summarize_chains(chains)
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2) + "\n")
    cfg = {"sampler": asdict(scfg), "prior": asdict(prior), "covariates": not a.no_covariates,
           "standardization": dsf.standardization}
    inputs = [a.data] + [p for p in (a.priors, a.sampler) if p]
    write_manifest(out, "fit", argv, cfg, scfg.seed, inputs, t0)
    worst = max((v["rhat"] for v in diag.values() if np.isfinite(v["rhat"])), default=float("nan"))
    print(f"fit {len(chains)} chain(s), {sum(len(c) for c in chains)} draws, max split R-hat {worst:.3f} -> {out}")


def _load_fit(chain_dir, data):
    from .sampler import load_chains
    chains = load_chains(chain_dir)
    if not chains:
        raise ValidationError(f"no chains found in {chain_dir}")
    ds = load_csv(data)
    dsf = _fit_dataset(ds, chains[0].K)
    if dsf.K != chains[0].K:
        raise ValidationError(f"chain has K={chains[0].K} but the data give K={dsf.K}")
    return chains, ds, dsf


def cmd_estimate(a, argv, t0):
    from .estimands import Grids, McConfig, summarize_posterior
    chains, ds, dsf = _load_fit(a.chain, a.data)
    grids = Grids.from_dict(_read_json(a.grids, "grids")) if a.grids else Grids()
    mc = McConfig(draws=a.mc_draws, seed=a.seed, weighting=a.weighting)
    rep = summarize_posterior(chains, dsf.X, grids, mc, level=a.level)
    out = _outdir(a.out)
    rep.write(out)
    cfg = {"grids": grids.to_dict(), "mc": asdict(mc), "level": a.level}
    inputs = [a.data] + sorted(Path(a.chain).glob("chain_*.csv")) + ([a.grids] if a.grids else [])
    write_manifest(out, "estimate", argv, cfg, a.seed, inputs, t0)
    print(f"{'estimand':<10}{'mean':>10}{'hpd_lo':>10}{'hpd_hi':>10}")
    from .estimands import LABELS
    for k, (m, h) in rep.scalars.items():
        print(f"{LABELS[k]:<10}{m:>10.3f}{h.lower:>10.3f}{h.upper:>10.3f}")


def cmd_coverage(a, argv, t0):
    from .estimands import McConfig
    from .simulator import ScenarioConfig, load_default
    from .study import COVERAGE_SAMPLER, run_coverage
    cfg = ScenarioConfig.from_dict(_read_json(a.config, "scenario config")) if a.config else load_default(a.scenario)
    base = asdict(COVERAGE_SAMPLER)
    if a.sampler:
        base.update(_read_json(a.sampler, "sampler config"))
    for k in ("iters", "burnin", "thin", "chains"):
        if getattr(a, k) is not None:
            base[k] = getattr(a, k)
    from .sampler import SamplerConfig
    scfg = SamplerConfig.from_dict(base)

    def progress(r):
        log.info("replicate %d %s (%.1fs)", r.replicate, r.status, r.seconds)

    table = run_coverage(cfg, scfg, a.replicates, not a.no_covariates, a.seed, mc_cfg=McConfig(draws=a.mc_draws),
                         jobs=a.jobs, progress=progress)
    out = _outdir(a.out)
    table.write(out)
    conf = {"scenario": cfg.to_dict(), "sampler": asdict(scfg), "replicates": a.replicates,
            "covariates": not a.no_covariates, "mc_draws": a.mc_draws}
    write_manifest(out, "coverage", argv, conf, a.seed, [a.config] if a.config else [], t0)
    r = table.rows[0]
    print(f"{r.label}: {r.completed} replicates ({r.failed} failed)")
    for c, v in r.cells.items():
        print(f"  {c:<9}{v:.3f}")


def cmd_characterize(a, argv, t0):
    from .estimands import characterize_strata
    chains, ds, dsf = _load_fit(a.chain, a.data)
    prof = characterize_strata(chains, ds, bins=a.bins)
    for cov, per in prof.continuous.items():
        print(f"{cov}: " + ", ".join(f"{c} mean {s['mean']:.2f} sd {s['sd']:.2f}" for c, s in per.items()))
    for cov, per in prof.binary.items():
        print(f"{cov}: " + ", ".join(f"{c} share {v:.3f}" for c, v in per.items()))
    print("class fractions: " + ", ".join(f"{c} {v:.3f}" for c, v in prof.weights.items())
          + f"; draws {prof.n_draws}, skipped {prof.skipped_draws}")
    if a.out:
        out = _outdir(a.out)
        with open(out / "strata_profile.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["covariate", "class", "statistic", "value"])
            w.writerows([[r[0], r[1], r[2], repr(float(r[3]))] for r in prof.to_rows()])
        (out / "strata_profile.json").write_text(json.dumps(prof.to_dict(), indent=2) + "\n")
        write_manifest(out, "characterize", argv, {"bins": a.bins}, None,
                       [a.data] + sorted(Path(a.chain).glob("*_*.*")), t0)


def cmd_km(a, argv, t0):
    from .study import km_curve
    ds = load_csv(a.data)
    curves = []
    for arm in (1, 0):
        if not (ds.z == arm).any():
            continue
        curves.append(km_curve(ds, arm))
        if a.by_stratum:
            for prof in np.unique(ds.profiles()[ds.z == arm]):
                curves.append(km_curve(ds, arm, subset=str(prof)))
    out = _outdir(a.out) if a.out else None
    for c in curves:
        med = c.time[np.argmax(c.survival <= 0.5)] if np.any(c.survival <= 0.5) else float("nan")
        print(f"{c.label:<20} n={c.n:<5} events={int(c.events.sum()):<5} median={med:.2f}")
        if out is not None:
            c.write(out / f"km_{c.label.replace(' ', '_')}.csv")
    if out is not None:
        write_manifest(out, "km", argv, {"by_stratum": a.by_stratum}, None, [a.data], t0)


def cmd_summarize(a, argv, t0):
    ds = load_csv(a.data)
    tab = summarize(ds)
    print(tab.to_text())
    if a.out:
        out = _outdir(a.out)
        tab.to_csv(out / "summary.csv")
        write_manifest(out, "summarize", argv, {}, None, [a.data], t0)


def cmd_calibrate(a, argv, t0):
    from .calibration import calibrate, starting_config
    from .simulator import ScenarioConfig
    cfg0 = ScenarioConfig.from_dict(_read_json(a.config, "scenario config")) if a.config else starting_config(a.scenario)
    res = calibrate(cfg0, budget=a.budget, replicates=a.replicates, seed=a.seed)
    out = _outdir(a.out)
    res.config.save(out / f"scenario_{cfg0.scenario}.json")
    (out / "calibration.json").write_text(json.dumps(
        {"met": res.met, "loss": res.loss, "summary": res.summary, "distances": res.distances}, indent=2) + "\n")
    write_manifest(out, "calibrate", argv, {"budget": a.budget, "replicates": a.replicates}, a.seed,
                   [a.config] if a.config else [], t0)
    print(f"calibration {'met' if res.met else 'did not meet'} all tolerances; loss {res.loss:.3f}")
    for k, v in res.distances.items():
        print(f"  {k:<12}{v:+.4f}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pstrata", description="Bayesian principal stratification for treatment discontinuation.")
    p.add_argument("--version", action="version", version=f"pstrata {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a trial and its true estimands")
    s.add_argument("--scenario", choices=("I", "II"), required=True)
    s.add_argument("--config", help="scenario config JSON (default: packaged calibrated config)")
    s.add_argument("--seed", type=int, help="master seed (default: config seed)")
    s.add_argument("--replicate", type=int, default=0, help="replicate index within the seed")
    s.add_argument("--n", type=int, help="sample size (treated share kept)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", help="run the Metropolis-within-Gibbs sampler")
    s.add_argument("--data", required=True)
    s.add_argument("--priors", help="prior config JSON")
    s.add_argument("--sampler", help="sampler config JSON")
    s.add_argument("--iters", type=int)
    s.add_argument("--burnin", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--chains", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, help="worker processes for chains")
    s.add_argument("--no-covariates", action="store_true", help="intercept-only fit")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("estimate", help="posterior summaries of the causal estimands")
    s.add_argument("--chain", required=True, help="fit output directory")
    s.add_argument("--data", required=True)
    s.add_argument("--grids", help="grids JSON with keys d, y, dce_d")
    s.add_argument("--mc-draws", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--weighting", choices=("stratum", "empirical"), default="stratum")
    s.add_argument("--level", type=float, default=0.95)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("coverage", help="repeated-sampling HPD coverage study")
    s.add_argument("--scenario", choices=("I", "II"), required=True)
    s.add_argument("--config")
    s.add_argument("--replicates", type=int, default=50)
    s.add_argument("--no-covariates", action="store_true")
    s.add_argument("--sampler")
    s.add_argument("--iters", type=int)
    s.add_argument("--burnin", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--chains", type=int)
    s.add_argument("--mc-draws", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_coverage)

    s = sub.add_parser("characterize", help="covariate profiles of the latent strata")
    s.add_argument("--chain", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--bins", type=int, default=20)
    s.add_argument("--out")
    s.set_defaults(func=cmd_characterize)

    s = sub.add_parser("km", help="Kaplan-Meier curves by arm")
    s.add_argument("--data", required=True)
    s.add_argument("--by-stratum", action="store_true", help="also split by observed profile")
    s.add_argument("--out")
    s.set_defaults(func=cmd_km)

    s = sub.add_parser("summarize", help="descriptive table of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("calibrate", help="tune a scenario config to its calibration targets")
    s.add_argument("--scenario", choices=("I", "II"), required=True)
    s.add_argument("--config", help="starting config JSON")
    s.add_argument("--budget", type=int, default=200)
    s.add_argument("--replicates", type=int, default=10)
    s.add_argument("--seed", type=int, default=2024)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        a = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        a.func(a, argv, t0)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return 1
    except (NumericError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
