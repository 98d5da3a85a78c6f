"""Experiment orchestration and persistence.

Output layout of a run directory::

    spec.json       resolved spec with provenance
    manifest.json   toolkit version, RNG algorithm, numpy version, run list
    <run_id>.csv    one trajectory per run
    summary.json    diagnostics per run and aggregates per algorithm
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from ..diagnostics import (
    budget_iid,
    budget_markov,
    default_threshold,
    oscillation_metrics,
    theory_constants,
)
from ..errors import DivergenceError, PreconditionError, PrqError, SizeError, ValidationError
from ..learners import LearnerRun, PrqConfig, prq_run, regq_run
from ..planners import PlanTrajectory, p_vi, regq_model_based, rp_vi, solve_by_enumeration
from ..projection import build_projector, contraction_report, convexity_constants, weight_from_mode
from ..sampling import RNG_ALGORITHM, build_behavior_chain, expected_hitting_times
from .spec import MODEL_BASED, ExperimentSpec

CSV_HEADER = "run_id,seed,t,k,global_step,theta,loss,inf_err_sq"
CSV_SCHEMA_VERSION = 1
WORKERS_ENV = "PRQ_WORKERS"


def fmt(x) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


# -- model context --------------------------------------------------------------

@dataclass
class Context:
    mdp: object
    features: object
    chain: object
    d: object
    projector: object
    certificate: object
    theta_star: Optional[np.ndarray]


def build_context(spec: ExperimentSpec, certify: bool = True) -> Context:
    mdp = spec.build_mdp()
    features = spec.build_features()
    if features.n_rows != mdp.n_pairs:
        raise ValidationError(
            f"features have {features.n_rows} rows but the MDP has {mdp.n_pairs} pairs")
    chain = build_behavior_chain(mdp, spec.build_behavior())
    d = weight_from_mode(spec.weight_mode, mdp.n_pairs, chain.mu_inf)
    proj = build_projector(features, d, spec.eta, mdp)
    cert, theta_star = None, None
    if certify:
        try:
            cert = solve_by_enumeration(mdp, features, d, spec.eta, cap=spec.enumeration_cap)
            if cert.existence == "unique":
                theta_star = np.array(cert.solutions[0].theta)
        except SizeError:
            cert = None
    return Context(mdp, features, chain, d, proj, cert, theta_star)


# -- single runs ----------------------------------------------------------------

def _theta_init(spec, h):
    return np.zeros(h) if spec.theta_init is None else np.asarray(spec.theta_init, float)


def run_model_based(spec: ExperimentSpec, ctx: Context, algorithm: str) -> PlanTrajectory:
    theta0 = _theta_init(spec, ctx.features.h)
    if algorithm == "rp_vi":
        return rp_vi(ctx.mdp, ctx.features, ctx.d, spec.eta, theta0, spec.iters, spec.tol, ctx.theta_star)
    if algorithm == "p_vi":
        return p_vi(ctx.mdp, ctx.features, ctx.d, theta0, spec.iters, spec.tol, ctx.theta_star)
    return regq_model_based(ctx.mdp, ctx.features, ctx.d, spec.eta, spec.alpha, theta0, spec.iters,
                            ctx.theta_star)


def run_sampled(spec: ExperimentSpec, ctx: Context, algorithm: str, seed: int) -> LearnerRun:
    kind, mode = algorithm.split("_")
    source = ctx.chain if mode == "markov" else ctx.d
    stride = spec.log_every or spec.K
    init = None if spec.init_dist is None else np.asarray(spec.init_dist, float)
    if kind == "prq":
        cfg = PrqConfig(spec.T, spec.K, spec.alpha, spec.eta, mode, _theta_init(spec, ctx.features.h),
                        stride, init_dist=init)
        return prq_run(cfg, ctx.mdp, ctx.features, source, seed, ctx.theta_star)
    return regq_run(ctx.mdp, ctx.features, source, spec.eta, spec.alpha, spec.T * spec.K,
                    _theta_init(spec, ctx.features.h), seed, stride, ctx.theta_star, init_dist=init)


def run_id(algorithm: str, seed=None) -> str:
    return algorithm if seed is None else f"{algorithm}-s{seed}"


# -- CSV ------------------------------------------------------------------------

def _theta_field(theta) -> str:
    return ";".join(fmt(x) for x in theta)


def trajectory_rows(rid: str, seed, traj, stride: int = 1) -> list:
    """CSV rows (without header) for a LearnerRun or PlanTrajectory.

    Planner trajectories keep every ``stride``-th iterate plus the last one;
    learner runs are already thinned when logged.
    """
    seed_s = "" if seed is None else str(seed)
    rows = []
    if isinstance(traj, LearnerRun):
        losses = traj.losses
        errs = traj.inf_err_sq
        for j in range(traj.thetas.shape[0]):
            rows.append(",".join([
                rid, seed_s, str(int(traj.t[j])), str(int(traj.k[j])), str(int(traj.steps[j])),
                _theta_field(traj.thetas[j]),
                "" if losses is None else fmt(losses[j]),
                "" if errs is None else fmt(errs[j])]))
    else:
        errs = traj.errors
        n = traj.thetas.shape[0]
        keep = list(range(0, n, stride))
        if keep[-1] != n - 1:
            keep.append(n - 1)
        for j in keep:
            rows.append(",".join([
                rid, seed_s, "1", str(j), str(j), _theta_field(traj.thetas[j]), "",
                "" if errs is None else fmt(errs[j] ** 2)]))
    return rows


def write_csv(path: Path, rid: str, seed, traj, stride: int = 1) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in trajectory_rows(rid, seed, traj, stride):
            fh.write(row + "\n")


def read_csv(path) -> dict:
    """Parse a trajectory CSV back into arrays (bit-exact)."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        cols = {k: [] for k in CSV_HEADER.split(",")}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            for k, v in zip(cols, parts):
                cols[k].append(v)
    out = {
        "run_id": cols["run_id"][0] if cols["run_id"] else "",
        "seed": None if not cols["seed"] or cols["seed"][0] == "" else int(cols["seed"][0]),
        "t": np.array(cols["t"], dtype=np.int64),
        "k": np.array(cols["k"], dtype=np.int64),
        "global_step": np.array(cols["global_step"], dtype=np.int64),
        "theta": np.array([[float(x) for x in v.split(";")] for v in cols["theta"]]),
    }
    for k in ("loss", "inf_err_sq"):
        vals = cols[k]
        out[k] = None if not vals or vals[0] == "" else np.array(vals, dtype=float)
    return out


# -- orchestration ----------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def dump_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sampled_job(args):
    """Worker body: rebuild the context, run one seed, write its CSV."""
    spec_values, source, algorithm, seed, out_dir, ctx = args
    spec = ExperimentSpec(spec_values, {}, source)
    if ctx is None:
        ctx = build_context(spec)
    rid = run_id(algorithm, seed)
    record = {"run_id": rid, "algorithm": algorithm, "seed": seed}
    try:
        run = run_sampled(spec, ctx, algorithm, seed)
    except DivergenceError as exc:
        record.update(status="diverged", error=str(exc), step=exc.step,
                      last_theta=None if exc.theta is None else np.asarray(exc.theta).tolist())
        return record
    write_csv(Path(out_dir) / f"{rid}.csv", rid, seed, run)
    record.update(status="ok", final_theta=run.final_theta.tolist(), tie_count=run.tie_count,
                  n_logged=int(run.thetas.shape[0]), steps=int(run.steps[-1]))
    if ctx.theta_star is not None:
        om = oscillation_metrics(run, ctx.theta_star, ctx.features, spec.threshold, spec.tail_fraction)
        record["oscillation"] = om.as_dict()
    return record


def _plan_record(spec, ctx, algorithm, out_dir):
    rid = run_id(algorithm)
    traj = run_model_based(spec, ctx, algorithm)
    write_csv(Path(out_dir) / f"{rid}.csv", rid, None, traj, spec.log_every or 1)
    record = {"run_id": rid, "algorithm": algorithm, "seed": None, "status": "ok",
              "iterations": traj.iterations, "converged": traj.converged,
              "final_theta": traj.final.tolist(), "ties_seen": traj.ties_seen}
    if ctx.theta_star is not None:
        om = oscillation_metrics(traj, ctx.theta_star, ctx.features, spec.threshold, spec.tail_fraction)
        record["oscillation"] = om.as_dict()
    return record


def _aggregate(records) -> dict:
    agg = {}
    for alg in sorted({r["algorithm"] for r in records}):
        rs = [r for r in records if r["algorithm"] == alg]
        ok = [r for r in rs if r["status"] == "ok" and "oscillation" in r]
        entry = {"runs": len(rs), "diverged": sum(r["status"] == "diverged" for r in rs)}
        if ok:
            tails = np.array([r["oscillation"]["tail_mean_error"] for r in ok])
            maxes = np.array([r["oscillation"]["tail_max_error"] for r in ok])
            entry.update(mean_tail_error=float(tails.mean()), max_tail_error=float(maxes.max()),
                         converged_fraction=float(np.mean([r["oscillation"]["converged_flag"] for r in ok])),
                         mean_revisit_count=float(np.mean([r["oscillation"]["revisit_count"] for r in ok])))
        agg[alg] = entry
    return agg


def diagnose(spec: ExperimentSpec, ctx: Optional[Context] = None) -> dict:
    """Norms, convexity constants, contraction margins, certificate and budgets."""
    ctx = ctx or build_context(spec)
    cc = convexity_constants(ctx.features, ctx.d, spec.eta)
    rep = contraction_report(ctx.projector, ctx.mdp)
    out = {
        "gamma": ctx.mdp.gamma, "eta": spec.eta,
        "phi_inf_norm": ctx.features.inf_norm,
        "phi_bound_ok": ctx.features.bound_ok,
        "phi_rank_ok": ctx.features.rank_ok,
        "weights": ctx.d.d.tolist(),
        "mu_inf": ctx.chain.mu_inf.tolist(),
        "convexity": {"mu_eta": cc.mu_eta, "l_eta": cc.l_eta, "kappa": cc.kappa},
        "contraction": rep.as_dict(),
        "certificate": None if ctx.certificate is None else ctx.certificate.as_dict(),
        "tau_max_mean": expected_hitting_times(ctx.chain).tau_max_mean,
    }
    if not ctx.features.bound_ok:
        out["warnings"] = [f"||Phi||_inf = {ctx.features.inf_norm:.6g} exceeds 1"]
    if ctx.theta_star is not None:
        tc = theory_constants(ctx.mdp, ctx.features, ctx.d, spec.eta, ctx.theta_star)
        out["theory_constants"] = tc.as_dict()
        try:
            out["budget_iid"] = budget_iid(tc, 1e-2).as_dict()
            out["budget_markov"] = budget_markov(tc, out["tau_max_mean"], 1e-2).as_dict()
        except PreconditionError as exc:
            out["budget_unavailable"] = str(exc)
    return out


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


@dataclass
class ExperimentResult:
    output_dir: Path
    records: list
    summary: dict = field(default_factory=dict)


def run_experiment(spec: ExperimentSpec, output_dir=None, workers: Optional[int] = None) -> ExperimentResult:
    """Run every algorithm of ``spec`` (every seed for sample-based ones),
    persist trajectories and write the merged summary."""
    out = Path(output_dir or spec.output_dir or Path("runs") / spec.name)
    out.mkdir(parents=True, exist_ok=True)
    ctx = build_context(spec)
    dump_json(out / "spec.json", spec.to_dict())
    records = []
    jobs = []
    for alg in spec.algorithms:
        if alg in MODEL_BASED:
            records.append(_plan_record(spec, ctx, alg, out))
        else:
            for seed in spec.seeds:
                jobs.append((spec.values, spec.source, alg, seed, str(out)))
    n = workers or _workers()
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            records += list(pool.map(_sampled_job, [j + (None,) for j in jobs]))
    else:
        records += [_sampled_job(j + (ctx,)) for j in jobs]
    # deterministic merge: algorithm order of the spec, then seed order
    order = {a: i for i, a in enumerate(spec.algorithms)}
    seed_order = {s: i for i, s in enumerate(spec.seeds)}
    records.sort(key=lambda r: (order[r["algorithm"]], -1 if r["seed"] is None else seed_order[r["seed"]]))
    summary = {
        "name": spec.name,
        "theta_star": None if ctx.theta_star is None else ctx.theta_star.tolist(),
        "existence": None if ctx.certificate is None else ctx.certificate.existence,
        "threshold": (spec.threshold if spec.threshold is not None else
                      None if ctx.theta_star is None else default_threshold(ctx.theta_star, ctx.features)),
        "contraction": contraction_report(ctx.projector, ctx.mdp).as_dict(),
        "runs": records,
        "aggregate": _aggregate(records),
    }
    dump_json(out / "summary.json", summary)
    dump_json(out / "manifest.json", {
        "toolkit": "prq", "version": __version__, "rng_algorithm": RNG_ALGORITHM,
        "numpy_version": np.__version__, "csv_header": CSV_HEADER,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "runs": [r["run_id"] for r in records]})
    return ExperimentResult(out, records, summary)


def sweep(spec: ExperimentSpec, grid: dict, output_dir=None, mode: str = "run") -> dict:
    """Cartesian sweep over ``grid``; ``mode`` is ``run`` or ``solve``.
    Each point writes to its own sub-directory; the sweep summary lists the
    points in grid order."""
    out = Path(output_dir or spec.output_dir or Path("runs") / f"{spec.name}-sweep")
    out.mkdir(parents=True, exist_ok=True)
    keys = list(grid)
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        over = dict(zip(keys, combo))
        label = ",".join(f"{k}={json.dumps(v) if not isinstance(v, str) else v}" for k, v in over.items())
        sub = out / label.replace("/", "_")
        point_spec = spec.with_overrides(**over)
        entry = {"point": over, "dir": sub.name}
        try:
            if mode == "solve":
                ctx = build_context(point_spec)
                sub.mkdir(parents=True, exist_ok=True)
                cert = ctx.certificate.as_dict() if ctx.certificate else None
                dump_json(sub / "certificate.json", cert)
                entry["existence"] = None if cert is None else cert["existence"]
                entry["contraction"] = contraction_report(ctx.projector, ctx.mdp).as_dict()
            else:
                res = run_experiment(point_spec, sub, workers=1 if _workers() == 1 else None)
                entry["existence"] = res.summary["existence"]
                entry["aggregate"] = res.summary["aggregate"]
        except PrqError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
        points.append(entry)
    summary = {"grid": grid, "mode": mode, "points": points}
    dump_json(out / "sweep_summary.json", summary)
    return summary
