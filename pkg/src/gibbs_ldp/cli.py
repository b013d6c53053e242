"""Command-line front end: ``gibbs-ldp <subcommand> [flags]``.

Exit codes: 0 success, 1 configuration error, 2 estimator failure,
3 invariant violation in a checking subcommand.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, check_radii, parse_config
from .diagnostics import (
    boundary_count,
    count_b_dense,
    derive_r_constants,
    diagnostic_report,
    hc_violations,
    sparse_cubes,
    stirling_approx,
    stirling_log_prob,
    trajectory_bound_check,
)
from .errors import ConfigError, DensityExceedsCubes, EstimatorFailure, InvariantViolation
from .estimation import (
    Estimate,
    chebyshev_lobatto,
    convergence_profile,
    estimate_log_partition_naive,
    estimate_log_partition_ti,
    estimate_tail_logprob,
    hamiltonian_variant_gap,
    sample_annulus_poisson,
)
from .models import HardCore
from .samplers import (
    RngStream,
    detect_event_E_move,
    mcmc_canonical,
    move_context,
    sample_binomial,
    sample_conditioned_resample,
    sample_poisson,
)
from .torus import Configuration

COMMANDS = ("sample", "free-energy", "tail", "coupling-verify", "dense-check",
            "boundary-check", "stirling", "convergence")
ESTIMATE_HEADER = ["n", "estimate", "std_error", "samples", "method"]

# flag -> config key(s)
FLAG_KEYS = {
    "model": ["model.kind"],
    "gamma": ["model.gamma"],
    "r": ["model.r", "score.r"],
    "score_r": ["score.r"],
    "R": ["model.R"],
    "k": ["model.k"],
    "c": ["model.c"],
    "phi": ["model.phi"],
    "s_cap": ["model.s_cap"],
    "truncate": ["model.truncate"],
    "score": ["score.kind"],
    "score_k": ["score.k"],
    "score_c": ["score.c"],
    "lambda_": ["window.lambda"],
    "d": ["window.d"],
    "n": ["window.n"],
    "n_ladder": ["window.ladder"],
    "burn_in": ["sampler.burn_in"],
    "thinning": ["sampler.thinning"],
    "mcmc_samples": ["sampler.samples"],
    "proposal": ["sampler.proposal"],
    "grid_points": ["sampler.grid_points"],
    "sampler": ["sampler.kind"],
    "samples": ["task.samples"],
    "method": ["task.method"],
    "replicas": ["task.replicas"],
    "beta_nodes": ["task.beta_nodes"],
    "eps": ["task.eps"],
    "delta": ["task.delta"],
    "b": ["task.b"],
    "trials": ["task.trials"],
    "plant": ["task.plant"],
    "threshold": ["task.threshold"],
    "direction": ["task.direction"],
    "profile": ["task.profile"],
    "bc": ["bc.kind"],
    "bc_points": ["bc.points_file"],
    "seed": ["seed"],
    "stream": ["stream"],
    "out": ["output"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="key = value configuration file")
    for flag in FLAG_KEYS:
        name = "--" + flag.rstrip("_").replace("_", "-")
        if flag == "R":
            name = "--R"
        common.add_argument(name, dest=flag, type=str, default=None)
    common.add_argument("--no-plot", action="store_true", help="skip PNG figures")
    parser = _Parser(prog="gibbs-ldp", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


# ---------------------------------------------------------------------------
# output helpers


class Run:
    def __init__(self, cfg: ExperimentConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["output"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.t0 = time.perf_counter()
        self.constants: dict = {}
        (self.out / "config.resolved").write_text(cfg.echo())

    def rng(self) -> RngStream:
        return RngStream(self.cfg["seed"], self.cfg["stream"])

    def write_csv(self, name: str, header: list[str], rows, extra: Optional[dict] = None) -> Path:
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        sidecar = {
            "command": self.command,
            "config_hash": self.cfg.digest,
            "seed": self.cfg["seed"],
            "stream": self.cfg["stream"],
            "wall_time_s": round(time.perf_counter() - self.t0, 6),
            "versions": {"gibbs_ldp": __version__, "numpy": np.__version__,
                         "python": platform.python_version()},
            "derived_constants": self.constants,
        }
        if extra:
            sidecar.update(extra)
        (self.out / (name + ".json")).write_text(json.dumps(_jsonable(sidecar), indent=2) + "\n")
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out / name
        path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
        return path

    @property
    def plots(self) -> bool:
        return self.cfg["task.plot"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _estimate_row(n: int, est: Estimate):
    return [n, est.normalized, est.normalized_std_error, est.n_samples, est.method]


def _record_constants(run: Run, r: float) -> None:
    c = derive_r_constants(run.cfg["window.lambda"], run.cfg["window.d"], r)
    run.constants = {"r": r, "n_r": c.n_r, "K_r": c.K_r, "A_r": c.A_r}


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(run: Run) -> int:
    cfg = run.cfg
    w = cfg.window()
    rng = run.rng()
    kind = cfg["sampler.kind"]
    if kind == "mcmc":
        samples = mcmc_canonical(cfg.model(), cfg.hamiltonian_spec(), w, cfg.mcmc(), rng)
    elif kind == "binomial":
        samples = [sample_binomial(w, rng.child(i)) for i in range(cfg["sampler.samples"])]
    else:
        samples = [sample_poisson(w, rng.child(i)) for i in range(cfg["sampler.samples"])]
    header = [f"x{a}" for a in range(w.dim)]
    for i, omega in enumerate(samples):
        run.write_csv(f"sample_{i:04d}.csv", header, omega.points.tolist(),
                      {"sample": i, "points": len(omega)})
    return 0


def _auto_method(cfg: ExperimentConfig, V, n: int) -> str:
    m = cfg["task.method"]
    if m != "auto":
        return m
    trivial = V.bounded_by == 0.0
    return "naive" if isinstance(V, HardCore) or trivial or n <= 4 else "ti"


def cmd_free_energy(run: Run) -> int:
    cfg = run.cfg
    V, spec, w = cfg.model(), cfg.hamiltonian_spec(), cfg.window()
    method = _auto_method(cfg, V, w.point_budget)
    if method == "naive":
        est = estimate_log_partition_naive(V, spec, w, cfg["task.samples"], run.rng(), cfg["task.replicas"])
    else:
        est = estimate_log_partition_ti(V, spec, w, chebyshev_lobatto(cfg["task.beta_nodes"]), cfg.mcmc(),
                                        run.rng(), cfg["task.replicas"])
    run.write_csv("free_energy.csv", ESTIMATE_HEADER, [_estimate_row(w.point_budget, est)],
                  {"log_Z_tilde": est.value, "log_Z_tilde_std_error": est.std_error, **est.extra})
    return 0


def cmd_tail(run: Run) -> int:
    cfg = run.cfg
    V, spec, w, xi = cfg.model(), cfg.hamiltonian_spec(), cfg.window(), cfg.score()
    if xi is None:
        raise ConfigError("tail estimation needs a score (score.kind)")
    est = estimate_tail_logprob(V, spec, xi, cfg["task.threshold"], cfg["task.direction"], w,
                                cfg["task.samples"], run.rng(), cfg.mcmc(), cfg["task.replicas"])
    run.write_csv("tail.csv", ESTIMATE_HEADER, [_estimate_row(w.point_budget, est)],
                  {"log_probability": est.value, **est.extra})
    return 0


def _plant_cluster(base: Configuration, k: int, r: float, gen) -> Configuration:
    """Move the first k points into a ball of radius r/4 around a random point."""
    if k <= 0:
        return base
    w = base.window
    pts = base.points.copy()
    centre = pts[0]
    offs = gen.uniform(-0.25 * r, 0.25 * r, size=(k, w.dim)) / math.sqrt(w.dim)
    pts[:k] = w.wrap(centre + offs)
    return base.replace_points(pts)


def cmd_coupling_verify(run: Run) -> int:
    cfg = run.cfg
    V, w = cfg.model(), cfg.window()
    r = V.locality_radius
    consts = derive_r_constants(w.intensity, w.dim, r)
    _record_constants(run, r)
    b = consts.K_r + 1 if cfg["task.b"] == "auto" else int(cfg["task.b"])
    relaxed = w.point_budget < consts.n_r
    if relaxed:
        _warn(f"n = {w.point_budget} is below n_r = {consts.n_r}; sparse cubes use the interior grid only")
    eps = cfg["task.eps"]
    score = cfg.score()
    checks = [("model", V)] + ([("score", score)] if score is not None and score.locality_radius <= r else [])
    rng = run.rng()
    rows, first = [], None
    viol = {"clause_i": 0, "clause_ii": 0, "partner_dense": 0, "event": 0}
    skipped = 0
    min_slack_i = min_slack_ii = math.inf
    for t in range(cfg["task.trials"]):
        gen = rng.child(t).generator
        base = _plant_cluster(sample_binomial(w, gen), cfg["task.plant"], r, gen)
        ctx = move_context(base, b, r, consts, require_min_window=not relaxed)
        if first is None:
            first = diagnostic_report(base, r, b, eps, consts, require_min_window=not relaxed)
        try:
            c = sample_conditioned_resample(base, eps, ctx, gen)
        except DensityExceedsCubes:
            skipped += 1
            continue
        ev = detect_event_E_move(c, b, r, consts, not relaxed, ctx=ctx)
        if not ev.holds:
            viol["event"] += 1
            continue
        if first.event_E is None:
            first.event_E = True
        for label, h in checks:
            chk = trajectory_bound_check(c, h, consts, b, not relaxed, ctx=ctx)
            viol["clause_i"] += chk.clause_i is False
            viol["clause_ii"] += chk.clause_ii is False
            viol["partner_dense"] += chk.partner_dense > 0
            if chk.clause_i is not None:
                min_slack_i = min(min_slack_i, chk.slack_i)
            if chk.clause_ii is not None:
                min_slack_ii = min(min_slack_ii, chk.slack_ii)
            rows.append([t, label, chk.N_r, chk.N_2r, ctx.s_n, chk.diff_i, chk.bound_i,
                         chk.lhs_ii, chk.bound_ii, chk.partner_dense, chk.passed])
    header = ["trial", "function", "N_r", "N_2r", "s_n", "diff_i", "bound_i", "lhs_ii", "bound_ii",
              "partner_dense", "pass"]
    run.write_csv("coupling_verify.csv", header, rows)
    total = sum(viol.values())
    report = first.to_dict() if first else {}
    report.update({"eps": eps, "trials": cfg["task.trials"], "skipped_dense_exceeds_cubes": skipped,
                   "violations": viol, "total_violations": total, "min_slack_i": min_slack_i,
                   "min_slack_ii": min_slack_ii, "n_below_n_r": relaxed})
    run.write_json("coupling_verify_report.json", report)
    if total:
        raise InvariantViolation(f"{total} trajectory-bound violations; see coupling_verify_report.json")
    return 0


def _brute_neighbor_counts(omega: Configuration, rho: float) -> np.ndarray:
    pts = omega.points
    side = omega.window.side
    diff = pts[:, None, :] - pts[None, :, :]
    diff -= side * np.floor(diff / side + 0.5)
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return (d2 <= rho * rho).sum(axis=1) - 1


def cmd_dense_check(run: Run) -> int:
    cfg = run.cfg
    V, w = cfg.model(), cfg.window()
    r = V.locality_radius
    consts = derive_r_constants(w.intensity, w.dim, r)
    _record_constants(run, r)
    b = consts.K_r + 1 if cfg["task.b"] == "auto" else int(cfg["task.b"])
    check_sparse = w.point_budget >= consts.n_r
    if not check_sparse:
        _warn(f"n = {w.point_budget} < n_r = {consts.n_r}; the sparse-cube count check is skipped")
    two_r = 4 * r < w.side
    rng = run.rng()
    rows, bad = [], 0
    for t in range(cfg["task.trials"]):
        omega = sample_binomial(w, rng.child(t))
        brute = _brute_neighbor_counts(omega, r)
        N_r = count_b_dense(omega, r, b).count
        ok = N_r == int(np.count_nonzero(brute + 1 >= b))
        N_2r = count_b_dense(omega, 2 * r, b).count if two_r else N_r
        ok &= N_r <= N_2r
        hc = hc_violations(omega, r).count
        ok &= hc == int(np.count_nonzero(brute >= 1))
        s_n = sparse_cubes(omega, consts).s_n if check_sparse else -1
        if check_sparse:
            ok &= s_n >= w.point_budget * consts.A_r
        bad += not ok
        rows.append([t, N_r, N_2r, hc, s_n, w.point_budget * consts.A_r, ok])
    run.write_csv("dense_check.csv", ["trial", "N_r", "N_2r", "hc_violations", "s_n", "n_A_r", "pass"], rows)
    run.write_json("dense_check_report.json", {"n": w.point_budget, "lambda": w.intensity, "d": w.dim,
                                               "r": r, "b": b, "trials": cfg["task.trials"],
                                               "violations": bad, **run.constants})
    if bad:
        raise InvariantViolation(f"{bad} configurations failed the dense-point checks")
    return 0


def cmd_boundary_check(run: Run) -> int:
    cfg = run.cfg
    V, w = cfg.model(), cfg.window()
    r = V.locality_radius
    rng = run.rng()
    if cfg["bc.points_file"]:
        bc = np.loadtxt(cfg["bc.points_file"], delimiter=",", skiprows=1, ndmin=2)
    else:
        bc = sample_annulus_poisson(w, r, rng.child(0))
    s = hamiltonian_variant_gap(V, bc, w, cfg["task.trials"], rng.child(1), cfg["task.eps"])
    header = ["samples", "restricted", "eps", "cap_constant", "max_gap1", "max_gap2",
              "violations1", "violations2", "sharp_violations"]
    run.write_csv("boundary_check.csv", header, [[s.samples, s.restricted, s.eps, s.cap_constant,
                                                  s.max_gap1, s.max_gap2, s.violations1, s.violations2,
                                                  s.sharp_violations]],
                  {"boundary_points": int(len(bc))})
    if not s.ok:
        raise InvariantViolation("boundary-Hamiltonian caps violated; see boundary_check.csv")
    return 0


def cmd_stirling(run: Run) -> int:
    cfg = run.cfg
    lam = cfg["window.lambda"]
    ladder = cfg["window.ladder"]
    rows, vals, approx = [], [], []
    for n in ladder:
        _, norm = stirling_log_prob(n, lam)
        rows.append([n, norm, 0.0, 0, "exact"])
        vals.append(norm)
        approx.append(stirling_approx(n, lam))
    run.write_csv("stirling.csv", ESTIMATE_HEADER, rows, {"leading_order": approx})
    if run.plots:
        from .plotting import plot_ladder

        plot_ladder(ladder, vals, None, run.out / "stirling.png", "(lambda/n) log P(Pois(n) = n)",
                    reference=approx, reference_label="-log(2 pi n)/(2n)")
    return 0


def cmd_convergence(run: Run) -> int:
    cfg = run.cfg
    task = cfg["task.profile"]
    ladder = cfg["window.ladder"]
    V = cfg.model() if task != "stirling" else None
    if task != "stirling":
        check_radii(cfg, ladder)
    profile = convergence_profile(
        task, ladder, cfg["window.lambda"], cfg["window.d"], run.rng(), V=V,
        spec=cfg.hamiltonian_spec() if task != "stirling" else None,
        method=cfg["task.method"], samples=cfg["task.samples"], cfg=cfg.mcmc(),
        beta_grid=chebyshev_lobatto(cfg["task.beta_nodes"]), replicas=cfg["task.replicas"],
        xi=cfg.score(), a=cfg["task.threshold"], direction=cfg["task.direction"],
    )
    diffs = profile.differences
    run.write_csv("convergence.csv", ESTIMATE_HEADER, profile.rows(),
                  {"differences": diffs.tolist(), "cauchy_statistic": profile.cauchy_statistic(),
                   "shrinking_last_three": profile.shrinking()})
    if run.plots:
        from .plotting import plot_differences, plot_ladder

        errs = [e.normalized_std_error for _, e in profile.entries]
        plot_ladder(ladder, profile.values, errs, run.out / "convergence.png", "(lambda/n) log estimate",
                    title=f"{task} ladder")
        if len(ladder) > 1:
            plot_differences(ladder, profile.values, run.out / "convergence_differences.png")
    return 0


HANDLERS = {
    "sample": cmd_sample,
    "free-energy": cmd_free_energy,
    "tail": cmd_tail,
    "coupling-verify": cmd_coupling_verify,
    "dense-check": cmd_dense_check,
    "boundary-check": cmd_boundary_check,
    "stirling": cmd_stirling,
    "convergence": cmd_convergence,
}


def resolve(argv) -> tuple[str, ExperimentConfig]:
    args = build_parser().parse_args(argv)
    overrides = {}
    for flag, keys in FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is None:
            continue
        for key in keys:
            overrides[key] = value
    if args.score_r is not None:
        overrides["score.r"] = args.score_r
    if args.no_plot:
        overrides["task.plot"] = "false"
    needs_model = args.command not in ("stirling",) and not (
        args.command == "convergence" and overrides.get("task.profile") == "stirling")
    return args.command, parse_config(args.config, overrides, require_model=needs_model)


def run(argv=None) -> int:
    try:
        command, cfg = resolve(argv)
        return HANDLERS[command](Run(cfg, command))
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    except EstimatorFailure as exc:
        print(f"estimator failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
