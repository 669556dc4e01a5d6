"""Configuration-driven experiment runner.

Subcommands: verify | theta | tail | envelope | lemma | appendix | all |
list-corpus. Every run echoes its configuration, writes CSV tables plus a
JSON summary, and emits a manifest with sha256 hashes of all artifacts; the
same configuration and seed reproduce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import convex1d, envelope, fieldio, lowerbound, paraboloid, verify
from .core import MatrixShape, ball_samples, grid_spec, gradient_field, sample
from .corpus import FunctionHandle, corpus, get_handle

EXPERIMENTS = ("verify", "theta", "tail", "envelope", "lemma", "appendix", "all")

ANALYTIC_TOL = 1e-9
FIELD_TOL_SCALE = 1.0  # field checks pass at K h^2 with K = 1; measured margins
# on the corpus are <= 0.24 h^2 for flagged functions and >= 9 h^2 for controls.


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    function: str = "neg_det_2x2"
    grid_points: int = 9
    radius: float = 1.0
    seed: int = 0
    tol: float = ANALYTIC_TOL
    out_dir: str = "out"
    eval_count: int = 120
    sample_count: int = 10_000
    direction_count: int = 12
    step_count: int = 10
    t_min: float = 2.0
    t_max: float = 20.0
    t_points: int = 8
    lines_per_direction: int = 32
    threads: int = 1
    cone_slope: float | None = None
    min_epsilon: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def load_config(path: str | Path) -> dict:
    """Flat key-value JSON config; unknown keys are rejected."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must hold a flat JSON object")
    valid = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - valid
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}; valid: {sorted(valid)}")
    return data


@dataclass
class RunManifest:
    experiment: str
    config: dict
    artifacts: dict
    checks: dict
    versions: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "artifacts": self.artifacts,
            "checks": self.checks,
            "versions": self.versions,
            "passed": self.passed,
        }


def _versions() -> dict:
    from . import __version__

    return {"roconvex": __version__, "numpy": np.__version__}


def _handle(cfg: ExperimentConfig) -> FunctionHandle:
    try:
        return get_handle(cfg.function)
    except KeyError as exc:
        raise SystemExit(f"error: {exc}") from exc


def _finish(
    cfg: ExperimentConfig,
    name: str,
    summary: dict,
    checks: dict,
    artifacts: list[Path],
) -> RunManifest:
    out = Path(cfg.out_dir) / name
    summary_path = fieldio.write_json({"summary": summary, "checks": checks}, out / "summary.json")
    artifacts = artifacts + [summary_path]
    hashes = {str(p.relative_to(cfg.out_dir)): fieldio.sha256_file(p) for p in artifacts}
    manifest = RunManifest(
        experiment=name,
        config=cfg.to_dict(),
        artifacts=hashes,
        checks=checks,
        versions=_versions(),
    )
    fieldio.write_json(manifest.to_dict(), out / "manifest.json")
    return manifest


# --- pipelines -------------------------------------------------------------


def run_verify(cfg: ExperimentConfig) -> RunManifest:
    h = _handle(cfg)
    sampler = verify.SegmentSampler(
        direction_count=cfg.direction_count, step_count=cfg.step_count, seed=cfg.seed
    )
    domain = grid_spec(h.shape, cfg.radius, cfg.grid_points, "cube")
    rows = []
    checks: dict[str, bool] = {}

    r1c = verify.rank_one_convexity_check(h, domain, sampler)
    ok = r1c.passes(cfg.tol) == h.flags.rank_one_convex
    checks["rank_one_convexity_matches_flag"] = ok
    rows.append(("rank_one_convexity", r1c.worst_violation, cfg.tol, h.flags.rank_one_convex, ok))

    sep = verify.separate_convexity_check(h, domain, sampler)
    ok = sep.passes(cfg.tol) == h.flags.separately_convex
    checks["separate_convexity_matches_flag"] = ok
    rows.append(("separate_convexity", sep.worst_violation, cfg.tol, h.flags.separately_convex, ok))

    fld = sample(h, domain)
    if h.shape.symmetric:
        node_rep = verify.symmetric_operator_check(fld)
        op_name = "symmetric_operator_min"
    else:
        node_rep = verify.viscosity_subharmonic_check(fld)
        op_name = "discrete_laplacian_min"
    ok = (node_rep.min_value >= -cfg.tol) == h.flags.separately_convex
    checks["subharmonicity_matches_flag"] = ok
    rows.append((op_name, node_rep.min_value, -cfg.tol, h.flags.separately_convex, ok))

    mol = verify.mollify(fld, 1)
    field_tol = FIELD_TOL_SCALE * domain.spacing**2
    molrep = verify.rank_one_convexity_check(mol, sampler=sampler)
    ok = molrep.passes(field_tol) == h.flags.rank_one_convex
    checks["mollified_convexity_matches_flag"] = ok
    rows.append(("mollified_rank_one_convexity", molrep.worst_violation, field_tol, h.flags.rank_one_convex, ok))

    out = Path(cfg.out_dir) / "verify"
    csv = fieldio.write_csv(
        out / f"{h.name}.csv",
        ("check", "value", "threshold", "expected_pass", "check_ok"),
        rows,
    )
    report_json = fieldio.write_json(
        {
            "function": h.name,
            "flags": h.flags.to_dict(),
            "rank_one": replace(r1c, tolerance=cfg.tol).to_dict(),
            "separate": replace(sep, tolerance=cfg.tol).to_dict(),
            "node_operator": node_rep.to_dict(),
            "mollified": replace(molrep, tolerance=field_tol).to_dict(),
        },
        out / f"{h.name}_reports.json",
    )
    summary = {"function": h.name, "rows": [list(r) for r in rows]}
    return _finish(cfg, "verify", summary, checks, [csv, report_json])


def run_theta(cfg: ExperimentConfig) -> RunManifest:
    h = _handle(cfg)
    constraints = grid_spec(h.shape, cfg.radius, cfg.grid_points, "ball")
    tf = paraboloid.theta_field(
        h, constraints, count=cfg.eval_count, seed=cfg.seed, threads=cfg.threads
    )
    rows = [
        tuple(tf.eval_coords[k]) + (tf.theta[k], int(tf.converged[k]))
        for k in range(tf.count)
    ]
    out = Path(cfg.out_dir) / "theta"
    csv = fieldio.write_csv(
        out / f"{h.name}.csv",
        h.shape.coord_names() + ("theta", "converged"),
        rows,
    )
    spot = range(0, tf.count, max(1, tf.count // 8))
    replay_gap = max(
        abs(paraboloid.replay_opening(h, tf.touches[k], constraints) - tf.theta[k]) for k in spot
    )
    feas_gap = max(paraboloid.touch_feasibility_gap(h, tf.touches[k], constraints) for k in spot)
    checks = {
        "all_solves_converged": bool(np.all(tf.converged)),
        "certificate_replay_exact": replay_gap <= 1e-12,
        "feasible_on_constraints": feas_gap <= 1e-9,
    }
    summary = {
        "function": h.name,
        "count": tf.count,
        "theta_min": float(np.min(tf.theta)),
        "theta_max": float(np.max(tf.theta)),
        "theta_median": float(np.median(tf.theta)),
        "replay_gap": float(replay_gap),
        "feasibility_gap": float(feas_gap),
    }
    return _finish(cfg, "theta", summary, checks, [csv])


def run_tail(cfg: ExperimentConfig) -> RunManifest:
    h = _handle(cfg)
    constraints = grid_spec(h.shape, cfg.radius, min(cfg.grid_points, 13), "ball")
    tf = paraboloid.theta_field(
        h, constraints, count=cfg.eval_count, seed=cfg.seed, threads=cfg.threads
    )
    grid_vals = sample(h, constraints)
    f_sup = grid_vals.sup_abs()
    t_grid = paraboloid.default_tail_t_grid(cfg.t_min, cfg.t_max, cfg.t_points)
    rep = paraboloid.tail_experiment(tf, f_sup, t_grid)
    out = Path(cfg.out_dir) / "tail"
    csv = fieldio.write_csv(out / f"{h.name}.csv", ("t", "measure"), rep.rows())
    checks = {
        "measure_non_increasing": bool(np.all(np.diff(rep.measure) <= 0.0)),
    }
    if cfg.min_epsilon is not None:
        checks["fitted_epsilon_at_least_min"] = (
            rep.fitted_epsilon is not None and rep.fitted_epsilon >= cfg.min_epsilon
        )
    summary = rep.to_dict() | {"function": h.name, "f_sup": f_sup}
    return _finish(cfg, "tail", summary, checks, [csv])


def run_envelope(cfg: ExperimentConfig) -> RunManifest:
    h = _handle(cfg)
    spec = grid_spec(h.shape, 0.75 * cfg.radius, cfg.grid_points, "cube")
    fld = sample(h, spec)
    f_sup = fld.sup_abs()
    L = cfg.cone_slope if cfg.cone_slope is not None else 2.0 * 2.0 * max(1.0, f_sup)
    components = gradient_field(fld)
    out = Path(cfg.out_dir) / "envelope"
    rows = []
    artifacts = []
    checks: dict[str, bool] = {}
    names = h.shape.coord_names()
    worst_order = worst_lip = worst_idem = 0.0
    for k, src in enumerate(components):
        pair = envelope.cone_convolutions(src, L)
        sw = envelope.sandwich_check(pair)
        lip = max(
            envelope.envelope_lipschitz_violation(pair.w_minus, L),
            envelope.envelope_lipschitz_violation(pair.w_plus, L),
        )
        idem = envelope.envelope_idempotence_gap(pair)
        worst_order = max(worst_order, sw.global_order_violation)
        worst_lip = max(worst_lip, lip)
        worst_idem = max(worst_idem, idem)
        rows.append((names[k], sw.global_order_violation, lip, idem))
        artifacts.append(fieldio.write_field(pair.w_minus, out / f"{h.name}_{names[k]}_lower.csv"))
        artifacts.append(fieldio.write_field(pair.w_plus, out / f"{h.name}_{names[k]}_upper.csv"))
    checks["order_exact"] = worst_order <= 1e-12
    checks["lipschitz_within_tol"] = worst_lip <= 1e-12
    checks["idempotent"] = worst_idem <= 1e-12

    prof = envelope.second_order_remainder(
        h, np.zeros(h.shape.dim), [0.4, 0.2, 0.1, 0.05], seed=cfg.seed
    )
    artifacts.append(
        fieldio.write_csv(
            out / f"{h.name}_remainder.csv",
            ("radius", "ratio"),
            list(zip(prof.radii, prof.ratios)),
        )
    )
    artifacts.append(
        fieldio.write_csv(out / f"{h.name}.csv", ("component", "order_violation", "lipschitz_violation", "idempotence_gap"), rows)
    )
    summary = {
        "function": h.name,
        "L": L,
        "worst_order_violation": worst_order,
        "worst_lipschitz_violation": worst_lip,
        "worst_idempotence_gap": worst_idem,
        "remainder_ratios": prof.ratios.tolist(),
        "second_order_differentiable_at_0": prof.second_order_differentiable,
    }
    return _finish(cfg, "envelope", summary, checks, artifacts)


def run_lemma(cfg: ExperimentConfig) -> RunManifest:
    h = _handle(cfg)
    if h.shape.symmetric:
        raise SystemExit("error: the lower-bound pipeline runs on general shapes")
    rng = np.random.default_rng(cfg.seed)
    x0 = np.zeros(h.shape.dim)
    samples = ball_samples(h.shape, x0, cfg.radius, cfg.sample_count, rng)
    majorant = lowerbound.empirical_majorant(h, x0, samples)
    cert = lowerbound.lower_bound_certify(h, x0, majorant, samples, tol=1e-6)
    expected = h.flags.rank_one_convex or (h.flags.separately_convex and h.shape.rows == 1)
    checks = {"certificate_matches_flag": cert.passed == expected}
    out = Path(cfg.out_dir) / "lemma"
    csv = fieldio.write_csv(out / f"{h.name}.csv", ("radius", "majorant"), majorant.table())
    cert_json = fieldio.write_json(
        cert.to_dict()
        | {"expected_pass": expected, "seed": cfg.seed, "g_table": majorant.table()},
        out / f"{h.name}_certificate.json",
    )
    summary = cert.to_dict() | {"function": h.name, "expected_pass": expected}
    return _finish(cfg, "lemma", summary, checks, [csv, cert_json])


def run_appendix(cfg: ExperimentConfig) -> RunManifest:
    rng = np.random.default_rng(cfg.seed)
    out = Path(cfg.out_dir) / "appendix"
    artifacts = []
    checks: dict[str, bool] = {}

    # weak (1,1): the unit atom plus random small measures
    unit = convex1d.AtomicMeasure1D(np.array([0.0]), np.array([1.0]))
    unit_rows = convex1d.weak_one_one_check(unit, [1.0, 2.0, 4.0, 8.0])
    checks["weak11_unit_atom_exact"] = all(
        abs(r.measure * r.t - 2.0) <= 1e-12 for r in unit_rows
    )
    absf0 = convex1d.PLConvex1D(np.array([0.0]), np.array([-1.0, 1.0]))
    mu_abs = convex1d.second_derivative_measure(absf0)
    artifacts.append(
        fieldio.write_csv(
            out / "abs_measure.csv",
            ("location", "mass"),
            list(zip(mu_abs.locations, mu_abs.masses)),
        )
    )
    level_rows = []
    for t in (1.0, 2.0, 4.0, 8.0):
        for a, b in convex1d.superlevel(mu_abs, t).intervals:
            level_rows.append((t, a, b))
    artifacts.append(
        fieldio.write_csv(out / "abs_superlevel.csv", ("t", "start", "end"), level_rows)
    )
    t_grid = np.exp(np.linspace(np.log(0.5), np.log(5.0), 9))
    all_ok = True
    random_rows = []
    for k in range(100):
        count = int(rng.integers(1, 6))
        locs = np.sort(rng.uniform(-2.0, 2.0, size=count))
        locs = locs[np.concatenate([[True], np.diff(locs) > 1e-9])]
        mu = convex1d.AtomicMeasure1D(locs, rng.uniform(0.1, 3.0, size=locs.size))
        for r in convex1d.weak_one_one_check(mu, t_grid):
            all_ok &= r.ok and r.local_ok
            random_rows.append((k, r.t, r.measure, r.bound, int(r.ok)))
    checks["weak11_random_measures"] = bool(all_ok)
    artifacts.append(
        fieldio.write_csv(out / "weak11.csv", ("measure_id", "t", "measure", "bound", "ok"), random_rows)
    )

    # convex Taylor chain
    h_grid = np.linspace(0.05, 1.0, 20)
    absf = convex1d.PLConvex1D(np.array([0.0]), np.array([-1.0, 1.0]))
    shifted = convex1d.PLConvex1D(np.array([0.5]), np.array([0.0, 1.0]))
    taylor_ok = all(r.ok for r in convex1d.convex_taylor_check(absf, h_grid))
    checks["taylor_abs_vacuous_flagged"] = all(
        r.vacuous for r in convex1d.convex_taylor_check(absf, h_grid)
    )
    taylor_ok &= all(r.ok for r in convex1d.convex_taylor_check(shifted, h_grid))
    taylor_rows = []
    for k in range(50):
        f = convex1d.random_pl_convex(rng, atom_at_zero=bool(rng.integers(0, 2)))
        rows = convex1d.convex_taylor_check(f, h_grid)
        taylor_ok &= all(r.ok for r in rows)
        taylor_rows.extend((k, r.h, r.f_plus, r.bound_mid_plus, int(r.ok), int(r.vacuous)) for r in rows)
    checks["taylor_chain_holds"] = bool(taylor_ok)
    artifacts.append(
        fieldio.write_csv(
            out / "taylor.csv", ("function_id", "h", "f_h", "mid_bound", "ok", "vacuous"), taylor_rows
        )
    )

    # ell^1 geometry
    l1 = convex1d.l1_ball_containment(4, 100_000, seed=cfg.seed)
    checks["l1_ratio_bounded"] = l1.ok
    checks["l1_witness_attains_bound"] = abs(l1.witness_ratio - 2.0) <= 1e-12

    # per-line tail on |x_1| over the plane
    from .corpus import abs_entry

    h12 = abs_entry(0, 0, MatrixShape(1, 2))
    t_tail = np.exp(np.linspace(np.log(7.0), np.log(80.0), 8))
    tail = convex1d.fubini_tail_experiment(
        h12, t_tail, lines_per_direction=cfg.lines_per_direction, seed=cfg.seed, probe_count=6
    )
    checks["tail_slope_is_minus_one"] = (
        tail.fitted_slope is not None and abs(tail.fitted_slope + 1.0) <= 0.1
    )
    checks["tail_inclusion_bounds"] = all(
        p.axis_bound_ok and p.hull_bound_ok for p in tail.inclusion
    )
    artifacts.append(
        fieldio.write_csv(
            out / "tail_lines.csv",
            ("t", "measure", "oscillation_bound"),
            [(t, m, tail.oscillation / t) for t, m in zip(tail.t_grid, tail.measures)],
        )
    )
    summary = {
        "weak11_unit": [(r.t, r.measure) for r in unit_rows],
        "l1_max_ratio": l1.max_ratio,
        "tail_slope": tail.fitted_slope,
        "tail_oscillation": tail.oscillation,
    }
    return _finish(cfg, "appendix", summary, checks, artifacts)


def run_all(cfg: ExperimentConfig) -> RunManifest:
    """Smoke-scale sweep over every pipeline with deterministic sub-budgets."""
    sub_manifests: list[RunManifest] = []
    for h in corpus():
        sub_manifests.append(run_verify(replace(cfg, function=h.name)))
    sub_manifests.append(
        run_theta(replace(cfg, function="neg_det_2x2", grid_points=7, eval_count=40))
    )
    sub_manifests.append(
        run_tail(
            replace(cfg, function="abs_x11", grid_points=9, eval_count=80)
        )
    )
    for name in ("neg_det_2x2", "frob_norm"):
        sub_manifests.append(run_envelope(replace(cfg, function=name, grid_points=7)))
    for name in ("neg_det_2x2", "neg_half_norm_sq", "neg_uv"):
        sub_manifests.append(run_lemma(replace(cfg, function=name, sample_count=4000)))
    sub_manifests.append(run_appendix(replace(cfg, lines_per_direction=16)))

    checks = {}
    artifacts = {}
    for m in sub_manifests:
        for k, v in m.checks.items():
            checks[f"{m.experiment}[{m.config['function']}].{k}"] = v
        artifacts.update(m.artifacts)
    manifest = RunManifest(
        experiment="all",
        config=cfg.to_dict(),
        artifacts=artifacts,
        checks=checks,
        versions=_versions(),
    )
    out = Path(cfg.out_dir) / "all"
    fieldio.write_json({"checks": checks}, out / "summary.json")
    fieldio.write_json(manifest.to_dict(), out / "manifest.json")
    return manifest


_PIPELINES = {
    "verify": run_verify,
    "theta": run_theta,
    "tail": run_tail,
    "envelope": run_envelope,
    "lemma": run_lemma,
    "appendix": run_appendix,
    "all": run_all,
}


def run(cfg: ExperimentConfig) -> RunManifest:
    if cfg.experiment not in _PIPELINES:
        raise SystemExit(
            f"error: unknown experiment {cfg.experiment!r}; valid: {', '.join(EXPERIMENTS)}"
        )
    return _PIPELINES[cfg.experiment](cfg)


def list_corpus(flag: str | None = None) -> list[str]:
    lines = []
    for h in corpus():
        flags = h.flags.to_dict()
        if flag is not None:
            if flag not in flags:
                raise SystemExit(
                    f"error: unknown flag {flag!r}; valid: {', '.join(flags)}"
                )
            if not flags[flag]:
                continue
        tags = ",".join(k for k, v in flags.items() if v) or "-"
        shape = f"{h.shape.rows}x{h.shape.cols}{'sym' if h.shape.symmetric else ''}"
        lines.append(f"{h.name:20s} {shape:6s} {tags}")
    return lines


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roconvex",
        description="Numerical experiments for rank-one convexity on sampled matrix fields.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", type=str, default=None, help="flat JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--function", type=str, default=None, help="corpus function name")
        p.add_argument("--grid-points", type=int, default=None)
        p.add_argument("--radius", type=float, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--eval-count", type=int, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
    lp = sub.add_parser("list-corpus", help="list corpus functions and flags")
    lp.add_argument("--flag", type=str, default=None, help="filter by a convexity flag")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "list-corpus":
        for line in list_corpus(args.flag):
            print(line)
        return 0
    values: dict = {}
    if args.config:
        values.update(load_config(args.config))
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "function": args.function,
        "grid_points": args.grid_points,
        "radius": args.radius,
        "tol": args.tol,
        "eval_count": args.eval_count,
        "sample_count": args.samples,
        "threads": args.threads,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    values["experiment"] = args.experiment
    cfg = ExperimentConfig(**values)
    manifest = run(cfg)
    failed = [k for k, v in manifest.checks.items() if not v]
    for name, ok in sorted(manifest.checks.items()):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if failed:
        print(f"{len(failed)} of {len(manifest.checks)} checks failed")
        return 1
    print(f"all {len(manifest.checks)} checks passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
