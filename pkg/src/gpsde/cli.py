"""Command-line entry point.

Subcommands:
  propagate   moment propagation (linearized or sigma-point matched)
  sample      Euler-Maruyama ensemble baseline
  fpk-grid    finite-difference density evolution on a grid
  gp-fit      fit a GP vector field and dump it on a query grid
  bench-benes KL-matched accuracy/timing benchmark on the tanh-drift model

Every run writes fixed-column CSV artifacts plus a JSON manifest (config
echo, wall-clock per phase, evaluation tallies). With --plot, matplotlib
figures are rendered next to the CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import empirical_moments, simulate
from .errors import ConfigError, GpsdeError
from .field import VectorFieldObservations, fit
from .fpkgrid import (EvolveMethod, GridDensity, GridSpec, assemble_operator,
                      evolve, gaussian_init, grid_moments)
from .kernels import KernelSpec
from .models import make_benes, make_gp_sde, make_linear
from .moments import (MomentState, Scheme, cubature_rule, gauss_hermite_rule,
                      propagate)
from .odeint import Method, TimeGrid
from .oracle import BenesSpec, benes_truth, match_trajectories, total_kl

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(x) -> str:
    return format(float(x), ".17g")


def time_phase(work, repeats: int = 1):
    """Run ``work`` and return (result, elapsed wall-clock ms).

    With repeats > 1 the work runs repeats + 1 times; the first run is
    discarded as warm-up and the mean of the rest is reported.
    """
    if repeats <= 1:
        t0 = time.perf_counter()
        result = work()
        return result, (time.perf_counter() - t0) * 1e3
    work()  # warm-up, discarded
    elapsed = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = work()
        elapsed.append((time.perf_counter() - t0) * 1e3)
    return result, float(np.mean(elapsed))


# ---------------------------------------------------------------------------
# configuration


def load_config(args) -> dict:
    """Merge the optional JSON config file with command-line overrides."""
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
    for key in ("t0", "t1", "dt", "method", "scheme", "n", "seed", "threads",
                "repeats", "t", "horizon", "em_dt", "gh_order", "nugget"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "dims", None):
        cfg["dims"] = [int(x) for x in args.dims.split(",")]
    if getattr(args, "bounds", None):
        cfg["bounds"] = json.loads(args.bounds)
    if getattr(args, "points", None):
        cfg["points"] = json.loads(args.points)
    if getattr(args, "data", None):
        cfg["data"] = args.data
    cfg.setdefault("seed", 0)
    return cfg


def serialize_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2)


def parse_config(text: str) -> dict:
    return json.loads(text)


def _require(cfg, key, subcommand):
    if key not in cfg:
        raise ConfigError(f"{subcommand}: missing config key '{key}'")
    return cfg[key]


def build_model(cfg: dict):
    spec = _require(cfg, "model", "model selection")
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "benes":
        d = int(spec.get("dim", 1))
        z0 = spec.get("z0")
        z0 = BenesSpec.linspaced(d).z0 if z0 is None else np.asarray(z0, dtype=float)
        return make_benes(d, z0)
    if kind == "linear":
        return make_linear(np.asarray(_require(spec, "A", "linear model")),
                           np.asarray(_require(spec, "L", "linear model")))
    if kind == "gp":
        obs = VectorFieldObservations.from_csv(_require(spec, "data", "gp model"))
        kspec = KernelSpec.from_dict(_require(spec, "kernel", "gp model"))
        nugget = float(spec.get("nugget", 1e-6))
        prior_mean = spec.get("prior_mean")
        field = fit(obs, kspec, nugget, prior_mean=prior_mean)
        return make_gp_sde(field)
    raise ConfigError(f"model.kind must be benes|linear|gp, got {kind!r}")


def build_grid(cfg: dict) -> TimeGrid:
    try:
        return TimeGrid(float(cfg.get("t0", 0.0)), float(_require(cfg, "t1", "time grid")),
                        float(_require(cfg, "dt", "time grid")))
    except ValueError as exc:
        raise ConfigError(f"time grid: {exc}") from None


def _initial_state(cfg: dict, dim: int):
    if "m0" in cfg:
        m0 = np.asarray(cfg["m0"], dtype=float)
        P0 = np.asarray(cfg.get("P0", np.zeros((dim, dim))), dtype=float)
        return MomentState(mean=m0, cov=P0)
    if "z0" in cfg:
        return np.asarray(cfg["z0"], dtype=float)
    raise ConfigError("initial condition: provide 'm0' (+optional 'P0') or 'z0'")


# ---------------------------------------------------------------------------
# artifact writers


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


def write_manifest(out: Path, cfg: dict, phases: dict, eval_counts=None, extra=None):
    manifest = {
        "config": cfg,
        "phases_ms": phases,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    if eval_counts is not None:
        manifest["eval_counts"] = eval_counts
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _moments_header(d):
    return (["t"] + [f"m_{a + 1}" for a in range(d)]
            + [f"P_{a + 1}{b + 1}" for a in range(d) for b in range(d)]
            + ["n_drift", "n_diff", "n_jac"])


def _moments_rows(times, states, counts):
    rows = []
    for k, (t, st) in enumerate(zip(times, states)):
        c = counts[k - 1].as_tuple() if k > 0 else (0, 0, 0)
        rows.append([t, *st.mean, *st.cov.ravel(), *c])
    return rows


# ---------------------------------------------------------------------------
# subcommands


def cmd_propagate(cfg: dict, out: Path, do_plot: bool):
    model = build_model(cfg)
    grid = build_grid(cfg)
    init = _initial_state(cfg, model.dim)
    if not isinstance(init, MomentState):
        init = MomentState(mean=init, cov=np.zeros((model.dim, model.dim)))
    scheme = cfg.get("scheme", Scheme.MATCHED)
    method = cfg.get("method", Method.RK4)
    rule = None
    if scheme == Scheme.MATCHED:
        if cfg.get("rule", "cubature") == "gauss-hermite":
            rule = gauss_hermite_rule(model.dim, int(cfg.get("gh_order", 3)))
        else:
            rule = cubature_rule(model.dim)
    traj, ms = time_phase(
        lambda: propagate(model, init.mean, init.cov, grid, scheme, method, rule))
    write_csv(out / "moments.csv", _moments_header(model.dim),
              _moments_rows(traj.times, traj.states, traj.eval_counts))
    counts = {
        "per_step": [c.as_tuple() for c in traj.eval_counts],
        "totals": traj.totals().as_tuple(),
    }
    write_manifest(out, cfg, {"propagate": ms}, eval_counts=counts)
    if do_plot:
        from . import plots
        means = np.array([s.mean for s in traj.states])
        variances = np.array([np.diag(s.cov) for s in traj.states])
        plots.plot_moments(traj.times, means, variances, out / "moments.png")
    return EXIT_OK


def cmd_sample(cfg: dict, out: Path, do_plot: bool):
    model = build_model(cfg)
    grid = build_grid(cfg)
    init = _initial_state(cfg, model.dim)
    n = int(_require(cfg, "n", "sample"))
    seed = int(cfg.get("seed", 0))
    threads = int(cfg.get("threads", 1))
    ens, ms = time_phase(lambda: simulate(model, init, n, grid, seed, threads=threads))
    states = [empirical_moments(ens, i) for i in range(len(ens.times))]
    steps = len(ens.times) - 1
    from .moments import EvalCounts
    per_step = [EvalCounts(drift=n, diffusion=n, jacobian=0) for _ in range(steps)]
    write_csv(out / "moments.csv", _moments_header(model.dim),
              _moments_rows(ens.times, states, per_step))
    if cfg.get("dump_paths"):
        header = ["path", "t"] + [f"z_{a + 1}" for a in range(model.dim)]
        rows = []
        for p in range(ens.n):
            for k, t in enumerate(ens.times):
                rows.append([str(p), t, *ens.paths[p, k]])
        write_csv(out / "paths.csv", header, rows)
    counts = {"per_step": [(n, n, 0)] * steps,
              "totals": (n * steps, n * steps, 0)}
    write_manifest(out, cfg, {"simulate": ms}, eval_counts=counts)
    if do_plot:
        from . import plots
        means = np.array([s.mean for s in states])
        variances = np.array([np.diag(s.cov) for s in states])
        plots.plot_moments(ens.times, means, variances, out / "moments.png",
                           title=f"Empirical moments (n={n})")
    return EXIT_OK


def cmd_fpk_grid(cfg: dict, out: Path, do_plot: bool):
    model = build_model(cfg)
    bounds = _require(cfg, "bounds", "fpk-grid")
    points = _require(cfg, "points", "fpk-grid")
    if isinstance(points, int):
        points = [points] * len(bounds)
    spec = GridSpec(dim=len(bounds),
                    lower=tuple(float(b[0]) for b in bounds),
                    upper=tuple(float(b[1]) for b in bounds),
                    n=tuple(int(p) for p in points))
    init = _initial_state(cfg, model.dim)
    if not isinstance(init, MomentState):
        eps = (2 * min(spec.spacing))**2
        init = MomentState(mean=init, cov=eps * np.eye(model.dim))
    t_end = float(_require(cfg, "t", "fpk-grid"))
    method = cfg.get("method", EvolveMethod.MATRIX_EXP)
    phases = {}
    A, phases["assemble"] = time_phase(lambda: assemble_operator(model, spec))
    p0 = gaussian_init(init.mean, init.cov, spec)
    dt = cfg.get("evolve_dt")
    p1, phases["evolve"] = time_phase(
        lambda: evolve(A, p0, t_end, method=method, dt=dt))
    header = [f"z_{a + 1}" for a in range(spec.dim)] + ["p"]
    nodes = spec.nodes()
    write_csv(out / "density.csv", header,
              [[*nodes[i], p1.values[i]] for i in range(spec.n_nodes)])
    mom = grid_moments(p1)
    write_manifest(out, cfg, phases, extra={
        "grid_moments": {"mean": mom.mean.tolist(), "cov": mom.cov.tolist()},
        "mass": p1.mass(),
    })
    if do_plot:
        from . import plots
        plots.plot_density(spec, p1.values, out / "density.png",
                           title=f"Density at t={t_end:g}")
    return EXIT_OK


def cmd_gp_fit(cfg: dict, out: Path, do_plot: bool):
    obs = VectorFieldObservations.from_csv(_require(cfg, "data", "gp-fit"))
    kspec = KernelSpec.from_dict(_require(cfg, "kernel", "gp-fit"))
    nugget = float(cfg.get("nugget", 1e-6))
    field, fit_ms = time_phase(lambda: fit(obs, kspec, nugget,
                                           prior_mean=cfg.get("prior_mean")))
    bounds = cfg.get("query_bounds")
    if bounds is None:
        lo = obs.inputs.min(axis=0) - 0.5
        hi = obs.inputs.max(axis=0) + 0.5
        bounds = list(zip(lo.tolist(), hi.tolist()))
    npts = cfg.get("query_points", 15)
    if isinstance(npts, int):
        npts = [npts] * obs.dim
    axes = [np.linspace(b[0], b[1], k) for b, k in zip(bounds, npts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    query = np.column_stack([m.ravel() for m in mesh])
    means = np.array([field.posterior_mean(z) for z in query])
    stds = np.array([np.sqrt(np.diag(field.posterior_cov(z))) for z in query])
    d = obs.dim
    header = ([f"z_{a + 1}" for a in range(d)] + [f"mean_{a + 1}" for a in range(d)]
              + [f"std_{a + 1}" for a in range(d)])
    write_csv(out / "field.csv", header,
              [[*query[i], *means[i], *stds[i]] for i in range(len(query))])
    phases = {"fit": fit_ms}
    extra = {}
    if cfg.get("sample_paths"):
        k = int(cfg["sample_paths"])
        z0 = np.asarray(_require(cfg, "path_z0", "gp-fit sample paths"), dtype=float)
        p_dt = float(cfg.get("path_dt", 0.05))
        p_t = float(cfg.get("path_t", 1.0))
        seed = int(cfg.get("seed", 0))
        rows = []
        trajs = []
        for i in range(k):
            path = field.sample_path_field(z0, p_dt, p_t, seed + i)
            trajs.append(np.array([z for _, z in path]))
            for t, z in path:
                rows.append([str(i), t, *z])
        write_csv(out / "paths.csv",
                  ["path", "t"] + [f"z_{a + 1}" for a in range(d)], rows)
        extra["sampled_paths"] = k
        if do_plot and d == 2:
            from . import plots
            plots.plot_paths({"field samples": trajs}, out / "paths.png")
    write_manifest(out, cfg, phases, extra=extra)
    if do_plot and d == 2:
        from . import plots
        plots.plot_field(query, means, stds, out / "field.png", observations=obs)
    return EXIT_OK


def run_bench_benes(dims, repeats=10, dt=0.1, horizon=10.0, em_dt=None,
                    seed=0, timing_repeats=3, scheme_method=Method.EULER):
    """Benchmark rows for the tanh-drift model across dimensionalities.

    Moment schemes are timed on propagation; the sampling baseline is timed
    on simulation plus empirical-moment extraction at every grid time (its
    comparable moment-trajectory output), at the KL-matched trajectory count.
    """
    rows = []
    for d in dims:
        bspec = BenesSpec.linspaced(d)
        model = make_benes(d, bspec.z0)
        grid = TimeGrid(0.0, horizon, dt)
        em_grid = TimeGrid(0.0, horizon, em_dt if em_dt else dt)
        truth = benes_truth(bspec)
        eval_times = grid.times()[1:]
        m0 = bspec.z0
        P0 = np.zeros((d, d))
        kl_by_scheme = {}
        for scheme in (Scheme.LINEARIZED, Scheme.MATCHED):
            traj, ms = time_phase(
                lambda s=scheme: propagate(model, m0, P0, grid, s, scheme_method),
                repeats=timing_repeats)
            kl = total_kl(traj, truth, eval_times)
            kl_by_scheme[scheme] = kl
            tot = traj.totals()
            rows.append({"d": d, "method": scheme, "wall_ms": ms, "total_kl": kl,
                         "n_matched": 0, "drift_evals": tot.drift,
                         "diff_evals": tot.diffusion, "jac_evals": tot.jacobian})
        n, kl_mean, kl_std = match_trajectories(
            model, truth, em_grid, target_kl=kl_by_scheme[Scheme.MATCHED],
            repeats=repeats, seeds=[seed + i for i in range(repeats)])

        def em_run():
            ens = simulate(model, bspec.z0, n, em_grid, seed)
            return [empirical_moments(ens, i) for i in range(len(ens.times))]

        _, ms = time_phase(em_run, repeats=timing_repeats)
        steps = em_grid.n_steps
        rows.append({"d": d, "method": "em", "wall_ms": ms, "total_kl": kl_mean,
                     "n_matched": n, "drift_evals": n * steps,
                     "diff_evals": n * steps, "jac_evals": 0,
                     "kl_std": kl_std})
    return rows


def cmd_bench_benes(cfg: dict, out: Path, do_plot: bool):
    dims = _require(cfg, "dims", "bench-benes")
    rows = run_bench_benes(
        dims,
        repeats=int(cfg.get("repeats", 10)),
        dt=float(cfg.get("dt", 0.1)),
        horizon=float(cfg.get("horizon", 10.0)),
        em_dt=cfg.get("em_dt"),
        seed=int(cfg.get("seed", 0)),
    )
    header = ["d", "method", "wall_ms", "total_kl", "n_matched",
              "drift_evals", "diff_evals", "jac_evals"]
    csv_rows = [[str(r["d"]), r["method"], r["wall_ms"], r["total_kl"],
                 str(r["n_matched"]), str(r["drift_evals"]),
                 str(r["diff_evals"]), str(r["jac_evals"])] for r in rows]
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in csv_rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])
    write_manifest(out, cfg, {}, extra={"rows": len(rows)})
    if do_plot:
        from . import plots
        plots.plot_bench(rows, out / "bench.png")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpsde", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--repeats", type=int, default=None)
        sp.add_argument("--plot", action="store_true",
                        help="render figures next to the CSV output")

    sp = sub.add_parser("propagate", help="moment propagation")
    common(sp)
    sp.add_argument("--t0", type=float)
    sp.add_argument("--t1", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--method", choices=[Method.EULER, Method.RK4])
    sp.add_argument("--scheme", choices=[Scheme.LINEARIZED, Scheme.MATCHED])
    sp.add_argument("--gh-order", dest="gh_order", type=int)

    sp = sub.add_parser("sample", help="Euler-Maruyama ensemble")
    common(sp)
    sp.add_argument("--t0", type=float)
    sp.add_argument("--t1", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--n", type=int)

    sp = sub.add_parser("fpk-grid", help="grid density evolution")
    common(sp)
    sp.add_argument("--bounds", help='JSON, e.g. "[[-6,6]]"')
    sp.add_argument("--points", help='JSON, e.g. "[201]"')
    sp.add_argument("--t", type=float)
    sp.add_argument("--method", choices=[EvolveMethod.MATRIX_EXP, EvolveMethod.RK4])

    sp = sub.add_parser("gp-fit", help="fit GP vector field")
    common(sp)
    sp.add_argument("--data", help="observations CSV (z_1..z_d, dz_1..dz_d)")
    sp.add_argument("--nugget", type=float)

    sp = sub.add_parser("bench-benes", help="KL-matched benchmark")
    common(sp)
    sp.add_argument("--dims", help="comma-separated, e.g. 10,50,200")
    sp.add_argument("--dt", type=float)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--em-dt", dest="em_dt", type=float)

    return p


_COMMANDS = {
    "propagate": cmd_propagate,
    "sample": cmd_sample,
    "fpk-grid": cmd_fpk_grid,
    "gp-fit": cmd_gp_fit,
    "bench-benes": cmd_bench_benes,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.subcommand](cfg, out, args.plot)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GpsdeError as exc:
        print(f"numerical failure in {args.subcommand}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
