"""``she-lab`` command line: one subcommand per experiment, driven by a YAML config."""

import argparse
import logging
import math
import sys

import numpy as np

from . import experiments as ex
from . import lemmas
from .config import EXPERIMENTS, ConfigError, parse_config
from .correlation import model_from_config
from .initial_data import measure_from_config
from .kernels import LatticeGrid
from .persist import persist_result
from .solver import RhoModel, SimulationSpec, simulate

log = logging.getLogger("shelab")

__all__ = ["main", "build_setup", "run_config"]


def build_setup(cfg):
    g = cfg.grid
    grid = LatticeGrid(g["d"], g["L"], g["N"])
    model = model_from_config({**cfg.model, "dimension": g["d"]})
    r = cfg.rho
    rho = RhoModel(r["kind"], r["lam"], r["a"], math.inf if r["cap"] is None else r["cap"])
    s = cfg.scheme
    setup = ex.ExperimentSetup(grid, model, rho, s["dt"], s["T"], seed=cfg.seed, replicas=cfg.replicas,
                               scheme=s["name"], eps=s["eps"], blowup_guard=s["blowup_guard"],
                               n_batches=s["n_batches"])
    return setup


def _measure(block, d):
    blk = {"atoms": [{"x": a["x"], "mass": a["mass"]} for a in block.get("atoms", [])]}
    dens = block.get("density")
    if dens is not None:
        blk["density"] = {k: v for k, v in dens.items() if v is not None}
    return measure_from_config(blk, d)


def _simulate(cfg, setup, mu, p):
    times = tuple(p["snapshot_times"] or (setup.T,))
    spec = SimulationSpec(setup.grid, setup.model, mu, setup.rho, setup.dt, setup.T, setup.scheme,
                          setup.eps, times, setup.seed, setup.replicas, setup.blowup_guard)
    traj = simulate(spec)
    g = setup.grid
    node = ex._node_index(g, p["x"])
    rows = []
    ok = traj.healthy()
    for t, u in zip(traj.times, traj.values):
        u = u[ok]
        at = u[(slice(None),) + node]
        mass = u.reshape(u.shape[0], -1).sum(axis=1) * g.cell_volume
        m2 = ex.batch_ci(at ** 2, min(setup.n_batches, max(1, at.size)))
        rows.append({"t": float(t), "mean_u": float(at.mean()), "second_moment": m2.value,
                     "ci_lo": m2.lo, "ci_hi": m2.hi, "mean_mass": float(mass.mean()),
                     "min_u": float(u.min()), "replicas": int(at.size)})
    blown = int(traj.blown.sum())
    cols = ["t", "mean_u", "second_moment", "ci_lo", "ci_hi", "mean_mass", "min_u", "replicas"]
    return ex.ExperimentResult("simulate", cols, rows, {"no_blowup": ex._verdict(blown == 0)},
                               traj.noise_hash, seed=setup.seed, notes=[f"blown replicas: {blown}"])


def _kernels_check():
    rows = lemmas.kernels_check()
    summary = lemmas.summarize(rows)
    verdicts = {k: ex._verdict(v) for k, v in summary.items()}
    return ex.ExperimentResult("kernels-check", list(lemmas.COLUMNS), [r.as_dict() for r in rows],
                               verdicts, "", seed=0)


def run_config(cfg):
    """Run the experiment a validated :class:`RunConfig` describes."""
    name, p = cfg.experiment, cfg.params
    if name == "kernels-check":
        res = _kernels_check()
        res.config_digest = cfg.digest
        return res
    setup = build_setup(cfg)
    d = setup.grid.d
    mu = _measure(cfg.initial, d)
    if name == "simulate":
        res = _simulate(cfg, setup, mu, p)
    elif name == "moments" and p["mode"] == "oracle":
        res = ex.second_moment_experiment(setup, p["t"], p["refine"], p["refine_replicas"], p["tolerance"])
    elif name == "moments":
        res = ex.moments_experiment(setup, mu, tuple(p["p_list"]), tuple(p["times"]), p["x"],
                                    p["average_nodes"])
    elif name == "compare":
        sw = p["strong_window"]
        res = ex.comparison_experiment(setup, mu, _measure(p["upper"], d), tuple(p["dt_ladder"]),
                                       p["tol_num"], p["final_max"],
                                       None if sw is None else tuple(map(tuple, sw)),
                                       p["positive_fraction"], tuple(p["count_times"]))
    elif name == "smallball":
        eps = tuple(p["eps_list"]) if p["eps_list"] else ex.SMALLBALL_EPS
        res = ex.smallball_experiment(setup, mu, tuple(map(tuple, p["window"])), eps,
                                      p["positive_fraction"], p["min_r2"], p["tail_probability"])
    elif name == "holder":
        er = p["exponent_range"]
        res = ex.holder_experiment(setup, mu, p["direction"], p["t_eval"], tuple(p["lags"]),
                                   None if er is None else tuple(er), p["min_r2"])
    elif name == "converge-initial":
        res = ex.approx_initialdata_experiment(setup, mu, tuple(p["eps_ladder"]), p["t"], p["x"])
    elif name == "converge-noise":
        res = ex.approx_noise_experiment(setup, mu, tuple(p["eps_cells"]), p["t"])
    elif name == "weak-trace":
        phi = ex.triangle_test_function(setup.grid, p["phi_center"], p["phi_width"])
        res = ex.weak_trace_experiment(setup, mu, phi, tuple(p["t_ladder"]), p["tolerance"])
    else:  # pragma: no cover - guarded by the config schema
        raise ConfigError([f"experiment.name: {name!r} is not runnable"])
    res.config_digest = cfg.digest
    return res


def _parser():
    ap = argparse.ArgumentParser(prog="she-lab",
                                 description="Monte Carlo and kernel checks for the stochastic heat equation.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--replicas", type=int, help="override the replica count")
        sp.add_argument("--out", help="output directory (default: config output_dir)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config)
        if cfg.experiment != args.command:
            raise ConfigError([f"experiment.name: config is for {cfg.experiment!r}, "
                               f"but the subcommand is {args.command!r}"])
        cfg = cfg.with_overrides(args.seed, args.replicas, args.out)
        log.info("running %s (digest %s)", cfg.experiment, cfg.digest[:12])
        with np.errstate(over="ignore", invalid="ignore"):
            res = run_config(cfg)
        path = persist_result(res, cfg.output_dir, config=cfg.semantic())
    except ConfigError as exc:
        print(f"she-lab: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"she-lab: error: {exc}", file=sys.stderr)
        return 1
    for k, v in res.verdicts.items():
        print(f"{k}: {v}")
    print(f"manifest: {path}")
    return {"pass": 0, "inconclusive": 2}.get(res.status, 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
