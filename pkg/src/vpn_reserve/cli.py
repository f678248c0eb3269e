"""Scenario-driven command line: solver dispatch, seeded reproducibility and
CSV/manifest emission.

``vpn-reserve <command> --scenario <path> --out <dir> [--seed N]`` with
commands bellman, stationary, ergodicity, hierarchy, ce, game and pg.  Every
run writes its CSVs plus ``manifest.json`` (scenario hash, seed, versions and
a sha256 per file); identical scenario and seed reproduce identical bytes.
Failures print one machine-readable JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bellman import rollout, solve_chain, solve_finite_horizon, sojourn_statistics
from .ce import run_ce
from .errors import ConfigurationError, VpnReserveError
from .game import build_switching_game, deviation_gains, solve_switching_game
from .gradient import run_policy_gradient, run_policy_gradient_mpls
from .hierarchy import CeConfig, simulate_hierarchical
from .scenario import Scenario, load_scenario
from .scenario_seed import derive_seed
from .stationary import build_dual_lp, dump_lp, ergodicity_check, \
    extract_stationary_strategy, solve_simplex, uniform_gamma

COMMANDS = ("bellman", "stationary", "ergodicity", "hierarchy", "ce", "game", "pg")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RunArtifact:
    out_dir: Path
    manifest_path: Path
    files: dict[str, str]


def _finish(out_dir: Path, command: str, scenario: Scenario, seed: int) -> RunArtifact:
    files = {}
    for item in sorted(out_dir.iterdir()):
        if item.name == "manifest.json" or not item.is_file():
            continue
        files[item.name] = hashlib.sha256(item.read_bytes()).hexdigest()
    manifest = {
        "command": command,
        "scenario": scenario.name,
        "scenario_sha256": scenario.content_hash,
        "seed": seed,
        "versions": {"vpn-reserve": __version__,
                     "python": sys.version.split()[0],
                     "numpy": np.__version__},
        "files": files,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return RunArtifact(out_dir=out_dir, manifest_path=manifest_path, files=files)


def _segment_solutions(scenario: Scenario, units):
    return {unit.name: solve_finite_horizon(unit.model, unit.prices, scenario.horizon)
            for unit in units}


def run_bellman(scenario: Scenario, out_dir: Path, seed: int) -> None:
    units = scenario.build_units()
    initial = scenario.initial_states(units)
    solutions = _segment_solutions(scenario, units)
    for u, unit in enumerate(units):
        chains = unit.chains()
        sites = list(unit.hose.sites)
        trajs = {}
        for site in sites:
            traj_seed = derive_seed(seed, f"bellman:{unit.name}:{site}")
            trajs[site] = rollout(solutions[unit.name][site], chains[site],
                                  initial[u][site], traj_seed)
        header = ["epoch", "regime"]
        for site in sites:
            d1, d2 = unit.hose.destinations(site)
            header += [f"state_{site}", f"action_{site}",
                       f"reservation_{site}to{d1}", f"reservation_{site}to{d2}",
                       f"cost_{site}"]
        header.append("cost_total")
        rows = []
        T = scenario.horizon
        for t in range(T + 1):
            row = [t, "LOCAL"]
            total = 0.0
            for site in sites:
                traj = trajs[site]
                chain = chains[site]
                row += [chain.values[traj.states[t]], int(traj.actions[t]),
                        traj.reservations[t][0], traj.reservations[t][1],
                        traj.stage_costs[t]]
                total += traj.stage_costs[t]
            row.append(total)
            rows.append(row)
        write_csv(out_dir / f"trajectory_{unit.name}.csv", header, rows)

        vrows = []
        prow = []
        for site in sites:
            sol = solutions[unit.name][site]
            for t in range(scenario.horizon + 1):
                for s in range(sol.values.shape[1]):
                    vrows.append([unit.name, site, t, s, sol.values[t, s]])
                    prow.append([unit.name, site, t, s, int(sol.actions[t, s])])
        write_csv(out_dir / f"values_{unit.name}.csv",
                  ["vpn", "site", "epoch", "state", "value"], vrows)
        write_csv(out_dir / f"policy_{unit.name}.csv",
                  ["vpn", "site", "epoch", "state", "action"], prow)

        counts_rows = []
        for site in sites:
            counts = sojourn_statistics([trajs[site]])
            for (s, a), c in sorted(counts.items()):
                counts_rows.append([unit.name, site, s, a, c])
        write_csv(out_dir / f"sojourn_{unit.name}.csv",
                  ["vpn", "site", "state", "action", "count"], counts_rows)


def run_stationary(scenario: Scenario, out_dir: Path, seed: int,
                   dump_lp_files: bool = False) -> None:
    units = scenario.build_units()
    occ_rows, strat_rows = [], []
    for unit in units:
        for site, chain in unit.chains().items():
            lp = build_dual_lp(chain, scenario.beta, uniform_gamma(len(chain)))
            occupation = solve_simplex(lp)
            strategy = extract_stationary_strategy(occupation)
            for s in range(len(chain)):
                for a in range(3):
                    occ_rows.append([unit.name, site, s, chain.values[s], a,
                                     occupation.x[s, a]])
                strat_rows.append([unit.name, site, s,
                                   int(np.argmax(strategy[:, s]))])
            if dump_lp_files:
                (out_dir / f"lp_{unit.name}_{site}.txt").write_text(
                    dump_lp(lp), encoding="utf-8")
    write_csv(out_dir / "occupation.csv",
              ["vpn", "site", "state", "x_first", "action", "x_sa"], occ_rows)
    write_csv(out_dir / "strategy.csv", ["vpn", "site", "state", "action"], strat_rows)


def run_ergodicity(scenario: Scenario, out_dir: Path, seed: int) -> None:
    units = scenario.build_units()
    solutions = _segment_solutions(scenario, units)
    rows = []
    for unit in units:
        for site, chain in unit.chains().items():
            lp = build_dual_lp(chain, scenario.beta, uniform_gamma(len(chain)))
            occupation = solve_simplex(lp)
            trajs = [rollout(solutions[unit.name][site], chain, s0,
                             derive_seed(seed, f"ergodicity:{unit.name}:{site}:{s0}"),
                             epochs=scenario.ergodicity.epochs)
                     for s0 in range(len(chain))]
            report = ergodicity_check(occupation, chain, trajs,
                                      scenario.ergodicity.k_max)
            for r in report.rows:
                rows.append([unit.name, site, r.action, r.k, r.spatial, r.temporal,
                             r.abs_gap, r.rel_gap])
    write_csv(out_dir / "moments.csv",
              ["vpn", "site", "action", "k", "spatial", "temporal",
               "abs_gap", "rel_gap"], rows)


def run_hierarchy(scenario: Scenario, out_dir: Path, seed: int) -> None:
    units = scenario.build_units()
    link_model = scenario.build_link_model(units)
    bounds = scenario.satisfaction_bounds()
    if scenario.ce is None:
        raise ConfigurationError("hierarchy needs a [ce] section for decomposition")
    solutions = _segment_solutions(scenario, units)
    link_solutions = [solve_chain(link_model.chain(l), scenario.beta, scenario.horizon)
                      for l in range(link_model.n_links())]
    ce_cfg = CeConfig(K=scenario.ce.K, rho=scenario.ce.rho, N=scenario.ce.N,
                      d=scenario.ce.d, grid_step=scenario.ce.grid_step,
                      max_iterations=scenario.ce.max_iterations)
    traj = simulate_hierarchical(units, scenario.routing, bounds, solutions,
                                 link_model, link_solutions, scenario.horizon,
                                 seed, ce_cfg, scenario.bounds_cost,
                                 scenario.initial_states(units))
    n_links = link_model.n_links()
    header = ["epoch", "regime", "violated"]
    for u, unit in enumerate(units):
        for site in traj.site_names:
            header.append(f"state_{unit.name}_{site}")
    header += [f"load_{l}" for l in range(n_links)]
    header += [f"cost_{unit.name}" for unit in units]
    header += ["link_cost"]
    for u, unit in enumerate(units):
        for site in traj.site_names:
            header.append(f"action_{unit.name}_{site}")
    header += [f"link_action_{l}" for l in range(n_links)]
    rows = []
    for t in range(scenario.horizon + 1):
        row = [t, traj.regimes[t], bool(traj.violated[t])]
        row += [int(traj.states[t, u, i]) for u in range(len(units))
                for i in range(len(traj.site_names))]
        row += list(traj.loads[t])
        row += list(traj.vpn_costs[t])
        row.append(traj.link_costs[t])
        row += [int(traj.local_actions[t, u, i]) for u in range(len(units))
                for i in range(len(traj.site_names))]
        row += [int(a) for a in traj.link_actions[t]]
        rows.append(row)
    write_csv(out_dir / "trajectory.csv", header, rows)
    write_csv(out_dir / "decompositions.csv",
              ["epoch", "iterations", "residual", "p1", "p2", "p3", "sample_size"],
              [[r.epoch, r.iterations, r.residual, *r.shapes, r.sample_size]
               for r in traj.ce_reports])


def run_ce_command(scenario: Scenario, out_dir: Path, seed: int) -> None:
    if scenario.ce is None:
        raise ConfigurationError("scenario has no [ce] section")
    if scenario.routing is None:
        raise ConfigurationError("ce needs the routing matrix")
    cfg = scenario.ce
    n_flows = scenario.routing.shape[1] // len(scenario.vpns)
    if cfg.target is not None:
        target = np.asarray(cfg.target, dtype=float)
    elif cfg.plant_shapes is not None:
        plant = np.repeat(cfg.plant_shapes, n_flows)
        target = scenario.routing @ plant
    else:
        raise ConfigurationError("[ce] needs either plant_shapes or target")
    result = run_ce(target, scenario.routing, K=cfg.K, rho=cfg.rho, N=cfg.N,
                    d=cfg.d, seed=derive_seed(seed, "ce"),
                    grid_step=cfg.grid_step, max_iterations=cfg.max_iterations)
    write_csv(out_dir / "quantile_trace.csv",
              ["iteration", "quantile", "p1", "p2", "p3"],
              [[i + 1, q, *result.params_trace[i + 1]]
               for i, q in enumerate(result.quantile_trace)])
    write_csv(out_dir / "result.csv",
              ["p1", "p2", "p3", "iterations", "best_residual"],
              [[*result.params.as_tuple(), result.iterations, result.best_residual]])
    write_csv(out_dir / "decomposition.csv",
              ["flow", "reservation"],
              [[f, v] for f, v in enumerate(result.best_candidate)])


def run_game(scenario: Scenario, out_dir: Path, seed: int) -> None:
    units = scenario.build_units()
    link_model = scenario.build_link_model(units)
    bounds = scenario.satisfaction_bounds()
    beta = scenario.game.beta if scenario.game.beta is not None else scenario.beta
    initial = scenario.initial_states(units)
    sg = build_switching_game(units, scenario.routing, link_model, bounds,
                              beta=beta, lambda_headroom=scenario.lambda_headroom,
                              active=set(scenario.game.active) if scenario.game.active else None,
                              initial_states=initial,
                              nu_seed=derive_seed(seed, "game:nu"))
    sol = solve_switching_game(sg.game)
    g1, g2 = deviation_gains(sg.game, sol.p1_strategy, sol.p2_strategy)
    seg_cols = [f"state_{v}_{s}" for v, s in sg.segment_names]
    rows = []
    for k, combo in enumerate(sg.partition.states):
        p1_idx = int(np.argmax(sol.p1_strategy[k]))
        p2_idx = int(np.argmax(sol.p2_strategy[k]))
        rows.append([*combo, "E1" if sg.partition.e1[k] else "E2", sol.values[k],
                     p1_idx, sol.p1_strategy[k, p1_idx],
                     p2_idx, sol.p2_strategy[k, p2_idx],
                     float(sol.p1_strategy[k] @ sg.vpn_cost_part[k]),
                     float(sg.link_cost_part[k] @ sol.p2_strategy[k])])
    write_csv(out_dir / "game.csv",
              seg_cols + ["set", "value", "p1_action", "p1_weight",
                          "p2_action", "p2_weight", "vpn_cost", "link_cost"],
              rows)
    write_csv(out_dir / "summary.csv",
              ["iterations", "p1_deviation_gain", "p2_deviation_gain",
               "e1_states", "e2_states"],
              [[sol.iterations, g1, g2, *sg.partition.counts()]])


def run_pg(scenario: Scenario, out_dir: Path, seed: int) -> None:
    units = scenario.build_units()
    pg = scenario.pg
    if pg.link_level:
        link_model = scenario.build_link_model(units)
        bounds = scenario.satisfaction_bounds()
        theta0 = {}
        for unit in units:
            for site in unit.hose.sites:
                theta0[(unit.name, site)] = np.full(3, _default_theta(unit, site, pg))
        link_theta0 = np.full((link_model.n_links(), 3), pg.link_theta0)
        run = run_policy_gradient_mpls(units, scenario.routing, link_model, bounds,
                                       theta0, link_theta0, pg.eta, pg.T_max,
                                       derive_seed(seed, "pg:mpls:run"),
                                       pg.step_scale)
        _write_site_runs(out_dir, run.site_runs.values())
        write_csv(out_dir / "regimes.csv", ["epoch", "regime"],
                  [[t, r] for t, r in enumerate(run.regimes)])
        lt_rows = []
        for t in range(pg.T_max + 1):
            for l in range(link_theta0.shape[0]):
                lt_rows.append([t, l, *run.link_theta_trace[t, l],
                                run.link_lambda_trace[t, l]])
        write_csv(out_dir / "link_traces.csv",
                  ["epoch", "link", "theta1", "theta2", "theta3", "lambda"], lt_rows)
        return
    runs = []
    for unit in units:
        chains = unit.chains()
        for site in unit.hose.sites:
            chain = chains[site]
            theta0 = np.full(3, _default_theta(unit, site, pg))
            run = run_policy_gradient(
                chain, theta0, pg.eta, pg.T_max,
                derive_seed(seed, f"pg:{unit.name}:{site}"),
                recurrent=len(chain) - 1, step_scale=pg.step_scale,
                divergence_scale=pg.divergence_scale)
            run.label = f"{unit.name}:{site}"
            runs.append(run)
    _write_site_runs(out_dir, runs)


def _default_theta(unit, site, pg) -> float:
    if pg.theta0 is not None:
        return pg.theta0
    from .costs import phi
    d1, _ = unit.hose.destinations(site)
    price = unit.prices.p[(site, d1)]
    return 2.0 * phi(unit.hose.t_out[site] / 2.0, price, unit.prices.phi_form)


def _write_site_runs(out_dir: Path, runs) -> None:
    theta_rows, lam_rows, state_rows = [], [], []
    for run in runs:
        for t in range(len(run.lambda_trace)):
            theta_rows.append([run.label, t, *run.theta_trace[t]])
            lam_rows.append([run.label, t, run.lambda_trace[t]])
            state_rows.append([run.label, t, int(run.states[t])])
    write_csv(out_dir / "theta_trace.csv",
              ["chain", "epoch", "theta1", "theta2", "theta3"], theta_rows)
    write_csv(out_dir / "lambda_trace.csv", ["chain", "epoch", "lambda"], lam_rows)
    write_csv(out_dir / "states.csv", ["chain", "epoch", "state"], state_rows)


def run(command: str, scenario: Scenario, out_dir: str | Path, seed: int | None = None,
        dump_lp_files: bool = False) -> RunArtifact:
    """Dispatch one command; returns the artifact with per-file hashes."""
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; pick one of {COMMANDS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    effective_seed = scenario.seed if seed is None else seed
    if command == "bellman":
        run_bellman(scenario, out_dir, effective_seed)
    elif command == "stationary":
        run_stationary(scenario, out_dir, effective_seed, dump_lp_files)
    elif command == "ergodicity":
        run_ergodicity(scenario, out_dir, effective_seed)
    elif command == "hierarchy":
        run_hierarchy(scenario, out_dir, effective_seed)
    elif command == "ce":
        run_ce_command(scenario, out_dir, effective_seed)
    elif command == "game":
        run_game(scenario, out_dir, effective_seed)
    elif command == "pg":
        run_pg(scenario, out_dir, effective_seed)
    return _finish(out_dir, command, scenario, effective_seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vpn-reserve",
        description="Worst-case-aware dynamic bandwidth reservation toolkit.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--scenario", required=True, help="scenario TOML file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario's master seed")
    parser.add_argument("--dump-lp", action="store_true",
                        help="also dump the occupation LPs (stationary command)")
    args = parser.parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        artifact = run(args.command, scenario, args.out, args.seed, args.dump_lp)
    except VpnReserveError as err:
        sys.stderr.write(json.dumps({
            "status": "error", "command": args.command,
            "type": type(err).__name__, "message": str(err)}) + "\n")
        return 1
    sys.stdout.write(f"wrote {len(artifact.files)} files to {artifact.out_dir}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
