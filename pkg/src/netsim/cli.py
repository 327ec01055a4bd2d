"""Command-line entry points.

Subcommands cover each pipeline stage: train-mobility fits the trajectory
model, generate samples trajectories plus service sessions, simulate runs
KPI episodes, optimize searches antenna parameters, eval-gen scores a
model against held-out data, and serve exposes the environment over TCP.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import tomli

from .behavior import (
    BehaviorError,
    TrajectoryVAE,
    VaeHyperparams,
    build_preference_vectors,
    cluster_app_actions,
    evaluate_generation,
    generate_traffic,
    generate_trajectories,
    ingest_mobility_csv,
    ingest_packet_csv,
    postprocess_trajectories,
    preprocess,
    sessions_to_csv_lines,
    train_trajectory_vae,
    waypoints_to_csv,
)
from .netem import KPI_CSV_HEADER, kpi_csv_lines
from .orchestrator import BeamOverride, OrchestratorError, SimConfig, run_episode
from .rlenv import (
    PROGRESS_CSV_HEADER,
    AntennaEnv,
    RewardWeights,
    RlEnvError,
    cross_entropy,
    hill_climb,
    progress_csv_lines,
)
from .scenario import BeamConfig, Scenario, ScenarioError, parse_scenario
from .server import EnvServer
from .synthdata import make_blob_traffic

SUMMARY_CSV_HEADER = "coverage_pct,avg_rsrp_dbm,avg_sinr_db,dl_mbps,ul_mbps,users"


class CliError(Exception):
    """Bad flags or unusable input files; exit code 2."""


def _write_lines(path, lines: list) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def _load_scenario(path) -> Scenario:
    if not os.path.exists(path):
        raise CliError(f"scenario not found: {path}")
    return parse_scenario(path)


def _load_model(path) -> TrajectoryVAE:
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path}")
    return TrajectoryVAE.load(path)


# ---------------------------------------------------------------------------
# beam override files (the reusable piece of a simulation call)


def override_toml_lines(overrides: list) -> list:
    lines = []
    for ov in overrides:
        b = ov.config
        lines.append("[[override]]")
        lines.append(f'site_id = "{ov.site_id}"')
        lines.append(f"beam_id = {ov.beam_id}")
        lines.append(f"h_beamwidth_deg = {b.h_beamwidth_deg!r}")
        lines.append(f"v_beamwidth_deg = {b.v_beamwidth_deg!r}")
        lines.append(f"azimuth_offset_deg = {b.azimuth_offset_deg!r}")
        lines.append(f"tilt_deg = {b.tilt_deg!r}")
        lines.append(f"active = {'true' if b.active else 'false'}")
        lines.append(f"g_max_dbi = {b.g_max_dbi!r}")
        lines.append("")
    return lines


def read_override_file(path) -> list:
    if not os.path.exists(path):
        raise CliError(f"overrides not found: {path}")
    with open(path, "rb") as f:
        data = tomli.load(f)
    out = []
    for i, entry in enumerate(data.get("override", [])):
        try:
            cfg = BeamConfig(
                beam_id=int(entry["beam_id"]),
                h_beamwidth_deg=float(entry["h_beamwidth_deg"]),
                v_beamwidth_deg=float(entry["v_beamwidth_deg"]),
                azimuth_offset_deg=float(entry["azimuth_offset_deg"]),
                tilt_deg=float(entry["tilt_deg"]),
                active=bool(entry["active"]),
                g_max_dbi=float(entry.get("g_max_dbi", 17.0)),
            )
            out.append(BeamOverride(str(entry["site_id"]), cfg.beam_id, cfg))
        except (KeyError, TypeError, ValueError) as e:
            raise CliError(f"override entry {i}: {e}") from e
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    sc = _load_scenario(args.scenario)
    model = _load_model(args.checkpoint)
    if model.vocab > sc.grid.n_cells:
        raise CliError(
            f"checkpoint vocabulary {model.vocab} exceeds scenario grid cells {sc.grid.n_cells}"
        )
    n_users = args.n_users if args.n_users is not None else sc.users.n_users
    seqs = generate_trajectories(
        model, n_users, args.steps, args.seed, time_of_day_start=args.start_hour
    )
    waypoints = postprocess_trajectories(seqs, sc.grid, roads=sc.roads)
    os.makedirs(args.out, exist_ok=True)
    wp_path = os.path.join(args.out, "waypoints.csv")
    _write_lines(wp_path, waypoints_to_csv(waypoints))

    if args.packets is not None:
        if not os.path.exists(args.packets):
            raise CliError(f"packet data not found: {args.packets}")
        packets = ingest_packet_csv(args.packets)
    else:
        uids = sorted(waypoints)
        packets = make_blob_traffic(uids, seed=args.seed) if uids else []
    if packets:
        clusters = cluster_app_actions(packets, seed=args.seed)
        prefs = build_preference_vectors(packets)
        sessions = generate_traffic(clusters, prefs, horizon_s=args.horizon_s, seed=args.seed)
    else:
        sessions = []
    sess_path = os.path.join(args.out, "sessions.csv")
    _write_lines(sess_path, sessions_to_csv_lines(sessions))

    if args.eval_against is not None:
        if not os.path.exists(args.eval_against):
            raise CliError(f"mobility data not found: {args.eval_against}")
        real = preprocess(ingest_mobility_csv(args.eval_against), sc.grid)
        rep = evaluate_generation(real, seqs, sc.grid)
        print(
            f"kl_location={rep.kl_location:.6f} "
            f"kl_stay_duration={rep.kl_stay_duration:.6f} "
            f"js_location={rep.js_location:.6f}"
        )
    print(f"wrote {wp_path} ({len(waypoints)} users) and {sess_path} ({len(sessions)} sessions)")
    return 0


def cmd_simulate(args) -> int:
    sc = _load_scenario(args.scenario)
    overrides = read_override_file(args.overrides) if args.overrides else []
    ticks = args.ticks if args.ticks is not None else sc.reward.eval_window_ticks
    seed = args.seed if args.seed is not None else sc.seed
    result = run_episode(
        SimConfig(scenario=sc, overrides=overrides, episode_ticks=ticks, seed=seed,
                  record_payloads=False)
    )
    os.makedirs(args.out, exist_ok=True)
    kpi_lines = [KPI_CSV_HEADER]
    for report in result.reports:
        rows = kpi_csv_lines(report)
        kpi_lines.extend(rows if args.per_cell else rows[:1])
    kpi_path = os.path.join(args.out, "kpi.csv")
    _write_lines(kpi_path, kpi_lines)
    s = result.summary
    summary_path = os.path.join(args.out, "summary.csv")
    _write_lines(
        summary_path,
        [
            SUMMARY_CSV_HEADER,
            f"{s['coverage_pct']:.4f},{s['avg_rsrp_dbm']:.4f},{s['avg_sinr_db']:.4f},"
            f"{s['dl_mbps']:.4f},{s['ul_mbps']:.4f},{s['users']:.4f}",
        ],
    )
    print(f"wrote {kpi_path} and {summary_path}")
    return 0


def cmd_optimize(args) -> int:
    sc = _load_scenario(args.scenario)
    if args.budget < 1:
        raise CliError(f"budget must be >= 1, got {args.budget}")
    w_flags = (args.w_coverage, args.w_rsrp, args.w_sinr, args.w_dl, args.w_ul)
    weights = None
    if any(v is not None for v in w_flags):
        try:
            weights = RewardWeights(*(v if v is not None else 0.0 for v in w_flags))
        except RlEnvError as e:
            raise CliError(str(e)) from e
    env = AntennaEnv(sc, weights=weights)
    if args.algo == "hill":
        res = hill_climb(env, budget=args.budget, seed=args.seed)
    else:
        population = min(args.population, args.budget)
        if population < 4:
            raise CliError("cem needs a budget of at least 4 evaluations")
        iters = max(0, args.budget // population - 1)
        res = cross_entropy(
            env, population=population, elite_frac=args.elite_frac, iters=iters, seed=args.seed
        )
    os.makedirs(args.out, exist_ok=True)
    progress_path = os.path.join(args.out, "progress.csv")
    _write_lines(progress_path, [PROGRESS_CSV_HEADER] + progress_csv_lines(res.progress))
    overrides_path = os.path.join(args.out, "overrides.toml")
    _write_lines(overrides_path, override_toml_lines(res.best_overrides))
    print(
        f"algo={args.algo} best_reward={res.best_reward:.6f} evaluations={res.evaluations} "
        f"wrote {overrides_path} and {progress_path}"
    )
    return 0


def cmd_train_mobility(args) -> int:
    sc = _load_scenario(args.scenario)
    if not os.path.exists(args.mobility):
        raise CliError(f"mobility data not found: {args.mobility}")
    seqs = preprocess(ingest_mobility_csv(args.mobility), sc.grid)
    hp = VaeHyperparams(
        latent_dim=args.latent_dim, hidden_dim=args.hidden_dim, epochs=args.epochs, lr=args.lr
    )
    model, trace = train_trajectory_vae(seqs, hp=hp, seed=args.seed, vocab=sc.grid.n_cells)
    out_dir = os.path.dirname(args.out)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    model.save(args.out)
    print(f"sequences={len(seqs)} epochs={len(trace)} final_loss={trace[-1]:.6f} wrote {args.out}")
    return 0


def cmd_eval_gen(args) -> int:
    sc = _load_scenario(args.scenario)
    model = _load_model(args.checkpoint)
    if not os.path.exists(args.holdout):
        raise CliError(f"mobility data not found: {args.holdout}")
    real = preprocess(ingest_mobility_csv(args.holdout), sc.grid)
    gen = generate_trajectories(model, args.n_users, args.steps, args.seed)
    rep = evaluate_generation(real, gen, sc.grid)
    print(f"kl_location={rep.kl_location:.6f}")
    print(f"kl_stay_duration={rep.kl_stay_duration:.6f}")
    print(f"js_location={rep.js_location:.6f}")
    return 0


def cmd_serve(args) -> int:
    sc = _load_scenario(args.scenario)
    server = EnvServer(sc, host=args.host, port=args.port)
    print(json.dumps({"event": "listening", "port": server.port}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="netsim",
        description="Composable radio-network simulator: behavior generation, "
        "KPI emulation, antenna optimization, and a TCP environment service.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample trajectories and service sessions from a trained model")
    g.add_argument("--scenario", required=True, help="scenario TOML")
    g.add_argument("--checkpoint", required=True, help="trained trajectory model")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n-users", type=int, default=None, help="default: scenario user count")
    g.add_argument("--steps", type=int, default=20, help="trajectory steps per user")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--start-hour", type=int, default=8, help="hour of day at trajectory start")
    g.add_argument("--horizon-s", type=float, default=3600.0, help="session generation horizon")
    g.add_argument("--packets", default=None, help="packet CSV for the traffic model; synthetic mix when omitted")
    g.add_argument("--eval-against", default=None, help="mobility CSV to score the generated set against")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="run one KPI episode and write CSV results")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ticks", type=int, default=None, help="default: scenario eval window")
    s.add_argument("--seed", type=int, default=None, help="default: scenario seed")
    s.add_argument("--overrides", default=None, help="beam override TOML (e.g. from optimize)")
    s.add_argument("--per-cell", action="store_true", help="include per-cell KPI rows")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize", help="search beam parameters against the KPI reward")
    o.add_argument("--scenario", required=True)
    o.add_argument("--out", required=True)
    o.add_argument("--algo", choices=("hill", "cem"), default="hill")
    o.add_argument("--budget", type=int, default=200, help="environment evaluations")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--population", type=int, default=20, help="cem population size")
    o.add_argument("--elite-frac", type=float, default=0.25, help="cem elite fraction")
    for name in ("coverage", "rsrp", "sinr", "dl", "ul"):
        o.add_argument(f"--w-{name}", type=float, default=None, dest=f"w_{name}",
                       help=f"reward weight ({name}); default: scenario reward section")
    o.set_defaults(func=cmd_optimize)

    t = sub.add_parser("train-mobility", help="fit the trajectory model on mobility data")
    t.add_argument("--scenario", required=True, help="provides the spatial grid")
    t.add_argument("--mobility", required=True, help="mobility fix CSV")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--latent-dim", type=int, default=8)
    t.add_argument("--hidden-dim", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train_mobility)

    e = sub.add_parser("eval-gen", help="score generated trajectories against held-out data")
    e.add_argument("--scenario", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--holdout", required=True, help="held-out mobility CSV")
    e.add_argument("--n-users", type=int, default=50)
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval_gen)

    v = sub.add_parser("serve", help="run the TCP environment service")
    v.add_argument("--scenario", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=0, help="0 picks a free port (printed on stdout)")
    v.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ScenarioError, BehaviorError, OrchestratorError, RlEnvError, tomli.TOMLDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # anything else is a genuine runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
