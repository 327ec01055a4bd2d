"""Command-line behavior: output files, determinism, exit codes, and the
optimize -> simulate closed loop."""

import json
import socket
import subprocess
import sys

import pytest

from netsim import protocol as proto
from netsim.behavior import (
    TrajectorySequence,
    TrajStep,
    VaeHyperparams,
    export_mobility_csv,
    ingest_session_csv,
    train_trajectory_vae,
)
from netsim.cli import main, override_toml_lines, read_override_file
from netsim.orchestrator import BeamOverride, ingest_waypoint_csv
from netsim.scenario import BeamConfig
from netsim.synthdata import make_commute_corpus

SCENARIO_TOML = """
seed = 9

[grid]
width_m = 400.0
height_m = 400.0
resolution_m = 50.0

[users]
n_users = 5
mode = "cluster"
cluster_x_m = 300.0
cluster_y_m = 200.0
cluster_radius_m = 50.0
traffic = "constant"

[reward]
w_coverage = 1.0
eval_window_ticks = 4
episode_steps = 3

[[site]]
site_id = "s0"
x_m = 80.0
y_m = 200.0
mech_azimuth_deg = 90.0
tx_power_dbm = 20.0

[[site.beam]]
beam_id = 0
azimuth_offset_deg = -25.0
tilt_deg = 8.0
"""


@pytest.fixture()
def scenario_path(tmp_path):
    p = tmp_path / "scenario.toml"
    p.write_text(SCENARIO_TOML, encoding="utf-8")
    return str(p)


def _tiny_checkpoint(tmp_path, vocab=64):
    """Train a throwaway trajectory model just large enough to be loadable."""
    seqs = [
        TrajectorySequence(
            user_id=f"u{i}",
            steps=[
                TrajStep(token=(i * 7 + t) % vocab, bucket=(8 + t) % 24,
                         stay_s=120.0, arrival_s=600.0 * t)
                for t in range(4)
            ],
        )
        for i in range(4)
    ]
    hp = VaeHyperparams(latent_dim=2, hidden_dim=8, loc_embed_dim=4,
                        time_embed_dim=2, user_embed_dim=2, epochs=3, lr=0.01)
    model, _ = train_trajectory_vae(seqs, hp=hp, seed=1, vocab=vocab)
    path = tmp_path / "model.ckpt"
    model.save(str(path))
    return str(path)


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_kpi_and_summary(scenario_path, tmp_path):
    out = tmp_path / "run"
    rc = main(["simulate", "--scenario", scenario_path, "--out", str(out),
               "--ticks", "10", "--seed", "5"])
    assert rc == 0
    kpi_lines = (out / "kpi.csv").read_text().splitlines()
    assert kpi_lines[0].startswith("tick,scope,")
    assert len(kpi_lines) == 11  # header + one grid row per tick
    assert all(line.split(",")[1] == "grid" for line in kpi_lines[1:])
    summary_lines = (out / "summary.csv").read_text().splitlines()
    assert len(summary_lines) == 2
    # summary equals the mean of the tick rows
    cols = list(zip(*(list(map(float, line.split(",")[2:7])) for line in kpi_lines[1:])))
    means = [sum(c) / len(c) for c in cols]
    got = list(map(float, summary_lines[1].split(",")[:5]))
    assert got == pytest.approx(means, abs=1e-3)


def test_simulate_deterministic_bytes(scenario_path, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--scenario", scenario_path, "--out", str(out),
                     "--ticks", "6", "--seed", "3"]) == 0
        outs.append((out / "kpi.csv").read_bytes() + (out / "summary.csv").read_bytes())
    assert outs[0] == outs[1]
    out = tmp_path / "c"
    assert main(["simulate", "--scenario", scenario_path, "--out", str(out),
                 "--ticks", "6", "--seed", "4"]) == 0
    assert (out / "kpi.csv").read_bytes() != outs[0][: len(outs[0])]


def test_simulate_per_cell_rows(scenario_path, tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--scenario", scenario_path, "--out", str(out),
                 "--ticks", "3", "--seed", "1", "--per-cell"]) == 0
    lines = (out / "kpi.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 2  # grid + one cell row per tick


def test_simulate_missing_scenario(tmp_path, capsys):
    rc = main(["simulate", "--scenario", str(tmp_path / "nope.toml"), "--out", str(tmp_path)])
    assert rc == 2
    assert "nope.toml" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# optimize


def test_optimize_budget_one_single_progress_row(scenario_path, tmp_path):
    out = tmp_path / "opt"
    rc = main(["optimize", "--scenario", scenario_path, "--out", str(out),
               "--algo", "hill", "--budget", "1", "--seed", "2"])
    assert rc == 0
    lines = (out / "progress.csv").read_text().splitlines()
    assert lines[0] == "eval_idx,reward,coverage_pct,avg_rsrp_dbm,avg_sinr_db,dl_mbps,ul_mbps"
    assert len(lines) == 2
    overrides = read_override_file(str(out / "overrides.toml"))
    assert len(overrides) == 1 and overrides[0].site_id == "s0"


def test_optimize_rejects_unknown_algo(scenario_path, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["optimize", "--scenario", scenario_path, "--out", str(tmp_path),
              "--algo", "annealing"])
    assert exc.value.code == 2


def test_optimize_simulate_closed_loop(tmp_path):
    """Overrides emitted by optimize reproduce the winning KPIs in simulate."""
    scenario = "scenarios/offboresight.toml"
    out = tmp_path / "opt"
    rc = main(["optimize", "--scenario", scenario, "--out", str(out),
               "--algo", "hill", "--budget", "25", "--seed", "3"])
    assert rc == 0
    rows = (out / "progress.csv").read_text().splitlines()[1:]
    best = max(rows, key=lambda r: float(r.split(",")[1]))
    best_kpis = best.split(",")[2:7]
    sim_out = tmp_path / "replay"
    rc = main(["simulate", "--scenario", scenario, "--out", str(sim_out),
               "--overrides", str(out / "overrides.toml"), "--seed", "3"])
    assert rc == 0
    summary = (sim_out / "summary.csv").read_text().splitlines()[1]
    assert summary.split(",")[:5] == best_kpis


def test_optimize_cem_budget_rounding(scenario_path, tmp_path):
    out = tmp_path / "opt"
    rc = main(["optimize", "--scenario", scenario_path, "--out", str(out),
               "--algo", "cem", "--budget", "8", "--population", "4", "--seed", "1"])
    assert rc == 0
    lines = (out / "progress.csv").read_text().splitlines()
    assert len(lines) == 9  # two populations of four


def test_optimize_cem_budget_too_small(scenario_path, tmp_path, capsys):
    rc = main(["optimize", "--scenario", scenario_path, "--out", str(tmp_path),
               "--algo", "cem", "--budget", "2"])
    assert rc == 2
    assert "budget" in capsys.readouterr().err


def test_override_file_roundtrip(tmp_path):
    overrides = [
        BeamOverride("s0", 0, BeamConfig(beam_id=0, h_beamwidth_deg=30.0,
                                         azimuth_offset_deg=-12.5, tilt_deg=7.0, active=False)),
        BeamOverride("s1", 2, BeamConfig(beam_id=2, g_max_dbi=14.0)),
    ]
    path = tmp_path / "ov.toml"
    path.write_text("\n".join(override_toml_lines(overrides)), encoding="utf-8")
    assert read_override_file(str(path)) == overrides


# ---------------------------------------------------------------------------
# generate


def test_generate_outputs_roundtrip(scenario_path, tmp_path):
    ckpt = _tiny_checkpoint(tmp_path)
    out = tmp_path / "gen"
    rc = main(["generate", "--scenario", scenario_path, "--checkpoint", ckpt,
               "--out", str(out), "--n-users", "3", "--steps", "4", "--seed", "1"])
    assert rc == 0
    waypoints = ingest_waypoint_csv(str(out / "waypoints.csv"))
    assert len(waypoints) == 3
    sessions = ingest_session_csv(str(out / "sessions.csv"))
    assert sessions, "expected synthetic sessions"
    assert all(s.duration_s > 0 and s.demand_bps > 0 for s in sessions)


def test_generate_zero_users_writes_headers(scenario_path, tmp_path):
    ckpt = _tiny_checkpoint(tmp_path)
    out = tmp_path / "gen"
    rc = main(["generate", "--scenario", scenario_path, "--checkpoint", ckpt,
               "--out", str(out), "--n-users", "0"])
    assert rc == 0
    assert (out / "waypoints.csv").read_text().splitlines() == ["user_id,t_s,x_m,y_m"]
    lines = (out / "sessions.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("user_id,")


def test_generate_missing_checkpoint_exit_2(scenario_path, tmp_path, capsys):
    missing = str(tmp_path / "absent.ckpt")
    rc = main(["generate", "--scenario", scenario_path, "--checkpoint", missing,
               "--out", str(tmp_path / "gen")])
    assert rc == 2
    assert missing in capsys.readouterr().err


def test_generate_deterministic(scenario_path, tmp_path):
    ckpt = _tiny_checkpoint(tmp_path)
    blobs = []
    for name in ("g1", "g2"):
        out = tmp_path / name
        assert main(["generate", "--scenario", scenario_path, "--checkpoint", ckpt,
                     "--out", str(out), "--n-users", "2", "--steps", "3", "--seed", "7"]) == 0
        blobs.append((out / "waypoints.csv").read_bytes() + (out / "sessions.csv").read_bytes())
    assert blobs[0] == blobs[1]


# ---------------------------------------------------------------------------
# train-mobility / eval-gen


def test_train_then_eval(scenario_path, tmp_path, capsys):
    from netsim.scenario import parse_scenario

    grid = parse_scenario(scenario_path).grid
    fixes = make_commute_corpus(grid, n_users=6, n_days=2, seed=4)
    mob = tmp_path / "mobility.csv"
    export_mobility_csv(fixes, str(mob))
    ckpt = tmp_path / "trained.ckpt"
    rc = main(["train-mobility", "--scenario", scenario_path, "--mobility", str(mob),
               "--out", str(ckpt), "--epochs", "2", "--hidden-dim", "8",
               "--latent-dim", "2", "--seed", "1"])
    assert rc == 0
    assert ckpt.exists()
    assert "final_loss=" in capsys.readouterr().out
    rc = main(["eval-gen", "--scenario", scenario_path, "--checkpoint", str(ckpt),
               "--holdout", str(mob), "--n-users", "4", "--steps", "4", "--seed", "2"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "kl_location=" in out and "js_location=" in out


def test_eval_gen_missing_checkpoint(scenario_path, tmp_path, capsys):
    rc = main(["eval-gen", "--scenario", scenario_path,
               "--checkpoint", str(tmp_path / "no.ckpt"), "--holdout", str(tmp_path / "no.csv")])
    assert rc == 2
    assert "no.ckpt" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# serve


def test_serve_announces_port_and_answers(scenario_path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "netsim.cli", "serve", "--scenario", scenario_path, "--port", "0"],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
    )
    try:
        line = proc.stdout.readline()
        info = json.loads(line)
        assert info["event"] == "listening"
        with socket.create_connection(("127.0.0.1", info["port"]), timeout=10) as sock:
            f = sock.makefile("rwb")
            f.write((proto.encode(proto.Hello(1)) + "\n").encode())
            f.flush()
            reply = proto.parse_line(f.readline().decode().rstrip("\n"))
            assert reply == proto.Hello(1)
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait(timeout=10)
