"""Episode orchestration: config call in, per-tick radio pipeline, result out.

One episode is a pure function of its SimConfig: the call payload (C1) fixes
the scenario, beam overrides, tick count and seed; apply_config freezes user
positions, traffic demand and shadow maps from that seed; step_tick then moves
data across the four internal interfaces in order — user positions (F3),
service demand (F2), channel matrix (F1), per-user RSRP/SINR (F4) — schedules
PRBs and aggregates KPIs. run_episode wraps the loop and returns the result
payload (C2). Payloads can be recorded per tick so the pipeline itself is
replayable and testable from the recorded values alone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import behavior, netem, synthdata
from .channel import ChannelState, channel_matrix, make_channel_state
from .netem import KpiReport, LinkState
from .scenario import BeamConfig, Scenario

# KPI placeholders for ticks where no beam is active: nothing serves, so
# "signal level" degenerates to the inactive-antenna sentinel
NO_SERVICE_RSRP_DBM = -250.0
NO_SERVICE_SINR_DB = -50.0

WAYPOINT_HEADER = ["user_id", "t_s", "x_m", "y_m"]


class OrchestratorError(Exception):
    pass


class UnknownBeam(OrchestratorError):
    pass


class InvalidOverride(OrchestratorError):
    pass


class EpisodeFinished(OrchestratorError):
    pass


@dataclass
class BeamOverride:
    site_id: str
    beam_id: int
    config: BeamConfig


@dataclass
class SimConfig:
    """The call payload: scenario plus per-episode knobs."""

    scenario: Scenario
    overrides: list = field(default_factory=list)
    episode_ticks: int = 60
    seed: int = 0
    record_payloads: bool = True

    def __post_init__(self):
        if self.episode_ticks < 0:
            raise InvalidOverride(f"episode_ticks {self.episode_ticks} < 0")
        if not 0 <= self.seed < 2**63:
            raise InvalidOverride(f"seed {self.seed} outside [0, 2^63)")


@dataclass
class TickPayloads:
    """Recorded interface values for one tick, enough to replay its KPIs."""

    tick: int
    f3_positions: np.ndarray  # (U, 2)
    f2_demand_dl_bps: np.ndarray  # (U,)
    f2_demand_ul_bps: np.ndarray
    f1_coupling_db: np.ndarray  # (B, U)
    f1_channel: np.ndarray  # (B, U) complex
    f4_links: list  # LinkState per user
    pf_avg_dl: np.ndarray  # scheduler averages at tick start
    pf_avg_ul: np.ndarray
    rr_start: int


@dataclass
class EpisodeState:
    scenario: Scenario
    channel: ChannelState
    positions: np.ndarray  # (max(T,1), U, 2)
    demand_dl_bps: np.ndarray  # (max(T,1), U)
    demand_ul_bps: np.ndarray
    episode_ticks: int
    seed: int
    record_payloads: bool
    tick: int = 0
    pf_avg_dl: np.ndarray | None = None
    pf_avg_ul: np.ndarray | None = None
    payloads: list = field(default_factory=list)

    def __post_init__(self):
        n = self.positions.shape[1]
        if self.pf_avg_dl is None:
            self.pf_avg_dl = np.zeros(n)
        if self.pf_avg_ul is None:
            self.pf_avg_ul = np.zeros(n)

    @property
    def n_users(self) -> int:
        return self.positions.shape[1]


@dataclass
class SimResult:
    """The output payload: per-tick reports plus their episode mean."""

    reports: list  # KpiReport per tick
    summary: dict  # metric -> mean over ticks (grid scope)
    final_positions: np.ndarray
    seed: int
    empty: bool


SUMMARY_KEYS = ("coverage_pct", "avg_rsrp_dbm", "avg_sinr_db", "dl_mbps", "ul_mbps")


# ---------------------------------------------------------------------------
# user sourcing


def ingest_waypoint_csv(path) -> dict:
    """Waypoint CSV -> {user_id: [(t_s, x, y), ...]} sorted by time."""
    out: dict = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if list(header or []) != WAYPOINT_HEADER:
            raise behavior.SchemaMismatch(list(header or []))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.setdefault(row[0], []).append((float(row[1]), float(row[2]), float(row[3])))
            except (ValueError, IndexError) as e:
                raise behavior.BadRow(lineno, str(e)) from e
    for uid in out:
        out[uid].sort()
    return out


def _clamp_xy(grid, xy: np.ndarray) -> np.ndarray:
    xy[:, 0] = np.clip(xy[:, 0], grid.origin_x_m, grid.origin_x_m + grid.width_m)
    xy[:, 1] = np.clip(xy[:, 1], grid.origin_y_m, grid.origin_y_m + grid.height_m)
    return xy


def _cluster_positions(scenario: Scenario, ticks: int, rng) -> np.ndarray:
    """Users jitter-walk inside a disk around the configured cluster center."""
    grid, um = scenario.grid, scenario.users
    n = um.n_users
    cx = um.cluster_x_m if um.cluster_x_m is not None else grid.origin_x_m + grid.width_m / 2
    cy = um.cluster_y_m if um.cluster_y_m is not None else grid.origin_y_m + grid.height_m / 2

    def disk(count):
        r = um.cluster_radius_m * np.sqrt(rng.random(count))
        th = rng.random(count) * 2 * np.pi
        return np.stack([cx + r * np.cos(th), cy + r * np.sin(th)], axis=1)

    pos = _clamp_xy(grid, disk(n))
    target = disk(n)
    out = np.empty((ticks, n, 2))
    for t in range(ticks):
        out[t] = pos
        if n == 0:
            continue
        d = target - pos
        dist = np.hypot(d[:, 0], d[:, 1])
        arrived = dist <= um.speed_mps
        if arrived.any():
            target[arrived] = disk(int(arrived.sum()))
            d = target - pos
            dist = np.hypot(d[:, 0], d[:, 1])
        step = np.where(dist > 0, np.minimum(um.speed_mps, dist) / np.maximum(dist, 1e-12), 0.0)
        pos = _clamp_xy(grid, pos + d * step[:, None])
    return out


def _waypoint_positions(waypoints: dict, ticks: int) -> np.ndarray:
    """Step-hold sampling of per-user waypoint tracks at 1 Hz ticks."""
    uids = sorted(waypoints)
    out = np.empty((ticks, len(uids), 2))
    for u, uid in enumerate(uids):
        track = waypoints[uid]
        ts = np.array([w[0] for w in track])
        for t in range(ticks):
            k = int(np.searchsorted(ts, t, side="right")) - 1
            k = max(k, 0)
            out[t, u, 0] = track[k][1]
            out[t, u, 1] = track[k][2]
    return out


def _commute_positions(scenario: Scenario, ticks: int, seed: int) -> np.ndarray:
    grid, um = scenario.grid, scenario.users
    fixes = synthdata.make_commute_corpus(grid, n_users=um.n_users, n_days=1, seed=seed)
    seqs = behavior.preprocess(fixes, grid)
    ways = behavior.postprocess_trajectories(seqs, grid, scenario.roads, walk_speed_mps=um.speed_mps)
    tracks = {uid: [(t, x, y) for t, x, y in way] for uid, way in ways.items()}
    return _waypoint_positions(tracks, ticks)


def _demand_arrays(scenario: Scenario, ticks: int, n_users: int, seed: int):
    um = scenario.users
    dl = np.zeros((max(ticks, 1), n_users))
    ul = np.zeros((max(ticks, 1), n_users))
    if um.traffic == "constant":
        dl[:] = um.demand_dl_mbps * 1e6
        ul[:] = um.demand_ul_mbps * 1e6
        return dl, ul
    lam = um.session_rate_per_min / 60.0
    for u in range(n_users):
        rng = np.random.default_rng([seed, 0x5E55, u])
        t = rng.exponential(1.0 / lam) if lam > 0 else math.inf
        while t < ticks:
            a = int(math.floor(t))
            b = min(int(math.ceil(t + um.session_duration_s)), ticks)
            dl[a:b, u] = um.demand_dl_mbps * 1e6
            ul[a:b, u] = um.demand_ul_mbps * 1e6
            t += rng.exponential(1.0 / lam)
    return dl, ul


# ---------------------------------------------------------------------------
# episode lifecycle


def _apply_overrides(scenario: Scenario, overrides: list) -> Scenario:
    if not overrides:
        return scenario
    sites = {s.site_id: s for s in scenario.sites}
    seen = set()
    per_site: dict = {}
    for ov in overrides:
        if ov.site_id not in sites:
            raise UnknownBeam(f"site {ov.site_id!r} not in scenario")
        site = sites[ov.site_id]
        beam_ids = [b.beam_id for b in site.beams]
        if ov.beam_id not in beam_ids:
            raise UnknownBeam(f"beam {ov.beam_id} not on site {ov.site_id!r}")
        if (ov.site_id, ov.beam_id) in seen:
            raise InvalidOverride(f"duplicate override for {ov.site_id}/{ov.beam_id}")
        seen.add((ov.site_id, ov.beam_id))
        if not isinstance(ov.config, BeamConfig):
            raise InvalidOverride(f"override for {ov.site_id}/{ov.beam_id} is not a BeamConfig")
        if ov.config.beam_id != ov.beam_id:
            raise InvalidOverride(
                f"override config beam_id {ov.config.beam_id} != target {ov.beam_id}"
            )
        per_site.setdefault(ov.site_id, {})[ov.beam_id] = ov.config
    new_sites = []
    for s in scenario.sites:
        if s.site_id in per_site:
            beams = [per_site[s.site_id].get(b.beam_id, b) for b in s.beams]
            new_sites.append(replace(s, beams=beams))
        else:
            new_sites.append(s)
    return replace(scenario, sites=new_sites)


def apply_config(c1: SimConfig) -> EpisodeState:
    """Freeze one episode: overridden scenario, users, demand, shadow maps."""
    sc = _apply_overrides(c1.scenario, c1.overrides)
    sc = replace(sc, seed=c1.seed)  # every stochastic draw keys off the call seed
    horizon = max(c1.episode_ticks, 1)
    um = sc.users
    if um.mode == "cluster":
        rng = np.random.default_rng([c1.seed, 0x05E2])
        positions = _cluster_positions(sc, horizon, rng)
    elif um.mode == "commute":
        positions = _commute_positions(sc, horizon, c1.seed)
    else:
        if not um.waypoint_csv:
            raise InvalidOverride("users.mode = 'waypoints' needs users.waypoint_csv")
        positions = _waypoint_positions(ingest_waypoint_csv(um.waypoint_csv), horizon)
    dl, ul = _demand_arrays(sc, c1.episode_ticks, positions.shape[1], c1.seed)
    return EpisodeState(
        scenario=sc,
        channel=make_channel_state(sc),
        positions=positions,
        demand_dl_bps=dl,
        demand_ul_bps=ul,
        episode_ticks=c1.episode_ticks,
        seed=c1.seed,
        record_payloads=c1.record_payloads,
    )


def _schedule_tick(
    scenario: Scenario,
    links: list,
    sinr_db: np.ndarray,
    ul_sinr_db: np.ndarray,
    demand_dl: np.ndarray,
    demand_ul: np.ndarray,
    pf_avg_dl: np.ndarray,
    pf_avg_ul: np.ndarray,
    rr_start: int,
):
    """Per-cell PRB allocation; updates the PF averages in place."""
    rows = netem.beam_rows(scenario)
    n_users = len(links)
    dl_bps = np.zeros(n_users)
    ul_bps = np.zeros(n_users)
    by_row: dict = {}
    for lk in links:
        by_row.setdefault(lk.serving_row, []).append(lk.user_id)
    for row, members in sorted(by_row.items()):
        _, site, _ = rows[row]
        us = np.array(members)
        rate_dl = netem.prb_rate_bps(sinr_db[us], scenario.sim.max_se_bps_hz)
        _, delivered, new_avg = netem.schedule(
            rate_dl, demand_dl[us], site.n_prb, pf_avg_dl[us],
            mode=scenario.sim.scheduler, rr_start=rr_start,
        )
        dl_bps[us] = delivered
        pf_avg_dl[us] = new_avg
        rate_ul = netem.prb_rate_bps(ul_sinr_db[us], scenario.sim.max_se_bps_hz)
        _, delivered_ul, new_avg_ul = netem.schedule(
            rate_ul, demand_ul[us], site.n_prb, pf_avg_ul[us],
            mode=scenario.sim.scheduler, rr_start=rr_start,
        )
        ul_bps[us] = delivered_ul
        pf_avg_ul[us] = new_avg_ul
    return dl_bps, ul_bps


def _no_service_report(state: EpisodeState, tick: int) -> KpiReport:
    n = state.n_users
    grid_row = netem.KpiRow(
        scope="grid", coverage_pct=0.0, avg_rsrp_dbm=NO_SERVICE_RSRP_DBM,
        avg_sinr_db=NO_SERVICE_SINR_DB, dl_mbps=0.0, ul_mbps=0.0, users=n,
    )
    return KpiReport(tick=tick, rows=[grid_row], empty=False)


def step_tick(state: EpisodeState) -> KpiReport:
    """Advance one second: F3 -> F2 -> F1 -> F4 -> schedule -> KPIs."""
    if state.tick >= state.episode_ticks:
        raise EpisodeFinished(f"episode has only {state.episode_ticks} ticks")
    sc = state.scenario
    t = state.tick
    positions = state.positions[t]
    demand_dl = state.demand_dl_bps[t]
    demand_ul = state.demand_ul_bps[t]
    active_any = any(b.active for _, _, b in sc.beam_list())
    if state.n_users == 0 or not active_any:
        if state.n_users == 0:
            report = netem.aggregate_kpis(sc, [], np.zeros(0), np.zeros(0), t)
        else:
            report = _no_service_report(state, t)
        state.tick += 1
        return report
    matrix, ls = channel_matrix(sc, positions, tick=t, seed=sc.seed, state=state.channel)
    rsrp = netem.compute_rsrp(sc, ls)
    serving = netem.select_serving(sc, rsrp)
    sinr = netem.compute_sinr(sc, matrix, serving)
    ul_sinr = netem.compute_ul_sinr(sc, matrix, serving)
    rows = netem.beam_rows(sc)
    links = [
        LinkState(
            user_id=u,
            serving_site=rows[serving[u]][1].site_id,
            serving_beam=rows[serving[u]][2].beam_id,
            serving_row=int(serving[u]),
            rsrp_dbm=float(rsrp[serving[u], u]),
            sinr_db=float(sinr[u]),
        )
        for u in range(state.n_users)
    ]
    pf_dl_before = state.pf_avg_dl.copy()
    pf_ul_before = state.pf_avg_ul.copy()
    dl_bps, ul_bps = _schedule_tick(
        sc, links, sinr, ul_sinr, demand_dl, demand_ul,
        state.pf_avg_dl, state.pf_avg_ul, rr_start=t,
    )
    report = netem.aggregate_kpis(sc, links, dl_bps, ul_bps, t)
    if state.record_payloads:
        state.payloads.append(
            TickPayloads(
                tick=t,
                f3_positions=positions.copy(),
                f2_demand_dl_bps=demand_dl.copy(),
                f2_demand_ul_bps=demand_ul.copy(),
                f1_coupling_db=ls.coupling_loss_db.copy(),
                f1_channel=matrix.copy(),
                f4_links=links,
                pf_avg_dl=pf_dl_before,
                pf_avg_ul=pf_ul_before,
                rr_start=t,
            )
        )
    state.tick += 1
    return report


def replay_tick(scenario: Scenario, p: TickPayloads) -> KpiReport:
    """Recompute a tick's KPI report from its recorded payloads alone."""
    sinr = np.array([lk.sinr_db for lk in p.f4_links])
    ul_sinr = netem.compute_ul_sinr(
        scenario, p.f1_channel, np.array([lk.serving_row for lk in p.f4_links])
    )
    dl_bps, ul_bps = _schedule_tick(
        scenario, p.f4_links, sinr, ul_sinr, p.f2_demand_dl_bps, p.f2_demand_ul_bps,
        p.pf_avg_dl.copy(), p.pf_avg_ul.copy(), rr_start=p.rr_start,
    )
    return netem.aggregate_kpis(scenario, p.f4_links, dl_bps, ul_bps, p.tick)


def summarize(reports: list) -> dict:
    if not reports:
        return {k: 0.0 for k in SUMMARY_KEYS} | {"users": 0.0}
    out = {}
    for key in SUMMARY_KEYS:
        out[key] = float(np.mean([getattr(r.grid(), key) for r in reports]))
    out["users"] = float(np.mean([r.grid().users for r in reports]))
    return out


def run_episode(c1: SimConfig) -> SimResult:
    state = apply_config(c1)
    reports = [step_tick(state) for _ in range(c1.episode_ticks)]
    return SimResult(
        reports=reports,
        summary=summarize(reports),
        final_positions=state.positions[-1].copy(),
        seed=c1.seed,
        empty=not reports,
    )
