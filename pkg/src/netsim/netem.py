"""Base-station and terminal emulation: attachment, RSRP/SINR, scheduling, KPIs.

Per tick: RSRP per (beam, user) from large-scale coupling only, serving-cell
selection by argmax RSRP, SINR in the linear power domain against full-buffer
interferers, proportional-fair (or round-robin) PRB allocation per cell, a
Shannon-capped rate map, and cell/grid KPI aggregation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LargeScaleArrays
from .scenario import Scenario

RE_BANDWIDTH_HZ = 15000.0
RES_PER_PRB = 12
PRB_BANDWIDTH_HZ = RE_BANDWIDTH_HZ * RES_PER_PRB
THERMAL_NOISE_DBM_PER_HZ = -174.0
OVERHEAD = 0.14
PF_ALPHA = 0.1


class NetemError(Exception):
    pass


class UnknownLink(NetemError):
    pass


class NoActiveBeam(NetemError):
    pass


@dataclass
class LinkState:
    """Per-user radio state for one tick (the user RSRP+SINR payload)."""

    user_id: int
    serving_site: str
    serving_beam: int
    serving_row: int  # flat beam index
    rsrp_dbm: float
    sinr_db: float


@dataclass
class KpiRow:
    scope: str  # "grid" or "cell:<site>/<beam>"
    coverage_pct: float
    avg_rsrp_dbm: float
    avg_sinr_db: float
    dl_mbps: float
    ul_mbps: float
    users: int


@dataclass
class KpiReport:
    tick: int
    rows: list  # grid row first, then one row per cell
    empty: bool = False

    def grid(self) -> KpiRow:
        return self.rows[0]


KPI_CSV_HEADER = "tick,scope,coverage_pct,avg_rsrp_dbm,avg_sinr_db,dl_mbps,ul_mbps,users"


# ---------------------------------------------------------------------------
# per-link radio quantities


def beam_rows(scenario: Scenario):
    """Flat (site_index, site, beam) rows in channel-matrix order."""
    return scenario.beam_list()


def re_power_dbm(site) -> float:
    """Per-resource-element transmit power: total power spread over 12*n_prb REs."""
    return site.tx_power_dbm - 10.0 * np.log10(RES_PER_PRB * site.n_prb)


def noise_dbm(sim) -> float:
    """Thermal noise over one PRB of bandwidth plus the receiver noise figure."""
    return THERMAL_NOISE_DBM_PER_HZ + 10.0 * np.log10(PRB_BANDWIDTH_HZ) + sim.noise_figure_db


def compute_rsrp(scenario: Scenario, ls: LargeScaleArrays) -> np.ndarray:
    """RSRP in dBm per (beam, user): per-RE power minus coupling loss.

    Small-scale fading is excluded: RSRP averages the reference signal over
    fading by definition, which keeps it stable within a tick.
    """
    rows = beam_rows(scenario)
    if ls.coupling_loss_db.shape[0] != len(rows):
        raise UnknownLink(
            f"large-scale rows {ls.coupling_loss_db.shape[0]} != beams {len(rows)}"
        )
    p_re = np.array([re_power_dbm(site) for _, site, _ in rows])
    return p_re[:, None] - ls.coupling_loss_db


def select_serving(scenario: Scenario, rsrp_dbm: np.ndarray) -> np.ndarray:
    """Flat beam row serving each user: argmax RSRP over active beams.

    Exact ties break toward the lowest (site_id, beam_id) pair.
    """
    rows = beam_rows(scenario)
    active = np.array([b.active for _, _, b in rows])
    if not active.any():
        raise NoActiveBeam("no active beam to attach to")
    order = sorted(range(len(rows)), key=lambda i: (rows[i][1].site_id, rows[i][2].beam_id))
    order = [i for i in order if active[i]]
    ranked = rsrp_dbm[order, :]
    best = np.argmax(ranked, axis=0)  # first occurrence wins ties
    return np.asarray(order, dtype=int)[best]


def _rx_power_mw(scenario: Scenario, matrix: np.ndarray, per_re_dbm: np.ndarray) -> np.ndarray:
    """Linear received per-RE power (mW) per (beam, user) including fading."""
    return 10.0 ** (per_re_dbm[:, None] / 10.0) * np.abs(matrix) ** 2


def compute_sinr(scenario: Scenario, matrix: np.ndarray, serving: np.ndarray) -> np.ndarray:
    """Downlink SINR in dB per user; every other active beam interferes at full power."""
    rows = beam_rows(scenario)
    n_beams, n_users = matrix.shape
    if serving.shape != (n_users,):
        raise UnknownLink("serving vector does not match user count")
    p_re = np.array([re_power_dbm(site) for _, site, _ in rows])
    rx = _rx_power_mw(scenario, matrix, p_re)
    active = np.array([b.active for _, _, b in rows])
    rx_active = rx * active[:, None]
    total = rx_active.sum(axis=0)
    cols = np.arange(n_users)
    signal = rx[serving, cols]
    interference = total - rx_active[serving, cols]
    noise = 10.0 ** (noise_dbm(scenario.sim) / 10.0)
    return 10.0 * np.log10(signal / (interference + noise))


def compute_ul_sinr(scenario: Scenario, matrix: np.ndarray, serving: np.ndarray) -> np.ndarray:
    """Uplink SINR: symmetric coupling, user power spread like the DL grid, noise-limited."""
    rows = beam_rows(scenario)
    n_users = matrix.shape[1]
    cols = np.arange(n_users)
    site_n_prb = np.array([site.n_prb for _, site, _ in rows])
    p_re_ul = scenario.sim.ue_tx_power_dbm - 10.0 * np.log10(RES_PER_PRB * site_n_prb[serving])
    signal = 10.0 ** (p_re_ul / 10.0) * np.abs(matrix[serving, cols]) ** 2
    noise = 10.0 ** (noise_dbm(scenario.sim) / 10.0)
    return 10.0 * np.log10(signal / noise)


def sinr_db_from_powers(signal_mw: float, interference_mw: float, noise_mw: float) -> float:
    """Linear-domain SINR composition, exposed for oracle-style checks."""
    return 10.0 * np.log10(signal_mw / (interference_mw + noise_mw))


# ---------------------------------------------------------------------------
# scheduling and rates


def prb_rate_bps(sinr_db, max_se_bps_hz: float) -> np.ndarray:
    """Deliverable rate of one PRB at the given SINR, Shannon-capped."""
    lin = 10.0 ** (np.asarray(sinr_db, dtype=float) / 10.0)
    se = np.minimum(np.log2(1.0 + lin), max_se_bps_hz)
    return PRB_BANDWIDTH_HZ * se * (1.0 - OVERHEAD)


def schedule(
    rate_per_prb_bps: np.ndarray,
    demand_bps: np.ndarray,
    n_prb: int,
    avg_bps: np.ndarray,
    mode: str = "pf",
    rr_start: int = 0,
):
    """Allocate one cell's PRBs for a tick.

    Proportional fair: PRBs go one at a time to argmax(per-PRB rate /
    smoothed delivered average), where the average is evaluated as it will
    stand at the end of this tick given what each user has accumulated so
    far; that within-tick feedback is what splits allocations between
    equal users. Users with no demand get nothing; allocation stops for a
    user once its accumulated capacity covers its demand.

    Returns (allocation counts, delivered bps, updated averages).
    """
    n = len(rate_per_prb_bps)
    alloc = np.zeros(n, dtype=int)
    capacity = np.zeros(n)
    eligible = (np.asarray(demand_bps) > 0) & (np.asarray(rate_per_prb_bps) > 0)
    if mode == "pf":
        base = (1.0 - PF_ALPHA) * np.asarray(avg_bps, dtype=float)
        for _ in range(int(n_prb)):
            need = eligible & (capacity < demand_bps)
            if not need.any():
                break
            delivered_now = np.minimum(capacity, demand_bps)
            metric = np.where(need, rate_per_prb_bps / (base + PF_ALPHA * delivered_now + 1e-9), -1.0)
            u = int(np.argmax(metric))
            alloc[u] += 1
            capacity[u] += rate_per_prb_bps[u]
    elif mode == "rr":
        idx = [i for i in range(n) if eligible[i]]
        if idx:
            pos = rr_start % len(idx)
            budget = int(n_prb)
            stalled = 0
            while budget > 0 and stalled < len(idx):
                u = idx[pos % len(idx)]
                pos += 1
                if capacity[u] >= demand_bps[u]:
                    stalled += 1
                    continue
                alloc[u] += 1
                capacity[u] += rate_per_prb_bps[u]
                budget -= 1
                stalled = 0
    else:
        raise ValueError(f"unknown scheduler mode {mode!r}")
    delivered = np.minimum(capacity, demand_bps)
    new_avg = (1.0 - PF_ALPHA) * np.asarray(avg_bps, dtype=float) + PF_ALPHA * delivered
    return alloc, delivered, new_avg


def user_throughput(alloc: np.ndarray, rate_per_prb_bps: np.ndarray, demand_bps: np.ndarray) -> np.ndarray:
    """Delivered rate: allocated capacity, never more than the session demand."""
    return np.minimum(alloc * rate_per_prb_bps, demand_bps)


# ---------------------------------------------------------------------------
# aggregation


def aggregate_kpis(
    scenario: Scenario,
    links: list[LinkState],
    dl_bps: np.ndarray,
    ul_bps: np.ndarray,
    tick: int,
) -> KpiReport:
    """Grid and per-cell KPI rows for one tick.

    Coverage is the share of users jointly above the RSRP and SINR
    thresholds. Averages are arithmetic means in the dB domain. With no
    users the report is flagged empty with 100.0 coverage and zero rates.
    """
    sim = scenario.sim
    rows_out = []

    def summarize(scope: str, members: list[int]) -> KpiRow:
        if not members:
            return KpiRow(scope, 100.0, 0.0, 0.0, 0.0, 0.0, 0)
        rsrp = np.array([links[i].rsrp_dbm for i in members])
        sinr = np.array([links[i].sinr_db for i in members])
        covered = (rsrp >= sim.coverage_rsrp_threshold_dbm) & (
            sinr >= sim.coverage_sinr_threshold_db
        )
        return KpiRow(
            scope=scope,
            coverage_pct=100.0 * float(covered.mean()),
            avg_rsrp_dbm=float(rsrp.mean()),
            avg_sinr_db=float(sinr.mean()),
            dl_mbps=float(np.mean(dl_bps[members]) / 1e6),
            ul_mbps=float(np.mean(ul_bps[members]) / 1e6),
            users=len(members),
        )

    all_users = list(range(len(links)))
    rows_out.append(summarize("grid", all_users))
    for _, site, beam in beam_rows(scenario):
        members = [
            i
            for i in all_users
            if links[i].serving_site == site.site_id and links[i].serving_beam == beam.beam_id
        ]
        rows_out.append(summarize(f"cell:{site.site_id}/{beam.beam_id}", members))
    return KpiReport(tick=tick, rows=rows_out, empty=not all_users)


def kpi_csv_lines(report: KpiReport) -> list[str]:
    """CSV rows (no header) for one report, deterministic formatting."""
    out = []
    for r in report.rows:
        out.append(
            f"{report.tick},{r.scope},{r.coverage_pct:.4f},{r.avg_rsrp_dbm:.4f},"
            f"{r.avg_sinr_db:.4f},{r.dl_mbps:.4f},{r.ul_mbps:.4f},{r.users}"
        )
    return out
