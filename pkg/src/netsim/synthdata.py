"""Seeded synthetic corpora for exercising the behavior pipeline.

Real MDT/packet traces cannot ship with the code, so tests and demos run on
generated stand-ins: a two-anchor commute corpus (home and work blobs with
daily transits), blob-structured packet traffic with separated session
regimes, and a uniform random-walk trajectory baseline.
"""

from __future__ import annotations

import math

import numpy as np

from .behavior import MobilityFix, PacketRecord, TrajectorySequence, TrajStep
from .scenario import GeoGrid

DAY_S = 86400.0


def make_commute_corpus(
    grid: GeoGrid,
    n_users: int = 200,
    n_days: int = 30,
    seed: int = 0,
    home_center: tuple[float, float] | None = None,
    work_center: tuple[float, float] | None = None,
    blob_sigma_m: float = 80.0,
    commute_speed_mps: float = 10.0,
) -> list:
    """Home/work commute fixes: leave ~08:00, return ~17:00, straight transit.

    Emits arrival and departure fixes for each stay plus 60 s transit fixes,
    which is all the preprocessing stage needs to recover the step structure.
    """
    rng = np.random.default_rng([seed, 0xC0])
    if home_center is None:
        home_center = (
            grid.origin_x_m + 0.2 * grid.width_m,
            grid.origin_y_m + 0.2 * grid.height_m,
        )
    if work_center is None:
        work_center = (
            grid.origin_x_m + 0.8 * grid.width_m,
            grid.origin_y_m + 0.8 * grid.height_m,
        )

    def _blob_point(center):
        while True:
            x = rng.normal(center[0], blob_sigma_m)
            y = rng.normal(center[1], blob_sigma_m)
            if (
                grid.origin_x_m <= x <= grid.origin_x_m + grid.width_m
                and grid.origin_y_m <= y <= grid.origin_y_m + grid.height_m
            ):
                return (x, y)

    fixes = []
    for u in range(n_users):
        uid = f"u{u:04d}"
        home = _blob_point(home_center)
        work = _blob_point(work_center)

        def emit(t, p):
            fixes.append(MobilityFix(uid, float(t), float(p[0]), float(p[1])))

        def transit(t0, a, b):
            dist = math.hypot(b[0] - a[0], b[1] - a[1])
            dur = dist / commute_speed_mps
            k = 1
            while k * 60.0 < dur:
                f = k * 60.0 / dur
                emit(t0 + k * 60.0, (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])))
                k += 1
            return t0 + dur

        emit(0.0, home)
        for day in range(n_days):
            base = day * DAY_S
            t_leave = base + 8 * 3600.0 + rng.normal(0.0, 1200.0)
            t_back = base + 17 * 3600.0 + rng.normal(0.0, 1200.0)
            emit(t_leave, home)
            t_arr = transit(t_leave, home, work)
            emit(t_arr, work)
            emit(t_back, work)
            t_home = transit(t_back, work, home)
            emit(t_home, home)
        emit(n_days * DAY_S, home)
    return fixes


def make_uniform_walk(grid: GeoGrid, n_users: int, steps: int, seed: int, mean_stay_s: float = 600.0) -> list:
    """Tokens drawn uniformly over the grid; the weakest sensible baseline."""
    rng = np.random.default_rng([seed, 0xBA5E])
    out = []
    for u in range(n_users):
        t = 0.0
        seq = []
        for _ in range(steps):
            stay = float(rng.exponential(mean_stay_s)) + 1.0
            seq.append(
                TrajStep(
                    token=int(rng.integers(grid.n_cells)),
                    bucket=int((t // 3600.0) % 24),
                    stay_s=stay,
                    arrival_s=t,
                )
            )
            t += stay
        out.append(TrajectorySequence(user_id=f"walk{u}", steps=seq))
    return out


# (mean packet_len bytes, mean ln inter-arrival s) per session regime; spread
# far apart so the regime structure is unambiguous
TRAFFIC_REGIMES = (
    (1200.0, -2.0),
    (700.0, 0.5),
    (150.0, 2.5),
)


def make_blob_traffic(
    user_ids: list,
    apps: tuple = ("video", "web", "iot"),
    sessions_per_user_app: int = 4,
    packets_per_session: int = 10,
    seed: int = 0,
    regimes: tuple = TRAFFIC_REGIMES,
) -> list:
    """Packet records whose per-session features form len(regimes) tight blobs."""
    rng = np.random.default_rng([seed, 0xB10B])
    packets = []
    for uid in user_ids:
        t_base = 0.0
        for app in apps:
            for _ in range(sessions_per_user_app):
                t_base += 300.0 + float(rng.exponential(300.0))
                length_mu, gap_log_mu = regimes[int(rng.integers(len(regimes)))]
                t = t_base
                for k in range(packets_per_session):
                    plen = int(np.clip(rng.normal(length_mu, 15.0), 40, 1500))
                    direction = "UL" if k % 4 == 3 else "DL"
                    packets.append(PacketRecord(str(uid), float(t), app, plen, direction))
                    t += math.exp(rng.normal(gap_log_mu, 0.1))
                t_base = t
    return packets
