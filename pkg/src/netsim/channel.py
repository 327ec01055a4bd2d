"""Large-scale and small-scale radio channel.

Per (site, beam, user) link: synthesized parabolic antenna pattern, urban
micro-style LOS/NLOS path loss, spatially correlated log-normal shadowing
frozen per site for an episode, and per-tick block fading (Rayleigh, or
Rician for line-of-sight links). Everything is a pure function of the
scenario, the user positions, the tick index, and the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural import MLPParams, Tensor, adam_init, adam_step, collect_grads, init_mlp, mlp_forward, zero_grads
from .scenario import BeamConfig, GeoGrid, Scenario, Site, cell_indices_of, los_check, terrain_at

GAIN_FLOOR_DB = 30.0  # max attenuation per plane and total, below g_max
INACTIVE_GAIN_DBI = -250.0
_SHADOW_SALT = 0x5AD0
_FADING_SALT = 0xFADE


@dataclass
class AnglePair:
    azimuth_deg: float  # relative to beam boresight, (-180, 180]
    elevation_deg: float  # relative to boresight vertical plane


@dataclass
class LargeScale:
    path_loss_db: float
    shadow_db: float
    antenna_gain_dbi: float
    coupling_loss_db: float
    los: bool


@dataclass
class LargeScaleArrays:
    """Per-link large-scale terms, all shaped (total beams, users)."""

    path_loss_db: np.ndarray
    shadow_db: np.ndarray
    antenna_gain_dbi: np.ndarray
    coupling_loss_db: np.ndarray
    los: np.ndarray  # bool


def wrap_angle_deg(x):
    """Wrap to (-180, 180]."""
    return 180.0 - (180.0 - np.asarray(x, dtype=float)) % 360.0


# ---------------------------------------------------------------------------
# geometry and pattern


def relative_angles(site: Site, beam: BeamConfig, user_xyz, antenna_z: float | None = None) -> AnglePair:
    """Boresight-relative azimuth and elevation of a user seen from a beam.

    Bearing is measured clockwise from +y (north); east is +90. Positive
    downtilt points the boresight below horizontal, so the relative
    elevation is the geometric elevation plus the total downtilt.
    """
    ux, uy, uz = (float(v) for v in user_xyz)
    if antenna_z is None:
        antenna_z = site.antenna_height_m
    dx, dy = ux - site.x_m, uy - site.y_m
    d_h = math.hypot(dx, dy)
    bearing = math.degrees(math.atan2(dx, dy))
    rel_az = float(wrap_angle_deg(bearing - (site.mech_azimuth_deg + beam.azimuth_offset_deg)))
    el_geo = math.degrees(math.atan2(uz - antenna_z, d_h))
    rel_el = el_geo + site.mech_downtilt_deg + beam.tilt_deg
    return AnglePair(azimuth_deg=rel_az, elevation_deg=rel_el)


def antenna_gain(beam: BeamConfig, angles: AnglePair) -> float:
    """Parabolic-in-dB sector pattern; inactive beams return the -250 dB sentinel."""
    if not beam.active:
        return INACTIVE_GAIN_DBI
    a_h = -min(12.0 * (angles.azimuth_deg / beam.h_beamwidth_deg) ** 2, GAIN_FLOOR_DB)
    a_v = -min(12.0 * (angles.elevation_deg / beam.v_beamwidth_deg) ** 2, GAIN_FLOOR_DB)
    return beam.g_max_dbi - min(-(a_h + a_v), GAIN_FLOOR_DB)


def _gain_array(beam: BeamConfig, rel_az: np.ndarray, rel_el: np.ndarray) -> np.ndarray:
    if not beam.active:
        return np.full(rel_az.shape, INACTIVE_GAIN_DBI)
    a_h = -np.minimum(12.0 * (rel_az / beam.h_beamwidth_deg) ** 2, GAIN_FLOOR_DB)
    a_v = -np.minimum(12.0 * (rel_el / beam.v_beamwidth_deg) ** 2, GAIN_FLOOR_DB)
    return beam.g_max_dbi - np.minimum(-(a_h + a_v), GAIN_FLOOR_DB)


# ---------------------------------------------------------------------------
# path loss


def path_loss(distance_3d_m, carrier_ghz: float, los) -> np.ndarray | float:
    """Log-distance path loss in dB; NLOS is lower-bounded by the LOS value.

    LOS: 32.4 + 21 log10(d) + 20 log10(fc). NLOS: 22.4 + 35.3 log10(d)
    + 21.3 log10(fc). Distances are clamped to 1 m.
    """
    d = np.maximum(np.asarray(distance_3d_m, dtype=float), 1.0)
    scalar = d.ndim == 0
    d = np.atleast_1d(d)
    los_arr = np.broadcast_to(np.asarray(los, dtype=bool), d.shape)
    pl_los = 32.4 + 21.0 * np.log10(d) + 20.0 * np.log10(carrier_ghz)
    pl_nlos = 22.4 + 35.3 * np.log10(d) + 21.3 * np.log10(carrier_ghz)
    out = np.where(los_arr, pl_los, np.maximum(pl_nlos, pl_los))
    return float(out[0]) if scalar else out


class EmpiricalPathLoss:
    """Default provider: the closed-form LOS/NLOS model above."""

    def __call__(self, distance_3d_m, carrier_ghz, los):
        return path_loss(distance_3d_m, carrier_ghz, los)


class LearnedPathLoss:
    """Pluggable provider backed by a small regression network.

    Features are (log10 d, log10 fc, los flag); the output is dB. Exists to
    prove the provider plug point; accuracy depends on its training run.
    """

    def __init__(self, params: MLPParams):
        self.params = params

    @staticmethod
    def _features(d, fc, los):
        d = np.maximum(np.atleast_1d(np.asarray(d, dtype=float)), 1.0)
        los_arr = np.broadcast_to(np.asarray(los, dtype=bool), d.shape)
        fc_arr = np.full(d.shape, float(fc))
        return np.stack([np.log10(d), np.log10(fc_arr), los_arr.astype(float)], axis=1)

    def __call__(self, distance_3d_m, carrier_ghz, los):
        scalar = np.asarray(distance_3d_m).ndim == 0
        x = self._features(distance_3d_m, carrier_ghz, los)
        out = mlp_forward(self.params, Tensor(x)).data[:, 0]
        return float(out[0]) if scalar else out


def train_learned_path_loss(
    seed: int = 0,
    n_samples: int = 4096,
    iters: int = 800,
    noise_db: float = 0.5,
    hidden: int = 32,
    lr: float = 0.01,
) -> LearnedPathLoss:
    """Fit the learned provider on noisy samples of the empirical model."""
    rng = np.random.default_rng([seed, 0x1EA2])
    d = 10.0 ** rng.uniform(0.0, math.log10(3000.0), size=n_samples)
    fc = 10.0 ** rng.uniform(math.log10(0.7), math.log10(6.0), size=n_samples)
    los = rng.random(n_samples) < 0.5
    y = np.array([path_loss(di, fi, li) for di, fi, li in zip(d, fc, los)])
    y = y + rng.normal(0.0, noise_db, size=n_samples)
    x = np.stack([np.log10(d), np.log10(fc), los.astype(float)], axis=1)
    # standardize target so tanh units stay in range
    y_mu, y_sd = float(y.mean()), float(y.std())
    params = init_mlp(rng, [3, hidden, 1])
    named = params.named("pl")
    state = adam_init(named)
    targets = (y - y_mu) / y_sd
    for _ in range(iters):
        zero_grads(named)
        pred = mlp_forward(params, Tensor(x))
        err = pred - Tensor(targets[:, None])
        loss = (err * err).mean()
        loss.backward()
        adam_step(named, collect_grads(named), state, lr)
    # bake the target scaling into the head layer
    w, b = params.layers[-1]
    w.data = w.data * y_sd
    b.data = b.data * y_sd + y_mu
    return LearnedPathLoss(params)


# ---------------------------------------------------------------------------
# shadowing


def shadow_field(
    grid: GeoGrid,
    seed: int,
    sigma_db: float,
    decorrelation_m: float,
    site_index: int = 0,
) -> np.ndarray:
    """Correlated log-normal shadow map for one site, shape (n_rows, n_cols).

    Seeded white noise is filtered so the field's spatial autocorrelation is
    exp(-d/decorrelation_m): circulant spectral synthesis on a padded torus,
    cropped back to the grid. Zero mean, variance sigma_db^2 per cell.
    """
    if sigma_db == 0.0:
        return np.zeros((grid.n_rows, grid.n_cols))
    pad = int(math.ceil(6.0 * decorrelation_m / grid.resolution_m))
    nr, nc = grid.n_rows + pad, grid.n_cols + pad
    # torus distance map and target correlation
    ii = np.minimum(np.arange(nr), nr - np.arange(nr))[:, None]
    jj = np.minimum(np.arange(nc), nc - np.arange(nc))[None, :]
    dist = grid.resolution_m * np.sqrt(ii.astype(float) ** 2 + jj.astype(float) ** 2)
    corr = np.exp(-dist / decorrelation_m)
    spectrum = np.fft.fft2(corr).real
    spectrum = np.maximum(spectrum, 0.0)  # clip tiny negative embedding modes
    rng = np.random.default_rng([seed, _SHADOW_SALT, site_index])
    white = rng.standard_normal((nr, nc))
    field = np.fft.ifft2(np.sqrt(spectrum) * np.fft.fft2(white)).real
    return sigma_db * field[: grid.n_rows, : grid.n_cols]


# ---------------------------------------------------------------------------
# small-scale fading


def _splitmix64(x: np.ndarray) -> np.ndarray:
    # wrap-around modular arithmetic is the point; silence overflow warnings
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)).astype(np.uint64)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def _hash_unit(parts: list[np.ndarray], draw: int) -> np.ndarray:
    """Deterministic uniforms in (0, 1) from integer key parts."""
    h = np.zeros(np.broadcast_shapes(*(np.asarray(p).shape for p in parts)), dtype=np.uint64)
    for p in parts:
        h = _splitmix64(h ^ np.asarray(p, dtype=np.uint64))
    h = _splitmix64(h ^ np.uint64(draw))
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def small_scale(
    site_index,
    beam_index,
    user_index,
    tick,
    seed,
    los,
    rician_k_db: float = 10.0,
) -> np.ndarray:
    """Per-tick complex block-fading coefficient, unit mean power.

    NLOS links are Rayleigh; LOS links Rician with the configured K. The
    draw is a pure hash of (seed, site, beam, user, tick), so any link and
    tick can be recomputed independently and identically.
    """
    parts = [
        np.asarray(seed, dtype=np.uint64),
        np.asarray(site_index, dtype=np.uint64),
        np.asarray(beam_index, dtype=np.uint64),
        np.asarray(user_index, dtype=np.uint64),
        np.asarray(tick, dtype=np.uint64),
        np.asarray(_FADING_SALT, dtype=np.uint64),
    ]
    u1 = _hash_unit(parts, 1)
    u2 = _hash_unit(parts, 2)
    r = np.sqrt(-2.0 * np.log(u1))
    a = r * np.cos(2.0 * np.pi * u2)
    b = r * np.sin(2.0 * np.pi * u2)
    rayleigh = (a + 1j * b) / math.sqrt(2.0)
    los_arr = np.broadcast_to(np.asarray(los, dtype=bool), rayleigh.shape)
    if math.isinf(rician_k_db):
        rician = np.ones_like(rayleigh)
    else:
        k = 10.0 ** (rician_k_db / 10.0)
        rician = math.sqrt(k / (k + 1.0)) + math.sqrt(1.0 / (k + 1.0)) * rayleigh
    return np.where(los_arr, rician, rayleigh)


# ---------------------------------------------------------------------------
# composition


@dataclass
class ChannelState:
    """Episode-frozen channel inputs: shadow maps and the path-loss provider."""

    scenario: Scenario
    unit_shadow: list  # per site, unit-sigma correlated field
    provider: object  # callable (d, fc, los) -> dB

    @property
    def beam_count(self) -> int:
        return sum(len(s.beams) for s in self.scenario.sites)


def make_channel_state(scenario: Scenario, provider=None) -> ChannelState:
    fields = [
        shadow_field(
            scenario.grid,
            scenario.seed,
            1.0,
            scenario.sim.decorrelation_m,
            site_index=i,
        )
        for i in range(len(scenario.sites))
    ]
    return ChannelState(
        scenario=scenario,
        unit_shadow=fields,
        provider=provider if provider is not None else EmpiricalPathLoss(),
    )


def _site_antenna_z(grid: GeoGrid, site: Site) -> float:
    ground = float(terrain_at(grid, np.array(site.x_m), np.array(site.y_m)))
    return ground + site.antenna_height_m


def _user_array(scenario: Scenario, users) -> np.ndarray:
    """Normalize user positions to (U, 3) with absolute z."""
    arr = np.asarray(users, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 3))
    if arr.ndim != 2:
        raise ValueError("users must be (U, 2) or (U, 3)")
    if arr.shape[1] == 2:
        ground = terrain_at(scenario.grid, arr[:, 0], arr[:, 1])
        z = ground + scenario.sim.ue_height_m
        arr = np.column_stack([arr, z])
    return arr


def large_scale(
    state: ChannelState, site_index: int, beam_index: int, user_xyz
) -> LargeScale:
    """Single-link composition: LOS test, angles, gain, path loss, shadow."""
    sc = state.scenario
    site = sc.sites[site_index]
    beam = site.beams[beam_index]
    ux, uy, uz = (float(v) for v in user_xyz)
    antenna_z = _site_antenna_z(sc.grid, site)
    los = los_check(sc.grid, (site.x_m, site.y_m, antenna_z), (ux, uy, uz))
    angles = relative_angles(site, beam, (ux, uy, uz), antenna_z=antenna_z)
    gain = antenna_gain(beam, angles)
    d3d = max(math.dist((site.x_m, site.y_m, antenna_z), (ux, uy, uz)), 1.0)
    pl = float(state.provider(d3d, site.carrier_ghz, los))
    sigma = sc.sim.shadow_sigma_los_db if los else sc.sim.shadow_sigma_nlos_db
    cols = min(int((ux - sc.grid.origin_x_m) / sc.grid.resolution_m), sc.grid.n_cols - 1)
    rows = min(int((uy - sc.grid.origin_y_m) / sc.grid.resolution_m), sc.grid.n_rows - 1)
    shadow = sigma * float(state.unit_shadow[site_index][rows, cols])
    return LargeScale(
        path_loss_db=pl,
        shadow_db=shadow,
        antenna_gain_dbi=gain,
        coupling_loss_db=pl + shadow - gain,
        los=los,
    )


def large_scale_arrays(state: ChannelState, users) -> LargeScaleArrays:
    """All-links large-scale terms for one tick's user positions."""
    sc = state.scenario
    upos = _user_array(sc, users)
    n_users = upos.shape[0]
    n_beams = state.beam_count
    pl = np.zeros((n_beams, n_users))
    sh = np.zeros((n_beams, n_users))
    gain = np.zeros((n_beams, n_users))
    los_out = np.zeros((n_beams, n_users), dtype=bool)
    row = 0
    for si, site in enumerate(sc.sites):
        antenna_z = _site_antenna_z(sc.grid, site)
        dx = upos[:, 0] - site.x_m
        dy = upos[:, 1] - site.y_m
        d_h = np.hypot(dx, dy)
        d3d = np.sqrt(d_h**2 + (upos[:, 2] - antenna_z) ** 2)
        bearing = np.degrees(np.arctan2(dx, dy))
        el_geo = np.degrees(np.arctan2(upos[:, 2] - antenna_z, d_h))
        if sc.grid.terrain_height is None:
            los = np.ones(n_users, dtype=bool)
        else:
            los = np.array(
                [
                    los_check(sc.grid, (site.x_m, site.y_m, antenna_z), tuple(u))
                    for u in upos
                ]
            )
        pl_site = np.asarray(state.provider(d3d, site.carrier_ghz, los), dtype=float)
        if n_users:
            cells_c = np.minimum(
                ((upos[:, 0] - sc.grid.origin_x_m) / sc.grid.resolution_m).astype(int),
                sc.grid.n_cols - 1,
            )
            cells_r = np.minimum(
                ((upos[:, 1] - sc.grid.origin_y_m) / sc.grid.resolution_m).astype(int),
                sc.grid.n_rows - 1,
            )
            unit = state.unit_shadow[si][cells_r, cells_c]
        else:
            unit = np.zeros(0)
        sigma = np.where(los, sc.sim.shadow_sigma_los_db, sc.sim.shadow_sigma_nlos_db)
        shadow_site = sigma * unit
        for beam in site.beams:
            rel_az = wrap_angle_deg(bearing - (site.mech_azimuth_deg + beam.azimuth_offset_deg))
            rel_el = el_geo + site.mech_downtilt_deg + beam.tilt_deg
            gain[row] = _gain_array(beam, rel_az, rel_el)
            pl[row] = pl_site
            sh[row] = shadow_site
            los_out[row] = los
            row += 1
    return LargeScaleArrays(
        path_loss_db=pl,
        shadow_db=sh,
        antenna_gain_dbi=gain,
        coupling_loss_db=pl + sh - gain,
        los=los_out,
    )


def channel_matrix(scenario: Scenario, users, tick: int, seed: int, state: ChannelState | None = None):
    """Complex link-gain matrix (total beams x users) plus large-scale parts.

    Entry magnitude is 10^(-coupling/20) times the per-tick fading draw.
    Passing a prebuilt ChannelState skips re-synthesizing shadow maps.
    """
    if state is None:
        state = make_channel_state(scenario)
    ls = large_scale_arrays(state, users)
    n_beams, n_users = ls.coupling_loss_db.shape
    if n_users == 0:
        return np.zeros((n_beams, 0), dtype=complex), ls
    site_idx = []
    beam_idx = []
    for si, site in enumerate(scenario.sites):
        for bi, _ in enumerate(site.beams):
            site_idx.append(si)
            beam_idx.append(bi)
    site_col = np.asarray(site_idx, dtype=np.uint64)[:, None]
    beam_col = np.asarray(beam_idx, dtype=np.uint64)[:, None]
    user_row = np.arange(n_users, dtype=np.uint64)[None, :]
    ss = small_scale(
        np.broadcast_to(site_col, (n_beams, n_users)),
        np.broadcast_to(beam_col, (n_beams, n_users)),
        np.broadcast_to(user_row, (n_beams, n_users)),
        tick,
        seed,
        ls.los,
        rician_k_db=scenario.sim.rician_k_db,
    )
    amplitude = 10.0 ** (-ls.coupling_loss_db / 20.0)
    return amplitude * ss, ls
