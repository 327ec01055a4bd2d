import math

import numpy as np
import pytest

from netsim.channel import (
    AnglePair,
    ChannelState,
    EmpiricalPathLoss,
    antenna_gain,
    channel_matrix,
    large_scale,
    large_scale_arrays,
    make_channel_state,
    path_loss,
    relative_angles,
    shadow_field,
    small_scale,
    train_learned_path_loss,
    wrap_angle_deg,
)
from netsim.scenario import BeamConfig, GeoGrid, Scenario, Site


def _beam(**kw):
    kw.setdefault("tilt_deg", 0.0)
    return BeamConfig(beam_id=0, **kw)


def _site(**kw):
    defaults = dict(
        site_id="s0", x_m=0.0, y_m=0.0, antenna_height_m=30.0,
        mech_azimuth_deg=0.0, mech_downtilt_deg=0.0,
        beams=[_beam()],
    )
    defaults.update(kw)
    return Site(**defaults)


# -- angles


def test_boresight_angles_zero():
    site = _site()
    a = relative_angles(site, site.beams[0], (0.0, 100.0, 30.0))
    assert a.azimuth_deg == pytest.approx(0.0)
    assert a.elevation_deg == pytest.approx(0.0)


def test_east_user_relative_azimuth():
    site = _site()
    a = relative_angles(site, site.beams[0], (100.0, 0.0, 30.0))
    assert a.azimuth_deg == pytest.approx(90.0)


def test_elevation_down_45():
    site = _site()
    a = relative_angles(site, site.beams[0], (0.0, 30.0, 0.0))
    assert a.elevation_deg == pytest.approx(-45.0)


def test_downtilt_shifts_relative_elevation():
    # 45 degrees of downtilt points the boresight at a user 45 degrees below
    site = _site(mech_downtilt_deg=30.0)
    site.beams[0] = BeamConfig(beam_id=0, tilt_deg=15.0, v_beamwidth_deg=6.0)
    a = relative_angles(site, site.beams[0], (0.0, 30.0, 0.0))
    assert a.elevation_deg == pytest.approx(0.0)


def test_wrap_angle_range():
    xs = np.linspace(-720.0, 720.0, 1441)
    w = wrap_angle_deg(xs)
    assert np.all(w > -180.0) and np.all(w <= 180.0)
    assert wrap_angle_deg(190.0) == pytest.approx(-170.0)


# -- antenna pattern


def test_gain_peak_at_boresight():
    assert antenna_gain(_beam(), AnglePair(0.0, 0.0)) == pytest.approx(17.0)


def test_gain_3db_at_half_beamwidth():
    b = _beam(h_beamwidth_deg=65.0)
    g = antenna_gain(b, AnglePair(65.0 / 2.0, 0.0))
    assert g == pytest.approx(17.0 - 3.0, abs=1e-12)
    g_v = antenna_gain(b, AnglePair(0.0, 6.0 / 2.0))
    assert g_v == pytest.approx(17.0 - 3.0, abs=1e-12)


def test_gain_floor_30db():
    g = antenna_gain(_beam(), AnglePair(180.0, 80.0))
    assert g == pytest.approx(17.0 - 30.0)


def test_inactive_beam_sentinel():
    g = antenna_gain(_beam(active=False), AnglePair(0.0, 0.0))
    assert g == -250.0


def test_gain_even_and_bounded():
    rng = np.random.default_rng(4)
    b = _beam(h_beamwidth_deg=30.0, v_beamwidth_deg=12.0)
    for _ in range(1000):
        az = rng.uniform(-180.0, 180.0)
        el = rng.uniform(-90.0, 90.0)
        g = antenna_gain(b, AnglePair(az, el))
        assert g == pytest.approx(antenna_gain(b, AnglePair(-az, el)))
        assert g == pytest.approx(antenna_gain(b, AnglePair(az, -el)))
        assert b.g_max_dbi - 30.0 <= g <= b.g_max_dbi


def test_narrower_beam_attenuates_more_off_axis():
    widths = [110.0, 90.0, 65.0, 45.0, 30.0, 15.0]
    gains = [
        antenna_gain(_beam(h_beamwidth_deg=w), AnglePair(20.0, 0.0)) for w in widths
    ]
    for wide, narrow in zip(gains, gains[1:]):
        assert narrow < wide


# -- path loss


def test_path_loss_los_reference_points():
    assert path_loss(1.0, 1.0, True) == pytest.approx(32.4)
    assert path_loss(100.0, 3.5, True) == pytest.approx(85.281, abs=1e-3)


def test_path_loss_nlos_lower_bound():
    # at 10 m the raw NLOS value already exceeds the LOS bound
    raw_nlos = 22.4 + 35.3 * math.log10(10.0) + 21.3 * math.log10(3.5)
    assert path_loss(10.0, 3.5, False) == pytest.approx(raw_nlos, abs=1e-9)
    # at 1 m the bound is active: NLOS can never beat LOS
    los_1m = 32.4 + 20.0 * math.log10(3.5)
    assert path_loss(1.0, 3.5, False) == pytest.approx(los_1m, abs=1e-9)
    d = np.linspace(1.0, 500.0, 200)
    assert np.all(path_loss(d, 3.5, False) >= path_loss(d, 3.5, True) - 1e-12)


def test_path_loss_clamps_short_distance():
    assert path_loss(0.1, 2.0, True) == path_loss(1.0, 2.0, True)


def test_path_loss_monotonic():
    d = np.linspace(1.0, 2000.0, 400)
    for los in (True, False):
        pl = path_loss(d, 3.5, los)
        assert np.all(np.diff(pl) > 0)
        f_lo = path_loss(d, 2.0, los)
        f_hi = path_loss(d, 4.0, los)
        assert np.all(f_hi > f_lo)


def test_learned_provider_tracks_empirical():
    provider = train_learned_path_loss(seed=0, iters=600)
    rng = np.random.default_rng(99)
    d = 10.0 ** rng.uniform(0.3, 3.3, size=500)
    for los in (True, False):
        ref = path_loss(d, 3.5, np.full(500, los))
        got = provider(d, 3.5, np.full(500, los))
        rmse = float(np.sqrt(np.mean((ref - got) ** 2)))
        assert rmse < 2.0


# -- shadowing


def test_shadow_sigma_zero_all_zero():
    g = GeoGrid(width_m=200.0, height_m=200.0, resolution_m=10.0)
    assert np.all(shadow_field(g, 1, 0.0, 50.0) == 0.0)


def test_shadow_variance_and_autocorrelation():
    g = GeoGrid(width_m=3200.0, height_m=3200.0, resolution_m=10.0)
    f = shadow_field(g, 3, 6.0, 50.0)
    assert f.size >= 10**5
    assert abs(f.mean()) < 0.5
    assert 36.0 * 0.9 <= f.var() <= 36.0 * 1.1
    lag = int(round(50.0 / g.resolution_m))
    rho_x = np.mean(f[:, :-lag] * f[:, lag:]) / f.var()
    rho_y = np.mean(f[:-lag, :] * f[lag:, :]) / f.var()
    for rho in (rho_x, rho_y):
        assert math.exp(-1) * 0.7 <= rho <= math.exp(-1) * 1.3


def test_shadow_deterministic_and_site_independent():
    g = GeoGrid(width_m=1600.0, height_m=1600.0, resolution_m=10.0)
    a = shadow_field(g, 7, 4.0, 50.0, site_index=0)
    b = shadow_field(g, 7, 4.0, 50.0, site_index=0)
    c = shadow_field(g, 7, 4.0, 50.0, site_index=1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    corr = np.corrcoef(a.ravel(), c.ravel())[0, 1]
    assert abs(corr) < 0.1


# -- small-scale fading


def test_fading_deterministic():
    a = small_scale(1, 2, 3, 17, 42, False)
    b = small_scale(1, 2, 3, 17, 42, False)
    assert np.array_equal(a, b)
    c = small_scale(1, 2, 3, 18, 42, False)
    assert not np.array_equal(a, c)


def test_rayleigh_unit_mean_power():
    ticks = np.arange(10**5)
    h = small_scale(0, 0, 0, ticks, 5, False)
    p = np.mean(np.abs(h) ** 2)
    assert 0.99 <= p <= 1.01


def test_rician_unit_mean_power_and_k_infinity():
    ticks = np.arange(10**5)
    h = small_scale(0, 0, 0, ticks, 5, True, rician_k_db=10.0)
    p = np.mean(np.abs(h) ** 2)
    assert 0.98 <= p <= 1.02
    # strong direct component: much lower variance than Rayleigh
    assert np.var(np.abs(h) ** 2) < 0.5
    pure = small_scale(0, 0, 0, 3, 5, True, rician_k_db=math.inf)
    assert complex(pure) == 1.0 + 0.0j


# -- composition


def _scenario(sigma=0.0, terrain=None, beams=None):
    grid = GeoGrid(width_m=1000.0, height_m=1000.0, resolution_m=10.0, terrain_height=terrain)
    site = Site(
        site_id="s0", x_m=500.0, y_m=500.0, antenna_height_m=20.0,
        mech_azimuth_deg=0.0, mech_downtilt_deg=0.0, carrier_ghz=3.5,
        beams=beams or [BeamConfig(beam_id=0, tilt_deg=0.0)],
    )
    sc = Scenario(grid=grid, sites=[site], seed=11)
    sc.sim.shadow_sigma_los_db = sigma
    sc.sim.shadow_sigma_nlos_db = sigma
    return sc


def test_large_scale_boresight_composition():
    sc = _scenario(sigma=0.0)
    state = make_channel_state(sc)
    # boresight: 1 m north at antenna height, zero tilt
    ls = large_scale(state, 0, 0, (500.0, 501.0, 20.0))
    expected = 32.4 + 20.0 * math.log10(3.5) - 17.0
    assert ls.los
    assert ls.shadow_db == 0.0
    assert ls.coupling_loss_db == pytest.approx(expected, abs=1e-9)


def test_large_scale_inactive_beam_dominates():
    sc = _scenario(beams=[BeamConfig(beam_id=0, active=False)])
    state = make_channel_state(sc)
    ls = large_scale(state, 0, 0, (500.0, 600.0, 1.5))
    assert ls.coupling_loss_db >= 250.0


def test_coupling_monotonic_in_distance():
    sc = _scenario(sigma=0.0)
    state = make_channel_state(sc)
    near = large_scale(state, 0, 0, (500.0, 600.0, 20.0))
    far = large_scale(state, 0, 0, (500.0, 700.0, 20.0))
    assert far.coupling_loss_db > near.coupling_loss_db


def test_channel_matrix_zero_users():
    sc = _scenario()
    m, ls = channel_matrix(sc, np.zeros((0, 2)), 0, sc.seed)
    assert m.shape == (1, 0)


def test_channel_matrix_inactive_entry_negligible():
    sc = _scenario(
        beams=[BeamConfig(beam_id=0, tilt_deg=0.0), BeamConfig(beam_id=1, active=False)]
    )
    m, ls = channel_matrix(sc, [(500.0, 600.0)], 0, sc.seed)
    assert m.shape == (2, 1)
    assert abs(m[1, 0]) < 1e-12


def test_channel_matrix_recomposition():
    sc = _scenario(sigma=4.0)
    users = [(450.0, 620.0), (510.0, 380.0), (700.0, 700.0)]
    m, ls = channel_matrix(sc, users, 9, sc.seed)
    ss = small_scale(
        np.zeros((1, 3), dtype=np.uint64),
        np.zeros((1, 3), dtype=np.uint64),
        np.arange(3, dtype=np.uint64)[None, :],
        9,
        sc.seed,
        ls.los,
        rician_k_db=sc.sim.rician_k_db,
    )
    power_db = 20.0 * np.log10(np.abs(m))
    expect = -ls.coupling_loss_db + 10.0 * np.log10(np.abs(ss) ** 2)
    assert np.max(np.abs(power_db - expect)) < 1e-9


def test_channel_matrix_bit_identical():
    sc = _scenario(sigma=6.0)
    users = [(450.0, 620.0), (510.0, 380.0)]
    m1, _ = channel_matrix(sc, users, 4, sc.seed)
    m2, _ = channel_matrix(sc, users, 4, sc.seed)
    assert np.array_equal(m1, m2)


def test_terrain_blocks_make_nlos():
    terrain = np.zeros((100, 100))
    terrain[:, 60] = 80.0  # wall east of the site
    sc = _scenario(sigma=0.0, terrain=terrain)
    state = make_channel_state(sc)
    blocked = large_scale(state, 0, 0, (850.0, 500.0, 1.5))
    clear = large_scale(state, 0, 0, (450.0, 500.0, 1.5))
    assert not blocked.los
    assert clear.los


def test_large_scale_arrays_match_single_link():
    sc = _scenario(sigma=5.0)
    state = make_channel_state(sc)
    users = [(450.0, 620.0, 1.5), (510.0, 380.0, 1.5)]
    arr = large_scale_arrays(state, users)
    for j, u in enumerate(users):
        single = large_scale(state, 0, 0, u)
        assert arr.coupling_loss_db[0, j] == pytest.approx(single.coupling_loss_db, abs=1e-9)
        assert arr.los[0, j] == single.los
