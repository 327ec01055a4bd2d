"""World model: map grid, terrain, roads, sites, beams, simulation constants.

Scenario files are TOML-style structured text with sections [grid], [roads],
[sim], [users], [reward] and repeated [[site]] / [[site.beam]] tables.
Parsing is fail-closed: unknown keys and out-of-range values are errors,
nothing is silently clamped.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

H_BEAMWIDTHS = (15.0, 30.0, 45.0, 65.0, 90.0, 110.0)
V_BEAMWIDTHS = (6.0, 12.0, 25.0)
AZIMUTH_OFFSET_RANGE = (-60.0, 60.0)
TILT_RANGE = (-2.0, 15.0)


class ScenarioError(Exception):
    """Base class for scenario validation and parse failures."""


class MissingField(ScenarioError):
    def __init__(self, field_name: str):
        super().__init__(f"missing required field: {field_name}")
        self.field = field_name


class OutOfRange(ScenarioError):
    def __init__(self, field_name: str, value, bounds):
        super().__init__(f"{field_name} = {value!r} outside allowed {bounds}")
        self.field = field_name
        self.value = value
        self.bounds = bounds


class MalformedSyntax(ScenarioError):
    def __init__(self, detail: str, line: int | None = None):
        at = f" (line {line})" if line is not None else ""
        super().__init__(f"malformed scenario file{at}: {detail}")
        self.line = line


class UnknownKey(ScenarioError):
    def __init__(self, key: str, section: str):
        super().__init__(f"unknown key {key!r} in section [{section}]")
        self.key = key
        self.section = section


class OutOfBounds(ScenarioError):
    def __init__(self, point):
        super().__init__(f"point {point} outside grid bounds")
        self.point = point


# ---------------------------------------------------------------------------
# domain types


@dataclass(eq=False)
class GeoGrid:
    """Planar map grid in meters with optional per-cell terrain elevation."""

    origin_x_m: float = 0.0
    origin_y_m: float = 0.0
    width_m: float = 1000.0
    height_m: float = 1000.0
    resolution_m: float = 10.0
    terrain_height: np.ndarray | None = None  # (n_rows, n_cols), meters

    def __post_init__(self):
        if self.resolution_m <= 0:
            raise OutOfRange("grid.resolution_m", self.resolution_m, "(0, inf)")
        if self.width_m < self.resolution_m or self.height_m < self.resolution_m:
            raise OutOfRange(
                "grid.width_m/height_m",
                (self.width_m, self.height_m),
                f">= resolution_m ({self.resolution_m})",
            )
        if self.terrain_height is not None:
            t = np.asarray(self.terrain_height, dtype=float)
            if t.shape != (self.n_rows, self.n_cols):
                raise OutOfRange(
                    "grid.terrain",
                    t.shape,
                    f"shape ({self.n_rows}, {self.n_cols})",
                )
            self.terrain_height = t

    @property
    def n_cols(self) -> int:
        return int(math.ceil(self.width_m / self.resolution_m))

    @property
    def n_rows(self) -> int:
        return int(math.ceil(self.height_m / self.resolution_m))

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    def contains(self, x: float, y: float) -> bool:
        return (
            self.origin_x_m <= x <= self.origin_x_m + self.width_m
            and self.origin_y_m <= y <= self.origin_y_m + self.height_m
        )

    def __eq__(self, other):
        if not isinstance(other, GeoGrid):
            return NotImplemented
        same_terrain = (
            (self.terrain_height is None and other.terrain_height is None)
            or (
                self.terrain_height is not None
                and other.terrain_height is not None
                and np.array_equal(self.terrain_height, other.terrain_height)
            )
        )
        return same_terrain and (
            self.origin_x_m,
            self.origin_y_m,
            self.width_m,
            self.height_m,
            self.resolution_m,
        ) == (
            other.origin_x_m,
            other.origin_y_m,
            other.width_m,
            other.height_m,
            other.resolution_m,
        )


@dataclass
class RoadGraph:
    """Undirected road graph; edge lengths are Euclidean node distances."""

    nodes: list[tuple[float, float]]
    edges: list[tuple[int, int, float]]  # (node_a, node_b, length_m)

    def __post_init__(self):
        n = len(self.nodes)
        self.nodes = [(float(x), float(y)) for x, y in self.nodes]
        checked = []
        for e in self.edges:
            a, b = int(e[0]), int(e[1])
            if not (0 <= a < n and 0 <= b < n):
                raise OutOfRange("roads.edges", (a, b), f"node index < {n}")
            length = math.dist(self.nodes[a], self.nodes[b])
            if len(e) > 2 and abs(float(e[2]) - length) > 1e-6:
                raise OutOfRange("roads.edge_length", e[2], f"euclidean {length:.6f} +- 1e-6")
            checked.append((a, b, length))
        self.edges = checked


@dataclass
class BeamConfig:
    """One adjustable sub-beam: the four optimization parameters plus validity."""

    beam_id: int
    h_beamwidth_deg: float = 65.0
    v_beamwidth_deg: float = 6.0
    azimuth_offset_deg: float = 0.0
    tilt_deg: float = 4.0
    active: bool = True
    g_max_dbi: float = 17.0

    def __post_init__(self):
        if self.h_beamwidth_deg not in H_BEAMWIDTHS:
            raise OutOfRange("beam.h_beamwidth_deg", self.h_beamwidth_deg, H_BEAMWIDTHS)
        if self.v_beamwidth_deg not in V_BEAMWIDTHS:
            raise OutOfRange("beam.v_beamwidth_deg", self.v_beamwidth_deg, V_BEAMWIDTHS)
        lo, hi = AZIMUTH_OFFSET_RANGE
        if not lo <= self.azimuth_offset_deg <= hi:
            raise OutOfRange("beam.azimuth_offset_deg", self.azimuth_offset_deg, AZIMUTH_OFFSET_RANGE)
        lo, hi = TILT_RANGE
        if not lo <= self.tilt_deg <= hi:
            raise OutOfRange("beam.tilt_deg", self.tilt_deg, TILT_RANGE)
        if not math.isfinite(self.g_max_dbi):
            raise OutOfRange("beam.g_max_dbi", self.g_max_dbi, "finite")


@dataclass
class Site:
    """Base-station site with one or more beams."""

    site_id: str
    x_m: float
    y_m: float
    antenna_height_m: float = 25.0
    mech_azimuth_deg: float = 0.0
    mech_downtilt_deg: float = 6.0
    tx_power_dbm: float = 46.0
    carrier_ghz: float = 3.5
    bandwidth_mhz: float = 20.0
    n_prb: int = 100
    beams: list[BeamConfig] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.mech_azimuth_deg < 360.0:
            raise OutOfRange("site.mech_azimuth_deg", self.mech_azimuth_deg, "[0, 360)")
        if not -10.0 <= self.mech_downtilt_deg <= 30.0:
            raise OutOfRange("site.mech_downtilt_deg", self.mech_downtilt_deg, "[-10, 30]")
        if not 0.0 <= self.tx_power_dbm <= 60.0:
            raise OutOfRange("site.tx_power_dbm", self.tx_power_dbm, "[0, 60]")
        if self.n_prb <= 0:
            raise OutOfRange("site.n_prb", self.n_prb, "> 0")
        if self.antenna_height_m <= 0:
            raise OutOfRange("site.antenna_height_m", self.antenna_height_m, "> 0")
        if self.carrier_ghz <= 0:
            raise OutOfRange("site.carrier_ghz", self.carrier_ghz, "> 0")
        if self.bandwidth_mhz <= 0:
            raise OutOfRange("site.bandwidth_mhz", self.bandwidth_mhz, "> 0")
        if not self.beams:
            raise MissingField(f"site {self.site_id}: at least one [[site.beam]]")
        seen = set()
        for b in self.beams:
            if b.beam_id in seen:
                raise ScenarioError(f"site {self.site_id}: duplicate beam_id {b.beam_id}")
            seen.add(b.beam_id)


@dataclass
class SimParams:
    """Simulation constants; defaults are the documented baseline."""

    noise_figure_db: float = 9.0
    kpi_tick_s: float = 1.0
    shadow_sigma_los_db: float = 4.0
    shadow_sigma_nlos_db: float = 6.0
    decorrelation_m: float = 50.0
    coverage_rsrp_threshold_dbm: float = -105.0
    coverage_sinr_threshold_db: float = -3.0
    max_se_bps_hz: float = 7.8
    rician_k_db: float = 10.0
    ue_tx_power_dbm: float = 23.0
    ue_height_m: float = 1.5
    scheduler: str = "pf"

    def __post_init__(self):
        if self.kpi_tick_s <= 0:
            raise OutOfRange("sim.kpi_tick_s", self.kpi_tick_s, "> 0")
        if self.shadow_sigma_los_db < 0 or self.shadow_sigma_nlos_db < 0:
            raise OutOfRange(
                "sim.shadow_sigma", (self.shadow_sigma_los_db, self.shadow_sigma_nlos_db), ">= 0"
            )
        if self.decorrelation_m <= 0:
            raise OutOfRange("sim.decorrelation_m", self.decorrelation_m, "> 0")
        if self.max_se_bps_hz <= 0:
            raise OutOfRange("sim.max_se_bps_hz", self.max_se_bps_hz, "> 0")
        if self.noise_figure_db < 0:
            raise OutOfRange("sim.noise_figure_db", self.noise_figure_db, ">= 0")
        if self.scheduler not in ("pf", "rr"):
            raise OutOfRange("sim.scheduler", self.scheduler, ("pf", "rr"))


@dataclass
class UserModel:
    """How episode users are sourced when no external trajectories are given."""

    n_users: int = 20
    mode: str = "cluster"  # cluster | commute | waypoints
    cluster_x_m: float | None = None  # default: grid center
    cluster_y_m: float | None = None
    cluster_radius_m: float = 150.0
    speed_mps: float = 1.5
    traffic: str = "constant"  # constant | poisson
    demand_dl_mbps: float = 20.0
    demand_ul_mbps: float = 5.0
    session_rate_per_min: float = 0.2
    session_duration_s: float = 120.0
    waypoint_csv: str = ""

    def __post_init__(self):
        if self.n_users < 0:
            raise OutOfRange("users.n_users", self.n_users, ">= 0")
        if self.mode not in ("cluster", "commute", "waypoints"):
            raise OutOfRange("users.mode", self.mode, ("cluster", "commute", "waypoints"))
        if self.speed_mps <= 0:
            raise OutOfRange("users.speed_mps", self.speed_mps, "> 0")
        if self.traffic not in ("constant", "poisson"):
            raise OutOfRange("users.traffic", self.traffic, ("constant", "poisson"))
        if self.demand_dl_mbps <= 0 or self.demand_ul_mbps <= 0:
            raise OutOfRange(
                "users.demand", (self.demand_dl_mbps, self.demand_ul_mbps), "> 0"
            )
        if self.cluster_radius_m < 0:
            raise OutOfRange("users.cluster_radius_m", self.cluster_radius_m, ">= 0")


@dataclass
class RewardSection:
    """[reward] weights for the optimization environment plus its episode knobs."""

    w_coverage: float = 1.0
    w_rsrp: float = 0.0
    w_sinr: float = 0.0
    w_dl: float = 0.0
    w_ul: float = 0.0
    eval_window_ticks: int = 60
    episode_steps: int = 8

    def __post_init__(self):
        ws = (self.w_coverage, self.w_rsrp, self.w_sinr, self.w_dl, self.w_ul)
        if any(w < 0 for w in ws):
            raise OutOfRange("reward.weights", ws, ">= 0")
        if not any(w > 0 for w in ws):
            raise OutOfRange("reward.weights", ws, "at least one > 0")
        if self.eval_window_ticks < 1:
            raise OutOfRange("reward.eval_window_ticks", self.eval_window_ticks, ">= 1")
        if self.episode_steps < 1:
            raise OutOfRange("reward.episode_steps", self.episode_steps, ">= 1")


@dataclass
class Scenario:
    """Immutable world description; the seed determines every stochastic draw."""

    grid: GeoGrid
    sites: list[Site]
    roads: RoadGraph | None = None
    sim: SimParams = field(default_factory=SimParams)
    users: UserModel = field(default_factory=UserModel)
    reward: RewardSection = field(default_factory=RewardSection)
    seed: int = 0

    def __post_init__(self):
        if not self.sites:
            raise MissingField("at least one [[site]]")
        seen = set()
        for s in self.sites:
            if s.site_id in seen:
                raise ScenarioError(f"duplicate site_id {s.site_id!r}")
            seen.add(s.site_id)
        if not 0 <= self.seed < 2**63:
            raise OutOfRange("seed", self.seed, "[0, 2^63)")

    def beam_list(self) -> list[tuple[int, Site, BeamConfig]]:
        """Flat (site_index, site, beam) list in deterministic order."""
        out = []
        for i, s in enumerate(self.sites):
            for b in s.beams:
                out.append((i, s, b))
        return out


# ---------------------------------------------------------------------------
# grid geometry


def cell_index(grid: GeoGrid, p: tuple[float, float]) -> int:
    """Row-major cell token of a planar point; right/top edges belong to the last cell."""
    x, y = float(p[0]), float(p[1])
    if not grid.contains(x, y):
        raise OutOfBounds((x, y))
    col = min(int((x - grid.origin_x_m) / grid.resolution_m), grid.n_cols - 1)
    row = min(int((y - grid.origin_y_m) / grid.resolution_m), grid.n_rows - 1)
    return row * grid.n_cols + col


def cell_center(grid: GeoGrid, token: int) -> tuple[float, float]:
    """Center point of the grid cell identified by a row-major token."""
    if not 0 <= token < grid.n_cells:
        raise OutOfBounds(token)
    row, col = divmod(int(token), grid.n_cols)
    x = grid.origin_x_m + (col + 0.5) * grid.resolution_m
    y = grid.origin_y_m + (row + 0.5) * grid.resolution_m
    return x, y


def cell_indices_of(grid: GeoGrid, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized cell_index; positions must already lie inside the grid."""
    cols = np.minimum(((xs - grid.origin_x_m) / grid.resolution_m).astype(int), grid.n_cols - 1)
    rows = np.minimum(((ys - grid.origin_y_m) / grid.resolution_m).astype(int), grid.n_rows - 1)
    return rows * grid.n_cols + cols


def terrain_at(grid: GeoGrid, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if grid.terrain_height is None:
        return np.zeros(np.shape(xs))
    cols = np.minimum(((np.asarray(xs) - grid.origin_x_m) / grid.resolution_m).astype(int), grid.n_cols - 1)
    rows = np.minimum(((np.asarray(ys) - grid.origin_y_m) / grid.resolution_m).astype(int), grid.n_rows - 1)
    return grid.terrain_height[rows, cols]


def los_check(grid: GeoGrid, a: tuple[float, float, float], b: tuple[float, float, float]) -> bool:
    """True iff the straight 3D segment a-b stays at or above terrain.

    The segment is sampled every resolution_m/2 meters. Endpoints are ordered
    canonically before sampling so the test is exactly symmetric.
    """
    ax, ay, az = (float(v) for v in a)
    bx, by, bz = (float(v) for v in b)
    if not grid.contains(ax, ay):
        raise OutOfBounds((ax, ay))
    if not grid.contains(bx, by):
        raise OutOfBounds((bx, by))
    if (ax, ay, az) == (bx, by, bz):
        return True
    if grid.terrain_height is None:
        return True
    if (bx, by, bz) < (ax, ay, az):
        ax, ay, az, bx, by, bz = bx, by, bz, ax, ay, az
    dist = math.dist((ax, ay, az), (bx, by, bz))
    n = max(2, int(math.ceil(dist / (grid.resolution_m / 2.0))) + 1)
    t = np.linspace(0.0, 1.0, n)
    xs = ax + (bx - ax) * t
    ys = ay + (by - ay) * t
    zs = az + (bz - az) * t
    ground = terrain_at(grid, xs, ys)
    return bool(np.all(zs + 1e-9 >= ground))


# ---------------------------------------------------------------------------
# parsing

_GRID_KEYS = {
    "origin_x_m", "origin_y_m", "width_m", "height_m", "resolution_m",
    "terrain", "terrain_csv",
}
_ROAD_KEYS = {"nodes", "edges"}
_SIM_KEYS = {f.name for f in SimParams.__dataclass_fields__.values()}
_USER_KEYS = {f.name for f in UserModel.__dataclass_fields__.values()}
_REWARD_KEYS = {f.name for f in RewardSection.__dataclass_fields__.values()}
_SITE_KEYS = {
    "site_id", "x_m", "y_m", "antenna_height_m", "mech_azimuth_deg",
    "mech_downtilt_deg", "tx_power_dbm", "carrier_ghz", "bandwidth_mhz",
    "n_prb", "beam",
}
_BEAM_KEYS = {
    "beam_id", "h_beamwidth_deg", "v_beamwidth_deg", "azimuth_offset_deg",
    "tilt_deg", "active", "g_max_dbi",
}
_TOP_KEYS = {"seed", "grid", "roads", "sim", "users", "reward", "site"}


def _check_keys(table: dict, allowed: set, section: str) -> None:
    for k in table:
        if k not in allowed:
            raise UnknownKey(k, section)


def _num(table: dict, key: str, section: str, default=None, required=False):
    if key not in table:
        if required:
            raise MissingField(f"{section}.{key}")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise MalformedSyntax(f"{section}.{key} must be a number, got {v!r}")
    return float(v)


def _int(table: dict, key: str, section: str, default=None, required=False):
    if key not in table:
        if required:
            raise MissingField(f"{section}.{key}")
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise MalformedSyntax(f"{section}.{key} must be an integer, got {v!r}")
    return int(v)


def _str(table: dict, key: str, section: str, default=None, required=False):
    if key not in table:
        if required:
            raise MissingField(f"{section}.{key}")
        return default
    v = table[key]
    if not isinstance(v, str):
        raise MalformedSyntax(f"{section}.{key} must be a string, got {v!r}")
    return v


def _bool(table: dict, key: str, section: str, default=None):
    if key not in table:
        return default
    v = table[key]
    if not isinstance(v, bool):
        raise MalformedSyntax(f"{section}.{key} must be a boolean, got {v!r}")
    return v


def _parse_grid(table: dict, base_dir: Path | None) -> GeoGrid:
    _check_keys(table, _GRID_KEYS, "grid")
    terrain = None
    if "terrain" in table and "terrain_csv" in table:
        raise MalformedSyntax("grid: give terrain inline or as terrain_csv, not both")
    if "terrain" in table:
        terrain = np.asarray(table["terrain"], dtype=float)
    elif "terrain_csv" in table:
        path = Path(_str(table, "terrain_csv", "grid"))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        terrain = np.loadtxt(path, delimiter=",", ndmin=2)
    return GeoGrid(
        origin_x_m=_num(table, "origin_x_m", "grid", 0.0),
        origin_y_m=_num(table, "origin_y_m", "grid", 0.0),
        width_m=_num(table, "width_m", "grid", required=True),
        height_m=_num(table, "height_m", "grid", required=True),
        resolution_m=_num(table, "resolution_m", "grid", required=True),
        terrain_height=terrain,
    )


def _parse_roads(table: dict) -> RoadGraph:
    _check_keys(table, _ROAD_KEYS, "roads")
    if "nodes" not in table:
        raise MissingField("roads.nodes")
    if "edges" not in table:
        raise MissingField("roads.edges")
    nodes = [(float(p[0]), float(p[1])) for p in table["nodes"]]
    edges = [tuple(e) for e in table["edges"]]
    return RoadGraph(nodes=nodes, edges=edges)


def _parse_beam(table: dict, site_id: str) -> BeamConfig:
    section = f"site.{site_id}.beam"
    _check_keys(table, _BEAM_KEYS, section)
    return BeamConfig(
        beam_id=_int(table, "beam_id", section, required=True),
        h_beamwidth_deg=_num(table, "h_beamwidth_deg", section, 65.0),
        v_beamwidth_deg=_num(table, "v_beamwidth_deg", section, 6.0),
        azimuth_offset_deg=_num(table, "azimuth_offset_deg", section, 0.0),
        tilt_deg=_num(table, "tilt_deg", section, 4.0),
        active=_bool(table, "active", section, True),
        g_max_dbi=_num(table, "g_max_dbi", section, 17.0),
    )


def _parse_site(table: dict) -> Site:
    site_id = _str(table, "site_id", "site", required=True)
    _check_keys(table, _SITE_KEYS, f"site.{site_id}")
    beams = [_parse_beam(b, site_id) for b in table.get("beam", [])]
    return Site(
        site_id=site_id,
        x_m=_num(table, "x_m", "site", required=True),
        y_m=_num(table, "y_m", "site", required=True),
        antenna_height_m=_num(table, "antenna_height_m", "site", 25.0),
        mech_azimuth_deg=_num(table, "mech_azimuth_deg", "site", 0.0),
        mech_downtilt_deg=_num(table, "mech_downtilt_deg", "site", 6.0),
        tx_power_dbm=_num(table, "tx_power_dbm", "site", 46.0),
        carrier_ghz=_num(table, "carrier_ghz", "site", 3.5),
        bandwidth_mhz=_num(table, "bandwidth_mhz", "site", 20.0),
        n_prb=_int(table, "n_prb", "site", 100),
        beams=beams,
    )


def _from_table(cls, table: dict, section: str, allowed: set):
    _check_keys(table, allowed, section)
    kwargs = {}
    for name, f in cls.__dataclass_fields__.items():
        if name not in table:
            continue
        v = table[name]
        if f.type in ("float", "float | None"):
            kwargs[name] = _num(table, name, section)
        elif f.type == "int":
            kwargs[name] = _int(table, name, section)
        elif f.type == "str":
            kwargs[name] = _str(table, name, section)
        else:
            kwargs[name] = v
    return cls(**kwargs)


def parse_scenario_text(text: str, base_dir: Path | None = None) -> Scenario:
    """Parse scenario structured text; raises ScenarioError subclasses."""
    try:
        doc = _toml.loads(text)
    except _toml.TOMLDecodeError as e:
        line = None
        msg = str(e)
        if "line " in msg:
            try:
                line = int(msg.split("line ")[1].split(",")[0].split(")")[0])
            except (ValueError, IndexError):
                line = None
        raise MalformedSyntax(msg, line) from e
    _check_keys(doc, _TOP_KEYS, "<root>")
    if "grid" not in doc:
        raise MissingField("[grid]")
    if "site" not in doc or not doc["site"]:
        raise MissingField("at least one [[site]]")
    seed = _int(doc, "seed", "<root>", 0)
    grid = _parse_grid(doc["grid"], base_dir)
    roads = _parse_roads(doc["roads"]) if "roads" in doc else None
    sim = _from_table(SimParams, doc.get("sim", {}), "sim", _SIM_KEYS)
    users = _from_table(UserModel, doc.get("users", {}), "users", _USER_KEYS)
    reward = _from_table(RewardSection, doc.get("reward", {}), "reward", _REWARD_KEYS)
    sites = [_parse_site(t) for t in doc["site"]]
    return Scenario(
        grid=grid, sites=sites, roads=roads, sim=sim, users=users, reward=reward, seed=seed
    )


def parse_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_scenario_text(text, base_dir=path.parent)


# ---------------------------------------------------------------------------
# serialization


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialize {v!r}")


def dump_scenario(sc: Scenario) -> str:
    """Serialize a Scenario to structured text that parse_scenario_text accepts."""
    out = [f"seed = {sc.seed}", ""]
    g = sc.grid
    out.append("[grid]")
    out.append(f"origin_x_m = {_fmt(g.origin_x_m)}")
    out.append(f"origin_y_m = {_fmt(g.origin_y_m)}")
    out.append(f"width_m = {_fmt(g.width_m)}")
    out.append(f"height_m = {_fmt(g.height_m)}")
    out.append(f"resolution_m = {_fmt(g.resolution_m)}")
    if g.terrain_height is not None:
        rows = ", ".join(
            "[" + ", ".join(_fmt(float(v)) for v in row) + "]" for row in g.terrain_height
        )
        out.append(f"terrain = [{rows}]")
    out.append("")
    if sc.roads is not None:
        out.append("[roads]")
        nodes = ", ".join(f"[{_fmt(x)}, {_fmt(y)}]" for x, y in sc.roads.nodes)
        edges = ", ".join(f"[{a}, {b}]" for a, b, _ in sc.roads.edges)
        out.append(f"nodes = [{nodes}]")
        out.append(f"edges = [{edges}]")
        out.append("")
    for section, obj in (("sim", sc.sim), ("users", sc.users), ("reward", sc.reward)):
        out.append(f"[{section}]")
        for name in obj.__dataclass_fields__:
            v = getattr(obj, name)
            if v is None:
                continue
            out.append(f"{name} = {_fmt(v)}")
        out.append("")
    for s in sc.sites:
        out.append("[[site]]")
        out.append(f"site_id = {_fmt(s.site_id)}")
        for name in (
            "x_m", "y_m", "antenna_height_m", "mech_azimuth_deg", "mech_downtilt_deg",
            "tx_power_dbm", "carrier_ghz", "bandwidth_mhz", "n_prb",
        ):
            out.append(f"{name} = {_fmt(getattr(s, name))}")
        for b in s.beams:
            out.append("")
            out.append("[[site.beam]]")
            out.append(f"beam_id = {b.beam_id}")
            out.append(f"h_beamwidth_deg = {_fmt(b.h_beamwidth_deg)}")
            out.append(f"v_beamwidth_deg = {_fmt(b.v_beamwidth_deg)}")
            out.append(f"azimuth_offset_deg = {_fmt(b.azimuth_offset_deg)}")
            out.append(f"tilt_deg = {_fmt(b.tilt_deg)}")
            out.append(f"active = {_fmt(b.active)}")
            out.append(f"g_max_dbi = {_fmt(b.g_max_dbi)}")
        out.append("")
    return "\n".join(out)


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(sc), encoding="utf-8")
