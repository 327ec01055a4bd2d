"""Antenna-optimization environment plus two baseline optimizers.

The environment wraps the orchestrator: reset runs the default beam layout
for one evaluation window and stores its KPIs as the baseline; each step
applies a delta action to the current beam set, re-runs the window with the
same seed (common random numbers, so a no-op action scores exactly zero),
and rewards the weighted KPI delta against the baseline. Baselines:
coordinate hill climbing over unit deltas and a cross-entropy search over
full beam configurations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .orchestrator import BeamOverride, SimConfig, run_episode
from .scenario import AZIMUTH_OFFSET_RANGE, H_BEAMWIDTHS, TILT_RANGE, V_BEAMWIDTHS, Scenario

# one reward point per: pct-point of coverage, dB of RSRP/SINR, 10 Mbps of rate
REWARD_SCALES = {
    "coverage_pct": 1.0,
    "avg_rsrp_dbm": 1.0,
    "avg_sinr_db": 1.0,
    "dl_mbps": 10.0,
    "ul_mbps": 10.0,
}

# state normalization spans; values clamp into [0, 1]
RSRP_SPAN_DBM = (-140.0, -60.0)
SINR_SPAN_DB = (-10.0, 30.0)
DL_SPAN_MBPS = (0.0, 2000.0)
UL_SPAN_MBPS = (0.0, 500.0)
DENSITY_BINS = 8  # 8x8 histogram over the grid
DELTA_CHOICES = (-2, -1, 0, 1, 2)


class RlEnvError(Exception):
    pass


class NotReset(RlEnvError):
    pass


class EpisodeDone(RlEnvError):
    pass


class InvalidAction(RlEnvError):
    pass


# ---------------------------------------------------------------------------
# reward


@dataclass
class RewardWeights:
    w_coverage: float = 1.0
    w_rsrp: float = 0.0
    w_sinr: float = 0.0
    w_dl: float = 0.0
    w_ul: float = 0.0

    def __post_init__(self):
        ws = self.as_tuple()
        if any(w < 0 for w in ws):
            raise RlEnvError(f"weights must be >= 0, got {ws}")
        if not any(w > 0 for w in ws):
            raise RlEnvError("at least one weight must be > 0")

    def as_tuple(self):
        return (self.w_coverage, self.w_rsrp, self.w_sinr, self.w_dl, self.w_ul)

    def normalized(self) -> "RewardWeights":
        s = sum(self.as_tuple())
        return RewardWeights(*(w / s for w in self.as_tuple()))

    @classmethod
    def from_reward_section(cls, rs) -> "RewardWeights":
        return cls(rs.w_coverage, rs.w_rsrp, rs.w_sinr, rs.w_dl, rs.w_ul).normalized()


def compute_reward(kpis: dict, baseline: dict, weights: RewardWeights) -> float:
    keys = ("coverage_pct", "avg_rsrp_dbm", "avg_sinr_db", "dl_mbps", "ul_mbps")
    total = 0.0
    for w, key in zip(weights.as_tuple(), keys):
        total += w * (kpis[key] - baseline[key]) / REWARD_SCALES[key]
    return float(total)


# ---------------------------------------------------------------------------
# actions


@dataclass
class BeamAction:
    """Delta move for one beam; width choices are catalog indexes."""

    h_index: int
    v_index: int
    azimuth_delta: int = 0
    tilt_delta: int = 0
    active: bool = True

    def __post_init__(self):
        if not 0 <= self.h_index < len(H_BEAMWIDTHS):
            raise InvalidAction(f"h_index {self.h_index} outside catalog")
        if not 0 <= self.v_index < len(V_BEAMWIDTHS):
            raise InvalidAction(f"v_index {self.v_index} outside catalog")
        if self.azimuth_delta not in DELTA_CHOICES:
            raise InvalidAction(f"azimuth_delta {self.azimuth_delta} not in {DELTA_CHOICES}")
        if self.tilt_delta not in DELTA_CHOICES:
            raise InvalidAction(f"tilt_delta {self.tilt_delta} not in {DELTA_CHOICES}")


@dataclass
class ActionSpec:
    beams: list  # BeamAction per flat beam, beam_list order

    @classmethod
    def noop(cls, configs: list) -> "ActionSpec":
        return cls(
            beams=[
                BeamAction(
                    h_index=H_BEAMWIDTHS.index(b.h_beamwidth_deg),
                    v_index=V_BEAMWIDTHS.index(b.v_beamwidth_deg),
                    azimuth_delta=0,
                    tilt_delta=0,
                    active=b.active,
                )
                for b in configs
            ]
        )

    def apply(self, configs: list):
        """Deltas onto current configs -> (new configs, clamp notes)."""
        if len(self.beams) != len(configs):
            raise InvalidAction(f"action covers {len(self.beams)} beams, scenario has {len(configs)}")
        az_lo, az_hi = AZIMUTH_OFFSET_RANGE
        tilt_lo, tilt_hi = TILT_RANGE
        out = []
        clamped = []
        for act, cfg in zip(self.beams, configs):
            az = cfg.azimuth_offset_deg + act.azimuth_delta
            if not az_lo <= az <= az_hi:
                az = min(max(az, az_lo), az_hi)
                clamped.append(f"beam {cfg.beam_id}: azimuth clamped to {az}")
            tilt = cfg.tilt_deg + act.tilt_delta
            if not tilt_lo <= tilt <= tilt_hi:
                tilt = min(max(tilt, tilt_lo), tilt_hi)
                clamped.append(f"beam {cfg.beam_id}: tilt clamped to {tilt}")
            out.append(
                replace(
                    cfg,
                    h_beamwidth_deg=float(H_BEAMWIDTHS[act.h_index]),
                    v_beamwidth_deg=float(V_BEAMWIDTHS[act.v_index]),
                    azimuth_offset_deg=float(az),
                    tilt_deg=float(tilt),
                    active=act.active,
                )
            )
        return out, clamped


@dataclass
class EnvTransition:
    state: np.ndarray
    action: ActionSpec
    reward: float
    next_state: np.ndarray
    done: bool
    info: dict  # kpis (window means), clamped notes, last-tick KpiReport


@dataclass
class ProgressRow:
    eval_idx: int
    reward: float
    kpis: dict


PROGRESS_CSV_HEADER = "eval_idx,reward,coverage_pct,avg_rsrp_dbm,avg_sinr_db,dl_mbps,ul_mbps"


def progress_csv_lines(progress: list) -> list:
    out = []
    for row in progress:
        k = row.kpis
        out.append(
            f"{row.eval_idx},{row.reward:.6f},{k['coverage_pct']:.4f},{k['avg_rsrp_dbm']:.4f},"
            f"{k['avg_sinr_db']:.4f},{k['dl_mbps']:.4f},{k['ul_mbps']:.4f}"
        )
    return out


# ---------------------------------------------------------------------------
# environment


def _norm(value: float, span) -> float:
    lo, hi = span
    return float(min(max((value - lo) / (hi - lo), 0.0), 1.0))


class AntennaEnv:
    """Episodic antenna-parameter environment over one scenario."""

    def __init__(self, scenario: Scenario, weights: RewardWeights | None = None,
                 eval_window_ticks: int | None = None, episode_steps: int | None = None):
        self.scenario = scenario
        self.weights = weights if weights is not None else RewardWeights.from_reward_section(scenario.reward)
        self.eval_window_ticks = eval_window_ticks if eval_window_ticks is not None else scenario.reward.eval_window_ticks
        self.episode_steps = episode_steps if episode_steps is not None else scenario.reward.episode_steps
        if self.eval_window_ticks < 1:
            raise RlEnvError(f"eval_window_ticks must be >= 1, got {self.eval_window_ticks}")
        if self.episode_steps < 1:
            raise RlEnvError(f"episode_steps must be >= 1, got {self.episode_steps}")
        self._beam_keys = [(site.site_id, beam.beam_id) for _, site, beam in scenario.beam_list()]
        self.default_configs = [beam for _, _, beam in scenario.beam_list()]
        self._seed = None
        self._configs = None
        self._baseline = None
        self._state = None
        self._step_count = 0
        self._done = False
        self.eval_count = 0
        self.progress = []

    @property
    def n_beams(self) -> int:
        return len(self._beam_keys)

    @property
    def baseline(self) -> dict:
        """Window-mean KPIs of the default layout; None before reset."""
        return dict(self._baseline) if self._baseline is not None else None

    @property
    def state_dim(self) -> int:
        return 5 * self.n_beams + DENSITY_BINS * DENSITY_BINS + 5

    def _density(self, positions: np.ndarray) -> np.ndarray:
        g = self.scenario.grid
        hist = np.zeros(DENSITY_BINS * DENSITY_BINS)
        n = len(positions)
        if n == 0:
            return hist
        ix = np.clip(((positions[:, 0] - g.origin_x_m) / g.width_m * DENSITY_BINS).astype(int), 0, DENSITY_BINS - 1)
        iy = np.clip(((positions[:, 1] - g.origin_y_m) / g.height_m * DENSITY_BINS).astype(int), 0, DENSITY_BINS - 1)
        np.add.at(hist, iy * DENSITY_BINS + ix, 1.0)
        return hist / n

    def _state_vector(self, configs: list, positions: np.ndarray, kpis: dict) -> np.ndarray:
        az_lo, az_hi = AZIMUTH_OFFSET_RANGE
        tilt_lo, tilt_hi = TILT_RANGE
        per_beam = []
        for b in configs:
            per_beam.extend(
                [
                    H_BEAMWIDTHS.index(b.h_beamwidth_deg) / (len(H_BEAMWIDTHS) - 1),
                    V_BEAMWIDTHS.index(b.v_beamwidth_deg) / (len(V_BEAMWIDTHS) - 1),
                    (b.azimuth_offset_deg - az_lo) / (az_hi - az_lo),
                    (b.tilt_deg - tilt_lo) / (tilt_hi - tilt_lo),
                    1.0 if b.active else 0.0,
                ]
            )
        kpi_part = [
            _norm(kpis["coverage_pct"], (0.0, 100.0)),
            _norm(kpis["avg_rsrp_dbm"], RSRP_SPAN_DBM),
            _norm(kpis["avg_sinr_db"], SINR_SPAN_DB),
            _norm(kpis["dl_mbps"], DL_SPAN_MBPS),
            _norm(kpis["ul_mbps"], UL_SPAN_MBPS),
        ]
        return np.concatenate([per_beam, self._density(positions), kpi_part])

    def _run_window(self, configs: list):
        overrides = [
            BeamOverride(site_id, beam_id, cfg)
            for (site_id, beam_id), cfg in zip(self._beam_keys, configs)
        ]
        result = run_episode(
            SimConfig(
                scenario=self.scenario,
                overrides=overrides,
                episode_ticks=self.eval_window_ticks,
                seed=self._seed,
                record_payloads=False,
            )
        )
        return result.summary, result.final_positions, result.reports[-1]

    def reset(self, seed: int = 0) -> np.ndarray:
        """Run the default layout as the zero-reward baseline; clears the progress log."""
        self._seed = seed
        self._configs = list(self.default_configs)
        kpis, positions, _ = self._run_window(self._configs)
        self._baseline = kpis
        self._state = self._state_vector(self._configs, positions, kpis)
        self._step_count = 0
        self._done = False
        self.eval_count = 0
        self.progress = []
        return self._state

    def evaluate_configs(self, configs: list):
        """Reward one full beam layout under common random numbers.

        Bookkeeping only (no episode state change); used by the optimizers.
        """
        if self._baseline is None:
            raise NotReset("call reset() before evaluating")
        kpis, _, _ = self._run_window(configs)
        reward = compute_reward(kpis, self._baseline, self.weights)
        self.eval_count += 1
        self.progress.append(ProgressRow(eval_idx=self.eval_count, reward=reward, kpis=kpis))
        return reward, kpis

    def step(self, action: ActionSpec) -> EnvTransition:
        if self._baseline is None:
            raise NotReset("call reset() before step")
        if self._done:
            raise EpisodeDone("episode step budget exhausted")
        prev_state = self._state
        new_configs, clamped = action.apply(self._configs)
        kpis, positions, last_report = self._run_window(new_configs)
        reward = compute_reward(kpis, self._baseline, self.weights)
        self.eval_count += 1
        self.progress.append(ProgressRow(eval_idx=self.eval_count, reward=reward, kpis=kpis))
        self._configs = new_configs
        self._state = self._state_vector(new_configs, positions, kpis)
        self._step_count += 1
        self._done = self._step_count >= self.episode_steps
        return EnvTransition(
            state=prev_state,
            action=action,
            reward=reward,
            next_state=self._state,
            done=self._done,
            info={"kpis": kpis, "clamped": clamped, "report": last_report},
        )


# ---------------------------------------------------------------------------
# baseline optimizers


@dataclass
class OptimizeResult:
    best_reward: float
    best_configs: list
    best_overrides: list
    rewards: list  # accepted (hill climb) or best-ever per iteration (CEM)
    progress: list
    evaluations: int


def _overrides_for(env: AntennaEnv, configs: list) -> list:
    return [
        BeamOverride(site_id, beam_id, cfg)
        for (site_id, beam_id), cfg in zip(env._beam_keys, configs)
    ]


def _hill_moves(n_beams: int):
    moves = []
    for b in range(n_beams):
        for param, deltas in (
            ("h", (-1, 1)),
            ("v", (-1, 1)),
            ("az", (-2, -1, 1, 2)),
            ("tilt", (-2, -1, 1, 2)),
            ("active", (0,)),
        ):
            for d in deltas:
                moves.append((b, param, d))
    return moves


def _apply_move(configs: list, move):
    b, param, d = move
    cfg = configs[b]
    az_lo, az_hi = AZIMUTH_OFFSET_RANGE
    tilt_lo, tilt_hi = TILT_RANGE
    if param == "h":
        i = H_BEAMWIDTHS.index(cfg.h_beamwidth_deg) + d
        if not 0 <= i < len(H_BEAMWIDTHS):
            return None
        new = replace(cfg, h_beamwidth_deg=float(H_BEAMWIDTHS[i]))
    elif param == "v":
        i = V_BEAMWIDTHS.index(cfg.v_beamwidth_deg) + d
        if not 0 <= i < len(V_BEAMWIDTHS):
            return None
        new = replace(cfg, v_beamwidth_deg=float(V_BEAMWIDTHS[i]))
    elif param == "az":
        az = cfg.azimuth_offset_deg + d
        if not az_lo <= az <= az_hi:
            return None
        new = replace(cfg, azimuth_offset_deg=az)
    elif param == "tilt":
        tilt = cfg.tilt_deg + d
        if not tilt_lo <= tilt <= tilt_hi:
            return None
        new = replace(cfg, tilt_deg=tilt)
    else:
        new = replace(cfg, active=not cfg.active)
    out = list(configs)
    out[b] = new
    return out


def hill_climb(env: AntennaEnv, budget: int, seed: int = 0) -> OptimizeResult:
    """Greedy coordinate search over unit deltas; accepts strict improvements."""
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    env.reset(seed)
    rng = np.random.default_rng([seed, 0x41C])
    cur = list(env.default_configs)
    cur_reward = 0.0  # no-op equals baseline exactly under common random numbers
    rewards = [0.0]
    moves = _hill_moves(env.n_beams)
    evals = 0
    while evals < budget:
        order = rng.permutation(len(moves))
        improved = False
        for mi in order:
            if evals >= budget:
                break
            cand = _apply_move(cur, moves[mi])
            if cand is None:
                continue
            r, _ = env.evaluate_configs(cand)
            evals += 1
            if r > cur_reward:
                cur, cur_reward = cand, r
                rewards.append(r)
                improved = True
        if not improved:
            break  # full pass with no acceptance: rescanning would repeat exactly
    return OptimizeResult(
        best_reward=cur_reward,
        best_configs=cur,
        best_overrides=_overrides_for(env, cur),
        rewards=rewards,
        progress=list(env.progress),
        evaluations=evals,
    )


@dataclass
class _BeamDist:
    h_probs: np.ndarray
    v_probs: np.ndarray
    az_mu: float
    az_sigma: float
    tilt_mu: float
    tilt_sigma: float
    p_active: float


def cross_entropy(
    env: AntennaEnv,
    population: int = 20,
    elite_frac: float = 0.25,
    iters: int = 9,
    seed: int = 0,
) -> OptimizeResult:
    """Sample full beam layouts, refit the sampler on elites each iteration.

    Evaluates population * (iters + 1) layouts; iteration budgets with all
    rewards equal keep the previous distribution (degenerate elites).
    """
    if population < 4:
        raise ValueError(f"population must be >= 4, got {population}")
    if not 0 < elite_frac <= 0.5:
        raise ValueError(f"elite_frac must be in (0, 0.5], got {elite_frac}")
    if iters < 0:
        raise ValueError(f"iters must be >= 0, got {iters}")
    env.reset(seed)
    rng = np.random.default_rng([seed, 0xCE])
    az_lo, az_hi = AZIMUTH_OFFSET_RANGE
    tilt_lo, tilt_hi = TILT_RANGE
    dists = [
        _BeamDist(
            h_probs=np.full(len(H_BEAMWIDTHS), 1.0 / len(H_BEAMWIDTHS)),
            v_probs=np.full(len(V_BEAMWIDTHS), 1.0 / len(V_BEAMWIDTHS)),
            az_mu=b.azimuth_offset_deg,
            az_sigma=20.0,
            tilt_mu=b.tilt_deg,
            tilt_sigma=3.0,
            p_active=0.9,
        )
        for b in env.default_configs
    ]

    def sample():
        cfgs = []
        for dist, base in zip(dists, env.default_configs):
            cfgs.append(
                replace(
                    base,
                    h_beamwidth_deg=float(H_BEAMWIDTHS[rng.choice(len(H_BEAMWIDTHS), p=dist.h_probs)]),
                    v_beamwidth_deg=float(V_BEAMWIDTHS[rng.choice(len(V_BEAMWIDTHS), p=dist.v_probs)]),
                    azimuth_offset_deg=float(np.clip(rng.normal(dist.az_mu, dist.az_sigma), az_lo, az_hi)),
                    tilt_deg=float(np.clip(rng.normal(dist.tilt_mu, dist.tilt_sigma), tilt_lo, tilt_hi)),
                    active=bool(rng.random() < dist.p_active),
                )
            )
        return cfgs

    best_reward = 0.0  # baseline layout scores exactly zero by construction
    best_cfgs = list(env.default_configs)
    best_trace = []
    evals = 0
    for it in range(iters + 1):
        cands = [sample() for _ in range(population)]
        rewards = []
        for c in cands:
            r, _ = env.evaluate_configs(c)
            rewards.append(r)
            evals += 1
        gen_best = int(np.argmax(rewards))
        if rewards[gen_best] > best_reward:
            best_reward = rewards[gen_best]
            best_cfgs = cands[gen_best]
        best_trace.append(best_reward)
        if it == iters:
            break
        if math.isclose(max(rewards), min(rewards)):
            continue  # degenerate elites: no signal to refit on
        elite_n = max(1, math.ceil(population * elite_frac))
        elite_idx = np.argsort(rewards)[::-1][:elite_n]
        for bi, dist in enumerate(dists):
            hs = np.array([H_BEAMWIDTHS.index(cands[i][bi].h_beamwidth_deg) for i in elite_idx])
            vs = np.array([V_BEAMWIDTHS.index(cands[i][bi].v_beamwidth_deg) for i in elite_idx])
            h_counts = np.bincount(hs, minlength=len(H_BEAMWIDTHS)) + 0.25
            v_counts = np.bincount(vs, minlength=len(V_BEAMWIDTHS)) + 0.25
            dist.h_probs = h_counts / h_counts.sum()
            dist.v_probs = v_counts / v_counts.sum()
            azs = np.array([cands[i][bi].azimuth_offset_deg for i in elite_idx])
            tilts = np.array([cands[i][bi].tilt_deg for i in elite_idx])
            dist.az_mu = float(azs.mean())
            dist.az_sigma = float(max(azs.std(), 1.0))
            dist.tilt_mu = float(tilts.mean())
            dist.tilt_sigma = float(max(tilts.std(), 0.5))
            dist.p_active = float(
                np.clip(np.mean([cands[i][bi].active for i in elite_idx]), 0.05, 0.95)
            )
    return OptimizeResult(
        best_reward=best_reward,
        best_configs=best_cfgs,
        best_overrides=_overrides_for(env, best_cfgs),
        rewards=best_trace,
        progress=list(env.progress),
        evaluations=evals,
    )
