"""Generative user behavior: trajectories and traffic.

Pipeline: ingest raw mobility/packet CSVs, preprocess fixes into tokenized
trajectory sequences, train a sequence VAE (categorical location head,
exponential stay-duration head), generate new sequences from the prior,
post-process them onto the map as 1 Hz waypoints, and score generation
quality with KL/JS histogram divergences. Traffic side: session clustering
per app, per-user preference vectors, and Poisson session generation.
"""

from __future__ import annotations

import csv
import heapq
import math
import zlib
from dataclasses import dataclass

import numpy as np

from . import neural
from .neural import (
    GaussianParams,
    Tensor,
    adam_init,
    adam_step,
    collect_grads,
    concat_rows,
    elbo_loss,
    init_mlp,
    init_recurrent,
    mlp_forward,
    recurrent_step,
    reparameterize,
    zero_grads,
)
from .scenario import GeoGrid, RoadGraph, cell_center, cell_index

EARTH_RADIUS_M = 6371000.0
SPEED_GATE_MPS = 50.0
INTERP_GAP_MAX_S = 600.0
INTERP_STEP_S = 60.0
MIN_STAY_S = 1.0
HOURS = 24
WALK_SPEED_MPS = 1.5
ROAD_SNAP_M = 30.0
STAY_BINS_S = (60.0, 300.0, 900.0, 3600.0)  # <1min, 1-5, 5-15, 15-60, >60min


class BehaviorError(Exception):
    pass


class SchemaMismatch(BehaviorError):
    def __init__(self, column):
        super().__init__(f"unexpected CSV schema, offending column(s): {column}")
        self.column = column


class BadRow(BehaviorError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"bad row at line {line}: {reason}")
        self.line = line
        self.reason = reason


class EmptyInput(BehaviorError):
    pass


class TooFewSequences(BehaviorError):
    pass


class Diverged(BehaviorError):
    pass


class InvalidCheckpoint(BehaviorError):
    pass


class TooFewPoints(BehaviorError):
    pass


class MismatchedApps(BehaviorError):
    pass


# ---------------------------------------------------------------------------
# data objects


@dataclass
class MobilityFix:
    user_id: str
    timestamp_s: float
    x_m: float
    y_m: float
    altitude_m: float | None = None


@dataclass
class TrajStep:
    token: int
    bucket: int  # hour-of-day of arrival
    stay_s: float
    arrival_s: float  # exact arrival second; keeps re-expansion lossless


@dataclass
class TrajectorySequence:
    user_id: str
    steps: list  # of TrajStep


@dataclass
class PacketRecord:
    user_id: str
    timestamp_s: float
    app_label: str
    packet_len_bytes: int
    direction: str  # "UL" | "DL"


@dataclass
class AppClusters:
    """Per-app session clusters in (mean packet length, mean log gap) space."""

    app_label: str
    k: int
    centers: np.ndarray  # (k, 2), original feature units
    weights: np.ndarray  # (k,), sums to 1
    dl_bps: np.ndarray  # (k,)
    ul_bps: np.ndarray  # (k,)
    duration_s: np.ndarray  # (k,)


@dataclass
class AppActionClusters:
    apps: list  # of AppClusters, index = app index

    @property
    def n_apps(self) -> int:
        return len(self.apps)

    @property
    def labels(self) -> list:
        return [a.app_label for a in self.apps]


@dataclass
class PreferenceVector:
    user_id: str
    app_probs: np.ndarray


@dataclass
class ServiceSession:
    user_id: str
    app_index: int
    action_cluster: int
    start_s: float
    duration_s: float
    demand_bps: float
    demand_bps_ul: float


@dataclass
class GenerationReport:
    kl_location: float
    kl_stay_duration: float
    js_location: float


# ---------------------------------------------------------------------------
# ingest

MOBILITY_HEADER = ["user_id", "timestamp_s", "lat", "lon", "alt_m"]
PACKET_HEADER = ["user_id", "timestamp_s", "app_label", "packet_len_bytes", "direction"]
CELL_LOAD_HEADER = ["cell_id", "interval_start_s", "traffic_mb", "user_count"]


def _check_header(got, want) -> None:
    if list(got or []) != want:
        extra = set(got or []) ^ set(want)
        raise SchemaMismatch(sorted(extra) or list(got or []))


def project_equirectangular(lat, lon, lat0: float, lon0: float):
    """Planar meters east/north of (lat0, lon0)."""
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return x, y


def ingest_mobility_csv(path, origin: tuple[float, float] | None = None) -> list:
    """Parse an MDT-like CSV into planar fixes.

    origin is the (lat0, lon0) projection reference; defaults to the mean of
    the file's coordinates so local data lands near (0, 0).
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        _check_header(header, MOBILITY_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MOBILITY_HEADER):
                raise BadRow(lineno, f"expected {len(MOBILITY_HEADER)} fields, got {len(row)}")
            uid, ts, lat, lon, alt = row
            try:
                ts_f = float(ts)
                lat_f = float(lat)
                lon_f = float(lon)
                alt_f = float(alt) if alt != "" else None
            except ValueError as e:
                raise BadRow(lineno, str(e)) from e
            if not -90.0 <= lat_f <= 90.0:
                raise BadRow(lineno, f"latitude {lat_f} out of range")
            if not -180.0 <= lon_f <= 180.0:
                raise BadRow(lineno, f"longitude {lon_f} out of range")
            rows.append((uid, ts_f, lat_f, lon_f, alt_f, lineno))
    if not rows:
        return []
    if origin is None:
        lat0 = sum(r[2] for r in rows) / len(rows)
        lon0 = sum(r[3] for r in rows) / len(rows)
    else:
        lat0, lon0 = origin
    fixes = []
    for uid, ts_f, lat_f, lon_f, alt_f, _ in rows:
        x, y = project_equirectangular(lat_f, lon_f, lat0, lon0)
        fixes.append(MobilityFix(user_id=uid, timestamp_s=ts_f, x_m=x, y_m=y, altitude_m=alt_f))
    return fixes


def export_mobility_csv(fixes: list, path, origin: tuple[float, float] = (0.0, 0.0)) -> None:
    """Inverse-project planar fixes back to the ingest CSV schema."""
    lat0, lon0 = origin
    cos0 = math.cos(math.radians(lat0))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(MOBILITY_HEADER)
        for fx in fixes:
            lat = lat0 + math.degrees(fx.y_m / EARTH_RADIUS_M)
            lon = lon0 + math.degrees(fx.x_m / (EARTH_RADIUS_M * cos0))
            alt = "" if fx.altitude_m is None else f"{fx.altitude_m:.2f}"
            w.writerow([fx.user_id, f"{fx.timestamp_s:.1f}", f"{lat:.8f}", f"{lon:.8f}", alt])


def ingest_packet_csv(path) -> list:
    packets = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        _check_header(header, PACKET_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PACKET_HEADER):
                raise BadRow(lineno, f"expected {len(PACKET_HEADER)} fields, got {len(row)}")
            uid, ts, app, plen, direction = row
            try:
                ts_f = float(ts)
                plen_i = int(plen)
            except ValueError as e:
                raise BadRow(lineno, str(e)) from e
            if not 1 <= plen_i <= 65535:
                raise BadRow(lineno, f"packet_len_bytes {plen_i} out of [1, 65535]")
            if direction not in ("UL", "DL"):
                raise BadRow(lineno, f"direction {direction!r} not UL/DL")
            packets.append(PacketRecord(uid, ts_f, app, plen_i, direction))
    return packets


def ingest_cell_load_csv(path) -> list:
    """PM-like per-cell load rows; ingest-only, for sanity reporting."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        _check_header(header, CELL_LOAD_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append((row[0], float(row[1]), float(row[2]), int(row[3])))
            except (ValueError, IndexError) as e:
                raise BadRow(lineno, str(e)) from e
    return out


SESSION_HEADER = [
    "user_id", "app_index", "action_cluster", "start_s", "duration_s",
    "demand_dl_bps", "demand_ul_bps",
]


def sessions_to_csv_lines(sessions: list) -> list:
    out = [",".join(SESSION_HEADER)]
    for s in sessions:
        out.append(
            f"{s.user_id},{s.app_index},{s.action_cluster},{s.start_s:.3f},"
            f"{s.duration_s:.3f},{s.demand_bps:.3f},{s.demand_bps_ul:.3f}"
        )
    return out


def ingest_session_csv(path) -> list:
    sessions = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        _check_header(header, SESSION_HEADER)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SESSION_HEADER):
                raise BadRow(lineno, f"expected {len(SESSION_HEADER)} fields, got {len(row)}")
            try:
                sessions.append(
                    ServiceSession(
                        user_id=row[0],
                        app_index=int(row[1]),
                        action_cluster=int(row[2]),
                        start_s=float(row[3]),
                        duration_s=float(row[4]),
                        demand_bps=float(row[5]),
                        demand_bps_ul=float(row[6]),
                    )
                )
            except ValueError as e:
                raise BadRow(lineno, str(e)) from e
    return sessions


# ---------------------------------------------------------------------------
# preprocessing


def _clamp_to_grid(grid: GeoGrid, x: float, y: float):
    x = min(max(x, grid.origin_x_m), grid.origin_x_m + grid.width_m)
    y = min(max(y, grid.origin_y_m), grid.origin_y_m + grid.height_m)
    return x, y


def preprocess(fixes: list, grid: GeoGrid) -> list:
    """Fixes -> tokenized per-user trajectory sequences.

    Per user: time sort, drop fixes implying > 50 m/s from the last kept fix,
    linearly fill gaps shorter than 600 s at 60 s cadence, clamp positions to
    the grid, then collapse runs of fixes in one grid cell into a single step
    whose stay spans the run (minimum 1 s for single-fix visits).
    """
    if not fixes:
        raise EmptyInput("no fixes")
    by_user: dict = {}
    for fx in fixes:
        by_user.setdefault(fx.user_id, []).append(fx)
    sequences = []
    for uid in sorted(by_user):
        pts = sorted(by_user[uid], key=lambda f: f.timestamp_s)
        kept = []
        for fx in pts:
            if kept:
                dt = fx.timestamp_s - kept[-1][0]
                dist = math.hypot(fx.x_m - kept[-1][1], fx.y_m - kept[-1][2])
                if dist > SPEED_GATE_MPS * max(dt, 1e-9):
                    continue
            kept.append((fx.timestamp_s, fx.x_m, fx.y_m))
        if not kept:
            continue
        filled = [kept[0]]
        for (t0, x0, y0), (t1, x1, y1) in zip(kept, kept[1:]):
            dt = t1 - t0
            if INTERP_STEP_S < dt < INTERP_GAP_MAX_S:
                k = 1
                while t0 + k * INTERP_STEP_S < t1:
                    f = (k * INTERP_STEP_S) / dt
                    filled.append((t0 + k * INTERP_STEP_S, x0 + f * (x1 - x0), y0 + f * (y1 - y0)))
                    k += 1
            filled.append((t1, x1, y1))
        steps = []
        run_token = None
        run_start = 0.0
        run_end = 0.0
        for t, x, y in filled:
            x, y = _clamp_to_grid(grid, x, y)
            token = cell_index(grid, (x, y))
            if token == run_token:
                run_end = t
                continue
            if run_token is not None:
                steps.append(_make_step(run_token, run_start, run_end))
            run_token, run_start, run_end = token, t, t
        if run_token is not None:
            steps.append(_make_step(run_token, run_start, run_end))
        sequences.append(TrajectorySequence(user_id=uid, steps=steps))
    return sequences


def _make_step(token: int, start: float, end: float) -> TrajStep:
    return TrajStep(
        token=token,
        bucket=int((start // 3600.0) % HOURS),
        stay_s=max(end - start, MIN_STAY_S),
        arrival_s=start,
    )


def steps_to_fixes(seq: TrajectorySequence, grid: GeoGrid) -> list:
    """Re-expand a sequence into fixes at cell centers (inverse-ish of preprocess)."""
    fixes = []
    for st in seq.steps:
        x, y = cell_center(grid, st.token)
        fixes.append(MobilityFix(seq.user_id, st.arrival_s, x, y))
        if st.stay_s > MIN_STAY_S:
            fixes.append(MobilityFix(seq.user_id, st.arrival_s + st.stay_s, x, y))
    return fixes


# ---------------------------------------------------------------------------
# trajectory VAE


@dataclass
class VaeHyperparams:
    latent_dim: int = 8
    hidden_dim: int = 32
    loc_embed_dim: int = 16
    time_embed_dim: int = 4
    user_embed_dim: int = 4
    epochs: int = 60
    lr: float = 1e-3

    def validate(self):
        for name in ("latent_dim", "hidden_dim", "loc_embed_dim", "time_embed_dim", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


def _stay_feature(stay_s: np.ndarray) -> np.ndarray:
    # compresses seconds into O(1) range; 1 day ~ 1.14
    return np.log1p(np.asarray(stay_s, dtype=float)) / 10.0


class TrajectoryVAE:
    """Sequence VAE over (location token, hour bucket, stay duration) steps."""

    def __init__(self, vocab: int, n_users: int, hp: VaeHyperparams, seed: int):
        hp.validate()
        self.vocab = vocab
        self.n_users = n_users
        self.hp = hp
        self.seed = seed
        rng = np.random.default_rng([seed, 0xA0E])
        s = neural.INIT_SCALE

        def emb(n, d):
            return Tensor(rng.uniform(-s, s, size=(n, d)), requires_grad=True)

        in_enc = hp.user_embed_dim + hp.loc_embed_dim + hp.time_embed_dim + 1
        in_dec = hp.loc_embed_dim + hp.time_embed_dim + 1 + hp.latent_dim
        self.params = {}
        self.emb_user = emb(max(n_users, 1), hp.user_embed_dim)
        self.emb_loc_enc = emb(vocab, hp.loc_embed_dim)
        self.emb_time_enc = emb(HOURS, hp.time_embed_dim)
        self.emb_loc_dec = emb(vocab + 1, hp.loc_embed_dim)  # +1: start token
        self.emb_time_dec = emb(HOURS, hp.time_embed_dim)
        self.enc_cell = init_recurrent(rng, in_enc, hp.hidden_dim)
        self.enc_head = init_mlp(rng, [hp.hidden_dim, 2 * hp.latent_dim])
        self.dec_init = init_mlp(rng, [hp.latent_dim, hp.hidden_dim])
        self.dec_cell = init_recurrent(rng, in_dec, hp.hidden_dim)
        self.loc_head = init_mlp(rng, [hp.hidden_dim, vocab])
        self.rate_head = init_mlp(rng, [hp.hidden_dim, 1])
        self.params.update(
            {
                "emb.user": self.emb_user,
                "emb.loc_enc": self.emb_loc_enc,
                "emb.time_enc": self.emb_time_enc,
                "emb.loc_dec": self.emb_loc_dec,
                "emb.time_dec": self.emb_time_dec,
            }
        )
        self.params.update(self.enc_cell.named("enc_cell"))
        self.params.update(self.enc_head.named("enc_head"))
        self.params.update(self.dec_init.named("dec_init"))
        self.params.update(self.dec_cell.named("dec_cell"))
        self.params.update(self.loc_head.named("loc_head"))
        self.params.update(self.rate_head.named("rate_head"))

    # -- batching

    @staticmethod
    def batch(sequences: list, vocab: int):
        b = len(sequences)
        t_max = max(len(s.steps) for s in sequences)
        if t_max == 0:
            raise EmptyInput("all sequences are empty")
        tokens = np.zeros((b, t_max), dtype=int)
        buckets = np.zeros((b, t_max), dtype=int)
        stays = np.zeros((b, t_max))
        mask = np.zeros((b, t_max))
        users = np.arange(b)
        for i, s in enumerate(sequences):
            for t, st in enumerate(s.steps):
                if not 0 <= st.token < vocab:
                    raise ValueError(f"token {st.token} outside vocabulary {vocab}")
                tokens[i, t] = st.token
                buckets[i, t] = st.bucket
                stays[i, t] = st.stay_s
                mask[i, t] = 1.0
        return tokens, buckets, stays, mask, users

    @staticmethod
    def _onehot(idx: np.ndarray, n: int) -> np.ndarray:
        out = np.zeros((len(idx), n))
        out[np.arange(len(idx)), idx] = 1.0
        return out

    def _cols(self, t: Tensor, a: int, b: int) -> Tensor:
        m = np.zeros((t.data.shape[1], b - a))
        m[np.arange(a, b), np.arange(b - a)] = 1.0
        return t @ Tensor(m)

    def loss(self, batch, eps: np.ndarray):
        """Masked full-batch ELBO, mean per sequence, plus the term breakdown."""
        tokens, buckets, stays, mask, users = batch
        b, t_max = tokens.shape
        hp = self.hp
        stay_feat = _stay_feature(stays)
        u_emb = Tensor(self._onehot(users % max(self.n_users, 1), max(self.n_users, 1))) @ self.emb_user
        h = Tensor(np.zeros((b, hp.hidden_dim)))
        for t in range(t_max):
            l_emb = Tensor(self._onehot(tokens[:, t], self.vocab)) @ self.emb_loc_enc
            t_emb = Tensor(self._onehot(buckets[:, t], HOURS)) @ self.emb_time_enc
            x = concat_rows([u_emb, l_emb, t_emb, Tensor(stay_feat[:, t : t + 1])])
            h_new = recurrent_step(self.enc_cell, x, h)
            m = Tensor(mask[:, t : t + 1])
            h = m * h_new + (1.0 - m) * h
        stats = mlp_forward(self.enc_head, h)
        g = GaussianParams(
            mu=self._cols(stats, 0, hp.latent_dim),
            log_sigma=self._cols(stats, hp.latent_dim, 2 * hp.latent_dim),
        )
        z = reparameterize(g, Tensor(eps)).z

        hd = mlp_forward(self.dec_init, z).tanh()
        prev_tok = np.full(b, self.vocab)  # start token
        prev_stay = np.zeros(b)
        loc_terms = []
        dur_terms = []
        for t in range(t_max):
            l_emb = Tensor(self._onehot(prev_tok, self.vocab + 1)) @ self.emb_loc_dec
            t_emb = Tensor(self._onehot(buckets[:, t], HOURS)) @ self.emb_time_dec
            x = concat_rows([l_emb, t_emb, Tensor(_stay_feature(prev_stay)[:, None]), z])
            hd = recurrent_step(self.dec_cell, x, hd)
            m = Tensor(mask[:, t])
            logits = mlp_forward(self.loc_head, hd)
            lp = logits.log_softmax().row_pick(tokens[:, t])
            loc_terms.append(-((lp * m).sum()))
            rate = mlp_forward(self.rate_head, hd).softplus() + 1e-6
            d = Tensor(stays[:, t : t + 1])
            dur_nll_t = rate * d - rate.log()
            dur_terms.append((dur_nll_t * Tensor(mask[:, t : t + 1])).sum())
            prev_tok = tokens[:, t]
            prev_stay = stays[:, t]
        total_loc = loc_terms[0]
        for term in loc_terms[1:]:
            total_loc = total_loc + term
        total_dur = dur_terms[0]
        for term in dur_terms[1:]:
            total_dur = total_dur + term
        loss, parts = elbo_loss(total_dur, total_loc, g)
        return loss * (1.0 / b), parts

    # -- plain-array decoder used for sampling

    def _np_mlp(self, params, x):
        last = len(params.layers) - 1
        for i, (w, b) in enumerate(params.layers):
            x = x @ w.data + b.data
            if i != last:
                x = np.tanh(x)
        return x

    def _np_cell(self, cell, x, h):
        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        r = sig(x @ cell.w_r.data + h @ cell.u_r.data + cell.b_r.data)
        u = sig(x @ cell.w_u.data + h @ cell.u_u.data + cell.b_u.data)
        c = np.tanh(x @ cell.w_c.data + (r * h) @ cell.u_c.data + cell.b_c.data)
        return u * h + (1.0 - u) * c

    def sample(self, n_users: int, steps: int, seed: int, start_bucket: int = 8) -> list:
        """Autoregressive generation from the prior; deterministic per seed."""
        if n_users <= 0:
            return []
        rng = np.random.default_rng([seed, 0x6E4])
        hp = self.hp
        z = rng.standard_normal((n_users, hp.latent_dim))
        h = np.tanh(self._np_mlp(self.dec_init, z))
        prev_tok = np.full(n_users, self.vocab)
        prev_stay = np.zeros(n_users)
        elapsed = np.zeros(n_users)
        out_steps = [[] for _ in range(n_users)]
        for _ in range(steps):
            bucket = ((start_bucket + (elapsed // 3600.0).astype(int)) % HOURS).astype(int)
            x = np.concatenate(
                [
                    self.emb_loc_dec.data[prev_tok],
                    self.emb_time_dec.data[bucket],
                    _stay_feature(prev_stay)[:, None],
                    z,
                ],
                axis=1,
            )
            h = self._np_cell(self.dec_cell, x, h)
            logits = self._np_mlp(self.loc_head, h)
            logits = logits - logits.max(axis=1, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            draw = rng.random((n_users, 1))
            tok = (probs.cumsum(axis=1) < draw).sum(axis=1)
            tok = np.minimum(tok, self.vocab - 1)
            raw_rate = self._np_mlp(self.rate_head, h)[:, 0]
            rate = np.logaddexp(0.0, raw_rate) + 1e-6
            stay = rng.exponential(1.0 / rate)
            stay = np.maximum(stay, 1e-6)
            for i in range(n_users):
                out_steps[i].append(
                    TrajStep(
                        token=int(tok[i]),
                        bucket=int(bucket[i]),
                        stay_s=float(stay[i]),
                        arrival_s=float(elapsed[i] + start_bucket * 3600.0),
                    )
                )
            elapsed = elapsed + stay
            prev_tok = tok
            prev_stay = stay
        return [
            TrajectorySequence(user_id=f"gen{i}", steps=out_steps[i]) for i in range(n_users)
        ]

    # -- persistence

    def save(self, path) -> None:
        meta = {
            "kind": "trajectory_vae",
            "vocab": self.vocab,
            "n_users": self.n_users,
            "seed": self.seed,
            "hp": {
                "latent_dim": self.hp.latent_dim,
                "hidden_dim": self.hp.hidden_dim,
                "loc_embed_dim": self.hp.loc_embed_dim,
                "time_embed_dim": self.hp.time_embed_dim,
                "user_embed_dim": self.hp.user_embed_dim,
                "epochs": self.hp.epochs,
                "lr": self.hp.lr,
            },
        }
        neural.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "TrajectoryVAE":
        try:
            tensors, meta = neural.load_checkpoint(path)
        except neural.BadCheckpoint as e:
            raise InvalidCheckpoint(str(e)) from e
        if meta.get("kind") != "trajectory_vae":
            raise InvalidCheckpoint(f"not a trajectory model: {meta.get('kind')!r}")
        hp = VaeHyperparams(**meta["hp"])
        model = cls(meta["vocab"], meta["n_users"], hp, meta["seed"])
        for k, tensor in model.params.items():
            if k not in tensors:
                raise InvalidCheckpoint(f"missing tensor {k}")
            if tensors[k].shape != tensor.data.shape:
                raise InvalidCheckpoint(f"shape mismatch for {k}")
            tensor.data = tensors[k].copy()
        return model


def train_trajectory_vae(sequences: list, hp: VaeHyperparams | None = None, seed: int = 0, vocab: int | None = None):
    """Train on tokenized sequences; returns (model, per-epoch loss trace)."""
    if len(sequences) < 2:
        raise TooFewSequences(f"need >= 2 sequences, got {len(sequences)}")
    hp = hp or VaeHyperparams()
    if vocab is None:
        vocab = max(st.token for s in sequences for st in s.steps) + 1
    model = TrajectoryVAE(vocab, len(sequences), hp, seed)
    batch = TrajectoryVAE.batch(sequences, vocab)
    state = adam_init(model.params)
    trace = []
    for epoch in range(hp.epochs):
        eps = np.random.default_rng([seed, 0xE5, epoch]).standard_normal(
            (len(sequences), hp.latent_dim)
        )
        zero_grads(model.params)
        try:
            loss, _ = model.loss(batch, eps)
        except neural.NonFinite as e:
            raise Diverged(f"epoch {epoch}: {e}") from e
        loss.backward()
        adam_step(model.params, collect_grads(model.params), state, hp.lr)
        trace.append(loss.item())
        if not math.isfinite(trace[-1]):
            raise Diverged(f"epoch {epoch}: loss {trace[-1]}")
    return model, trace


def generate_trajectories(model: TrajectoryVAE, n_users: int, steps: int, seed: int, time_of_day_start: int = 8) -> list:
    if n_users == 0:
        return []
    if not 0 <= time_of_day_start < HOURS:
        raise ValueError(f"time_of_day_start {time_of_day_start} outside [0, {HOURS})")
    return model.sample(n_users, steps, seed, start_bucket=time_of_day_start)


# ---------------------------------------------------------------------------
# postprocessing onto the map


def _nearest_road_node(roads: RoadGraph, x: float, y: float):
    best, best_d = None, float("inf")
    for i, (nx, ny) in enumerate(roads.nodes):
        d = math.hypot(nx - x, ny - y)
        if d < best_d:
            best, best_d = i, d
    return best, best_d


def _road_shortest_path(roads: RoadGraph, a: int, b: int):
    """Dijkstra over the undirected road graph; returns node list or None."""
    adj: dict = {}
    for u, v, w in roads.edges:
        adj.setdefault(u, []).append((v, w))
        adj.setdefault(v, []).append((u, w))
    dist = {a: 0.0}
    prev: dict = {}
    heap = [(0.0, a)]
    seen = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in seen:
            continue
        seen.add(u)
        if u == b:
            break
        for v, w in adj.get(u, []):
            nd = d + w
            if nd < dist.get(v, float("inf")):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if b not in seen:
        return None
    path = [b]
    while path[-1] != a:
        path.append(prev[path[-1]])
    return path[::-1]


def _polyline_point(points: list, frac: float):
    """Point at a fraction of total length along a polyline."""
    lengths = [math.dist(p, q) for p, q in zip(points, points[1:])]
    total = sum(lengths)
    if total == 0:
        return points[0]
    target = frac * total
    acc = 0.0
    for (p, q), seg in zip(zip(points, points[1:]), lengths):
        if acc + seg >= target:
            f = (target - acc) / seg if seg > 0 else 0.0
            return (p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1]))
        acc += seg
    return points[-1]


def postprocess_trajectories(
    sequences: list,
    grid: GeoGrid,
    roads: RoadGraph | None = None,
    walk_speed_mps: float = WALK_SPEED_MPS,
) -> dict:
    """Sequences -> per-user 1 Hz waypoint lists [(t_s, x, y), ...].

    Each step holds its cell center for ceil(stay) samples; transitions are
    sampled at walk speed along the straight segment, or along the road
    shortest path when both endpoints snap to road nodes within 30 m. Any
    waypoint within 30 m of a road node is snapped to it.
    """
    out = {}
    for seq in sequences:
        t = 0.0
        if seq.steps:
            t = float(seq.steps[0].arrival_s)
        way = []
        prev_center = None
        for st in seq.steps:
            cx, cy = cell_center(grid, st.token)
            if prev_center is not None and (cx, cy) != prev_center:
                path_points = [prev_center, (cx, cy)]
                if roads is not None and roads.nodes:
                    na, da = _nearest_road_node(roads, *prev_center)
                    nb, db = _nearest_road_node(roads, cx, cy)
                    if da <= ROAD_SNAP_M and db <= ROAD_SNAP_M and na != nb:
                        node_path = _road_shortest_path(roads, na, nb)
                        if node_path:
                            path_points = [prev_center] + [roads.nodes[i] for i in node_path] + [(cx, cy)]
                seg_len = sum(math.dist(p, q) for p, q in zip(path_points, path_points[1:]))
                n_transit = max(int(math.ceil(seg_len / walk_speed_mps)), 1)
                for k in range(1, n_transit + 1):
                    x, y = _polyline_point(path_points, k / n_transit)
                    way.append((t, x, y))
                    t += 1.0
            hold = max(int(math.ceil(st.stay_s)), 1)
            for _ in range(hold):
                way.append((t, cx, cy))
                t += 1.0
            prev_center = (cx, cy)
        if roads is not None and roads.nodes:
            snapped = []
            for wt, x, y in way:
                ni, d = _nearest_road_node(roads, x, y)
                if d <= ROAD_SNAP_M:
                    x, y = roads.nodes[ni]
                snapped.append((wt, x, y))
            way = snapped
        out[seq.user_id] = way
    return out


def waypoints_to_csv(waypoints: dict) -> list:
    lines = ["user_id,t_s,x_m,y_m"]
    for uid in sorted(waypoints):
        for t, x, y in waypoints[uid]:
            lines.append(f"{uid},{t:.1f},{x:.3f},{y:.3f}")
    return lines


# ---------------------------------------------------------------------------
# generation quality


def _smoothed(counts: np.ndarray, epsilon: float) -> np.ndarray:
    c = np.asarray(counts, dtype=float) + epsilon
    return c / c.sum()


def kl_divergence(p_counts, q_counts, epsilon: float = 1e-9) -> float:
    p = _smoothed(p_counts, epsilon)
    q = _smoothed(q_counts, epsilon)
    return float(np.sum(p * np.log(p / q)))


def js_divergence(p_counts, q_counts, epsilon: float = 1e-9) -> float:
    p = _smoothed(p_counts, epsilon)
    q = _smoothed(q_counts, epsilon)
    m = 0.5 * (p + q)
    return float(0.5 * np.sum(p * np.log(p / m)) + 0.5 * np.sum(q * np.log(q / m)))


def _location_histogram(sequences: list, vocab: int) -> np.ndarray:
    h = np.zeros(vocab)
    for s in sequences:
        for st in s.steps:
            h[st.token] += 1.0
    return h


def _stay_histogram(sequences: list) -> np.ndarray:
    h = np.zeros(len(STAY_BINS_S) + 1)
    for s in sequences:
        for st in s.steps:
            h[int(np.searchsorted(STAY_BINS_S, st.stay_s, side="right"))] += 1.0
    return h


def evaluate_generation(real: list, generated: list, grid: GeoGrid, epsilon: float = 1e-9) -> GenerationReport:
    """Histogram KL/JS of generated sequences against real ones."""
    if not real or not generated:
        raise EmptyInput("need both real and generated sequences")
    vocab = grid.n_cells
    p_loc = _location_histogram(real, vocab)
    q_loc = _location_histogram(generated, vocab)
    return GenerationReport(
        kl_location=kl_divergence(p_loc, q_loc, epsilon),
        kl_stay_duration=kl_divergence(_stay_histogram(real), _stay_histogram(generated), epsilon),
        js_location=js_divergence(p_loc, q_loc, epsilon),
    )


# ---------------------------------------------------------------------------
# traffic: sessions, clustering, preferences

SESSION_GAP_S = 60.0


def _sessions_from_packets(packets: list):
    """Split per (user, app) packet streams into gap-delimited sessions.

    Returns per-app dicts: features (mean len, mean log gap), dl/ul byte
    rates and durations per session.
    """
    by_key: dict = {}
    for p in packets:
        by_key.setdefault((p.user_id, p.app_label), []).append(p)
    per_app: dict = {}
    for (uid, app), plist in sorted(by_key.items()):
        plist.sort(key=lambda p: p.timestamp_s)
        runs = [[plist[0]]]
        for p in plist[1:]:
            if p.timestamp_s - runs[-1][-1].timestamp_s > SESSION_GAP_S:
                runs.append([])
            runs[-1].append(p)
        for run in runs:
            lens = [p.packet_len_bytes for p in run]
            gaps = [b.timestamp_s - a.timestamp_s for a, b in zip(run, run[1:])]
            mean_log_gap = (
                float(np.mean([math.log(max(g, 1e-3)) for g in gaps])) if gaps else math.log(SESSION_GAP_S)
            )
            duration = max(run[-1].timestamp_s - run[0].timestamp_s, 1.0)
            dl = sum(p.packet_len_bytes for p in run if p.direction == "DL")
            ul = sum(p.packet_len_bytes for p in run if p.direction == "UL")
            per_app.setdefault(app, []).append(
                {
                    "user": uid,
                    "feat": (float(np.mean(lens)), mean_log_gap),
                    "dl_bps": 8.0 * dl / duration,
                    "ul_bps": 8.0 * ul / duration,
                    "duration": duration,
                }
            )
    return per_app


def kmeans(points: np.ndarray, k: int, seed: int, n_init: int = 4, iters: int = 50):
    """Seeded Lloyd iterations with farthest-point style (++) initialization."""
    n = len(points)
    best = None
    for trial in range(n_init):
        rng = np.random.default_rng([seed, 0x3EA, trial])
        centers = [points[rng.integers(n)]]
        while len(centers) < k:
            d2 = np.min(
                [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0
            )
            total = d2.sum()
            if total <= 0:
                centers.append(points[rng.integers(n)])
                continue
            centers.append(points[rng.choice(n, p=d2 / total)])
        centers = np.array(centers)
        for _ in range(iters):
            d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            assign = d.argmin(axis=1)
            new = centers.copy()
            for j in range(k):
                members = points[assign == j]
                if len(members):
                    new[j] = members.mean(axis=0)
            if np.allclose(new, centers):
                centers = new
                break
            centers = new
        d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d.argmin(axis=1)
        inertia = d[np.arange(n), assign].sum()
        if best is None or inertia < best[0]:
            best = (inertia, centers, assign)
    return best[1], best[2]


def silhouette_score(points: np.ndarray, assign: np.ndarray) -> float:
    """Mean silhouette over points; degenerate layouts score 0."""
    n = len(points)
    labels = np.unique(assign)
    if len(labels) < 2:
        return 0.0
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    scores = np.zeros(n)
    for i in range(n):
        same = assign == assign[i]
        n_same = same.sum() - 1
        a = d[i][same].sum() / n_same if n_same > 0 else 0.0
        b = np.inf
        for lab in labels:
            if lab == assign[i]:
                continue
            others = assign == lab
            if others.any():
                b = min(b, d[i][others].mean())
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def cluster_app_actions(packets: list, n_apps: int | None = None, k_range=range(2, 9), seed: int = 0) -> AppActionClusters:
    """Per-app k-means over session features, k picked by best silhouette."""
    if not packets:
        raise EmptyInput("no packets")
    per_app = _sessions_from_packets(packets)
    labels = sorted(per_app)
    if n_apps is not None and len(labels) != n_apps:
        raise MismatchedApps(f"expected {n_apps} apps, found {len(labels)}")
    k_list = sorted(k_range)
    apps = []
    for app in labels:
        sessions = per_app[app]
        pts = np.array([s["feat"] for s in sessions])
        if len(pts) < k_list[0]:
            raise TooFewPoints(f"app {app!r}: {len(pts)} sessions < k_min {k_list[0]}")
        mu = pts.mean(axis=0)
        sd = pts.std(axis=0)
        sd[sd == 0] = 1.0
        z = (pts - mu) / sd
        best = None
        for k in k_list:
            if k > len(pts):
                break
            centers_z, assign = kmeans(z, k, seed)
            score = silhouette_score(z, assign) if k > 1 else 0.0
            if best is None or score > best[0] + 1e-12:
                best = (score, k, centers_z, assign)
        _, k, centers_z, assign = best
        centers = centers_z * sd + mu
        weights = np.array([(assign == j).sum() for j in range(k)], dtype=float)
        weights /= weights.sum()
        dl = np.zeros(k)
        ul = np.zeros(k)
        dur = np.zeros(k)
        for j in range(k):
            members = [s for s, a in zip(sessions, assign) if a == j]
            if members:
                dl[j] = float(np.mean([s["dl_bps"] for s in members]))
                ul[j] = float(np.mean([s["ul_bps"] for s in members]))
                dur[j] = float(np.mean([s["duration"] for s in members]))
        apps.append(
            AppClusters(
                app_label=app, k=k, centers=centers, weights=weights,
                dl_bps=dl, ul_bps=ul, duration_s=dur,
            )
        )
    return AppActionClusters(apps=apps)


def build_preference_vectors(packets: list) -> list:
    """Per-user app preference = byte share across the app universe."""
    if not packets:
        raise EmptyInput("no packets")
    labels = sorted({p.app_label for p in packets})
    idx = {a: i for i, a in enumerate(labels)}
    by_user: dict = {}
    for p in packets:
        v = by_user.setdefault(p.user_id, np.zeros(len(labels)))
        v[idx[p.app_label]] += p.packet_len_bytes
    out = []
    for uid in sorted(by_user):
        v = by_user[uid]
        out.append(PreferenceVector(user_id=uid, app_probs=v / v.sum()))
    return out


def generate_traffic(
    clusters: AppActionClusters,
    prefs: list,
    horizon_s: float,
    seed: int,
    mean_interarrival_s: float = 300.0,
    lognormal_sigma: float = 0.25,
) -> list:
    """Poisson session arrivals per user; app by preference, shape by cluster."""
    sessions = []
    for pref in prefs:
        if len(pref.app_probs) != clusters.n_apps:
            raise MismatchedApps(
                f"user {pref.user_id}: {len(pref.app_probs)} apps vs clusters {clusters.n_apps}"
            )
        rng = np.random.default_rng([seed, 0x7AF, zlib.crc32(pref.user_id.encode("utf-8"))])
        t = rng.exponential(mean_interarrival_s)
        while t < horizon_s:
            app_i = int(rng.choice(clusters.n_apps, p=pref.app_probs))
            app = clusters.apps[app_i]
            c = int(rng.choice(app.k, p=app.weights))
            scale = math.exp(rng.normal(0.0, lognormal_sigma))
            dl = max(app.dl_bps[c] * scale, 1.0)
            ul = max(app.ul_bps[c] * scale, 1.0)
            dur = max(app.duration_s[c] * math.exp(rng.normal(0.0, lognormal_sigma)), 1.0)
            sessions.append(
                ServiceSession(
                    user_id=pref.user_id, app_index=app_i, action_cluster=c,
                    start_s=float(t), duration_s=float(dur),
                    demand_bps=float(dl), demand_bps_ul=float(ul),
                )
            )
            t += rng.exponential(mean_interarrival_s)
    return sessions
