/**
 * Example agents for the remote antenna environment.
 *
 * Two policies live here: a uniform-random agent used as a baseline, and
 * a small cross-entropy trainer that keeps a categorical distribution per
 * beam parameter, samples one command set per episode, applies it every
 * step (so parameter deltas compound across the episode), and refits the
 * distribution on the elite episodes of each batch.
 */

import * as fs from "node:fs";

import {
  BeamAction,
  DELTA_MAX,
  DELTA_MIN,
  H_CATALOG_SIZE,
  V_CATALOG_SIZE,
} from "./protocol.js";
import { RemoteEnv } from "./client.js";

export interface Rng {
  /** Uniform float in [0, 1). */
  next(): number;
}

/** Deterministic 32-bit PRNG; good enough for sampling small categoricals. */
export function mulberry32(seed: number): Rng {
  let a = seed >>> 0;
  return {
    next(): number {
      a = (a + 0x6d2b79f5) >>> 0;
      let t = a;
      t = Math.imul(t ^ (t >>> 15), t | 1);
      t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
      return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
    },
  };
}

function randInt(rng: Rng, n: number): number {
  return Math.floor(rng.next() * n);
}

function sampleCategorical(probs: number[], rng: Rng): number {
  const u = rng.next();
  let acc = 0;
  for (let i = 0; i < probs.length; i++) {
    acc += probs[i];
    if (u < acc) {
      return i;
    }
  }
  return probs.length - 1;
}

const DELTA_CHOICES: number[] = [];
for (let d = DELTA_MIN; d <= DELTA_MAX; d++) {
  DELTA_CHOICES.push(d);
}

export function randomAction(nBeams: number, rng: Rng): BeamAction[] {
  const action: BeamAction[] = [];
  for (let b = 0; b < nBeams; b++) {
    action.push({
      h_index: randInt(rng, H_CATALOG_SIZE),
      v_index: randInt(rng, V_CATALOG_SIZE),
      azimuth_delta: DELTA_CHOICES[randInt(rng, DELTA_CHOICES.length)],
      tilt_delta: DELTA_CHOICES[randInt(rng, DELTA_CHOICES.length)],
      // Keep beams mostly on; an all-off layout zeroes every KPI and tells
      // us nothing about the policy.
      active: rng.next() < 0.9,
    });
  }
  return action;
}

export interface EpisodeResult {
  rewards: number[];
  meanReward: number;
  finalReward: number;
  steps: number;
  done: boolean;
}

/**
 * Run one full episode on a fresh connection (the service scopes episodes
 * to connections).  `policy` picks the action for each step from the
 * current state; the loop ends when the service reports done.
 */
export async function runEpisode(
  host: string,
  port: number,
  envSeed: number,
  policy: (env: RemoteEnv, state: number[], stepIdx: number) => BeamAction[],
  maxSteps = 1024,
): Promise<EpisodeResult> {
  const env = await RemoteEnv.connect(host, port);
  try {
    let state = await env.reset(envSeed);
    const rewards: number[] = [];
    let done = false;
    for (let i = 0; i < maxSteps && !done; i++) {
      const result = await env.step(policy(env, state, i));
      rewards.push(result.reward);
      state = result.state;
      done = result.done;
    }
    const meanReward = rewards.reduce((a, r) => a + r, 0) / Math.max(rewards.length, 1);
    return {
      rewards,
      meanReward,
      finalReward: rewards.length > 0 ? rewards[rewards.length - 1] : 0,
      steps: rewards.length,
      done,
    };
  } finally {
    await env.close().catch(() => undefined);
  }
}

export interface RandomBaselineOptions {
  host: string;
  port: number;
  episodes: number;
  seed?: number;
  envSeed?: number;
  maxSteps?: number;
}

export interface RandomBaselineResult {
  episodeMeans: number[];
  overallMean: number;
}

export async function runRandomBaseline(
  opts: RandomBaselineOptions,
): Promise<RandomBaselineResult> {
  const rng = mulberry32(opts.seed ?? 0);
  const envSeed = opts.envSeed ?? 0;
  const episodeMeans: number[] = [];
  for (let e = 0; e < opts.episodes; e++) {
    const result = await runEpisode(
      opts.host,
      opts.port,
      envSeed,
      (env) => randomAction(env.nBeams ?? 1, rng),
      opts.maxSteps ?? 1024,
    );
    episodeMeans.push(result.meanReward);
  }
  const overallMean =
    episodeMeans.reduce((a, r) => a + r, 0) / Math.max(episodeMeans.length, 1);
  return { episodeMeans, overallMean };
}

interface BeamDist {
  h: number[];
  v: number[];
  az: number[];
  tilt: number[];
  pActive: number;
}

function smoothedOneHot(size: number, index: number, concentration: number): number[] {
  const base = (1 - concentration) / size;
  const probs = new Array<number>(size).fill(base);
  probs[index] += concentration;
  return probs;
}

function uniform(size: number): number[] {
  return new Array<number>(size).fill(1 / size);
}

function initDist(noop: BeamAction[]): BeamDist[] {
  // Anchor the shape catalogs on the scenario's starting layout but leave
  // the pointing deltas uniform: direction is what the trainer must learn.
  return noop.map((cmd) => ({
    h: smoothedOneHot(H_CATALOG_SIZE, cmd.h_index, 0.5),
    v: smoothedOneHot(V_CATALOG_SIZE, cmd.v_index, 0.5),
    az: uniform(DELTA_CHOICES.length),
    tilt: uniform(DELTA_CHOICES.length),
    pActive: 0.9,
  }));
}

function sampleFromDist(dist: BeamDist[], rng: Rng): BeamAction[] {
  return dist.map((d) => ({
    h_index: sampleCategorical(d.h, rng),
    v_index: sampleCategorical(d.v, rng),
    azimuth_delta: DELTA_CHOICES[sampleCategorical(d.az, rng)],
    tilt_delta: DELTA_CHOICES[sampleCategorical(d.tilt, rng)],
    active: rng.next() < d.pActive,
  }));
}

function refitCategorical(size: number, picks: number[], smoothing: number): number[] {
  const counts = new Array<number>(size).fill(smoothing);
  for (const p of picks) {
    counts[p] += 1;
  }
  const total = counts.reduce((a, c) => a + c, 0);
  return counts.map((c) => c / total);
}

function refitDist(dist: BeamDist[], elites: BeamAction[][], smoothing = 0.25): BeamDist[] {
  return dist.map((_, b) => {
    const cmds = elites.map((a) => a[b]);
    const activeRate = cmds.filter((c) => c.active).length / cmds.length;
    return {
      h: refitCategorical(H_CATALOG_SIZE, cmds.map((c) => c.h_index), smoothing),
      v: refitCategorical(V_CATALOG_SIZE, cmds.map((c) => c.v_index), smoothing),
      az: refitCategorical(DELTA_CHOICES.length, cmds.map((c) => DELTA_CHOICES.indexOf(c.azimuth_delta)), smoothing),
      tilt: refitCategorical(DELTA_CHOICES.length, cmds.map((c) => DELTA_CHOICES.indexOf(c.tilt_delta)), smoothing),
      pActive: Math.min(0.95, Math.max(0.05, activeRate)),
    };
  });
}

export interface CurveRow {
  episode: number;
  meanReward: number;
  bestReward: number;
}

export interface TrainOptions {
  host: string;
  port: number;
  /** Total episodes to run; may be 1, which yields a one-row curve. */
  episodes: number;
  /** Episodes per cross-entropy batch before the distribution is refit. */
  batch?: number;
  eliteFrac?: number;
  seed?: number;
  /** Environment seed shared by every episode, giving common random numbers. */
  envSeed?: number;
  /** When set, the reward curve is written here as CSV. */
  csvPath?: string;
  maxSteps?: number;
  /** Called after each episode; handy for progress logging. */
  onEpisode?: (row: CurveRow) => void;
}

export interface TrainResult {
  curve: CurveRow[];
  /** Mean episode reward over the last completed batch. */
  finalBatchMean: number;
  bestReward: number;
}

/**
 * Train a cross-entropy policy against a running environment service and
 * record the learning curve.  With a fixed `seed` the run is fully
 * reproducible: the agent RNG is deterministic and every episode resets
 * the environment with the same seed.
 */
export async function exampleTrain(opts: TrainOptions): Promise<TrainResult> {
  if (!Number.isInteger(opts.episodes) || opts.episodes < 1) {
    throw new Error("episodes must be a positive integer");
  }
  const batchSize = opts.batch ?? 6;
  const eliteFrac = opts.eliteFrac ?? 1 / 3;
  const rng = mulberry32(opts.seed ?? 0);
  const envSeed = opts.envSeed ?? 0;
  const maxSteps = opts.maxSteps ?? 1024;

  let dist: BeamDist[] | null = null;
  const curve: CurveRow[] = [];
  let best = -Infinity;
  let batch: { action: BeamAction[]; score: number }[] = [];
  let lastBatchMean = 0;

  for (let e = 0; e < opts.episodes; e++) {
    let action: BeamAction[] | null = null;
    const result = await runEpisode(
      opts.host,
      opts.port,
      envSeed,
      (env) => {
        if (dist === null) {
          dist = initDist(env.noop());
        }
        if (action === null) {
          action = sampleFromDist(dist, rng);
        }
        return action;
      },
      maxSteps,
    );
    if (action === null) {
      throw new Error("episode produced no steps");
    }
    batch.push({ action, score: result.meanReward });
    best = Math.max(best, result.meanReward);
    const row: CurveRow = { episode: e + 1, meanReward: result.meanReward, bestReward: best };
    curve.push(row);
    opts.onEpisode?.(row);

    if (batch.length === batchSize) {
      if (dist === null) {
        throw new Error("distribution not initialized after a completed episode");
      }
      const nElite = Math.max(1, Math.round(batch.length * eliteFrac));
      const elites = [...batch]
        .sort((a, b) => b.score - a.score)
        .slice(0, nElite)
        .map((entry) => entry.action);
      dist = refitDist(dist, elites);
      lastBatchMean = batch.reduce((a, entry) => a + entry.score, 0) / batch.length;
      batch = [];
    }
  }
  if (batch.length > 0) {
    lastBatchMean = batch.reduce((a, entry) => a + entry.score, 0) / batch.length;
  }

  if (opts.csvPath !== undefined) {
    writeCurveCsv(opts.csvPath, curve);
  }
  return { curve, finalBatchMean: lastBatchMean, bestReward: best };
}

export function writeCurveCsv(path: string, curve: CurveRow[]): void {
  const lines = ["episode,mean_reward,best_reward"];
  for (const row of curve) {
    lines.push(`${row.episode},${row.meanReward.toFixed(6)},${row.bestReward.toFixed(6)}`);
  }
  fs.writeFileSync(path, lines.join("\n") + "\n");
}
