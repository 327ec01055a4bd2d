/**
 * Example runner: train the cross-entropy agent (or score the random
 * baseline) against a live environment service and write the reward curve.
 *
 *   netsim serve --scenario scenarios/offboresight.toml --port 5555 &
 *   node dist/main.js --port 5555 --episodes 24 --out reward_curve.csv
 */

import { exampleTrain, runRandomBaseline } from "./agents.js";

interface CliArgs {
  host: string;
  port: number;
  episodes: number;
  agent: "cem" | "random";
  seed: number;
  out: string;
}

function parseArgs(argv: string[]): CliArgs {
  const args: CliArgs = {
    host: "127.0.0.1",
    port: 0,
    episodes: 24,
    agent: "cem",
    seed: 0,
    out: "reward_curve.csv",
  };
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      throw new Error(`missing value for ${flag}`);
    }
    switch (flag) {
      case "--host":
        args.host = value;
        break;
      case "--port":
        args.port = Number(value);
        break;
      case "--episodes":
        args.episodes = Number(value);
        break;
      case "--agent":
        if (value !== "cem" && value !== "random") {
          throw new Error(`unknown agent "${value}" (expected cem or random)`);
        }
        args.agent = value;
        break;
      case "--seed":
        args.seed = Number(value);
        break;
      case "--out":
        args.out = value;
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!Number.isInteger(args.port) || args.port <= 0) {
    throw new Error("--port is required and must be a positive integer");
  }
  return args;
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  if (args.agent === "random") {
    const result = await runRandomBaseline({
      host: args.host,
      port: args.port,
      episodes: args.episodes,
      seed: args.seed,
    });
    console.log(
      `random agent: ${args.episodes} episodes, mean reward ${result.overallMean.toFixed(4)}`,
    );
    return;
  }
  const result = await exampleTrain({
    host: args.host,
    port: args.port,
    episodes: args.episodes,
    seed: args.seed,
    csvPath: args.out,
    onEpisode: (row) => {
      console.log(
        `episode ${row.episode}: mean reward ${row.meanReward.toFixed(4)}, best ${row.bestReward.toFixed(4)}`,
      );
    },
  });
  console.log(
    `done: best mean reward ${result.bestReward.toFixed(4)}, final batch mean ${result.finalBatchMean.toFixed(4)}, curve written to ${args.out}`,
  );
}

main().catch((err) => {
  console.error(err instanceof Error ? err.message : String(err));
  process.exit(1);
});
