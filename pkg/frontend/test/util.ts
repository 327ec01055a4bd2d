/** Helpers for integration tests: spawn the Python environment service. */

import { ChildProcess, spawn } from "node:child_process";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const HERE = path.dirname(fileURLToPath(import.meta.url));

/** Repository root (one level above frontend/). */
export const REPO_ROOT = path.resolve(HERE, "..", "..");

export const OFFBORESIGHT_SCENARIO = path.join(REPO_ROOT, "scenarios", "offboresight.toml");
export const EPISODE60_SCENARIO = path.join(HERE, "fixtures", "episode60.toml");

export interface ServerHandle {
  port: number;
  stop(): Promise<void>;
}

/**
 * Launch `netsim serve` on a free port and wait for its ready line,
 * a JSON object {"event": "listening", "port": N} on stdout.
 */
export async function startServer(scenarioPath: string): Promise<ServerHandle> {
  const cmd = process.env.NETSIM_CMD ?? "netsim";
  const proc: ChildProcess = spawn(
    cmd,
    ["serve", "--scenario", scenarioPath, "--host", "127.0.0.1", "--port", "0"],
    { stdio: ["ignore", "pipe", "pipe"] },
  );

  const port = await new Promise<number>((resolve, reject) => {
    let out = "";
    let err = "";
    const timer = setTimeout(() => {
      proc.kill();
      reject(new Error(`service did not report a port within 30s; stderr: ${err}`));
    }, 30_000);
    proc.stdout?.setEncoding("utf8");
    proc.stderr?.setEncoding("utf8");
    proc.stderr?.on("data", (chunk: string) => {
      err += chunk;
    });
    proc.stdout?.on("data", (chunk: string) => {
      out += chunk;
      const nl = out.indexOf("\n");
      if (nl < 0) {
        return;
      }
      clearTimeout(timer);
      try {
        const ready = JSON.parse(out.slice(0, nl));
        if (ready.event !== "listening" || !Number.isInteger(ready.port)) {
          throw new Error(`unexpected ready line: ${out.slice(0, nl)}`);
        }
        resolve(ready.port);
      } catch (e) {
        proc.kill();
        reject(e instanceof Error ? e : new Error(String(e)));
      }
    });
    proc.once("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`service exited early with code ${code}; stderr: ${err}`));
    });
  });

  return {
    port,
    stop(): Promise<void> {
      return new Promise((resolve) => {
        if (proc.exitCode !== null) {
          resolve();
          return;
        }
        proc.once("exit", () => resolve());
        proc.kill();
      });
    },
  };
}

/** Find a TCP port with nothing listening on it. */
export async function freePort(): Promise<number> {
  const net = await import("node:net");
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.listen(0, "127.0.0.1", () => {
      const addr = srv.address();
      if (addr === null || typeof addr === "string") {
        reject(new Error("no address"));
        return;
      }
      srv.close(() => resolve(addr.port));
    });
    srv.once("error", reject);
  });
}
