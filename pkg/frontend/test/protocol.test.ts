import { describe, expect, it } from "vitest";

import {
  BeamAction,
  ProtocolError,
  ValidationError,
  encodeClose,
  encodeHello,
  encodeReset,
  encodeStep,
  parseServerLine,
  validateWeights,
} from "../src/protocol.js";
import { mulberry32 } from "../src/agents.js";

function noopAction(): BeamAction {
  return { h_index: 3, v_index: 1, azimuth_delta: 0, tilt_delta: 0, active: true };
}

describe("client message encoding", () => {
  it("encodes hello with exactly type and version", () => {
    expect(JSON.parse(encodeHello())).toEqual({ type: "hello", version: 1 });
  });

  it("omits the weights field entirely when no override is given", () => {
    const msg = JSON.parse(encodeReset(7));
    expect(msg).toEqual({ type: "reset", seed: 7 });
    expect("weights" in msg).toBe(false);
  });

  it("carries a weights override verbatim", () => {
    const msg = JSON.parse(encodeReset(0, { w_rsrp: 1.0, w_dl: 0.5 }));
    expect(msg).toEqual({ type: "reset", seed: 0, weights: { w_rsrp: 1.0, w_dl: 0.5 } });
  });

  it("rejects bad seeds", () => {
    expect(() => encodeReset(-1)).toThrow(ValidationError);
    expect(() => encodeReset(1.5)).toThrow(ValidationError);
    expect(() => encodeReset(Number.NaN)).toThrow(ValidationError);
  });

  it("rejects bad weight overrides", () => {
    expect(() => validateWeights({ w_bogus: 1 } as never)).toThrow(ValidationError);
    expect(() => validateWeights({ w_rsrp: -0.1 })).toThrow(ValidationError);
    expect(() => validateWeights({ w_rsrp: Number.POSITIVE_INFINITY })).toThrow(ValidationError);
    // All-zero overrides are a guaranteed server-side config error.
    expect(() => validateWeights({ w_rsrp: 0 })).toThrow(ValidationError);
    expect(() => validateWeights({})).not.toThrow();
  });

  it("encodes a step with exactly the five beam-command fields", () => {
    const msg = JSON.parse(encodeStep([noopAction()]));
    expect(msg).toEqual({ type: "step", action: [noopAction()] });
    expect(Object.keys(msg.action[0]).sort()).toEqual([
      "active",
      "azimuth_delta",
      "h_index",
      "tilt_delta",
      "v_index",
    ]);
  });

  it("rejects malformed beam commands before anything is sent", () => {
    expect(() => encodeStep([])).toThrow(ValidationError);
    expect(() => encodeStep([{ ...noopAction(), h_index: 6 }])).toThrow(ValidationError);
    expect(() => encodeStep([{ ...noopAction(), h_index: -1 }])).toThrow(ValidationError);
    expect(() => encodeStep([{ ...noopAction(), v_index: 3 }])).toThrow(ValidationError);
    expect(() => encodeStep([{ ...noopAction(), azimuth_delta: 3 }])).toThrow(ValidationError);
    expect(() => encodeStep([{ ...noopAction(), tilt_delta: -3 }])).toThrow(ValidationError);
    expect(() => encodeStep([{ ...noopAction(), azimuth_delta: 0.5 }])).toThrow(ValidationError);
    expect(() => encodeStep([{ ...noopAction(), active: 1 as unknown as boolean }])).toThrow(
      ValidationError,
    );
    expect(() =>
      encodeStep([{ ...noopAction(), extra: 1 } as unknown as BeamAction]),
    ).toThrow(ValidationError);
    expect(() => encodeStep([noopAction()], 2)).toThrow(ValidationError);
  });

  it("encodes close with no payload", () => {
    expect(JSON.parse(encodeClose())).toEqual({ type: "close" });
  });
});

describe("server message decoding", () => {
  it("parses every server message type", () => {
    expect(parseServerLine('{"type": "hello", "version": 1}')).toEqual({
      type: "hello",
      version: 1,
    });
    expect(parseServerLine('{"n_beams": 1, "type": "state", "vector": [0.5, 1.0]}')).toEqual({
      type: "state",
      vector: [0.5, 1.0],
      n_beams: 1,
    });
    const tr = parseServerLine(
      '{"done": false, "kpis": {"coverage_pct": 55.0}, "reward": 0.0, ' +
        '"state": {"n_beams": 1, "vector": [0.1]}, "type": "transition"}',
    );
    expect(tr).toEqual({
      type: "transition",
      state: { vector: [0.1], n_beams: 1 },
      reward: 0.0,
      done: false,
      kpis: { coverage_pct: 55.0 },
    });
    expect(parseServerLine('{"code": "action", "msg": "bad", "type": "error"}')).toEqual({
      type: "error",
      code: "action",
      msg: "bad",
    });
    expect(parseServerLine('{"type": "close"}')).toEqual({ type: "close" });
  });

  it("throws ProtocolError on malformed lines", () => {
    const bad = [
      "not json",
      "[1, 2]",
      '"hello"',
      '{"version": 1}',
      '{"type": "nonsense"}',
      '{"type": "hello"}',
      '{"type": "hello", "version": 1, "extra": true}',
      '{"type": "hello", "version": true}',
      '{"type": "state", "vector": [0.1]}',
      '{"type": "state", "vector": ["x"], "n_beams": 1}',
      '{"type": "state", "vector": [0.1], "n_beams": 1.5}',
      '{"type": "transition", "state": {"vector": [0.1], "n_beams": 1}, "reward": 0, "done": 0, "kpis": {}}',
      '{"type": "transition", "state": {"vector": [0.1]}, "reward": 0, "done": false, "kpis": {}}',
      '{"type": "transition", "state": {"vector": [0.1], "n_beams": 1}, "reward": 0, "done": false, "kpis": {"x": "y"}}',
      '{"type": "error", "code": "oops"}',
      '{"type": "close", "extra": 1}',
    ];
    for (const line of bad) {
      expect(() => parseServerLine(line), line).toThrow(ProtocolError);
    }
  });
});

// Independent restatement of the client-to-server grammar.  The fuzz below
// drives the encoders with random arguments and checks that every line they
// emit stays inside this grammar, i.e. the client can never send a message
// the service does not define.
function conformsToClientGrammar(line: string): boolean {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return false;
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    return false;
  }
  const rec = obj as Record<string, unknown>;
  const keys = Object.keys(rec).sort();
  const isInt = (v: unknown): v is number => typeof v === "number" && Number.isInteger(v);
  switch (rec.type) {
    case "hello":
      return keys.join(",") === "type,version" && rec.version === 1;
    case "reset": {
      if (keys.join(",") !== "seed,type" && keys.join(",") !== "seed,type,weights") {
        return false;
      }
      if (!isInt(rec.seed) || (rec.seed as number) < 0) {
        return false;
      }
      if ("weights" in rec) {
        const w = rec.weights;
        if (typeof w !== "object" || w === null || Array.isArray(w)) {
          return false;
        }
        const allowed = ["w_coverage", "w_rsrp", "w_sinr", "w_dl", "w_ul"];
        for (const [k, v] of Object.entries(w)) {
          if (!allowed.includes(k) || typeof v !== "number" || typeof v === "boolean" || v < 0) {
            return false;
          }
        }
      }
      return true;
    }
    case "step": {
      if (keys.join(",") !== "action,type" || !Array.isArray(rec.action) || rec.action.length === 0) {
        return false;
      }
      for (const entry of rec.action) {
        if (typeof entry !== "object" || entry === null || Array.isArray(entry)) {
          return false;
        }
        const e = entry as Record<string, unknown>;
        if (
          Object.keys(e).sort().join(",") !==
          "active,azimuth_delta,h_index,tilt_delta,v_index"
        ) {
          return false;
        }
        if (!isInt(e.h_index) || e.h_index < 0 || e.h_index > 5) return false;
        if (!isInt(e.v_index) || e.v_index < 0 || e.v_index > 2) return false;
        if (!isInt(e.azimuth_delta) || Math.abs(e.azimuth_delta as number) > 2) return false;
        if (!isInt(e.tilt_delta) || Math.abs(e.tilt_delta as number) > 2) return false;
        if (typeof e.active !== "boolean") return false;
      }
      return true;
    }
    case "close":
      return keys.join(",") === "type";
    default:
      return false;
  }
}

describe("wire conformance", () => {
  it("every line the encoders can produce stays inside the protocol grammar", () => {
    const rng = mulberry32(2024);
    const randInt = (n: number) => Math.floor(rng.next() * n);
    const weightKeys = ["w_coverage", "w_rsrp", "w_sinr", "w_dl", "w_ul"] as const;
    const lines: string[] = [encodeHello(), encodeClose()];

    for (let i = 0; i < 500; i++) {
      // Random but valid arguments; invalid ones throw before encoding and
      // are covered by the rejection tests above.
      const kind = randInt(3);
      if (kind === 0) {
        lines.push(encodeReset(randInt(1_000_000)));
      } else if (kind === 1) {
        const weights: Record<string, number> = {};
        const nw = 1 + randInt(weightKeys.length);
        for (let k = 0; k < nw; k++) {
          weights[weightKeys[randInt(weightKeys.length)]] = Math.round(rng.next() * 100) / 10;
        }
        const total = Object.values(weights).reduce((a, v) => a + v, 0);
        if (total <= 0) {
          weights.w_coverage = 1.0;
        }
        lines.push(encodeReset(randInt(1000), weights));
      } else {
        const nBeams = 1 + randInt(4);
        const action: BeamAction[] = [];
        for (let b = 0; b < nBeams; b++) {
          action.push({
            h_index: randInt(6),
            v_index: randInt(3),
            azimuth_delta: randInt(5) - 2,
            tilt_delta: randInt(5) - 2,
            active: rng.next() < 0.8,
          });
        }
        lines.push(encodeStep(action));
      }
    }

    for (const line of lines) {
      expect(conformsToClientGrammar(line), line).toBe(true);
      expect(line.includes("\n")).toBe(false);
    }
  });
});
