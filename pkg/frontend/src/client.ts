/**
 * RemoteEnv: a typed client for the antenna environment service.
 *
 * One RemoteEnv wraps one TCP connection and therefore one episode; the
 * service resets state per connection, so training loops open a fresh
 * connection per episode rather than reusing this object.  The protocol
 * is lockstep (every request gets exactly one response), which keeps the
 * socket handling simple: requests queue up and responses resolve them
 * in order.
 */

import * as net from "node:net";

import {
  BeamAction,
  H_CATALOG_SIZE,
  PROTOCOL_VERSION,
  ProtocolError,
  RewardWeights,
  ServerMessage,
  V_CATALOG_SIZE,
  ValidationError,
  encodeClose,
  encodeHello,
  encodeReset,
  encodeStep,
  parseServerLine,
  validateAction,
} from "./protocol.js";

/** TCP connect failed; message carries host:port for the caller. */
export class ConnectionRefused extends Error {
  constructor(host: string, port: number, cause: string) {
    super(`cannot connect to ${host}:${port}: ${cause}`);
    this.name = "ConnectionRefused";
  }
}

/** Handshake failed: the server speaks a different protocol version. */
export class VersionMismatch extends Error {
  constructor(msg: string) {
    super(msg);
    this.name = "VersionMismatch";
  }
}

/** The server answered a well-formed request with an in-band error. */
export class ServerError extends Error {
  readonly code: string;
  constructor(code: string, msg: string) {
    super(`server error [${code}]: ${msg}`);
    this.name = "ServerError";
    this.code = code;
  }
}

export interface StepResult {
  state: number[];
  reward: number;
  done: boolean;
  /** Raw KPI payload from the service, passed through undecorated. */
  info: { kpis: Record<string, number> };
}

interface Pending {
  resolve: (msg: ServerMessage) => void;
  reject: (err: Error) => void;
}

export class RemoteEnv {
  readonly host: string;
  readonly port: number;
  readonly protocolVersion = PROTOCOL_VERSION;

  /** Beam count reported by the last state message; null before reset. */
  nBeams: number | null = null;
  /** State vector length from the last state message; null before reset. */
  stateDim: number | null = null;

  private socket: net.Socket;
  private buffer = "";
  private pending: Pending[] = [];
  private closed = false;
  private lastState: number[] | null = null;

  private constructor(socket: net.Socket, host: string, port: number) {
    this.socket = socket;
    this.host = host;
    this.port = port;
    socket.setEncoding("utf8");
    socket.on("data", (chunk: string) => this.onData(chunk));
    socket.on("error", (err: Error) => this.failPending(new ProtocolError(`socket error: ${err.message}`)));
    socket.on("close", () => {
      this.closed = true;
      this.failPending(new ProtocolError("connection closed while waiting for a response"));
    });
  }

  /**
   * Open a connection and run the version handshake.  Throws
   * ConnectionRefused when the TCP connect fails and VersionMismatch when
   * the server either reports a different version or rejects the hello.
   */
  static async connect(host: string, port: number): Promise<RemoteEnv> {
    const socket = await new Promise<net.Socket>((resolve, reject) => {
      const s = net.createConnection({ host, port });
      const onError = (err: Error) => {
        s.destroy();
        reject(new ConnectionRefused(host, port, err.message));
      };
      s.once("error", onError);
      s.once("connect", () => {
        s.removeListener("error", onError);
        resolve(s);
      });
    });
    const env = new RemoteEnv(socket, host, port);
    let reply: ServerMessage;
    try {
      reply = await env.request(encodeHello());
    } catch (err) {
      socket.destroy();
      throw err;
    }
    if (reply.type === "error") {
      socket.destroy();
      throw new VersionMismatch(`server rejected handshake [${reply.code}]: ${reply.msg}`);
    }
    if (reply.type !== "hello") {
      socket.destroy();
      throw new ProtocolError(`expected hello reply, got "${reply.type}"`);
    }
    if (reply.version !== PROTOCOL_VERSION) {
      socket.destroy();
      throw new VersionMismatch(
        `server speaks protocol version ${reply.version}, client speaks ${PROTOCOL_VERSION}`,
      );
    }
    return env;
  }

  /** Start the episode; returns the initial state vector. */
  async reset(seed = 0, weights?: RewardWeights): Promise<number[]> {
    const reply = await this.request(encodeReset(seed, weights));
    if (reply.type === "error") {
      throw new ServerError(reply.code, reply.msg);
    }
    if (reply.type !== "state") {
      throw new ProtocolError(`expected state reply to reset, got "${reply.type}"`);
    }
    this.nBeams = reply.n_beams;
    this.stateDim = reply.vector.length;
    this.lastState = reply.vector;
    return reply.vector;
  }

  /**
   * Apply one beam-command array.  The action is validated locally first;
   * a malformed action throws ValidationError and nothing reaches the wire.
   */
  async step(action: BeamAction[]): Promise<StepResult> {
    if (this.nBeams === null) {
      throw new ValidationError("step before reset: call reset() first");
    }
    validateAction(action, this.nBeams);
    const reply = await this.request(encodeStep(action, this.nBeams));
    if (reply.type === "error") {
      throw new ServerError(reply.code, reply.msg);
    }
    if (reply.type !== "transition") {
      throw new ProtocolError(`expected transition reply to step, got "${reply.type}"`);
    }
    this.nBeams = reply.state.n_beams;
    this.stateDim = reply.state.vector.length;
    this.lastState = reply.state.vector;
    return {
      state: reply.state.vector,
      reward: reply.reward,
      done: reply.done,
      info: { kpis: reply.kpis },
    };
  }

  /**
   * Build the hold-everything action for the current layout.  The state
   * vector leads with five values per beam (normalized h index, v index,
   * azimuth, tilt, active flag), so the catalog indexes are recoverable
   * exactly and a no-op step reproduces the baseline reward of zero.
   */
  noop(): BeamAction[] {
    if (this.lastState === null || this.nBeams === null) {
      throw new ValidationError("no state cached: call reset() first");
    }
    const s = this.lastState;
    const action: BeamAction[] = [];
    for (let b = 0; b < this.nBeams; b++) {
      action.push({
        h_index: Math.round(s[5 * b] * (H_CATALOG_SIZE - 1)),
        v_index: Math.round(s[5 * b + 1] * (V_CATALOG_SIZE - 1)),
        azimuth_delta: 0,
        tilt_delta: 0,
        active: s[5 * b + 4] > 0.5,
      });
    }
    return action;
  }

  /** Say goodbye and drop the connection. */
  async close(): Promise<void> {
    if (this.closed) {
      return;
    }
    try {
      const reply = await this.request(encodeClose());
      if (reply.type !== "close") {
        throw new ProtocolError(`expected close reply, got "${reply.type}"`);
      }
    } finally {
      this.closed = true;
      this.socket.destroy();
    }
  }

  private request(line: string): Promise<ServerMessage> {
    if (this.closed) {
      return Promise.reject(new ValidationError("connection already closed"));
    }
    return new Promise<ServerMessage>((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.socket.write(line + "\n");
    });
  }

  private onData(chunk: string): void {
    this.buffer += chunk;
    const lines = this.buffer.split("\n");
    this.buffer = lines.pop() ?? "";
    for (const lineRaw of lines) {
      const line = lineRaw.trim();
      if (line.length === 0) {
        continue;
      }
      const waiter = this.pending.shift();
      if (waiter === undefined) {
        // Lockstep protocol: a line with no outstanding request is corrupt.
        this.socket.destroy();
        this.failPending(new ProtocolError(`unsolicited server line: ${line.slice(0, 120)}`));
        return;
      }
      let msg: ServerMessage;
      try {
        msg = parseServerLine(line);
      } catch (err) {
        waiter.reject(err instanceof Error ? err : new ProtocolError(String(err)));
        this.socket.destroy();
        return;
      }
      waiter.resolve(msg);
    }
  }

  private failPending(err: Error): void {
    const waiting = this.pending;
    this.pending = [];
    for (const waiter of waiting) {
      waiter.reject(err);
    }
  }
}
