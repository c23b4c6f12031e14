/**
 * Application-level classical messaging.
 *
 * A convenience channel between applications, separate from the quantum
 * control channel. Each node's listener lives at `cqc_port + 1000` (a
 * library convention). A message is a 4-byte big-endian length prefix
 * followed by the payload; a send opens a socket, writes one message,
 * and closes the socket again. The listener starts lazily on first
 * receive, so an application that never receives never opens a socket.
 */

import * as net from "node:net";

import { ClassicalChannelError, TimeoutError } from "./errors.js";

export const CLASSICAL_PORT_OFFSET = 1000;

export const MAX_MESSAGE = 1 << 20;

const FRAME_HEAD = 4;

export interface SendOptions {
  /** How long to keep retrying while the peer's listener is absent. */
  retryWindowMs?: number;
  /** Delay between connection attempts. */
  retryIntervalMs?: number;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function frame(data: Uint8Array): Buffer {
  const head = Buffer.alloc(FRAME_HEAD);
  head.writeUInt32BE(data.length, 0);
  return Buffer.concat([head, Buffer.from(data)]);
}

function attemptSend(host: string, port: number, bytes: Buffer): Promise<void> {
  return new Promise((resolve, reject) => {
    const socket = net.connect({ host, port });
    socket.once("error", (err: Error) => {
      socket.destroy();
      reject(err);
    });
    socket.once("connect", () => {
      socket.setNoDelay(true);
      socket.end(bytes, () => {
        socket.once("close", () => resolve());
      });
    });
  });
}

/**
 * Deliver one message: connect, send, close. Connection attempts are
 * retried until `retryWindowMs` elapses, covering a peer whose listener
 * has not started yet.
 */
export async function sendClassicalMessage(
  host: string,
  port: number,
  data: Uint8Array,
  options: SendOptions = {},
): Promise<void> {
  const retryWindowMs = options.retryWindowMs ?? 10_000;
  const retryIntervalMs = options.retryIntervalMs ?? 50;
  if (data.length > MAX_MESSAGE) {
    throw new ClassicalChannelError(
      `message of ${data.length} bytes exceeds the ${MAX_MESSAGE} cap`,
    );
  }
  const bytes = frame(data);
  const deadline = Date.now() + retryWindowMs;
  for (;;) {
    try {
      await attemptSend(host, port, bytes);
      return;
    } catch (err) {
      if (Date.now() >= deadline) {
        throw new ClassicalChannelError(
          `cannot reach listener at ${host}:${port} ` +
            `within ${retryWindowMs} ms: ${String(err)}`,
        );
      }
      await sleep(retryIntervalMs);
    }
  }
}

interface Waiter {
  resolve: (data: Buffer) => void;
  reject: (err: Error) => void;
  timer: NodeJS.Timeout;
}

/** Inbound message queue backed by a lazily started TCP listener. */
export class ClassicalMailbox {
  private server: net.Server | null = null;
  private readonly queue: Buffer[] = [];
  private readonly waiters: Waiter[] = [];
  private readonly sockets = new Set<net.Socket>();

  constructor(
    readonly host: string,
    readonly port: number,
  ) {}

  get started(): boolean {
    return this.server !== null;
  }

  /** Bind the listener. Safe to call repeatedly. */
  start(): Promise<void> {
    if (this.server) {
      return Promise.resolve();
    }
    return new Promise((resolve, reject) => {
      const server = net.createServer((socket) => this.accept(socket));
      server.once("error", (err: Error) => {
        reject(
          new ClassicalChannelError(
            `cannot listen on ${this.host}:${this.port}: ${err.message}`,
          ),
        );
      });
      server.listen(this.port, this.host, () => {
        this.server = server;
        resolve();
      });
    });
  }

  /** Pop the oldest message, waiting up to `timeoutMs` for one. */
  receive(timeoutMs = 30_000): Promise<Buffer> {
    const queued = this.queue.shift();
    if (queued !== undefined) {
      return Promise.resolve(queued);
    }
    return new Promise((resolve, reject) => {
      const waiter: Waiter = {
        resolve,
        reject,
        timer: setTimeout(() => {
          const index = this.waiters.indexOf(waiter);
          if (index >= 0) {
            this.waiters.splice(index, 1);
          }
          reject(
            new TimeoutError(`no classical message within ${timeoutMs} ms`),
          );
        }, timeoutMs),
      };
      this.waiters.push(waiter);
    });
  }

  close(): Promise<void> {
    const server = this.server;
    this.server = null;
    for (const socket of this.sockets) {
      socket.destroy();
    }
    this.sockets.clear();
    while (this.waiters.length) {
      const waiter = this.waiters.shift()!;
      clearTimeout(waiter.timer);
      waiter.reject(new ClassicalChannelError("mailbox closed"));
    }
    if (!server) {
      return Promise.resolve();
    }
    return new Promise((resolve) => server.close(() => resolve()));
  }

  private accept(socket: net.Socket): void {
    this.sockets.add(socket);
    let pending: Buffer = Buffer.alloc(0);
    socket.on("data", (chunk: Buffer) => {
      pending = pending.length ? Buffer.concat([pending, chunk]) : chunk;
      for (;;) {
        if (pending.length < FRAME_HEAD) {
          return;
        }
        const length = pending.readUInt32BE(0);
        if (length > MAX_MESSAGE) {
          socket.destroy();
          return;
        }
        if (pending.length < FRAME_HEAD + length) {
          return;
        }
        const message = Buffer.from(
          pending.subarray(FRAME_HEAD, FRAME_HEAD + length),
        );
        pending = pending.subarray(FRAME_HEAD + length);
        this.deliver(message);
      }
    });
    socket.on("error", () => socket.destroy());
    socket.on("close", () => this.sockets.delete(socket));
  }

  private deliver(message: Buffer): void {
    const waiter = this.waiters.shift();
    if (waiter) {
      clearTimeout(waiter.timer);
      waiter.resolve(message);
    } else {
      this.queue.push(message);
    }
  }
}
