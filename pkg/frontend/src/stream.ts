/**
 * Promise-oriented byte stream over a TCP socket.
 *
 * Buffers inbound chunks and serves exact-length reads. One read may be
 * outstanding at a time, which matches the strictly sequential
 * request/reply pattern of the control channel.
 */

import * as net from "node:net";

import {
  AppClientError,
  ConnectError,
  ConnectionClosedError,
  TimeoutError,
} from "./errors.js";

interface PendingRead {
  wanted: number;
  resolve: (data: Buffer) => void;
  reject: (err: Error) => void;
  timer: NodeJS.Timeout | null;
}

export class SocketStream {
  private chunks: Buffer[] = [];
  private buffered = 0;
  private pending: PendingRead | null = null;
  private fatal: Error | null = null;

  private constructor(private readonly socket: net.Socket) {
    socket.on("data", (chunk: Buffer) => {
      this.chunks.push(chunk);
      this.buffered += chunk.length;
      this.service();
    });
    socket.on("error", (err: Error) => {
      this.fail(new ConnectionClosedError(`connection failed: ${err.message}`));
    });
    socket.on("close", () => {
      this.fail(new ConnectionClosedError("connection closed"));
    });
  }

  static connect(
    host: string,
    port: number,
    timeoutMs = 10_000,
  ): Promise<SocketStream> {
    return new Promise((resolve, reject) => {
      const socket = net.connect({ host, port });
      const timer = setTimeout(() => {
        socket.destroy();
        reject(new ConnectError(`connect to ${host}:${port} timed out`));
      }, timeoutMs);
      socket.once("connect", () => {
        clearTimeout(timer);
        socket.setNoDelay(true);
        resolve(new SocketStream(socket));
      });
      socket.once("error", (err: Error) => {
        clearTimeout(timer);
        reject(
          new ConnectError(`cannot connect to ${host}:${port}: ${err.message}`),
        );
      });
    });
  }

  get closed(): boolean {
    return this.fatal !== null;
  }

  /** Read exactly `wanted` bytes, waiting for more data as needed. */
  read(wanted: number, timeoutMs?: number): Promise<Buffer> {
    if (this.pending) {
      return Promise.reject(
        new AppClientError("a read is already outstanding on this stream"),
      );
    }
    if (this.buffered >= wanted) {
      return Promise.resolve(this.consume(wanted));
    }
    if (this.fatal) {
      return Promise.reject(this.fatal);
    }
    return new Promise((resolve, reject) => {
      const timer =
        timeoutMs === undefined
          ? null
          : setTimeout(() => {
              this.pending = null;
              reject(
                new TimeoutError(`no reply within ${timeoutMs} ms`),
              );
            }, timeoutMs);
      this.pending = { wanted, resolve, reject, timer };
    });
  }

  write(data: Buffer): Promise<void> {
    if (this.fatal) {
      return Promise.reject(this.fatal);
    }
    return new Promise((resolve, reject) => {
      this.socket.write(data, (err) => (err ? reject(err) : resolve()));
    });
  }

  destroy(): void {
    this.socket.destroy();
    this.fail(new ConnectionClosedError("connection closed"));
  }

  private consume(wanted: number): Buffer {
    const out = Buffer.alloc(wanted);
    let filled = 0;
    while (filled < wanted) {
      const head = this.chunks[0]!;
      const take = Math.min(head.length, wanted - filled);
      head.copy(out, filled, 0, take);
      filled += take;
      if (take === head.length) {
        this.chunks.shift();
      } else {
        this.chunks[0] = head.subarray(take);
      }
    }
    this.buffered -= wanted;
    return out;
  }

  private service(): void {
    if (this.pending && this.buffered >= this.pending.wanted) {
      const { wanted, resolve, timer } = this.pending;
      if (timer) {
        clearTimeout(timer);
      }
      this.pending = null;
      resolve(this.consume(wanted));
    }
  }

  private fail(err: Error): void {
    if (this.fatal) {
      return;
    }
    this.fatal = err;
    if (this.pending) {
      const { reject, timer } = this.pending;
      if (timer) {
        clearTimeout(timer);
      }
      this.pending = null;
      reject(err);
    }
  }
}
