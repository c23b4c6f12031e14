/**
 * Application-facing connection and qubit handles.
 *
 * A Connection owns one control-channel session to a single node plus
 * the optional classical mailbox for application messages. Qubits are
 * manipulated through QubitHandle objects tied to that connection;
 * handles deactivate when the qubit is demolished by a measurement or
 * shipped to another node, and later operations on them fail locally
 * before any wire traffic.
 *
 * Commands go out with NOTIFY|BLOCK set, so every exchange ends with a
 * DONE reply; content replies (new qubit ids, outcomes, pair info) are
 * collected until it arrives. Error replies are surfaced as typed
 * exceptions carrying the wire-level code and the node name.
 *
 * A Connection is not safe for concurrent use: one operation may be in
 * flight at a time, and overlapping calls fail fast.
 */

import * as cc from "./codec.js";
import {
  CLASSICAL_PORT_OFFSET,
  ClassicalMailbox,
  sendClassicalMessage,
} from "./classical.js";
import {
  AppClientError,
  ConnectionClosedError,
  DeniedError,
  GeneralServerError,
  InactiveHandleError,
  ProtocolError,
  QubitExpiredError,
  ResourceError,
  ServerError,
  ServerTimeoutError,
  UnavailableError,
  UnknownQubitError,
  UnsupportedError,
  VersionMismatchError,
} from "./errors.js";
import {
  NodeDirectory,
  NodeEntry,
  hostIpv4,
  loadConfig,
} from "./netconf.js";
import { SocketStream } from "./stream.js";

const DEFAULT_OPTIONS = cc.Opt.NOTIFY | cc.Opt.BLOCK;

export interface Reply {
  msgType: number;
  appId: number;
  payload: Buffer;
}

function serverErrorFor(reply: Reply, node: string): ServerError {
  switch (reply.msgType) {
    case cc.MsgType.EXPIRE:
      return new QubitExpiredError(
        reply.msgType,
        node,
        cc.unpackQubitId(reply.payload),
      );
    case cc.MsgType.ERR_NOQUBIT:
      return new ResourceError(
        `node ${node} is out of qubit capacity`,
        reply.msgType,
        node,
      );
    case cc.MsgType.ERR_UNKNOWN:
      return new UnknownQubitError(
        `node ${node} does not know this qubit id`,
        reply.msgType,
        node,
      );
    case cc.MsgType.ERR_UNAVAILABLE:
      return new UnavailableError(
        `node ${node} refused the operation`,
        reply.msgType,
        node,
      );
    case cc.MsgType.ERR_DENIED:
      return new DeniedError(
        `node ${node} denied access to another application's qubit`,
        reply.msgType,
        node,
      );
    case cc.MsgType.ERR_VERSION:
      return new VersionMismatchError(
        `node ${node} does not speak protocol version ${cc.CQC_VERSION}`,
        reply.msgType,
        node,
      );
    case cc.MsgType.ERR_UNSUPP:
      return new UnsupportedError(
        `node ${node} does not support this command`,
        reply.msgType,
        node,
      );
    case cc.MsgType.ERR_TIMEOUT:
      return new ServerTimeoutError(
        `receive timed out on node ${node}`,
        reply.msgType,
        node,
      );
    default:
      return new GeneralServerError(
        `command failed on node ${node}`,
        reply.msgType,
        node,
      );
  }
}

const TERMINAL_TYPES: ReadonlySet<number> = new Set([
  ...cc.ERROR_TYPES,
  cc.MsgType.EXPIRE,
]);

function firstReply(replies: Reply[], what: string): Reply {
  const first = replies[0];
  if (!first) {
    throw new ProtocolError(`${what} returned no content reply`);
  }
  return first;
}

export interface ConnectOptions {
  /** Application id presented on every message (default 0). */
  appId?: number;
  /** Milliseconds to wait for the TCP connect (default 10000). */
  connectTimeoutMs?: number;
  /**
   * Milliseconds to wait for a single reply before giving up. Omitted
   * by default: blocking receives are bounded by the node's own
   * receive window, which arrives as a timeout reply.
   */
  replyTimeoutMs?: number;
  /** Default wait for recvClassical (default 30000). */
  classicalTimeoutMs?: number;
  /** Retry window while a peer's classical listener is absent. */
  classicalRetryWindowMs?: number;
}

/**
 * Open a connection to the named node: look the name up in the config
 * file, dial its control port, and exchange a hello.
 */
export async function connect(
  nodeName: string,
  configPath: string,
  options: ConnectOptions = {},
): Promise<Connection> {
  const directory = loadConfig(configPath);
  const entry = directory.get(nodeName);
  const stream = await SocketStream.connect(
    entry.host,
    entry.cqcPort,
    options.connectTimeoutMs ?? 10_000,
  );
  const connection = new Connection(nodeName, directory, entry, stream, options);
  try {
    await connection.handshake();
  } catch (err) {
    await connection.close();
    throw err;
  }
  return connection;
}

/** One qubit on one connection. */
export class QubitHandle {
  private activeFlag = true;

  constructor(
    readonly connection: Connection,
    readonly id: number,
    /** Pair metadata when the qubit is half of an entangled pair. */
    readonly entanglement: cc.EprInfo | null = null,
  ) {}

  get active(): boolean {
    return this.activeFlag;
  }

  /** @internal */
  deactivate(): void {
    this.activeFlag = false;
  }

  /** @internal */
  assertUsable(connection: Connection): void {
    if (this.connection !== connection) {
      throw new AppClientError(
        `qubit ${this.id} belongs to a different connection`,
      );
    }
    if (!this.activeFlag) {
      throw new InactiveHandleError(
        `qubit ${this.id} is no longer usable: it was measured, sent ` +
          `away, or its connection closed`,
      );
    }
  }

  async I(): Promise<void> {
    await this.connection.runGate(this, cc.Cmd.I);
  }

  async X(): Promise<void> {
    await this.connection.runGate(this, cc.Cmd.X);
  }

  async Y(): Promise<void> {
    await this.connection.runGate(this, cc.Cmd.Y);
  }

  async Z(): Promise<void> {
    await this.connection.runGate(this, cc.Cmd.Z);
  }

  async H(): Promise<void> {
    await this.connection.runGate(this, cc.Cmd.H);
  }

  async K(): Promise<void> {
    await this.connection.runGate(this, cc.Cmd.K);
  }

  async T(): Promise<void> {
    await this.connection.runGate(this, cc.Cmd.T);
  }

  /** Rotate about X by `step` times 2*pi/256. */
  async rotX(step: number): Promise<void> {
    await this.connection.runRotation(this, cc.Cmd.ROT_X, step);
  }

  /** Rotate about Y by `step` times 2*pi/256. */
  async rotY(step: number): Promise<void> {
    await this.connection.runRotation(this, cc.Cmd.ROT_Y, step);
  }

  /** Rotate about Z by `step` times 2*pi/256. */
  async rotZ(step: number): Promise<void> {
    await this.connection.runRotation(this, cc.Cmd.ROT_Z, step);
  }

  /** CNOT with this qubit as control. */
  async cnot(target: QubitHandle): Promise<void> {
    await this.connection.runTwoQubit(cc.Cmd.CNOT, this, target);
  }

  /** Controlled-Z with this qubit as control. */
  async cphase(target: QubitHandle): Promise<void> {
    await this.connection.runTwoQubit(cc.Cmd.CPHASE, this, target);
  }

  /**
   * Measure in the standard basis. Demolition by default, which
   * deactivates the handle; pass `inplace: true` to keep the qubit.
   */
  async measure(options: { inplace?: boolean } = {}): Promise<number> {
    return this.connection.runMeasure(this, options.inplace ?? false);
  }
}

export class Connection {
  readonly appId: number;
  private helloInfo: cc.HelloReply | null = null;
  private mailbox: ClassicalMailbox | null = null;
  private busy = false;
  private closed = false;
  private readonly replyTimeoutMs: number | undefined;
  private readonly classicalTimeoutMs: number;
  private readonly classicalRetryWindowMs: number;

  constructor(
    readonly nodeName: string,
    readonly directory: NodeDirectory,
    private readonly entry: NodeEntry,
    private readonly stream: SocketStream,
    options: ConnectOptions = {},
  ) {
    this.appId = options.appId ?? 0;
    this.replyTimeoutMs = options.replyTimeoutMs;
    this.classicalTimeoutMs = options.classicalTimeoutMs ?? 30_000;
    this.classicalRetryWindowMs = options.classicalRetryWindowMs ?? 10_000;
  }

  /** Capacity and name the node announced in its hello reply. */
  get info(): cc.HelloReply {
    if (!this.helloInfo) {
      throw new AppClientError("connection has not completed its handshake");
    }
    return this.helloInfo;
  }

  get isClosed(): boolean {
    return this.closed;
  }

  /** @internal Exchange the opening hello. */
  async handshake(): Promise<void> {
    const replies = await this.exchange(cc.MsgType.HELLO, Buffer.alloc(0), {
      untilDone: false,
    });
    const reply = firstReply(replies, "hello");
    if (reply.msgType !== cc.MsgType.HELLO) {
      throw new ProtocolError(
        `expected a hello reply, got type ${reply.msgType}`,
      );
    }
    this.helloInfo = cc.unpackHelloReply(reply.payload);
  }

  // ------------------------------------------------------------------
  // low-level exchange

  private async readReply(): Promise<Reply> {
    const header = cc.unpackHeader(
      await this.stream.read(cc.HEADER_LEN, this.replyTimeoutMs),
    );
    const payload = header.payloadLength
      ? await this.stream.read(header.payloadLength, this.replyTimeoutMs)
      : Buffer.alloc(0);
    if (!cc.isKnownMsgType(header.msgType)) {
      throw new ProtocolError(`unknown reply type ${header.msgType}`);
    }
    return { msgType: header.msgType, appId: header.appId, payload };
  }

  /**
   * Send one message and collect content replies until DONE (or, with
   * `untilDone: false`, return after the first reply). Terminal error
   * replies raise the matching typed exception.
   */
  async exchange(
    msgType: number,
    payload: Buffer,
    options: { untilDone?: boolean } = {},
  ): Promise<Reply[]> {
    if (this.closed) {
      throw new ConnectionClosedError(
        `connection to ${this.nodeName} is closed`,
      );
    }
    if (this.busy) {
      throw new AppClientError(
        `another operation is in flight on the connection to ` +
          `${this.nodeName}`,
      );
    }
    this.busy = true;
    try {
      await this.stream.write(cc.encodeMessage(msgType, this.appId, payload));
      const replies: Reply[] = [];
      for (;;) {
        const reply = await this.readReply();
        if (TERMINAL_TYPES.has(reply.msgType)) {
          throw serverErrorFor(reply, this.nodeName);
        }
        if (reply.msgType === cc.MsgType.DONE) {
          return replies;
        }
        replies.push(reply);
        if (options.untilDone === false) {
          return replies;
        }
      }
    } finally {
      this.busy = false;
    }
  }

  /** Build one command with the default NOTIFY|BLOCK options. */
  command(
    instruction: number,
    qubitId = 0,
    options: number = DEFAULT_OPTIONS,
    extra: Partial<cc.ExtraHeader> | null = null,
    block: cc.Command[] = [],
  ): cc.Command {
    return { qubitId, instruction, options, extra, block };
  }

  /** Encode and run one command tree, collecting its content replies. */
  async runCommand(
    cmd: cc.Command,
    msgType: number = cc.MsgType.COMMAND,
  ): Promise<Reply[]> {
    const body = cc.encodeCommand(cmd, msgType === cc.MsgType.FACTORY);
    return this.exchange(msgType, body);
  }

  // ------------------------------------------------------------------
  // qubit operations

  /** Create a fresh qubit in state |0>. */
  async newQubit(): Promise<QubitHandle> {
    const replies = await this.runCommand(this.command(cc.Cmd.NEW));
    const reply = firstReply(replies, "qubit creation");
    return new QubitHandle(this, cc.unpackQubitId(reply.payload));
  }

  /** @internal */
  async runGate(handle: QubitHandle, instruction: number): Promise<void> {
    handle.assertUsable(this);
    await this.runCommand(this.command(instruction, handle.id));
  }

  /** @internal */
  async runRotation(
    handle: QubitHandle,
    instruction: number,
    step: number,
  ): Promise<void> {
    handle.assertUsable(this);
    if (!Number.isInteger(step) || step < 0 || step > 255) {
      throw new AppClientError(
        `rotation step ${step} outside 0..255`,
      );
    }
    await this.runCommand(
      this.command(instruction, handle.id, DEFAULT_OPTIONS, { step }),
    );
  }

  /** @internal */
  async runTwoQubit(
    instruction: number,
    control: QubitHandle,
    target: QubitHandle,
  ): Promise<void> {
    control.assertUsable(this);
    target.assertUsable(this);
    await this.runCommand(
      this.command(instruction, control.id, DEFAULT_OPTIONS, {
        extraQubitId: target.id,
      }),
    );
  }

  /** @internal */
  async runMeasure(handle: QubitHandle, inplace: boolean): Promise<number> {
    handle.assertUsable(this);
    const instruction = inplace ? cc.Cmd.MEASURE_INPLACE : cc.Cmd.MEASURE;
    const replies = await this.runCommand(this.command(instruction, handle.id));
    const outcome = cc.unpackMeasout(firstReply(replies, "measure").payload);
    if (!inplace) {
      handle.deactivate();
    }
    return outcome;
  }

  // ------------------------------------------------------------------
  // transfers and entanglement

  private peerExtra(
    peer: string,
    remoteAppId: number | undefined,
  ): Partial<cc.ExtraHeader> {
    const entry = this.directory.get(peer);
    return {
      remoteAppId: remoteAppId ?? this.appId,
      remoteNode: hostIpv4(entry),
      remotePort: entry.cqcPort,
    };
  }

  /**
   * Ship a qubit to the named peer. The handle deactivates: ownership
   * moves to the receiving application.
   */
  async sendQubit(
    handle: QubitHandle,
    peer: string,
    options: { remoteAppId?: number } = {},
  ): Promise<void> {
    handle.assertUsable(this);
    await this.runCommand(
      this.command(
        cc.Cmd.SEND,
        handle.id,
        DEFAULT_OPTIONS,
        this.peerExtra(peer, options.remoteAppId),
      ),
    );
    handle.deactivate();
  }

  /** Block until a qubit arrives, returning a handle for it. */
  async recvQubit(): Promise<QubitHandle> {
    const replies = await this.runCommand(this.command(cc.Cmd.RECV));
    const reply = firstReply(replies, "qubit receive");
    return new QubitHandle(this, cc.unpackQubitId(reply.payload));
  }

  /**
   * Create an entangled pair with the named peer and return the local
   * half. The peer collects its half with recvEPR.
   */
  async createEPR(
    peer: string,
    options: { remoteAppId?: number } = {},
  ): Promise<QubitHandle> {
    const replies = await this.runCommand(
      this.command(
        cc.Cmd.EPR,
        0,
        DEFAULT_OPTIONS,
        this.peerExtra(peer, options.remoteAppId),
      ),
    );
    const info = cc.unpackEprInfo(firstReply(replies, "pair creation").payload);
    return new QubitHandle(this, info.qubitId, info);
  }

  /** Block until an entangled pair arrives, returning the local half. */
  async recvEPR(): Promise<QubitHandle> {
    const replies = await this.runCommand(this.command(cc.Cmd.RECV_EPR));
    const info = cc.unpackEprInfo(firstReply(replies, "pair receive").payload);
    return new QubitHandle(this, info.qubitId, info);
  }

  // ------------------------------------------------------------------
  // classical messaging

  /**
   * Send one classical message to the named peer's mailbox: open a
   * socket, write the message, close the socket.
   */
  async sendClassical(
    peer: string,
    data: Uint8Array | readonly number[],
  ): Promise<void> {
    if (this.closed) {
      throw new ConnectionClosedError(
        `connection to ${this.nodeName} is closed`,
      );
    }
    const entry = this.directory.get(peer);
    const bytes = data instanceof Uint8Array ? data : Uint8Array.from(data);
    await sendClassicalMessage(
      entry.host,
      entry.cqcPort + CLASSICAL_PORT_OFFSET,
      bytes,
      { retryWindowMs: this.classicalRetryWindowMs },
    );
  }

  /**
   * Receive one classical message. The first call starts this node's
   * mailbox listener; if no application on the node ever receives, no
   * listener socket is opened.
   */
  async recvClassical(options: { timeoutMs?: number } = {}): Promise<Buffer> {
    if (this.closed) {
      throw new ConnectionClosedError(
        `connection to ${this.nodeName} is closed`,
      );
    }
    if (!this.mailbox) {
      this.mailbox = new ClassicalMailbox(
        this.entry.host,
        this.entry.cqcPort + CLASSICAL_PORT_OFFSET,
      );
    }
    await this.mailbox.start();
    return this.mailbox.receive(options.timeoutMs ?? this.classicalTimeoutMs);
  }

  // ------------------------------------------------------------------

  /** Drop the session and the classical mailbox. Safe to call twice. */
  async close(): Promise<void> {
    if (this.closed) {
      return;
    }
    this.closed = true;
    this.stream.destroy();
    if (this.mailbox) {
      await this.mailbox.close();
      this.mailbox = null;
    }
  }
}
