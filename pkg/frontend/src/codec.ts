/**
 * Control-channel wire format.
 *
 * Everything is big-endian. A message is one fixed 8-byte header
 * followed by exactly `payloadLength` bytes of payload:
 *
 *     CqcHeader:     version u8 | msgType u8 | appId u16 | payloadLength u32
 *
 * Command and factory messages carry one command tree in the payload:
 *
 *     CommandHeader: qubitId u16 | instruction u8 | options u8
 *     ExtraHeader:   extraQubitId u16 | remoteAppId u16 | remoteNode u32
 *                    | remotePort u16 | actionLength u32 | step u8 | pad u8
 *
 * The extra header is present exactly when the instruction consumes one
 * of its fields (qubit transfer, entanglement, rotations, two-qubit
 * gates, pair measurement, bulk allocation), when the options request
 * an appended block, or on the top command of a factory message (whose
 * repetition count rides in the step byte). `actionLength` counts the
 * bytes of the appended block: a back-to-back sequence of further
 * commands, each of which may carry its own nested block.
 *
 * Reply payloads: qubit id (u16) for NEW_OK/RECV/EXPIRE, one byte for
 * MEASOUT, u64 milliseconds for INF_TIME, and for EPR_OK the qubit id
 * (u16) followed by entanglement info (endpoint addresses as u32 each,
 * pair sequence u32, creation timestamp u64). HELLO replies carry the
 * node's qubit capacity (u16) plus its name (u8 length-prefixed). DONE
 * and error replies have empty payloads.
 */

import { ProtocolError } from "./errors.js";

export const CQC_VERSION = 1;

export const MAX_PAYLOAD = 1 << 20;

export const HEADER_LEN = 8;
export const CMD_LEN = 4;
export const EXTRA_LEN = 16;
export const EPR_INFO_LEN = 22;

export const MsgType = {
  HELLO: 0,
  COMMAND: 1,
  FACTORY: 2,
  GET_TIME: 3,
  NEW_OK: 4,
  EXPIRE: 5,
  DONE: 6,
  RECV: 7,
  EPR_OK: 8,
  MEASOUT: 9,
  INF_TIME: 10,
  ERR_GENERAL: 20,
  ERR_NOQUBIT: 21,
  ERR_UNKNOWN: 22,
  ERR_UNAVAILABLE: 23,
  ERR_DENIED: 24,
  ERR_VERSION: 25,
  ERR_UNSUPP: 26,
  ERR_TIMEOUT: 27,
} as const;

export type MsgType = (typeof MsgType)[keyof typeof MsgType];

export const ERROR_TYPES: ReadonlySet<number> = new Set([
  MsgType.ERR_GENERAL,
  MsgType.ERR_NOQUBIT,
  MsgType.ERR_UNKNOWN,
  MsgType.ERR_UNAVAILABLE,
  MsgType.ERR_DENIED,
  MsgType.ERR_VERSION,
  MsgType.ERR_UNSUPP,
  MsgType.ERR_TIMEOUT,
]);

const MSG_TYPE_VALUES: ReadonlySet<number> = new Set(Object.values(MsgType));

export function isKnownMsgType(value: number): value is MsgType {
  return MSG_TYPE_VALUES.has(value);
}

export const Cmd = {
  NEW: 1,
  ALLOCATE: 2,
  RELEASE: 3,
  RESET: 4,
  MEASURE: 5,
  MEASURE_INPLACE: 6,
  SEND: 7,
  RECV: 8,
  EPR: 9,
  RECV_EPR: 10,
  SWAP: 11,
  I: 12,
  X: 13,
  Y: 14,
  Z: 15,
  H: 16,
  K: 17,
  T: 18,
  ROT_X: 19,
  ROT_Y: 20,
  ROT_Z: 21,
  CNOT: 22,
  CPHASE: 23,
} as const;

export type Cmd = (typeof Cmd)[keyof typeof Cmd];

export const Opt = {
  NOTIFY: 0x01,
  ACTION: 0x02,
  BLOCK: 0x04,
  IFTHEN: 0x08,
} as const;

export type Opt = (typeof Opt)[keyof typeof Opt];

const EXTRA_INSTRUCTIONS: ReadonlySet<number> = new Set([
  Cmd.ALLOCATE,
  Cmd.SEND,
  Cmd.RECV,
  Cmd.EPR,
  Cmd.RECV_EPR,
  Cmd.SWAP,
  Cmd.ROT_X,
  Cmd.ROT_Y,
  Cmd.ROT_Z,
  Cmd.CNOT,
  Cmd.CPHASE,
]);

export function instructionRequiresExtra(instruction: number): boolean {
  return EXTRA_INSTRUCTIONS.has(instruction);
}

export function commandHasExtra(
  instruction: number,
  options: number,
  factoryTop: boolean,
): boolean {
  if (factoryTop) {
    return true;
  }
  if (options & (Opt.ACTION | Opt.IFTHEN)) {
    return true;
  }
  return instructionRequiresExtra(instruction);
}

// ---------------------------------------------------------------------
// headers

export interface CqcHeader {
  version: number;
  msgType: number;
  appId: number;
  payloadLength: number;
}

export function packHeader(header: CqcHeader): Buffer {
  const buf = Buffer.alloc(HEADER_LEN);
  buf.writeUInt8(header.version, 0);
  buf.writeUInt8(header.msgType, 1);
  buf.writeUInt16BE(header.appId, 2);
  buf.writeUInt32BE(header.payloadLength, 4);
  return buf;
}

export function unpackHeader(data: Buffer): CqcHeader {
  if (data.length !== HEADER_LEN) {
    throw new ProtocolError(`message header needs ${HEADER_LEN} bytes`);
  }
  return {
    version: data.readUInt8(0),
    msgType: data.readUInt8(1),
    appId: data.readUInt16BE(2),
    payloadLength: data.readUInt32BE(4),
  };
}

export interface ExtraHeader {
  extraQubitId: number;
  remoteAppId: number;
  remoteNode: number;
  remotePort: number;
  actionLength: number;
  step: number;
  padding: number;
}

/** A fully populated extra header with zero defaults. */
export function extraHeader(fields: Partial<ExtraHeader> = {}): ExtraHeader {
  return {
    extraQubitId: fields.extraQubitId ?? 0,
    remoteAppId: fields.remoteAppId ?? 0,
    remoteNode: fields.remoteNode ?? 0,
    remotePort: fields.remotePort ?? 0,
    actionLength: fields.actionLength ?? 0,
    step: fields.step ?? 0,
    padding: fields.padding ?? 0,
  };
}

export function packExtra(extra: ExtraHeader): Buffer {
  const buf = Buffer.alloc(EXTRA_LEN);
  buf.writeUInt16BE(extra.extraQubitId, 0);
  buf.writeUInt16BE(extra.remoteAppId, 2);
  buf.writeUInt32BE(extra.remoteNode, 4);
  buf.writeUInt16BE(extra.remotePort, 8);
  buf.writeUInt32BE(extra.actionLength, 10);
  buf.writeUInt8(extra.step, 14);
  buf.writeUInt8(extra.padding, 15);
  return buf;
}

export function unpackExtra(data: Buffer): ExtraHeader {
  if (data.length !== EXTRA_LEN) {
    throw new ProtocolError(`extra header needs ${EXTRA_LEN} bytes`);
  }
  return {
    extraQubitId: data.readUInt16BE(0),
    remoteAppId: data.readUInt16BE(2),
    remoteNode: data.readUInt32BE(4),
    remotePort: data.readUInt16BE(8),
    actionLength: data.readUInt32BE(10),
    step: data.readUInt8(14),
    padding: data.readUInt8(15),
  };
}

// ---------------------------------------------------------------------
// command trees

/**
 * One command to encode. `extra` fields default to zero; the encoder
 * recomputes `actionLength` from the actual block bytes.
 */
export interface Command {
  qubitId: number;
  instruction: number;
  options: number;
  extra?: Partial<ExtraHeader> | null;
  block?: Command[];
}

/** One decoded command: extras concrete, the block fully parsed. */
export interface ParsedCommand {
  qubitId: number;
  instruction: number;
  options: number;
  extra: ExtraHeader | null;
  block: ParsedCommand[];
}

function packCommandHeader(
  qubitId: number,
  instruction: number,
  options: number,
): Buffer {
  const buf = Buffer.alloc(CMD_LEN);
  buf.writeUInt16BE(qubitId, 0);
  buf.writeUInt8(instruction, 2);
  buf.writeUInt8(options, 3);
  return buf;
}

class Cursor {
  pos = 0;

  constructor(readonly data: Buffer) {}

  take(n: number): Buffer {
    if (this.pos + n > this.data.length) {
      throw new ProtocolError("command payload truncated");
    }
    const chunk = this.data.subarray(this.pos, this.pos + n);
    this.pos += n;
    return chunk;
  }

  get remaining(): number {
    return this.data.length - this.pos;
  }
}

function parseCommand(cur: Cursor, factoryTop: boolean): ParsedCommand {
  const head = cur.take(CMD_LEN);
  const qubitId = head.readUInt16BE(0);
  const instruction = head.readUInt8(2);
  const options = head.readUInt8(3);
  let extra: ExtraHeader | null = null;
  const block: ParsedCommand[] = [];
  if (commandHasExtra(instruction, options, factoryTop)) {
    extra = unpackExtra(cur.take(EXTRA_LEN));
    if (extra.actionLength) {
      if (!(options & (Opt.ACTION | Opt.IFTHEN))) {
        throw new ProtocolError("appended block without a block option");
      }
      const end = cur.pos + extra.actionLength;
      if (end > cur.data.length) {
        throw new ProtocolError("appended block exceeds the payload");
      }
      while (cur.pos < end) {
        block.push(parseCommand(cur, false));
      }
      if (cur.pos !== end) {
        throw new ProtocolError("appended block length does not line up");
      }
    } else if (options & (Opt.ACTION | Opt.IFTHEN)) {
      throw new ProtocolError("block option set but the block is empty");
    }
  }
  return { qubitId, instruction, options, extra, block };
}

/** Parse a COMMAND/FACTORY/GET_TIME payload into one command tree. */
export function parseMessageBody(
  msgType: number,
  payload: Buffer,
): ParsedCommand {
  const cur = new Cursor(payload);
  let cmd: ParsedCommand;
  if (msgType === MsgType.GET_TIME) {
    const head = cur.take(CMD_LEN);
    cmd = {
      qubitId: head.readUInt16BE(0),
      instruction: head.readUInt8(2),
      options: head.readUInt8(3),
      extra: null,
      block: [],
    };
  } else {
    cmd = parseCommand(cur, msgType === MsgType.FACTORY);
  }
  if (cur.remaining) {
    throw new ProtocolError(
      `${cur.remaining} unconsumed bytes after the command`,
    );
  }
  return cmd;
}

/** Serialize a command tree, recomputing extra headers' block lengths. */
export function encodeCommand(cmd: Command, factoryTop = false): Buffer {
  const blockBytes = Buffer.concat(
    (cmd.block ?? []).map((child) => encodeCommand(child)),
  );
  const head = packCommandHeader(cmd.qubitId, cmd.instruction, cmd.options);
  if (commandHasExtra(cmd.instruction, cmd.options, factoryTop)) {
    const extra = extraHeader({
      ...(cmd.extra ?? {}),
      actionLength: blockBytes.length,
    });
    return Buffer.concat([head, packExtra(extra), blockBytes]);
  }
  if (blockBytes.length) {
    throw new ProtocolError("a block requires a block option on the command");
  }
  return head;
}

export function encodeMessage(
  msgType: number,
  appId: number,
  payload: Buffer = Buffer.alloc(0),
  version: number = CQC_VERSION,
): Buffer {
  if (payload.length > MAX_PAYLOAD) {
    throw new ProtocolError(
      `payload of ${payload.length} bytes exceeds the ${MAX_PAYLOAD} cap`,
    );
  }
  const header = packHeader({
    version,
    msgType,
    appId,
    payloadLength: payload.length,
  });
  return Buffer.concat([header, payload]);
}

// ---------------------------------------------------------------------
// reply payloads

function packU64(value: number, label: string): Buffer {
  if (!Number.isSafeInteger(value) || value < 0) {
    throw new ProtocolError(`${label} must be a non-negative safe integer`);
  }
  const buf = Buffer.alloc(8);
  buf.writeBigUInt64BE(BigInt(value), 0);
  return buf;
}

function readU64(data: Buffer, offset: number, label: string): number {
  const value = data.readBigUInt64BE(offset);
  if (value > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new ProtocolError(`${label} exceeds the safe integer range`);
  }
  return Number(value);
}

export function packQubitId(qubitId: number): Buffer {
  const buf = Buffer.alloc(2);
  buf.writeUInt16BE(qubitId, 0);
  return buf;
}

export function unpackQubitId(payload: Buffer): number {
  if (payload.length !== 2) {
    throw new ProtocolError("qubit id payload must be 2 bytes");
  }
  return payload.readUInt16BE(0);
}

export function packMeasout(bit: number): Buffer {
  const buf = Buffer.alloc(1);
  buf.writeUInt8(bit, 0);
  return buf;
}

export function unpackMeasout(payload: Buffer): number {
  if (payload.length !== 1) {
    throw new ProtocolError("measurement payload must be 1 byte");
  }
  return payload.readUInt8(0);
}

export function packInfTime(ms: number): Buffer {
  return packU64(ms, "timestamp");
}

export function unpackInfTime(payload: Buffer): number {
  if (payload.length !== 8) {
    throw new ProtocolError("timestamp payload must be 8 bytes");
  }
  return readU64(payload, 0, "timestamp");
}

/** Metadata reported for one half of an entangled pair. */
export interface EprInfo {
  qubitId: number;
  nodeA: number;
  nodeB: number;
  sequence: number;
  createdAt: number;
}

export function packEprInfo(info: EprInfo): Buffer {
  const buf = Buffer.alloc(EPR_INFO_LEN);
  buf.writeUInt16BE(info.qubitId, 0);
  buf.writeUInt32BE(info.nodeA, 2);
  buf.writeUInt32BE(info.nodeB, 6);
  buf.writeUInt32BE(info.sequence, 10);
  packU64(info.createdAt, "pair timestamp").copy(buf, 14);
  return buf;
}

export function unpackEprInfo(payload: Buffer): EprInfo {
  if (payload.length !== EPR_INFO_LEN) {
    throw new ProtocolError(
      `entangled-pair payload must be ${EPR_INFO_LEN} bytes`,
    );
  }
  return {
    qubitId: payload.readUInt16BE(0),
    nodeA: payload.readUInt32BE(2),
    nodeB: payload.readUInt32BE(6),
    sequence: payload.readUInt32BE(10),
    createdAt: readU64(payload, 14, "pair timestamp"),
  };
}

export interface HelloReply {
  maxQubits: number;
  name: string;
}

export function packHelloReply(maxQubits: number, name: string): Buffer {
  const raw = Buffer.from(name, "utf-8");
  if (raw.length > 255) {
    throw new ProtocolError("node name too long for a hello reply");
  }
  const head = Buffer.alloc(3);
  head.writeUInt16BE(maxQubits, 0);
  head.writeUInt8(raw.length, 2);
  return Buffer.concat([head, raw]);
}

export function unpackHelloReply(payload: Buffer): HelloReply {
  if (payload.length < 3) {
    throw new ProtocolError("hello payload truncated");
  }
  const maxQubits = payload.readUInt16BE(0);
  const nameLen = payload.readUInt8(2);
  const raw = payload.subarray(3);
  if (raw.length !== nameLen) {
    throw new ProtocolError("hello payload name length mismatch");
  }
  return { maxQubits, name: raw.toString("utf-8") };
}
