/**
 * Network configuration: the node directory and its file format.
 *
 * A config file lists one node per line:
 *
 *     name host backend_port cqc_port
 *
 * Blank lines and `#` comments are ignored. Names must be unique and
 * every (host, port) pair must be unique across both port columns.
 */

import { readFileSync } from "node:fs";

import { ConfigError } from "./errors.js";

export interface NodeEntry {
  name: string;
  host: string;
  backendPort: number;
  cqcPort: number;
}

const DOTTED_QUAD = /^(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})$/;

/**
 * The host as a 32-bit integer (protocol node id). Only numeric IPv4
 * addresses are supported, plus `localhost` as an alias for 127.0.0.1.
 */
export function ipv4ToInt(host: string): number {
  const target = host === "localhost" ? "127.0.0.1" : host;
  const match = DOTTED_QUAD.exec(target);
  if (!match) {
    throw new ConfigError(
      `cannot resolve host '${host}': expected a numeric IPv4 address`,
    );
  }
  const parts = match.slice(1).map(Number);
  if (parts.some((part) => part > 255)) {
    throw new ConfigError(`cannot resolve host '${host}': octet above 255`);
  }
  const [a, b, c, d] = parts as [number, number, number, number];
  return ((a << 24) | (b << 16) | (c << 8) | d) >>> 0;
}

export function intToIpv4(value: number): string {
  return [
    (value >>> 24) & 0xff,
    (value >>> 16) & 0xff,
    (value >>> 8) & 0xff,
    value & 0xff,
  ].join(".");
}

export function hostIpv4(entry: NodeEntry): number {
  return ipv4ToInt(entry.host);
}

/** Immutable name -> endpoint map for one network. */
export class NodeDirectory {
  private readonly byName: Map<string, NodeEntry>;

  constructor(entries: NodeEntry[]) {
    const names = new Set(entries.map((entry) => entry.name));
    if (names.size !== entries.length) {
      throw new ConfigError("duplicate node names in directory");
    }
    const seen = new Set<string>();
    for (const entry of entries) {
      for (const port of [entry.backendPort, entry.cqcPort]) {
        if (!Number.isInteger(port) || port < 1 || port > 65535) {
          throw new ConfigError(
            `node ${entry.name}: port ${port} outside 1..65535`,
          );
        }
        const key = `${entry.host}:${port}`;
        if (seen.has(key)) {
          throw new ConfigError(`node ${entry.name}: ${key} already in use`);
        }
        seen.add(key);
      }
    }
    this.byName = new Map(entries.map((entry) => [entry.name, entry]));
  }

  get size(): number {
    return this.byName.size;
  }

  has(name: string): boolean {
    return this.byName.has(name);
  }

  names(): string[] {
    return [...this.byName.keys()].sort();
  }

  get(name: string): NodeEntry {
    const entry = this.byName.get(name);
    if (!entry) {
      throw new ConfigError(`unknown node '${name}'`);
    }
    return entry;
  }

  entries(): NodeEntry[] {
    return this.names().map((name) => this.get(name));
  }
}

export function parseConfig(text: string): NodeDirectory {
  const entries: NodeEntry[] = [];
  const lines = text.split(/\r?\n/);
  for (let i = 0; i < lines.length; i += 1) {
    const lineno = i + 1;
    const line = (lines[i] ?? "").split("#", 1)[0]!.trim();
    if (!line) {
      continue;
    }
    const fields = line.split(/\s+/);
    if (fields.length !== 4) {
      throw new ConfigError(
        `line ${lineno}: expected 'name host backend_port cqc_port', ` +
          `got ${fields.length} fields`,
      );
    }
    const [name, host, backendRaw, cqcRaw] = fields as [
      string,
      string,
      string,
      string,
    ];
    const backendPort = Number(backendRaw);
    const cqcPort = Number(cqcRaw);
    if (!Number.isInteger(backendPort) || !Number.isInteger(cqcPort)) {
      throw new ConfigError(`line ${lineno}: ports must be integers`);
    }
    entries.push({ name, host, backendPort, cqcPort });
  }
  if (!entries.length) {
    throw new ConfigError("config lists no nodes");
  }
  return new NodeDirectory(entries);
}

export function loadConfig(path: string): NodeDirectory {
  let text: string;
  try {
    text = readFileSync(path, "utf-8");
  } catch (err) {
    throw new ConfigError(`cannot read config '${path}': ${String(err)}`);
  }
  return parseConfig(text);
}

export function renderConfig(directory: NodeDirectory): string {
  const lines = directory
    .entries()
    .map(
      (entry) =>
        `${entry.name} ${entry.host} ${entry.backendPort} ${entry.cqcPort}`,
    );
  return lines.join("\n") + "\n";
}
