import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";

import { describe, expect, test } from "vitest";

import { ConfigError } from "../src/errors.js";
import {
  ipv4ToInt,
  intToIpv4,
  loadConfig,
  parseConfig,
  renderConfig,
} from "../src/netconf.js";

const SAMPLE = `
# two local nodes
Alice 127.0.0.1 8801 8802
Bob   10.0.0.2  8001 8002   # remote
`;

describe("config parsing", () => {
  test("reads entries, skipping comments and blanks", () => {
    const directory = parseConfig(SAMPLE);
    expect(directory.size).toBe(2);
    expect(directory.names()).toEqual(["Alice", "Bob"]);
    expect(directory.get("Bob")).toEqual({
      name: "Bob",
      host: "10.0.0.2",
      backendPort: 8001,
      cqcPort: 8002,
    });
    expect(directory.has("Charlie")).toBe(false);
  });

  test("round trips through renderConfig", () => {
    const directory = parseConfig(SAMPLE);
    expect(parseConfig(renderConfig(directory)).entries()).toEqual(
      directory.entries(),
    );
  });

  test("unknown names raise a config error", () => {
    expect(() => parseConfig(SAMPLE).get("Eve")).toThrow(ConfigError);
  });

  test("duplicate names are rejected", () => {
    expect(() =>
      parseConfig("a 127.0.0.1 1 2\na 127.0.0.1 3 4\n"),
    ).toThrow(/duplicate/);
  });

  test("reused endpoints are rejected", () => {
    expect(() =>
      parseConfig("a 127.0.0.1 1 2\nb 127.0.0.1 2 3\n"),
    ).toThrow(/already in use/);
  });

  test("ports outside 1..65535 are rejected", () => {
    expect(() => parseConfig("a 127.0.0.1 0 2\n")).toThrow(/outside/);
    expect(() => parseConfig("a 127.0.0.1 1 65536\n")).toThrow(/outside/);
  });

  test("malformed lines are rejected with their line number", () => {
    expect(() => parseConfig("a 127.0.0.1 1\n")).toThrow(/line 1/);
    expect(() => parseConfig("a 127.0.0.1 x y\n")).toThrow(/integers/);
  });

  test("an empty config is rejected", () => {
    expect(() => parseConfig("# nothing\n")).toThrow(/no nodes/);
  });

  test("loadConfig surfaces missing files as config errors", () => {
    expect(() => loadConfig("/nonexistent/path.conf")).toThrow(ConfigError);
  });

  test("loadConfig reads a file", () => {
    const dir = mkdtempSync(path.join(tmpdir(), "appclient-conf-"));
    const file = path.join(dir, "net.conf");
    writeFileSync(file, SAMPLE);
    expect(loadConfig(file).names()).toEqual(["Alice", "Bob"]);
  });
});

describe("address conversion", () => {
  test("dotted quads become protocol node ids", () => {
    expect(ipv4ToInt("10.0.0.2")).toBe(167772162);
    expect(ipv4ToInt("127.0.0.1")).toBe(2130706433);
    expect(ipv4ToInt("255.255.255.255")).toBe(4294967295);
    expect(ipv4ToInt("localhost")).toBe(2130706433);
  });

  test("conversion is invertible", () => {
    for (const host of ["10.0.0.2", "127.0.0.1", "192.168.7.44"]) {
      expect(intToIpv4(ipv4ToInt(host))).toBe(host);
    }
  });

  test("unresolvable hosts raise a config error", () => {
    expect(() => ipv4ToInt("not-an-address")).toThrow(ConfigError);
    expect(() => ipv4ToInt("300.0.0.1")).toThrow(/octet/);
  });
});
