/**
 * Spawn a live network out of `qnetsim run` node processes so the
 * client library can be exercised over real sockets. Each node is
 * ready once it prints its `ready ...` line.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";

import { freePorts } from "./ports.js";

const READY_TIMEOUT_MS = 45_000;

export interface LiveNetwork {
  configPath: string;
  names: string[];
  stop(): Promise<void>;
}

export interface NetworkOptions {
  seed?: number;
  recvTimeoutS?: number;
}

function waitReady(child: ChildProcess, name: string): Promise<void> {
  return new Promise((resolve, reject) => {
    let stdout = "";
    let stderr = "";
    const timer = setTimeout(() => {
      reject(
        new Error(
          `node ${name} not ready within ${READY_TIMEOUT_MS} ms\n` +
            `stdout: ${stdout}\nstderr: ${stderr}`,
        ),
      );
    }, READY_TIMEOUT_MS);
    child.stdout?.on("data", (chunk: Buffer) => {
      stdout += chunk.toString();
      if (stdout.includes("ready ")) {
        clearTimeout(timer);
        resolve();
      }
    });
    child.stderr?.on("data", (chunk: Buffer) => {
      stderr += chunk.toString();
    });
    child.once("exit", (code) => {
      clearTimeout(timer);
      reject(
        new Error(
          `node ${name} exited with ${code} before becoming ready\n` +
            `stdout: ${stdout}\nstderr: ${stderr}`,
        ),
      );
    });
  });
}

function stopChild(child: ChildProcess): Promise<void> {
  return new Promise((resolve) => {
    if (child.exitCode !== null || child.signalCode !== null) {
      resolve();
      return;
    }
    const killer = setTimeout(() => {
      child.kill("SIGKILL");
    }, 5_000);
    child.once("exit", () => {
      clearTimeout(killer);
      resolve();
    });
    child.kill("SIGTERM");
  });
}

export async function startNetwork(
  names: string[],
  options: NetworkOptions = {},
): Promise<LiveNetwork> {
  const dir = mkdtempSync(path.join(tmpdir(), "appclient-net-"));
  const ports = await freePorts(2 * names.length, 1000);
  const lines = names.map((name, i) => {
    const backendPort = ports[2 * i]!;
    const cqcPort = ports[2 * i + 1]!;
    return `${name} 127.0.0.1 ${backendPort} ${cqcPort}`;
  });
  const configPath = path.join(dir, "network.conf");
  writeFileSync(configPath, lines.join("\n") + "\n");

  const children: ChildProcess[] = [];
  const stop = async () => {
    await Promise.all(children.map(stopChild));
  };

  try {
    const ready: Promise<void>[] = [];
    for (const [i, name] of names.entries()) {
      const args = ["-m", "qnetsim.cli", "run", "--config", configPath, "--name", name];
      if (options.seed !== undefined) {
        args.push("--seed", String(options.seed + i));
      }
      if (options.recvTimeoutS !== undefined) {
        args.push("--recv-timeout", String(options.recvTimeoutS));
      }
      const child = spawn("python3", args, {
        cwd: dir,
        stdio: ["ignore", "pipe", "pipe"],
      });
      children.push(child);
      ready.push(waitReady(child, name));
    }
    await Promise.all(ready);
  } catch (err) {
    await stop();
    throw err;
  }

  return { configPath, names, stop };
}
