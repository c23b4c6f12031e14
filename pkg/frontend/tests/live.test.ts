/**
 * End-to-end runs against a live two-node network of real node
 * processes: the shipped example programs execute unmodified, and
 * their outcome statistics land where the protocols demand.
 */

import { afterAll, beforeAll, describe, expect, test, vi } from "vitest";

import { bb84Alice } from "../examples/bb84_alice.js";
import { bb84Bob } from "../examples/bb84_bob.js";
import { teleportAlice } from "../examples/teleport_alice.js";
import { teleportBob } from "../examples/teleport_bob.js";
import { connect } from "../src/connection.js";
import { ServerTimeoutError, TimeoutError } from "../src/errors.js";
import { LiveNetwork, startNetwork } from "./helpers/pynet.js";

// Upper bound for a one-degree-of-freedom chi-square at p = 0.01: a
// larger statistic would reject the uniform hypothesis.
const CHI2_CRITICAL = 6.63489660102;

const LONG = 600_000;

let net: LiveNetwork;

beforeAll(async () => {
  net = await startNetwork(["Alice", "Bob"], { seed: 9001 });
});

afterAll(async () => {
  await net?.stop();
});

/** Run a body with console.log silenced, restoring it afterwards. */
async function quietly<T>(body: () => Promise<T>): Promise<T> {
  const spy = vi.spyOn(console, "log").mockImplementation(() => {});
  try {
    return await body();
  } finally {
    spy.mockRestore();
  }
}

describe("key-exchange example", () => {
  test("prints the deterministic outcome for the default settings", async () => {
    const spy = vi.spyOn(console, "log").mockImplementation(() => {});
    try {
      const [, m] = await Promise.all([
        bb84Alice(net.configPath),
        bb84Bob(net.configPath),
      ]);
      expect(m).toBe(0);
      expect(spy.mock.calls.map((call) => call.join(" "))).toContain(
        "Bobs meas. outcome: 0",
      );
    } finally {
      spy.mockRestore();
    }
  }, LONG);

  test("matched bases reproduce the sender's bit every time", async () => {
    await quietly(async () => {
      const cases: Array<[number, number]> = [
        [0, 0],
        [0, 1],
        [1, 0],
        [1, 1],
      ];
      for (const [basis, x] of cases) {
        for (let trial = 0; trial < 100; trial++) {
          const [, m] = await Promise.all([
            bb84Alice(net.configPath, basis, x),
            bb84Bob(net.configPath, basis),
          ]);
          expect(
            m,
            `basis=${basis} x=${x} trial=${trial} gave ${m}`,
          ).toBe(x);
        }
      }
    });
  }, LONG);

  test("mismatched bases scatter the outcome evenly", async () => {
    const outcomes = await quietly(async () => {
      const cases: Array<[number, number, number]> = [
        [0, 0, 1],
        [0, 1, 1],
        [1, 0, 0],
        [1, 1, 0],
      ];
      const seen: number[] = [];
      for (const [hA, x, hB] of cases) {
        for (let trial = 0; trial < 250; trial++) {
          const [, m] = await Promise.all([
            bb84Alice(net.configPath, hA, x),
            bb84Bob(net.configPath, hB),
          ]);
          seen.push(m);
        }
      }
      return seen;
    });
    expect(outcomes).toHaveLength(1000);
    const ones = outcomes.reduce((a, b) => a + b, 0);
    const zeroFrequency = (outcomes.length - ones) / outcomes.length;
    const oneFrequency = ones / outcomes.length;
    expect(zeroFrequency).toBeGreaterThanOrEqual(0.4);
    expect(zeroFrequency).toBeLessThanOrEqual(0.6);
    expect(oneFrequency).toBeGreaterThanOrEqual(0.4);
    expect(oneFrequency).toBeLessThanOrEqual(0.6);
  }, LONG);
});

describe("teleportation example", () => {
  test("prints both parties' outcomes in the expected shape", async () => {
    const spy = vi.spyOn(console, "log").mockImplementation(() => {});
    try {
      const [[a, b], m] = await Promise.all([
        teleportAlice(net.configPath),
        teleportBob(net.configPath),
      ]);
      expect([0, 1]).toContain(a);
      expect([0, 1]).toContain(b);
      expect([0, 1]).toContain(m);
      const lines = spy.mock.calls.map((call) => call.join(" "));
      expect(lines).toContain(`Alice meas. out.: a=${a}, b=${b}`);
      expect(lines).toContain(`Bob meas. out.: ${m}`);
    } finally {
      spy.mockRestore();
    }
  }, LONG);

  test("a teleported superposition lands on 0 and 1 uniformly", async () => {
    const counts = [0, 0];
    await quietly(async () => {
      for (let trial = 0; trial < 1000; trial++) {
        const [, m] = await Promise.all([
          teleportAlice(net.configPath),
          teleportBob(net.configPath),
        ]);
        counts[m] = (counts[m] ?? 0) + 1;
      }
    });
    expect(counts[0]! + counts[1]!).toBe(1000);
    const chi2 =
      (counts[0]! - 500) ** 2 / 500 + (counts[1]! - 500) ** 2 / 500;
    expect(chi2, `counts=${counts.join("/")}`).toBeLessThan(CHI2_CRITICAL);
  }, LONG);
});

describe("library primitives on the live network", () => {
  test("pair halves always agree in the standard basis", async () => {
    const alice = await connect("Alice", net.configPath);
    const bob = await connect("Bob", net.configPath);
    try {
      for (let trial = 0; trial < 30; trial++) {
        const [qa, qb] = await Promise.all([
          alice.createEPR("Bob"),
          bob.recvEPR(),
        ]);
        expect(qa.entanglement?.sequence).toBe(qb.entanglement?.sequence);
        const [ma, mb] = await Promise.all([qa.measure(), qb.measure()]);
        expect(ma, `trial ${trial}: ${ma} vs ${mb}`).toBe(mb);
      }
    } finally {
      await alice.close();
      await bob.close();
    }
  }, LONG);

  test("superposition sampling is balanced", async () => {
    const alice = await connect("Alice", net.configPath);
    try {
      let ones = 0;
      const trials = 1000;
      for (let trial = 0; trial < trials; trial++) {
        const q = await alice.newQubit();
        await q.H();
        ones += await q.measure();
      }
      expect(ones / trials).toBeGreaterThanOrEqual(0.4);
      expect(ones / trials).toBeLessThanOrEqual(0.6);
    } finally {
      await alice.close();
    }
  }, LONG);

  test("a receive with nothing pending times out", async () => {
    const shortNet = await startNetwork(["Alice", "Bob"], {
      seed: 7337,
      recvTimeoutS: 0.5,
    });
    try {
      const bob = await connect("Bob", shortNet.configPath);
      try {
        await expect(bob.recvQubit()).rejects.toBeInstanceOf(
          ServerTimeoutError,
        );
        await expect(
          bob.recvClassical({ timeoutMs: 300 }),
        ).rejects.toBeInstanceOf(TimeoutError);
      } finally {
        await bob.close();
      }
    } finally {
      await shortNet.stop();
    }
  }, LONG);
});
