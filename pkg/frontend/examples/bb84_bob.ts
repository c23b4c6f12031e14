/**
 * Receiver side of the basis-encoding example: wait for a qubit and
 * measure it in the standard basis (hB = 0) or the Hadamard basis
 * (hB = 1). When the bases match, the outcome is the sender's bit with
 * probability one.
 */

import { pathToFileURL } from "node:url";

import { connect } from "../src/index.js";

export async function bb84Bob(configPath: string, hB = 1): Promise<number> {
  // Establish a connection to the local node
  const Bob = await connect("Bob", configPath);

  // Wait to receive a qubit
  const q = await Bob.recvQubit();

  // If we chose the Hadamard basis to measure in, apply H
  if (hB === 1) await q.H();

  // Measure the qubit in the standard basis and store the outcome in m
  const m = await q.measure();

  // Print measurement outcome
  console.log(`Bobs meas. outcome: ${m}`);

  // Close the connection
  await Bob.close();
  return m;
}

if (import.meta.url === pathToFileURL(process.argv[1] ?? "").href) {
  const [configPath, hB] = process.argv.slice(2);
  if (!configPath) {
    console.error("usage: bb84_bob <config> [hB]");
    process.exit(2);
  }
  await bb84Bob(configPath, Number(hB ?? 1));
}
