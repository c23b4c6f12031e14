/**
 * Receiver side of the teleportation example: collect the entangled
 * pair half, wait for the sender's correction bits, fix up the state,
 * and measure. For a teleported |+> the outcome is 0 or 1 with equal
 * probability.
 */

import { pathToFileURL } from "node:url";

import { connect } from "../src/index.js";

export async function teleportBob(configPath: string): Promise<number> {
  // Initialize the connection
  const Bob = await connect("Bob", configPath);

  // Make an entangled pair with Alice
  const qB = await Bob.recvEPR();

  // Receive info about corrections
  const data = await Bob.recvClassical();
  const message = Array.from(data);
  const a = message[0]!;
  const b = message[1]!;

  // Apply corrections
  if (b === 1) await qB.X();
  if (a === 1) await qB.Z();

  // Measure qubit
  const m = await qB.measure();
  console.log(`Bob meas. out.: ${m}`);

  // Stop the connection
  await Bob.close();
  return m;
}

if (import.meta.url === pathToFileURL(process.argv[1] ?? "").href) {
  const [configPath] = process.argv.slice(2);
  if (!configPath) {
    console.error("usage: teleport_bob <config>");
    process.exit(2);
  }
  await teleportBob(configPath);
}
