/**
 * Sender side of the basis-encoding example: prepare H^hA X^x |0> and
 * ship it to Bob. The bits `x` and `hA` pick one of the four states
 * |0>, |1>, |+>, |->.
 */

import { pathToFileURL } from "node:url";

import { connect } from "../src/index.js";

export async function bb84Alice(
  configPath: string,
  hA = 1,
  x = 0,
): Promise<void> {
  // Establish a connection to the local node
  const Alice = await connect("Alice", configPath);

  // Create new qubit
  const q = await Alice.newQubit();

  // if x=1, flip |0> to |1>
  if (x === 1) await q.X();

  // if h_A=1, convert to Hadamard basis
  if (hA === 1) await q.H();

  // Send qubit to Bob
  await Alice.sendQubit(q, "Bob");

  // Close the connection
  await Alice.close();
}

if (import.meta.url === pathToFileURL(process.argv[1] ?? "").href) {
  const [configPath, hA, x] = process.argv.slice(2);
  if (!configPath) {
    console.error("usage: bb84_alice <config> [hA] [x]");
    process.exit(2);
  }
  await bb84Alice(configPath, Number(hA ?? 1), Number(x ?? 0));
}
