/**
 * Sender side of the teleportation example: share an entangled pair
 * with Bob, prepare |+>, Bell-measure it against the local pair half,
 * and send the two correction bits over the classical channel.
 */

import { pathToFileURL } from "node:url";

import { connect } from "../src/index.js";

export async function teleportAlice(
  configPath: string,
): Promise<[number, number]> {
  // Initialize the connection
  const Alice = await connect("Alice", configPath);

  // Make an entangled pair with Bob
  const qA = await Alice.createEPR("Bob");

  // Create a qubit to teleport
  const q = await Alice.newQubit();

  // Prepare the qubit to teleport in |+>
  await q.H();

  // Apply the local teleportation operations
  await q.cnot(qA);
  await q.H();

  // Measure the qubits
  const a = await q.measure();
  const b = await qA.measure();
  console.log(`Alice meas. out.: a=${a}, b=${b}`);

  // Send corrections to Bob
  await Alice.sendClassical("Bob", [a, b]);

  // Stop the connection
  await Alice.close();
  return [a, b];
}

if (import.meta.url === pathToFileURL(process.argv[1] ?? "").href) {
  const [configPath] = process.argv.slice(2);
  if (!configPath) {
    console.error("usage: teleport_alice <config>");
    process.exit(2);
  }
  await teleportAlice(configPath);
}
