/**
 * Classical side-channel semantics: length-prefixed framing, ordered
 * delivery, the sender's retry window, and receive timeouts.
 */

import { afterEach, describe, expect, test } from "vitest";

import {
  ClassicalMailbox,
  MAX_MESSAGE,
  sendClassicalMessage,
} from "../src/classical.js";
import { ClassicalChannelError, TimeoutError } from "../src/errors.js";
import { freePort } from "./helpers/ports.js";

const cleanups: Array<() => Promise<void> | void> = [];

afterEach(async () => {
  while (cleanups.length) {
    await cleanups.pop()!();
  }
});

async function openMailbox(): Promise<ClassicalMailbox> {
  const port = await freePort();
  const mailbox = new ClassicalMailbox("127.0.0.1", port);
  await mailbox.start();
  cleanups.push(() => mailbox.close());
  return mailbox;
}

describe("round trips", () => {
  test("a message survives the wire intact", async () => {
    const mailbox = await openMailbox();
    const data = Uint8Array.from([0, 1, 2, 253, 254, 255]);
    await sendClassicalMessage("127.0.0.1", mailbox.port, data);
    expect([...(await mailbox.receive())]).toEqual([...data]);
  });

  test("an empty message is legal", async () => {
    const mailbox = await openMailbox();
    await sendClassicalMessage("127.0.0.1", mailbox.port, new Uint8Array(0));
    expect((await mailbox.receive()).length).toBe(0);
  });

  test("messages arrive in the order they were sent", async () => {
    const mailbox = await openMailbox();
    await sendClassicalMessage("127.0.0.1", mailbox.port, Uint8Array.from([1]));
    await sendClassicalMessage(
      "127.0.0.1",
      mailbox.port,
      Uint8Array.from([2, 2]),
    );
    await sendClassicalMessage(
      "127.0.0.1",
      mailbox.port,
      Uint8Array.from([3, 3, 3]),
    );
    expect((await mailbox.receive()).length).toBe(1);
    expect((await mailbox.receive()).length).toBe(2);
    expect((await mailbox.receive()).length).toBe(3);
  });

  test("a large message crosses in one piece", async () => {
    const mailbox = await openMailbox();
    const data = new Uint8Array(200_000);
    for (let i = 0; i < data.length; i++) {
      data[i] = i % 251;
    }
    await sendClassicalMessage("127.0.0.1", mailbox.port, data);
    const got = await mailbox.receive();
    expect(got.length).toBe(data.length);
    expect(Buffer.from(got).equals(Buffer.from(data))).toBe(true);
  });
});

describe("failure modes", () => {
  test("an absent listener exhausts the retry window", async () => {
    const port = await freePort();
    const started = Date.now();
    await expect(
      sendClassicalMessage("127.0.0.1", port, Uint8Array.from([1]), {
        retryWindowMs: 300,
        retryIntervalMs: 25,
      }),
    ).rejects.toBeInstanceOf(ClassicalChannelError);
    expect(Date.now() - started).toBeGreaterThanOrEqual(250);
  });

  test("a listener that appears inside the window gets the message", async () => {
    const port = await freePort();
    const mailbox = new ClassicalMailbox("127.0.0.1", port);
    cleanups.push(() => mailbox.close());
    const pending = sendClassicalMessage(
      "127.0.0.1",
      port,
      Uint8Array.from([42]),
      { retryWindowMs: 5_000, retryIntervalMs: 25 },
    );
    await new Promise((resolve) => setTimeout(resolve, 250));
    await mailbox.start();
    await pending;
    expect([...(await mailbox.receive())]).toEqual([42]);
  });

  test("receive gives up after its timeout", async () => {
    const mailbox = await openMailbox();
    const started = Date.now();
    await expect(mailbox.receive(150)).rejects.toBeInstanceOf(TimeoutError);
    expect(Date.now() - started).toBeGreaterThanOrEqual(100);
  });

  test("oversized messages are refused before connecting", async () => {
    await expect(
      sendClassicalMessage(
        "127.0.0.1",
        1,
        new Uint8Array(MAX_MESSAGE + 1),
      ),
    ).rejects.toThrow(/exceeds/);
  });

  test("closing the mailbox rejects waiting receivers", async () => {
    const mailbox = await openMailbox();
    const waiting = mailbox.receive(10_000);
    const guard = waiting.catch((e: unknown) => e);
    await mailbox.close();
    expect(await guard).toBeInstanceOf(ClassicalChannelError);
  });
});
