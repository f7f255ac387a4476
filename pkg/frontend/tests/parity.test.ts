/** Client/server parity under a scripted keystroke storm: after the
 *  queue drains, what the client renders must be exactly the server's
 *  session state, and mutations must never have overlapped. */

import { describe, expect, it } from "vitest";

import { ApiClient, SessionState } from "../src/api.js";
import { AnnotatorController } from "../src/controller.js";
import { MutationQueue } from "../src/queue.js";
import { MockServer } from "./mockserver.js";

/** deterministic PRNG so the 100-key script is reproducible */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const KEYS = [
  "ArrowUp",
  "ArrowDown",
  "ArrowLeft",
  "ArrowRight",
  "ArrowRight", // arrows weighted highest
  "ArrowLeft",
  "Tab",
  "Tab",
  "+",
  "-",
  "[",
  "]",
  "u",
  "s",
];

export function keystrokeScript(n: number, seed: number): string[] {
  const rnd = mulberry32(seed);
  return Array.from({ length: n }, () => KEYS[Math.floor(rnd() * KEYS.length)]);
}

describe("scripted keystroke parity", () => {
  it("client equals server after 100 keystrokes with jittered latency", async () => {
    const rnd = mulberry32(0xbeef);
    const server = new MockServer({
      delay: () => new Promise((r) => setTimeout(r, Math.floor(rnd() * 4))),
    });
    const api = new ApiClient("http://mock", server.fetch);
    const queue = new MutationQueue();
    const rendered: SessionState[] = [];
    const controller = new AnnotatorController(api, queue, {
      onState: (s) => rendered.push(s),
    });
    await controller.start("mock");

    const script = keystrokeScript(100, 42);
    // bursts of 1..6 keys dispatched synchronously, like a fast annotator
    let i = 0;
    while (i < script.length) {
      const burst = 1 + Math.floor(rnd() * 6);
      for (let k = 0; k < burst && i < script.length; k++, i++) {
        controller.handleKey(script[i]);
      }
      if (rnd() < 0.5) await new Promise((r) => setTimeout(r, 1));
    }
    await queue.idle();

    const session = [...server.sessions.values()][0];
    const serverState = session.state() as unknown as SessionState;

    // exact equality, not approximate: the client renders server floats verbatim
    expect(controller.state!.quad).toEqual(serverState.quad);
    expect(controller.state!.step).toBe(serverState.step);
    expect(controller.state!.reference).toBe(serverState.reference);
    expect(controller.state!.undo_depth).toBe(serverState.undo_depth);
    expect(controller.state!.dirty).toBe(serverState.dirty);

    // the renderer saw every settled mutation, ending on the final state
    expect(rendered[rendered.length - 1]).toEqual(controller.state);
    // one request in flight at any moment
    expect(server.peakMutations).toBe(1);
  });

  it("parity holds across different scripts and seeds", async () => {
    for (const seed of [7, 99, 1234]) {
      const server = new MockServer();
      const api = new ApiClient("http://mock", server.fetch);
      const queue = new MutationQueue();
      const controller = new AnnotatorController(api, queue, {});
      await controller.start("mock");
      for (const key of keystrokeScript(100, seed)) controller.handleKey(key);
      await queue.idle();
      const session = [...server.sessions.values()][0];
      expect(controller.state!.quad).toEqual(session.state().quad);
      expect(server.peakMutations).toBe(1);
    }
  });

  it("every nudge is undone by its opposite, bit-exactly", async () => {
    const server = new MockServer();
    const api = new ApiClient("http://mock", server.fetch);
    const queue = new MutationQueue();
    const controller = new AnnotatorController(api, queue, {});
    await controller.start("mock");
    const original = controller.state!.quad.map((p) => [...p]);

    const pairs: [string, string][] = [
      ["ArrowRight", "ArrowLeft"],
      ["ArrowUp", "ArrowDown"],
      ["ArrowDown", "ArrowUp"],
      ["ArrowLeft", "ArrowRight"],
    ];
    for (const [fwd, back] of pairs) {
      controller.handleKey("+"); // vary the step as we go
      controller.handleKey(fwd);
      controller.handleKey(back);
      await queue.idle();
      expect(controller.state!.quad).toEqual(original);
      controller.handleKey("Tab");
    }
  });
});
