/** Round trip against the real backend: boots `quadtrack annot-serve`
 *  on generated demo data, drives it with the production client, and
 *  checks client/server parity after 100 scripted keystrokes. */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, SessionState } from "../src/api.js";
import { AnnotatorController } from "../src/controller.js";
import { MutationQueue } from "../src/queue.js";
import { keystrokeScript } from "./parity.test.js";

const REPO_ROOT = join(fileURLToPath(new URL(".", import.meta.url)), "..", "..");

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const { port } = srv.address() as { port: number };
      srv.close(() => resolve(port));
    });
    srv.on("error", reject);
  });
}

async function waitForServer(base: string, timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const res = await fetch(`${base}/sequences`);
      if (res.ok) return;
    } catch {
      /* not up yet */
    }
    if (Date.now() > deadline) throw new Error(`backend not reachable at ${base}`);
    await new Promise((r) => setTimeout(r, 250));
  }
}

describe("integration with the real annotation service", () => {
  let proc: ChildProcess | null = null;
  let dataDir = "";
  let base = "";

  beforeAll(async () => {
    dataDir = mkdtempSync(join(tmpdir(), "annot-ui-"));
    const gen = spawnSync(
      "python3",
      [join(REPO_ROOT, "scripts", "make_demo_data.py"), "--out", dataDir, "--no-flows"],
      { encoding: "utf-8" },
    );
    if (gen.status !== 0) {
      throw new Error(`demo data generation failed:\n${gen.stderr}`);
    }

    const port = await freePort();
    base = `http://127.0.0.1:${port}`;
    proc = spawn(
      "python3",
      ["-m", "quadtrack", "annot-serve", "--data", dataDir, "--port", String(port)],
      { stdio: "ignore" },
    );
    await waitForServer(base, 60_000);
  });

  afterAll(() => {
    proc?.kill("SIGTERM");
    if (dataDir) rmSync(dataDir, { recursive: true, force: true });
  });

  it("lists the generated sequences", async () => {
    const api = new ApiClient(base);
    const seqs = await api.listSequences();
    expect(seqs.map((s) => s.id).sort()).toEqual(["drift", "grow", "occluded"]);
  });

  it("a new session opens on the sequence's default reference frame", async () => {
    const api = new ApiClient(base);
    const info = (await api.listSequences()).find((s) => s.id === "grow")!;
    const session = await api.createSession("grow");
    expect(session.reference).toBe(info.default_reference);
  });

  it("keeps client and server quads identical through 100 keystrokes", async () => {
    const api = new ApiClient(base);
    const queue = new MutationQueue();
    const rendered: SessionState[] = [];
    const controller = new AnnotatorController(api, queue, {
      onState: (s) => rendered.push(s),
    });
    await controller.start("drift");

    for (const key of keystrokeScript(100, 2718)) controller.handleKey(key);
    await queue.idle();

    const fresh = await api.getSession(controller.sessionId);
    expect(controller.state!.quad).toEqual(fresh.quad);
    expect(controller.state!.step).toBe(fresh.step);
    expect(controller.state!.reference).toBe(fresh.reference);
    expect(controller.state!.undo_depth).toBe(fresh.undo_depth);
    expect(rendered[rendered.length - 1]!.quad).toEqual(fresh.quad);
  });

  it("nudge then opposite nudge restores the quad bit-exactly", async () => {
    const api = new ApiClient(base);
    const s0 = await api.createSession("grow");
    await api.step(s0.id, "halve"); // sub-pixel step exercises the grid exactness
    const before = (await api.getSession(s0.id)).quad;
    await api.nudge(s0.id, 2, "right");
    await api.nudge(s0.id, 2, "left");
    const after = (await api.getSession(s0.id)).quad;
    expect(after).toEqual(before);
  });

  it("overlay diagnostics arrive as headers", async () => {
    const api = new ApiClient(base);
    // occluded is never saved to by the other tests, so its session
    // starts from the pristine annotation
    const s = await api.createSession("occluded");
    const overlay = await api.fetchOverlay(s.id);
    expect(overlay.alignmentError).toBe(0); // untouched annotation
    expect(Number.isFinite(overlay.overlayMad)).toBe(true);
    expect(overlay.blob.size).toBeGreaterThan(0);
  });
});
