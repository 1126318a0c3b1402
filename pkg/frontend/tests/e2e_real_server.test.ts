// End-to-end: the built UI logic driving the real emulator over HTTP.
// Spawns `thunder serve` (the Python package must be installed), then walks
// the acceptance path: three sequential hint reveals, a wrong flag, the
// true flag, and the completion mark.

import { createHash } from "node:crypto";
import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { App } from "../src/app";
import { click, maybe, q, typeAndSubmitFlag, waitFor } from "./helpers";

const PORT = 18700 + Math.floor(Math.random() * 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const PROJECT = "webui-e2e-proj";

// same formula the server uses; recomputed here so the test knows the truth
function expectedFlag(seed: string, project: string): string {
  const digest = createHash("sha256").update(`${seed}:${project}`).digest("hex");
  return `CTF{${digest.slice(0, 16)}}`;
}

let server: ChildProcess | null = null;
const realFetch = globalThis.fetch;

async function serverReady(): Promise<void> {
  const deadline = Date.now() + 20000;
  while (Date.now() < deadline) {
    try {
      const response = await realFetch(`${BASE}/healthz`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
  throw new Error("emulator did not come up");
}

beforeAll(async () => {
  server = spawn(
    "python3",
    ["-m", "thunderctf.cli", "serve", "--addr", `127.0.0.1:${PORT}`, "--project", PROJECT],
    { stdio: "ignore" },
  );
  await serverReady();
});

afterAll(() => {
  server?.kill();
});

describe("web ui against the real emulator", () => {
  it("reveals three hints, rejects a wrong flag, accepts the true flag", async () => {
    document.body.innerHTML = '<div id="app"></div>';
    const app = new App(q("#app"), new ApiClient(BASE));
    await app.boot();

    // six shipped levels in the list
    await waitFor(() => document.querySelectorAll("#level-list li").length === 6);

    click('[data-ref="thunder/a1openbucket"] a');
    await waitFor(() => maybe("#reveal-btn") !== null);
    expect(q("#hint-count").textContent).toBe("0 / 3 revealed");

    // three sequential reveals; the counter mirrors the server every time
    for (const expected of [1, 2, 3]) {
      click("#reveal-btn");
      await waitFor(
        () => document.querySelectorAll("#hint-list .hint").length === expected,
      );
      expect(q("#hint-count").textContent).toBe(`${expected} / 3 revealed`);
    }
    await waitFor(() => q<HTMLButtonElement>("#reveal-btn").disabled);

    // wrong flag: incorrect banner, no completion
    typeAndSubmitFlag("CTF{0000000000000000}");
    await waitFor(() => maybe("#verdict-banner") !== null);
    expect(q("#verdict-banner").classList.contains("incorrect")).toBe(true);

    // true flag: correct banner + completion mark in the list
    typeAndSubmitFlag(expectedFlag("a1openbucket-seed-v1", PROJECT));
    await waitFor(() => q("#verdict-banner").classList.contains("correct"));
    click("#back-to-list");
    await waitFor(() => maybe("#level-list") !== null);
    expect(maybe('[data-ref="thunder/a1openbucket"] .completion-mark')).not.toBeNull();
    expect(maybe('[data-ref="thunder/a2finance"] .completion-mark')).toBeNull();
  });
});
