// @vitest-environment node
/** Round trip against the real session service started by global setup. */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { ApiError, SessionApi } from "../src/api.js";

const SETUP_DIR = new URL("./setup/", import.meta.url).pathname;

interface Expected {
  session: {
    model: string;
    checkpoint: string;
    mode: "live" | "simulated";
    seed: number;
    n_particles: number;
  };
  designs: number[];
  outcomes: number[];
}

let api: SessionApi;
let expected: Expected;
let fixtureDir: string;

beforeAll(() => {
  const info = JSON.parse(readFileSync(join(SETUP_DIR, "server.json"), "utf8"));
  api = new SessionApi(info.baseUrl);
  fixtureDir = info.fixtureDir;
  expected = JSON.parse(readFileSync(join(fixtureDir, "expected.json"), "utf8"));
});

describe("simulated session round trip", () => {
  it("reproduces the offline evaluation rollout exactly", async () => {
    const created = await api.createSession(expected.session);
    const designs = [created.design.values[0]];
    const outcomes: number[] = [];
    for (;;) {
      const step = await api.postOutcome(created.session_id);
      outcomes.push(step.outcome);
      if (step.done) break;
      designs.push(step.design!.values[0]);
    }
    expect(designs).toEqual(expected.designs);
    expect(outcomes).toEqual(expected.outcomes);
  });

  it("serves a posterior with n points and unit total weight", async () => {
    const created = await api.createSession({ ...expected.session, seed: 11 });
    await api.postOutcome(created.session_id);
    const n = 50;
    const post = await api.posterior(created.session_id, n);
    expect(post.points).toHaveLength(n);
    const total = post.points.reduce((s, p) => s + p.weight, 0);
    expect(Math.abs(total - 1)).toBeLessThan(1e-9);
  });

  it("reconstructs the identical view from GET after steps", async () => {
    const created = await api.createSession({ ...expected.session, seed: 12 });
    const step = await api.postOutcome(created.session_id);
    const view = await api.sessionView(created.session_id);
    expect(view.step).toBe(step.step);
    expect(view.history).toHaveLength(1);
    expect(view.history[0].outcome).toBe(step.outcome);
    expect(view.pending_design?.values).toEqual(step.design?.values);
  });
});

describe("live-mode validation", () => {
  it("rejects a prey outcome above N0 with a structured 422", async () => {
    const created = await api.createSession({
      model: "prey",
      checkpoint: "train_prey_dense_seed1",
      mode: "live",
      seed: 3,
      n_particles: 100,
    });
    const n0 = created.design.values[0];
    let caught: ApiError | undefined;
    try {
      await api.postOutcome(created.session_id, n0 + 1);
    } catch (err) {
      caught = err as ApiError;
    }
    expect(caught).toBeInstanceOf(ApiError);
    expect(caught!.status).toBe(422);
    expect(caught!.code).toBeTruthy();
    expect(caught!.message).toContain(`[0, ${n0}]`);
  });
});
