import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ActionTracker } from "../src/optimistic.js";
import { Poller, type PollResult } from "../src/poll.js";
import { fixtureManifest, fixtureShots, fixtureStatus, routedFetch, type Route } from "./helpers.js";

function makePoller(routes: Record<string, Route>, tracker = new ActionTracker()) {
  const results: PollResult[] = [];
  const api = new ApiClient("", routedFetch(routes));
  const poller = new Poller(api, tracker, (r) => results.push(r));
  return { poller, results, tracker };
}

describe("Poller.tick", () => {
  it("assembles status, shots and manifest into one snapshot", async () => {
    const { poller, results } = makePoller({
      "/v1/status": { status: 200, body: fixtureStatus() },
      "/v1/shots": { status: 200, body: fixtureShots() },
      "/v1/manifest": { status: 200, body: fixtureManifest() },
    });
    const result = await poller.tick();
    expect(results).toEqual([result]);
    if (!result.ok) throw new Error(result.error);
    expect(result.snapshot.status.stage).toBe("done");
    expect(result.snapshot.shots?.shots.length).toBe(3);
    expect(result.snapshot.manifest?.entries.length).toBe(4);
  });

  it("treats 404 shots and manifest as not-yet-produced, not errors", async () => {
    const { poller } = makePoller({
      "/v1/status": { status: 200, body: fixtureStatus({ stage: "analysis" }) },
    });
    const result = await poller.tick();
    if (!result.ok) throw new Error(result.error);
    expect(result.snapshot.shots).toBeNull();
    expect(result.snapshot.manifest).toBeNull();
  });

  it("reports an unreachable server instead of throwing", async () => {
    const results: PollResult[] = [];
    const api = new ApiClient("", async () => {
      throw new TypeError("connect refused");
    });
    const poller = new Poller(api, new ActionTracker(), (r) => results.push(r));
    const result = await poller.tick();
    expect(result.ok).toBe(false);
    if (result.ok) throw new Error("expected failure");
    expect(result.error).toContain("unreachable");
    expect(results.length).toBe(1);
  });
});

describe("token reconciliation", () => {
  const base = {
    "/v1/status": { status: 200, body: fixtureStatus() } as Route,
    "/v1/shots": { status: 200, body: fixtureShots() } as Route,
    "/v1/manifest": { status: 200, body: fixtureManifest() } as Route,
  };

  it("resolves actions whose tokens the server reports done", async () => {
    const tracker = new ActionTracker();
    const { action } = tracker.begin("regenerate", "s1c0", ["s1c1"]);
    const { poller } = makePoller(
      {
        ...base,
        [`/v1/tokens/${action.token}`]: {
          status: 200,
          body: { token: action.token, action: "regenerate", status: "done" },
        },
      },
      tracker,
    );
    await poller.tick();
    expect(tracker.overlay()).toEqual([]);
    expect(tracker.rejected()).toEqual([]);
  });

  it("resolves event-sourced records that carry no status field", async () => {
    const tracker = new ActionTracker();
    const { action } = tracker.begin("approve", "s1c0", []);
    const { poller } = makePoller(
      {
        ...base,
        [`/v1/tokens/${action.token}`]: {
          status: 200,
          body: { token: action.token, action: "approve" },
        },
      },
      tracker,
    );
    await poller.tick();
    expect(tracker.overlay()).toEqual([]);
  });

  it("fails actions whose tokens the server reports failed", async () => {
    const tracker = new ActionTracker();
    const { action } = tracker.begin("regenerate", "s1c0", []);
    const { poller } = makePoller(
      {
        ...base,
        [`/v1/tokens/${action.token}`]: {
          status: 200,
          body: { token: action.token, status: "failed", error: "backend gave up" },
        },
      },
      tracker,
    );
    await poller.tick();
    expect(tracker.overlay()).toEqual([]);
    expect(tracker.rejected()[0].message).toBe("backend gave up");
  });

  it("keeps waiting while a token is accepted or not yet registered", async () => {
    const tracker = new ActionTracker();
    const accepted = tracker.begin("regenerate", "s1c0", []).action;
    const unseen = tracker.begin("approve", "s1c1", []).action;
    const { poller } = makePoller(
      {
        ...base,
        [`/v1/tokens/${accepted.token}`]: {
          status: 200,
          body: { token: accepted.token, status: "accepted" },
        },
        // unseen.token has no route, so the lookup 404s
      },
      tracker,
    );
    await poller.tick();
    expect(tracker.overlay().length).toBe(2);
  });
});
