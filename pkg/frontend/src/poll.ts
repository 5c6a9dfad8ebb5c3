/** Polling loop: one snapshot per tick, plus token reconciliation for
 * in-flight actions. The server advertises its own staleness bound via
 * poll_interval_s; pushes are a non-goal. */

import { ApiClient, ApiError, UnreachableError } from "./api.js";
import { ActionTracker } from "./optimistic.js";
import type { ManifestPayload, ShotsPayload, StatusPayload } from "./types.js";

export interface Snapshot {
  status: StatusPayload;
  shots: ShotsPayload | null;
  manifest: ManifestPayload | null;
}

export type PollResult = { ok: true; snapshot: Snapshot } | { ok: false; error: string };

function isMissing(err: unknown): boolean {
  // 404 before a stage has produced its artifact is a normal state
  return err instanceof ApiError && err.status === 404;
}

export class Poller {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;

  constructor(
    private readonly api: ApiClient,
    private readonly tracker: ActionTracker,
    private readonly onResult: (result: PollResult) => void,
  ) {}

  async tick(): Promise<PollResult> {
    let result: PollResult;
    try {
      const status = await this.api.status();
      const shots = await this.fetchOptional(() => this.api.shots());
      const manifest = await this.fetchOptional(() => this.api.manifest());
      await this.reconcileTokens();
      result = { ok: true, snapshot: { status, shots, manifest } };
    } catch (err) {
      const message = err instanceof UnreachableError ? err.message : String(err);
      result = { ok: false, error: message };
    }
    this.onResult(result);
    return result;
  }

  private async fetchOptional<T>(get: () => Promise<T>): Promise<T | null> {
    try {
      return await get();
    } catch (err) {
      if (isMissing(err)) return null;
      throw err;
    }
  }

  /** Drop optimistic overlays whose tokens the server reports terminal. */
  private async reconcileTokens(): Promise<void> {
    for (const token of this.tracker.inflightTokens()) {
      let record;
      try {
        record = await this.api.token(token);
      } catch (err) {
        if (isMissing(err)) continue; // not registered yet; keep waiting
        throw err;
      }
      if (record.status === "failed") {
        this.tracker.fail(token, String(record.error ?? "mutation failed"));
      } else if (record.status === undefined || record.status === "done") {
        this.tracker.resolve(token);
      }
    }
  }

  start(): void {
    this.stopped = false;
    const loop = async () => {
      if (this.stopped) return;
      const result = await this.tick();
      const interval =
        result.ok && result.snapshot.status.poll_interval_s > 0
          ? result.snapshot.status.poll_interval_s * 1000
          : 1000;
      if (!this.stopped) this.timer = setTimeout(loop, interval);
    };
    void loop();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }
}
