/** In-flight mutation bookkeeping. The view is a pure function of the
 * latest server snapshot plus these actions; once the server confirms a
 * token the action drops out and the snapshot alone wins again. */

export type ActionKind = "regenerate" | "approve";

export interface OptimisticAction {
  token: string;
  kind: ActionKind;
  subclipId: string;
  candidateId?: string;
  downstream: string[];
  state: "inflight" | "rejected";
  message?: string;
}

function newToken(): string {
  const c = globalThis.crypto;
  if (c?.randomUUID) return c.randomUUID();
  return `t-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}

export class ActionTracker {
  private actions = new Map<string, OptimisticAction>();

  /** Start an action, or hand back the one already in flight for the
   * same target so a double click can never submit a second job. The
   * caller only talks to the server when `created` is true. */
  begin(
    kind: ActionKind,
    subclipId: string,
    downstream: string[],
    candidateId?: string,
  ): { action: OptimisticAction; created: boolean } {
    for (const action of this.actions.values()) {
      if (action.state === "inflight" && action.kind === kind && action.subclipId === subclipId) {
        return { action, created: false };
      }
    }
    const action: OptimisticAction = {
      token: newToken(),
      kind,
      subclipId,
      candidateId,
      downstream,
      state: "inflight",
    };
    this.actions.set(action.token, action);
    return { action, created: true };
  }

  /** Server confirmed (or the token record reached a terminal state). */
  resolve(token: string): void {
    this.actions.delete(token);
  }

  /** Server refused (conflict, 4xx). The overlay drops immediately so
   * badges fall back to server truth, and the message stays around for
   * the banner; a later retry begins a fresh action with a new token. */
  fail(token: string, message: string): void {
    const action = this.actions.get(token);
    if (action) {
      action.state = "rejected";
      action.message = message;
    }
  }

  dismiss(token: string): void {
    this.actions.delete(token);
  }

  /** Actions whose badges should overlay the snapshot. */
  overlay(): OptimisticAction[] {
    return [...this.actions.values()].filter((a) => a.state === "inflight");
  }

  inflightTokens(): string[] {
    return this.overlay().map((a) => a.token);
  }

  rejected(): OptimisticAction[] {
    return [...this.actions.values()].filter((a) => a.state === "rejected");
  }
}
