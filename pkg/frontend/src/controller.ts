/** Keyboard-driven session controller.
 *
 *  Every mutation goes through the queue, and the rendered state is
 *  always the last server response; the client never moves a corner
 *  itself. Corner selection and zoom are the only local state.
 */

import { ApiClient, NudgeDir, SessionState, StepOp } from "./api.js";
import { MutationQueue } from "./queue.js";

export interface ControllerEvents {
  /** Fired with the authoritative state after every settled mutation. */
  onState(state: SessionState): void;
  onSelect(corner: number): void;
  onZoom(zoom: number): void;
  /** Non-blocking error surface (toast). */
  onError(message: string): void;
}

const KEY_DIRS: Record<string, NudgeDir> = {
  ArrowUp: "up",
  ArrowDown: "down",
  ArrowLeft: "left",
  ArrowRight: "right",
};

export const ZOOM_MIN = 1;
export const ZOOM_MAX = 32;

export class AnnotatorController {
  state: SessionState | null = null;
  selected = 0;
  zoom = 4;

  constructor(
    private readonly api: ApiClient,
    private readonly queue: MutationQueue,
    private readonly events: Partial<ControllerEvents> = {},
  ) {}

  get sessionId(): string {
    if (!this.state) throw new Error("no session");
    return this.state.id;
  }

  async start(sequence: string): Promise<SessionState> {
    const state = await this.api.createSession(sequence);
    this.state = state;
    this.events.onState?.(state);
    return state;
  }

  /** Returns true when the key was consumed. */
  handleKey(key: string): boolean {
    if (!this.state) return false;
    const dir = KEY_DIRS[key];
    if (dir) {
      const corner = this.selected; // captured at keypress, not at send time
      this.mutate(() => this.api.nudge(this.sessionId, corner, dir));
      return true;
    }
    switch (key) {
      case "Tab":
        this.selected = (this.selected + 1) % 4;
        this.events.onSelect?.(this.selected);
        return true;
      case "+":
      case "=":
        return this.stepSize("double");
      case "-":
      case "_":
        return this.stepSize("halve");
      case "[":
        return this.stepReference(-1);
      case "]":
        return this.stepReference(+1);
      case "s":
      case "S":
        this.mutate(() => this.api.save(this.sessionId));
        return true;
      case "u":
      case "U":
        this.mutate(() => this.api.undo(this.sessionId));
        return true;
      default:
        return false;
    }
  }

  /** Scroll-wheel zoom; the view centers on the selected corner. */
  handleWheel(deltaY: number): void {
    const factor = deltaY < 0 ? 1.25 : 1 / 1.25;
    this.zoom = Math.min(ZOOM_MAX, Math.max(ZOOM_MIN, this.zoom * factor));
    this.events.onZoom?.(this.zoom);
  }

  private stepSize(op: StepOp): boolean {
    this.mutate(() => this.api.step(this.sessionId, op));
    return true;
  }

  private stepReference(delta: number): boolean {
    this.mutate(async () => {
      // evaluated at send time so queued [ ] presses accumulate
      const st = this.state!;
      const target = st.reference + delta;
      if (target < 0 || target >= st.n_frames) return st; // silent no-op at the ends
      return this.api.setReference(st.id, target);
    });
    return true;
  }

  private mutate(send: () => Promise<SessionState>): void {
    void this.queue.enqueue(async () => {
      try {
        this.state = await send();
        this.events.onState?.(this.state);
      } catch (err) {
        this.events.onError?.(err instanceof Error ? err.message : String(err));
        // resync: the server is the source of truth even after a failure
        try {
          this.state = await this.api.getSession(this.sessionId);
          this.events.onState?.(this.state);
        } catch {
          /* session gone; keep the last known state */
        }
      }
    });
  }
}
