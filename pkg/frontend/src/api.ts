/** Typed client for the annotation service. All geometry math stays
 *  server-side; this module only moves JSON and image blobs. */

export interface SequenceSummary {
  id: string;
  n_frames: number;
  default_reference: number;
}

export interface SequenceInfo extends SequenceSummary {
  gt_present: boolean[];
}

/** Mirror of the server session state; the client never derives any of
 *  these fields locally. */
export interface SessionState {
  id: string;
  sequence: string;
  quad: [number, number][];
  step: number;
  reference: number;
  undo_depth: number;
  dirty: boolean;
  n_frames: number;
}

export interface AnnotationInfo {
  original: number[];
  reannotation: number[] | null;
  current: number[];
}

export interface QuadAt {
  frame: number;
  quad: number[] | null;
}

export interface OverlayResult {
  blob: Blob;
  alignmentError: number;
  overlayMad: number;
}

export type NudgeDir = "up" | "down" | "left" | "right";
export type StepOp = "double" | "halve";

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`${status}: ${detail}`);
  }
}

export class ApiClient {
  private readonly fetchFn: typeof fetch;

  constructor(readonly base: string, fetchFn?: typeof fetch) {
    // bind so browser fetch keeps its expected receiver
    this.fetchFn = (fetchFn ?? fetch).bind(globalThis);
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, {
      headers: { "content-type": "application/json", accept: "application/json" },
      ...init,
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  listSequences(): Promise<SequenceSummary[]> {
    return this.json("/sequences");
  }

  sequenceInfo(name: string): Promise<SequenceInfo> {
    return this.json(`/sequences/${encodeURIComponent(name)}`);
  }

  getQuad(name: string, t: number): Promise<QuadAt> {
    return this.json(`/sequences/${encodeURIComponent(name)}/quads/${t}`);
  }

  getAnnotation(name: string): Promise<AnnotationInfo> {
    return this.json(`/sequences/${encodeURIComponent(name)}/annotation`);
  }

  createSession(sequence: string): Promise<SessionState> {
    return this.json("/sessions", {
      method: "POST",
      body: JSON.stringify({ sequence }),
    });
  }

  getSession(sid: string): Promise<SessionState> {
    return this.json(`/sessions/${sid}`);
  }

  nudge(sid: string, corner: number, dir: NudgeDir): Promise<SessionState> {
    return this.json(`/sessions/${sid}/nudge`, {
      method: "POST",
      body: JSON.stringify({ corner, dir }),
    });
  }

  step(sid: string, op: StepOp): Promise<SessionState> {
    return this.json(`/sessions/${sid}/step`, {
      method: "POST",
      body: JSON.stringify({ op }),
    });
  }

  undo(sid: string): Promise<SessionState> {
    return this.json(`/sessions/${sid}/undo`, { method: "POST" });
  }

  setReference(sid: string, index: number): Promise<SessionState> {
    return this.json(`/sessions/${sid}/reference`, {
      method: "POST",
      body: JSON.stringify({ index }),
    });
  }

  save(sid: string): Promise<SessionState> {
    return this.json(`/sessions/${sid}/save`, { method: "POST" });
  }

  /** Frame image as PNG (browsers cannot decode the raw PGM variant). */
  async frameBlob(name: string, t: number): Promise<Blob> {
    const res = await this.fetchFn(
      `${this.base}/sequences/${encodeURIComponent(name)}/frames/${t}`,
      { headers: { accept: "image/png" } },
    );
    if (!res.ok) throw new ApiError(res.status, res.statusText);
    return res.blob();
  }

  /** Overlay blend plus the diagnostic headers. */
  async fetchOverlay(sid: string, ref?: number): Promise<OverlayResult> {
    const q = ref === undefined ? "" : `?ref=${ref}`;
    const res = await this.fetchFn(`${this.base}/sessions/${sid}/overlay${q}`, {
      headers: { accept: "image/png" },
    });
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = (await res.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* image or empty body */
      }
      throw new ApiError(res.status, detail);
    }
    return {
      blob: await res.blob(),
      alignmentError: Number(res.headers.get("x-alignment-error") ?? "NaN"),
      overlayMad: Number(res.headers.get("x-overlay-mad") ?? "NaN"),
    };
  }
}
