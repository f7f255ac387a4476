/** Canvas rendering for the three synchronized views. DOM-only module;
 *  nothing here is imported by the tests. */

import { ApiClient, SessionState } from "./api.js";

const QUAD_COLOR = "#3fe07a";
const SELECTED_COLOR = "#ffd23f";
const GT_COLOR = "#4fa3ff";

function drawQuad(
  ctx: CanvasRenderingContext2D,
  quad: ArrayLike<number>[],
  selected: number | null,
  dashed = false,
): void {
  ctx.save();
  ctx.lineWidth = 1.5;
  ctx.strokeStyle = dashed ? GT_COLOR : QUAD_COLOR;
  if (dashed) ctx.setLineDash([6, 4]);
  ctx.beginPath();
  for (let i = 0; i < 4; i++) {
    const [x, y] = [quad[i][0], quad[i][1]];
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.closePath();
  ctx.stroke();
  ctx.setLineDash([]);
  for (let i = 0; i < 4; i++) {
    ctx.beginPath();
    ctx.arc(quad[i][0], quad[i][1], i === selected ? 5 : 3, 0, 2 * Math.PI);
    ctx.fillStyle = i === selected ? SELECTED_COLOR : ctx.strokeStyle as string;
    ctx.fill();
  }
  ctx.restore();
}

/** Zoomed view of frame 0 with the working quad, centered on the
 *  selected corner. */
export class InitView {
  private image: ImageBitmap | null = null;
  private readonly ctx: CanvasRenderingContext2D;

  constructor(private readonly canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext("2d")!;
  }

  async load(api: ApiClient, sequence: string): Promise<void> {
    this.image = await createImageBitmap(await api.frameBlob(sequence, 0));
  }

  render(state: SessionState, selected: number, zoom: number): void {
    const { width, height } = this.canvas;
    const ctx = this.ctx;
    ctx.save();
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, width, height);
    if (this.image) {
      const [cx, cy] = state.quad[selected];
      ctx.translate(width / 2 - cx * zoom, height / 2 - cy * zoom);
      ctx.scale(zoom, zoom);
      ctx.imageSmoothingEnabled = zoom < 2;
      ctx.drawImage(this.image, 0, 0);
      ctx.lineWidth = 1.5 / zoom;
      drawQuad(ctx, state.quad, selected);
    }
    ctx.restore();
  }
}

/** Reference frame with its ground-truth quad (dashed, when present). */
export class ReferenceView {
  private readonly ctx: CanvasRenderingContext2D;
  private shownFrame = -1;

  constructor(private readonly canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext("2d")!;
  }

  async render(api: ApiClient, sequence: string, t: number): Promise<void> {
    if (t === this.shownFrame) return;
    const [blob, quadAt] = await Promise.all([
      api.frameBlob(sequence, t),
      api.getQuad(sequence, t),
    ]);
    const image = await createImageBitmap(blob);
    const { width, height } = this.canvas;
    const scale = Math.min(width / image.width, height / image.height);
    const ctx = this.ctx;
    ctx.save();
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, width, height);
    ctx.translate(
      (width - image.width * scale) / 2,
      (height - image.height * scale) / 2,
    );
    ctx.scale(scale, scale);
    ctx.drawImage(image, 0, 0);
    if (quadAt.quad) {
      const pairs = [0, 1, 2, 3].map(
        (i) => [quadAt.quad![2 * i], quadAt.quad![2 * i + 1]] as [number, number],
      );
      drawQuad(ctx, pairs, null, true);
    }
    ctx.restore();
    this.shownFrame = t;
  }

  invalidate(): void {
    this.shownFrame = -1;
  }
}

/** Intensity-alignment blend fetched from the overlay endpoint. */
export class OverlayView {
  private readonly ctx: CanvasRenderingContext2D;

  constructor(private readonly canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext("2d")!;
  }

  /** Returns the diagnostic headers for the status bar. */
  async render(
    api: ApiClient,
    sid: string,
  ): Promise<{ alignmentError: number; overlayMad: number } | null> {
    let result;
    try {
      result = await api.fetchOverlay(sid);
    } catch {
      this.message("no overlay (missing ground truth?)");
      return null;
    }
    const image = await createImageBitmap(result.blob);
    const { width, height } = this.canvas;
    const scale = Math.min(width / image.width, height / image.height);
    const ctx = this.ctx;
    ctx.save();
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, width, height);
    ctx.translate(
      (width - image.width * scale) / 2,
      (height - image.height * scale) / 2,
    );
    ctx.scale(scale, scale);
    ctx.drawImage(image, 0, 0);
    ctx.restore();
    return { alignmentError: result.alignmentError, overlayMad: result.overlayMad };
  }

  private message(text: string): void {
    const { width, height } = this.canvas;
    this.ctx.fillStyle = "#111";
    this.ctx.fillRect(0, 0, width, height);
    this.ctx.fillStyle = "#777";
    this.ctx.font = "13px system-ui, sans-serif";
    this.ctx.textAlign = "center";
    this.ctx.fillText(text, width / 2, height / 2);
  }
}
