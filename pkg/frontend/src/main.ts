/** Page bootstrap: wires the keyboard, the mutation queue, and the
 *  three views to one annotation session.
 *
 *  Query parameters: ?api=http://127.0.0.1:8008&seq=<name>
 */

import { ApiClient } from "./api.js";
import { AnnotatorController } from "./controller.js";
import { MutationQueue } from "./queue.js";
import { InitView, OverlayView, ReferenceView } from "./views.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function toast(message: string): void {
  const host = el<HTMLDivElement>("toasts");
  const node = document.createElement("div");
  node.className = "toast";
  node.textContent = message;
  host.appendChild(node);
  setTimeout(() => node.remove(), 4000);
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(location.search);
  const apiBase = params.get("api") ?? "http://127.0.0.1:8008";
  const api = new ApiClient(apiBase);

  const sequences = await api.listSequences();
  if (sequences.length === 0) {
    toast("server has no sequences");
    return;
  }
  const seqName = params.get("seq") ?? sequences[0].id;

  const initView = new InitView(el<HTMLCanvasElement>("init-view"));
  const refView = new ReferenceView(el<HTMLCanvasElement>("ref-view"));
  const overlayView = new OverlayView(el<HTMLCanvasElement>("overlay-view"));
  const status = el<HTMLDivElement>("status");

  const queue = new MutationQueue();
  let overlayBusy = false;

  const controller: AnnotatorController = new AnnotatorController(api, queue, {
    onState: (state) => {
      initView.render(state, controller.selected, controller.zoom);
      void refView.render(api, seqName, state.reference).catch(() => undefined);
      refreshOverlay();
      status.textContent =
        `corner ${controller.selected}  step ${state.step}px  ` +
        `ref ${state.reference}/${state.n_frames - 1}  ` +
        `undo ${state.undo_depth}  ${state.dirty ? "UNSAVED" : "saved"}`;
    },
    onSelect: () => {
      if (controller.state) {
        initView.render(controller.state, controller.selected, controller.zoom);
      }
    },
    onZoom: () => {
      if (controller.state) {
        initView.render(controller.state, controller.selected, controller.zoom);
      }
    },
    onError: toast,
  });

  function refreshOverlay(): void {
    // collapse bursts: one overlay request at a time, always rendered last
    if (overlayBusy || !controller.state) return;
    overlayBusy = true;
    void overlayView
      .render(api, controller.sessionId)
      .then((diag) => {
        if (diag) {
          el<HTMLDivElement>("overlay-stats").textContent =
            `err ${diag.alignmentError.toFixed(3)}px  ` +
            `mad ${(diag.overlayMad * 255).toFixed(2)}/255`;
        }
      })
      .finally(() => {
        overlayBusy = false;
      });
  }

  await initView.load(api, seqName);
  await controller.start(seqName);

  document.addEventListener("keydown", (ev) => {
    if (controller.handleKey(ev.key)) ev.preventDefault();
  });
  el<HTMLCanvasElement>("init-view").addEventListener(
    "wheel",
    (ev) => {
      controller.handleWheel(ev.deltaY);
      ev.preventDefault();
    },
    { passive: false },
  );

  el<HTMLDivElement>("seq-name").textContent = seqName;
}

boot().catch((err) => {
  toast(err instanceof Error ? err.message : String(err));
});
