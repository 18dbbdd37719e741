/** Orbit-render viewport: drag to orbit, wheel to zoom, debounced renders
 * keyed by (revision, camera) so stale frames never overwrite newer ones. */

import { Client } from "./api.js";
import { beginDrag, debounce, DragState, dragTo, zoom } from "./orbit.js";
import { Session } from "./session.js";

export class Viewport {
  private img: HTMLImageElement;
  private badge: HTMLElement;
  private overlay: HTMLElement;
  private drag: DragState | null = null;
  private requestSeq = 0;
  private cache = new Map<string, string>(); // render key -> object URL
  private scheduleRender: () => void;

  constructor(private session: Session, private client: Client, mount: HTMLElement) {
    this.img = document.createElement("img");
    this.img.className = "render";
    this.img.draggable = false;
    this.badge = document.createElement("div");
    this.badge.className = "badge";
    this.overlay = document.createElement("div");
    this.overlay.className = "overlay hidden";
    mount.append(this.img, this.badge, this.overlay);

    this.scheduleRender = debounce(() => void this.render(), 120);

    this.img.addEventListener("pointerdown", (ev) => {
      this.drag = beginDrag(this.session.camera, ev.clientX, ev.clientY);
      this.img.setPointerCapture(ev.pointerId);
    });
    this.img.addEventListener("pointermove", (ev) => {
      if (!this.drag) return;
      this.session.camera = dragTo(this.session.camera, this.drag, ev.clientX, ev.clientY);
      this.scheduleRender();
    });
    this.img.addEventListener("pointerup", () => (this.drag = null));
    this.img.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.session.camera = zoom(this.session.camera, ev.deltaY);
      this.scheduleRender();
    });
    new ResizeObserver(() => {
      const rect = this.img.getBoundingClientRect();
      const side = Math.max(64, Math.min(512, Math.round(Math.min(rect.width, rect.height))));
      if (side !== this.session.camera.width) {
        this.session.camera = { ...this.session.camera, width: side, height: side };
        this.scheduleRender();
      }
    }).observe(this.img);
  }

  key(): string {
    const c = this.session.camera;
    return [this.session.instanceId, this.session.revision, c.azimuth.toFixed(2),
            c.elevation.toFixed(2), c.radius.toFixed(3), c.width, c.height].join("|");
  }

  async render(): Promise<void> {
    if (!this.session.instanceId) return;
    const key = this.key();
    const cached = this.cache.get(key);
    if (cached) {
      this.img.src = cached;
      this.badge.textContent = `rev ${this.session.revision}`;
      return;
    }
    const seq = ++this.requestSeq;
    try {
      const blob = await this.client.renderBlob(
        this.session.instanceId, this.session.camera, this.session.revision,
      );
      if (seq !== this.requestSeq) return; // a newer request superseded this one
      const url = URL.createObjectURL(blob);
      this.cache.set(key, url);
      this.img.src = url;
      this.badge.textContent = `rev ${this.session.revision}`;
      this.overlay.classList.add("hidden");
    } catch (err) {
      this.overlay.textContent = err instanceof Error ? err.message : String(err);
      this.overlay.classList.remove("hidden");
    }
  }
}
