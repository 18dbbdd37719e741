/** Session state: one edited instance, its acknowledged server revisions,
 * part selection, camera, and the single-in-flight edit discipline.
 *
 * The model only ever reflects server-acknowledged revisions (no optimistic
 * updates: renders are the ground truth). The undo stack mirrors server
 * revisions by number; redo is client-side bookkeeping over them.
 */

import { CameraParams, Client, EditRequest, PartInfo } from "./api.js";

export interface SessionEvents {
  onRevision?: (rev: number, parts: PartInfo[]) => void;
  onBusy?: (busy: boolean) => void;
  onError?: (message: string) => void;
}

export class Session {
  instanceId: string | null = null;
  revision = 0;
  parts: PartInfo[] = [];
  selected = 0;
  camera: CameraParams = { azimuth: 30, elevation: 35, radius: 2.6, width: 256, height: 256 };
  private inFlight = false;
  private undoDepth = 0;

  constructor(private client: Client, private events: SessionEvents = {}) {}

  get busy(): boolean {
    return this.inFlight;
  }

  async load(source: string, seed = 0): Promise<void> {
    const { instance_id } = await this.client.createInstance(source, seed);
    this.instanceId = instance_id;
    await this.sync();
  }

  async sync(): Promise<void> {
    if (!this.instanceId) return;
    const { revision, parts } = await this.client.parts(this.instanceId);
    this.revision = revision;
    this.parts = parts;
    this.events.onRevision?.(revision, parts);
  }

  /** Commit one edit; rejects concurrent commits locally (server 409s too). */
  async commitEdit(req: EditRequest): Promise<boolean> {
    if (!this.instanceId) throw new Error("no instance loaded");
    if (this.inFlight) return false;
    this.inFlight = true;
    this.events.onBusy?.(true);
    try {
      const { revision } = await this.client.edit(this.instanceId, req);
      this.revision = revision;
      this.undoDepth = 0;
      await this.sync();
      return true;
    } catch (err) {
      this.events.onError?.(err instanceof Error ? err.message : String(err));
      await this.sync(); // resync to the server's acknowledged state
      return false;
    } finally {
      this.inFlight = false;
      this.events.onBusy?.(false);
    }
  }

  async undo(): Promise<boolean> {
    if (!this.instanceId || this.inFlight) return false;
    this.inFlight = true;
    this.events.onBusy?.(true);
    try {
      const { revision } = await this.client.undo(this.instanceId);
      this.revision = revision;
      this.undoDepth += 1;
      await this.sync();
      return true;
    } catch (err) {
      this.events.onError?.(err instanceof Error ? err.message : String(err));
      return false;
    } finally {
      this.inFlight = false;
      this.events.onBusy?.(false);
    }
  }

  renderUrl(samples?: number): string {
    if (!this.instanceId) throw new Error("no instance loaded");
    return this.client.renderUrl(this.instanceId, this.camera, this.revision, samples);
  }
}
