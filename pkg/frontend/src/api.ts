/** Typed client for the rendering/editing service.
 *
 * The client carries no edit math: every operation forwards user parameters
 * verbatim and lets the server compose transforms. Fetch is injectable so
 * tests can capture the exact wire traffic.
 */

export interface PartInfo {
  index: number;
  q: [number, number, number, number];
  t: [number, number, number];
  s: [number, number, number];
  query_scale: [number, number, number];
  active: boolean;
  color_override: [number, number, number] | null;
}

export interface CameraParams {
  azimuth: number;
  elevation: number;
  radius: number;
  width: number;
  height: number;
}

export interface EditRequest {
  op: "rigid" | "scale" | "color" | "clear_color" | "remove" | "restore" | "add";
  part: number;
  params: Record<string, unknown>;
}

export interface MixSelection {
  instance: string;
  part: number;
  shape: boolean;
  texture: boolean;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    private base: string,
    private fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.base + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        detail = ((await res.json()) as { error?: string }).error ?? detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  listObjects(): Promise<{ objects: string[] }> {
    return this.json("/api/objects");
  }

  createInstance(source: string, seed = 0): Promise<{ instance_id: string }> {
    return this.json("/api/instances", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ source, seed }),
    });
  }

  parts(instance: string, rev?: number): Promise<{ revision: number; parts: PartInfo[] }> {
    const q = rev === undefined ? "" : `?rev=${rev}`;
    return this.json(`/api/instances/${instance}/parts${q}`);
  }

  edit(instance: string, req: EditRequest): Promise<{ revision: number }> {
    return this.json(`/api/instances/${instance}/edits`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  undo(instance: string): Promise<{ revision: number }> {
    return this.json(`/api/instances/${instance}/undo`, { method: "POST" });
  }

  mix(selections: MixSelection[]): Promise<{ instance_id: string }> {
    return this.json("/api/mix", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ selections }),
    });
  }

  interpolate(a: string, b: string, alpha: number, channel = "both"): Promise<{ instance_id: string }> {
    return this.json("/api/interpolate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ a, b, alpha, channel }),
    });
  }

  renderUrl(instance: string, cam: CameraParams, rev?: number, samples?: number): string {
    const p = new URLSearchParams({
      azimuth: String(cam.azimuth),
      elevation: String(cam.elevation),
      radius: String(cam.radius),
      width: String(cam.width),
      height: String(cam.height),
    });
    if (rev !== undefined) p.set("rev", String(rev));
    if (samples !== undefined) p.set("samples", String(samples));
    return `${this.base}/api/instances/${instance}/render?${p.toString()}`;
  }

  async renderBlob(instance: string, cam: CameraParams, rev?: number, samples?: number): Promise<Blob> {
    const res = await this.fetchImpl(this.renderUrl(instance, cam, rev, samples));
    if (!res.ok) {
      let detail = res.statusText;
      let incident: string | undefined;
      try {
        const body = (await res.json()) as { error?: string; incident?: string };
        detail = body.error ?? detail;
        incident = body.incident;
      } catch {
        /* keep statusText */
      }
      throw new ApiError(res.status, incident ? `${detail} (incident ${incident})` : detail);
    }
    return res.blob();
  }
}
