import { describe, expect, it } from "vitest";

import { Client } from "../src/api.js";
import { Session } from "../src/session.js";

function fakeService() {
  let revision = 0;
  const log: string[] = [];
  const fetchImpl = async (url: string, init?: RequestInit) => {
    const path = new URL(url).pathname;
    log.push(`${init?.method ?? "GET"} ${path}`);
    if (path === "/api/instances") {
      return json({ instance_id: "inst01" });
    }
    if (path.endsWith("/edits")) {
      await new Promise((r) => setTimeout(r, 5)); // in-flight window
      revision += 1;
      return json({ revision });
    }
    if (path.endsWith("/undo")) {
      revision += 1;
      return json({ revision });
    }
    if (path.endsWith("/parts")) {
      return json({
        revision,
        parts: [
          { index: 0, q: [1, 0, 0, 0], t: [0, 0, 0], s: [0.5, 0.5, 0.5],
            query_scale: [1, 1, 1], active: true, color_override: null },
        ],
      });
    }
    throw new Error(`unexpected ${path}`);
  };
  return { fetchImpl, log, current: () => revision };
}

function json(body: unknown) {
  return new Response(JSON.stringify(body), {
    status: 200,
    headers: { "Content-Type": "application/json" },
  });
}

describe("session", () => {
  it("tracks acknowledged server revisions", async () => {
    const svc = fakeService();
    const s = new Session(new Client("http://svc", svc.fetchImpl));
    await s.load("obj000");
    expect(s.revision).toBe(0);
    const ok = await s.commitEdit({ op: "remove", part: 0, params: {} });
    expect(ok).toBe(true);
    expect(s.revision).toBe(svc.current());
  });

  it("allows at most one in-flight edit", async () => {
    const svc = fakeService();
    const s = new Session(new Client("http://svc", svc.fetchImpl));
    await s.load("obj000");
    const [a, b] = await Promise.all([
      s.commitEdit({ op: "remove", part: 0, params: {} }),
      s.commitEdit({ op: "restore", part: 0, params: {} }),
    ]);
    expect([a, b].filter(Boolean)).toHaveLength(1); // second commit rejected locally
    const edits = svc.log.filter((l) => l.includes("/edits"));
    expect(edits).toHaveLength(1);
  });

  it("resyncs state after a rejected edit", async () => {
    let rejected = false;
    const svc = fakeService();
    const failingFetch = async (url: string, init?: RequestInit) => {
      if (url.includes("/edits") && !rejected) {
        rejected = true;
        return new Response(JSON.stringify({ error: "concurrent edit" }), { status: 409 });
      }
      return svc.fetchImpl(url, init);
    };
    const errors: string[] = [];
    const s = new Session(new Client("http://svc", failingFetch), {
      onError: (m) => errors.push(m),
    });
    await s.load("obj000");
    const ok = await s.commitEdit({ op: "remove", part: 0, params: {} });
    expect(ok).toBe(false);
    expect(errors).toHaveLength(1);
    expect(s.revision).toBe(0); // resynced to the acknowledged revision
  });

  it("undo advances to a new server revision", async () => {
    const svc = fakeService();
    const s = new Session(new Client("http://svc", svc.fetchImpl));
    await s.load("obj000");
    await s.commitEdit({ op: "remove", part: 0, params: {} });
    const before = s.revision;
    await s.undo();
    expect(s.revision).toBe(before + 1); // revisions are append-only
  });
});
