/** Workbench wiring: object picker, viewport, inspector, mix panel,
 * interpolation slider. */

import { Client } from "./api.js";
import { PartInspector } from "./inspector.js";
import { MixPanel } from "./mixpanel.js";
import { Session } from "./session.js";
import { Viewport } from "./viewport.js";

const SERVICE = (window as unknown as { SERVICE_URL?: string }).SERVICE_URL ?? "http://127.0.0.1:8642";

async function boot(): Promise<void> {
  const client = new Client(SERVICE);
  const loadedInstances: string[] = [];

  const toast = document.getElementById("toast")!;
  const session = new Session(client, {
    onError: (msg) => {
      toast.textContent = msg;
      toast.classList.remove("hidden");
      setTimeout(() => toast.classList.add("hidden"), 2500);
    },
    onRevision: () => {
      inspector.refresh();
      void viewport.render();
    },
    onBusy: (busy) => document.body.classList.toggle("busy", busy),
  });

  const viewport = new Viewport(session, client, document.getElementById("viewport")!);
  const inspector = new PartInspector(session, document.getElementById("inspector")!);
  const mix = new MixPanel(
    client,
    document.getElementById("mixpanel")!,
    () => loadedInstances,
    (id) => void openInstance(id),
  );

  const picker = document.getElementById("objects") as HTMLSelectElement;
  const { objects } = await client.listObjects();
  for (const oid of [...objects, "sample"]) {
    const opt = document.createElement("option");
    opt.value = oid;
    opt.textContent = oid;
    picker.append(opt);
  }

  async function openInstance(id: string): Promise<void> {
    session.instanceId = id;
    if (!loadedInstances.includes(id)) loadedInstances.push(id);
    await session.sync();
    mix.render();
    updateSlider();
  }

  document.getElementById("load")!.addEventListener("click", async () => {
    await session.load(picker.value);
    if (session.instanceId && !loadedInstances.includes(session.instanceId)) {
      loadedInstances.push(session.instanceId);
    }
    mix.render();
    updateSlider();
  });

  // interpolation slider between the two most recently loaded instances
  const slider = document.getElementById("alpha") as HTMLInputElement;
  const sliderLabel = document.getElementById("alpha-label")!;
  function updateSlider(): void {
    slider.disabled = loadedInstances.length < 2;
    sliderLabel.textContent = slider.disabled
      ? "load two instances to interpolate"
      : `blend ${loadedInstances[0].slice(0, 6)} -> ${loadedInstances[1].slice(0, 6)}`;
  }
  slider.addEventListener("change", async () => {
    if (loadedInstances.length < 2) return;
    const alpha = Number(slider.value) / 100;
    const { instance_id } = await client.interpolate(loadedInstances[0], loadedInstances[1], alpha);
    session.instanceId = instance_id;
    await session.sync();
  });
  updateSlider();
}

void boot();
