/** Mix panel: per-part shape/texture source pickers over loaded instances. */

import { Client, MixSelection } from "./api.js";

export interface MixRow {
  instance: string;
  part: number;
  shape: boolean;
  texture: boolean;
}

/** Serialize rows to the exact /api/mix body (validated, order-preserving). */
export function mixBody(rows: MixRow[]): { selections: MixSelection[] } {
  if (rows.length === 0) throw new Error("select at least one part");
  const first = rows[0];
  if (!first.shape) throw new Error("the first selection must take a shape");
  for (const r of rows) {
    if (!r.shape && !r.texture) throw new Error("a selection must take shape or texture");
  }
  return {
    selections: rows.map((r) => ({
      instance: r.instance,
      part: r.part,
      shape: r.shape,
      texture: r.texture,
    })),
  };
}

export class MixPanel {
  rows: MixRow[] = [];
  private tbody!: HTMLTableSectionElement;
  private error!: HTMLElement;

  constructor(
    private client: Client,
    private mount: HTMLElement,
    private instances: () => string[],
    private onMixed: (instanceId: string) => void,
  ) {
    this.build();
  }

  private build(): void {
    this.mount.innerHTML = "";
    const title = document.createElement("h2");
    title.textContent = "Mix parts";
    const table = document.createElement("table");
    table.innerHTML =
      "<thead><tr><th>instance</th><th>part</th><th>shape</th><th>texture</th></tr></thead>";
    this.tbody = document.createElement("tbody");
    table.append(this.tbody);

    const addBtn = document.createElement("button");
    addBtn.textContent = "add row";
    addBtn.addEventListener("click", () => {
      const ids = this.instances();
      if (ids.length === 0) return;
      this.rows.push({ instance: ids[0], part: 0, shape: true, texture: true });
      this.render();
    });

    const submit = document.createElement("button");
    submit.textContent = "mix";
    submit.addEventListener("click", () => void this.submit());

    this.error = document.createElement("p");
    this.error.className = "error";
    this.mount.append(title, table, addBtn, submit, this.error);
  }

  render(): void {
    this.tbody.innerHTML = "";
    this.rows.forEach((row, i) => {
      const tr = document.createElement("tr");

      const instSel = document.createElement("select");
      for (const id of this.instances()) {
        const opt = document.createElement("option");
        opt.value = id;
        opt.textContent = id.slice(0, 6);
        instSel.append(opt);
      }
      instSel.value = row.instance;
      instSel.addEventListener("change", () => (row.instance = instSel.value));

      const partInput = document.createElement("input");
      partInput.type = "number";
      partInput.min = "0";
      partInput.value = String(row.part);
      partInput.addEventListener("change", () => (row.part = Number(partInput.value)));

      const mk = (key: "shape" | "texture") => {
        const cb = document.createElement("input");
        cb.type = "checkbox";
        cb.checked = row[key];
        cb.addEventListener("change", () => (row[key] = cb.checked));
        return cb;
      };

      for (const el of [instSel, partInput, mk("shape"), mk("texture")]) {
        const td = document.createElement("td");
        td.append(el);
        tr.append(td);
      }
      this.tbody.append(tr);
    });
  }

  private async submit(): Promise<void> {
    this.error.textContent = "";
    let body;
    try {
      body = mixBody(this.rows);
    } catch (err) {
      this.error.textContent = err instanceof Error ? err.message : String(err);
      return;
    }
    try {
      const { instance_id } = await this.client.mix(body.selections);
      this.onMixed(instance_id);
    } catch (err) {
      this.error.textContent = err instanceof Error ? err.message : String(err);
    }
  }
}
