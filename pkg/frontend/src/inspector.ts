/** Part inspector: numeric/slider controls for rigid, scale, color, and
 * activity edits. Every commit sends raw parameters to the server; the
 * client never composes transforms itself. */

import { EditRequest, PartInfo } from "./api.js";
import { Session } from "./session.js";

/** Axis-angle (degrees) to the wire quaternion (w, x, y, z). */
export function axisAngleToQuat(axis: [number, number, number], degrees: number): [number, number, number, number] {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  if (n === 0 || degrees === 0) return [1, 0, 0, 0];
  const half = (degrees * Math.PI) / 360;
  const s = Math.sin(half) / n;
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function rigidEdit(part: number, axis: [number, number, number], degrees: number,
                          dt: [number, number, number]): EditRequest {
  return { op: "rigid", part, params: { dq: axisAngleToQuat(axis, degrees), dt } };
}

export function scaleEdit(part: number, factors: [number, number, number]): EditRequest {
  return { op: "scale", part, params: { factors } };
}

export function colorEdit(part: number, hex: string): EditRequest {
  const v = hex.replace("#", "");
  const rgb: [number, number, number] = [
    parseInt(v.slice(0, 2), 16) / 255,
    parseInt(v.slice(2, 4), 16) / 255,
    parseInt(v.slice(4, 6), 16) / 255,
  ];
  return { op: "color", part, params: { rgb } };
}

export class PartInspector {
  root: HTMLElement;
  private list!: HTMLSelectElement;
  private axisInputs: HTMLInputElement[] = [];
  private angle!: HTMLInputElement;
  private dtInputs: HTMLInputElement[] = [];
  private scaleInputs: HTMLInputElement[] = [];
  private colorInput!: HTMLInputElement;
  private activeToggle!: HTMLButtonElement;

  constructor(private session: Session, mount: HTMLElement) {
    this.root = mount;
    this.build();
  }

  private field(label: string, input: HTMLElement): HTMLElement {
    const row = document.createElement("label");
    row.className = "field";
    const span = document.createElement("span");
    span.textContent = label;
    row.append(span, input);
    return row;
  }

  private num(value: string, step = "0.05"): HTMLInputElement {
    const el = document.createElement("input");
    el.type = "number";
    el.step = step;
    el.value = value;
    return el;
  }

  private build(): void {
    this.root.innerHTML = "";
    const title = document.createElement("h2");
    title.textContent = "Part inspector";
    this.root.append(title);

    this.list = document.createElement("select");
    this.list.addEventListener("change", () => {
      this.session.selected = Number(this.list.value);
      this.refresh();
    });
    this.root.append(this.field("part", this.list));

    const axisWrap = document.createElement("div");
    axisWrap.className = "triple";
    for (const v of ["0", "0", "1"]) {
      const el = this.num(v, "1");
      this.axisInputs.push(el);
      axisWrap.append(el);
    }
    this.root.append(this.field("rotation axis", axisWrap));

    this.angle = document.createElement("input");
    this.angle.type = "range";
    this.angle.min = "-180";
    this.angle.max = "180";
    this.angle.value = "0";
    this.root.append(this.field("angle (deg)", this.angle));

    const dtWrap = document.createElement("div");
    dtWrap.className = "triple";
    for (let i = 0; i < 3; i++) {
      const el = this.num("0");
      this.dtInputs.push(el);
      dtWrap.append(el);
    }
    this.root.append(this.field("translate (dx dy dz)", dtWrap));

    const rigidBtn = document.createElement("button");
    rigidBtn.textContent = "apply rigid";
    rigidBtn.addEventListener("click", () => void this.commitRigid());
    this.root.append(rigidBtn);

    const scaleWrap = document.createElement("div");
    scaleWrap.className = "triple";
    for (let i = 0; i < 3; i++) {
      const el = this.num("1", "0.1");
      this.scaleInputs.push(el);
      scaleWrap.append(el);
    }
    this.root.append(this.field("scale factors", scaleWrap));
    const scaleBtn = document.createElement("button");
    scaleBtn.textContent = "apply scale";
    scaleBtn.addEventListener("click", () => void this.commitScale());
    this.root.append(scaleBtn);

    this.colorInput = document.createElement("input");
    this.colorInput.type = "color";
    this.colorInput.value = "#cc3333";
    this.root.append(this.field("override color", this.colorInput));
    const colorBtn = document.createElement("button");
    colorBtn.textContent = "apply color";
    colorBtn.addEventListener("click", () => void this.commitColor());
    const clearBtn = document.createElement("button");
    clearBtn.textContent = "clear color";
    clearBtn.addEventListener("click", () =>
      void this.session.commitEdit({ op: "clear_color", part: this.session.selected, params: {} }),
    );
    this.root.append(colorBtn, clearBtn);

    this.activeToggle = document.createElement("button");
    this.activeToggle.textContent = "remove part";
    this.activeToggle.addEventListener("click", () => void this.toggleActive());
    this.root.append(this.activeToggle);

    const undoBtn = document.createElement("button");
    undoBtn.textContent = "undo";
    undoBtn.className = "undo";
    undoBtn.addEventListener("click", () => void this.session.undo());
    this.root.append(undoBtn);
  }

  refresh(): void {
    const parts = this.session.parts;
    const prev = this.list.value;
    this.list.innerHTML = "";
    for (const p of parts) {
      const opt = document.createElement("option");
      opt.value = String(p.index);
      opt.textContent = `part ${p.index}${p.active ? "" : " (removed)"}`;
      this.list.append(opt);
    }
    this.list.value = prev !== "" && Number(prev) < parts.length ? prev : "0";
    this.session.selected = Number(this.list.value);
    const sel = parts[this.session.selected];
    if (sel) {
      this.activeToggle.textContent = sel.active ? "remove part" : "restore part";
    }
  }

  private async commitRigid(): Promise<void> {
    const axis = this.axisInputs.map((el) => Number(el.value)) as [number, number, number];
    const dt = this.dtInputs.map((el) => Number(el.value)) as [number, number, number];
    await this.session.commitEdit(rigidEdit(this.session.selected, axis, Number(this.angle.value), dt));
  }

  private async commitScale(): Promise<void> {
    const factors = this.scaleInputs.map((el) => Number(el.value)) as [number, number, number];
    await this.session.commitEdit(scaleEdit(this.session.selected, factors));
  }

  private async commitColor(): Promise<void> {
    await this.session.commitEdit(colorEdit(this.session.selected, this.colorInput.value));
  }

  private async toggleActive(): Promise<void> {
    const sel = this.session.parts[this.session.selected];
    if (!sel) return;
    await this.session.commitEdit({
      op: sel.active ? "remove" : "restore",
      part: this.session.selected,
      params: {},
    });
  }
}
