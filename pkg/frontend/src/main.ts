// Browser wiring: renders the store into the DOM and routes input
// events back into it. All statistics shown come straight from the
// service; this file only formats them.

import { ApiClient } from "./client.js";
import { ExplorerStore } from "./store.js";
import {
  asmdBars,
  compareRows,
  defaultAxes,
  essGauges,
  estimateCard,
  scatterSpec,
  weightsCsv,
} from "./views.js";

const store = new ExplorerStore({ client: new ApiClient("") });
const selectedHistory = new Set<number>();
let axisOverride: [number, number] | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function fmt(v: number | null): string {
  return v === null ? "-" : String(v);
}

function renderSliders(): void {
  if (!store.summary) return;
  const host = el<HTMLDivElement>("sliders");
  host.innerHTML = "";
  store.covariateNames.forEach((name, j) => {
    const stats = store.summary!.covariates[name]!;
    const wrap = document.createElement("label");
    wrap.className = "slider-row";
    const value = store.draft.means[j] ?? stats.mean;
    wrap.innerHTML =
      `<span>${name}</span>` +
      `<input type="range" min="${stats.min}" max="${stats.max}" ` +
      `step="${(stats.max - stats.min) / 200}" value="${value}">` +
      `<code>${value.toPrecision(4)}</code>`;
    const input = wrap.querySelector("input")!;
    input.addEventListener("input", () => {
      store.setMean(j, Number(input.value));
    });
    host.appendChild(wrap);
  });
}

function renderBanner(): void {
  const banner = el<HTMLDivElement>("banner");
  if (!store.banner) {
    banner.hidden = true;
    return;
  }
  banner.hidden = false;
  const violated = store.banner.violated.length
    ? ` Constraints that cannot hold: ${store.banner.violated.join(", ")}.`
    : "";
  banner.textContent = `Profile infeasible: ${store.banner.message}.${violated}`;
}

function renderEstimate(): void {
  const host = el<HTMLDivElement>("estimate");
  if (!store.view) {
    host.textContent = "move a slider to estimate";
    return;
  }
  const card = estimateCard(store.view.estimate);
  host.innerHTML =
    `<strong>${fmt(card.tau_hat)}</strong> ` +
    `<span>[${fmt(card.ci_lower)}, ${fmt(card.ci_upper)}]</span> ` +
    `<small>${card.method_tag}, level ${fmt(card.ci_level)}</small>`;
}

function renderEss(): void {
  const host = el<HTMLDivElement>("ess");
  host.innerHTML = "";
  if (!store.view) return;
  for (const g of essGauges(store.view.diagnostics)) {
    const div = document.createElement("div");
    div.textContent =
      `group ${g.group}: ESS ${g.ess.toFixed(1)}, ` +
      `${g.retained} donors retained`;
    host.appendChild(div);
  }
}

function renderAsmd(): void {
  const host = el<HTMLDivElement>("asmd");
  host.innerHTML = "";
  if (!store.view) return;
  for (const bar of asmdBars(store.view.diagnostics.asmd)) {
    const row = document.createElement("div");
    row.className = "asmd-row";
    const width = Math.min(100, bar.value * 100);
    row.innerHTML =
      `<span>b${bar.basis} / g${bar.group}</span>` +
      `<div class="bar" style="width:${width}%"></div>` +
      `<code>${bar.value.toExponential(2)}</code>`;
    host.appendChild(row);
  }
}

function renderScatter(): void {
  const host = el<HTMLDivElement>("scatter");
  host.innerHTML = "";
  if (!store.view || !store.units) return;
  const axes =
    axisOverride ??
    defaultAxes(store.view.diagnostics.lambda_dual, store.units.covariates.length);
  const spec = scatterSpec(
    store.units,
    store.view.diagnostics.weights,
    axes,
    store.view.profile.means,
  );
  const size = 420;
  const pad = 30;
  const xs = spec.points.map((p) => p.x).concat([spec.target.x]);
  const ys = spec.points.map((p) => p.y).concat([spec.target.y]);
  const xlo = Math.min(...xs);
  const xhi = Math.max(...xs);
  const ylo = Math.min(...ys);
  const yhi = Math.max(...ys);
  const sx = (v: number) =>
    pad + ((v - xlo) / (xhi - xlo || 1)) * (size - 2 * pad);
  const sy = (v: number) =>
    size - pad - ((v - ylo) / (yhi - ylo || 1)) * (size - 2 * pad);
  const circles = spec.points
    .map((p) => {
      const r = 1.5 + 9 * Math.sqrt(p.area);
      const color =
        p.sign === "negative" ? "#d62728" : p.sign === "positive" ? "#1f77b4" : "#bbbbbb";
      return (
        `<circle cx="${sx(p.x).toFixed(1)}" cy="${sy(p.y).toFixed(1)}" ` +
        `r="${r.toFixed(1)}" fill="${color}" fill-opacity="0.45" ` +
        `stroke="${color}"/>`
      );
    })
    .join("");
  const target =
    `<path d="M ${sx(spec.target.x) - 7} ${sy(spec.target.y)} h 14 ` +
    `M ${sx(spec.target.x)} ${sy(spec.target.y) - 7} v 14" ` +
    `stroke="black" stroke-width="2"/>`;
  host.innerHTML =
    `<svg width="${size}" height="${size}">${circles}${target}</svg>` +
    `<div>${spec.xName} vs ${spec.yName}</div>`;
  const picker = el<HTMLSelectElement>("axis-x");
  const pickerY = el<HTMLSelectElement>("axis-y");
  if (!picker.options.length && store.units) {
    for (const sel of [picker, pickerY]) {
      store.units.covariates.forEach((name, j) => {
        const opt = document.createElement("option");
        opt.value = String(j);
        opt.textContent = name;
        sel.appendChild(opt);
      });
    }
  }
  picker.value = String(axes[0]);
  pickerY.value = String(axes[1]);
}

function renderHistory(): void {
  const host = el<HTMLUListElement>("history");
  host.innerHTML = "";
  for (const entry of store.history) {
    const li = document.createElement("li");
    const checked = selectedHistory.has(entry.id) ? "checked" : "";
    li.innerHTML =
      `<label><input type="checkbox" ${checked} data-id="${entry.id}"> ` +
      `#${entry.id} [${entry.profile.means
        .map((v) => v.toPrecision(3))
        .join(", ")}] -> ${entry.estimate.tau_hat.toPrecision(4)}</label>`;
    li.querySelector("input")!.addEventListener("change", (ev) => {
      const box = ev.target as HTMLInputElement;
      const id = Number(box.dataset["id"]);
      if (box.checked) selectedHistory.add(id);
      else selectedHistory.delete(id);
      renderCompare();
    });
    host.appendChild(li);
  }
  renderCompare();
}

function renderCompare(): void {
  const button = el<HTMLButtonElement>("compare");
  button.disabled = !store.compareEnabled || selectedHistory.size < 2;
  const host = el<HTMLDivElement>("compare-table");
  if (button.disabled) {
    host.innerHTML = "";
    return;
  }
}

function showCompareTable(): void {
  const host = el<HTMLDivElement>("compare-table");
  const rows = compareRows(store.historyEntries([...selectedHistory]));
  const body = rows
    .map(
      (r) =>
        `<tr><td>#${r.id}</td><td>${r.profile}</td>` +
        `<td>${r.tau_hat}</td><td>[${fmt(r.ci_lower)}, ${fmt(
          r.ci_upper,
        )}]</td><td>${r.ess_treated.toFixed(1)} / ${r.ess_control.toFixed(
          1,
        )}</td><td>${r.retained}</td></tr>`,
    )
    .join("");
  host.innerHTML =
    "<table><thead><tr><th>run</th><th>profile</th><th>estimate</th>" +
    "<th>CI</th><th>ESS t/c</th><th>retained</th></tr></thead>" +
    `<tbody>${body}</tbody></table>`;
}

function downloadCsv(): void {
  if (!store.view) return;
  const blob = new Blob([weightsCsv(store.view.diagnostics.weights)], {
    type: "text/csv",
  });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "weights.csv";
  a.click();
  URL.revokeObjectURL(a.href);
}

function renderAll(): void {
  renderBanner();
  renderEstimate();
  renderEss();
  renderAsmd();
  renderScatter();
  renderHistory();
}

async function start(): Promise<void> {
  await store.load();
  renderSliders();
  store.subscribe(renderAll);
  el<HTMLInputElement>("bounded").addEventListener("change", (ev) => {
    store.setBounded((ev.target as HTMLInputElement).checked);
  });
  el<HTMLInputElement>("level").addEventListener("change", (ev) => {
    store.setLevel(Number((ev.target as HTMLInputElement).value));
  });
  el<HTMLButtonElement>("compare").addEventListener("click", showCompareTable);
  el<HTMLButtonElement>("download").addEventListener("click", downloadCsv);
  for (const id of ["axis-x", "axis-y"] as const) {
    el<HTMLSelectElement>(id).addEventListener("change", () => {
      axisOverride = [
        Number(el<HTMLSelectElement>("axis-x").value),
        Number(el<HTMLSelectElement>("axis-y").value),
      ];
      renderScatter();
    });
  }
  store.scheduleSubmit();
}

void start();
