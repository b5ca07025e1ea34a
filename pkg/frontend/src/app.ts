// DOM wiring for the explorer: pad drag -> debounced render -> playback,
// plus the lazy heatmap backdrop. All audio and metric numbers come from
// the server; this file only moves them around.

import { ApiClient } from "./api.js";
import { buildHeatmap, legendText, paintHeatmap } from "./heatmap.js";
import { conditioningToPad, padToConditioning, type Range } from "./mapping.js";
import { RenderQueue } from "./renderQueue.js";

const RANGE: Range = { min: -5, max: 5 };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const api = new ApiClient();
  const pad = el<HTMLDivElement>("pad");
  const crosshair = el<HTMLDivElement>("crosshair");
  const canvas = el<HTMLCanvasElement>("heatmap");
  const readout = el<HTMLSpanElement>("readout");
  const legend = el<HTMLSpanElement>("legend");
  const banner = el<HTMLDivElement>("banner");
  const sourceSelect = el<HTMLSelectElement>("source");
  const metricSelect = el<HTMLSelectElement>("metric");
  const heatmapButton = el<HTMLButtonElement>("load-heatmap");
  const upload = el<HTMLInputElement>("upload");
  const player = el<HTMLAudioElement>("player");
  const modelInfo = el<HTMLSpanElement>("model-info");

  let current: [number, number] = [0, 0];

  const showError = (message: string): void => {
    banner.textContent = message;
    banner.classList.add("visible");
  };
  const clearError = (): void => banner.classList.remove("visible");

  const queue = new RenderQueue(
    (req) => api.render(req.source, req.c0, req.c1),
    (audio) => {
      clearError();
      const blob = new Blob([audio], { type: "audio/wav" });
      const url = URL.createObjectURL(blob);
      player.src = url;
      void player.play().catch((err: unknown) => showError(String(err)));
    },
    showError,
  );

  const geometry = () => ({ width: pad.clientWidth, height: pad.clientHeight });

  const moveTo = (c0: number, c1: number, fire: boolean): void => {
    current = [c0, c1];
    readout.textContent = `c = (${c0.toFixed(2)}, ${c1.toFixed(2)})`;
    const [px, py] = conditioningToPad(c0, c1, geometry(), RANGE);
    crosshair.style.left = `${px}px`;
    crosshair.style.top = `${py}px`;
    if (fire) queue.movePad({ c0, c1, source: sourceSelect.value });
  };

  const onPointer = (event: PointerEvent): void => {
    const rect = pad.getBoundingClientRect();
    const [c0, c1] = padToConditioning(
      event.clientX - rect.left,
      event.clientY - rect.top,
      geometry(),
      RANGE,
    );
    moveTo(c0, c1, true);
  };

  let dragging = false;
  pad.addEventListener("pointerdown", (event) => {
    dragging = true;
    pad.setPointerCapture(event.pointerId);
    onPointer(event);
  });
  pad.addEventListener("pointermove", (event) => {
    if (dragging) onPointer(event);
  });
  pad.addEventListener("pointerup", () => {
    dragging = false;
  });

  heatmapButton.addEventListener("click", () => {
    heatmapButton.disabled = true;
    legend.textContent = "sweeping...";
    api
      .sweep(sourceSelect.value, metricSelect.value)
      .then((payload) => {
        clearError();
        const view = buildHeatmap(payload);
        paintHeatmap(canvas, view);
        legend.textContent = legendText(view, payload.metric);
      })
      .catch((err: unknown) => {
        legend.textContent = "";
        showError(err instanceof Error ? err.message : String(err));
      })
      .finally(() => {
        heatmapButton.disabled = false;
      });
  });
  metricSelect.addEventListener("change", () => {
    if (legend.textContent) heatmapButton.click();
  });

  upload.addEventListener("change", () => {
    const file = upload.files?.[0];
    if (!file) return;
    file
      .arrayBuffer()
      .then((data) => api.upload(data))
      .then(async (id) => {
        clearError();
        await refreshSources(id);
      })
      .catch((err: unknown) => showError(err instanceof Error ? err.message : String(err)));
  });

  const BUILTINS = ["noise:2,7", "impulse:2.5s", "sine:220,2"];

  async function refreshSources(selected?: string): Promise<void> {
    const uploaded = await api.sources().catch(() => []);
    sourceSelect.innerHTML = "";
    for (const id of [...uploaded.map((s) => s.id), ...BUILTINS]) {
      const option = document.createElement("option");
      option.value = id;
      option.textContent = id;
      sourceSelect.appendChild(option);
    }
    if (selected) sourceSelect.value = selected;
  }

  api
    .model()
    .then((info) => {
      modelInfo.textContent =
        `${info.layers} layers x ${info.channels} ch, kernel ${info.kernel_size}, ` +
        `RF ${info.receptive_field_samples} samples (${info.receptive_field_ms} ms), ` +
        `${info.param_count} params @ ${info.sample_rate} Hz`;
    })
    .catch((err: unknown) => showError(err instanceof Error ? err.message : String(err)));

  void refreshSources().then(() => moveTo(0, 0, false));
}

document.addEventListener("DOMContentLoaded", main);
