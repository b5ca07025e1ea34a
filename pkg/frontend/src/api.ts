// Thin typed client for the render server. Errors become thrown Errors
// with the server's message so the UI can surface them in the banner.

import type { SweepPayload } from "./heatmap.js";

export interface ModelInfo {
  layers: number;
  channels: number;
  kernel_size: number;
  dilation_growth: number;
  cond_dim: number;
  sample_rate: number;
  receptive_field_samples: number;
  receptive_field_ms: number;
  param_count: number;
}

export interface SourceEntry {
  id: string;
  seconds: number;
}

type FetchLike = typeof fetch;

async function failWith(response: Response): Promise<never> {
  let message = `${response.status} ${response.statusText}`;
  try {
    const body = (await response.json()) as { error?: string };
    if (body.error) message = body.error;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new Error(message);
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = fetch.bind(globalThis),
  ) {}

  async model(): Promise<ModelInfo> {
    const r = await this.fetchFn(`${this.base}/api/model`);
    if (!r.ok) await failWith(r);
    return (await r.json()) as ModelInfo;
  }

  async sources(): Promise<SourceEntry[]> {
    const r = await this.fetchFn(`${this.base}/api/sources`);
    if (!r.ok) await failWith(r);
    return ((await r.json()) as { sources: SourceEntry[] }).sources;
  }

  async upload(data: ArrayBuffer): Promise<string> {
    const r = await this.fetchFn(`${this.base}/api/sources`, { method: "POST", body: data });
    if (!r.ok) await failWith(r);
    return ((await r.json()) as { id: string }).id;
  }

  async render(source: string, c0: number, c1: number): Promise<ArrayBuffer> {
    const r = await this.fetchFn(`${this.base}/api/render`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ conditioning: [c0, c1], source }),
    });
    if (!r.ok) await failWith(r);
    return await r.arrayBuffer();
  }

  async sweep(source: string, metric: string, min = -5, max = 5, steps = 11): Promise<SweepPayload> {
    const params = new URLSearchParams({
      source,
      metric,
      min: String(min),
      max: String(max),
      steps: String(steps),
    });
    const r = await this.fetchFn(`${this.base}/api/sweep?${params}`);
    if (!r.ok) await failWith(r);
    return (await r.json()) as SweepPayload;
  }
}
