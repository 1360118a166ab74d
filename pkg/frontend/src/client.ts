// HTTP client for the generation service. The request image is the raw
// 64x64 rasterization (one byte per pixel, row major) in base64.

import { SKETCH_SIZE } from "./canvas.js";

export type GenerateOptions = {
  samples: number;
  steps: number;
  scale: number;
  seed?: number;
};

export type GenerateRequestBody = {
  image: string;
  samples: number;
  steps: number;
  scale: number;
  seed?: number;
};

export type SamplePayload = {
  occupancy_b64: string;
  category: string;
  confidence: number;
  unmasked_per_step: number[];
};

export type GenerateResponseBody = {
  samples: SamplePayload[];
  seed: number;
  fingerprints: Record<string, string>;
  elapsed_ms: number;
};

export type HealthBody = {
  ready: boolean;
  uptime_s: number;
  fingerprints: Record<string, string>;
};

export function encodeSketch(pixels: Uint8Array): string {
  if (pixels.length !== SKETCH_SIZE * SKETCH_SIZE) {
    throw new Error(`sketch must have ${SKETCH_SIZE * SKETCH_SIZE} pixels`);
  }
  const bytes = new Uint8Array(pixels.length);
  for (let i = 0; i < pixels.length; i++) bytes[i] = pixels[i] ? 255 : 0;
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return typeof btoa === "function" ? btoa(binary) : Buffer.from(bytes).toString("base64");
}

export function buildRequest(pixels: Uint8Array, options: GenerateOptions): GenerateRequestBody {
  const body: GenerateRequestBody = {
    image: encodeSketch(pixels),
    samples: options.samples,
    steps: options.steps,
    scale: options.scale,
  };
  if (options.seed !== undefined && options.seed !== null) {
    body.seed = options.seed;
  }
  return body;
}

export class ServiceError extends Error {
  constructor(readonly status: number, detail: string, readonly retryable: boolean) {
    super(detail);
  }
}

type FetchLike = (url: string, init?: any) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<any>;
}>;

export class GenerateClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  async health(): Promise<HealthBody> {
    const resp = await this.fetchImpl(`${this.baseUrl}/health`);
    return (await resp.json()) as HealthBody;
  }

  async generate(body: GenerateRequestBody): Promise<GenerateResponseBody> {
    let resp;
    try {
      resp = await this.fetchImpl(`${this.baseUrl}/generate`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new ServiceError(0, `service unreachable: ${err}`, true);
    }
    if (!resp.ok) {
      let detail = `request failed with status ${resp.status}`;
      try {
        const payload = await resp.json();
        detail = typeof payload.detail === "string"
          ? payload.detail
          : JSON.stringify(payload.detail ?? payload);
      } catch {
        // keep the generic detail
      }
      throw new ServiceError(resp.status, detail, resp.status >= 500 || resp.status === 0);
    }
    return (await resp.json()) as GenerateResponseBody;
  }
}
