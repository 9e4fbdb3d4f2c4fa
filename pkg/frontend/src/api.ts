/** Typed client for the simulation HTTP API (all endpoints under /v1). */

export interface CurvePayload {
  name: string;
  days: number[];
  mean: number[];
  ci_low: number[];
  ci_high: number[];
  clips: Record<string, unknown>;
}

export interface SeverityCluster {
  cell: string;
  count: number;
  polygon: [number, number][];
  color: string;
}

export interface SeverityPayload {
  res: number;
  kept: number;
  total: number;
  clusters: SeverityCluster[];
}

export interface HourlyPayload {
  bins: number[];
  total: number;
  no_data: boolean;
}

export interface JobStatus {
  job_id: string;
  status: "queued" | "running" | "done" | "failed";
  progress: number;
  error: string | null;
  config: SimulationRequest;
}

export interface PolicyDoc {
  kind: string;
  name: string;
  start: string;
  days: number;
  polygons?: number[][][];
  regions?: { polygon: number[][]; reduction: number }[];
  cells?: string[];
  detect_prob?: number;
}

export interface SimulationRequest {
  dataset_id: string;
  name?: string;
  m?: number;
  beta_global?: number;
  sigma?: number;
  gamma?: number;
  i0?: number;
  seed?: number;
  risk?: Record<string, unknown>;
  policies?: PolicyDoc[];
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(private base: string, private fetchImpl: FetchLike) {}

  private async request<T>(path: string, method = "GET", body?: unknown): Promise<T> {
    const init = body === undefined
      ? { method }
      : {
          method,
          headers: { "Content-Type": "application/json" },
          body: JSON.stringify(body),
        };
    const resp = await this.fetchImpl(this.base + path, init);
    const doc = (await resp.json()) as Record<string, unknown>;
    if (!resp.ok) {
      throw new ApiError(resp.status, String(doc["detail"] ?? resp.status));
    }
    return doc as T;
  }

  submitSimulation(req: SimulationRequest): Promise<{ job_id: string; cached: boolean }> {
    return this.request("/v1/simulations", "POST", req);
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.request(`/v1/simulations/${jobId}`);
  }

  curve(jobId: string): Promise<CurvePayload> {
    return this.request(`/v1/simulations/${jobId}/curve`);
  }

  severity(jobId: string, res: number): Promise<SeverityPayload> {
    return this.request(`/v1/simulations/${jobId}/severity?res=${res}`);
  }

  hourly(jobId: string, cell: string): Promise<HourlyPayload> {
    return this.request(`/v1/simulations/${jobId}/severity/${cell}/hourly`);
  }

  comparison(jobIds: string[], name: string): Promise<{ curves: CurvePayload[] }> {
    return this.request("/v1/comparisons", "POST", { job_ids: jobIds, name });
  }
}
