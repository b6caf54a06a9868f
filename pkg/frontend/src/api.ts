// Typed client for the splat query service. The fetch implementation is
// injected so tests can script responses.

export interface QueryMatch {
  object_id: number;
  granularity: string;
  score: number;
}

export interface CameraInfo {
  index: number;
  frame_index: number;
  time: number;
}

export interface SceneInfo {
  objects: Record<string, number[]>;
  granularities: string[];
  cameras: CameraInfo[];
  dynamic: boolean;
}

export interface QueryRequest {
  text?: string;
  embedding?: number[];
  granularity?: string | null;
  top_k?: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

export class ServiceClient {
  constructor(private baseUrl: string = "", private fetchFn?: FetchLike) {}

  private doFetch(url: string, init?: RequestInit): Promise<Response> {
    const f = this.fetchFn ?? fetch;
    return f(url, init);
  }

  private async json<T>(resp: Response): Promise<T> {
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`;
      try {
        const body = await resp.json();
        if (body && body.detail) detail = String(body.detail);
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ServiceError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  async scene(): Promise<SceneInfo> {
    return this.json<SceneInfo>(await this.doFetch(`${this.baseUrl}/scene`));
  }

  async query(body: QueryRequest): Promise<{ matches: QueryMatch[] }> {
    const resp = await this.doFetch(`${this.baseUrl}/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return this.json<{ matches: QueryMatch[] }>(resp);
  }

  renderUrl(camera: number, objectId?: number, granularity?: string, time?: number): string {
    const params = new URLSearchParams({ camera: String(camera) });
    if (objectId !== undefined) params.set("object_id", String(objectId));
    if (granularity) params.set("granularity", granularity);
    if (time !== undefined) params.set("time", time.toFixed(4));
    return `${this.baseUrl}/render?${params.toString()}`;
  }

  exportUrl(objectId: number, granularity: string): string {
    return `${this.baseUrl}/export/${objectId}?granularity=${granularity}`;
  }
}
