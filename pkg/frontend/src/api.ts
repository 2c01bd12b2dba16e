// Typed client for the explorer endpoints. The base URL is the single
// configuration point; everything else is derived from API responses.

export interface LayoutPoint {
  id: number;
  name: string;
  x: number;
  y: number;
  cluster: number;
}

export interface DiagramPoint {
  birth: number;
  death: number;
}

export interface Branch {
  birth: number;
  death: number;
  parent: number;
}

export interface BdtPayload {
  branches: Branch[];
  normalized: boolean;
}

export interface Reconstruction {
  bdt: BdtPayload;
  diagram: { points: DiagramPoint[] };
}

export interface PcvPoint {
  branch: number;
  rho1: number;
  rho2: number;
  degenerate: boolean;
}

export interface FliBranch {
  branch: number;
  originalPersistence: number;
  latentPersistence: number;
  fli: number;
}

export interface MemberDetail extends Reconstruction {
  id: number;
  name: string;
  latent: number[];
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`);
    if (!res.ok) throw new Error(`GET ${path} failed: ${res.status}`);
    return res.json() as Promise<T>;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw new Error(`POST ${path} failed: ${res.status}`);
    return res.json() as Promise<T>;
  }

  layout(): Promise<{ points: LayoutPoint[] }> {
    return this.getJson("/api/layout");
  }

  reconstruct(latent: number[]): Promise<Reconstruction> {
    return this.postJson("/api/reconstruct", { latent });
  }

  path(from: number[], to: number[], steps: number): Promise<{ frames: Reconstruction[] }> {
    return this.postJson("/api/path", { from, to, steps });
  }

  pcv(): Promise<{ points: PcvPoint[] }> {
    return this.getJson("/api/pcv");
  }

  fli(): Promise<{ branches: FliBranch[] }> {
    return this.getJson("/api/fli");
  }

  member(i: number): Promise<MemberDetail> {
    return this.getJson(`/api/member/${i}`);
  }
}
