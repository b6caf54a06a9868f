// Console state machine. All transitions go through service responses;
// history is append-only for the session. Only the newest in-flight query
// may apply its result: stale responses are discarded.

import { QueryMatch, SceneInfo, ServiceClient, ServiceError } from "./api.js";

export interface HistoryEntry {
  prompt: string;
  granularity: string;
  matches: QueryMatch[];
}

export interface ConsoleState {
  scene: SceneInfo | null;
  granularity: string; // "S" | "M" | "L" | "all"
  cameraIndex: number;
  time: number;
  topK: number;
  busy: boolean;
  matches: QueryMatch[];
  selected: QueryMatch | null;
  renderUrl: string | null;
  history: HistoryEntry[];
  error: string | null;
  notice: string | null;
}

export function initialState(): ConsoleState {
  return {
    scene: null,
    granularity: "all",
    cameraIndex: 0,
    time: 0,
    topK: 5,
    busy: false,
    matches: [],
    selected: null,
    renderUrl: null,
    history: [],
    error: null,
    notice: null,
  };
}

export class QueryConsole {
  state: ConsoleState = initialState();
  private requestToken = 0;

  constructor(
    private client: ServiceClient,
    private onChange: (state: ConsoleState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  async load(): Promise<void> {
    try {
      this.state.scene = await this.client.scene();
      this.state.renderUrl = this.client.renderUrl(this.state.cameraIndex, undefined,
        undefined, this.state.time);
      this.state.error = null;
    } catch (err) {
      this.state.error = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }

  setGranularity(granularity: string): void {
    this.state.granularity = granularity;
    this.emit();
  }

  canSubmit(prompt: string): boolean {
    return prompt.trim().length > 0 && !this.state.busy;
  }

  async submitQuery(prompt: string): Promise<void> {
    if (prompt.trim().length === 0) {
      return; // submit is disabled with no prompt
    }
    const token = ++this.requestToken;
    this.state.busy = true;
    this.state.error = null;
    this.emit();
    try {
      const { matches } = await this.client.query({
        text: prompt,
        granularity: this.state.granularity === "all" ? null : this.state.granularity,
        top_k: this.state.topK,
      });
      if (token !== this.requestToken) {
        return; // a newer query superseded this one
      }
      this.state.matches = matches;
      this.state.selected = matches[0] ?? null;
      this.state.history = [...this.state.history,
        { prompt, granularity: this.state.granularity, matches }];
      this.refreshRender();
    } catch (err) {
      if (token !== this.requestToken) {
        return;
      }
      this.state.error = err instanceof ServiceError
        ? `query failed: ${err.message}`
        : String(err);
    } finally {
      if (token === this.requestToken) {
        this.state.busy = false;
        this.emit();
      }
    }
  }

  select(match: QueryMatch): void {
    this.state.selected = match;
    this.refreshRender();
    this.emit();
  }

  scrub(cameraIndex: number, time: number): void {
    this.state.notice = null;
    const cameras = this.state.scene?.cameras.length ?? 0;
    if (cameras > 0 && (cameraIndex < 0 || cameraIndex >= cameras)) {
      this.state.notice = `camera ${cameraIndex} out of range, clamped`;
      cameraIndex = Math.min(Math.max(cameraIndex, 0), cameras - 1);
    }
    if (time < 0 || time > 1) {
      this.state.notice = `time clamped to [0, 1]`;
    }
    this.state.cameraIndex = cameraIndex;
    this.state.time = Math.min(Math.max(time, 0), 1);
    this.refreshRender();
    this.emit();
  }

  private refreshRender(): void {
    const sel = this.state.selected;
    this.state.renderUrl = sel
      ? this.client.renderUrl(this.state.cameraIndex, sel.object_id, sel.granularity,
          this.state.time)
      : this.client.renderUrl(this.state.cameraIndex, undefined, undefined, this.state.time);
  }
}
