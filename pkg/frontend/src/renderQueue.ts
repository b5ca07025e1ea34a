// Debounced render-on-release with a latest-wins staleness rule: at most
// one in-flight request is honored, and responses for superseded
// conditioning are dropped instead of played.

export interface RenderRequest {
  c0: number;
  c1: number;
  source: string;
}

export type RenderFn = (req: RenderRequest) => Promise<ArrayBuffer>;
export type PlayFn = (audio: ArrayBuffer, req: RenderRequest) => void;
export type ErrorFn = (message: string) => void;

export const DEFAULT_DEBOUNCE_MS = 250;

export class RenderQueue {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private sequence = 0;

  constructor(
    private readonly render: RenderFn,
    private readonly play: PlayFn,
    private readonly onError: ErrorFn,
    private readonly debounceMs: number = DEFAULT_DEBOUNCE_MS,
  ) {}

  /** Call on every pad movement; fires one render after the pad settles. */
  movePad(req: RenderRequest): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire(req);
    }, this.debounceMs);
  }

  /** Bypass the debounce (e.g. replay button). */
  requestNow(req: RenderRequest): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    void this.fire(req);
  }

  private async fire(req: RenderRequest): Promise<void> {
    const token = ++this.sequence;
    try {
      const audio = await this.render(req);
      if (token === this.sequence) this.play(audio, req);
    } catch (err) {
      if (token === this.sequence) {
        this.onError(err instanceof Error ? err.message : String(err));
      }
    }
  }
}
