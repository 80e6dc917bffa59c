/** Bounded in-flight camera events.
 *
 * The cluster renders one frame per camera event, so the event rate IS the
 * frame rate. The gate lets `window` events bootstrap the pipeline and
 * after that admits at most one new event per displayed frame, which keeps
 * the master fed without ever building a backlog it can't drain.
 */

export class EventGate {
  private sent = 0;
  private displayed = 0;

  constructor(readonly window = 2) {
    if (window < 1) throw new RangeError("window must be >= 1");
  }

  get inFlight(): number {
    return this.sent - this.displayed;
  }

  get eventsSent(): number {
    return this.sent;
  }

  canSend(): boolean {
    return this.displayed + this.window > this.sent;
  }

  /** Claim the next frame id. Callers must check canSend() first. */
  markSent(): number {
    if (!this.canSend()) {
      throw new RangeError("event window is full");
    }
    return this.sent++;
  }

  markDisplayed(): void {
    this.displayed += 1;
  }
}
