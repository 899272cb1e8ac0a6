/** Label submission with an outbox: every label is acknowledged (204)
 * before the flow advances, a network failure parks the queue for retry,
 * and a single in-flight request makes duplicate submissions impossible.
 * Server rejections (409 adjudicated, 422 invalid) are surfaced inline
 * and dropped from the queue so the coder never loses their position. */

import { ApiClient, ApiError } from './api.js';
import type { LabelSubmission } from './types.js';

export interface RejectedLabel {
  label: LabelSubmission;
  status: number;
  detail: unknown;
}

export class LabelFlow {
  private queue: LabelSubmission[] = [];
  private inFlight = false;
  readonly acked: LabelSubmission[] = [];
  readonly rejected: RejectedLabel[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly sessionId: string,
    private readonly onAck: (label: LabelSubmission) => void = () => {},
    private readonly onReject: (rejection: RejectedLabel) => void = () => {},
  ) {}

  get pending(): number {
    return this.queue.length;
  }

  submit(label: LabelSubmission): void {
    this.queue.push(label);
  }

  /** Drain the outbox. Resolves true when empty, false when parked on a
   * network failure (call flush() again to retry; nothing is re-sent that
   * was already acknowledged). */
  async flush(): Promise<boolean> {
    if (this.inFlight) {
      return false;
    }
    this.inFlight = true;
    try {
      while (this.queue.length > 0) {
        const label = this.queue[0]!;
        try {
          await this.api.submitLabel(this.sessionId, label);
        } catch (error) {
          if (error instanceof ApiError) {
            this.queue.shift();
            const rejection = { label, status: error.status, detail: error.body };
            this.rejected.push(rejection);
            this.onReject(rejection);
            continue;
          }
          return false; // network failure: keep the label queued for retry
        }
        this.queue.shift();
        this.acked.push(label);
        this.onAck(label);
      }
      return true;
    } finally {
      this.inFlight = false;
    }
  }
}
