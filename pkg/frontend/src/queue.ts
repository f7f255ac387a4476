/** Serializes mutations: at most one request in flight, the rest wait
 *  their turn in FIFO order. A rejected task does not break the chain. */

export class MutationQueue {
  private tail: Promise<unknown> = Promise.resolve();
  private pending = 0;

  enqueue<T>(task: () => Promise<T>): Promise<T> {
    this.pending += 1;
    const run = this.tail.then(task);
    const settled = run.finally(() => {
      this.pending -= 1;
    });
    // keep the chain alive whatever the task did
    this.tail = settled.catch(() => undefined);
    return settled;
  }

  get size(): number {
    return this.pending;
  }

  /** Resolves once every task enqueued so far (and any they enqueue) is done. */
  async idle(): Promise<void> {
    while (this.pending > 0) {
      await this.tail;
    }
  }
}
