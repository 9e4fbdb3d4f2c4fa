/** Result-card selection state for the comparison overlay. */

import type { CurvePayload } from "./api.js";
import { bindCurve, type ChartSeries } from "./binding.js";

export interface ResultCard {
  jobId: string;
  label: string;
  checked: boolean;
}

export class ComparisonSelection {
  private cards = new Map<string, ResultCard>();

  addCard(jobId: string, label: string): void {
    if (this.cards.has(jobId)) {
      throw new Error(`duplicate card for job ${jobId}`);
    }
    this.cards.set(jobId, { jobId, label, checked: false });
  }

  removeCard(jobId: string): void {
    this.cards.delete(jobId);
  }

  toggle(jobId: string): void {
    const card = this.cards.get(jobId);
    if (!card) {
      throw new Error(`no card for job ${jobId}`);
    }
    card.checked = !card.checked;
  }

  list(): ResultCard[] {
    return [...this.cards.values()].map((c) => ({ ...c }));
  }

  checkedIds(): string[] {
    return [...this.cards.values()].filter((c) => c.checked).map((c) => c.jobId);
  }

  /** The compare action needs at least two checked cards. */
  get canCompare(): boolean {
    return this.checkedIds().length >= 2;
  }
}

/**
 * One overlay series per checked card, in card order; unchecked cards
 * contribute nothing even when their payload is available.
 */
export function overlaySeries(
  selection: ComparisonSelection,
  payloads: Map<string, CurvePayload>,
): ChartSeries[] {
  return selection.checkedIds().map((jobId) => {
    const payload = payloads.get(jobId);
    if (!payload) {
      throw new Error(`missing curve payload for job ${jobId}`);
    }
    return bindCurve(payload);
  });
}
