/**
 * Annotation session state and its pure transitions.
 *
 * The server file is canonical; this module only mirrors what the service
 * reported plus optimistic picks that have not been confirmed yet, so a
 * rejected write can be rolled back without refetching.
 */

import type { Progress, Questionnaire, QuestionnaireItem } from "./api.js";

export interface AnnotationState {
  userId: string;
  session: string;
  items: QuestionnaireItem[];
  /** context_id -> chosen_response_id, confirmed and optimistic alike. */
  picks: Map<string, string>;
  /** Index of the context currently on screen; items.length when done. */
  cursor: number;
}

export function firstUnanswered(
  items: QuestionnaireItem[],
  picks: Map<string, string>,
): number {
  const index = items.findIndex((item) => !picks.has(item.context_id));
  return index === -1 ? items.length : index;
}

/** Resume where the server says we left off: first unanswered context. */
export function initialState(
  userId: string,
  questionnaire: Questionnaire,
  progress: Progress,
): AnnotationState {
  const picks = new Map<string, string>();
  for (const contextId of progress.answered_ids) {
    picks.set(contextId, "");
  }
  return {
    userId,
    session: questionnaire.session,
    items: questionnaire.items,
    picks,
    cursor: firstUnanswered(questionnaire.items, picks),
  };
}

export function currentItem(state: AnnotationState): QuestionnaireItem | undefined {
  return state.items[state.cursor];
}

export function isComplete(state: AnnotationState): boolean {
  return state.picks.size >= state.items.length;
}

/** Optimistically record a pick; the caller submits it in parallel. */
export function recordPick(
  state: AnnotationState,
  contextId: string,
  responseId: string,
): AnnotationState {
  const picks = new Map(state.picks);
  picks.set(contextId, responseId);
  return { ...state, picks };
}

/** Undo an optimistic pick the server rejected. */
export function rollbackPick(
  state: AnnotationState,
  contextId: string,
  previous: string | undefined,
): AnnotationState {
  const picks = new Map(state.picks);
  if (previous === undefined) {
    picks.delete(contextId);
  } else {
    picks.set(contextId, previous);
  }
  return { ...state, picks };
}

/** Move the cursor to the next unanswered context. */
export function advance(state: AnnotationState): AnnotationState {
  return { ...state, cursor: firstUnanswered(state.items, state.picks) };
}

/** Jump to a specific context (revisiting an answered one is allowed). */
export function jumpTo(state: AnnotationState, index: number): AnnotationState {
  if (index < 0 || index > state.items.length) {
    return state;
  }
  return { ...state, cursor: index };
}

/** Contexts with no annotation yet: candidates for the prediction preview. */
export function heldOutItems(state: AnnotationState): QuestionnaireItem[] {
  return state.items.filter((item) => !state.picks.has(item.context_id));
}
