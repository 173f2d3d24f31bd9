/**
 * DOM wiring for the annotator. All state transitions live in state.ts and
 * all markup in render.ts; this file only connects events to the service
 * client and re-renders.
 */

import { AnnotatorClient, ApiError } from "./api.js";
import type { FitResult, Prediction, Progress } from "./api.js";
import {
  renderBanner,
  renderCard,
  renderComplete,
  renderPrediction,
  renderProgress,
  renderWeights,
} from "./render.js";
import {
  advance,
  currentItem,
  heldOutItems,
  initialState,
  isComplete,
  jumpTo,
  recordPick,
  rollbackPick,
} from "./state.js";
import type { AnnotationState } from "./state.js";

const params = new URLSearchParams(window.location.search);
const userId = params.get("user") ?? "user_00";
const session = params.get("session") ?? `browser-${userId}`;

const client = new AnnotatorClient();

let state: AnnotationState;
let progress: Progress;
let fit: FitResult | null = null;
let prediction: Prediction | null = null;

function element(id: string): HTMLElement {
  const found = document.getElementById(id);
  if (!found) {
    throw new Error(`missing element #${id}`);
  }
  return found;
}

function clearBanner(): void {
  element("banner").innerHTML = "";
}

function showBanner(
  message: string,
  action?: { label: string; id: string; onClick: () => void },
): void {
  element("banner").innerHTML = renderBanner(
    message,
    action ? { label: action.label, id: action.id } : undefined,
  );
  if (action) {
    document.getElementById(action.id)?.addEventListener("click", () => {
      clearBanner();
      action.onClick();
    });
  }
}

function renderAll(): void {
  element("progress").innerHTML = renderProgress(progress);
  const item = currentItem(state);
  element("card").innerHTML =
    item === undefined || isComplete(state)
      ? renderComplete(progress)
      : renderCard(item, state.cursor + 1, state.items.length, state.picks.get(item.context_id));
  element("user-label").textContent = `Annotating as ${userId}`;
  element("weights").innerHTML = renderWeights(fit);
  element("prediction").innerHTML = renderPrediction(heldOutItems(state), prediction);
}

async function refreshProgress(): Promise<void> {
  progress = await client.progress(userId);
}

async function submitPick(contextId: string, responseId: string): Promise<void> {
  const previous = state.picks.get(contextId);
  state = advance(recordPick(state, contextId, responseId));
  renderAll();
  try {
    await client.submitPreference(userId, contextId, responseId);
    await refreshProgress();
    renderAll();
  } catch (err) {
    if (err instanceof ApiError && err.isConflict) {
      showBanner(`${err.message}`, {
        label: "Overwrite",
        id: "overwrite-action",
        onClick: () => void overwritePick(contextId, responseId, previous),
      });
      return;
    }
    state = rollbackPick(state, contextId, previous);
    state = jumpTo(
      state,
      state.items.findIndex((item) => item.context_id === contextId),
    );
    const message = err instanceof ApiError ? err.message : String(err);
    showBanner(`Could not save your pick: ${message}`, {
      label: "Retry",
      id: "retry-action",
      onClick: () => void submitPick(contextId, responseId),
    });
    renderAll();
  }
}

async function overwritePick(
  contextId: string,
  responseId: string,
  previous: string | undefined,
): Promise<void> {
  try {
    await client.submitPreference(userId, contextId, responseId, true);
    await refreshProgress();
    renderAll();
  } catch (err) {
    state = rollbackPick(state, contextId, previous);
    const message = err instanceof ApiError ? err.message : String(err);
    showBanner(`Overwrite failed: ${message}`);
    renderAll();
  }
}

async function runFit(): Promise<void> {
  try {
    fit = await client.fit(userId);
    prediction = null;
    clearBanner();
  } catch (err) {
    const message = err instanceof ApiError ? err.message : String(err);
    showBanner(`Fit failed: ${message}`);
  }
  renderAll();
}

async function runPredict(contextId: string): Promise<void> {
  try {
    prediction = await client.predict(userId, contextId);
    clearBanner();
  } catch (err) {
    const message = err instanceof ApiError ? err.message : String(err);
    showBanner(`Prediction failed: ${message}`);
  }
  renderAll();
}

function wireEvents(): void {
  element("card").addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest("[data-response-id]");
    const item = currentItem(state);
    if (target instanceof HTMLElement && item) {
      void submitPick(item.context_id, target.dataset["responseId"] ?? "");
    }
  });

  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLSelectElement) {
      return;
    }
    const item = currentItem(state);
    if (!item) {
      return;
    }
    const slot = Number.parseInt(event.key, 10);
    if (Number.isInteger(slot) && slot >= 1 && slot <= item.responses.length) {
      const response = item.responses[slot - 1];
      if (response) {
        void submitPick(item.context_id, response.response_id);
      }
    }
  });

  element("prev").addEventListener("click", () => {
    state = jumpTo(state, state.cursor - 1);
    renderAll();
  });
  element("next").addEventListener("click", () => {
    state = jumpTo(state, Math.min(state.cursor + 1, state.items.length));
    renderAll();
  });

  element("fit").addEventListener("click", () => void runFit());

  element("prediction").addEventListener("change", (event) => {
    const target = event.target as HTMLElement;
    if (target instanceof HTMLSelectElement && target.id === "predict-context") {
      void runPredict(target.value);
    }
  });
}

async function main(): Promise<void> {
  try {
    const [questionnaire, initialProgress] = await Promise.all([
      client.questionnaire(session),
      client.progress(userId),
    ]);
    progress = initialProgress;
    state = initialState(userId, questionnaire, initialProgress);
    // if a model was fitted in an earlier session, show it right away
    fit = await client.weights(userId).catch(() => null);
    wireEvents();
    renderAll();
  } catch (err) {
    const message = err instanceof ApiError ? err.message : String(err);
    showBanner(`Could not reach the annotation service: ${message}`, {
      label: "Retry",
      id: "boot-retry",
      onClick: () => void main(),
    });
  }
}

void main();
