/**
 * Pure HTML-string views. No DOM access here: app.ts owns the wiring, so
 * every view can be unit-tested as a plain function of its inputs.
 */

import type { FitResult, Prediction, Progress, QuestionnaireItem } from "./api.js";
import { weightBars } from "./weights.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderProgress(progress: Progress): string {
  const pct = progress.total === 0 ? 0 : Math.round((100 * progress.answered) / progress.total);
  return `
    <div class="progress" role="progressbar" aria-valuenow="${progress.answered}"
         aria-valuemin="0" aria-valuemax="${progress.total}">
      <div class="progress-fill" style="width:${pct}%"></div>
    </div>
    <div class="progress-label">${progress.answered} / ${progress.total} answered</div>
  `;
}

export function renderCard(
  item: QuestionnaireItem,
  position: number,
  total: number,
  picked?: string,
): string {
  const options = item.responses
    .map((response, i) => {
      const selected = picked === response.response_id ? " selected" : "";
      return `
        <button class="option${selected}" data-response-id="${escapeHtml(response.response_id)}">
          <kbd>${i + 1}</kbd>
          <span>${escapeHtml(response.text)}</span>
        </button>
      `;
    })
    .join("");
  return `
    <div class="card" data-context-id="${escapeHtml(item.context_id)}">
      <div class="card-header">Context ${position} of ${total}</div>
      <p class="context-text">${escapeHtml(item.context_text)}</p>
      <div class="options">${options}</div>
      <p class="hint">Press 1&ndash;${item.responses.length} or click to pick the response you prefer.</p>
    </div>
  `;
}

export function renderComplete(progress: Progress): string {
  return `
    <div class="card done">
      <div class="card-header">All done</div>
      <p>You answered all ${progress.total} contexts. Fit the model to see your
      feature weights, or step back with Previous to change an answer.</p>
    </div>
  `;
}

export function renderWeights(fit: FitResult | null): string {
  if (fit === null) {
    return `<p class="placeholder">No fitted model yet. Answer a few contexts, then press <b>Fit model</b>.</p>`;
  }
  const rows = weightBars(fit)
    .map((bar) => {
      const width = (50 * bar.fraction).toFixed(2);
      const side = bar.positive
        ? `left:50%;width:${width}%`
        : `left:${(50 - Number(width)).toFixed(2)}%;width:${width}%`;
      const cls = bar.positive ? "bar positive" : "bar negative";
      return `
        <div class="weight-row" title="${escapeHtml(bar.description)} (1 = ${escapeHtml(bar.low)}, 5 = ${escapeHtml(bar.high)})">
          <div class="weight-name">${escapeHtml(bar.name)}</div>
          <div class="weight-track">
            <div class="axis"></div>
            <div class="${cls}" data-value="${bar.value}" style="${side}"></div>
          </div>
          <div class="weight-value">${bar.value.toFixed(3)}</div>
        </div>
      `;
    })
    .join("");
  const status = fit.converged
    ? `converged in ${fit.iterations} iterations`
    : `stopped at ${fit.iterations} iterations without converging`;
  return `
    <div class="weights" data-n-features="${fit.features.length}">
      ${rows}
      <p class="fit-meta">Fit on ${fit.n_records} annotations; NLL ${fit.final_nll.toFixed(4)}; ${status}.</p>
    </div>
  `;
}

export function renderPrediction(
  heldOut: QuestionnaireItem[],
  prediction: Prediction | null,
): string {
  if (heldOut.length === 0 && prediction === null) {
    return `<p class="placeholder">No held-out contexts left to preview.</p>`;
  }
  const options = heldOut
    .map((item) => {
      const selected = prediction?.context_id === item.context_id ? " selected" : "";
      return `<option value="${escapeHtml(item.context_id)}"${selected}>${escapeHtml(item.context_id)}</option>`;
    })
    .join("");
  const picker = `
    <label class="predict-picker">Held-out context
      <select id="predict-context">${options}</select>
    </label>
  `;
  if (prediction === null) {
    return `${picker}<p class="placeholder">Pick a context to see its ranking.</p>`;
  }
  const rows = prediction.ranking
    .map(
      (ranked, i) => `
        <li class="ranked">
          <span class="rank">#${i + 1}</span>
          <span class="ranked-text">${escapeHtml(ranked.text)}</span>
          <span class="reward">${ranked.reward.toFixed(3)}</span>
        </li>
      `,
    )
    .join("");
  return `${picker}<ol class="ranking">${rows}</ol>`;
}

export function renderBanner(
  message: string,
  action?: { label: string; id: string },
): string {
  const button = action
    ? `<button id="${escapeHtml(action.id)}" class="banner-action">${escapeHtml(action.label)}</button>`
    : "";
  return `<div class="banner">${escapeHtml(message)}${button}</div>`;
}
