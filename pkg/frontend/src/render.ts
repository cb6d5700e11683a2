/**
 * Pure string renderers: state in, HTML out. No model math happens here;
 * every figure is a service payload value, merely formatted.
 */

import { currentProbability } from './state.js';
import type { ComposerState, ExplainResponse, Granularity, PendingSuggestion } from './types.js';

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderGauge(state: ComposerState): string {
  const entry = state.history[state.history.length - 1];
  if (state.predictionPending) {
    return '<div class="gauge pending">predicting…</div>';
  }
  if (entry.probability === null) {
    return '<div class="gauge empty">no prediction yet</div>';
  }
  const pct = (entry.probability * 100).toFixed(1);
  const badge =
    entry.structural_view === 'degraded'
      ? ' <span class="badge degraded" title="no dependency parse supplied">structural view degraded</span>'
      : '';
  return (
    `<div class="gauge"><div class="bar" style="width:${pct}%"></div>` +
    `<span class="value">p(response) = ${pct}%</span>${badge}</div>`
  );
}

const GRANULARITIES: Granularity[] = ['document', 'sentence', 'phrase'];

export function renderExplanations(report: ExplainResponse | null, topN: number): string {
  if (!report) {
    return '<p class="placeholder">request an explanation to see prototype evidence</p>';
  }
  const tabs = GRANULARITIES.map((granularity) => {
    const rows = (report.evidence[granularity] ?? []).slice(0, topN);
    if (rows.length === 0) {
      return (
        `<section class="tab" data-tab="${granularity}"><h3>${granularity}</h3>` +
        `<p class="placeholder">no ${granularity}-level prototypes for this input</p></section>`
      );
    }
    const items = rows
      .map(
        (e) =>
          `<tr><td>#${e.prototype_index}</td>` +
          `<td>${e.class_label === 1 ? 'response' : 'no response'}</td>` +
          `<td>${e.similarity.toFixed(4)}</td>` +
          `<td>${escapeHtml(e.source_text)}</td></tr>`,
      )
      .join('');
    return (
      `<section class="tab" data-tab="${granularity}"><h3>${granularity}</h3>` +
      `<table><thead><tr><th>prototype</th><th>class</th><th>similarity</th><th>source</th></tr></thead>` +
      `<tbody>${items}</tbody></table></section>`
    );
  });
  return tabs.join('\n');
}

export function renderSuggestions(state: ComposerState): string {
  if (state.pendingSuggestions.length === 0) {
    return '<p class="placeholder">no pending suggestions</p>';
  }
  const rows = state.pendingSuggestions
    .map(
      (s: PendingSuggestion, i: number) =>
        `<li data-index="${i}"><button class="apply" data-index="${i}">apply</button> ` +
        `<code>${escapeHtml(s.original_span)}</code> → <code>${escapeHtml(s.replacement)}</code> ` +
        `<span class="delta">p ${s.before_probability.toFixed(3)} → ${s.after_probability.toFixed(3)}</span></li>`,
    )
    .join('');
  return `<ul class="suggestions">${rows}</ul>`;
}

export function renderHistory(state: ComposerState): string {
  const rows = state.history
    .map((entry, i) => {
      const p = entry.probability === null ? '—' : `${(entry.probability * 100).toFixed(1)}%`;
      return `<li>v${i} <code>${entry.version}</code> ${p}</li>`;
    })
    .join('');
  return `<ol class="history">${rows}</ol>`;
}

export function renderNotices(state: ComposerState): string {
  const parts: string[] = [];
  if (state.error) {
    parts.push(`<p class="error">${escapeHtml(state.error)}</p>`);
  }
  if (state.notice) {
    parts.push(`<p class="notice">${escapeHtml(state.notice)}</p>`);
  }
  return parts.join('\n');
}

export function renderProbabilityValue(state: ComposerState): number | null {
  return currentProbability(state);
}
