/** Adjudication queue, consistency dashboard, and refine-result panels.
 * Every number shown comes straight out of a service response. */

import type { RefineOutcome, TreeNode } from '../refinecontrol.js';
import type { ConsistencyDoc, PendingAdjudication } from '../types.js';

function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function pct(value: number): string {
  return `${(100 * value).toFixed(1)}%`;
}

export function renderAdjudications(pending: PendingAdjudication[]): string {
  if (pending.length === 0) {
    return '<p class="empty">No disagreements waiting.</p>';
  }
  const rows = pending
    .map((item) => {
      const labels = Object.entries(item.labels)
        .map(([coder, theme]) => `<span class="coder">${esc(coder)}: ${esc(theme)}</span>`)
        .join(' ');
      return (
        `<li class="adjudication" data-image="${esc(item.image_id)}">` +
        `<code>${esc(item.image_id)}</code> ${labels} ` +
        `<input class="adjudicate-theme" placeholder="final theme">` +
        `<button class="adjudicate">resolve</button></li>`
      );
    })
    .join('');
  return `<ul class="adjudications">${rows}</ul>`;
}

export function renderConsistencyPanel(doc: ConsistencyDoc | null): string {
  if (doc === null) {
    return '<p class="empty">No consistency data yet.</p>';
  }
  const rows = doc.reports
    .map((report) => {
      const prevalences = Object.entries(report.prevalences)
        .sort((a, b) => b[1] - a[1])
        .map(([theme, value]) => `${esc(theme)} ${pct(value)}`)
        .join(', ');
      const verdict = report.consistent ? 'consistent' : 'inconsistent';
      return (
        `<tr class="${verdict}"><td>${report.cluster_index}</td>` +
        `<td>${report.sample_n}</td><td>${esc(report.dominant_theme)}</td>` +
        `<td>${verdict}</td><td>${prevalences}</td>` +
        `<td>${report.significant_themes.map(esc).join(', ')}</td></tr>`
      );
    })
    .join('');
  const kappa = doc.kappa === null ? 'n/a' : doc.kappa.toFixed(3);
  return (
    `<table class="consistency"><thead><tr><th>cluster</th><th>n</th>` +
    `<th>dominant</th><th>verdict</th><th>prevalences</th><th>significant</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>` +
    `<p class="kappa">Cohen's kappa: <b>${kappa}</b> ` +
    `(${doc.n_double_labeled} doubly labeled)</p>`
  );
}

function renderNode(node: TreeNode): string {
  const size = node.size === null ? '' : ` (${node.size})`;
  const theme = node.theme ? ` <em>${esc(node.theme)}</em>` : '';
  const note = node.note ? ` <small>[${esc(node.note)}]</small>` : '';
  const children = node.children.length
    ? `<ul>${node.children.map(renderNode).join('')}</ul>`
    : '';
  return `<li>cluster ${node.cluster}${size}${theme}${note}${children}</li>`;
}

export function renderRefineOutcome(outcome: RefineOutcome): string {
  if (outcome.kind === 'degenerate') {
    const buttons = outcome.payload.options
      .map((option) => `<button class="degenerate-option" data-option="${option}">${option}</button>`)
      .join(' ');
    return (
      `<div class="modal degenerate" role="dialog">` +
      `<p>Cluster ${outcome.payload.cluster} is inconsistent but has ` +
      `${outcome.payload.significant_themes.length} significant theme(s).</p>` +
      `<div class="options">${buttons}</div></div>`
    );
  }
  if (outcome.kind === 'incomplete') {
    const gaps = Object.entries(outcome.gaps)
      .map(([cluster, missing]) => `<li>cluster ${esc(cluster)}: ${missing} unlabeled</li>`)
      .join('');
    return `<div class="notice">labels incomplete<ul class="gaps">${gaps}</ul></div>`;
  }
  const banner = outcome.converged
    ? `<div class="banner converged">converged: average consistency ` +
      `${outcome.result.average_consistency.toFixed(3)}</div>`
    : `<div class="banner">round ${outcome.result.round} done: average consistency ` +
      `${outcome.result.average_consistency.toFixed(3)}</div>`;
  return `${banner}<ul class="cluster-tree">${outcome.tree.map(renderNode).join('')}</ul>`;
}
