/** Image grid for one cluster with progress and shortcut legend. */

import { shortcutLegend } from '../keyboard.js';
import type { SessionDoc } from '../types.js';

function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderProgress(done: number, total: number): string {
  const pct = total === 0 ? 0 : Math.round((100 * done) / total);
  return (
    `<div class="progress" role="progressbar" aria-valuenow="${done}" aria-valuemax="${total}">` +
    `<span class="bar" style="width:${pct}%"></span>` +
    `<span class="count">${done}/${total}</span></div>`
  );
}

export function renderShortcuts(suggested: string[]): string {
  const items = shortcutLegend(suggested)
    .map(({ key, theme }) => `<li><kbd>${key}</kbd> ${esc(theme)}</li>`)
    .join('');
  return `<ul class="shortcuts">${items}<li><kbd>t</kbd> free text</li></ul>`;
}

export function renderGrid(
  session: SessionDoc,
  cluster: string,
  labeled: Record<string, string>,
  thumbnailUrl: (imageId: string) => string,
): string {
  const ids = session.samples[cluster] ?? [];
  const cards = ids
    .map((imageId) => {
      const theme = labeled[imageId];
      const badge = theme ? `<span class="badge">${esc(theme)}</span>` : '';
      const done = theme ? ' labeled' : '';
      return (
        `<figure class="card${done}" data-image="${esc(imageId)}">` +
        `<img src="${esc(thumbnailUrl(imageId))}" alt="${esc(imageId)}" loading="lazy">` +
        `${badge}<figcaption>${esc(imageId)}</figcaption></figure>`
      );
    })
    .join('');
  return `<div class="grid" data-cluster="${esc(cluster)}">${cards}</div>`;
}

export function renderClusterTabs(session: SessionDoc, active: string | null): string {
  const tabs = Object.keys(session.samples)
    .sort()
    .map((cluster) => {
      const count = session.samples[cluster]?.length ?? 0;
      const current = cluster === active ? ' class="active"' : '';
      return `<button data-cluster="${esc(cluster)}"${current}>cluster ${esc(cluster)} (${count})</button>`;
    })
    .join('');
  return `<nav class="cluster-tabs">${tabs}</nav>`;
}
