/** Browser entry point: wires the API client, label flow, and panels onto
 * the static page served by the annotation service at /ui. */

import { ApiClient } from './api.js';
import { themeForKey } from './keyboard.js';
import { LabelFlow } from './labelflow.js';
import { RefineControl } from './refinecontrol.js';
import {
  applyAdjudications,
  applyConsistency,
  applySession,
  initialState,
  progressFor,
  recordAck,
  type ViewState,
} from './state.js';
import { renderClusterTabs, renderGrid, renderProgress, renderShortcuts } from './views/grid.js';
import {
  renderAdjudications,
  renderConsistencyPanel,
  renderRefineOutcome,
} from './views/panels.js';

interface AppConfig {
  baseUrl: string;
  runId: string;
  coderId: string;
  token: string;
}

function readConfig(): AppConfig {
  const params = new URLSearchParams(window.location.search);
  return {
    baseUrl: params.get('base') ?? '',
    runId: params.get('run') ?? 'run',
    coderId: params.get('coder') ?? 'coder-a',
    token: params.get('token') ?? '',
  };
}

export async function boot(root: HTMLElement, config: AppConfig): Promise<void> {
  const api = new ApiClient(config.baseUrl, config.token);
  const refine = new RefineControl(api, config.runId);
  let state: ViewState = initialState();
  let selection: string | null = null;

  const run = await api.runInfo(config.runId);
  const session = run.session_open
    ? await api.getSession(`${config.runId}-r${run.round}`)
    : await api.createSession(config.runId);
  state = applySession(state, session);

  const flow = new LabelFlow(
    api,
    session.session_id,
    (label) => {
      state = recordAck(state, label.coder_id, label.image_id, label.theme);
      void refreshPanels().then(render);
    },
    (rejection) => {
      state = { ...state, notice: `label rejected (${rejection.status})` };
      render();
    },
  );

  async function refreshPanels(): Promise<void> {
    state = applyConsistency(state, await api.getConsistency(session.session_id));
    state = applyAdjudications(state, await api.getAdjudications(session.session_id));
  }

  function render(): void {
    if (!state.session || !state.activeCluster) {
      return;
    }
    const mine = state.labeled[config.coderId] ?? {};
    const progress = progressFor(state, config.coderId);
    root.querySelector('#tabs')!.innerHTML = renderClusterTabs(state.session, state.activeCluster);
    root.querySelector('#progress')!.innerHTML = renderProgress(progress.done, progress.total);
    root.querySelector('#shortcuts')!.innerHTML = renderShortcuts(state.session.suggested_themes);
    root.querySelector('#grid')!.innerHTML = renderGrid(
      state.session,
      state.activeCluster,
      mine,
      (imageId) => api.thumbnailUrl(config.runId, imageId),
    );
    root.querySelector('#adjudications')!.innerHTML = renderAdjudications(
      state.pendingAdjudications,
    );
    root.querySelector('#consistency')!.innerHTML = renderConsistencyPanel(state.consistency);
    root.querySelector('#notice')!.textContent = state.notice ?? '';
  }

  root.addEventListener('click', (event) => {
    const target = event.target as HTMLElement;
    const tab = target.closest('.cluster-tabs button') as HTMLElement | null;
    if (tab?.dataset.cluster) {
      state = { ...state, activeCluster: tab.dataset.cluster };
      render();
      return;
    }
    const card = target.closest('.card') as HTMLElement | null;
    if (card?.dataset.image) {
      selection = card.dataset.image;
      card.classList.add('selected');
      return;
    }
    const resolve = target.closest('.adjudicate') as HTMLElement | null;
    if (resolve) {
      const item = resolve.closest('.adjudication') as HTMLElement;
      const input = item.querySelector('.adjudicate-theme') as HTMLInputElement;
      if (item.dataset.image && input.value.trim()) {
        void api
          .adjudicate(session.session_id, item.dataset.image, input.value.trim())
          .then(refreshPanels)
          .then(render);
      }
      return;
    }
    if (target.id === 'refine') {
      void (async () => {
        const outcome = await refine.trigger(
          state.session!,
          state.consistency,
          Object.fromEntries(
            Object.entries(state.session!.samples).map(([c, ids]) => [c, ids.length]),
          ),
        );
        root.querySelector('#refine-result')!.innerHTML = renderRefineOutcome(outcome);
      })();
    }
    const option = target.closest('.degenerate-option') as HTMLElement | null;
    if (option?.dataset.option) {
      void (async () => {
        const outcome = await refine.trigger(
          state.session!,
          state.consistency,
          Object.fromEntries(
            Object.entries(state.session!.samples).map(([c, ids]) => [c, ids.length]),
          ),
          option.dataset.option as never,
        );
        root.querySelector('#refine-result')!.innerHTML = renderRefineOutcome(outcome);
      })();
    }
  });

  document.addEventListener('keydown', (event) => {
    if (!selection || !state.session) {
      return;
    }
    const theme =
      event.key === 't'
        ? window.prompt('theme for ' + selection)
        : themeForKey(event.key, state.session.suggested_themes);
    if (theme) {
      flow.submit({ coder_id: config.coderId, image_id: selection, theme });
      selection = null;
      void flow.flush();
    }
  });

  await refreshPanels();
  render();
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  void boot(document.getElementById('app')!, readConfig());
}
