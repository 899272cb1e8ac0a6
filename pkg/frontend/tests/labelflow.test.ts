/** Labeling flow rules: every label acknowledged before advancing, network
 * failures park the queue without duplicate submissions, and server
 * rejections surface inline without losing the coder's position. */

import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { LabelFlow } from '../src/labelflow.js';
import { initialState, progressFor, recordAck } from '../src/state.js';
import { ScriptedFetch, type ScriptedReply } from './stub.js';

function flowWith(replies: ScriptedReply[]) {
  const scripted = new ScriptedFetch(replies);
  const api = new ApiClient('', 'tok', scripted.fetch);
  return { scripted, api };
}

function label(i: number) {
  return { coder_id: 'alice', image_id: `img${i}`, theme: 'Posters' };
}

describe('LabelFlow', () => {
  it('acknowledges all 50 labels and fills the progress bar', async () => {
    const { scripted, api } = flowWith(
      Array.from({ length: 50 }, () => ({ status: 204 })),
    );
    let state = initialState();
    const flow = new LabelFlow(api, 's1', (acked) => {
      state = recordAck(state, acked.coder_id, acked.image_id, acked.theme);
    });
    for (let i = 0; i < 50; i += 1) {
      flow.submit(label(i));
    }
    expect(await flow.flush()).toBe(true);
    expect(flow.acked).toHaveLength(50);
    expect(scripted.requests).toHaveLength(50);
    state = { ...state, session: { n_sampled: 50 } as never };
    expect(progressFor(state, 'alice')).toEqual({ done: 50, total: 50 });
  });

  it('parks on network failure and retries without duplicates', async () => {
    const { scripted, api } = flowWith([
      { status: 204 },
      { networkError: true },
      { status: 204 },
      { status: 204 },
    ]);
    const flow = new LabelFlow(api, 's1');
    flow.submit(label(0));
    flow.submit(label(1));
    flow.submit(label(2));

    expect(await flow.flush()).toBe(false); // parked mid-queue
    expect(flow.acked).toHaveLength(1);
    expect(flow.pending).toBe(2);

    expect(await flow.flush()).toBe(true); // retry drains the rest
    expect(flow.acked.map((l) => l.image_id)).toEqual(['img0', 'img1', 'img2']);
    // img1 was sent twice in total (fail + retry) but acknowledged once,
    // and no other label was re-sent
    const sent = scripted.requests.map((r) => (r.body as { image_id: string }).image_id);
    expect(sent).toEqual(['img0', 'img1', 'img1', 'img2']);
  });

  it('surfaces 409/422 inline and keeps going', async () => {
    const { api } = flowWith([
      { status: 204 },
      { status: 409, body: { detail: 'already adjudicated' } },
      { status: 204 },
    ]);
    const rejections: number[] = [];
    const flow = new LabelFlow(api, 's1', undefined, (rejection) => {
      rejections.push(rejection.status);
    });
    flow.submit(label(0));
    flow.submit(label(1));
    flow.submit(label(2));
    expect(await flow.flush()).toBe(true);
    expect(flow.acked.map((l) => l.image_id)).toEqual(['img0', 'img2']);
    expect(flow.rejected).toHaveLength(1);
    expect(rejections).toEqual([409]);
  });
});
