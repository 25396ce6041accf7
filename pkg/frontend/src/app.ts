// Review workflow: show the next unannotated candidate set, let the reviewer
// pick the best meaning-preserving rewrite (or reject all), submit, advance.
// The server is the single source of truth; closing the page loses nothing.

import { ApiError, EndOfQueue, ReviewApi } from './api.js';
import { diffCandidate } from './diff.js';
import { actionForKey, isTypingTarget } from './keyboard.js';
import type { CandidateSet, Decision } from './types.js';

interface Refs {
  annotator: HTMLInputElement;
  kindFilter: HTMLSelectElement;
  banner: HTMLElement;
  retryButton: HTMLElement;
  taskPanel: HTMLElement;
  donePanel: HTMLElement;
  kindBadge: HTMLElement;
  originalNl: HTMLElement;
  goldSql: HTMLElement;
  candidateList: HTMLElement;
  rejectButton: HTMLElement;
  submitButton: HTMLElement;
  progress: HTMLElement;
}

export interface ReviewApp {
  start(): Promise<void>;
  refresh(): Promise<void>;
  handleKey(key: string): Promise<void>;
  select(index: number): void;
  chooseReject(): void;
  submit(): Promise<void>;
  readonly state: {
    task: CandidateSet | null;
    decision: Decision | null;
    busy: boolean;
  };
}

function refsFrom(doc: Document): Refs {
  const get = (id: string) => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el;
  };
  return {
    annotator: get('annotator') as HTMLInputElement,
    kindFilter: get('kind-filter') as HTMLSelectElement,
    banner: get('banner'),
    retryButton: get('retry-btn'),
    taskPanel: get('task-panel'),
    donePanel: get('done-panel'),
    kindBadge: get('kind-badge'),
    originalNl: get('original-nl'),
    goldSql: get('gold-sql'),
    candidateList: get('candidate-list'),
    rejectButton: get('reject-btn'),
    submitButton: get('submit-btn'),
    progress: get('progress'),
  };
}

export function createReviewApp(api: ReviewApi, doc: Document): ReviewApp {
  const refs = refsFrom(doc);
  const state: ReviewApp['state'] = { task: null, decision: null, busy: false };

  function showBanner(message: string) {
    refs.banner.hidden = false;
    refs.banner.querySelector('.banner-text')!.textContent = message;
  }

  function clearBanner() {
    refs.banner.hidden = true;
  }

  function renderProgress(progress: Record<string, { total: number; annotated: number; rejected: number }>) {
    const parts = Object.keys(progress)
      .sort()
      .map((kind) => {
        const p = progress[kind];
        return `${kind} ${p.annotated}/${p.total}${p.rejected ? ` (${p.rejected} rejected)` : ''}`;
      });
    refs.progress.textContent = parts.join(' · ') || 'no tasks loaded';
  }

  function renderTask(task: CandidateSet) {
    refs.taskPanel.hidden = false;
    refs.donePanel.hidden = true;
    refs.kindBadge.textContent = task.kind;
    refs.originalNl.textContent = task.original.nl;
    refs.goldSql.textContent = task.original.gold_sql;
    refs.candidateList.textContent = '';
    task.ranked.forEach((candidate, index) => {
      const item = doc.createElement('li');
      item.className = 'candidate';
      item.dataset.index = String(index);

      const key = doc.createElement('span');
      key.className = 'key-hint';
      key.textContent = index === 9 ? '0' : String(index + 1);
      item.appendChild(key);

      const text = doc.createElement('span');
      text.className = 'candidate-text';
      // diff spans wrap the candidate's words; bytes stay exactly as served
      for (const span of diffCandidate(task.original.nl, candidate.text)) {
        if (text.childNodes.length > 0) {
          text.appendChild(doc.createTextNode(' '));
        }
        if (span.changed) {
          const mark = doc.createElement('mark');
          mark.textContent = span.text;
          text.appendChild(mark);
        } else {
          text.appendChild(doc.createTextNode(span.text));
        }
      }
      item.appendChild(text);

      const score = doc.createElement('span');
      score.className = 'similarity';
      score.textContent =
        candidate.similarity === null ? '' : candidate.similarity.toFixed(4);
      item.appendChild(score);

      item.addEventListener('click', () => select(index));
      refs.candidateList.appendChild(item);
    });
  }

  function renderSelection() {
    const items = refs.candidateList.querySelectorAll('li');
    items.forEach((item) => {
      const index = Number((item as HTMLElement).dataset.index);
      item.classList.toggle('selected', state.decision === index);
    });
    refs.rejectButton.classList.toggle('selected', state.decision === 'reject');
  }

  function renderDone() {
    state.task = null;
    state.decision = null;
    refs.taskPanel.hidden = true;
    refs.donePanel.hidden = false;
  }

  async function refreshProgress() {
    try {
      renderProgress(await api.fetchProgress());
    } catch {
      // progress is cosmetic; never block the queue on it
    }
  }

  async function refresh(): Promise<void> {
    clearBanner();
    state.decision = null;
    try {
      const task = await api.fetchNextTask(
        refs.kindFilter.value,
        refs.annotator.value.trim(),
      );
      state.task = task;
      renderTask(task);
      renderSelection();
    } catch (err) {
      if (err instanceof EndOfQueue) {
        renderDone();
      } else {
        showBanner(`cannot reach the review service: ${String((err as Error).message)}`);
      }
    }
    await refreshProgress();
  }

  function select(index: number) {
    if (!state.task || index >= state.task.ranked.length) return;
    state.decision = index;
    renderSelection();
  }

  function chooseReject() {
    if (!state.task) return;
    state.decision = 'reject';
    renderSelection();
  }

  async function submit(): Promise<void> {
    if (!state.task || state.decision === null || state.busy) return;
    const annotator = refs.annotator.value.trim();
    if (!annotator) {
      showBanner('enter an annotator name before submitting');
      return;
    }
    state.busy = true;
    try {
      await api.submitAnnotation(state.task.id, state.decision, annotator);
      await refresh(); // optimistic advance on 201
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else got here first; reload the authoritative view
        await refresh();
      } else if (err instanceof ApiError) {
        showBanner(err.message);
      } else {
        showBanner(`cannot reach the review service: ${String((err as Error).message)}`);
      }
    } finally {
      state.busy = false;
    }
  }

  async function handleKey(key: string): Promise<void> {
    const action = actionForKey(key);
    if (!action || !state.task) return;
    if (action.type === 'select') select(action.index);
    else if (action.type === 'reject') chooseReject();
    else await submit();
  }

  async function start(): Promise<void> {
    doc.addEventListener('keydown', (event) => {
      if (isTypingTarget(event.target)) return;
      const action = actionForKey(event.key);
      if (action) {
        event.preventDefault();
        void handleKey(event.key);
      }
    });
    refs.rejectButton.addEventListener('click', () => chooseReject());
    refs.submitButton.addEventListener('click', () => void submit());
    refs.retryButton.addEventListener('click', () => void refresh());
    refs.kindFilter.addEventListener('change', () => void refresh());
    await refresh();
  }

  return { start, refresh, handleKey, select, chooseReject, submit, state };
}
