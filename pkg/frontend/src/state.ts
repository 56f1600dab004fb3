// View state store with subscribe/notify, plus draft persistence so the
// active step's unsent answer survives a page reload.

import type { HighlightSpan, StepInfo, StepPayload } from './types';

export interface AnswerDraft {
  text: string;
  boolean: boolean | null;
  highlights: HighlightSpan[];
  uncertain: boolean;
}

export function emptyDraft(): AnswerDraft {
  return { text: '', boolean: null, highlights: [], uncertain: false };
}

export interface ViewState {
  session: string | null;
  payload: StepPayload | null;
  draft: AnswerDraft;
  /** answered step ids in submission order; drives revision navigation */
  history: string[];
  /** steps flagged stale by the last revision */
  staleSteps: string[];
  /** step currently being revised; null when answering the cursor step */
  revisionTarget: string | null;
  lastError: string | null;
}

export function initialState(): ViewState {
  return {
    session: null,
    payload: null,
    draft: emptyDraft(),
    history: [],
    staleSteps: [],
    revisionTarget: null,
    lastError: null,
  };
}

type Listener = (state: ViewState) => void;

export class Store {
  private state: ViewState = initialState();
  private listeners: Listener[] = [];

  get(): ViewState {
    return this.state;
  }

  set(partial: Partial<ViewState>): void {
    this.state = { ...this.state, ...partial };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }
}

/** The submit gate: a draft must satisfy the step's answer schema before it
 *  may be dispatched. */
export function draftSatisfiesSchema(step: StepInfo, draft: AnswerDraft): boolean {
  if (step.schema === 'boolean_with_text') {
    return draft.boolean !== null;
  }
  if (step.kind === 'read') {
    return true; // reading is confirmed, not answered
  }
  return draft.text.trim().length > 0;
}

const DRAFT_PREFIX = 'docdiag-draft';

function draftKey(session: string, step: string): string {
  return `${DRAFT_PREFIX}:${session}:${step}`;
}

export function saveDraft(storage: Storage, session: string, step: string,
                          draft: AnswerDraft): void {
  storage.setItem(draftKey(session, step), JSON.stringify(draft));
}

export function loadDraft(storage: Storage, session: string,
                          step: string): AnswerDraft {
  const raw = storage.getItem(draftKey(session, step));
  if (!raw) {
    return emptyDraft();
  }
  try {
    const parsed = JSON.parse(raw);
    return {
      text: typeof parsed.text === 'string' ? parsed.text : '',
      boolean: typeof parsed.boolean === 'boolean' ? parsed.boolean : null,
      highlights: Array.isArray(parsed.highlights) ? parsed.highlights : [],
      uncertain: Boolean(parsed.uncertain),
    };
  } catch {
    return emptyDraft();
  }
}

export function clearDraft(storage: Storage, session: string, step: string): void {
  storage.removeItem(draftKey(session, step));
}
