// Application controller: wires the service client, the view-state store,
// and the renderer into the stepwise assessment loop.

import { ApiError, ServiceClient } from './api';
import { renderFailure, renderStep } from './render';
import {
  AnswerDraft,
  Store,
  clearDraft,
  draftSatisfiesSchema,
  emptyDraft,
  loadDraft,
  saveDraft,
} from './state';
import type { AnswerBody, StepInfo, StepPayload } from './types';

export class AssessmentApp {
  readonly store = new Store();
  readonly stepCatalog = new Map<string, StepInfo>();

  constructor(private root: HTMLElement,
              private client: ServiceClient,
              private storage: Storage) {}

  async start(workflow: string, document: string): Promise<void> {
    const session = await this.client.createSession(workflow, document);
    this.store.set({ session: session.session });
    await this.refresh();
  }

  async resume(sessionId: string): Promise<void> {
    this.store.set({ session: sessionId });
    await this.refresh();
  }

  private activeStep(payload: StepPayload | null): StepInfo | undefined {
    const state = this.store.get();
    if (state.revisionTarget) {
      return this.stepCatalog.get(state.revisionTarget);
    }
    return payload?.step;
  }

  async refresh(): Promise<void> {
    const state = this.store.get();
    if (!state.session) return;
    try {
      const payload = await this.client.nextStep(state.session);
      if (payload.step) {
        this.stepCatalog.set(payload.step.id, payload.step);
      }
      const step = this.activeStep(payload);
      const infer = step !== undefined
        && (step.kind === 'infer' || step.kind === 'infer_knowledge');
      this.client.setInferActive(infer);
      const draft = step
        ? loadDraft(this.storage, state.session, step.id)
        : emptyDraft();
      this.store.set({ payload, draft, lastError: null });
      this.render();
    } catch (err) {
      renderFailure(this.root, err, this.context());
    }
  }

  private render(): void {
    const state = this.store.get();
    if (!state.payload) return;
    renderStep(this.root, state.payload, this.context());
  }

  private context() {
    const state = this.store.get();
    return {
      draft: state.draft,
      history: state.history,
      staleSteps: state.staleSteps,
      error: state.lastError,
      stepCatalog: this.stepCatalog,
      revisionTarget: state.revisionTarget,
      onDraftChange: (draft: AnswerDraft) => this.changeDraft(draft),
      onSubmit: () => { void this.submit(); },
      onNavigate: (stepId: string | null) => { void this.navigate(stepId); },
      onRetry: () => { void this.refresh(); },
    };
  }

  changeDraft(draft: AnswerDraft): void {
    const state = this.store.get();
    const step = this.activeStep(state.payload);
    if (state.session && step) {
      saveDraft(this.storage, state.session, step.id, draft);
    }
    this.store.set({ draft });
    this.render();
  }

  async submit(): Promise<void> {
    const state = this.store.get();
    const step = this.activeStep(state.payload);
    if (!state.session || !step) return;
    if (!draftSatisfiesSchema(step, state.draft)) {
      this.store.set({ lastError: 'Answer does not satisfy the step schema' });
      this.render();
      return;
    }
    const body: AnswerBody = {
      step: step.id,
      text: state.draft.text,
      boolean: step.schema === 'boolean_with_text' ? state.draft.boolean : null,
      highlights: state.draft.highlights,
      uncertain: state.draft.uncertain,
    };
    try {
      const response = await this.client.submitAnswer(state.session, body);
      clearDraft(this.storage, state.session, step.id);
      const history = state.history.includes(step.id)
        ? state.history : [...state.history, step.id];
      this.store.set({
        history,
        staleSteps: response.stale_steps,
        revisionTarget: null,
        lastError: null,
      });
      await this.refresh(); // optimistic advance: server accepted, move on
    } catch (err) {
      // rejection re-opens the draft with the reason; nothing is lost
      const detail = err instanceof ApiError ? err.detail : String(err);
      this.store.set({ lastError: detail });
      this.render();
    }
  }

  async navigate(stepId: string | null): Promise<void> {
    const state = this.store.get();
    if (!state.session) return;
    if (stepId === null) {
      this.store.set({ revisionTarget: null });
      await this.refresh();
      return;
    }
    if (!state.history.includes(stepId)) {
      this.store.set({ lastError: 'Only answered steps can be revised' });
      this.render();
      return;
    }
    this.store.set({
      revisionTarget: stepId,
      draft: loadDraft(this.storage, state.session, stepId),
    });
    await this.refresh();
  }
}

export function bootstrap(): void {
  const params = new URLSearchParams(window.location.search);
  const baseUrl = params.get('service')
    ?? localStorage.getItem('docdiag-service') ?? 'http://127.0.0.1:8400';
  const token = params.get('token')
    ?? localStorage.getItem('docdiag-token') ?? '';
  const workflow = params.get('workflow') ?? 'biomed-paper-assessment';
  const documentId = params.get('document') ?? '';
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');
  const client = new ServiceClient({ baseUrl, token });
  const app = new AssessmentApp(root, client, localStorage);
  const existing = params.get('session');
  void (existing ? app.resume(existing) : app.start(workflow, documentId));
}

declare global {
  interface Window { docdiagBootstrap?: () => void }
}
if (typeof window !== 'undefined') {
  window.docdiagBootstrap = bootstrap;
}
