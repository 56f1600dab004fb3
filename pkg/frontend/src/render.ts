// DOM rendering for the assessment screens: split-pane document viewer,
// stepwise questionnaire, modal for infer steps, completion summary, and a
// retry screen when rendering itself fails.

import { readDomSelection, selectionToSpans, spanText } from './highlight';
import type { AnswerDraft } from './state';
import { draftSatisfiesSchema } from './state';
import type { DocumentBlock, StepInfo, StepPayload } from './types';

export interface RenderContext {
  draft: AnswerDraft;
  history: string[];
  staleSteps: string[];
  error: string | null;
  stepCatalog: Map<string, StepInfo>;
  revisionTarget: string | null;
  onDraftChange(draft: AnswerDraft): void;
  onSubmit(): void;
  onNavigate(stepId: string | null): void;
  onRetry(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document, tag: K, className?: string,
  text?: string): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderStep(root: HTMLElement, payload: StepPayload,
                           ctx: RenderContext): void {
  try {
    renderUnsafe(root, payload, ctx);
  } catch (err) {
    renderFailure(root, err, ctx);
  }
}

function renderUnsafe(root: HTMLElement, payload: StepPayload,
                      ctx: RenderContext): void {
  const doc = root.ownerDocument;
  root.innerHTML = '';
  const screen = el(doc, 'div', 'screen');
  root.appendChild(screen);

  if (payload.complete && !ctx.revisionTarget) {
    screen.appendChild(renderCompletion(doc, payload, ctx));
    return;
  }

  const step = ctx.revisionTarget
    ? ctx.stepCatalog.get(ctx.revisionTarget)
    : payload.step;
  if (!step) {
    throw new Error('payload carries no step');
  }
  const hideDocument = ctx.revisionTarget
    ? step.kind === 'infer' || step.kind === 'infer_knowledge'
    : Boolean(payload.hide_document);

  const split = el(doc, 'div', 'split-pane');
  screen.appendChild(split);

  const documentPane = el(doc, 'section', 'document-pane');
  split.appendChild(documentPane);
  if (hideDocument) {
    documentPane.classList.add('blocked');
    documentPane.appendChild(el(
      doc, 'div', 'document-blocked',
      'Document hidden for this step. Answer from the prior answers only.'));
  } else {
    renderDocumentBlocks(doc, documentPane, payload.document_blocks ?? [],
                         step, ctx);
  }

  const taskPane = el(doc, 'aside', 'task-pane');
  split.appendChild(taskPane);
  renderProgress(doc, taskPane, payload, ctx);
  renderHistory(doc, taskPane, ctx);

  const form = renderAnswerForm(doc, step, payload, ctx);
  if (step.kind === 'infer' || step.kind === 'infer_knowledge') {
    // modal above the blocked document, prior answers on the left
    const overlay = el(doc, 'div', 'modal-overlay');
    const modal = el(doc, 'div', 'modal infer-modal');
    overlay.appendChild(modal);
    const parents = el(doc, 'div', 'modal-parents');
    renderParents(doc, parents, payload, ctx);
    modal.appendChild(parents);
    modal.appendChild(form);
    screen.appendChild(overlay);
  } else {
    if ((payload.parents ?? []).length > 0) {
      const parents = el(doc, 'div', 'task-parents');
      renderParents(doc, parents, payload, ctx);
      taskPane.appendChild(parents);
    }
    taskPane.appendChild(form);
  }

  if (ctx.error) {
    const banner = el(doc, 'div', 'error-banner', ctx.error);
    taskPane.prepend(banner);
  }
}

function renderCompletion(doc: Document, payload: StepPayload,
                          ctx: RenderContext): HTMLElement {
  const summary = el(doc, 'div', 'completion-summary');
  summary.appendChild(el(doc, 'h2', undefined, 'Assessment complete'));
  summary.appendChild(el(
    doc, 'p', 'completion-progress',
    `${payload.progress.answered} of ${payload.progress.total} steps answered.`));
  if (ctx.staleSteps.length > 0) {
    summary.appendChild(el(
      doc, 'p', 'stale-note',
      `Revisit recommended: ${ctx.staleSteps.length} answers depend on a ` +
      'revised step.'));
  }
  renderHistory(doc, summary, ctx);
  return summary;
}

function renderDocumentBlocks(doc: Document, pane: HTMLElement,
                              blocks: DocumentBlock[], step: StepInfo,
                              ctx: RenderContext): void {
  const highlightable = step.kind === 'extract';
  if (highlightable) {
    pane.classList.add('highlightable');
    pane.addEventListener('mouseup', () => {
      const selection = readDomSelection(pane);
      if (!selection) return;
      const spans = selectionToSpans(blocks, selection);
      if (spans.length > 0) {
        ctx.onDraftChange({
          ...ctx.draft,
          highlights: [...ctx.draft.highlights, ...spans],
        });
      }
    });
  }
  for (const block of blocks) {
    let node: HTMLElement;
    if (block.kind === 'heading') {
      node = el(doc, 'h3', 'block block-heading', block.text);
    } else if (block.kind === 'figure' || block.kind === 'table') {
      node = el(doc, 'figure', `block block-${block.kind}`);
      if (block.image) {
        const img = el(doc, 'img', 'block-image') as HTMLImageElement;
        img.alt = block.text;
        img.src = block.image.includes('/')
          ? block.image : `data:image/jpeg;base64,${block.image}`;
        node.appendChild(img);
      }
      node.appendChild(el(doc, 'figcaption', undefined, block.text));
    } else {
      node = el(doc, 'p', 'block block-paragraph', block.text);
    }
    node.setAttribute('data-block-id', block.id);
    pane.appendChild(node);
  }
}

function renderParents(doc: Document, container: HTMLElement,
                       payload: StepPayload, ctx: RenderContext): void {
  container.appendChild(el(doc, 'h4', undefined, 'Your prior answers'));
  for (const parent of payload.parents ?? []) {
    const item = el(doc, 'div', 'parent-answer');
    if (parent.stale || ctx.staleSteps.includes(parent.step)) {
      item.classList.add('stale');
      item.appendChild(el(doc, 'span', 'stale-badge', 'revised upstream'));
    }
    item.appendChild(el(doc, 'strong', undefined, parent.name));
    if (parent.boolean !== null) {
      item.appendChild(el(doc, 'span', 'parent-boolean',
                          parent.boolean ? 'yes' : 'no'));
    }
    item.appendChild(el(doc, 'p', 'parent-text', parent.text));
    container.appendChild(item);
  }
}

function renderProgress(doc: Document, pane: HTMLElement,
                        payload: StepPayload, ctx: RenderContext): void {
  const { answered, total } = payload.progress;
  pane.appendChild(el(doc, 'div', 'progress', `Step ${answered + 1} / ${total}`));
}

function renderHistory(doc: Document, pane: HTMLElement,
                       ctx: RenderContext): void {
  if (ctx.history.length === 0) return;
  const nav = el(doc, 'nav', 'history');
  nav.appendChild(el(doc, 'h4', undefined, 'Answered steps'));
  for (const stepId of ctx.history) {
    const info = ctx.stepCatalog.get(stepId);
    const button = el(doc, 'button', 'history-entry',
                      info ? info.name : stepId);
    button.setAttribute('data-step-id', stepId);
    if (ctx.staleSteps.includes(stepId)) {
      button.classList.add('stale');
      button.appendChild(el(doc, 'span', 'stale-badge', '!'));
    }
    button.addEventListener('click', () => ctx.onNavigate(stepId));
    nav.appendChild(button);
  }
  if (ctx.revisionTarget) {
    const back = el(doc, 'button', 'history-back', 'Back to current step');
    back.addEventListener('click', () => ctx.onNavigate(null));
    nav.appendChild(back);
  }
  pane.appendChild(nav);
}

function renderAnswerForm(doc: Document, step: StepInfo, payload: StepPayload,
                          ctx: RenderContext): HTMLElement {
  const form = el(doc, 'div', 'answer-form');
  form.setAttribute('data-step-id', step.id);
  form.appendChild(el(doc, 'h2', 'step-name', step.name));
  if (ctx.revisionTarget) {
    form.appendChild(el(doc, 'div', 'revision-banner',
                        'Revising an earlier answer. Steps that build on it '
                        + 'will be marked for review.'));
  }
  form.appendChild(el(doc, 'p', 'step-prompt', step.prompt));
  if (step.description) {
    form.appendChild(el(doc, 'p', 'step-description', step.description));
  }
  if (step.example) {
    const details = el(doc, 'details', 'step-example');
    details.appendChild(el(doc, 'summary', undefined, 'Example answer'));
    details.appendChild(el(doc, 'p', undefined, step.example));
    form.appendChild(details);
  }

  if (step.schema === 'boolean_with_text') {
    const group = el(doc, 'div', 'boolean-group');
    for (const value of [true, false]) {
      const label = el(doc, 'label', 'boolean-option');
      const radio = el(doc, 'input') as HTMLInputElement;
      radio.type = 'radio';
      radio.name = `boolean-${step.id}`;
      radio.checked = ctx.draft.boolean === value;
      radio.addEventListener('change', () => {
        ctx.onDraftChange({ ...ctx.draft, boolean: value });
      });
      label.appendChild(radio);
      label.appendChild(doc.createTextNode(value ? 'Yes' : 'No'));
      group.appendChild(label);
    }
    form.appendChild(group);
  }

  if (step.kind !== 'read') {
    const textarea = el(doc, 'textarea', 'answer-text') as HTMLTextAreaElement;
    textarea.placeholder = 'Your answer...';
    textarea.value = ctx.draft.text;
    textarea.addEventListener('input', () => {
      ctx.onDraftChange({ ...ctx.draft, text: textarea.value });
    });
    form.appendChild(textarea);
  }

  if (step.schema === 'text_with_highlights') {
    const list = el(doc, 'ul', 'highlight-list');
    ctx.draft.highlights.forEach((span, index) => {
      const item = el(doc, 'li', 'highlight-item');
      const text = spanText(payload.document_blocks ?? [], span);
      item.appendChild(el(doc, 'span', 'highlight-text',
                          text || `${span.block} ${span.start}-${span.end}`));
      const remove = el(doc, 'button', 'highlight-remove', 'x');
      remove.addEventListener('click', () => {
        const highlights = ctx.draft.highlights.filter((_, i) => i !== index);
        ctx.onDraftChange({ ...ctx.draft, highlights });
      });
      item.appendChild(remove);
      list.appendChild(item);
    });
    form.appendChild(list);
  }

  const flag = el(doc, 'label', 'uncertain-flag');
  const checkbox = el(doc, 'input') as HTMLInputElement;
  checkbox.type = 'checkbox';
  checkbox.checked = ctx.draft.uncertain;
  checkbox.addEventListener('change', () => {
    ctx.onDraftChange({ ...ctx.draft, uncertain: checkbox.checked });
  });
  flag.appendChild(checkbox);
  flag.appendChild(doc.createTextNode(
    ' I am uncertain about this answer (use sparingly)'));
  form.appendChild(flag);

  const submit = el(doc, 'button', 'submit-answer',
                    step.kind === 'read' ? 'Done reading' : 'Submit answer');
  submit.disabled = !draftSatisfiesSchema(step, ctx.draft);
  submit.addEventListener('click', () => ctx.onSubmit());
  form.appendChild(submit);
  return form;
}

export function renderFailure(root: HTMLElement, err: unknown,
                              ctx: RenderContext): void {
  const doc = root.ownerDocument;
  root.innerHTML = '';
  const box = el(doc, 'div', 'render-failure');
  box.appendChild(el(doc, 'h2', undefined, 'Something went wrong'));
  box.appendChild(el(doc, 'p', 'failure-detail', String(err)));
  const retry = el(doc, 'button', 'retry', 'Retry');
  retry.addEventListener('click', () => ctx.onRetry());
  box.appendChild(retry);
  root.appendChild(box);
}
