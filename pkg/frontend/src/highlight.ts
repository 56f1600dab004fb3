// Character-offset highlights, always computed against the canonical block
// text from the service, never against rendered HTML, so stored spans stay
// stable across styling changes.

import type { DocumentBlock, HighlightSpan } from './types';

export interface BlockSelection {
  startBlock: string;
  startOffset: number;
  endBlock: string;
  endOffset: number;
}

/** Turn a selection into spans, one per touched block. A selection that
 *  crosses block boundaries becomes one highlight per block. */
export function selectionToSpans(blocks: readonly Pick<DocumentBlock, 'id' | 'text'>[],
                                 sel: BlockSelection): HighlightSpan[] {
  const ids = blocks.map((b) => b.id);
  let from = ids.indexOf(sel.startBlock);
  let to = ids.indexOf(sel.endBlock);
  if (from < 0 || to < 0) {
    return [];
  }
  let { startOffset, endOffset } = sel;
  if (from > to || (from === to && startOffset > endOffset)) {
    [from, to] = [to, from];
    [startOffset, endOffset] = [endOffset, startOffset];
  }
  const spans: HighlightSpan[] = [];
  for (let i = from; i <= to; i += 1) {
    const block = blocks[i]!;
    const length = block.text.length;
    const start = i === from ? Math.max(0, Math.min(startOffset, length)) : 0;
    const end = i === to ? Math.max(0, Math.min(endOffset, length)) : length;
    if (start < end) {
      spans.push({ block: block.id, start, end });
    }
  }
  return spans;
}

/** Read the browser selection inside the document pane into block-relative
 *  character offsets via the data-block-id markers. */
export function readDomSelection(pane: HTMLElement): BlockSelection | null {
  const selection = pane.ownerDocument.defaultView?.getSelection?.();
  if (!selection || selection.rangeCount === 0 || selection.isCollapsed) {
    return null;
  }
  const range = selection.getRangeAt(0);
  const start = locate(pane, range.startContainer, range.startOffset);
  const end = locate(pane, range.endContainer, range.endOffset);
  if (!start || !end) {
    return null;
  }
  return {
    startBlock: start.block,
    startOffset: start.offset,
    endBlock: end.block,
    endOffset: end.offset,
  };
}

function locate(pane: HTMLElement, node: Node,
                offset: number): { block: string; offset: number } | null {
  let element: HTMLElement | null =
    node.nodeType === Node.ELEMENT_NODE ? (node as HTMLElement) : node.parentElement;
  while (element && element !== pane) {
    const block = element.getAttribute('data-block-id');
    if (block) {
      return { block, offset };
    }
    element = element.parentElement;
  }
  return null;
}

export function spanText(blocks: readonly Pick<DocumentBlock, 'id' | 'text'>[],
                         span: HighlightSpan): string {
  const block = blocks.find((b) => b.id === span.block);
  return block ? block.text.slice(span.start, span.end) : '';
}
