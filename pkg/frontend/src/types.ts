// Payload shapes of the assessment service (see the backend's OpenAPI docs).

export interface StepInfo {
  id: string;
  name: string;
  kind: 'read' | 'extract' | 'infer' | 'infer_knowledge';
  prompt: string;
  description: string;
  example: string;
  schema: 'free_text' | 'boolean_with_text' | 'text_with_highlights';
}

export interface ParentAnswer {
  step: string;
  name: string;
  text: string;
  boolean: boolean | null;
  stale: boolean;
}

export interface DocumentBlock {
  id: string;
  kind: 'paragraph' | 'figure' | 'table' | 'heading';
  text: string;
  image: string | null;
}

export interface Progress {
  answered: number;
  total: number;
  cursor: number;
}

export interface StepPayload {
  session: string;
  complete: boolean;
  progress: Progress;
  step?: StepInfo;
  hide_document?: boolean;
  parents?: ParentAnswer[];
  document_blocks?: DocumentBlock[];
}

export interface SessionInfo {
  session: string;
  execution: string;
  workflow: string;
  document: string;
  agent: string;
  cursor: number;
  total_steps: number;
}

export interface HighlightSpan {
  block: string;
  start: number;
  end: number;
}

export interface AnswerBody {
  step: string;
  text: string;
  boolean?: boolean | null;
  highlights?: HighlightSpan[];
  uncertain?: boolean;
}

export interface SubmitResponse {
  session: string;
  cursor: number;
  answered: number;
  total: number;
  stale_steps: string[];
}
