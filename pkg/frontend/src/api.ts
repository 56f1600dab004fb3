// Service client. All traffic to the assessment service goes through
// request(); calls that would fetch document content are tagged, and the
// client refuses them outright while an infer step is active, so the
// "no document requests during infer" invariant is enforced here and
// checkable from the request log.

import type {
  AnswerBody,
  DocumentBlock,
  SessionInfo,
  StepPayload,
  SubmitResponse,
} from './types';

export interface ApiConfig {
  baseUrl: string;
  token: string;
}

export interface RequestLogEntry {
  method: string;
  path: string;
  documentContent: boolean;
  inferActive: boolean;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}

export class DocumentAccessViolation extends Error {
  constructor(path: string) {
    super(`blocked document-content request during an infer step: ${path}`);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  readonly requestLog: RequestLogEntry[] = [];
  private inferActive = false;

  constructor(private config: ApiConfig,
              private fetchImpl: FetchLike = (input, init) => fetch(input, init)) {}

  setInferActive(active: boolean): void {
    this.inferActive = active;
  }

  get documentRequestsDuringInfer(): number {
    return this.requestLog.filter((e) => e.documentContent && e.inferActive).length;
  }

  private async request<T>(method: string, path: string, body?: unknown,
                           documentContent = false): Promise<T> {
    if (documentContent && this.inferActive) {
      throw new DocumentAccessViolation(path);
    }
    this.requestLog.push({
      method, path, documentContent, inferActive: this.inferActive,
    });
    const headers: Record<string, string> = { 'Content-Type': 'application/json' };
    if (this.config.token) {
      headers['Authorization'] = `Bearer ${this.config.token}`;
    }
    const response = await this.fetchImpl(this.config.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const data = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail = typeof data?.detail === 'string'
        ? data.detail : JSON.stringify(data);
      throw new ApiError(response.status, detail);
    }
    return data as T;
  }

  createSession(workflow: string, document: string,
                execution?: string): Promise<SessionInfo> {
    return this.request('POST', '/sessions', { workflow, document, execution });
  }

  nextStep(session: string): Promise<StepPayload> {
    return this.request('GET', `/sessions/${session}/next`);
  }

  submitAnswer(session: string, answer: AnswerBody): Promise<SubmitResponse> {
    return this.request('POST', `/sessions/${session}/answers`, answer);
  }

  /** Re-fetch the current payload for the document pane. Tagged as document
   *  content: refused while an infer step is active. */
  async refreshDocumentBlocks(session: string): Promise<DocumentBlock[]> {
    const payload = await this.request<StepPayload>(
      'GET', `/sessions/${session}/next`, undefined, true);
    return payload.document_blocks ?? [];
  }
}
