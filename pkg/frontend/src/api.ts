/**
 * Typed client for the prefalign annotation service.
 *
 * Thin by design: every number and every ordering shown in the UI comes
 * verbatim from these payloads; nothing is recomputed client-side.
 */

export interface ResponseChoice {
  response_id: string;
  text: string;
}

export interface QuestionnaireItem {
  context_id: string;
  context_text: string;
  responses: ResponseChoice[];
  shuffle_seed: number;
}

export interface Questionnaire {
  session: string;
  items: QuestionnaireItem[];
}

export interface Progress {
  user_id: string;
  answered: number;
  remaining: number;
  total: number;
  answered_ids: string[];
}

export interface StoredPreference {
  stored: {
    user_id: string;
    context_id: string;
    chosen_response_id: string;
  };
  replaced: boolean;
}

export interface FeatureInfo {
  name: string;
  description: string;
  low: string;
  high: string;
}

export interface FitResult {
  user_id: string;
  weights: number[];
  features: FeatureInfo[];
  final_nll: number;
  iterations: number;
  converged: boolean;
  n_records: number;
}

export interface RankedResponse {
  response_id: string;
  text: string;
  reward: number;
}

export interface Prediction {
  user_id: string;
  context_id: string;
  ranking: RankedResponse[];
}

/** HTTP failure carrying the status and the server's detail message. */
export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
  }

  /** A duplicate annotation the server would replace if asked to. */
  get isConflict(): boolean {
    return this.status === 409;
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class AnnotatorClient {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `network error: ${String(err)}`);
    }
    const body: unknown = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail =
        typeof body === "object" && body !== null && "detail" in body
          ? String((body as { detail: unknown }).detail)
          : `${response.status} ${response.statusText}`;
      throw new ApiError(response.status, detail);
    }
    return body as T;
  }

  questionnaire(session: string): Promise<Questionnaire> {
    return this.request(`/questionnaire?session=${encodeURIComponent(session)}`);
  }

  progress(userId: string): Promise<Progress> {
    return this.request(`/progress/${encodeURIComponent(userId)}`);
  }

  submitPreference(
    userId: string,
    contextId: string,
    responseId: string,
    overwrite = false,
  ): Promise<StoredPreference> {
    return this.request("/preferences", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        user_id: userId,
        context_id: contextId,
        chosen_response_id: responseId,
        overwrite,
      }),
    });
  }

  fit(userId: string): Promise<FitResult> {
    return this.request(`/fit/${encodeURIComponent(userId)}`, { method: "POST" });
  }

  weights(userId: string): Promise<FitResult> {
    return this.request(`/weights/${encodeURIComponent(userId)}`);
  }

  predict(userId: string, contextId: string): Promise<Prediction> {
    return this.request(
      `/predict/${encodeURIComponent(userId)}?context_id=${encodeURIComponent(contextId)}`,
    );
  }
}
