/** Typed client for the rating service HTTP+JSON API. */

export interface SessionStatus {
  session_id: string;
  study_id: string;
  subject_id: string;
  total: number;
  rated: number;
  done: boolean;
}

export interface NextItem {
  done: boolean;
  total: number;
  rated: number;
  index?: number | null;
  video_id?: string | null;
  media_url?: string | null;
}

export interface RatingAck {
  video_id: string;
  rating: number;
  index: number;
  remaining: number;
  done: boolean;
}

/** Server-side protocol rejection (4xx with a stable error code). */
export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Transport failure; the request may not have reached the server. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`network failure: ${String(cause)}`);
    this.name = "NetworkError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** The slice of the API the session controller depends on. */
export interface SessionApi {
  getSession(sessionId: string): Promise<SessionStatus>;
  nextItem(sessionId: string): Promise<NextItem>;
  submitRating(sessionId: string, videoId: string, rating: number): Promise<RatingAck>;
}

export class RatingApi implements SessionApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (cause) {
      throw new NetworkError(cause);
    }
    if (!response.ok) {
      let code = "http_error";
      let message = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { code?: string; message?: string };
        if (body.code) code = body.code;
        if (body.message) message = body.message;
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(code, message, response.status);
    }
    return (await response.json()) as T;
  }

  getSession(sessionId: string): Promise<SessionStatus> {
    return this.request<SessionStatus>(`/sessions/${sessionId}`);
  }

  nextItem(sessionId: string): Promise<NextItem> {
    return this.request<NextItem>(`/sessions/${sessionId}/next`);
  }

  submitRating(sessionId: string, videoId: string, rating: number): Promise<RatingAck> {
    return this.request<RatingAck>(`/sessions/${sessionId}/ratings`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ video_id: videoId, rating }),
    });
  }
}
