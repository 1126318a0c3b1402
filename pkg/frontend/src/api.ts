// Thin typed client for the /ctf/v1 control-plane endpoints. The UI never
// computes anything security-relevant itself: hint counts and verdicts are
// whatever the server says.

export type LevelSummary = {
  namespace: string;
  name: string;
  ref: string;
  title: string;
};

export type LevelInfo = {
  ref: string;
  title: string;
  intro: string;
  writeup: string;
  hintTotal: number;
  completed: boolean;
};

export type Hint = {
  index: number;
  title: string;
  body: string;
};

export type HintView = {
  level: string;
  total: number;
  revealed: number;
  hints: Hint[];
};

export type Submission = {
  level: string;
  verdict: string;
  at: number;
};

export type Progress = {
  projectId: string;
  completed: string[];
  submissions: Submission[];
};

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, "unreachable", `cannot reach the emulator: ${err}`);
  }
  const text = await response.text();
  let doc: any = {};
  try {
    doc = text ? JSON.parse(text) : {};
  } catch {
    throw new ApiError(response.status, "bad_response", text.slice(0, 120));
  }
  if (!response.ok) {
    const err = doc.error ?? {};
    throw new ApiError(response.status, err.code ?? "api_error", err.message ?? text);
  }
  return doc as T;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private url(path: string): string {
    return this.base + path;
  }

  async listLevels(): Promise<LevelSummary[]> {
    const doc = await request<{ levels: LevelSummary[] }>(this.url("/ctf/v1/levels"));
    return doc.levels;
  }

  async levelInfo(ref: string): Promise<LevelInfo> {
    const doc = await request<any>(this.url(`/ctf/v1/levels/${ref}`));
    return {
      ref: doc.ref,
      title: doc.title,
      intro: doc.intro,
      writeup: doc.writeup,
      hintTotal: doc.hint_total,
      completed: doc.completed,
    };
  }

  async hints(ref: string): Promise<HintView> {
    return request<HintView>(this.url(`/ctf/v1/hints?level=${encodeURIComponent(ref)}`));
  }

  async revealHint(ref: string): Promise<HintView> {
    return request<HintView>(this.url("/ctf/v1/hints/reveal"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ level: ref }),
    });
  }

  async submitFlag(ref: string, flag: string): Promise<"correct" | "incorrect"> {
    const doc = await request<{ result: "correct" | "incorrect" }>(this.url("/ctf/v1/validate"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ level: ref, flag }),
    });
    return doc.result;
  }

  async progress(): Promise<Progress> {
    const doc = await request<any>(this.url("/ctf/v1/progress"));
    return {
      projectId: doc.project_id,
      completed: doc.completed,
      submissions: doc.submissions,
    };
  }
}
