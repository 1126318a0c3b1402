// In-memory stand-in for the /ctf/v1 control plane, speaking the exact wire
// shapes of the real emulator. Installed as global fetch for the UI tests.

export type FakeState = {
  revealed: Record<string, number>;
  completed: string[];
  submissions: { level: string; verdict: string; at: number }[];
};

const LEVELS = [
  { namespace: "thunder", name: "a1openbucket", ref: "thunder/a1openbucket", title: "Open bucket" },
  { namespace: "thunder", name: "a2finance", ref: "thunder/a2finance", title: "Finance records" },
];

const HINTS: Record<string, { title: string; body: string }[]> = {
  "thunder/a1openbucket": [
    { title: "Hint one", body: "look at buckets" },
    { title: "Hint two", body: "list the objects" },
    { title: "Hint three", body: "cat the secret" },
    { title: "Hint four", body: "submit it" },
  ],
  "thunder/a2finance": [{ title: "Only hint", body: "activate the key" }],
};

export const TRUE_FLAG = "CTF{aaaaaaaaaaaaaaaa}";

function json(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function apiError(status: number, code: string, message: string): Response {
  return json(status, { error: { code, message } });
}

export function installFakeServer(): FakeState {
  const state: FakeState = { revealed: {}, completed: [], submissions: [] };

  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = new URL(String(input), "http://fake.test");
    const path = url.pathname;
    const method = (init?.method ?? "GET").toUpperCase();
    const body = init?.body ? JSON.parse(String(init.body)) : {};

    if (path === "/ctf/v1/levels" && method === "GET") {
      return json(200, { levels: LEVELS });
    }
    const infoMatch = path.match(/^\/ctf\/v1\/levels\/([^/]+)\/([^/]+)$/);
    if (infoMatch && method === "GET") {
      const ref = `${infoMatch[1]}/${infoMatch[2]}`;
      const deck = HINTS[ref];
      if (!deck) return apiError(404, "unknown_level", `no such level: ${ref}`);
      return json(200, {
        namespace: infoMatch[1],
        name: infoMatch[2],
        ref,
        title: LEVELS.find((l) => l.ref === ref)?.title ?? ref,
        intro: `intro for ${ref}`,
        writeup: `writeup for ${ref}`,
        hint_total: deck.length,
        completed: state.completed.includes(ref),
      });
    }
    if (path === "/ctf/v1/hints" && method === "GET") {
      const ref = url.searchParams.get("level") ?? "";
      const deck = HINTS[ref];
      if (!deck) return apiError(404, "unknown_level", `no such level: ${ref}`);
      const revealed = state.revealed[ref] ?? 0;
      return json(200, {
        level: ref,
        total: deck.length,
        revealed,
        hints: deck.slice(0, revealed).map((h, i) => ({ index: i + 1, ...h })),
      });
    }
    if (path === "/ctf/v1/hints/reveal" && method === "POST") {
      const ref = body.level ?? "";
      const deck = HINTS[ref];
      if (!deck) return apiError(404, "unknown_level", `no such level: ${ref}`);
      const revealed = state.revealed[ref] ?? 0;
      if (revealed >= deck.length) {
        return apiError(409, "already_at_end", "all hints already revealed");
      }
      state.revealed[ref] = revealed + 1;
      return json(200, {
        level: ref,
        total: deck.length,
        revealed: revealed + 1,
        hints: deck.slice(0, revealed + 1).map((h, i) => ({ index: i + 1, ...h })),
      });
    }
    if (path === "/ctf/v1/validate" && method === "POST") {
      const verdict = body.flag === TRUE_FLAG ? "correct" : "incorrect";
      state.submissions.push({ level: body.level, verdict, at: state.submissions.length });
      if (verdict === "correct" && !state.completed.includes(body.level)) {
        state.completed.push(body.level);
      }
      return json(200, { result: verdict });
    }
    if (path === "/ctf/v1/progress" && method === "GET") {
      return json(200, {
        project_id: "proj-fake",
        completed: state.completed,
        submissions: state.submissions,
        hints: state.revealed,
      });
    }
    return apiError(404, "route_not_found", `${method} ${path}`);
  }) as typeof fetch;

  return state;
}
