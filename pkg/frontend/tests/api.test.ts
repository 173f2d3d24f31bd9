import { describe, expect, it } from "vitest";

import { AnnotatorClient, ApiError } from "../src/api.js";
import type { FetchLike } from "../src/api.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function fakeFetch(
  status: number,
  body: unknown,
): { fetchFn: FetchLike; calls: Call[] } {
  const calls: Call[] = [];
  const fetchFn: FetchLike = (url, init) => {
    calls.push({ url, init });
    return Promise.resolve(
      new Response(JSON.stringify(body), {
        status,
        headers: { "Content-Type": "application/json" },
      }),
    );
  };
  return { fetchFn, calls };
}

describe("AnnotatorClient", () => {
  it("sends the exact preference payload the service expects", async () => {
    const { fetchFn, calls } = fakeFetch(200, { stored: {}, replaced: false });
    const client = new AnnotatorClient("", fetchFn);
    await client.submitPreference("user_00", "ctx-0003", "r2");
    expect(calls).toHaveLength(1);
    expect(calls[0]!.url).toBe("/preferences");
    expect(calls[0]!.init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0]!.init?.body))).toEqual({
      user_id: "user_00",
      context_id: "ctx-0003",
      chosen_response_id: "r2",
      overwrite: false,
    });
  });

  it("sets overwrite only when asked to", async () => {
    const { fetchFn, calls } = fakeFetch(200, { stored: {}, replaced: true });
    await new AnnotatorClient("", fetchFn).submitPreference("u", "c", "r", true);
    expect(JSON.parse(String(calls[0]!.init?.body)).overwrite).toBe(true);
  });

  it("URL-encodes ids in paths and query strings", async () => {
    const { fetchFn, calls } = fakeFetch(200, { ranking: [] });
    const client = new AnnotatorClient("http://svc:8000", fetchFn);
    await client.predict("user/7", "ctx 1&2");
    expect(calls[0]!.url).toBe(
      "http://svc:8000/predict/user%2F7?context_id=ctx%201%262",
    );
  });

  it("surfaces the server detail message on HTTP errors", async () => {
    const { fetchFn } = fakeFetch(409, { detail: "already answered 'ctx-0001'" });
    const client = new AnnotatorClient("", fetchFn);
    const err = await client.submitPreference("u", "ctx-0001", "r0").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.isConflict).toBe(true);
    expect(err.message).toBe("already answered 'ctx-0001'");
  });

  it("maps transport failures to status 0", async () => {
    const fetchFn: FetchLike = () => Promise.reject(new TypeError("connection refused"));
    const err = await new AnnotatorClient("", fetchFn).progress("u").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(0);
    expect(err.isConflict).toBe(false);
  });

  it("requests the questionnaire with the session id", async () => {
    const { fetchFn, calls } = fakeFetch(200, { session: "s", items: [] });
    await new AnnotatorClient("", fetchFn).questionnaire("desk session");
    expect(calls[0]!.url).toBe("/questionnaire?session=desk%20session");
  });

  it("fit posts and weights gets", async () => {
    const payload = {
      user_id: "u",
      weights: [],
      features: [],
      final_nll: 0,
      iterations: 0,
      converged: true,
      n_records: 0,
    };
    const { fetchFn, calls } = fakeFetch(200, payload);
    const client = new AnnotatorClient("", fetchFn);
    await client.fit("u");
    await client.weights("u");
    expect(calls[0]!.url).toBe("/fit/u");
    expect(calls[0]!.init?.method).toBe("POST");
    expect(calls[1]!.url).toBe("/weights/u");
    expect(calls[1]!.init?.method).toBeUndefined();
  });
});
