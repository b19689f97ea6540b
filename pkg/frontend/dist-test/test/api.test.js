import assert from "node:assert/strict";
import { test } from "node:test";
import { ApiClient, ApiError } from "../src/api.js";
function fakeFetch(status, body, captured = []) {
    return async (url, init) => {
        captured.push({ url, init });
        return {
            ok: status >= 200 && status < 300,
            status,
            json: async () => body,
        };
    };
}
test("postQuery sends the documented JSON body and parses the response", async () => {
    const captured = [];
    const reply = {
        answer: "ok", routing: null, tool_output: null, trace_id: "abc",
    };
    const client = new ApiClient("http://svc", fakeFetch(200, reply, captured));
    const response = await client.postQuery("what is this", {
        base64: "QUJD", width: 640, height: 480, dataUrl: "data:image/png;base64,QUJD",
    });
    assert.equal(response.trace_id, "abc");
    assert.equal(captured[0].url, "http://svc/api/query");
    assert.equal(captured[0].init?.method, "POST");
    const sent = JSON.parse(String(captured[0].init?.body));
    assert.deepEqual(sent, {
        text: "what is this",
        image_base64: "QUJD",
        image_width: 640,
        image_height: 480,
    });
});
test("text-only queries omit image fields", async () => {
    const captured = [];
    const client = new ApiClient("", fakeFetch(200, { trace_id: "t" }, captured));
    await client.postQuery("hello");
    assert.deepEqual(JSON.parse(String(captured[0].init?.body)), { text: "hello" });
});
test("non-2xx responses raise ApiError with the server message", async () => {
    const client = new ApiClient("", fakeFetch(400, { error: "query needs text or an image" }));
    await assert.rejects(() => client.postQuery(""), (error) => {
        assert.ok(error instanceof ApiError);
        assert.equal(error.status, 400);
        assert.match(error.message, /needs text or an image/);
        return true;
    });
});
test("trace, kb, and health hit the documented paths", async () => {
    const captured = [];
    const client = new ApiClient("", fakeFetch(200, {}, captured));
    await client.getTrace("id with space");
    await client.getKbEntry(7);
    await client.health();
    assert.deepEqual(captured.map((c) => c.url), ["/api/trace/id%20with%20space", "/api/kb/7", "/api/health"]);
});
test("unparseable error bodies still raise with the status", async () => {
    const failing = async () => ({
        ok: false,
        status: 500,
        json: async () => {
            throw new Error("not json");
        },
    });
    const client = new ApiClient("", failing);
    await assert.rejects(() => client.health(), (error) => error instanceof ApiError && error.status === 500);
});
