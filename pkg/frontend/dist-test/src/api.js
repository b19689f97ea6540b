export class ApiError extends Error {
    constructor(status, message) {
        super(message);
        this.status = status;
        this.name = "ApiError";
    }
}
/** Thin client over the documented endpoints; fetch is injectable for tests. */
export class ApiClient {
    constructor(baseUrl = "", fetchFn = (input, init) => fetch(input, init)) {
        this.baseUrl = baseUrl;
        this.fetchFn = fetchFn;
    }
    async request(path, init) {
        const response = await this.fetchFn(this.baseUrl + path, init);
        const body = await response.json().catch(() => ({}));
        if (!response.ok) {
            const message = typeof body === "object" && body !== null && "error" in body
                ? String(body.error)
                : `request failed with status ${response.status}`;
            throw new ApiError(response.status, message);
        }
        return body;
    }
    postQuery(text, image) {
        const payload = { text };
        if (image) {
            payload.image_base64 = image.base64;
            payload.image_width = image.width;
            payload.image_height = image.height;
        }
        return this.request("/api/query", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(payload),
        });
    }
    getTrace(traceId) {
        return this.request(`/api/trace/${encodeURIComponent(traceId)}`);
    }
    getKbEntry(entryId) {
        return this.request(`/api/kb/${entryId}`);
    }
    health() {
        return this.request("/api/health");
    }
}
