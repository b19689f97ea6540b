// Wire types for the cropclinic HTTP API. Field names mirror the server
// JSON exactly; nothing here is transformed or re-derived client-side.
export {};
