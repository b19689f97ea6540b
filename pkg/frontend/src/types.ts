// Wire types for the cropclinic HTTP API. Field names mirror the server
// JSON exactly; nothing here is transformed or re-derived client-side.

export interface RoutingInfo {
  language: string;
  intent: string;
  confidence: number;
  target_tool: string;
  missing_image: boolean;
}

export interface ClassifyOutput {
  kind: "classify";
  label: number;
  name: string;
  probabilities: number[];
}

export interface DetectBoxNorm {
  category: number;
  confidence: number;
  cx: number;
  cy: number;
  w: number;
  h: number;
}

export interface DetectOutput {
  kind: "detect";
  image_id: string;
  backend: string;
  no_predictions: boolean;
  boxes: DetectBoxNorm[];
}

export interface KbSection {
  title: string;
  body: string;
}

export interface KbEntry {
  id: number;
  language: string;
  name: string;
  sections: KbSection[];
  tags: string[];
}

export interface RetrieveHit {
  id: number;
  distance: number;
}

export interface RetrieveOutput {
  kind: "retrieve";
  keywords: string[];
  hits: RetrieveHit[];
  entries: KbEntry[];
}

export type ToolOutput = ClassifyOutput | DetectOutput | RetrieveOutput;

/** Pixel-corner detection as reported by the server for the submitted image. */
export interface Detection {
  category: number;
  name: string | null;
  confidence: number;
  corners: [number, number, number, number]; // x0, y0, x1, y1 in pixels
}

export interface QueryResponse {
  answer: string;
  routing: RoutingInfo | null;
  tool_output: ToolOutput | null;
  detections?: Detection[];
  trace_id: string;
}

export interface TraceEvent {
  stage: string;
  start: number;
  end: number;
  payload: Record<string, unknown>;
}

export interface TraceRecord {
  id: string;
  query: string;
  events: TraceEvent[];
}

export interface HealthInfo {
  version: string;
  kernel_backend: string;
  tools: Record<string, boolean>;
}

export interface AttachedImage {
  base64: string;
  width: number;
  height: number;
  dataUrl: string;
}
