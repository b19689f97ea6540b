// Pure presentation logic: everything rendered is derived 1:1 from
// response fields. Overlay geometry in particular uses exactly the
// server-reported pixel corners scaled by the display ratio; the client
// never re-normalizes boxes.

import type {
  ClassifyOutput,
  Detection,
  KbEntry,
  QueryResponse,
  RetrieveOutput,
  RoutingInfo,
  TraceEvent,
} from "./types.js";

export type RenderMode =
  | "classification"
  | "detection"
  | "knowledge"
  | "clarification"
  | "plain";

export function renderMode(response: QueryResponse): RenderMode {
  if (response.routing?.missing_image) return "clarification";
  switch (response.tool_output?.kind) {
    case "classify":
      return "classification";
    case "detect":
      return "detection";
    case "retrieve":
      return "knowledge";
    default:
      return "plain";
  }
}

export const CATEGORY_COLORS = [
  "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
  "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080",
];

export function colorFor(category: number): string {
  return CATEGORY_COLORS[((category % CATEGORY_COLORS.length)
    + CATEGORY_COLORS.length) % CATEGORY_COLORS.length];
}

export interface OverlayBox {
  left: number;
  top: number;
  width: number;
  height: number;
  color: string;
  label: string;
}

/**
 * Scale server pixel corners into display coordinates.
 * ratioX = displayed width / natural width (same for Y).
 */
export function overlayBoxes(
  detections: Detection[],
  ratioX: number,
  ratioY: number,
): OverlayBox[] {
  return detections.map((det) => {
    const [x0, y0, x1, y1] = det.corners;
    return {
      left: x0 * ratioX,
      top: y0 * ratioY,
      width: (x1 - x0) * ratioX,
      height: (y1 - y0) * ratioY,
      color: colorFor(det.category),
      label: `${det.name ?? `category ${det.category}`} ${(det.confidence * 100).toFixed(1)}%`,
    };
  });
}

export interface KnowledgeCard {
  rank: number;
  entryId: number;
  name: string;
  distance: number;
  sections: { title: string; body: string }[];
}

/** Cards in server rank order; sections verbatim. */
export function knowledgeCards(output: RetrieveOutput): KnowledgeCard[] {
  return output.entries.map((entry: KbEntry, i: number) => ({
    rank: i + 1,
    entryId: output.hits[i]?.id ?? entry.id,
    name: entry.name,
    distance: output.hits[i]?.distance ?? NaN,
    sections: entry.sections.map((s) => ({ title: s.title, body: s.body })),
  }));
}

export interface ClassificationView {
  name: string;
  label: number;
  confidencePct: string;
  runnersUp: { label: number; pct: string }[];
}

export function classificationView(output: ClassifyOutput): ClassificationView {
  const order = output.probabilities
    .map((p, i) => ({ label: i, p }))
    .sort((a, b) => b.p - a.p || a.label - b.label);
  return {
    name: output.name,
    label: output.label,
    confidencePct: (output.probabilities[output.label] * 100).toFixed(1) + "%",
    runnersUp: order
      .filter((o) => o.label !== output.label)
      .slice(0, 2)
      .map((o) => ({ label: o.label, pct: (o.p * 100).toFixed(1) + "%" })),
  };
}

export interface TraceRow {
  label: string;
  value: string;
}

/** Routing fields verbatim plus per-stage timings in milliseconds. */
export function traceRows(
  routing: RoutingInfo | null,
  events: TraceEvent[],
): TraceRow[] {
  const rows: TraceRow[] = [];
  if (routing) {
    rows.push({ label: "language", value: routing.language });
    rows.push({ label: "intent", value: routing.intent });
    rows.push({ label: "confidence", value: String(routing.confidence) });
    rows.push({ label: "target_tool", value: routing.target_tool });
    rows.push({ label: "missing_image", value: String(routing.missing_image) });
  }
  for (const event of events) {
    const ms = (event.end - event.start) * 1000;
    rows.push({ label: `stage:${event.stage}`, value: `${ms.toFixed(1)} ms` });
  }
  return rows;
}
