"""End-to-end orchestration: route -> one tool -> fusion -> answer.

Engine state (models, index, knowledge base) is immutable after startup
and shared across concurrent queries; the only mutation is the atomic
index swap performed by reindex(). handle_query never raises once the
engine is constructed: per-query failures are recorded in the trace and
answered through the fallback path.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import classify, detect, fusion, retrieve, router
from .core import (
    AgentResponse,
    ClinicError,
    EngineConfig,
    Language,
    Query,
    ToolOutput,
    Trace,
)

FeatureLookup = Callable[[str], Optional[np.ndarray]]


class FeatureStore:
    """Maps image refs to precomputed feature vectors.

    The visual encoder is out of scope; refs address items of the feature
    file, either as a bare index ("42") or with an explicit "item:42"
    prefix.
    """

    def __init__(self, dataset: classify.FeatureDataset):
        self.dataset = dataset

    def lookup(self, ref: str) -> Optional[np.ndarray]:
        key = ref[5:] if ref.startswith("item:") else ref
        try:
            idx = int(key)
        except ValueError:
            return None
        if 0 <= idx < self.dataset.total:
            return self.dataset.features[idx]
        return None

    def label_of(self, idx: int) -> int:
        return int(self.dataset.labels[idx])


_CLARIFY = {
    "classify": {
        Language.EN: "Please attach an image of the affected plant so I can run "
                     "the disease classifier on it.",
        Language.ZH: "请附上受影响植物的图片,以便我运行病害分类工具。",
    },
    "detect": {
        Language.EN: "Please attach an image of the affected plant so I can "
                     "locate the diseased areas on it.",
        Language.ZH: "请附上受影响植物的图片,以便我定位图中的病变区域。",
    },
}

_TOOL_FAILED = {
    Language.EN: "I could not complete the {tool} step for this request: {reason}",
    Language.ZH: "无法完成本次请求的{tool}步骤:{reason}",
}


@dataclass
class EngineStatus:
    router_en: bool
    router_zh: bool
    classifier: bool
    detector: bool
    retriever: bool


class Engine:
    def __init__(
        self,
        config: EngineConfig,
        routers: dict[Language, router.IntentClassifier],
        head: Optional[classify.LinearHead] = None,
        feature_store: Optional[FeatureStore] = None,
        detector: Optional[detect.FilePredictionsBackend] = None,
        kb: Optional[retrieve.KnowledgeBase] = None,
        templates: Optional[fusion.PromptTemplates] = None,
        llm_client: Optional[fusion.ChatClient] = None,
    ):
        self.config = config
        self.routers = routers
        self.head = head
        self.feature_store = feature_store
        self.detector = detector
        self.kb = kb
        self.templates = templates or fusion.load_templates(config.templates_dir)
        self.llm_client = llm_client
        self._kb_lock = threading.Lock()

    @classmethod
    def from_config(cls, config: EngineConfig,
                    llm_transport: Optional[fusion.Transport] = None) -> "Engine":
        """Load every artifact named in the config; missing optional paths
        leave the matching tool unavailable (reflected in status())."""
        routers: dict[Language, router.IntentClassifier] = {}
        if config.router_model_en and Path(config.router_model_en).exists():
            routers[Language.EN] = router.load_classifier(config.router_model_en)
        if config.router_model_zh and Path(config.router_model_zh).exists():
            routers[Language.ZH] = router.load_classifier(config.router_model_zh)

        head = None
        if config.head_model and Path(config.head_model).exists():
            head = classify.load_head(config.head_model)
        feature_store = None
        if config.feature_file and Path(config.feature_file).exists():
            feature_store = FeatureStore(classify.load_features(config.feature_file))
        if head is not None and config.category_names \
                and Path(config.category_names).exists():
            names = classify.load_category_names(config.category_names)
            if len(names) == head.n_categories:
                head = classify.LinearHead(head.weights, head.bias, names)

        detector = None
        if config.predictions_file and Path(config.predictions_file).exists():
            detector = detect.FilePredictionsBackend(config.predictions_file)

        kb = None
        if config.kb_file and Path(config.kb_file).exists():
            entries = retrieve.load_kb(config.kb_file)
            embedder = retrieve.Embedder(config.embed_dim)
            index = None
            if config.index_file and Path(config.index_file).exists():
                index = retrieve.load_index(config.index_file)
                if index.dimension != embedder.dimension:
                    raise ClinicError(
                        f"index dimension {index.dimension} does not match "
                        f"configured embed_dim {embedder.dimension}"
                    )
            kb = retrieve.KnowledgeBase(entries, embedder, index)

        return cls(
            config=config,
            routers=routers,
            head=head,
            feature_store=feature_store,
            detector=detector,
            kb=kb,
            llm_client=fusion.make_llm_client(config, llm_transport),
        )

    def status(self) -> EngineStatus:
        return EngineStatus(
            router_en=Language.EN in self.routers,
            router_zh=Language.ZH in self.routers,
            classifier=self.head is not None and self.feature_store is not None,
            detector=self.detector is not None,
            retriever=self.kb is not None,
        )

    def category_names(self) -> Optional[list[str]]:
        return self.head.category_names if self.head is not None else None

    def handle_query(self, query: Query) -> AgentResponse:
        trace = Trace()
        t0 = time.time()
        try:
            routing = router.route(query, self.routers, self.config)
        except ClinicError as exc:
            trace.add("route", t0, time.time(), error=str(exc))
            return AgentResponse(
                answer=f"Routing failed: {exc}", routing=None,
                tool_output=None, trace=trace.events,
            )
        trace.add(
            "route", t0, time.time(),
            language=routing.language.value,
            intent=routing.intent.wire_name,
            confidence=round(routing.prediction.confidence, 6),
            target_tool=routing.target_tool,
            missing_image=routing.missing_image,
        )

        if routing.missing_image:
            answer = _CLARIFY[routing.target_tool][routing.language]
            return AgentResponse(answer, routing, None, trace.events)

        t1 = time.time()
        try:
            output = self._invoke_tool(query, routing)
        except ClinicError as exc:
            trace.add("tool", t1, time.time(), tool=routing.target_tool,
                      error=str(exc))
            answer = _TOOL_FAILED[routing.language].format(
                tool=routing.target_tool, reason=exc,
            )
            return AgentResponse(answer, routing, None, trace.events)
        trace.add("tool", t1, time.time(), tool=routing.target_tool,
                  summary=_summarize_output(output))

        t2 = time.time()
        prompt = fusion.build_fusion_prompt(
            query, routing, output, self.templates, self.category_names()
        )
        outcome = fusion.generate_response(self.llm_client, prompt)
        trace.add("fusion", t2, time.time(), mode=outcome.mode,
                  retries=outcome.retries, degraded=outcome.degraded,
                  **({"error": outcome.error} if outcome.error else {}))
        return AgentResponse(outcome.answer, routing, output, trace.events)

    def _invoke_tool(self, query: Query, routing: router.RoutingDecision) -> ToolOutput:
        tool = routing.target_tool
        if tool == "classify":
            if self.head is None or self.feature_store is None:
                raise ClinicError("disease classifier is not loaded")
            assert query.image is not None
            features = None
            if query.image.ref:
                features = self.feature_store.lookup(query.image.ref)
            if features is None:
                raise ClinicError(
                    "no feature vector available for this image; the reference "
                    "backend serves precomputed features by item ref"
                )
            return ToolOutput("classify", classify.predict(self.head, features))
        if tool == "detect":
            if self.detector is None:
                raise ClinicError("lesion detector is not loaded")
            assert query.image is not None
            return ToolOutput("detect", self.detector.detect(query.image))
        with self._kb_lock:
            kb = self.kb
        if kb is None:
            raise ClinicError("knowledge base is not loaded")
        context = retrieve.retrieve(
            kb, query.text, routing.language, self.config.retrieval_k
        )
        return ToolOutput("retrieve", context)

    def reindex(self) -> tuple[int, int]:
        """Rebuild the retrieval index from the configured KB file and swap
        it in atomically. Returns (old_count, new_count)."""
        if not self.config.kb_file:
            raise ClinicError("no kb_file configured")
        entries = retrieve.load_kb(self.config.kb_file)
        embedder = retrieve.Embedder(self.config.embed_dim)
        new_kb = retrieve.KnowledgeBase(entries, embedder)
        with self._kb_lock:
            old = self.kb.index.count if self.kb is not None else 0
            self.kb = new_kb
        return old, new_kb.index.count


def _summarize_output(output: ToolOutput) -> dict:
    if output.kind == "classify":
        pred: classify.ClassPrediction = output.value
        return {"label": pred.label, "name": pred.name,
                "confidence": round(pred.probabilities[pred.label], 6)}
    if output.kind == "detect":
        result: detect.DetectionResult = output.value
        return {"boxes": len(result.boxes), "backend": result.backend,
                "no_predictions": result.no_predictions}
    context: retrieve.RetrievedContext = output.value
    return {"hits": [entry_id for entry_id, _ in context.hits],
            "keywords": list(context.keywords)}
