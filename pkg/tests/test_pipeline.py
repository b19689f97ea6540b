import numpy as np

from cropclinic.core import ImageRef, Language, Query
from cropclinic.pipeline import Engine, FeatureStore


def _stages(response):
    return [e.stage for e in response.trace]


def _tool_events(response):
    return [e for e in response.trace if e.stage == "tool"]


class TestKnowledgeFlow:
    def test_answer_grounded_in_top_entry(self, engine):
        response = engine.handle_query(
            Query(id="k1", text="How does wheat leaf rust spread?")
        )
        assert response.routing.target_tool == "retrieve"
        assert "wheat leaf rust" in response.answer
        assert response.tool_output.kind == "retrieve"
        assert _stages(response) == ["route", "tool", "fusion"]
        assert len(_tool_events(response)) == 1

    def test_zh_answer_in_zh(self, engine):
        response = engine.handle_query(Query(id="k2", text="小麦叶锈病怎么防治"))
        assert response.routing.language is Language.ZH
        assert "小麦叶锈病" in response.answer


class TestClassificationFlow:
    def test_answer_names_fixture_category(self, engine, feature_dataset,
                                           category_names):
        item = int(np.flatnonzero(feature_dataset.labels == 7)[0])
        response = engine.handle_query(Query(
            id="c1", text="What disease is this?",
            image=ImageRef(ref=f"item:{item}", width=640, height=480),
        ))
        assert response.routing.target_tool == "classify"
        assert category_names[7] in response.answer
        assert len(_tool_events(response)) == 1

    def test_unresolvable_ref_answers_via_fallback(self, engine):
        response = engine.handle_query(Query(
            id="c2", text="What disease is this?",
            image=ImageRef(ref="not-an-item", width=10, height=10),
        ))
        assert response.answer  # never empty, never raises
        assert response.tool_output is None
        assert _tool_events(response)[0].payload.get("error")


class TestDetectionFlow:
    def test_regions_reported(self, engine):
        response = engine.handle_query(Query(
            id="d1", text="Please highlight the diseased area",
            image=ImageRef(ref="img001", width=640, height=480),
        ))
        assert response.routing.target_tool == "detect"
        assert response.tool_output.kind == "detect"
        assert len(response.tool_output.value.boxes) > 0
        assert response.answer
        assert _stages(response) == ["route", "tool", "fusion"]

    def test_unknown_image_still_answers(self, engine):
        response = engine.handle_query(Query(
            id="d2", text="Please highlight the diseased area",
            image=ImageRef(ref="zzz", width=640, height=480),
        ))
        assert response.tool_output.value.no_predictions is True
        assert "No lesion regions" in response.answer


class TestMissingImage:
    def test_clarification_and_zero_tools(self, engine):
        response = engine.handle_query(
            Query(id="m1", text="What disease is this?")
        )
        assert response.routing.missing_image is True
        assert "attach an image" in response.answer
        assert response.tool_output is None
        assert _tool_events(response) == []
        assert _stages(response) == ["route"]

    def test_zh_clarification(self, engine):
        response = engine.handle_query(Query(id="m2", text="请标出病变区域"))
        assert "图片" in response.answer
        assert _tool_events(response) == []


class TestTraceInvariants:
    def test_exactly_one_tool_event_for_answered_queries(self, engine,
                                                         feature_dataset):
        item = int(np.flatnonzero(feature_dataset.labels == 2)[0])
        queries = [
            Query(id="t1", text="What are the symptoms of rice blast?"),
            Query(id="t2", text="What disease is this?",
                  image=ImageRef(ref=f"item:{item}", width=32, height=32)),
            Query(id="t3", text="Please highlight the diseased area",
                  image=ImageRef(ref="img003", width=640, height=480)),
        ]
        for query in queries:
            response = engine.handle_query(query)
            assert len(_tool_events(response)) == 1, query.text
            assert _stages(response) == ["route", "tool", "fusion"]

    def test_timings_ordered(self, engine):
        response = engine.handle_query(Query(id="t4", text="tell me about corn smut"))
        for event in response.trace:
            assert event.end >= event.start


class TestEngineAdmin:
    def test_status_all_ready(self, engine):
        status = engine.status()
        assert all([status.router_en, status.router_zh, status.classifier,
                    status.detector, status.retriever])

    def test_reindex_swaps_counts(self, engine):
        old, new = engine.reindex()
        assert old == new == 20

    def test_feature_store_lookup(self, feature_dataset):
        store = FeatureStore(feature_dataset)
        assert store.lookup("0") is not None
        assert store.lookup("item:5") is not None
        assert store.lookup("item:999999") is None
        assert store.lookup("banana") is None

    def test_never_raises_without_tools(self, engine):
        bare = Engine(config=engine.config, routers=engine.routers)
        response = bare.handle_query(Query(
            id="x", text="What disease is this?",
            image=ImageRef(ref="item:0", width=8, height=8),
        ))
        assert response.answer
        assert response.tool_output is None
