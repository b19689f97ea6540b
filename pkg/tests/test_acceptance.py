"""Acceptance suite: one test per release criterion, each printing a
PASS line (run with `pytest tests/test_acceptance.py -v -s`). Tolerances
are pinned here and nowhere else."""

import math
import time

import numpy as np
import pytest

from cropclinic import classify, detect, evaluation, retrieve, router
from cropclinic.core import ImageRef, Language, Query
from cropclinic.fixtures import make_feature_dataset

from . import oracles
from .test_detect import _as_tuples, _random_instance

SEED = 20250808


def _ok(line: str) -> None:
    print(f"PASS: {line}")


# --- criterion 1: score-table aggregation reproduction -----------------

# (per-task (sc, ic, printed average) triples, printed overall)
SCORE_TABLE_ROWS = [
    # three-task rows
    ([(0.5200, 0.9200, 0.7200), (0.4360, 0.4138, 0.4249),
      (0.7640, 0.9020, 0.8330)], 0.6593),
    ([(0.5400, 0.9375, 0.7388), (0.5665, 0.4650, 0.5160),
      (0.7760, 0.9400, 0.8580)], 0.7043),
    ([(0.8000, 0.8147, 0.8074), (0.8005, 0.8093, 0.8050),
      (0.9650, 0.9880, 0.9765)], 0.8630),
]
# single-task knowledge rows: (sc, ic, printed score)
SINGLE_TASK_ROWS = [
    (0.7077, 0.6760, 0.6919),
    (0.8620, 0.9770, 0.9195),
    (0.9650, 0.9880, 0.9765),
]

TOL_TABLE = 5e-4  # 4-decimal rounding slack


def test_score_table_aggregation():
    checked = 0
    for tasks, printed_overall in SCORE_TABLE_ROWS:
        averages = []
        for sc, ic, printed_avg in tasks:
            average = evaluation.task_score(sc, ic)
            assert abs(average - printed_avg) <= TOL_TABLE, (sc, ic)
            averages.append(average)
            checked += 1
        overall = evaluation.overall_score(averages)
        assert abs(overall - printed_overall) <= TOL_TABLE
        # and from the printed averages themselves
        assert abs(evaluation.overall_score([t[2] for t in tasks])
                   - printed_overall) <= TOL_TABLE
        checked += 1
    for sc, ic, printed in SINGLE_TASK_ROWS:
        assert abs(evaluation.task_score(sc, ic) - printed) <= TOL_TABLE
        checked += 1
    assert checked == 15
    _ok(f"score-table aggregation: {checked} derived cells within {TOL_TABLE}")


# --- criterion 2: weighted-loss formulas --------------------------------

def test_weighted_loss_formulas():
    cw = classify.class_weights([50, 950], cap=10)
    assert abs(cw.weights[0] - 10.0) <= 1e-9
    assert abs(cw.weights[1] - 1000 / 950) <= 1e-9
    cw = classify.class_weights([250, 250, 250, 250], cap=10)
    assert np.abs(cw.weights - 4.0).max() <= 1e-9
    assert abs(classify.class_weights([100]).weights[0] - 1.0) <= 1e-9

    unit = classify.ClassWeights(np.ones(2))
    assert abs(classify.weighted_ce_loss([0.0, 0.0], 0, unit)
               - math.log(2)) <= 1e-9
    two = classify.ClassWeights(np.array([2.0, 1.0]))
    assert abs(classify.weighted_ce_loss([math.log(3), 0.0], 0, two)
               - (-2 * math.log(3 / 4))) <= 1e-9
    assert classify.weighted_ce_loss([1000.0, 0.0], 0, unit) <= 1e-9

    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        c = int(rng.integers(2, 11))
        logits = rng.standard_normal(c) * 2
        label = int(rng.integers(c))
        weights = classify.ClassWeights(rng.uniform(1, 10, size=c))
        grad = classify.loss_gradient(logits, label, weights)
        fd = np.asarray(oracles.finite_difference_gradient(
            lambda v: classify.weighted_ce_loss(v, label, weights),
            logits.tolist(), h=1e-4,
        ))
        rel = np.abs(grad - fd).max() / max(np.abs(fd).max(), 1e-12)
        worst = max(worst, rel)
        assert rel < 1e-4
    _ok(f"weighted-loss formulas: hand cases at 1e-9, gradient vs central "
        f"differences worst rel err {worst:.2e} < 1e-4 on 100 cases")


# --- criterion 3: detection metrics vs brute-force oracle ---------------

def test_detection_metrics_against_oracle():
    # three hand cases
    assert detect.average_precision(
        [(0.9, True), (0.8, True)], 2) == pytest.approx(1.0, abs=1e-9)
    assert detect.average_precision(
        [(0.9, True), (0.8, False)], 1) == pytest.approx(1.0, abs=1e-9)
    assert detect.average_precision(
        [(0.9, False), (0.8, True)], 2) == pytest.approx(0.25, abs=1e-9)

    rng = np.random.default_rng(SEED)
    checked = 0
    while checked < 200:
        preds, gts = _random_instance(rng)
        if sum(len(v) for v in gts.values()) == 0:
            continue
        checked += 1
        metrics = detect.evaluate(preds, gts)
        pt, gt_t = _as_tuples(preds), _as_tuples(gts)
        categories = sorted(
            {b[0] for boxes in gt_t.values() for b in boxes}
            | {b[0] for boxes in pt.values() for b in boxes}
        )
        means = []
        for thresh in detect.DEFAULT_THRESHOLDS:
            aps = [ap for ap in (
                oracles.detection_ap_naive(pt, gt_t, cat, thresh)
                for cat in categories
            ) if ap is not None]
            means.append(sum(aps) / len(aps))
            if thresh == 0.5:
                assert abs(metrics.map50 - means[-1]) <= 1e-9
        assert abs(metrics.map50_95 - sum(means) / len(means)) <= 1e-9
        precision, recall = oracles.micro_pr_naive(pt, gt_t, 0.5)
        assert abs(metrics.precision - precision) <= 1e-9
        assert abs(metrics.recall - recall) <= 1e-9
    _ok(f"detection metrics equal the PR-enumeration oracle on {checked} "
        f"random instances (1e-9) plus the three hand cases")


# --- criterion 4: vector index exactness --------------------------------

def test_vector_index_exactness():
    rng = np.random.default_rng(SEED)
    rows = rng.standard_normal((1000, 64)).astype(np.float32)
    index = retrieve.FlatIndex(64, np.arange(1000, dtype=np.int64), rows)
    rows64 = rows.astype(np.float64).tolist()
    queries = [rng.standard_normal(64) for _ in range(30)]

    elapsed = 0.0
    for query in queries:
        for k in (1, 5, 50):
            t0 = time.perf_counter()
            got = retrieve.search(index, query, k)
            elapsed += time.perf_counter() - t0
            expected = oracles.nearest_neighbors_naive(
                rows64, range(1000), query.tolist(), k
            )
            assert [g[0] for g in got] == [e[0] for e in expected]
            for (_, dg), (_, de) in zip(got, expected):
                assert abs(dg - de) <= 1e-6
    assert elapsed < 5.0
    _ok(f"flat index equals the NN oracle on 1000x64 for k in (1,5,50); "
        f"search time {elapsed:.3f}s < 5s")


# --- criterion 5: router properties --------------------------------------

def test_router_accuracy_and_softmax(routers):
    for lang, model in routers.items():
        assert model.meta.heldout_accuracy >= 0.95, lang
    rng = np.random.default_rng(SEED)
    alphabet = list("abcdefghijklmnopqrstuvwxyz 0123456789,?!病害叶锈小麦水稻防治")
    model = routers[Language.EN]
    for _ in range(1000):
        length = int(rng.integers(0, 40))
        text = "".join(rng.choice(alphabet) for _ in range(length))
        pred = router.classify_intent(model, text)
        assert abs(sum(pred.probabilities) - 1.0) <= 1e-6
    en = routers[Language.EN].meta.heldout_accuracy
    zh = routers[Language.ZH].meta.heldout_accuracy
    _ok(f"router held-out accuracy en={en:.4f} zh={zh:.4f} (>= 0.95); "
        f"softmax sums within 1e-6 on 1000 random inputs")


# --- criterion 6: classifier head properties ------------------------------

def test_head_accuracy_and_determinism(head):
    assert head.meta.val_accuracy >= 0.95
    dataset = make_feature_dataset(99)
    config = classify.HeadTrainConfig(seed=13, epochs=4)
    a = classify.train_head(dataset, config)
    b = classify.train_head(dataset, config)
    assert a.weights.tobytes() == b.weights.tobytes()
    assert a.bias.tobytes() == b.bias.tobytes()
    _ok(f"classifier head val accuracy {head.meta.val_accuracy:.4f} >= 0.95; "
        f"identical seeds give bit-identical heads")


# --- criterion 7: format round-trips --------------------------------------

def test_format_round_trips(tmp_path, routers, head, kb):
    line = "3 0.500000 0.500000 0.200000 0.300000"
    assert detect.format_yolo_line(detect.parse_yolo_line(line)) == line

    dataset = make_feature_dataset(5)
    f1, f2 = tmp_path / "f1.bin", tmp_path / "f2.bin"
    classify.save_features(dataset, f1)
    classify.save_features(classify.load_features(f1), f2)
    assert f1.read_bytes() == f2.read_bytes()

    i1, i2 = tmp_path / "i1.bin", tmp_path / "i2.bin"
    retrieve.save_index(kb.index, i1)
    retrieve.save_index(retrieve.load_index(i1), i2)
    assert i1.read_bytes() == i2.read_bytes()

    r1, r2 = tmp_path / "r1.bin", tmp_path / "r2.bin"
    router.save_classifier(routers[Language.ZH], r1)
    router.save_classifier(router.load_classifier(r1), r2)
    assert r1.read_bytes() == r2.read_bytes()

    h1, h2 = tmp_path / "h1.bin", tmp_path / "h2.bin"
    classify.save_head(head, h1)
    classify.save_head(classify.load_head(h1), h2)
    assert h1.read_bytes() == h2.read_bytes()
    _ok("YOLO line, feature file, index file, router and head persistence "
        "round-trip byte-stable")


# --- criterion 8: end-to-end offline ---------------------------------------

def test_end_to_end_offline(engine, feature_dataset, category_names):
    assert engine.llm_client is None  # offline: no network path configured

    item = int(np.flatnonzero(feature_dataset.labels == 7)[0])
    flows = [
        (Query(id="a1", text="How does wheat leaf rust spread?"),
         "retrieve", "wheat leaf rust"),
        (Query(id="a2", text="What disease is this?",
               image=ImageRef(ref=f"item:{item}", width=640, height=480)),
         "classify", category_names[7]),
        (Query(id="a3", text="Please highlight the diseased area",
               image=ImageRef(ref="img001", width=640, height=480)),
         "detect", "confidence"),
    ]
    for query, tool, grounding in flows:
        response = engine.handle_query(query)
        assert response.routing.target_tool == tool, query.text
        assert response.answer.strip(), query.text
        assert grounding in response.answer, (query.text, response.answer)
        tool_events = [e for e in response.trace if e.stage == "tool"]
        assert len(tool_events) == 1
        assert tool_events[0].payload["tool"] == tool

    clarification = engine.handle_query(
        Query(id="a4", text="What disease is this?")
    )
    assert clarification.routing.missing_image is True
    assert [e for e in clarification.trace if e.stage == "tool"] == []
    assert clarification.answer.strip()
    _ok("end-to-end offline: all three query types answer through the right "
        "tool with one tool invocation; missing-image path invokes zero tools")
