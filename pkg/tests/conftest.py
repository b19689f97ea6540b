"""Shared session fixtures: one fixture tree, trained once, reused
everywhere. Training is deterministic, so every test sees identical
artifacts."""

import numpy as np
import pytest

from cropclinic import classify, fixtures, retrieve, router
from cropclinic.core import Language, load_config
from cropclinic.pipeline import Engine

SEED = 7


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    fixtures.gen_fixtures(out, seed=SEED)
    return out


@pytest.fixture(scope="session")
def routers(fixture_dir):
    models = {}
    for lang in (Language.EN, Language.ZH):
        corpus = router.load_corpus(fixture_dir / f"corpus_{lang.value}.tsv")
        model = router.train_intent_classifier(
            corpus, lang, router.RouterTrainConfig(seed=SEED)
        )
        router.save_classifier(model, fixture_dir / f"router_{lang.value}.bin")
        models[lang] = model
    return models


@pytest.fixture(scope="session")
def feature_dataset(fixture_dir):
    return classify.load_features(fixture_dir / "features.bin")


@pytest.fixture(scope="session")
def category_names(fixture_dir):
    return classify.load_category_names(fixture_dir / "categories.tsv")


@pytest.fixture(scope="session")
def head(fixture_dir, feature_dataset, category_names):
    model = classify.train_head(
        feature_dataset, classify.HeadTrainConfig(seed=SEED),
        category_names=category_names,
    )
    classify.save_head(model, fixture_dir / "head.bin")
    return model


@pytest.fixture(scope="session")
def kb_entries(fixture_dir):
    return retrieve.load_kb(fixture_dir / "kb.jsonl")


@pytest.fixture(scope="session")
def kb(fixture_dir, kb_entries):
    embedder = retrieve.Embedder(256)
    base = retrieve.KnowledgeBase(kb_entries, embedder)
    retrieve.save_index(base.index, fixture_dir / "index.bin")
    return base


@pytest.fixture(scope="session")
def engine(fixture_dir, routers, head, kb):
    # the trained artifacts above were saved into fixture_dir under the
    # names config.cfg points at
    config = load_config(fixture_dir / "config.cfg")
    return Engine.from_config(config)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(SEED)
