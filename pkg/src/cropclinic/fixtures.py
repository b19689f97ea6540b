"""Deterministic synthetic fixtures: intent corpora, feature clusters, a
bilingual knowledge base, detection ground truth + predictions, and an
evaluation set. Everything is seeded, so two runs with the same seed
produce byte-identical directory trees.

The fixture scale is deliberately small: 5000 prompts per intent per
language with per-intent cue vocabularies, a 10-category Gaussian feature
set, a 20-entry bilingual knowledge base, a handful of annotated images,
and a 30-sample eval set split 10/10/10 across the three tasks.
"""

from __future__ import annotations

import random
from pathlib import Path
from typing import Union

import numpy as np

from .classify import FeatureDataset, save_features
from .core import Intent, Language
from .detect import BBox, format_yolo_line
from .retrieve import KnowledgeEntry, save_kb

PROMPTS_PER_INTENT = 5000
FEATURE_DIM = 32
FEATURE_CATEGORIES = 10
ITEMS_PER_CATEGORY = 200
CLUSTER_SEPARATION = 6.0
EVAL_PER_TASK = 10
IMAGE_SIZE = (640, 480)

# (en name, zh name, pathogen, en crop, zh crop, en agent noun, zh agent noun)
DISEASES = [
    ("wheat leaf rust", "小麦叶锈病", "Puccinia triticina", "wheat", "小麦",
     "orange pustules", "橙色孢子堆"),
    ("rice blast", "稻瘟病", "Magnaporthe oryzae", "rice", "水稻",
     "spindle lesions", "梭形病斑"),
    ("tomato early blight", "番茄早疫病", "Alternaria solani", "tomato", "番茄",
     "concentric rings", "同心轮纹"),
    ("apple scab", "苹果黑星病", "Venturia inaequalis", "apple", "苹果",
     "olive spots", "橄榄色斑点"),
    ("corn smut", "玉米黑粉病", "Ustilago maydis", "corn", "玉米",
     "gray galls", "灰色瘤状物"),
    ("potato late blight", "马铃薯晚疫病", "Phytophthora infestans", "potato", "马铃薯",
     "water-soaked patches", "水浸状斑块"),
    ("cucumber downy mildew", "黄瓜霜霉病", "Pseudoperonospora cubensis", "cucumber",
     "黄瓜", "angular yellow patches", "多角形黄斑"),
    ("grape powdery mildew", "葡萄白粉病", "Erysiphe necator", "grape", "葡萄",
     "white powder coating", "白色粉状物"),
    ("citrus canker", "柑橘溃疡病", "Xanthomonas citri", "citrus", "柑橘",
     "raised corky spots", "木栓化凸斑"),
    ("soybean rust", "大豆锈病", "Phakopsora pachyrhizi", "soybean", "大豆",
     "tan pustules", "褐色孢子堆"),
]

CROPS_EN = [row[3] for row in DISEASES]
CROPS_ZH = [row[4] for row in DISEASES]
DISEASES_EN = [row[0] for row in DISEASES]
DISEASES_ZH = [row[1] for row in DISEASES]

# Cue templates per intent; {crop}/{disease} slots are filled from the
# tables above. The first template of each list is anchored verbatim in
# the routing tests.
_EN_TEMPLATES = {
    Intent.DISEASE_CLASSIFICATION: [
        "What disease is this?",
        "What disease is on this {crop} leaf?",
        "Can you identify the disease in this {crop} photo?",
        "Please diagnose this {crop} plant.",
        "Which illness does my {crop} have?",
        "Name the disease shown in the picture.",
        "Identify what sickness is affecting the {crop}.",
        "Tell me what disease this {crop} leaf has.",
        "Classify the disease in this image.",
        "What kind of infection is visible on the {crop}?",
    ],
    Intent.DISEASE_DETECTION: [
        "Please highlight the diseased area",
        "Mark the lesions on this {crop} leaf.",
        "Where exactly are the infected spots?",
        "Draw boxes around the damaged regions of the {crop}.",
        "Locate the affected patches in this picture.",
        "Outline every spot you find on the {crop} leaf.",
        "Show me the position of each lesion.",
        "Highlight the regions that look sick on this {crop}.",
        "Point out the damaged zones in the photo.",
        "Find and box the lesions on my {crop}.",
    ],
    Intent.KNOWLEDGE_RETRIEVAL: [
        "How does wheat leaf rust spread?",
        "How does {disease} spread?",
        "What are the symptoms of {disease}?",
        "How do I treat {disease} in spring?",
        "Tell me about {disease}.",
        "What is the yield impact of {disease}?",
        "What control measures work against {disease}?",
        "Explain the transmission of {disease}.",
        "Why does {disease} appear after rain?",
        "Recommend a prevention plan for {disease}.",
    ],
}

_ZH_TEMPLATES = {
    Intent.DISEASE_CLASSIFICATION: [
        "这是什么病害",
        "这张{crop}叶片上是什么病?",
        "请识别这张{crop}照片里的病害。",
        "帮我诊断一下这株{crop}。",
        "我的{crop}得了什么病?",
        "说出图片里显示的病害名称。",
        "鉴定一下{crop}感染了什么病。",
        "告诉我这片{crop}叶子得的是什么病。",
        "对这张图里的病害进行分类。",
        "这棵{crop}上可见的是哪种感染?",
    ],
    Intent.DISEASE_DETECTION: [
        "请标出病变区域",
        "请框出这片{crop}叶子上的病斑。",
        "被感染的斑点具体在哪里?",
        "在{crop}受损的部位画出方框。",
        "定位这张图片中受害的区域。",
        "圈出{crop}叶片上的每一个斑点。",
        "显示每个病斑的位置。",
        "把这株{crop}上看起来异常的区域高亮出来。",
        "指出照片中受损的部位。",
        "找到并框选我的{crop}上的病斑。",
    ],
    Intent.KNOWLEDGE_RETRIEVAL: [
        "小麦叶锈病怎么防治",
        "{disease}是如何传播的?",
        "{disease}有哪些症状?",
        "春季应该怎样处理{disease}?",
        "介绍一下{disease}。",
        "{disease}对产量有什么影响?",
        "哪些防控措施对{disease}有效?",
        "讲讲{disease}的传播途径。",
        "为什么下雨之后容易出现{disease}?",
        "给我一套{disease}的预防方案。",
    ],
}


def make_intent_corpus(language: Language, seed: int) -> list[tuple[str, Intent]]:
    rng = random.Random(seed)
    templates = _EN_TEMPLATES if language is Language.EN else _ZH_TEMPLATES
    crops = CROPS_EN if language is Language.EN else CROPS_ZH
    diseases = DISEASES_EN if language is Language.EN else DISEASES_ZH
    corpus: list[tuple[str, Intent]] = []
    for intent in Intent:
        rows = templates[intent]
        for i in range(PROMPTS_PER_INTENT):
            template = rows[i % len(rows)]
            text = template.replace("{crop}", rng.choice(crops)).replace(
                "{disease}", rng.choice(diseases)
            )
            corpus.append((text, intent))
    rng.shuffle(corpus)
    return corpus


def save_corpus(corpus: list[tuple[str, Intent]], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for text, intent in corpus:
            fh.write(f"{int(intent)}\t{text}\n")


def make_feature_dataset(seed: int) -> FeatureDataset:
    """Gaussian clusters: category means 6 units apart along one axis each
    (pairwise separation 6*sqrt(2) sigma), unit noise."""
    rng = np.random.default_rng(seed)
    means = np.zeros((FEATURE_CATEGORIES, FEATURE_DIM))
    for c in range(FEATURE_CATEGORIES):
        means[c, c] = CLUSTER_SEPARATION
    labels = np.repeat(np.arange(FEATURE_CATEGORIES), ITEMS_PER_CATEGORY)
    noise = rng.standard_normal((labels.size, FEATURE_DIM))
    features = (means[labels] + noise).astype(np.float32)
    return FeatureDataset(features, labels.astype(np.int64), FEATURE_CATEGORIES)


def imbalanced_feature_dataset(seed: int, majority: int = 400,
                               minority: int = 20) -> FeatureDataset:
    """Two overlapping clusters (means 2 sigma apart) with a 20:1 skew,
    the setting where inverse-frequency loss weights visibly move
    minority recall."""
    rng = np.random.default_rng(seed)
    d = 8
    mean_gap = np.zeros(d)
    mean_gap[0] = 2.0
    features = np.concatenate([
        rng.standard_normal((majority, d)),
        rng.standard_normal((minority, d)) + mean_gap,
    ]).astype(np.float32)
    labels = np.concatenate([
        np.zeros(majority, dtype=np.int64),
        np.ones(minority, dtype=np.int64),
    ])
    order = rng.permutation(labels.size)
    return FeatureDataset(features[order], labels[order], 2)


_EN_SECTIONS = {
    "Introduction": (
        "{name} is a disease of {crop} caused by {pathogen}. Growers know "
        "{name} by the {sign} it leaves on the foliage, and it is one of the "
        "most common {crop} problems in humid seasons."
    ),
    "Symptoms": (
        "Early {name} shows as scattered {sign} on the upper leaf surface of "
        "{crop}. As {name} advances the marks merge, the leaf yellows from "
        "the tip inward, and badly hit {crop} leaves dry out and curl."
    ),
    "Transmission": (
        "{pathogen} survives between seasons on volunteer {crop} and crop "
        "debris. Spores of {name} travel on wind and rain splash, so warm "
        "wet weather lets {name} move quickly through a {crop} field."
    ),
    "Impact": (
        "Uncontrolled {name} cuts photosynthesis and grain fill in {crop}. "
        "Severe {name} seasons cost a large share of {crop} yield and lower "
        "produce quality."
    ),
    "Control Measures": (
        "Plant {crop} varieties resistant to {name}, remove volunteer plants "
        "and debris, rotate fields, and avoid late heavy nitrogen. When "
        "{sign} first appear, apply a registered fungicide against "
        "{pathogen} and repeat per label to keep {name} in check."
    ),
}

_ZH_SECTIONS = {
    "Introduction": (
        "{name}是由{pathogen}引起的一种{crop}病害。田间常凭叶面上的{sign}"
        "识别{name},在湿润季节是{crop}最常见的问题之一。"
    ),
    "Symptoms": (
        "{name}初期在{crop}叶片正面出现零散的{sign}。随着{name}发展,病斑"
        "连片,叶片自叶尖开始发黄,受害严重的{crop}叶片干枯卷曲。"
    ),
    "Transmission": (
        "{pathogen}在自生{crop}苗和病残体上越季。{name}的孢子随风和雨水"
        "飞溅传播,温暖潮湿的天气会让{name}在{crop}田间迅速蔓延。"
    ),
    "Impact": (
        "不加防治的{name}会削弱{crop}的光合作用和灌浆。{name}大发生的年份"
        "会造成{crop}产量的大幅损失并降低品质。"
    ),
    "Control Measures": (
        "选用抗{name}的{crop}品种,清除自生苗和病残体,实行轮作,避免后期"
        "偏施氮肥。田间初见{sign}时,及时喷施对{pathogen}有效的登记药剂,"
        "按说明重复施药,将{name}控制在低水平。"
    ),
}


def make_knowledge_entries() -> list[KnowledgeEntry]:
    """20 bilingual entries (ids: en 1..10, zh 101..110)."""
    entries = []
    for i, (en_name, zh_name, pathogen, en_crop, zh_crop, en_sign,
            zh_sign) in enumerate(DISEASES):
        entries.append(KnowledgeEntry(
            id=i + 1,
            language=Language.EN,
            name=en_name,
            sections=tuple(
                (title, body.format(name=en_name, crop=en_crop,
                                    pathogen=pathogen, sign=en_sign))
                for title, body in _EN_SECTIONS.items()
            ),
            tags=(en_crop, "disease"),
        ))
        entries.append(KnowledgeEntry(
            id=i + 101,
            language=Language.ZH,
            name=zh_name,
            sections=tuple(
                (title, body.format(name=zh_name, crop=zh_crop,
                                    pathogen=pathogen, sign=zh_sign))
                for title, body in _ZH_SECTIONS.items()
            ),
            tags=(zh_crop, "病害"),
        ))
    return entries


def make_detection_fixture(seed: int, n_images: int = 4):
    """Ground truth plus a perfect and a noisy prediction set.

    Returns (gts, perfect, noisy) as {image_id: [BBox]} dicts. The noisy
    set jitters half the boxes, drops some, and adds false positives.
    """
    rng = random.Random(seed)
    gts: dict[str, list[BBox]] = {}
    perfect: dict[str, list[BBox]] = {}
    noisy: dict[str, list[BBox]] = {}
    for i in range(n_images):
        image_id = f"img{i + 1:03d}"
        boxes = []
        for _ in range(rng.randint(2, 3)):
            w = round(rng.uniform(0.1, 0.3), 6)
            h = round(rng.uniform(0.1, 0.3), 6)
            cx = round(rng.uniform(w / 2, 1 - w / 2), 6)
            cy = round(rng.uniform(h / 2, 1 - h / 2), 6)
            boxes.append(BBox(rng.randint(0, 2), cx, cy, w, h))
        gts[image_id] = boxes
        perfect[image_id] = [
            BBox(b.category, b.cx, b.cy, b.w, b.h,
                 confidence=round(rng.uniform(0.8, 0.99), 6))
            for b in boxes
        ]
        noisy_boxes = []
        for j, b in enumerate(boxes):
            if j == 0 and i % 2 == 0:
                continue  # miss one ground truth on every other image
            jitter = 0.02 if j % 2 else 0.0
            cx = min(max(b.cx + jitter, b.w / 2), 1 - b.w / 2)
            noisy_boxes.append(BBox(
                b.category, round(cx, 6), b.cy, b.w, b.h,
                confidence=round(rng.uniform(0.5, 0.95), 6),
            ))
        # one confident false positive per image
        noisy_boxes.append(BBox(
            rng.randint(0, 2), 0.5, 0.5, 0.05, 0.05,
            confidence=round(rng.uniform(0.3, 0.6), 6),
        ))
        noisy[image_id] = noisy_boxes
    return gts, perfect, noisy


def save_ground_truth(gts: dict[str, list[BBox]], directory: Union[str, Path]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for image_id in sorted(gts):
        lines = [format_yolo_line(b) for b in gts[image_id]]
        (directory / f"{image_id}.txt").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )


def save_predictions(preds: dict[str, list[BBox]], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(preds):
            for b in preds[image_id]:
                fh.write(
                    f"{image_id}\t{b.category}\t{b.confidence:.6f}"
                    f"\t{b.cx:.6f}\t{b.cy:.6f}\t{b.w:.6f}\t{b.h:.6f}\n"
                )


def make_eval_dataset(entries: list[KnowledgeEntry],
                      gts: dict[str, list[BBox]],
                      feature_labels: np.ndarray,
                      seed: int) -> list[dict]:
    """30 samples, 10 per task (the full-scale protocol keeps the same
    1:1:1 ratio). Gold references are derived from the fixtures."""
    rng = random.Random(seed)
    en_entries = [e for e in entries if e.language is Language.EN]
    records = []
    for i in range(EVAL_PER_TASK):
        entry = en_entries[i % len(en_entries)]
        records.append({
            "id": f"kq{i + 1:03d}",
            "task": Intent.KNOWLEDGE_RETRIEVAL.wire_name,
            "query": f"How does {entry.name} spread?",
            "gold_reference": entry.section("Transmission"),
        })
    names = DISEASES_EN
    for i in range(EVAL_PER_TASK):
        label = i % FEATURE_CATEGORIES
        candidates = np.flatnonzero(feature_labels == label)
        item = int(candidates[rng.randrange(candidates.size)])
        records.append({
            "id": f"cq{i + 1:03d}",
            "task": Intent.DISEASE_CLASSIFICATION.wire_name,
            "query": "What disease is this?",
            "image_ref": f"item:{item}",
            "gold_reference": f"The image shows {names[label]}.",
        })
    image_ids = sorted(gts)
    width, height = IMAGE_SIZE
    for i in range(EVAL_PER_TASK):
        image_id = image_ids[i % len(image_ids)]
        regions = "; ".join(
            f"category {b.category} near ({b.cx * width:.0f}, {b.cy * height:.0f})"
            for b in gts[image_id]
        )
        records.append({
            "id": f"dq{i + 1:03d}",
            "task": Intent.DISEASE_DETECTION.wire_name,
            "query": "Please highlight the diseased area",
            "image_ref": image_id,
            "gold_reference": f"There are {len(gts[image_id])} lesion regions: {regions}.",
        })
    return records


def gen_fixtures(out_dir: Union[str, Path], seed: int = 7) -> dict[str, Path]:
    """Write the full fixture tree; returns the paths keyed by role."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    for language, filename in ((Language.EN, "corpus_en.tsv"),
                               (Language.ZH, "corpus_zh.tsv")):
        corpus = make_intent_corpus(language, seed)
        save_corpus(corpus, out / filename)
        paths[f"corpus_{language.value}"] = out / filename

    dataset = make_feature_dataset(seed)
    save_features(dataset, out / "features.bin")
    paths["features"] = out / "features.bin"
    with open(out / "categories.tsv", "w", encoding="utf-8") as fh:
        for i, name in enumerate(DISEASES_EN):
            fh.write(f"{i}\t{name}\n")
    paths["categories"] = out / "categories.tsv"

    entries = make_knowledge_entries()
    save_kb(entries, out / "kb.jsonl")
    paths["kb"] = out / "kb.jsonl"

    gts, perfect, noisy = make_detection_fixture(seed)
    save_ground_truth(gts, out / "detection" / "gt")
    save_predictions(perfect, out / "detection" / "predictions_perfect.tsv")
    save_predictions(noisy, out / "detection" / "predictions_noisy.tsv")
    paths["gt_dir"] = out / "detection" / "gt"
    paths["predictions_perfect"] = out / "detection" / "predictions_perfect.tsv"
    paths["predictions_noisy"] = out / "detection" / "predictions_noisy.tsv"

    eval_records = make_eval_dataset(entries, gts, dataset.labels, seed)
    with open(out / "eval.jsonl", "w", encoding="utf-8") as fh:
        for record in eval_records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    paths["eval"] = out / "eval.jsonl"
    with open(out / "eval_outputs.tsv", "w", encoding="utf-8") as fh:
        for record in eval_records:
            fh.write(f"{record['id']}\t{record['gold_reference']}\n")
    paths["eval_outputs"] = out / "eval_outputs.tsv"

    config_text = "\n".join([
        "# engine configuration generated with the fixtures",
        "router_model_en = router_en.bin",
        "router_model_zh = router_zh.bin",
        "head_model = head.bin",
        "feature_file = features.bin",
        "category_names = categories.tsv",
        "kb_file = kb.jsonl",
        "index_file = index.bin",
        "predictions_file = detection/predictions_perfect.tsv",
        f"seed = {seed}",
        "",
    ])
    (out / "config.cfg").write_text(config_text, encoding="utf-8")
    paths["config"] = out / "config.cfg"
    return paths
