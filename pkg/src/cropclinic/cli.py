"""Operator entry points: training, indexing, evaluation, serving, and
fixture generation. Every subcommand runs offline against the fixtures;
network is touched only when an HTTP judge/LLM endpoint is configured."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import classify as classify_mod
from . import detect as detect_mod
from . import evaluation, fixtures, retrieve as retrieve_mod, router as router_mod
from .core import ClinicError, ImageRef, Language, Query, load_config
from .pipeline import Engine


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cropclinic",
        description="Crop-health diagnosis agent and evaluation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--listen", default="127.0.0.1:8420", help="host:port")
    p.add_argument("--static", help="directory of web UI files to serve")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("route", help="route a query text and print the decision")
    p.add_argument("text")
    p.add_argument("--config", required=True)
    p.add_argument("--with-image", action="store_true",
                   help="pretend an image is attached")

    p = sub.add_parser("classify", help="classify one item of a feature file")
    p.add_argument("feature_file")
    p.add_argument("item_id", type=int)
    p.add_argument("--head", required=True, help="trained head file")
    p.add_argument("--names", help="category-name table")

    p = sub.add_parser("retrieve", help="query the knowledge base")
    p.add_argument("text")
    p.add_argument("-k", type=int, default=None)
    p.add_argument("--config", required=True)

    p = sub.add_parser("detect-eval", help="detection metrics for predictions vs ground truth")
    p.add_argument("gt_dir")
    p.add_argument("pred_file")
    p.add_argument("--conf-cutoff", type=float, default=None)

    p = sub.add_parser("train-router", help="train an intent classifier")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--language", choices=["en", "zh"],
                   help="default: detected from the corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=1 << 18)
    p.add_argument("--epochs", type=int, default=5)

    p = sub.add_parser("train-head", help="train the classification head")
    p.add_argument("features")
    p.add_argument("out")
    p.add_argument("--names", help="category-name table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=15)

    p = sub.add_parser("build-index", help="build the retrieval index from a KB file")
    p.add_argument("kb_file")
    p.add_argument("out")
    p.add_argument("--dim", type=int, default=256)

    p = sub.add_parser("eval", help="run the SC/IC evaluation")
    p.add_argument("dataset")
    p.add_argument("--outputs", help="precomputed `id<TAB>model_output` file")
    p.add_argument("--judge", choices=["stub", "http"], default="stub")
    p.add_argument("--stub-sc", type=float, default=0.5)
    p.add_argument("--stub-ic", type=float, default=0.5)
    p.add_argument("--config", help="needed for --judge http or pipeline answering")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--report", help="write machine-readable report records here")

    p = sub.add_parser("gen-fixtures", help="generate the synthetic fixture tree")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=7)

    return parser


def _cmd_serve(args) -> int:
    from .service import make_server

    config = load_config(args.config)
    engine = Engine.from_config(config)
    host, _, port = args.listen.rpartition(":")
    static = Path(args.static) if args.static else None
    server = make_server(engine, host or "127.0.0.1", int(port),
                         static_dir=static, verbose=args.verbose)
    status = engine.status()
    print(f"listening on http://{server.server_address[0]}:{server.server_address[1]}")
    print(f"tools: {status}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _cmd_route(args) -> int:
    config = load_config(args.config)
    engine = Engine.from_config(config)
    image = ImageRef(ref="cli", width=1, height=1) if args.with_image else None
    query = Query(id="cli", text=args.text, image=image)
    decision = router_mod.route(query, engine.routers, config)
    print(json.dumps({
        "language": decision.language.value,
        "intent": decision.intent.wire_name,
        "confidence": round(decision.prediction.confidence, 6),
        "target_tool": decision.target_tool,
        "missing_image": decision.missing_image,
    }, ensure_ascii=False))
    return 0


def _cmd_classify(args) -> int:
    dataset = classify_mod.load_features(args.feature_file)
    if not 0 <= args.item_id < dataset.total:
        raise ClinicError(f"item id {args.item_id} out of range (0..{dataset.total - 1})")
    head = classify_mod.load_head(args.head)
    if args.names:
        names = classify_mod.load_category_names(args.names)
        head = classify_mod.LinearHead(head.weights, head.bias, names)
    pred = classify_mod.predict(head, dataset.features[args.item_id])
    print(json.dumps({
        "item": args.item_id,
        "label": pred.label,
        "name": pred.name,
        "confidence": round(pred.probabilities[pred.label], 6),
        "true_label": int(dataset.labels[args.item_id]),
    }, ensure_ascii=False))
    return 0


def _cmd_retrieve(args) -> int:
    config = load_config(args.config)
    engine = Engine.from_config(config)
    if engine.kb is None:
        raise ClinicError("knowledge base not loaded; check kb_file in the config")
    language = router_mod.detect_language(args.text, config.cjk_threshold)
    k = args.k if args.k is not None else config.retrieval_k
    context = retrieve_mod.retrieve(engine.kb, args.text, language, k)
    for rank, ((entry_id, dist), entry) in enumerate(
        zip(context.hits, context.entries), start=1
    ):
        print(f"{rank}. [{entry_id}] {entry.name}  (distance {dist:.6f})")
    print(f"keywords: {', '.join(context.keywords)}")
    return 0


def _cmd_detect_eval(args) -> int:
    gts = detect_mod.load_ground_truth_dir(args.gt_dir)
    preds = detect_mod.load_predictions(args.pred_file)
    metrics = detect_mod.evaluate(preds, gts, conf_cutoff=args.conf_cutoff)
    print(f"precision  = {metrics.precision:.4f}")
    print(f"recall     = {metrics.recall:.4f}")
    print(f"mAP@50     = {metrics.map50:.4f}")
    print(f"mAP@50-95  = {metrics.map50_95:.4f}")
    for cat in sorted(metrics.per_category_ap):
        print(f"  AP@50 category {cat} = {metrics.per_category_ap[cat]:.4f}")
    return 0


def _cmd_train_router(args) -> int:
    corpus = router_mod.load_corpus(args.corpus)
    if args.language:
        language = Language.from_code(args.language)
    else:
        sample = " ".join(text for text, _ in corpus[:200])
        language = router_mod.detect_language(sample)
    model = router_mod.train_intent_classifier(
        corpus, language,
        router_mod.RouterTrainConfig(dimension=args.dim, epochs=args.epochs,
                                     seed=args.seed),
    )
    router_mod.save_classifier(model, args.out)
    meta = model.meta
    print(f"trained {language.value} router on {len(corpus)} examples: "
          f"train acc {meta.train_accuracy:.4f}, held-out acc {meta.heldout_accuracy:.4f}")
    print(f"saved to {args.out}")
    return 0


def _cmd_train_head(args) -> int:
    dataset = classify_mod.load_features(args.features)
    names = classify_mod.load_category_names(args.names) if args.names else None
    head = classify_mod.train_head(
        dataset,
        classify_mod.HeadTrainConfig(seed=args.seed, epochs=args.epochs),
        category_names=names,
    )
    classify_mod.save_head(head, args.out)
    meta = head.meta
    print(f"trained head on {dataset.total} items ({dataset.n_categories} categories): "
          f"best val acc {meta.val_accuracy:.4f} at epoch {meta.best_epoch}")
    print(f"saved to {args.out}")
    return 0


def _cmd_build_index(args) -> int:
    entries = retrieve_mod.load_kb(args.kb_file)
    embedder = retrieve_mod.Embedder(args.dim)
    index = retrieve_mod.build_index(entries, embedder)
    retrieve_mod.save_index(index, args.out)
    print(f"indexed {index.count} entries (d={index.dimension}) -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    dataset = evaluation.load_eval_dataset(args.dataset)

    if args.judge == "stub":
        judge = evaluation.StubJudge(args.stub_sc, args.stub_ic)
    else:
        if not args.config:
            raise ClinicError("--judge http requires --config with judge settings")
        config = load_config(args.config)
        if not config.judge_endpoint:
            raise ClinicError("judge_endpoint is not set in the config")
        from .fusion import ChatClient, LlmClientConfig
        judge = evaluation.HttpJudge(ChatClient(LlmClientConfig(
            endpoint=config.judge_endpoint,
            model=config.judge_model,
            token_env=config.judge_token_env,
            timeout_ms=config.judge_timeout_ms,
            max_retries=config.judge_max_retries,
        )))

    outputs = None
    answer_fn = None
    if args.outputs:
        outputs = evaluation.load_outputs(args.outputs)
    else:
        if not args.config:
            raise ClinicError("answering via the pipeline requires --config")
        engine = Engine.from_config(load_config(args.config))
        answer_fn = _pipeline_answerer(engine)

    report = evaluation.run_eval(
        dataset, judge, answer_fn=answer_fn, outputs=outputs,
        parallelism=args.parallelism,
    )
    print(report.render_table())
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            for record in report.records():
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        print(f"report records -> {args.report}")
    return 0


def _pipeline_answerer(engine: Engine):
    def answer(sample: evaluation.EvalSample) -> str:
        image = None
        if sample.image_ref:
            width, height = fixtures.IMAGE_SIZE
            image = ImageRef(ref=sample.image_ref, width=width, height=height)
        query = Query(id=sample.id, text=sample.query, image=image)
        return engine.handle_query(query).answer
    return answer


def _cmd_gen_fixtures(args) -> int:
    paths = fixtures.gen_fixtures(args.out_dir, seed=args.seed)
    for role in sorted(paths):
        print(f"{role}: {paths[role]}")
    return 0


_COMMANDS = {
    "serve": _cmd_serve,
    "route": _cmd_route,
    "classify": _cmd_classify,
    "retrieve": _cmd_retrieve,
    "detect-eval": _cmd_detect_eval,
    "train-router": _cmd_train_router,
    "train-head": _cmd_train_head,
    "build-index": _cmd_build_index,
    "eval": _cmd_eval,
    "gen-fixtures": _cmd_gen_fixtures,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ClinicError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
