"""End-to-end pipeline stages shared by the CLI and the test suite."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor

from . import bagging, distsup, evaluation, kgstore, model as model_mod, synthgen, textpipe
from .config import RunConfig


def run_synth(cfg: RunConfig) -> tuple[kgstore.KnowledgeGraph, list, list]:
    """Generate and write the synthetic KG, corpus, and gold alignment."""
    synth = cfg.synth
    kg = synthgen.gen_kg(synth)
    docs, gold = synthgen.gen_corpus(synth, kg)
    kgstore.save_kg(kg, cfg.path("kg.tsv"))
    synthgen.write_corpus(docs, cfg.path("corpus.jsonl"))
    synthgen.write_gold(gold, cfg.path("gold.jsonl"))
    return kg, docs, gold


def load_inputs(cfg: RunConfig) -> tuple[kgstore.KnowledgeGraph, list[textpipe.Document]]:
    kg = kgstore.load_kg(cfg.path("kg.tsv"))
    kg = kgstore.filter_relations(kg, set(cfg.excluded_relations))
    docs = textpipe.read_corpus(cfg.path("corpus.jsonl"))
    return kg, docs


def segment_corpus(docs: list[textpipe.Document],
                   workers: int = 0) -> list[textpipe.Sentence]:
    """Segment all documents; output order is (doc order, sentence index)
    regardless of worker scheduling."""
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_doc = list(pool.map(textpipe.segment, docs, chunksize=64))
    else:
        per_doc = [textpipe.segment(d) for d in docs]
    return [s for doc_sents in per_doc for s in doc_sents]


def preprocess(cfg: RunConfig) -> list[distsup.MarkedInstance]:
    """segment -> dedupe -> match -> align -> negatives -> markers -> splits.

    Writes sentences.jsonl and instances.jsonl into the workdir.
    """
    kg, docs = load_inputs(cfg)
    sentences = textpipe.dedupe(segment_corpus(docs, cfg.workers))
    textpipe.write_sentences(sentences, cfg.path("sentences.jsonl"))
    matcher = textpipe.build_matcher(kg)
    positives = distsup.align(sentences, matcher, kg)
    negatives = distsup.sample_negatives(
        positives, kg, cfg.seed, cfg.negative_ratio, cfg.check_reverse)
    marked: list[distsup.MarkedInstance] = []
    truncated = 0
    for inst in positives + negatives:
        try:
            marked.append(distsup.insert_markers(inst, cfg.max_seq_len))
        except distsup.MarkerTruncationError:
            truncated += 1
    splits = distsup.make_splits(marked, cfg.seed)
    final = distsup.apply_splits(marked, splits)
    distsup.write_instances(final, cfg.path("instances.jsonl"))
    with open(cfg.path("preprocess_stats.json"), "w", encoding="utf-8") as f:
        json.dump({
            "schema": 1,
            "sentences": len(sentences),
            "positives": len(positives),
            "negatives": len(negatives),
            "marker_truncated": truncated,
            "cross_split_sentences_dropped": len(splits.dropped_sentences),
            "instances": len(final),
        }, f, sort_keys=True, indent=2)
    return final


def bags_by_split(
    cfg: RunConfig,
    instances: list[distsup.MarkedInstance],
    kg: kgstore.KnowledgeGraph,
    mode: str | None = None,
) -> dict[str, list[bagging.Bag]]:
    """Epoch-0 bags per split, in the requested grouping mode."""
    mode = mode or cfg.mode
    out: dict[str, list[bagging.Bag]] = {}
    for split in ("train", "dev", "test"):
        insts = [i for i in instances if i.split == split]
        groups = bagging.group(insts, mode, kg)
        out[split] = bagging.build_bags(groups, cfg.bag_size, cfg.seed, epoch=0)
    return out


def write_bag_manifest(bags: dict[str, list[bagging.Bag]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for split in ("train", "dev", "test"):
            for b in bags[split]:
                line = json.loads(b.to_json())
                line["split"] = split
                f.write(json.dumps(line, sort_keys=True) + "\n")


def run_bag(cfg: RunConfig, mode: str | None = None) -> dict:
    """Bag the preprocessed instances; writes the manifest + stats."""
    mode = mode or cfg.mode
    kg, _ = load_inputs(cfg)
    instances = distsup.read_instances(cfg.path("instances.jsonl"))
    bags = bags_by_split(cfg, instances, kg, mode)
    write_bag_manifest(bags, cfg.path(f"bags_{mode}.jsonl"))
    stats = bagging.duplication_stats([b for s in bags.values() for b in s])
    with open(cfg.path(f"bag_stats_{mode}.json"), "w", encoding="utf-8") as f:
        json.dump({"schema": 1, "mode": mode, **stats}, f, sort_keys=True,
                  indent=2)
    return stats


def run_train(cfg: RunConfig, mode: str | None = None,
              arch: str | None = None) -> model_mod.TrainResult:
    """Train on the preprocessed instances; writes checkpoint + log."""
    mode = mode or cfg.mode
    arch = arch or cfg.arch
    kg, _ = load_inputs(cfg)
    instances = distsup.read_instances(cfg.path("instances.jsonl"))
    train_insts = [i for i in instances if i.split == "train"]
    dev_insts = [i for i in instances if i.split == "dev"]
    labels = model_mod.label_list(kg.relations())
    vocab = model_mod.Vocab.build(train_insts)
    train_groups = bagging.group(train_insts, mode, kg)
    dev_bags = bagging.build_bags(bagging.group(dev_insts, mode, kg),
                                  cfg.bag_size, cfg.seed, epoch=0)
    result = model_mod.train(train_groups, dev_bags, cfg.encoder, cfg.train,
                             labels, vocab, arch, cfg.bag_size)
    model_mod.save_checkpoint(result.model, cfg.path(f"model_{mode}_{arch}.json"))
    model_mod.write_train_log(result.log, cfg.path(f"train_log_{mode}_{arch}.csv"))
    return result


def evaluate_model(
    cfg: RunConfig,
    trained: model_mod.AmilModel,
    instances: list[distsup.MarkedInstance],
    kg: kgstore.KnowledgeGraph,
    mode: str | None = None,
) -> dict:
    """Corpus-level + sentence-level metrics on the test split."""
    mode = mode or cfg.mode
    test = [i for i in instances if i.split == "test"]
    groups = bagging.group(test, mode, kg)
    bags = bagging.build_bags(groups, cfg.bag_size, cfg.seed, epoch=0)
    probs = model_mod.predict(trained, bags)
    bag_probs = list(zip(bags, probs.tolist()))
    predictions = evaluation.deabstract(bag_probs, trained.labels)
    gold = {i.triple for i in test if i.label != kgstore.NA_RELATION}
    corpus = evaluation.corpus_eval(predictions, gold, tuple(cfg.p_at))

    pred_by_uid: dict[str, tuple[str, str]] = {}
    argmax = probs.argmax(dim=-1).tolist()
    for bag, top in zip(bags, argmax):
        pred_label = trained.labels[top]
        for m in bag.members:
            pred_by_uid[m.uid] = (pred_label, m.label)
    support = evaluation.support_index(instances)
    rare = evaluation.pareto_split(support)["rare"]
    pairs_all = [pred_by_uid[i.uid] for i in test]
    pairs_rare = [pred_by_uid[i.uid] for i in test if i.triple in rare]
    pairs_common = [pred_by_uid[i.uid] for i in test if i.triple not in rare]
    metrics = {
        "mode": mode,
        "arch": trained.arch,
        "auc": corpus["auc"],
        "f1": corpus["f1"],
        "p_at_k": corpus["p_at_k"],
        "curve": corpus["curve"],
        "sentence_all": evaluation.sentence_eval(pairs_all),
        "sentence_rare": evaluation.sentence_eval(pairs_rare),
        "sentence_common": evaluation.sentence_eval(pairs_common),
    }
    metrics["_predictions"] = predictions
    return metrics


def run_eval(cfg: RunConfig, mode: str | None = None,
             arch: str | None = None) -> dict:
    """Evaluate a saved checkpoint; writes predictions, metrics, PR curve."""
    mode = mode or cfg.mode
    arch = arch or cfg.arch
    kg, _ = load_inputs(cfg)
    instances = distsup.read_instances(cfg.path("instances.jsonl"))
    trained = model_mod.load_checkpoint(cfg.path(f"model_{mode}_{arch}.json"))
    metrics = evaluate_model(cfg, trained, instances, kg, mode)
    predictions = metrics.pop("_predictions")
    with open(cfg.path(f"predictions_{mode}_{arch}.jsonl"), "w",
              encoding="utf-8") as f:
        for p in predictions:
            f.write(json.dumps({"triple": list(p.triple), "score": p.score},
                               sort_keys=True) + "\n")
    evaluation.report(metrics, cfg.path(f"metrics_{mode}_{arch}.json"),
                      cfg.path(f"pr_curve_{mode}_{arch}.csv"))
    return metrics


def run_report(cfg: RunConfig, mode: str | None = None,
               arch: str | None = None) -> dict:
    """Recompute the report files from saved predictions."""
    mode = mode or cfg.mode
    arch = arch or cfg.arch
    instances = distsup.read_instances(cfg.path("instances.jsonl"))
    gold = {i.triple for i in instances
            if i.split == "test" and i.label != kgstore.NA_RELATION}
    predictions = []
    with open(cfg.path(f"predictions_{mode}_{arch}.jsonl"), encoding="utf-8") as f:
        for line in f:
            obj = json.loads(line)
            predictions.append(evaluation.TriplePrediction(
                tuple(obj["triple"]), obj["score"]))
    metrics = evaluation.corpus_eval(predictions, gold, tuple(cfg.p_at))
    evaluation.report(metrics, cfg.path(f"report_{mode}_{arch}.json"),
                      cfg.path(f"report_pr_{mode}_{arch}.csv"))
    return metrics


def run_ablate(cfg: RunConfig, mode: str | None = None) -> list[dict]:
    """Train and evaluate every architecture A..Q; writes a comparison CSV."""
    import csv

    mode = mode or cfg.mode
    rows = []
    for arch in model_mod.ARCHS:
        run_train(cfg, mode, arch)
        metrics = run_eval(cfg, mode, arch)
        rows.append({"arch": arch, "f1": metrics["f1"], "auc": metrics["auc"],
                     **{f"p_at_{k}": v for k, v in metrics["p_at_k"].items()}})
    path = cfg.path(f"ablation_{mode}.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                        for k, v in row.items()})
    return rows
