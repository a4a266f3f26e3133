"""Seeded synthetic KG + corpus generator with long-tail triple support.

Every generated sentence is segmenter- and matcher-clean: entity surfaces
are single capitalized pseudo-words, sentences end with a period, and each
relational template mentions exactly two entities.  Triple support counts
follow a capped Pareto distribution so most triples are supported by only
one or two sentences.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .kgstore import NA_RELATION, KnowledgeGraph
from .textpipe import Document


@dataclass
class SynthConfig:
    n_types: int = 2
    entities_per_type: int = 20
    n_relations: int = 4
    n_triples: int = 60
    pareto_alpha: float = 1.16
    noise_rate: float = 0.1
    distractor_rate: float = 0.05
    support_cap: int = 64
    sentences_per_doc: int = 5
    seed: int = 0
    templates: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if min(self.n_types, self.entities_per_type, self.n_relations,
               self.n_triples) <= 0:
            raise ValueError("counts must be positive")
        if self.pareto_alpha <= 0:
            raise ValueError("pareto_alpha must be positive")
        if not 0 <= self.noise_rate < 1:
            raise ValueError("noise_rate must be in [0, 1)")

    def phrase(self, rel: str) -> str:
        # default templates carry several relation-specific tokens so the
        # relational signal is not a single token
        return self.templates.get(rel, f"{rel}ly links {rel}wise to")


NOISE_PHRASE = "was mentioned near"


def _relation_signature(cfg: SynthConfig, j: int) -> tuple[str, str]:
    """Fixed ordered (head type, tail type) pair for relation j."""
    return (f"t{j % cfg.n_types}", f"t{(j + 1) % cfg.n_types}")


def gen_kg(cfg: SynthConfig) -> KnowledgeGraph:
    """Typed entities plus n_triples distinct directed edges.

    Entities get round-robin types; each relation links exactly one ordered
    type pair, mirroring a semantic-network-style regularity.
    """
    rng = random.Random(cfg.seed * 2 + 1)
    n_entities = cfg.n_types * cfg.entities_per_type
    kg = KnowledgeGraph()
    by_type: dict[str, list[str]] = {}
    for i in range(n_entities):
        ent, typ = f"e{i}", f"t{i % cfg.n_types}"
        kg.entities.add(ent)
        kg.type_map[ent] = typ
        kg.surface_forms[ent] = [f"Term{i}"]
        by_type.setdefault(typ, []).append(ent)
    relations = [f"r{j}" for j in range(cfg.n_relations)]
    want = [0] * cfg.n_relations
    for i in range(cfg.n_triples):
        want[i % cfg.n_relations] += 1
    for j, rel in enumerate(relations):
        ht, tt = _relation_signature(cfg, j)
        candidates = [(h, t) for h in by_type[ht] for t in by_type[tt] if h != t]
        if want[j] > len(candidates):
            raise ValueError(
                f"relation {rel}: requested {want[j]} edges but only "
                f"{len(candidates)} ordered pairs available")
        for h, t in rng.sample(candidates, want[j]):
            kg.edges.add((h, rel, t))
    kg.validate()
    return kg


def gen_corpus(
    cfg: SynthConfig, kg: KnowledgeGraph
) -> tuple[list[Document], list[dict]]:
    """Documents plus a gold record per generated sentence.

    Gold records carry the intended label: the KG relation for relational
    sentences, NA for noise sentences, and kind "distractor" for the
    three-mention sentences that exercise the alignment rejection path.
    """
    rng = random.Random(cfg.seed * 2 + 2)
    surface = {e: kg.surface_forms[e][0] for e in kg.entities}
    triples = sorted(kg.edges)
    counter = 0
    records: list[dict] = []  # {"text", "head", "tail", "label", "kind"}
    for h, r, t in triples:
        support = min(cfg.support_cap,
                      math.floor(rng.paretovariate(cfg.pareto_alpha)))
        for _ in range(support):
            counter += 1
            if rng.random() < cfg.noise_rate:
                text = (f"{surface[h]} {NOISE_PHRASE} {surface[t]} "
                        f"in report {counter}.")
                label = NA_RELATION
            else:
                text = (f"{surface[h]} {cfg.phrase(r)} {surface[t]} "
                        f"in report {counter}.")
                label = r
            records.append({"text": text, "head": h, "tail": t,
                            "label": label, "kind": "support"})
    entities = sorted(kg.entities)
    n_distract = math.floor(cfg.distractor_rate * len(records))
    for _ in range(n_distract):
        counter += 1
        a, b, c = rng.sample(entities, 3)
        text = (f"{surface[a]} and {surface[b]} were observed with "
                f"{surface[c]} in report {counter}.")
        records.append({"text": text, "head": a, "tail": b,
                        "label": NA_RELATION, "kind": "distractor"})
    rng.shuffle(records)
    docs: list[Document] = []
    gold: list[dict] = []
    for start in range(0, len(records), cfg.sentences_per_doc):
        chunk = records[start : start + cfg.sentences_per_doc]
        doc_id = f"doc{len(docs)}"
        docs.append(Document(doc_id, " ".join(rec["text"] for rec in chunk)))
        for idx, rec in enumerate(chunk):
            gold.append({"doc_id": doc_id, "index": idx, "head": rec["head"],
                         "tail": rec["tail"], "label": rec["label"],
                         "kind": rec["kind"]})
    return docs, gold


def write_corpus(docs: list[Document], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(json.dumps({"doc_id": d.doc_id, "text": d.text},
                               sort_keys=True) + "\n")


def write_gold(gold: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in gold:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
