"""Distant supervision: alignment, negative sampling, markers, and splits.

Head/tail assignment always follows the knowledge-graph edge direction,
regardless of the order the entities appear in the text.  The head mention
is wrapped in ``^`` tokens, the tail mention in ``$`` tokens.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field

from .kgstore import NA_RELATION, KnowledgeGraph
from .textpipe import DictionaryMatcher, Mention, Sentence

HEAD_MARKER = "^"
TAIL_MARKER = "$"
MAX_SEQ_LEN = 128

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class MarkerTruncationError(Exception):
    """Truncation to the max sequence length would cut an entity marker."""


class NegativeSamplingError(Exception):
    """Could not reach the requested negative-triple count."""


class SplitError(Exception):
    """Too few triples for a meaningful train/dev/test split."""


@dataclass
class Instance:
    """A sentence with two resolved entity mentions and a relation label."""

    sentence: Sentence
    head: Mention
    tail: Mention
    label: str

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.head.entity, self.label, self.tail.entity)


@dataclass
class MarkedInstance:
    """Tokenized instance with marker positions; the pipeline wire format."""

    doc_id: str
    index: int
    tokens: list[str]
    e1_start: int
    e1_end: int
    e2_start: int
    e2_end: int
    head_entity: str
    tail_entity: str
    label: str
    split: str | None = None

    @property
    def triple(self) -> tuple[str, str, str]:
        return (self.head_entity, self.label, self.tail_entity)

    @property
    def sentence_key(self) -> tuple[str, int]:
        return (self.doc_id, self.index)

    @property
    def uid(self) -> str:
        return f"{self.doc_id}:{self.index}"

    @property
    def head_span(self) -> tuple[int, int]:
        """Token span (j, k), inclusive, of the head mention."""
        return (self.e1_start + 1, self.e1_end - 1)

    @property
    def tail_span(self) -> tuple[int, int]:
        return (self.e2_start + 1, self.e2_end - 1)

    def to_json(self) -> str:
        return json.dumps({
            "doc_id": self.doc_id,
            "index": self.index,
            "tokens": self.tokens,
            "e1_start": self.e1_start,
            "e1_end": self.e1_end,
            "e2_start": self.e2_start,
            "e2_end": self.e2_end,
            "head_entity": self.head_entity,
            "tail_entity": self.tail_entity,
            "label": self.label,
            "split": self.split,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MarkedInstance":
        obj = json.loads(line)
        return cls(**obj)


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Whitespace + punctuation tokens with character offsets."""
    return [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def align(
    sentences: list[Sentence],
    matcher: DictionaryMatcher,
    kg: KnowledgeGraph,
) -> list[Instance]:
    """Positive instances: exactly two distinct entities linked in the KG."""
    out: list[Instance] = []
    for sent in sentences:
        mentions = matcher.find(sent)
        by_entity: dict[str, Mention] = {}
        for m in mentions:
            by_entity.setdefault(m.entity, m)
        if len(by_entity) != 2:
            continue
        a, b = list(by_entity)  # textual order: first mention of each entity
        rel = kg.linked(a, b)
        if rel is not None:
            out.append(Instance(sent, by_entity[a], by_entity[b], rel))
            continue
        rel = kg.linked(b, a)
        if rel is not None:
            out.append(Instance(sent, by_entity[b], by_entity[a], rel))
    return out


def largest_class_size(positives: list[Instance]) -> int:
    """Size in distinct triples of the biggest positive relation class."""
    by_rel: dict[str, set[tuple[str, str, str]]] = {}
    for inst in positives:
        by_rel.setdefault(inst.label, set()).add(inst.triple)
    return max(len(s) for s in by_rel.values()) if by_rel else 0


def sample_negatives(
    positives: list[Instance],
    kg: KnowledgeGraph,
    seed: int,
    ratio: float = 0.7,
    check_reverse: bool = True,
) -> list[Instance]:
    """NA instances built by corrupting one entity of a positive sentence.

    Produces one sentence per negative triple; the target count is
    floor(ratio x largest positive class), counted in triples.  With
    `check_reverse` (default) a corrupted pair is rejected if either
    direction is a KG edge.
    """
    if not positives:
        raise NegativeSamplingError("no positive instances to corrupt")
    target = math.floor(ratio * largest_class_size(positives))
    rng = random.Random(seed)
    entities = sorted(kg.entities)
    used_pairs: set[tuple[str, str]] = set()
    negatives: list[Instance] = []
    attempts = 0
    max_attempts = max(1, 1000 * target)
    while len(negatives) < target:
        attempts += 1
        if attempts > max_attempts:
            raise NegativeSamplingError(
                f"achieved {len(negatives)} of {target} negative triples "
                f"after {max_attempts} attempts")
        src = positives[rng.randrange(len(positives))]
        corrupt_head = rng.random() < 0.5
        repl = entities[rng.randrange(len(entities))]
        head_ent = repl if corrupt_head else src.head.entity
        tail_ent = src.tail.entity if corrupt_head else repl
        if head_ent == tail_ent or (head_ent, tail_ent) in used_pairs:
            continue
        if kg.linked(head_ent, tail_ent) is not None:
            continue
        if check_reverse and kg.linked(tail_ent, head_ent) is not None:
            continue
        old = src.head if corrupt_head else src.tail
        other = src.tail if corrupt_head else src.head
        surface = kg.surface_forms[repl][0]
        text = src.sentence.text
        new_text = text[: old.start] + surface + text[old.end :]
        delta = len(surface) - (old.end - old.start)
        new_mention = Mention(repl, old.start, old.start + len(surface), surface)
        if other.start >= old.end:
            other = Mention(other.entity, other.start + delta,
                            other.end + delta, other.surface)
        sent = Sentence(f"{src.sentence.doc_id}~neg{len(negatives)}",
                        src.sentence.index, new_text)
        used_pairs.add((head_ent, tail_ent))
        if corrupt_head:
            negatives.append(Instance(sent, new_mention, other, NA_RELATION))
        else:
            negatives.append(Instance(sent, other, new_mention, NA_RELATION))
    return negatives


def _token_span(tokens: list[tuple[str, int, int]], m: Mention) -> tuple[int, int]:
    """Indices (first, last) of tokens overlapping the mention char span."""
    hit = [i for i, (_, s, e) in enumerate(tokens) if s < m.end and e > m.start]
    if not hit:
        raise ValueError(f"mention {m!r} overlaps no token")
    return (hit[0], hit[-1])


def insert_markers(inst: Instance, max_len: int = MAX_SEQ_LEN) -> MarkedInstance:
    """Wrap mention token spans in marker tokens and truncate to max_len."""
    base = tokenize(inst.sentence.text)
    hs, he = _token_span(base, inst.head)
    ts, te = _token_span(base, inst.tail)
    if not (he < ts or te < hs):
        raise ValueError("head and tail mentions overlap")
    # at equal positions a closing marker precedes the next opening marker
    inserts = sorted([
        (hs, 1, HEAD_MARKER), (he + 1, 0, HEAD_MARKER),
        (ts, 1, TAIL_MARKER), (te + 1, 0, TAIL_MARKER),
    ], key=lambda x: (x[0], x[1]))
    tokens: list[str] = []
    markers: list[int] = []
    pos = 0
    for at, _, mark in inserts:
        tokens.extend(t for t, _, _ in base[pos:at])
        markers.append(len(tokens))
        tokens.append(mark)
        pos = at
    tokens.extend(t for t, _, _ in base[pos:])
    if hs <= ts:
        e1_start, e1_end, e2_start, e2_end = markers
    else:
        e2_start, e2_end, e1_start, e1_end = markers
    if max(markers) >= max_len:
        raise MarkerTruncationError(
            f"marker at token {max(markers)} beyond max length {max_len}")
    return MarkedInstance(
        doc_id=inst.sentence.doc_id,
        index=inst.sentence.index,
        tokens=tokens[:max_len],
        e1_start=e1_start,
        e1_end=e1_end,
        e2_start=e2_start,
        e2_end=e2_end,
        head_entity=inst.head.entity,
        tail_entity=inst.tail.entity,
        label=inst.label,
    )


@dataclass
class SplitAssignment:
    """Triple -> split partition plus sentences dropped for crossing splits."""

    by_triple: dict[tuple[str, str, str], str]
    dropped_sentences: set[tuple[str, int]] = field(default_factory=set)


def make_splits(
    instances: list[MarkedInstance],
    seed: int,
    test_frac: float = 0.2,
    dev_frac: float = 0.1,
) -> SplitAssignment:
    """Shuffle triples and partition: 20% test, 10% of the rest dev.

    Sentences supporting triples in different splits are dropped entirely.
    """
    triples = sorted({inst.triple for inst in instances})
    if len(triples) < 10:
        raise SplitError(f"only {len(triples)} triples; need at least 10")
    rng = random.Random(seed)
    rng.shuffle(triples)
    n_test = math.floor(test_frac * len(triples))
    n_dev = math.floor(dev_frac * (len(triples) - n_test))
    assignment: dict[tuple[str, str, str], str] = {}
    for i, t in enumerate(triples):
        if i < n_test:
            assignment[t] = "test"
        elif i < n_test + n_dev:
            assignment[t] = "dev"
        else:
            assignment[t] = "train"
    splits_by_sentence: dict[tuple[str, int], set[str]] = {}
    for inst in instances:
        splits_by_sentence.setdefault(inst.sentence_key, set()).add(
            assignment[inst.triple])
    dropped = {k for k, v in splits_by_sentence.items() if len(v) > 1}
    return SplitAssignment(assignment, dropped)


def apply_splits(
    instances: list[MarkedInstance], splits: SplitAssignment
) -> list[MarkedInstance]:
    """Stamp each instance with its split; drop cross-split sentences."""
    out = []
    for inst in instances:
        if inst.sentence_key in splits.dropped_sentences:
            continue
        inst.split = splits.by_triple[inst.triple]
        out.append(inst)
    return out


def write_instances(instances: list[MarkedInstance], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(inst.to_json() + "\n")


def read_instances(path: str) -> list[MarkedInstance]:
    with open(path, encoding="utf-8") as f:
        return [MarkedInstance.from_json(line) for line in f if line.strip()]
