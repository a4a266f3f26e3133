"""Document ingestion: sentence segmentation, dedup, and dictionary matching.

Matching is case-insensitive, leftmost-longest, non-overlapping, and
restricted to word boundaries (a hit may not be flanked by letters/digits).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .kgstore import KnowledgeGraph, normalize_surface


class MatcherError(Exception):
    """Raised when the surface-form dictionary cannot be compiled."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Sentence:
    doc_id: str
    index: int
    text: str

    @property
    def key(self) -> tuple[str, int]:
        return (self.doc_id, self.index)


@dataclass(frozen=True)
class Mention:
    entity: str
    start: int
    end: int
    surface: str


# Tokens after which a terminal period never ends a sentence.
_ABBREVIATIONS = (
    "fig.", "figs.", "et al.", "al.", "vs.", "e.g.", "i.e.",
    "etc.", "dr.", "cf.", "no.", "eq.", "ref.",
)

_TERMINALS = ".!?"


def _breaks_sentence(text: str, i: int, chunk_start: int) -> bool:
    """True if the terminal at position i ends a sentence."""
    j = i + 1
    if j >= len(text) or not text[j].isspace():
        return False
    while j < len(text) and text[j].isspace():
        j += 1
    if j >= len(text) or not (text[j].isupper() or text[j].isdigit()):
        return False
    if text[i] == ".":
        # initial guard: a chunk-leading single capital letter + period
        # ("E. coli") never breaks; later single capitals may ("..B. C..")
        first = chunk_start
        while first < len(text) and text[first].isspace():
            first += 1
        if i >= 1 and text[i - 1].isupper() and i - 1 == first:
            return False
        head = text[: i + 1].lower()
        if any(head.endswith(abbr) for abbr in _ABBREVIATIONS):
            return False
    return True


def segment(doc: Document) -> list[Sentence]:
    """Split a document into sentences with a rule-based segmenter."""
    sentences: list[Sentence] = []
    text = doc.text
    start = 0
    for i, ch in enumerate(text):
        if ch in _TERMINALS and _breaks_sentence(text, i, start):
            chunk = text[start : i + 1].strip()
            if chunk:
                sentences.append(Sentence(doc.doc_id, len(sentences), chunk))
            start = i + 1
    chunk = text[start:].strip()
    if chunk:
        sentences.append(Sentence(doc.doc_id, len(sentences), chunk))
    return sentences


def dedupe(sentences: list[Sentence]) -> list[Sentence]:
    """Keep the first occurrence of each normalized sentence text."""
    seen: set[str] = set()
    out = []
    for s in sentences:
        norm = normalize_surface(s.text)
        if norm not in seen:
            seen.add(norm)
            out.append(s)
    return out


def _fold(text: str) -> str:
    """Length-preserving lowercase fold for offset-stable matching."""
    return "".join(c.lower() if len(c.lower()) == 1 else c for c in text)


class DictionaryMatcher:
    """Character trie over normalized surface forms.

    Build time is linear in total pattern length.  Every pattern maps to
    exactly one entity; collisions are rejected at build time.
    """

    def __init__(self) -> None:
        # trie node: dict char -> node; entity stored under the "" key
        self.root: dict = {}
        self.pattern_entity: dict[str, str] = {}

    def add(self, surface: str, entity: str) -> None:
        pattern = normalize_surface(surface)
        if not pattern:
            return
        prior = self.pattern_entity.get(pattern)
        if prior is not None:
            if prior != entity:
                raise MatcherError(
                    f"surface form {pattern!r} registered for both "
                    f"{prior!r} and {entity!r}"
                )
            return
        self.pattern_entity[pattern] = entity
        node = self.root
        for ch in pattern:
            node = node.setdefault(ch, {})
        node[""] = entity

    def __len__(self) -> int:
        return len(self.pattern_entity)

    def _longest_at(self, folded: str, start: int) -> tuple[int, str] | None:
        """Longest boundary-valid match starting at `start`, as (end, entity)."""
        node = self.root
        best: tuple[int, str] | None = None
        i = start
        n = len(folded)
        while i < n:
            ch = folded[i]
            nxt = node.get(ch)
            if nxt is None and ch.isspace():
                nxt = node.get(" ")
            if nxt is None:
                break
            node = nxt
            i += 1
            if "" in node and (i == n or not folded[i].isalnum()):
                best = (i, node[""])
        return best

    def find(self, sentence: Sentence) -> list[Mention]:
        """Leftmost-longest non-overlapping mentions, sorted by start."""
        text = sentence.text
        folded = _fold(text)
        mentions: list[Mention] = []
        i = 0
        n = len(folded)
        while i < n:
            if i > 0 and folded[i - 1].isalnum():
                i += 1
                continue
            hit = self._longest_at(folded, i)
            if hit is None:
                i += 1
                continue
            end, entity = hit
            mentions.append(Mention(entity, i, end, text[i:end]))
            i = end
        return mentions


def build_matcher(kg: KnowledgeGraph) -> DictionaryMatcher:
    """Compile all surface forms of a graph into a DictionaryMatcher."""
    matcher = DictionaryMatcher()
    for entity in sorted(kg.surface_forms):
        for form in kg.surface_forms[entity]:
            matcher.add(form, entity)
    return matcher


def find_mentions(matcher: DictionaryMatcher, sentence: Sentence) -> list[Mention]:
    return matcher.find(sentence)


def read_corpus(path: str) -> list[Document]:
    docs = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            doc = Document(obj["doc_id"], obj["text"])
            if doc.doc_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


def write_sentences(sentences: list[Sentence], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            f.write(json.dumps(
                {"doc_id": s.doc_id, "index": s.index, "text": s.text},
                sort_keys=True) + "\n")
