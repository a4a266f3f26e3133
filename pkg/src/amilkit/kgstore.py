"""Directed knowledge graph with surface forms and semantic types.

The graph file format is a UTF-8 TSV with three record kinds, tagged by the
first column:

    E <entity_id> <semantic_type_id>
    S <entity_id> <surface form>
    R <head_id> <relation_id> <tail_id>

Lines starting with ``#`` are comments.  Entities may list several types on
one ``E`` line; the first is canonical, the rest are kept as metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field

NA_RELATION = "NA"


class KGError(Exception):
    """Raised for malformed or inconsistent knowledge-graph input."""


def normalize_surface(s: str) -> str:
    """Collapse whitespace, trim, and casefold a surface form."""
    return " ".join(s.split()).casefold()


@dataclass
class KnowledgeGraph:
    """Directed labeled graph over typed entities.

    Immutable after load; safe for concurrent readers.
    """

    entities: set[str] = field(default_factory=set)
    surface_forms: dict[str, list[str]] = field(default_factory=dict)
    type_map: dict[str, str] = field(default_factory=dict)
    edges: set[tuple[str, str, str]] = field(default_factory=set)
    extra_types: dict[str, list[str]] = field(default_factory=dict)
    # (head, tail) -> sorted relations, built lazily on first `linked` call
    _pair_index: dict[tuple[str, str], list[str]] | None = None

    def validate(self) -> None:
        for e in self.entities:
            if not e:
                raise KGError("empty entity id")
            if e not in self.type_map:
                raise KGError(f"entity {e!r} has no semantic type")
            if not self.surface_forms.get(e):
                raise KGError(f"entity {e!r} has no surface form")
        for h, r, t in self.edges:
            if h not in self.entities:
                raise KGError(f"edge references unknown head entity {h!r}")
            if t not in self.entities:
                raise KGError(f"edge references unknown tail entity {t!r}")
            if r == NA_RELATION:
                raise KGError(f"reserved relation {NA_RELATION} used as edge label")

    def type_of(self, entity: str) -> str:
        if entity not in self.entities:
            raise KGError(f"unknown entity {entity!r}")
        return self.type_map[entity]

    def linked(self, head: str, tail: str) -> str | None:
        """Relation of edge (head, r, tail), or None.

        With multiple edges on the ordered pair, the lexicographically
        smallest relation wins so downstream alignment is deterministic.
        """
        if head not in self.entities:
            raise KGError(f"unknown entity {head!r}")
        if tail not in self.entities:
            raise KGError(f"unknown entity {tail!r}")
        if self._pair_index is None:
            index: dict[tuple[str, str], list[str]] = {}
            for h, r, t in self.edges:
                index.setdefault((h, t), []).append(r)
            for rels in index.values():
                rels.sort()
            self._pair_index = index
        rels = self._pair_index.get((head, tail))
        return rels[0] if rels else None

    def relations(self) -> list[str]:
        """Sorted distinct edge relations."""
        return sorted({r for _, r, _ in self.edges})


def load_kg(path: str) -> KnowledgeGraph:
    """Parse a KG TSV file and return a validated KnowledgeGraph."""
    kg = KnowledgeGraph()
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            tag = parts[0]
            try:
                if tag == "E":
                    ent, types = parts[1], parts[2:]
                    if not types:
                        raise KGError("E record missing semantic type")
                    kg.entities.add(ent)
                    kg.type_map[ent] = types[0]
                    if len(types) > 1:
                        kg.extra_types[ent] = types[1:]
                elif tag == "S":
                    ent, form = parts[1], parts[2]
                    kg.surface_forms.setdefault(ent, []).append(form)
                elif tag == "R":
                    head, rel, tail = parts[1], parts[2], parts[3]
                    kg.edges.add((head, rel, tail))
                else:
                    raise KGError(f"unknown record tag {tag!r}")
            except IndexError:
                raise KGError(f"{path}:{lineno}: malformed record: {line!r}") from None
            except KGError as e:
                raise KGError(f"{path}:{lineno}: {e}") from None
    for ent in kg.surface_forms:
        if ent not in kg.entities:
            raise KGError(f"surface form for unknown entity {ent!r}")
    kg.validate()
    return kg


def filter_relations(kg: KnowledgeGraph, excluded: set[str]) -> KnowledgeGraph:
    """Drop every edge whose relation is in `excluded`; entities unchanged."""
    return KnowledgeGraph(
        entities=set(kg.entities),
        surface_forms={e: list(f) for e, f in kg.surface_forms.items()},
        type_map=dict(kg.type_map),
        edges={(h, r, t) for h, r, t in kg.edges if r not in excluded},
        extra_types={e: list(t) for e, t in kg.extra_types.items()},
    )


def save_kg(kg: KnowledgeGraph, path: str) -> None:
    """Write a graph back out in the TSV format, deterministically ordered."""
    with open(path, "w", encoding="utf-8") as f:
        for ent in sorted(kg.entities):
            types = [kg.type_map[ent]] + kg.extra_types.get(ent, [])
            f.write("E\t" + "\t".join([ent] + types) + "\n")
        for ent in sorted(kg.surface_forms):
            for form in kg.surface_forms[ent]:
                f.write(f"S\t{ent}\t{form}\n")
        for h, r, t in sorted(kg.edges):
            f.write(f"R\t{h}\t{r}\t{t}\n")
