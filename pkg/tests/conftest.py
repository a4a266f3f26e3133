import pytest

from amilkit.kgstore import KnowledgeGraph


@pytest.fixture
def bones_kg() -> KnowledgeGraph:
    """Small hand-built graph used across modules."""
    kg = KnowledgeGraph(
        entities={"fibula", "tibia", "humerus", "ulna", "aspirin", "fever"},
        surface_forms={
            "fibula": ["fibula"],
            "tibia": ["tibia", "shinbone"],
            "humerus": ["humerus"],
            "ulna": ["ulna"],
            "aspirin": ["aspirin"],
            "fever": ["fever", "high temperature"],
        },
        type_map={
            "fibula": "BodyPart", "tibia": "BodyPart",
            "humerus": "BodyPart", "ulna": "BodyPart",
            "aspirin": "Drug", "fever": "Finding",
        },
        edges={
            ("fibula", "articulates_with", "tibia"),
            ("humerus", "articulates_with", "ulna"),
            ("aspirin", "treats", "fever"),
        },
    )
    kg.validate()
    return kg


def write_kg_tsv(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return str(path)
