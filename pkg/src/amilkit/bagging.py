"""Fixed-size bags keyed by pair triples (MIL) or type triples (AMIL).

Short groups are filled by sampling with replacement from their own
instances; groups larger than the bag size are chunked into several bags.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass

from .distsup import MarkedInstance
from .kgstore import KnowledgeGraph

BAG_SIZE = 16

# BagKey: ("pair", e1, r, e2) or ("type", t1, r, t2)
BagKey = tuple[str, str, str, str]


@dataclass
class Bag:
    key: BagKey
    members: list[MarkedInstance]
    distinct_count: int

    @property
    def label(self) -> str:
        return self.key[2]

    def constituent_pairs(self) -> list[tuple[str, str]]:
        """Distinct (head, tail) entity pairs in the bag, for de-abstraction."""
        return sorted({(m.head_entity, m.tail_entity) for m in self.members})

    def to_json(self) -> str:
        return json.dumps({
            "key": {"mode": self.key[0], "k1": self.key[1],
                    "relation": self.key[2], "k2": self.key[3]},
            "members": [m.uid for m in self.members],
            "distinct_count": self.distinct_count,
        }, sort_keys=True)


def instance_key(inst: MarkedInstance, mode: str, kg: KnowledgeGraph) -> BagKey:
    if mode == "pair":
        return ("pair", inst.head_entity, inst.label, inst.tail_entity)
    if mode == "type":
        return ("type", kg.type_of(inst.head_entity), inst.label,
                kg.type_of(inst.tail_entity))
    raise ValueError(f"unknown bag mode {mode!r}")


def group(
    instances: list[MarkedInstance], mode: str, kg: KnowledgeGraph
) -> dict[BagKey, list[MarkedInstance]]:
    """Group instances under pair or type keys; nothing is lost."""
    groups: dict[BagKey, list[MarkedInstance]] = {}
    for inst in instances:
        groups.setdefault(instance_key(inst, mode, kg), []).append(inst)
    return groups


def fill(
    key: BagKey,
    instances: list[MarkedInstance],
    bag_size: int = BAG_SIZE,
    seed: int = 0,
) -> list[Bag]:
    """Shuffle, chunk into ceil(n/bag_size) bags, up-sample short chunks."""
    if not instances:
        raise ValueError("cannot fill a bag from zero instances")
    rng = random.Random(seed)
    shuffled = list(instances)
    rng.shuffle(shuffled)
    bags = []
    for i in range(0, len(shuffled), bag_size):
        chunk = shuffled[i : i + bag_size]
        members = list(chunk)
        while len(members) < bag_size:
            members.append(chunk[rng.randrange(len(chunk))])
        bags.append(Bag(key, members, distinct_count=len(chunk)))
    return bags


def derive_seed(base_seed: int, epoch: int, key: BagKey) -> int:
    """Stable per-key, per-epoch seed for bag reshuffling."""
    digest = hashlib.sha256(
        f"{base_seed}:{epoch}:{':'.join(key)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def build_bags(
    groups: dict[BagKey, list[MarkedInstance]],
    bag_size: int = BAG_SIZE,
    seed: int = 0,
    epoch: int = 0,
) -> list[Bag]:
    """Fill every group, in deterministic key order."""
    bags = []
    for key in sorted(groups):
        bags.extend(fill(key, groups[key], bag_size,
                         derive_seed(seed, epoch, key)))
    return bags


def duplication_stats(bags: list[Bag]) -> dict[str, float]:
    """Fraction of single-sentence bags and mean distinct count."""
    if not bags:
        return {"fraction_single_distinct": 0.0, "mean_distinct": 0.0}
    singles = sum(1 for b in bags if b.distinct_count == 1)
    mean = sum(b.distinct_count for b in bags) / len(bags)
    return {"fraction_single_distinct": singles / len(bags),
            "mean_distinct": mean}


def write_manifest(bags: list[Bag], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for b in bags:
            f.write(b.to_json() + "\n")
