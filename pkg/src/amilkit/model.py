"""Trainable sentence encoder, relation representations A..Q, and training.

The encoder is a small transformer trained from scratch.  Relation
representations are concatenations of nine reusable pieces: the CLS row,
pooled mention spans, marker rows, the middle mention pool, and the full
sequence average.  A bag's representations are averaged, passed through
tanh, a square linear layer with dropout, and projected onto the classes.
"""

from __future__ import annotations

import base64
import csv
import json
import math
import random
from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .bagging import Bag, BagKey, build_bags
from .distsup import MarkedInstance
from .kgstore import NA_RELATION

PAD, UNK, CLS = "<pad>", "<unk>", "<cls>"

# Dimensionality multiplier per architecture: |repr| = k * d.
ARCH_MULT = {
    "A": 1, "B": 2, "C": 3, "D": 2, "E": 3, "F": 2, "G": 3, "H": 4, "I": 5,
    "J": 1, "K": 2, "L": 3, "M": 4, "N": 5, "O": 6, "P": 1, "Q": 2,
}
ARCHS = sorted(ARCH_MULT)


class TrainingDivergence(Exception):
    """Loss became non-finite during training."""


@dataclass
class EncoderConfig:
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 2
    max_len: int = 128
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.hidden_dim % self.heads != 0:
            raise ValueError("hidden_dim must be divisible by heads")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 2
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.learning_rate, self.batch_size, self.max_epochs,
               self.patience) <= 0:
            raise ValueError("train config values must be positive")


class Vocab:
    """Token vocabulary with reserved pad/unk/cls entries."""

    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        assert tokens[:3] == [PAD, UNK, CLS]

    @classmethod
    def build(cls, instances: list[MarkedInstance]) -> "Vocab":
        seen = sorted({t for inst in instances for t in inst.tokens})
        return cls([PAD, UNK, CLS] + seen)

    def encode(self, tokens: list[str]) -> list[int]:
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    def __len__(self) -> int:
        return len(self.tokens)


class Encoder(nn.Module):
    """Token + position embeddings under a stack of transformer layers."""

    def __init__(self, cfg: EncoderConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.token_emb = nn.Embedding(vocab_size, d, padding_idx=0)
        self.pos_emb = nn.Embedding(cfg.max_len + 1, d)
        layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=cfg.heads, dim_feedforward=4 * d,
            dropout=cfg.dropout, activation="gelu",
            batch_first=True, norm_first=True)
        self.layers = nn.TransformerEncoder(layer, cfg.layers,
                                            enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """ids, pad_mask: (B, L+1) with CLS at column 0; returns (B, L+1, d)."""
        pos = torch.arange(ids.shape[1], device=ids.device)
        x = self.token_emb(ids) + self.pos_emb(pos)
        x = self.layers(x, src_key_padding_mask=pad_mask)
        return self.norm(x)


def span_pool(H: torch.Tensor, span: tuple[int, int]) -> torch.Tensor:
    """Average of rows j..k (inclusive) of a single hidden sequence."""
    j, k = span
    if not (1 <= j <= k < H.shape[0]):
        raise ValueError(f"invalid span {span} for {H.shape[0]} rows")
    return H[j : k + 1].mean(dim=0)


def middle_pool(
    H: torch.Tensor, head_span: tuple[int, int], tail_span: tuple[int, int]
) -> torch.Tensor:
    """Average of rows strictly between the two marker regions.

    Spans are the mention rows (inside the markers); the region pooled runs
    from after the textually-earlier closing marker to before the later
    opening marker.  Empty regions yield a zero vector.
    """
    first, second = sorted([head_span, tail_span])
    lo = first[1] + 2   # row after the earlier mention's closing marker
    hi = second[0] - 2  # row before the later mention's opening marker
    if lo > hi:
        return torch.zeros(H.shape[1], dtype=H.dtype, device=H.device)
    return H[lo : hi + 1].mean(dim=0)


def build_repr(
    arch: str,
    H: torch.Tensor,
    markers: tuple[int, int, int, int],
    head_span: tuple[int, int],
    tail_span: tuple[int, int],
    length: int | None = None,
) -> torch.Tensor:
    """Concatenate the pieces required by architecture `arch`.

    `H` is one encoded sentence, CLS at row 0; `markers` are the rows of the
    four marker tokens (e1_start, e1_end, e2_start, e2_end); spans are the
    mention rows.  `length` limits the sequence average to real tokens.
    """
    if arch not in ARCH_MULT:
        raise ValueError(f"unknown architecture {arch!r}")
    n = length if length is not None else H.shape[0] - 1
    e1s, e1e, e2s, e2e = markers
    pieces = {
        "cls": lambda: H[0],
        "e1": lambda: span_pool(H, head_span),
        "e2": lambda: span_pool(H, tail_span),
        "e1S": lambda: H[e1s],
        "e1E": lambda: H[e1e],
        "e2S": lambda: H[e2s],
        "e2E": lambda: H[e2e],
        "mid": lambda: middle_pool(H, head_span, tail_span),
        "avg": lambda: H[1 : n + 1].mean(dim=0),
    }
    layout = {
        "A": ["cls"],
        "B": ["e1", "e2"],
        "C": ["cls", "e1", "e2"],
        "D": ["e1S", "e2S"],
        "E": ["cls", "e1S", "e2S"],
        "F": ["e1E", "e2E"],
        "G": ["cls", "e1E", "e2E"],
        "H": ["e1S", "e1E", "e2S", "e2E"],
        "I": ["cls", "e1S", "e1E", "e2S", "e2E"],
        "J": ["mid"],
        "K": ["cls", "mid"],
        "L": ["e1E", "mid", "e2E"],
        "M": ["cls", "e1E", "mid", "e2E"],
        "N": ["e1S", "e1E", "mid", "e2S", "e2E"],
        "O": ["cls", "e1S", "e1E", "mid", "e2S", "e2E"],
        "P": ["avg"],
        "Q": ["cls", "avg"],
    }[arch]
    return torch.cat([pieces[p]() for p in layout])


class ClassifierHead(nn.Module):
    """tanh -> square linear -> dropout -> class projection."""

    def __init__(self, repr_dim: int, n_classes: int, dropout: float = 0.1):
        super().__init__()
        self.inner = nn.Linear(repr_dim, repr_dim)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Linear(repr_dim, n_classes)

    def forward(self, agg: torch.Tensor) -> torch.Tensor:
        """Logits from an aggregated bag representation."""
        return self.out(self.dropout(self.inner(torch.tanh(agg))))


class AmilModel(nn.Module):
    """Encoder + one relation representation architecture + classifier."""

    def __init__(self, enc_cfg: EncoderConfig, vocab: Vocab, arch: str,
                 labels: list[str]):
        super().__init__()
        if arch not in ARCH_MULT:
            raise ValueError(f"unknown architecture {arch!r}")
        self.enc_cfg = enc_cfg
        self.vocab = vocab
        self.arch = arch
        self.labels = labels   # NA last by construction
        self.label_index = {r: i for i, r in enumerate(labels)}
        self.encoder = Encoder(enc_cfg, len(vocab))
        self.head = ClassifierHead(
            ARCH_MULT[arch] * enc_cfg.hidden_dim, len(labels), enc_cfg.dropout)

    def encode_instances(self, insts: list[MarkedInstance]) -> tuple[torch.Tensor, list[int]]:
        """Encode a flat list of instances; returns (B, L+1, d) and lengths."""
        cls_id = self.vocab.index[CLS]
        seqs = [[cls_id] + self.vocab.encode(m.tokens) for m in insts]
        lengths = [len(s) - 1 for s in seqs]
        width = max(len(s) for s in seqs)
        ids = torch.zeros(len(seqs), width, dtype=torch.long)
        pad = torch.ones(len(seqs), width, dtype=torch.bool)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s)
            pad[i, : len(s)] = False
        return self.encoder(ids, pad), lengths

    def instance_reprs(self, insts: list[MarkedInstance]) -> torch.Tensor:
        H, lengths = self.encode_instances(insts)
        reprs = []
        for i, m in enumerate(insts):
            markers = (m.e1_start + 1, m.e1_end + 1, m.e2_start + 1, m.e2_end + 1)
            hspan = (m.head_span[0] + 1, m.head_span[1] + 1)
            tspan = (m.tail_span[0] + 1, m.tail_span[1] + 1)
            reprs.append(build_repr(self.arch, H[i], markers, hspan, tspan,
                                    lengths[i]))
        return torch.stack(reprs)

    def forward_bags(self, bags: list[Bag]) -> torch.Tensor:
        """Log-probabilities over classes, one row per bag."""
        flat = [m for b in bags for m in b.members]
        reprs = self.instance_reprs(flat)
        size = len(bags[0].members)
        agg = reprs.view(len(bags), size, -1).mean(dim=1)
        return F.log_softmax(self.head(agg), dim=-1)


def forward_bag(bag: Bag, model: AmilModel) -> torch.Tensor:
    """Probability vector over classes for one bag."""
    return model.forward_bags([bag])[0].exp()


def nll_loss(probs: torch.Tensor, gold: int) -> torch.Tensor:
    """-log p[gold] for a probability vector."""
    return -torch.log(probs[gold])


@dataclass
class TrainLogEntry:
    epoch: int
    train_loss: float
    dev_precision: float
    dev_recall: float
    dev_f1: float


@dataclass
class TrainResult:
    model: AmilModel
    log: list[TrainLogEntry] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_f1: float = 0.0


def predict(model: AmilModel, bags: list[Bag],
            batch_size: int = 8) -> torch.Tensor:
    """Eval-mode probabilities per bag, (n_bags, n_classes)."""
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(bags), batch_size):
            out.append(model.forward_bags(bags[i : i + batch_size]).exp())
    return torch.cat(out)


def _dev_f1(model: AmilModel, dev_bags: list[Bag]) -> tuple[float, float, float]:
    """Sentence-level micro P/R/F1 on dev, bag argmax assigned to members."""
    from .evaluation import sentence_eval

    if not dev_bags:
        return (0.0, 0.0, 0.0)
    probs = predict(model, dev_bags)
    preds = probs.argmax(dim=-1).tolist()
    pairs = []
    for b, p in zip(dev_bags, preds):
        for m in b.members:
            pairs.append((model.labels[p], m.label))
    m = sentence_eval(pairs)
    return (m["precision"], m["recall"], m["f1"])


def train(
    train_groups: dict[BagKey, list[MarkedInstance]],
    dev_bags: list[Bag],
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    labels: list[str],
    vocab: Vocab,
    arch: str = "C",
    bag_size: int = 16,
) -> TrainResult:
    """Adam training with early stopping on dev sentence-level F1.

    Bags are re-chunked each epoch with per-key derived seeds; batch order
    is a seeded shuffle.  Deterministic for a given config and seed.
    """
    if not train_groups:
        raise ValueError("no training bags")
    torch.manual_seed(cfg.seed)
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # fixed thread count keeps runs bit-identical
    try:
        model = AmilModel(enc_cfg, vocab, arch, labels)
        opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        result = TrainResult(model)
        best_state = {k: v.clone() for k, v in model.state_dict().items()}
        stale = 0
        for epoch in range(cfg.max_epochs):
            model.train()
            bags = build_bags(train_groups, bag_size, cfg.seed, epoch)
            random.Random(cfg.seed * 1_000_003 + epoch).shuffle(bags)
            total = 0.0
            for i in range(0, len(bags), cfg.batch_size):
                batch = bags[i : i + cfg.batch_size]
                logp = model.forward_bags(batch)
                gold = torch.tensor([model.label_index[b.label] for b in batch])
                loss = F.nll_loss(logp, gold)
                if not torch.isfinite(loss):
                    raise TrainingDivergence(
                        f"non-finite loss at epoch {epoch}, step {i}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(batch)
            train_loss = total / len(bags)
            p, r, f1 = _dev_f1(model, dev_bags)
            result.log.append(TrainLogEntry(epoch, train_loss, p, r, f1))
            if f1 > result.best_dev_f1 or epoch == 0:
                result.best_dev_f1 = f1
                result.best_epoch = epoch
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        model.load_state_dict(best_state)
        model.eval()
        return result
    finally:
        torch.set_num_threads(n_threads)


def write_train_log(log: list[TrainLogEntry], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "dev_precision", "dev_recall",
                    "dev_f1"])
        for e in log:
            w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.dev_precision:.6f}",
                        f"{e.dev_recall:.6f}", f"{e.dev_f1:.6f}"])


def save_checkpoint(model: AmilModel, path: str) -> None:
    """Versioned JSON checkpoint: config, vocab, labels, flat LE float32."""
    params = {}
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        params[name] = {
            "shape": list(arr.shape),
            "data": base64.b64encode(
                arr.astype("<f4").tobytes()).decode("ascii"),
        }
    blob = {
        "schema": 1,
        "arch": model.arch,
        "encoder": asdict(model.enc_cfg),
        "labels": model.labels,
        "vocab": model.vocab.tokens,
        "params": params,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(blob, f, sort_keys=True)


def load_checkpoint(path: str) -> AmilModel:
    import numpy as np

    with open(path, encoding="utf-8") as f:
        blob = json.load(f)
    if blob.get("schema") != 1:
        raise ValueError(f"unsupported checkpoint schema {blob.get('schema')!r}")
    model = AmilModel(EncoderConfig(**blob["encoder"]), Vocab(blob["vocab"]),
                      blob["arch"], blob["labels"])
    state = {}
    for name, p in blob["params"].items():
        arr = np.frombuffer(base64.b64decode(p["data"]), dtype="<f4")
        state[name] = torch.tensor(arr.reshape(p["shape"]))
    model.load_state_dict(state)
    model.eval()
    return model


def label_list(relations: list[str]) -> list[str]:
    """Class order used everywhere: sorted relations then NA."""
    rels = sorted(r for r in relations if r != NA_RELATION)
    return rels + [NA_RELATION]
