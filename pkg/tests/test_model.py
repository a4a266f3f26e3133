import math
import random

import pytest
import torch

from amilkit.bagging import Bag, fill, group
from amilkit.distsup import MarkedInstance
from amilkit.model import (
    ARCH_MULT,
    ARCHS,
    AmilModel,
    ClassifierHead,
    EncoderConfig,
    TrainConfig,
    Vocab,
    build_repr,
    forward_bag,
    label_list,
    load_checkpoint,
    middle_pool,
    nll_loss,
    predict,
    save_checkpoint,
    span_pool,
    train,
)


def rand_setup(rng, d=8, n_tokens=12):
    """Random hidden sequence + consistent markers/spans (rows, CLS at 0)."""
    H = torch.randn(n_tokens + 1, d, generator=rng)
    # token layout: ^ h h ^ mid mid $ t $ trailing...
    markers = (1, 4, 7, 9)
    head_span = (2, 3)
    tail_span = (8, 8)
    return H, markers, head_span, tail_span


def test_build_repr_dimension_all_archs():
    for d in (8, 64):
        rng = torch.Generator().manual_seed(d)
        H, markers, hs, ts = rand_setup(rng, d=d)
        for arch in ARCHS:
            r = build_repr(arch, H, markers, hs, ts)
            assert r.shape == (ARCH_MULT[arch] * d,), arch


def test_build_repr_invalid_arch():
    rng = torch.Generator().manual_seed(0)
    H, markers, hs, ts = rand_setup(rng)
    with pytest.raises(ValueError):
        build_repr("Z", H, markers, hs, ts)


def test_arch_a_is_cls_row():
    rng = torch.Generator().manual_seed(1)
    H, markers, hs, ts = rand_setup(rng)
    assert torch.equal(build_repr("A", H, markers, hs, ts), H[0])


def test_arch_l_composition():
    rng = torch.Generator().manual_seed(2)
    H, markers, hs, ts = rand_setup(rng)
    r = build_repr("L", H, markers, hs, ts)
    d = H.shape[1]
    assert torch.equal(r[:d], H[markers[1]])           # e1 end marker
    assert torch.allclose(r[d : 2 * d], middle_pool(H, hs, ts))
    assert torch.equal(r[2 * d :], H[markers[3]])      # e2 end marker


CLS_PAIRS = [("C", "B"), ("E", "D"), ("G", "F"), ("I", "H"),
             ("K", "J"), ("M", "L"), ("O", "N"), ("Q", "P")]


@pytest.mark.parametrize("with_cls,without_cls", CLS_PAIRS)
def test_cls_strip_property(with_cls, without_cls):
    rng = torch.Generator().manual_seed(3)
    H, markers, hs, ts = rand_setup(rng)
    d = H.shape[1]
    full = build_repr(with_cls, H, markers, hs, ts)
    assert torch.equal(full[:d], H[0])
    assert torch.equal(full[d:], build_repr(without_cls, H, markers, hs, ts))


def test_span_pool_oracle():
    rng = torch.Generator().manual_seed(4)
    pyrng = random.Random(4)
    for _ in range(200):
        n, d = pyrng.randrange(3, 20), pyrng.randrange(2, 16)
        H = torch.randn(n, d, generator=rng)
        j = pyrng.randrange(1, n)
        k = pyrng.randrange(j, n)
        expect = sum(H[i] for i in range(j, k + 1)) / (1 + k - j)
        assert torch.allclose(span_pool(H, (j, k)), expect, atol=1e-6)


def test_span_pool_edge_cases():
    H = torch.arange(12.0).reshape(4, 3)
    assert torch.equal(span_pool(H, (2, 2)), H[2])
    const = torch.ones(5, 3) * 4.5
    assert torch.allclose(span_pool(const, (1, 4)), const[0])
    with pytest.raises(ValueError):
        span_pool(H, (0, 2))  # CLS row is not a valid span start
    with pytest.raises(ValueError):
        span_pool(H, (3, 2))


def test_middle_pool_example():
    # rows: 0 CLS, 1 ^, 2 fibula, 3 ^, 4 articulates, 5 with, 6 $, 7 tibia, 8 $
    H = torch.randn(9, 4)
    got = middle_pool(H, (2, 2), (7, 7))
    assert torch.allclose(got, (H[4] + H[5]) / 2, atol=1e-6)


def test_middle_pool_adjacent_is_zero():
    # ^ a ^ $ b $ -> rows 0..6, no tokens between closing ^ and opening $
    H = torch.randn(7, 4)
    assert torch.equal(middle_pool(H, (2, 2), (5, 5)), torch.zeros(4))


def test_middle_pool_tail_first():
    # $ t $ mid ^ h ^ : tail rows (2,2), head rows (6,6), middle row 4
    H = torch.randn(8, 4)
    assert torch.allclose(middle_pool(H, (6, 6), (2, 2)), H[4], atol=1e-6)


def test_middle_pool_oracle_randomized():
    rng = torch.Generator().manual_seed(5)
    pyrng = random.Random(5)
    for _ in range(200):
        d = pyrng.randrange(2, 10)
        gap = pyrng.randrange(0, 6)
        # CLS ^ h ^ [gap] $ t $
        n = 1 + 3 + gap + 3
        H = torch.randn(n, d, generator=rng)
        hs = (2, 2)
        ts = (n - 2, n - 2)
        got = middle_pool(H, hs, ts)
        if gap == 0:
            assert torch.equal(got, torch.zeros(d))
        else:
            rows = list(range(4, 4 + gap))
            expect = sum(H[i] for i in rows) / gap
            assert torch.allclose(got, expect, atol=1e-6)


# --- encoder + bag forward ---

def toy_instances():
    relmap = {"r0": "binds", "r1": "blocks"}
    insts = []
    for i in range(24):
        rel = f"r{i % 2}"
        verb = relmap[rel]
        insts.append(MarkedInstance(
            doc_id=f"d{i}", index=0,
            tokens=["^", f"h{i}", "^", verb, "$", f"t{i}", "$"],
            e1_start=0, e1_end=2, e2_start=4, e2_end=6,
            head_entity=f"h{i}", tail_entity=f"t{i}", label=rel))
    return insts


def toy_model(arch="C", seed=0, d=16):
    torch.manual_seed(seed)
    insts = toy_instances()
    vocab = Vocab.build(insts)
    labels = label_list(["r0", "r1"])
    cfg = EncoderConfig(hidden_dim=d, layers=1, heads=2, dropout=0.1)
    return AmilModel(cfg, vocab, arch, labels), insts


def test_encode_shapes_and_determinism():
    model, insts = toy_model()
    model.eval()
    with torch.no_grad():
        H1, lengths = model.encode_instances(insts[:3])
        H2, _ = model.encode_instances(insts[:3])
    assert H1.shape == (3, 8, 16)  # 7 tokens + CLS
    assert lengths == [7, 7, 7]
    assert torch.equal(H1, H2)


def test_encode_position_sensitivity():
    model, insts = toy_model()
    model.eval()
    a = insts[0]
    b = MarkedInstance(**{**a.__dict__, "tokens":
                          a.tokens[:3] + [a.tokens[5], a.tokens[4]] + a.tokens[5:][1:]})
    swapped = a.tokens[:]
    swapped[3], swapped[5] = swapped[5], swapped[3]
    b = MarkedInstance(**{**a.__dict__, "tokens": swapped})
    with torch.no_grad():
        Ha, _ = model.encode_instances([a])
        Hb, _ = model.encode_instances([b])
    assert not torch.allclose(Ha, Hb)


def test_unknown_tokens_map_to_unk():
    model, insts = toy_model()
    weird = MarkedInstance(**{**insts[0].__dict__,
                              "tokens": ["^", "zzz_never_seen", "^", "binds",
                                         "$", "t0", "$"]})
    ids = model.vocab.encode(weird.tokens)
    assert model.vocab.index["<unk>"] in ids


def test_forward_bag_probability_and_duplicates():
    model, insts = toy_model()
    model.eval()
    bag16 = Bag(("pair", "h0", "r0", "t0"), [insts[0]] * 16, 1)
    probs = forward_bag(bag16, model)
    assert probs.shape == (3,)  # r0, r1, NA
    assert abs(probs.sum().item() - 1.0) < 1e-6
    assert (probs >= 0).all()
    # bag of 16 duplicates equals a "bag" holding the single rep
    with torch.no_grad():
        single_rep = model.instance_reprs([insts[0]])
        logits = model.head(single_rep.mean(dim=0))
    expect = torch.softmax(logits, dim=-1)
    assert torch.allclose(probs, expect, atol=1e-6)


def test_forward_bag_permutation_invariance():
    model, insts = toy_model()
    model.eval()
    members = [insts[i % 8] for i in range(16)]
    bag = Bag(("pair", "h", "r0", "t"), members, 8)
    rev = Bag(("pair", "h", "r0", "t"), members[::-1], 8)
    assert torch.allclose(forward_bag(bag, model), forward_bag(rev, model),
                          atol=1e-6)


def test_predict_deterministic_and_finite():
    model, insts = toy_model()
    bags = [Bag(("pair", "x", "r0", "y"), [insts[i]] * 16, 1) for i in range(4)]
    p1 = predict(model, bags)
    p2 = predict(model, bags)
    assert torch.equal(p1, p2)
    assert torch.isfinite(p1).all()
    assert ((p1 >= 0) & (p1 <= 1)).all()


# --- loss ---

def test_nll_loss_values():
    certain = torch.tensor([1.0, 0.0])
    assert nll_loss(certain, 0).item() == 0.0
    uniform = torch.full((5,), 0.2)
    assert abs(nll_loss(uniform, 3).item() - math.log(5)) < 1e-6


def head_grad_check(seed, d=8, k=3, n_classes=4, tol=1e-4):
    torch.manual_seed(seed)
    head = ClassifierHead(k * d, n_classes, dropout=0.1).double()
    head.eval()
    agg = torch.randn(k * d, dtype=torch.double)
    gold = seed % n_classes

    def loss_value():
        return -torch.log_softmax(head(agg), dim=-1)[gold]

    loss = loss_value()
    loss.backward()
    eps = 1e-6
    for name, p in head.named_parameters():
        flat = p.detach().view(-1)
        grad = p.grad.view(-1)
        idx = torch.randperm(flat.numel())[:20]
        for i in idx.tolist():
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = loss_value().item()
                flat[i] = orig - eps
                down = loss_value().item()
                flat[i] = orig
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(grad[i].item()), 1e-8)
            assert abs(fd - grad[i].item()) / denom < tol, (name, i)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_head_gradients_match_finite_differences(seed):
    head_grad_check(seed)


# --- training ---

def train_toy(seed=0, max_epochs=6, patience=5, dev=True, arch="C"):
    insts = toy_instances()
    vocab = Vocab.build(insts)
    labels = label_list(["r0", "r1"])
    enc = EncoderConfig(hidden_dim=16, layers=1, heads=2, dropout=0.1)
    cfg = TrainConfig(learning_rate=5e-3, batch_size=4, max_epochs=max_epochs,
                      patience=patience, seed=seed)
    groups = {("pair", i.head_entity, i.label, i.tail_entity): [i]
              for i in insts[:16]}
    dev_bags = []
    if dev:
        dev_bags = [Bag(("pair", i.head_entity, i.label, i.tail_entity),
                        [i] * 16, 1) for i in insts[16:]]
    return train(groups, dev_bags, enc, cfg, labels, vocab, arch, bag_size=16)


def test_train_loss_decreases_on_separable_data():
    result = train_toy(max_epochs=5)
    losses = [e.train_loss for e in result.log]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_train_early_stops_on_frozen_dev():
    result = train_toy(max_epochs=50, patience=3, dev=False)
    # dev F1 frozen at 0: best is epoch 0, then 3 stale epochs
    assert len(result.log) == 4
    assert result.best_epoch == 0


def test_train_determinism():
    r1 = train_toy(seed=3, max_epochs=3)
    r2 = train_toy(seed=3, max_epochs=3)
    assert [e.train_loss for e in r1.log] == [e.train_loss for e in r2.log]
    assert [e.dev_f1 for e in r1.log] == [e.dev_f1 for e in r2.log]
    s1, s2 = r1.model.state_dict(), r2.model.state_dict()
    assert all(torch.equal(s1[k], s2[k]) for k in s1)


def test_checkpoint_roundtrip(tmp_path):
    result = train_toy(max_epochs=2)
    path = str(tmp_path / "model.json")
    save_checkpoint(result.model, path)
    loaded = load_checkpoint(path)
    insts = toy_instances()
    bag = Bag(("pair", "h0", "r0", "t0"), [insts[0]] * 16, 1)
    assert torch.allclose(forward_bag(bag, result.model),
                          forward_bag(bag, loaded), atol=1e-6)
    assert loaded.labels == result.model.labels
    assert loaded.arch == result.model.arch
