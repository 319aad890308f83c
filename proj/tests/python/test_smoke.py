import math

import numpy as np
import pytest

import mercat


def test_truncate_and_cosine():
    e = np.array([3.0, 4.0, 12.0])
    t = mercat.truncate(e, 2)
    assert t == pytest.approx([0.6, 0.8])
    assert mercat.cosine(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0
    with pytest.raises(mercat.RangeError):
        mercat.truncate(e, 4)


def test_encoder_round_trip(tmp_path):
    model = mercat.EncoderModel.random_init(full_dim=16, hash_space=4096, seed=3)
    q = model.encode("red running shoes", role="query")
    assert q.shape == (16,)
    assert np.linalg.norm(q) == pytest.approx(1.0)
    batch = model.encode_batch(["red running shoes", "blue kettle"], role="query", threads=2)
    assert np.array_equal(batch[0], q)
    path = tmp_path / "m.menc"
    model.save(path)
    loaded = mercat.EncoderModel.load(path)
    again = tmp_path / "again.menc"
    loaded.save(again)
    assert again.read_bytes() == path.read_bytes()
    assert mercat.EncoderModel.load(again) == loaded
    assert np.allclose(loaded.encode("red running shoes", role="query"), q, atol=1e-6)


def test_mnr_loss_uniform_logits():
    q = np.array([[1.0, 0.0], [1.0, 0.0]])
    loss, gq, gt = mercat.mnr_loss(q, q, scale=1.0)
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)
    assert gq.shape == (2, 2) and gt.shape == (2, 2)


def test_mrl_loss_weights():
    rng = np.random.default_rng(0)
    q, t = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    total, per_dim, _, _ = mercat.mrl_loss(q, t, [8, 4], [1.0, 0.0])
    assert total == pytest.approx(per_dim[8])
    with pytest.raises(mercat.ShapeError):
        mercat.mrl_loss(q, t, [16, 4])


def test_ranking_metrics():
    assert mercat.ndcg_at_k([3, 2, 0], 3) == pytest.approx(1.0)
    ideal = 7 + 3 / math.log2(3)
    got = (3 + 7 / math.log2(3)) / ideal
    assert mercat.ndcg_at_k([2, 3, 0], 3) == pytest.approx(got)
    p, r = mercat.precision_recall_at_k([1, 0, 1, 0], 2, 2)
    assert (p, r) == (0.5, 0.5)
    assert mercat.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert mercat.spearman([1, 2, 3], [1, 10, 100]) == pytest.approx(1.0)
    with pytest.raises(mercat.CorrelationError):
        mercat.pearson([1, 1, 1], [1, 2, 3])


def test_lexical_and_dense_search():
    items = [("a", "red shoe"), ("b", "blue shoe"), ("c", "green kettle"), ("d", "steel pan")]
    lex = mercat.LexicalIndex.build(items)
    assert len(lex) == 4
    hits = lex.search("red shoe", 10)
    assert [h[0] for h in hits] == ["a", "b"]
    assert lex.search("teapot", 10) == []

    dense = mercat.DenseIndex(2)
    dense.upsert("a", np.array([1.0, 0.0]))
    dense.upsert("b", np.array([0.0, 1.0]))
    dense.upsert("c", np.array([0.8, 0.6]))
    assert [h[0] for h in dense.search(np.array([1.0, 0.1]), 2)] == ["a", "c"]

    candidates, diag = mercat.hybrid_search(lex, dense, "teapot", np.array([0.0, 1.0]), tau=0.9)
    assert diag["zero_hit"] and diag["recovered"]
    assert [(c["item_id"], c["source"]) for c in candidates] == [("b", "dense")]


def test_pca_matches_numpy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 6)) * np.array([5.0, 3.0, 1.0, 0.5, 0.2, 0.1])
    pca = mercat.pca_fit(x, 3)
    ref = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1][:3]
    assert np.allclose(pca.explained_variance, ref, rtol=1e-9)
    assert pca.transform(x[0]).shape == (3,)


def test_gradient_check_and_training():
    model = mercat.EncoderModel.random_init(full_dim=8, hash_space=512, seed=5)
    pairs = [(f"query {w}", f"title {w} item") for w in ["alpha", "beta", "gamma", "delta", "omega", "sigma"]]
    report = mercat.gradient_check(model, pairs, [8, 4], samples=16)
    assert report["passed"]
    frozen, _ = mercat.train(pairs, model, learning_rate=0.0, batch_size=3, dims=[8, 4])
    assert frozen == model
    with pytest.raises(mercat.ConfigError):
        mercat.train(pairs, model, batch_size=0, dims=[8, 4])


def test_datagen(tmp_path):
    spec = {"seed": 1, "n_items": 200, "n_queries": 20, "train_sessions": 200, "pool_size": 20,
            "n_categories": 16, "n_brands": 10}
    counts = mercat.datagen(spec, tmp_path / "data", sts_pairs=50)
    assert counts["items"] == 200 and counts["eval_queries"] == 20
    for name in ["items.jsonl", "pairs.jsonl", "eval.jsonl", "sts.tsv", "truth.json"]:
        assert (tmp_path / "data" / name).exists()
