"""End-to-end smoke tests for the python module."""

import json
import math

import pytest

import mmt


def test_tokenize():
    assert mmt.tokenize("Oh My God !!!!!") == ["oh", "my", "god", "!", "!", "!", "!", "!"]
    assert mmt.tokenize("") == []
    assert mmt.tokenize("So am I.") == ["so", "am", "i", "."]


def test_positional_embedding():
    pe0 = mmt.positional_embedding(0, 8)
    assert pe0 == pytest.approx([0.0, 1.0] * 4)
    pe1 = mmt.positional_embedding(1, 4)
    assert pe1[0] == pytest.approx(math.sin(1.0))
    assert pe1[1] == pytest.approx(math.cos(1.0))
    with pytest.raises(mmt.ConfigError):
        mmt.positional_embedding(0, 5)


def test_metrics_against_python_reference():
    ranks = [1, 2, 4, 10, 1]
    assert mmt.recall_at_k(ranks, 1) == pytest.approx(sum(r <= 1 for r in ranks) / len(ranks))
    assert mmt.recall_at_k(ranks, 5) == pytest.approx(sum(r <= 5 for r in ranks) / len(ranks))
    assert mmt.mean_rank(ranks) == pytest.approx(sum(ranks) / len(ranks))
    assert mmt.mrr(ranks) == pytest.approx(sum(1.0 / r for r in ranks) / len(ranks))


def test_margin_and_cosine():
    assert mmt.margin_loss(0.2, 0.4, 0.1) == pytest.approx(0.3)
    assert mmt.margin_loss(1.0, -1.0, 0.1) == 0.0
    assert mmt.cosine([1, 0], [1, 0]) == pytest.approx(1.0)
    assert mmt.cosine([1, 0], [0, 1]) == pytest.approx(0.0)
    assert mmt.cosine([1, 2], [2, 4]) == pytest.approx(1.0)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    mmt.synth(
        {
            "seed": 7,
            "n_clips": 12,
            "out_dir": str(out),
            "vision_dim": 16,
            "audio_dim": 8,
            "n_comments": 2,
        }
    )
    return out


def test_synth_writes_loadable_corpus(corpus_dir):
    train = corpus_dir / "train.jsonl"
    assert train.exists()
    records = [json.loads(line) for line in train.read_text().splitlines()]
    assert len(records) == 12
    first = records[0]
    for key in ("clip_id", "timestamp_s", "surrounding", "vision", "audio", "candidate",
                "is_ground_truth"):
        assert key in first
    assert (corpus_dir / "vocab.txt").exists()
    assert (corpus_dir / "pool.txt").exists()


def test_train_eval_rank_roundtrip(corpus_dir, tmp_path):
    run_dir = tmp_path / "run"
    options = {
        "seed": 5,
        "data_dir": str(corpus_dir),
        "out_dir": str(run_dir),
        "dim": 16,
        "heads": 2,
        "blocks": 1,
        "ffn_dim": 32,
        "vision_dim": 16,
        "audio_dim": 8,
        "batch_size": 8,
        "lr": 1e-3,
        "max_epochs": 2,
        "candidates": 8,
    }
    reports = mmt.train(options)
    assert [r["epoch"] for r in reports] == [1, 2]
    assert all(r["mean_loss"] >= 0.0 for r in reports)

    # Determinism: the same options reproduce identical epoch reports.
    rerun_dir = tmp_path / "rerun"
    rerun = mmt.train({**options, "out_dir": str(rerun_dir)})
    assert rerun == reports

    checkpoint = run_dir / "best.ckpt"
    assert checkpoint.exists()
    metrics = mmt.evaluate(str(checkpoint), str(corpus_dir), split="test", seed=3, candidates=8)
    assert 0.0 <= metrics["recall_at_1"] <= metrics["recall_at_5"] <= metrics["recall_at_10"] <= 1.0
    assert 1.0 <= metrics["mean_rank"] <= 8.0
    assert 0.0 < metrics["mrr"] <= 1.0

    again = mmt.evaluate(str(checkpoint), str(corpus_dir), split="test", seed=3, candidates=8)
    assert again == metrics

    # Rank a handful of candidates against the first test clip.
    test_lines = (corpus_dir / "test.jsonl").read_text().splitlines()
    clip_file = tmp_path / "clip.jsonl"
    clip_file.write_text(test_lines[0] + "\n")
    gt = json.loads(test_lines[0])["candidate"]
    pool = (corpus_dir / "pool.txt").read_text().splitlines()[:5]
    ranked = mmt.rank_candidates(str(checkpoint), str(corpus_dir), str(clip_file), pool + [gt])
    assert len(ranked) == 6
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)
    assert all(-1.0 - 1e-9 <= s <= 1.0 + 1e-9 for s in scores)


def test_grad_check_subsampled():
    result = mmt.grad_check({"gradcheck_stride": 50, "blocks": 1, "audio_dim": 8})
    assert result["pass"]
    assert result["max_rel_error"] <= 1e-4
    assert "embeddings" in result["groups"]
    assert "attention" in result["groups"]
