from dataclasses import replace

import numpy as np
import pytest

from crl.data import BlobSpec, gen_blobs
from crl.train import TrainConfig, load_checkpoint, save_checkpoint, train_model

SMALL = TrainConfig(lam=1.0, batch_size=16, epochs=4, milestones=[2, 3], hidden=[8, 8], seed=3)


@pytest.fixture(scope="module")
def blobs():
    return (gen_blobs(BlobSpec(3, 2, 30, overlap_noise=0.1, seed=1)),
            gen_blobs(BlobSpec(3, 2, 20, seed=2), "test"))


def same_params(a, b):
    return all(np.array_equal(p, q) for p, q in zip(a.model.params(), b.model.params()))


@pytest.mark.parametrize("kind", ["max_prob", "margin", "neg_entropy"])
def test_training_is_deterministic(blobs, kind):
    cfg = replace(SMALL, kappa_kind=kind)
    a, b = train_model(cfg, *blobs), train_model(cfg, *blobs)
    assert same_params(a, b)
    assert a.epoch_log == b.epoch_log


@pytest.mark.parametrize("kind", ["max_prob", "margin", "neg_entropy"])
def test_zero_lambda_equals_disabled_ranking_path(blobs, kind):
    zero = train_model(replace(SMALL, lam=0.0, kappa_kind=kind), *blobs)
    off = train_model(replace(SMALL, lam=0.0, kappa_kind=kind, disable_crl=True), *blobs)
    assert same_params(zero, off)


def test_ranking_term_changes_training(blobs):
    assert not same_params(train_model(SMALL, *blobs), train_model(replace(SMALL, lam=0.0), *blobs))


def test_history_counts_one_exam_per_epoch(blobs):
    res = train_model(SMALL, blobs[0])
    assert np.all(res.history.exam_counts == SMALL.epochs)
    assert np.all(res.history.correct_counts <= res.history.exam_counts)


def test_epoch_log_shape_and_schedule(blobs):
    res = train_model(SMALL, *blobs)
    assert [r["epoch"] for r in res.epoch_log] == [1, 2, 3, 4]
    assert [r["lr"] for r in res.epoch_log] == pytest.approx([0.1, 0.1, 0.01, 0.001], rel=1e-15)
    for key in ("ce", "crl", "train_acc", "test_acc", "test_aurc", "test_eaurc", "test_nll"):
        assert key in res.epoch_log[0]


def test_short_final_batch_is_trained_without_pairing(blobs):
    # 90 samples with b=89 leaves a final batch of one
    res = train_model(replace(SMALL, batch_size=89, epochs=2), blobs[0])
    assert np.all(res.history.exam_counts == 2)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=1.0, batch_size=1)
    TrainConfig(lam=0.0, batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.5)
    assert TrainConfig(kappa_kind="MaxProb").kappa_kind == "max_prob"


def test_checkpoint_roundtrip(tmp_path, blobs):
    res = train_model(SMALL, *blobs)
    save_checkpoint(tmp_path / "m.json", res.model, SMALL, {"note": "x"})
    model, cfg, doc = load_checkpoint(tmp_path / "m.json")
    assert all(np.array_equal(p, q) for p, q in zip(model.params(), res.model.params()))
    assert cfg == SMALL and doc["note"] == "x"
    save_checkpoint(tmp_path / "n.json", model, cfg, {"note": "x"})
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "n.json").read_bytes()
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.json")
