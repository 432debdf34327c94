import json
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

import oracles
from crl.active import AlConfig, AlState, kcenter_greedy, run_active_loop, select_queries, stage_seed, \
    write_queries, write_stage_log
from crl.data import BlobSpec, gen_blobs
from crl.nn import MlpModel
from crl.ranking import neg_entropy
from crl.train import TrainConfig

TRAIN = TrainConfig(lam=0.0, batch_size=16, epochs=3, milestones=[], hidden=[8], seed=1)


@pytest.fixture(scope="module")
def pool():
    return gen_blobs(BlobSpec(4, 2, 60, seed=11)), gen_blobs(BlobSpec(4, 2, 20, seed=12), "test")


def test_kcenter_hand_trace():
    assert kcenter_greedy([[0.0, 0.0]], [[1.0, 0.0], [5.0, 0.0], [9.0, 0.0]], 2) == [2, 1]


def test_kcenter_all_candidates():
    rng = np.random.default_rng(0)
    cand = rng.normal(size=(7, 3))
    picks = kcenter_greedy(rng.normal(size=(2, 3)), cand, 7)
    assert sorted(picks) == list(range(7))


def test_kcenter_matches_exhaustive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 13))
        lab = rng.normal(size=(int(rng.integers(1, 4)), 2))
        cand = rng.integers(-3, 4, (n, 2)).astype(float) if rng.random() < 0.3 else rng.normal(size=(n, 2))
        k = int(rng.integers(1, n + 1))
        assert kcenter_greedy(lab, cand, k) == oracles.kcenter_exhaustive(lab.tolist(), cand.tolist(), k)


def test_kcenter_errors():
    with pytest.raises(ValueError):
        kcenter_greedy(np.zeros((0, 2)), [[1.0, 1.0]], 1)
    with pytest.raises(ValueError):
        kcenter_greedy([[0.0, 0.0]], [[1.0, 1.0]], 2)


def test_stage_seed_is_pure():
    assert stage_seed(3, 2) == stage_seed(3, 2)
    assert len({stage_seed(3, s) for s in range(1, 11)}) == 10
    assert stage_seed(3, 1) != stage_seed(4, 1)


def _two_class_model():
    # logits equal the (2-d) input, so each row's probs are a softmax of the input
    return MlpModel([2, 2], [np.eye(2)], [np.zeros(2)])


def test_entropy_picks_uniform_first():
    from crl.data import Dataset
    pool = Dataset(np.array([[0.0, 0.0], [np.log(9.0), 0.0]]), np.array([0, 0]), num_classes=2)
    state = AlState([], [0, 1])
    cfg = AlConfig(initial_size=1, per_stage=1, stages=2, pool_subset=2, strategy="entropy")
    assert select_queries(_two_class_model(), state, cfg, pool, 1) == [0]


def test_least_confidence_agrees_with_entropy_for_two_classes():
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = rng.dirichlet([1.0, 1.0], size=50)
        rho = spearmanr(p.max(axis=1), neg_entropy(p)).statistic
        assert rho == pytest.approx(1.0, abs=1e-12)


def test_random_strategy_is_reproducible(pool):
    state = AlState([0, 1], list(range(2, 240)))
    cfg = AlConfig(initial_size=2, per_stage=10, stages=2, pool_subset=50, strategy="random", seed=4)
    a = select_queries(None, state, cfg, pool[0], 1)
    assert a == select_queries(None, state, cfg, pool[0], 1)
    assert len(set(a)) == 10 and not set(a) & {0, 1}


def test_single_stage(pool):
    cfg = AlConfig(initial_size=20, per_stage=10, stages=1, pool_subset=30, seed=0)
    st = run_active_loop(*pool, TRAIN, cfg)
    assert len(st.accuracy_log) == 1 and len(st.labeled_ids) == 20 and st.queried == []


@pytest.mark.parametrize("strategy", ["random", "entropy", "least_confidence", "coreset"])
def test_loop_bookkeeping(pool, strategy):
    cfg = AlConfig(initial_size=20, per_stage=10, stages=4, pool_subset=30, strategy=strategy, seed=0)
    st = run_active_loop(*pool, TRAIN, cfg)
    assert len(st.accuracy_log) == 4
    assert len(st.labeled_ids) == 20 + 3 * 10
    assert not set(st.labeled_ids) & set(st.unlabeled_ids)
    assert set(st.labeled_ids) | set(st.unlabeled_ids) == set(range(len(pool[0])))
    flat = [i for q in st.queried for i in q]
    assert len(flat) == len(set(flat))


def test_strategies_share_stage_one_model(pool):
    base = AlConfig(initial_size=20, per_stage=10, stages=2, pool_subset=30, seed=5)
    models = [run_active_loop(*pool, TRAIN, replace(base, strategy=s), keep_models=True).models[0]
              for s in ("random", "least_confidence", "coreset")]
    for m in models[1:]:
        assert all(np.array_equal(p, q) for p, q in zip(m.params(), models[0].params()))


def test_schedule_must_fit_dataset(pool):
    with pytest.raises(ValueError):
        run_active_loop(*pool, TRAIN, AlConfig(initial_size=200, per_stage=50, stages=3, pool_subset=60))
    with pytest.raises(ValueError):
        AlConfig(per_stage=10, pool_subset=5)


def test_stage_log_and_queries(tmp_path, pool):
    cfg = AlConfig(initial_size=20, per_stage=10, stages=3, pool_subset=30, strategy="random", seed=2)
    st = run_active_loop(*pool, TRAIN, cfg)
    write_stage_log(tmp_path / "log.csv", st, cfg)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "stage,labeled_count,test_accuracy,strategy,seed"
    assert [line.split(",")[1] for line in lines[1:]] == ["20", "30", "40"]
    write_queries(tmp_path / "q.json", st)
    assert json.loads((tmp_path / "q.json").read_text()) == st.queried
