import numpy as np
import pytest

from auxcl import replay, rng
from auxcl.alignment import EncoderTuner
from auxcl.errors import DuplicateTask, EmptyMemory
from auxcl.grounding import AuxiliaryPool


def make_pool(sample_ids, labels, task_id=1):
    return AuxiliaryPool(
        task_id=task_id,
        retrieved={0: [(int(l), 1.0) for l in set(labels)]},
        samples=tuple(zip([int(s) for s in sample_ids], [int(l) for l in labels])),
        k=3,
        images_per_class=10,
    )


def identity_tuner(d):
    return EncoderTuner.init(d, 2, seed=0).params()


class TestScoreAndSelect:
    def test_feature_on_prototype(self, rng64):
        d = 8
        protos = rng64.standard_normal((4, d)).astype(np.float32)
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        feats = np.zeros((1, d), dtype=np.float32)
        feats[0] = protos[3]
        pool = make_pool([0], [0])
        entries = replay.score_and_select(
            pool, identity_tuner(d), feats, protos, [10, 11, 12, 13], k=5)
        assert len(entries) == 1
        assert entries[0].class_id == 13
        assert entries[0].score == pytest.approx(1.0, abs=1e-6)

    def test_class_with_no_assignment_is_absent(self, rng64):
        d = 8
        protos = np.eye(2, d, dtype=np.float32)
        feats = np.tile(protos[0], (3, 1))
        pool = make_pool([0, 1, 2], [0, 0, 0])
        entries = replay.score_and_select(
            pool, identity_tuner(d), feats, protos, [0, 1], k=2)
        assert {e.class_id for e in entries} == {0}
        assert len(entries) == 2

    def test_matches_per_class_sort_oracle(self, rng64):
        d, C = 8, 5
        protos = rng64.standard_normal((C, d)).astype(np.float32)
        feats = rng64.standard_normal((100, d)).astype(np.float32)
        pool = make_pool(range(100), rng64.integers(0, 3, size=100))
        k = 10
        entries = replay.score_and_select(
            pool, identity_tuner(d), feats, protos, list(range(C)), k=k)
        # oracle: normalize, assign argmax (low id on ties), sort per class
        protos_n = protos / np.linalg.norm(protos, axis=1, keepdims=True)
        feats_n = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        sims = feats_n @ protos_n.T
        assigned = np.argmax(sims, axis=1)
        scores = sims[np.arange(100), assigned]
        expect = []
        for c in range(C):
            members = [i for i in range(100) if assigned[i] == c]
            best = sorted(members, key=lambda i: (-scores[i], i))[:k]
            expect += [(i, c) for i in best]
        got = sorted((e.sample_id, e.class_id) for e in entries)
        assert got == sorted(expect)

    def test_k_zero_gives_nothing(self, rng64):
        d = 4
        pool = make_pool([0, 1], [0, 0])
        entries = replay.score_and_select(
            pool, identity_tuner(d), rng64.standard_normal((2, d)).astype(np.float32),
            np.eye(1, d, dtype=np.float32), [0], k=0)
        assert entries == []


class TestMerge:
    def entry(self, sid, cid, task):
        return replay.ReplayEntry(sample_id=sid, class_id=cid, score=0.5, task_id=task)

    def test_disjoint_contributions_add(self):
        mem = replay.ReplayMemory(per_class_cap=2)
        replay.merge(mem, [self.entry(0, 0, 1), self.entry(1, 0, 1)], 1)
        replay.merge(mem, [self.entry(5, 3, 2)], 2)
        assert len(mem) == 3
        assert mem.per_class_counts() == {0: 2, 3: 1}

    def test_duplicate_task_rejected(self):
        mem = replay.ReplayMemory(per_class_cap=2)
        replay.merge(mem, [self.entry(0, 0, 1)], 1)
        with pytest.raises(DuplicateTask):
            replay.merge(mem, [self.entry(1, 0, 1)], 1)

    def test_privacy_check_rejects_foreign_ids(self):
        mem = replay.ReplayMemory(per_class_cap=2)
        with pytest.raises(ValueError, match="non-world"):
            replay.merge(mem, [self.entry(99, 0, 1)], 1, world_sample_ids={0, 1, 2})

    def test_cap_enforced_within_contribution(self):
        mem = replay.ReplayMemory(per_class_cap=1)
        with pytest.raises(ValueError, match="cap"):
            replay.merge(mem, [self.entry(0, 0, 1), self.entry(1, 0, 1)], 1)


class TestSampling:
    def small_memory(self, n=3):
        mem = replay.ReplayMemory(per_class_cap=max(4, n // 4))
        entries = [replay.ReplayEntry(sample_id=i, class_id=i % 8, score=0.5, task_id=1)
                   for i in range(n)]
        replay.merge(mem, entries, 1)
        return mem

    def test_batch_clamped_to_memory(self):
        mem = self.small_memory(3)
        batches = replay.sample_replay_batch(mem, 5, seed=0)
        assert len(batches[0][0]) == 3

    def test_same_seed_same_batches(self):
        mem = self.small_memory(20)
        a = replay.sample_replay_batch(mem, 6, seed=9, n_batches=5)
        b = replay.sample_replay_batch(mem, 6, seed=9, n_batches=5)
        for (ia, la), (ib, lb) in zip(a, b):
            np.testing.assert_array_equal(ia, ib)
            np.testing.assert_array_equal(la, lb)

    def test_epoch_covers_every_entry_once(self):
        mem = self.small_memory(24)
        batcher = replay.ReplayBatcher(mem, 6, seed=3)
        seen = []
        for _ in range(4):  # one full epoch = 24 / 6 batches
            ids, _ = batcher.next()
            seen += list(ids)
        assert sorted(seen) == list(range(24))

    def test_empty_memory_raises(self):
        mem = replay.ReplayMemory(per_class_cap=5)
        with pytest.raises(EmptyMemory):
            replay.sample_replay_batch(mem, 4, seed=0)


class TestSerialization:
    def test_json_roundtrip(self, tmp_path):
        mem = replay.ReplayMemory(per_class_cap=3)
        replay.merge(mem, [replay.ReplayEntry(4, 1, 0.75, 1)], 1)
        path = tmp_path / "mem.json"
        mem.save(path)
        import json

        doc = json.loads(path.read_text())
        assert doc["entries"] == [
            {"sample_id": 4, "class_id": 1, "score": 0.75, "task_id": 1}]
