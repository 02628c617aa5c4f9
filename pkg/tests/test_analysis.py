import json

import numpy as np
import pytest
import torch

from errata.analysis import (N_ENERGY_BINS, LinearProbe, ProbeTask, clip_energy, collect_features,
                             dump_attention, energy_bins, probe_report, train_probe)
from errata.audio import SEGMENT_SAMPLES, synthesize
from errata.checkpoint import dumps
from errata.model import ErrorDetectionModel, ModelConfig
from errata.notes import NoteEvent, NoteTrack


@pytest.fixture(scope="module")
def clips():
    g = torch.Generator().manual_seed(0)
    return [((torch.randn(512, 256, generator=g) - 6 + k).numpy(),
             (torch.randn(512, 256, generator=g) - 6 - k).numpy()) for k in range(4)]


def test_task_classes():
    assert ProbeTask("locality", "ref", 1).num_classes == 512
    assert ProbeTask("globality", "prac", 0).num_classes == 12
    assert ProbeTask("cross_stream", "ref", 2).num_classes == 12
    with pytest.raises(ValueError):
        ProbeTask("texture", "ref", 0)


class TestCollect:
    def test_counts_and_labels(self, toy_model, clips):
        pf = collect_features(toy_model, clips, 1, "ref")
        assert pf.features.shape == (4 * 512, 64)
        for c in range(4):
            sel = pf.clip == c
            assert sorted(pf.locality[sel]) == list(range(512))
            assert len(set(pf.globality[sel])) == 1 and len(set(pf.cross_stream[sel])) == 1

    def test_cross_stream_is_other_globality(self, toy_model, clips):
        r = collect_features(toy_model, clips, 0, "ref")
        p = collect_features(toy_model, clips, 0, "prac")
        assert np.array_equal(r.cross_stream, p.globality)
        assert np.array_equal(p.cross_stream, r.globality)

    def test_layer_range(self, toy_model, clips):
        with pytest.raises(ValueError):
            collect_features(toy_model, clips, 3, "ref")
        with pytest.raises(ValueError):
            collect_features(toy_model, clips, 0, "left")

    def test_model_unchanged(self, clips):
        m = ErrorDetectionModel(ModelConfig(seed=4))
        m.train()
        before = dumps(m)
        probe_report(m, clips, 1, epochs=2)
        assert dumps(m) == before and m.training


class TestEnergy:
    def test_equal_width_bins(self):
        e = np.linspace(0, 12, 25)
        b = energy_bins(e)
        assert b.min() == 0 and b.max() == N_ENERGY_BINS - 1
        assert list(b[:3]) == [0, 0, 1]
        assert not energy_bins(np.ones(5)).any()

    def test_clip_energy_uses_loudest_patch(self):
        p = np.full((512, 256), -10.0)
        p[37] = 1.0
        assert clip_energy(p) == pytest.approx(1.0)


class TestProbe:
    @staticmethod
    def separable(seed, n=3000, d=32, sigma=0.2):
        """Noisy orthonormal prototypes; labels are the argmax of the prototype map."""
        rng = np.random.default_rng(seed)
        P = np.linalg.qr(rng.normal(size=(d, 12)))[0].T
        X = P[rng.integers(0, 12, n)] + sigma * rng.normal(size=(n, d))
        return X, np.argmax(X @ P.T, axis=1)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_separable(self, seed):
        X, y = self.separable(seed)
        assert len(np.unique(y)) == 12
        _, acc = train_probe(X, y)
        assert acc >= 0.99

    def test_marginless_argmax_beats_chance(self):
        # isotropic features have no class margin; 25 steps still learn the map
        rng = np.random.default_rng(0)
        X = rng.normal(size=(3000, 32))
        y = np.argmax(X @ rng.normal(size=(32, 12)), axis=1)
        assert train_probe(X, y)[1] > 0.5

    def test_shuffled_labels_near_chance(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(3000, 32))
        y = rng.permutation(np.arange(3000) % 12)
        _, acc = train_probe(X, y)
        assert acc <= 1 / 12 + 0.07

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        X, y = rng.normal(size=(200, 8)), rng.integers(0, 3, 200)
        assert train_probe(X, y)[1] == train_probe(X, y)[1]

    def test_single_class(self):
        with pytest.raises(ValueError):
            train_probe(np.zeros((10, 2)), np.zeros(10))
        with pytest.raises(ValueError):
            LinearProbe().fit(np.zeros((10, 2)), np.zeros(10))

    def test_sklearn_contract(self):
        from sklearn.base import clone
        p = LinearProbe(epochs=3, lr=0.5)
        assert clone(p).get_params() == {"epochs": 3, "lr": 0.5, "random_state": 0}
        X = np.random.default_rng(0).normal(size=(40, 3))
        y = np.where(X[:, 0] > 0, "a", "b")
        assert set(p.fit(X, y).predict(X)) <= {"a", "b"}
        assert 0 <= p.score(X, y) <= 1

    def test_report_layout(self, toy_model, clips):
        rep = probe_report(toy_model, clips, 1, variant="ladder", epochs=2)
        row = rep["ladder"]
        assert row["layer"] == 1
        for kind in ("locality", "globality", "cross_stream"):
            for stream in ("ref", "prac"):
                v = row[kind][stream]
                assert v is None or 0 <= v <= 1


@pytest.fixture(scope="module")
def waves():
    score = NoteTrack((NoteEvent(0.2, 0.8, 60), NoteEvent(1.0, 1.6, 67)))
    prac = NoteTrack((NoteEvent(0.25, 0.8, 60), NoteEvent(1.1, 1.7, 69)))
    n = SEGMENT_SAMPLES / 16000
    return synthesize(score, n), synthesize(prac, n)


class TestAttentionDump:
    def test_ladder_counts_and_rows(self, toy_model, waves, tmp_path):
        idx = dump_attention(toy_model, *waves, tmp_path)["base"]
        assert len(idx) == 2 * toy_model.cfg.enc_layers
        assert {e["direction"] for e in idx} == {"ref->prac", "prac->ref"}
        for e in idx:
            grid = np.loadtxt(tmp_path / "base" / e["file"], delimiter=",")
            assert grid.shape == (16, 16)
            assert np.allclose(grid.sum(axis=1), 1, atol=1e-5)
        meta = json.loads((tmp_path / "base" / "index.json").read_text())
        assert meta == idx

    def test_zero_shift_is_identical(self, toy_model, waves, tmp_path):
        res = dump_attention(toy_model, *waves, tmp_path, shift=0.0)
        for a, b in zip(res["base"], res["shifted"]):
            assert (tmp_path / "base" / a["file"]).read_bytes() == \
                   (tmp_path / "shifted" / b["file"]).read_bytes()

    def test_shift_changes_maps_and_is_deterministic(self, toy_model, waves, tmp_path):
        res = dump_attention(toy_model, *waves, tmp_path / "a", shift=0.5)
        dump_attention(toy_model, *waves, tmp_path / "b", shift=0.5)
        for e in res["shifted"]:
            assert (tmp_path / "a" / "shifted" / e["file"]).read_bytes() == \
                   (tmp_path / "b" / "shifted" / e["file"]).read_bytes()
            assert e["score_shift_s"] == 0.5
        assert any((tmp_path / "a" / "base" / e["file"]).read_bytes() !=
                   (tmp_path / "a" / "shifted" / e["file"]).read_bytes() for e in res["base"])

    @pytest.mark.parametrize("fusion, joint", [("late", 1), ("early", 0)])
    def test_joint_variants_dump_quadrants(self, fusion, joint, waves, tmp_path):
        m = ErrorDetectionModel(ModelConfig(fusion=fusion, joint_layers=joint))
        idx = dump_attention(m, *waves, tmp_path)["base"]
        n_joint = joint if fusion == "late" else m.cfg.enc_layers
        assert len(idx) == 2 * n_joint

    def test_wrong_length(self, toy_model, tmp_path):
        with pytest.raises(ValueError):
            dump_attention(toy_model, np.zeros(100), np.zeros(100), tmp_path)
