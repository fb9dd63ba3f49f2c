"""Text/point encoders and the condition bundle."""
import numpy as np
import pytest

from graspkit.encoders import (ConditionEncoder, PointEncoder, TextEncoder,
                               Vocabulary, tokenize)
from graspkit.engine import Tensor, grad_check


class TestVocabulary:
    def test_deterministic_order(self):
        texts = ["Grip the handle", "wrap your hand", "Press the pump"]
        v1 = Vocabulary.from_corpus(texts)
        v2 = Vocabulary.from_corpus(list(reversed(texts)))
        assert v1.id_to_token == v2.id_to_token

    def test_unknown_maps_to_zero(self):
        v = Vocabulary.from_corpus(["grip the mug"])
        assert v.encode("zebra") == [0]

    def test_json_roundtrip(self, tmp_path):
        v = Vocabulary.from_corpus(["grip the mug", "press the pump"])
        p = str(tmp_path / "vocab.json")
        v.save(p)
        v2 = Vocabulary.load(p)
        assert v.id_to_token == v2.id_to_token

    def test_tokenize_lowercase_punct(self):
        assert tokenize("Grip the Handle, now!") == ["grip", "the", "handle",
                                                    "now"]

    def test_empty_instruction_rejected(self):
        v = Vocabulary.from_corpus(["grip the mug"])
        with pytest.raises(ValueError):
            v.encode("  ,, !")


class TestTextEncoder:
    def test_determinism(self, rng):
        v = Vocabulary.from_corpus(["grip the mug"])
        enc = TextEncoder(len(v), 16, rng)
        ids = v.encode("grip the mug")
        assert np.array_equal(enc(ids).data, enc(ids).data)

    def test_unknown_tokens_forced_path(self, rng):
        v = Vocabulary.from_corpus(["grip the mug"])
        enc = TextEncoder(len(v), 16, rng)
        a = enc(v.encode("zebra")).data
        b = enc(v.encode("qqq www")).data
        assert np.array_equal(a, b)
        assert np.allclose(a, enc.mlp(enc.embed[0]).data)


class TestPointEncoder:
    def test_permutation_invariance(self, rng):
        enc = PointEncoder(3, 32, rng)
        cloud = rng.standard_normal((40, 3))
        a = enc(Tensor(cloud)).data
        b = enc(Tensor(cloud[rng.permutation(40)])).data
        assert np.array_equal(a, b)

    def test_repeated_point_collapses(self, rng):
        enc = PointEncoder(3, 32, rng)
        p = rng.standard_normal(3)
        one = enc(Tensor(p[None, :])).data
        many = enc(Tensor(np.tile(p, (17, 1)))).data
        assert np.allclose(one, many, atol=1e-12)

    def test_empty_cloud_rejected(self, rng):
        enc = PointEncoder(3, 8, rng)
        with pytest.raises(ValueError):
            enc(Tensor(np.zeros((0, 3))))

    def test_gradients_match_fd(self, rng):
        enc = PointEncoder(3, 8, rng, hidden=8)
        cloud = Tensor(rng.standard_normal((5, 3)))
        err = grad_check(lambda: (enc(cloud) * enc(cloud)).sum(), enc.params())
        assert err <= 1e-4


class TestConditionEncoder:
    def _enc(self, rng, dim=16):
        v = Vocabulary.from_corpus(["grip the mug", "wrap your hand around"])
        return ConditionEncoder(v, dim, rng), v

    def test_bundle_dims_equal(self, rng):
        enc, _ = self._enc(rng)
        cloud = rng.standard_normal((30, 3))
        aff = ConditionEncoder.afford_input(cloud, np.zeros(30))
        b = enc("grip the mug", cloud, aff)
        assert b.f_text.data.shape == b.f_object.data.shape \
            == b.f_afford.data.shape == (16,)
        assert b.concat().data.shape == (3 * 16,)
        assert b.dim == 16

    def test_afford_input_threshold(self, rng):
        cloud = rng.standard_normal((30, 3))
        probs = np.zeros(30)
        probs[:10] = 0.9
        aff = ConditionEncoder.afford_input(cloud, probs)
        assert aff.shape == (10, 4)
        assert np.allclose(aff[:, 3], 0.9)
        assert np.array_equal(aff[:, :3], cloud[:10])

    def test_afford_input_fallback_full_cloud(self, rng):
        # fewer than 8 confident points: whole cloud with zero prob channel
        cloud = rng.standard_normal((30, 3))
        probs = np.zeros(30)
        probs[:3] = 0.9
        aff = ConditionEncoder.afford_input(cloud, probs)
        assert aff.shape == (30, 4)
        assert np.allclose(aff[:, 3], 0.0)

    def test_independent_encoder_weights(self, rng):
        enc, _ = self._enc(rng)
        geo = set(id(p) for p in enc.obj_points.params())
        aff = set(id(p) for p in enc.afford_points.params())
        assert not geo & aff

    def test_determinism(self, rng):
        enc, _ = self._enc(rng)
        cloud = rng.standard_normal((25, 3))
        aff = ConditionEncoder.afford_input(cloud, np.zeros(25))
        a = enc("wrap your hand around", cloud, aff).concat().data
        b = enc("wrap your hand around", cloud, aff).concat().data
        assert np.array_equal(a, b)
