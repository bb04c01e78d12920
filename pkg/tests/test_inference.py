import numpy as np
import pytest

from deepbow import model as M
from deepbow.inference import DeepBoW, ModelVocabMismatch, Truncation
from deepbow.scoring import Q_SYNONYM, Q_WEIGHT
from deepbow.vocab import Vocabulary


class TestTruncation:
    def test_dict_round_trip(self):
        for t in (Truncation("topk", k=5), Truncation("threshold", tau=0.3), Truncation("none")):
            assert Truncation.from_dict(t.to_dict()) == t

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            Truncation("median")


class TestDeepBoW:
    def test_representations(self, tiny_deepbow):
        tw = tiny_deepbow.encode("red dress red", "query", Q_WEIGHT)
        assert tw.total() == pytest.approx(1.0, abs=1e-6)
        se = tiny_deepbow.encode("red dress", "query", Q_SYNONYM)
        assert len(se) == tiny_deepbow.vocab.size  # untruncated dense form
        top = tiny_deepbow.encode("red dress", "product", Q_SYNONYM, Truncation("topk", k=7))
        assert len(top) == 7

    def test_batch_equals_single(self, tiny_deepbow):
        texts = ["red dress silk", "blue", "leather bag brown cotton"]
        batch = tiny_deepbow.run(texts)
        for t, e in zip(texts, batch):
            one = tiny_deepbow.encode_one(t)
            assert np.allclose(one.dense, e.dense, atol=1e-12)
            assert np.allclose(one.p, e.p, atol=1e-12)

    def test_empty_text(self, tiny_deepbow):
        assert tiny_deepbow.run(["  "]) == [None]
        with pytest.raises(ValueError):
            tiny_deepbow.encode_one("")

    def test_checkpoint_vocab_binding(self, tmp_path, small_vocab, tiny_model):
        cfg, P = tiny_model
        path = tmp_path / "m.ckpt"
        M.save_checkpoint(path, P, cfg, small_vocab.digest)
        model = DeepBoW.load(path, small_vocab)
        assert model.model_hash
        other = Vocabulary(small_vocab.words[::-1], small_vocab.B)
        with pytest.raises(ModelVocabMismatch):
            DeepBoW.load(path, other)

    def test_size_mismatch(self, small_vocab, tiny_model):
        cfg, P = tiny_model
        with pytest.raises(ModelVocabMismatch):
            DeepBoW(P, cfg, Vocabulary(small_vocab.words, small_vocab.B + 1))
