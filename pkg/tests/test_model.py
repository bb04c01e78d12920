import numpy as np
import pytest

from deepbow import model as M
from deepbow.vocab import build_vocabulary

from helpers import fd_check, random_batch


@pytest.fixture
def fd_setup():
    # zero head biases keep every sigmoid away from saturation
    cfg = M.ModelConfig(n_tokens=50, d=8, layers=2, heads=2, ffn=32, seed=3, expansion_bias=0.0, member_bias=0.0)
    rng = np.random.default_rng(1)
    return cfg, M.init_params(cfg), random_batch(rng, 3, 50), random_batch(rng, 3, 50), np.array([1.0, 0, 1])


class TestForward:
    def test_output_ranges(self, fd_setup):
        cfg, P, qb, _, _ = fd_setup
        out = M.forward(P, cfg, qb)
        assert np.allclose(out["p"].sum(1), 1.0)
        assert ((out["g"] >= 0) & (out["g"] <= 1)).all()
        assert out["g"].shape == (3, 50)

    @pytest.mark.parametrize("flags", [dict(use_char=False), dict(use_word=False)])
    def test_ablations_run(self, flags):
        cfg = M.ModelConfig(n_tokens=50, d=8, layers=1, heads=2, ffn=16, **flags)
        P = M.init_params(cfg)
        rng = np.random.default_rng(0)
        qb, pb = random_batch(rng, 2, 50), random_batch(rng, 2, 50)
        loss, grads, _ = M.loss_and_grads(P, cfg, qb, pb, [1, 0], "s")
        assert np.isfinite(loss) and set(grads) == set(P)

    def test_both_encoders_off_rejected(self):
        cfg = M.ModelConfig(n_tokens=20, d=8, heads=2, ffn=16, use_char=False, use_word=False)
        with pytest.raises(ValueError):
            M.forward(M.init_params(cfg), cfg, random_batch(np.random.default_rng(0), 1, 20))

    def test_empty_segmentation_rejected(self):
        with pytest.raises(ValueError):
            M.Batch.from_inputs([M.TextInputs(np.array([1]), np.array([], int), ())], 10)

    def test_text_inputs_truncate(self):
        voc = build_vocabulary(["a b c d"], v=4, B=8)
        ti = M.text_inputs("a b c d", voc, max_len=3)
        assert len(ti.chars) == 3 and len(ti.words) == 3


class TestLosses:
    def test_bce_values(self):
        loss, _ = M.binary_cross_entropy(0.5, 1)
        assert loss == pytest.approx(np.log(2))
        loss, grad = M.binary_cross_entropy(0.0, 1)
        assert loss == pytest.approx(np.log(1e7), abs=1e-6)  # 16.118
        assert grad == 0.0
        loss, _ = M.binary_cross_entropy(1.0, 1)
        assert loss < 1e-6

    def test_l2_norm(self):
        assert M.l2_norm([3.0, 4.0]) == 5.0

    @pytest.mark.parametrize("mode", ["t", "s"])
    def test_gradients_match_finite_differences(self, fd_setup, mode):
        cfg, P, qb, pb, y = fd_setup
        _, grads, _ = M.loss_and_grads(P, cfg, qb, pb, y, mode)
        worst, where = fd_check(lambda: M.loss_and_grads(P, cfg, qb, pb, y, mode)[0], P, grads,
                                np.random.default_rng(7), per_tensor=3)
        assert worst <= 1e-4, where

    def test_gradients_at_default_init(self):
        cfg = M.ModelConfig(n_tokens=50, d=8, layers=1, heads=2, ffn=16, seed=4)
        P = M.init_params(cfg)
        rng = np.random.default_rng(2)
        qb, pb, y = random_batch(rng, 3, 50), random_batch(rng, 3, 50), np.array([1.0, 0, 1])
        _, grads, _ = M.loss_and_grads(P, cfg, qb, pb, y, "s")
        worst, where = fd_check(lambda: M.loss_and_grads(P, cfg, qb, pb, y, "s")[0], P, grads,
                                np.random.default_rng(3), per_tensor=3)
        assert worst <= 1e-4, where

    def test_zero_mass_query_is_finite(self):
        # sigmoid(-60) underflows to exactly 0 in the tanh form
        cfg = M.ModelConfig(n_tokens=30, d=8, heads=2, ffn=16, expansion_bias=-60.0, member_bias=-60.0)
        P = M.init_params(cfg)
        rng = np.random.default_rng(0)
        qb, pb = random_batch(rng, 2, 30), random_batch(rng, 2, 30)
        loss, grads, aux = M.loss_and_grads(P, cfg, qb, pb, [1, 0], "s")
        assert (aux["q"]["g"].sum(1) == 0).all()
        assert np.all(aux["scores"] == 0.0) and np.isfinite(loss)
        assert all(np.isfinite(g).all() for g in grads.values())

    def test_init_biases(self):
        P = M.init_params(M.ModelConfig(n_tokens=30, d=8, heads=2, ffn=16, expansion_bias=-3.0, member_bias=1.5))
        assert (P["head.bc"] == -3.0).all() and (P["head.bw"] == 1.5).all()

    def test_norm_gradient_on_g(self, fd_setup):
        # norm term alone: d/dg ||g||/v_norm = g/(v_norm ||g||)
        g = np.random.default_rng(0).random(10)
        v_norm = 10.0
        analytic = g / (v_norm * np.linalg.norm(g))
        num = np.array([(np.linalg.norm(g + e * 1e-6) - np.linalg.norm(g - e * 1e-6)) / 2e-6 / v_norm
                        for e in np.eye(10)])
        assert np.allclose(analytic, num, rtol=1e-6)

    def test_norm_term_toggle(self, fd_setup):
        cfg, P, qb, pb, y = fd_setup
        with_norm = M.loss_and_grads(P, cfg, qb, pb, y, "s", use_norm=True)[0]
        without = M.loss_and_grads(P, cfg, qb, pb, y, "s", use_norm=False)[0]
        out = M.forward(P, cfg, pb)
        expected = np.mean(np.linalg.norm(out["g"], axis=1)) / cfg.n_tokens
        assert with_norm - without == pytest.approx(expected, rel=1e-9)

    def test_scores_in_unit_interval(self, fd_setup):
        cfg, P, qb, pb, y = fd_setup
        for mode in "ts":
            r = M.loss_and_grads(P, cfg, qb, pb, y, mode)[2]["scores"]
            assert ((r >= 0) & (r <= 1)).all()

    def test_bad_mode(self, fd_setup):
        cfg, P, qb, pb, y = fd_setup
        with pytest.raises(ValueError):
            M.loss_and_grads(P, cfg, qb, pb, y, "x")


class TestCheckpoint:
    def test_round_trip(self, tmp_path, fd_setup):
        cfg, P, *_ = fd_setup
        path = tmp_path / "m.ckpt"
        digest = M.save_checkpoint(path, P, cfg, "abc", {"note": 1})
        ck = M.load_checkpoint(path)
        assert ck.digest == digest and ck.vocab_hash == "abc" and ck.config == cfg
        assert ck.extra == {"note": 1}
        assert all(np.array_equal(ck.params[k], P[k]) for k in P)

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(b"hello")
        with pytest.raises(ValueError):
            M.load_checkpoint(p)

    def test_rejects_truncated(self, tmp_path, fd_setup):
        cfg, P, *_ = fd_setup
        p = tmp_path / "m.ckpt"
        M.save_checkpoint(p, P, cfg)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(ValueError):
            M.load_checkpoint(p)
