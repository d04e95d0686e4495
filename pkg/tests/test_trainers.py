import math

import numpy as np
import pytest

from pfslda.elbo import compute_elbo, update_phi_closed
from pfslda.model import ModelConfig, expected_theta, init_params
from pfslda.oracle import grid_optimal_coordinate
from pfslda.testing import random_tiny_instance
from pfslda.trainers import (
    TrainConfig,
    ca_update_beta,
    ca_update_eta_delta,
    ca_update_gamma,
    ca_update_phi,
    ca_update_pi,
    ca_update_varphi,
    train_coordinate_ascent,
    train_sgd,
)
from conftest import make_corpus


def full_elbo(corpus, params, state, config):
    return compute_elbo(corpus, range(corpus.num_documents), params, state,
                        config).total


class TestPhiUpdate:
    def test_zero_varphi_ignores_beta(self, rng):
        corpus, config, params, state = random_tiny_instance(rng, M=1, K=3)
        state.varphi_logits = np.full(params.V, -50.0)
        ca_update_phi(corpus, 0, params, state, config)
        from pfslda.model import expected_log_theta, softmax_simplex
        want = softmax_simplex(expected_log_theta(state.gamma[0]))
        for row in state.phi[0]:
            assert np.allclose(row, want, atol=1e-9)

    def test_single_topic(self, rng):
        corpus, config, params, state = random_tiny_instance(rng, M=1, K=1)
        ca_update_phi(corpus, 0, params, state, config)
        assert np.allclose(state.phi[0], 1.0, atol=1e-12)

    def test_never_decreases_bound(self, rng):
        for _ in range(5):
            corpus, config, params, state = random_tiny_instance(rng)
            before = full_elbo(corpus, params, state, config)
            for d in range(corpus.num_documents):
                ca_update_phi(corpus, d, params, state, config)
            after = full_elbo(corpus, params, state, config)
            assert after >= before - 1e-8


class TestGammaUpdate:
    def test_lda_fixed_point_when_glm_silent(self, rng):
        corpus, config, params, state = random_tiny_instance(rng, M=2, K=2)
        corpus.targets[:] = 0.0
        params.eta = np.zeros(2)
        fixed = config.alpha.copy()
        doc = corpus.documents[0]
        fixed = config.alpha + (doc.word_cnt[:, None] * state.phi[0]).sum(axis=0)
        state.gamma[0] = fixed
        out = ca_update_gamma(corpus, 0, params, state, config)
        assert np.allclose(out, fixed, rtol=1e-6)

    def test_ascent_never_decreases_bound(self, rng):
        for _ in range(5):
            corpus, config, params, state = random_tiny_instance(rng)
            before = full_elbo(corpus, params, state, config)
            for d in range(corpus.num_documents):
                ca_update_gamma(corpus, d, params, state, config)
            after = full_elbo(corpus, params, state, config)
            assert after >= before - 1e-8

    def test_gamma_stays_positive(self, rng):
        corpus, config, params, state = random_tiny_instance(rng)
        for d in range(corpus.num_documents):
            out = ca_update_gamma(corpus, d, params, state, config)
            assert (out > 0).all()


class TestVarphiUpdate:
    def test_symmetric_evidence_gives_half(self):
        corpus = make_corpus([{0: 3}], [0.0], V=2)
        config = ModelConfig(K=1, p=0.5)
        params, state = init_params(config, corpus)
        params.beta_logits = np.log([[0.4, 0.6]])
        params.pi_logits = np.log([0.4, 0.6])
        state.varphi_logits = np.array([2.0, -2.0])
        ca_update_varphi(corpus, params, state, config)
        assert state.varphi[0] == pytest.approx(0.5, abs=1e-12)
        # unseen word keeps its previous value: no evidence
        assert state.varphi_logits[1] == -2.0

    def test_matches_grid_oracle(self, rng):
        corpus, config, params, state = random_tiny_instance(rng, M=2, V=5)
        j = int(corpus.documents[0].word_idx[0])
        before = state.varphi_logits.copy()
        ca_update_varphi(corpus, params, state, config)
        closed = state.varphi[j]
        grid = np.linspace(1e-4, 1 - 1e-4, 1001)

        def objective(q):
            state.varphi_logits = before.copy()
            state.varphi_logits[j] = math.log(q / (1 - q))
            return full_elbo(corpus, params, state, config)

        best_q, _ = grid_optimal_coordinate(objective, grid)
        assert abs(closed - best_q) <= (grid[1] - grid[0]) + 1e-9

    def test_prior_dominates_as_p_approaches_one(self, rng):
        corpus, config, params, state = random_tiny_instance(rng, M=2, V=5)
        params.p = 1.0 - 1e-12
        ca_update_varphi(corpus, params, state, config)
        seen = sorted({int(i) for d in corpus.documents for i in d.word_idx})
        assert (state.varphi[seen] > 0.999).all()

    def test_channel_disabled_rejected(self, rng):
        corpus, config, params, state = random_tiny_instance(rng, M=1,
                                                             channel=False)
        with pytest.raises(ValueError):
            ca_update_varphi(corpus, params, state, config)

    def test_never_decreases_bound(self, rng):
        for _ in range(5):
            corpus, config, params, state = random_tiny_instance(rng)
            before = full_elbo(corpus, params, state, config)
            ca_update_varphi(corpus, params, state, config)
            after = full_elbo(corpus, params, state, config)
            assert after >= before - 1e-8


class TestPiUpdate:
    def test_count_proportions_when_varphi_zero(self):
        corpus = make_corpus([{0: 2, 1: 6, 2: 2}], [0.0], V=3)
        config = ModelConfig(K=1, p=0.5)
        params, state = init_params(config, corpus)
        state.varphi_logits = np.full(3, -60.0)
        pi = ca_update_pi(corpus, params, state)
        assert np.allclose(pi, [0.2, 0.6, 0.2], atol=1e-9)

    def test_fully_relevant_word_excluded(self):
        corpus = make_corpus([{0: 2, 1: 2}], [0.0], V=2)
        config = ModelConfig(K=1, p=0.5)
        params, state = init_params(config, corpus)
        state.varphi_logits = np.array([700.0, 0.0])
        pi = ca_update_pi(corpus, params, state)
        assert pi[0] == 0.0
        assert pi[1] == pytest.approx(1.0)

    def test_all_relevant_rejected(self):
        corpus = make_corpus([{0: 2}], [0.0], V=1)
        config = ModelConfig(K=1, p=0.5)
        params, state = init_params(config, corpus)
        state.varphi_logits = np.array([700.0])
        with pytest.raises(ValueError):
            ca_update_pi(corpus, params, state)

    def test_never_decreases_bound(self, rng):
        for _ in range(5):
            corpus, config, params, state = random_tiny_instance(rng)
            before = full_elbo(corpus, params, state, config)
            ca_update_pi(corpus, params, state)
            after = full_elbo(corpus, params, state, config)
            assert after >= before - 1e-8


class TestBetaUpdate:
    def test_unigram_collapse(self):
        corpus = make_corpus([{0: 1, 1: 3}, {1: 2, 2: 2}], [0.0, 0.0], V=3)
        config = ModelConfig(K=1, p=0.5)
        params, state = init_params(config, corpus)
        state.varphi_logits = np.full(3, 60.0)
        beta = ca_update_beta(corpus, params, state, config)
        assert np.allclose(beta[0], [1 / 8, 5 / 8, 2 / 8], atol=1e-9)

    def test_irrelevant_word_excluded(self):
        corpus = make_corpus([{0: 2, 1: 2}], [0.0], V=2)
        config = ModelConfig(K=2, p=0.5)
        params, state = init_params(config, corpus)
        state.varphi_logits = np.array([-800.0, 0.0])
        beta = ca_update_beta(corpus, params, state, config)
        # excluded up to the 1e-12 numerical floor applied before the log
        assert (beta[:, 0] <= 1e-9).all()

    def test_zero_weight_row_unchanged(self):
        corpus = make_corpus([{}], [0.0], V=2)
        config = ModelConfig(K=2, p=0.5)
        params, state = init_params(config, corpus)
        before = params.beta.copy()
        beta = ca_update_beta(corpus, params, state, config)
        assert np.allclose(beta, before, atol=1e-12)

    def test_never_decreases_bound(self, rng):
        for _ in range(5):
            corpus, config, params, state = random_tiny_instance(rng)
            before = full_elbo(corpus, params, state, config)
            ca_update_beta(corpus, params, state, config)
            after = full_elbo(corpus, params, state, config)
            assert after >= before - 1e-8


class TestEtaDeltaUpdate:
    def test_single_topic_constant_target_collapse(self):
        corpus = make_corpus([{0: 1}, {1: 1}], [2.0, 2.0], V=2)
        config = ModelConfig(K=1, p=0.5)
        params, state = init_params(config, corpus)
        eta, delta = ca_update_eta_delta(corpus, params, state, "real")
        assert eta[0] == pytest.approx(2.0, rel=1e-5)
        assert delta == pytest.approx(1e-6)

    def test_delta_matches_noise_variance(self, rng):
        M = 400
        y = rng.normal(0.0, 1.3, size=M)
        corpus = make_corpus([{0: 1}] * M, y, V=2)
        config = ModelConfig(K=2, p=0.5)
        params, state = init_params(config, corpus)
        state.gamma = rng.uniform(0.5, 6.0, size=(M, 2))
        _, delta = ca_update_eta_delta(corpus, params, state, "real")
        assert delta == pytest.approx(np.var(y), rel=0.15)

    def test_binary_targets_rejected(self, rng):
        corpus, config, params, state = random_tiny_instance(
            rng, target_type="binary")
        with pytest.raises(ValueError):
            ca_update_eta_delta(corpus, params, state, "binary")

    def test_never_decreases_bound(self, rng):
        for _ in range(5):
            corpus, config, params, state = random_tiny_instance(rng)
            before = full_elbo(corpus, params, state, config)
            ca_update_eta_delta(corpus, params, state, "real")
            after = full_elbo(corpus, params, state, config)
            assert after >= before - 1e-8


class TestCoordinateAscent:
    def test_sweep_trace_monotone(self, rng):
        corpus, config, params, state = random_tiny_instance(rng, M=3, V=8,
                                                             K=2)
        tc = TrainConfig(trainer="ca", ca_sweeps=8, convergence_tol=0.0)
        _, _, trace = train_coordinate_ascent(corpus, config, tc)
        elbos = [r.elbo for r in trace.records]
        assert len(elbos) >= 2
        for a, b in zip(elbos, elbos[1:]):
            assert b >= a - 1e-6

    def test_single_topic_channel_off_unigram(self):
        corpus = make_corpus([{0: 1, 1: 3}, {1: 2, 2: 2}], [0.1, -0.1], V=3)
        config = ModelConfig(K=1, p=0.5, channel_enabled=False, seed=0)
        tc = TrainConfig(trainer="ca", ca_sweeps=3, convergence_tol=0.0)
        params, _, _ = train_coordinate_ascent(corpus, config, tc)
        assert np.allclose(params.beta[0], [1 / 8, 5 / 8, 2 / 8], atol=1e-6)


class TestSgd:
    def tiny_corpus(self, rng, M=12, V=10):
        docs = [{int(i): int(c) for i, c in
                 zip(rng.choice(V, size=4, replace=False),
                     rng.integers(1, 4, size=4))} for _ in range(M)]
        return make_corpus(docs, rng.normal(size=M), V=V)

    def test_deterministic(self, rng):
        corpus = self.tiny_corpus(rng)
        config = ModelConfig(K=2, p=0.4, seed=3)
        tc = TrainConfig(epochs=5, batch_size=4, seed=9,
                         convergence_tol=0.0)
        a = train_sgd(corpus, None, config, tc)
        b = train_sgd(corpus, None, config, tc)
        assert np.array_equal(a[0].beta_logits, b[0].beta_logits)
        assert np.array_equal(a[0].pi_logits, b[0].pi_logits)
        assert np.array_equal(a[0].eta, b[0].eta)
        assert np.array_equal(a[1].varphi_logits, b[1].varphi_logits)
        assert np.array_equal(a[1].gamma, b[1].gamma)

    def test_channel_disabled_baseline_runs(self, rng):
        corpus = self.tiny_corpus(rng)
        config = ModelConfig(K=2, seed=1, channel_enabled=False)
        tc = TrainConfig(epochs=5, batch_size=4, convergence_tol=0.0,
                         log_every=1)
        params, state, trace = train_sgd(corpus, corpus, config, tc)
        assert np.isfinite(params.beta_logits).all()
        assert all(math.isfinite(r.elbo) for r in trace.records)
        val = [r.val_metric for r in trace.records if r.val_metric is not None]
        assert val and all(math.isfinite(v) for v in val)

    def test_trace_steps_increasing(self, rng):
        corpus = self.tiny_corpus(rng)
        config = ModelConfig(K=2, seed=1)
        tc = TrainConfig(epochs=6, batch_size=4, log_every=2,
                         convergence_tol=0.0)
        _, _, trace = train_sgd(corpus, None, config, tc)
        steps = [r.step for r in trace.records]
        assert steps == sorted(set(steps))

    def test_degenerate_p_rejected(self, rng):
        corpus = self.tiny_corpus(rng)
        config = ModelConfig(K=2, p=1.0, channel_enabled=True)
        with pytest.raises(ValueError):
            train_sgd(corpus, None, config, TrainConfig(epochs=1))

    def test_binary_targets_supported(self, rng):
        docs = [{int(i): 1} for i in rng.integers(0, 5, size=10)]
        corpus = make_corpus(docs, rng.integers(0, 2, size=10),
                             V=5, target_type="binary")
        config = ModelConfig(K=2, target_type="binary", seed=0)
        tc = TrainConfig(epochs=4, batch_size=5, convergence_tol=0.0)
        params, _, _ = train_sgd(corpus, corpus, config, tc)
        assert np.isfinite(params.eta).all()


class TestAdamIsolation:
    def test_single_coordinate_updates_alone(self):
        from pfslda.trainers import _Adam
        opt = _Adam((4,), lr=0.1, b1=0.9, b2=0.999, eps=1e-8)
        grad = np.array([0.0, 3.0, 0.0, 0.0])
        step = opt.update(grad)
        assert step[1] != 0.0
        assert step[0] == 0.0 and step[2] == 0.0 and step[3] == 0.0


class TestTrainConfigValidation:
    def test_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(varphi_update="sometimes")
