import math

import numpy as np
import pytest

from denserefine.geometry import GridShape
from denserefine.mrf import (MrfConfig, brute_force_map_assignment, extract_detections, greedy_votes,
                             init_state, joint_log_density, mean_field_step, refine, run_inference)

UNIT = GridShape(1, 1)  # boxes are already normalized


def _scalar_step(mu, sigma, lam):
    """Pure-Python synchronous update used as an independent oracle."""
    n = len(mu)
    alpha = [[0.0] * n for _ in range(n)]
    new = []
    for i in range(n):
        logits = [-sum((mu[i][k] - mu[j][k]) ** 2 for k in range(4)) / (2 * sigma ** 2) for j in range(n)]
        top = max(logits)
        ex = [math.exp(v - top) for v in logits]
        z = sum(ex)
        alpha[i] = [v / z for v in ex]
        hat = [sum(alpha[i][j] * mu[j][k] for j in range(n)) for k in range(4)]
        new.append([(1 - lam) * mu[i][k] + lam * hat[k] for k in range(4)])
    return new, alpha


def _clusters(rng, sizes, spread, separation, dim_scale=1.0):
    centres = rng.uniform(0.2, 0.8, (len(sizes), 4))
    # push centres apart along a random direction until they are well separated
    for c in range(1, len(sizes)):
        while np.min(np.linalg.norm(centres[:c] - centres[c], axis=1)) < separation:
            centres[c] = rng.uniform(0.0, 1.0, 4)
    pts = [centres[c] + rng.normal(0, spread, (s, 4)) for c, s in enumerate(sizes)]
    return np.concatenate(pts) * dim_scale


class TestInitState:
    def test_single(self):
        s = init_state([[1, 2, 3, 4]], (10, 10))
        assert s.n == 1
        np.testing.assert_array_equal(s.alpha, [[1.0]])
        assert s.iteration == 0

    def test_identical_uniform(self):
        s = init_state(np.tile([1, 2, 3, 4], (5, 1)), (10, 10))
        np.testing.assert_allclose(s.alpha, np.full((5, 5), 0.2), atol=1e-15)

    def test_normalization(self):
        s = init_state([[10, 20, 30, 40]], (100, 200))
        np.testing.assert_allclose(s.mu, [[0.1, 0.1, 0.3, 0.2]])

    def test_two_proposal_hand_values(self):
        boxes = np.array([[100, 200, 300, 400], [101, 201, 301, 401]], dtype=float)
        s = init_state(boxes, (1000, 1000), MrfConfig(sigma=0.005))
        np.testing.assert_allclose(s.eta[0], [0.0, -0.08], atol=1e-9)
        assert s.alpha[0, 0] == pytest.approx(1 / (1 + math.exp(-0.08)), abs=1e-9)
        assert s.alpha[0, 0] == pytest.approx(0.51999, abs=1e-5)


class TestMeanFieldStep:
    def test_two_proposal_single_iteration(self):
        boxes = np.array([[100, 200, 300, 400], [101, 201, 301, 401]], dtype=float)
        cfg = MrfConfig(sigma=0.005, damping=0.2)
        s0 = init_state(boxes, (1000, 1000), cfg)
        s1 = mean_field_step(s0, cfg)
        move = 0.2 * (1 - 1 / (1 + math.exp(-0.08))) * 0.001
        assert move == pytest.approx(9.6002e-5, abs=1e-9)
        np.testing.assert_allclose(s1.mu[0] - s0.mu[0], move, atol=1e-12)
        np.testing.assert_allclose(s0.mu[1] - s1.mu[1], move, atol=1e-12)
        assert s1.iteration == 1

    def test_identical_fixed_point(self):
        cfg = MrfConfig()
        s0 = init_state(np.tile([5, 6, 7, 8], (4, 1)), (10, 10), cfg)
        s1 = mean_field_step(s0, cfg)
        np.testing.assert_array_equal(s1.mu, s0.mu)
        np.testing.assert_allclose(s1.alpha, 0.25, atol=1e-15)

    @pytest.mark.parametrize("lam", [0.1, 0.5, 1.0])
    def test_single_location_unchanged(self, lam):
        cfg = MrfConfig(damping=lam, iterations=7)
        s = run_inference([[1, 2, 3, 4]], (10, 10), cfg)
        np.testing.assert_array_equal(s.mu, [[0.1, 0.2, 0.3, 0.4]])

    def test_matches_scalar_oracle(self, rng):
        for _ in range(10):
            n = int(rng.integers(1, 8))
            mu = rng.uniform(0.3, 0.32, (n, 4))
            sigma, lam = rng.uniform(0.002, 0.02), rng.uniform(0.05, 1.0)
            cfg = MrfConfig(sigma=sigma, damping=lam)
            state = init_state(mu, UNIT, cfg)
            expected = mu.tolist()
            for _ in range(3):
                state = mean_field_step(state, cfg)
                expected, alpha = _scalar_step(expected, sigma, lam)
                np.testing.assert_allclose(state.alpha, alpha, atol=1e-12)
                np.testing.assert_allclose(state.mu, expected, atol=1e-12)

    def test_alpha_is_softmax_of_eta(self, rng):
        cfg = MrfConfig(sigma=0.01)
        s = mean_field_step(init_state(rng.uniform(0.4, 0.45, (9, 4)), UNIT, cfg), cfg)
        ex = np.exp(s.eta - s.eta.max(axis=1, keepdims=True))
        np.testing.assert_allclose(s.alpha, ex / ex.sum(axis=1, keepdims=True), atol=1e-15)
        np.testing.assert_allclose(s.alpha.sum(axis=1), 1.0, atol=1e-12)

    def test_workers_and_streaming_agree(self, rng):
        mu = rng.uniform(0.4, 0.5, (37, 4))
        ref = run_inference(mu, UNIT, MrfConfig(sigma=0.02, iterations=5))
        threaded = run_inference(mu, UNIT, MrfConfig(sigma=0.02, iterations=5, workers=3))
        streamed = run_inference(mu, UNIT, MrfConfig(sigma=0.02, iterations=5, dense_cap=10))
        np.testing.assert_allclose(threaded.mu, ref.mu, atol=1e-14)
        np.testing.assert_allclose(streamed.mu, ref.mu, atol=1e-14)
        assert streamed.alpha is None and streamed.eta is None
        np.testing.assert_array_equal(streamed.assignment, ref.assignment)


class TestRunInference:
    def test_canonical_defaults(self):
        cfg = MrfConfig()
        assert (cfg.sigma, cfg.damping, cfg.iterations, cfg.rho) == (0.005, 0.2, 20, 0.2)

    def test_identical_proposals(self):
        boxes = np.tile([3.0, 4.0, 9.0, 12.0], (6, 1))
        s = run_inference(boxes, (20, 20))
        np.testing.assert_array_equal(s.mu, boxes / 20)
        assert s.iteration == 20

    def test_clusters_contract(self, rng):
        cfg = MrfConfig()
        mu = _clusters(rng, [6, 5], spread=0.001, separation=0.2)
        s = run_inference(mu, UNIT, cfg)
        for members in (slice(0, 6), slice(6, 11)):
            before = mu[members].std(axis=0).max()
            after = s.mu[members].std(axis=0).max()
            assert after < before
            np.testing.assert_allclose(s.mu[members].mean(axis=0), mu[members].mean(axis=0), atol=5e-4)
        assert s.alpha[:6, 6:].max() < 1e-10

    def test_early_stop_certificate(self, rng):
        cfg = MrfConfig(iterations=1000, residual_tol=1e-10)
        mu = _clusters(rng, [4, 3], spread=0.001, separation=0.2)
        s = run_inference(mu, UNIT, cfg)
        assert s.iteration < 1000
        again = mean_field_step(s, cfg)
        assert np.abs(again.mu - s.mu).max() < 1e-10

    def test_empty(self):
        s = run_inference(np.zeros((0, 4)), (5, 5))
        assert s.n == 0
        assert extract_detections(s) == []


class TestExtraction:
    def test_single(self):
        dets = refine([[1, 2, 3, 4]], (10, 10))
        assert len(dets) == 1 and dets[0].score == 1
        np.testing.assert_allclose(dets[0].box, [1, 2, 3, 4])

    def test_greedy_hand_example(self):
        # 1-based assignment (2,2,2,5,5)
        out = greedy_votes([1, 1, 1, 4, 4])
        assert out == [(1, [0, 1, 2]), (4, [3, 4])]

    def test_greedy_ties_and_min_votes(self):
        assert greedy_votes([3, 3, 0, 0, 4]) == [(0, [2, 3]), (3, [0, 1]), (4, [4])]
        assert greedy_votes([3, 3, 0, 0, 4], min_votes=2) == [(0, [2, 3]), (3, [0, 1])]

    def test_identical_proposals_one_detection(self):
        dets = refine(np.tile([3.0, 4.0, 9.0, 12.0], (7, 1)), (20, 20))
        assert len(dets) == 1
        assert dets[0].score == 7 and dets[0].members == tuple(range(7))

    def test_two_clusters(self, rng):
        mu = _clusters(rng, [5, 3], spread=0.0005, separation=0.2)
        dets = refine(mu * 100, (100, 100))
        assert [d.score for d in dets] == [5, 3]
        assert set(dets[0].members) == set(range(5))
        np.testing.assert_allclose(dets[0].box, mu[:5].mean(axis=0) * 100, atol=0.02)

    def test_vote_conservation(self, rng):
        for min_votes in (1, 2, 3):
            mu = np.concatenate([_clusters(rng, [4, 2], 0.0005, 0.2), rng.uniform(0, 1, (3, 4))])
            cfg = MrfConfig(min_votes=min_votes)
            s = run_inference(mu, UNIT, cfg)
            dets = extract_detections(s, cfg)
            kept = sum(d.score for d in dets)
            dropped = sum(len(m) for _, m in greedy_votes(s.assignment) if len(m) < min_votes)
            assert kept + dropped == len(mu)
            assert all(d.score >= min_votes for d in dets)

    def test_sorted_by_score(self, rng):
        mu = np.concatenate([_clusters(rng, [2, 6, 4], 0.0005, 0.2)])
        dets = refine(mu, UNIT)
        assert [d.score for d in dets] == [6, 4, 2]


class TestJointLogDensity:
    def test_self_assignment_zero(self, rng):
        X = rng.normal(size=(4, 4))
        assert joint_log_density(X, range(4), 0.1) == 0.0

    def test_swap_pair(self):
        X = np.array([[0, 0, 0, 0], [0.1, 0, 0.2, 0]])
        d2 = 0.01 + 0.04
        assert joint_log_density(X, [1, 0], 0.5) == pytest.approx(-d2 / 0.25)

    def test_brute_force_maximizer(self, rng):
        for _ in range(20):
            X = rng.normal(size=(3, 4))
            best = max(joint_log_density(X, A, 0.3) for A in np.ndindex(3, 3, 3))
            assert best == 0.0
            assert brute_force_map_assignment(X, 0.3) == (0, 1, 2)

    def test_hard_assignment_matches_enumeration(self, rng):
        cfg = MrfConfig()
        for _ in range(25):
            sizes = [2, 1] if rng.uniform() < 0.5 else [1, 2]
            mu = _clusters(rng, sizes, spread=0.1 * cfg.sigma, separation=10 * cfg.sigma * 4)
            before = run_inference(mu, UNIT, MrfConfig(iterations=cfg.iterations - 1))
            final = mean_field_step(before, cfg)
            oracle = brute_force_map_assignment(before.mu, cfg.sigma, cfg.tie_tol)
            assert tuple(final.assignment.tolist()) == oracle


def test_config_validation():
    for bad in ({"sigma": 0}, {"damping": 0}, {"damping": 1.5}, {"iterations": 0}, {"rho": 2},
                {"min_votes": 0}, {"residual_tol": -1}, {"workers": 0}):
        with pytest.raises(ValueError):
            MrfConfig(**bad)
