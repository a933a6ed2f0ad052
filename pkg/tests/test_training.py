import itertools
import math

import numpy as np
import pytest
import torch

from refvidseg.config import RunConfig, TrainConfig
from refvidseg.model.fusion import PredictionSet
from refvidseg.train.losses import dice_loss, match_cost, reference_loss, sequence_dice_loss
from refvidseg.train.matcher import Assignment, build_cost_matrix, hungarian_match
from refvidseg.train.schedule import lr_at


def brute_force_assignment_cost(cost: np.ndarray) -> float:
    """Independent oracle: enumerate all injective target->query maps."""
    n_q, m = cost.shape
    best = math.inf
    for perm in itertools.permutations(range(n_q), m):
        total = sum(cost[q, t] for t, q in enumerate(perm))
        best = min(best, total)
    return best


class TestHungarian:
    def total(self, cost, assignment):
        return sum(float(cost[q, t]) for q, t in assignment.pairs)

    def test_zero_diagonal(self):
        cost = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        result = hungarian_match(cost)
        assert sorted(result.pairs) == [(0, 0), (1, 1)]
        assert self.total(cost, result) == 0.0

    def test_hand_case(self):
        cost = torch.tensor([[1.0, 2.0], [2.0, 1.0]])
        result = hungarian_match(cost)
        assert sorted(result.pairs) == [(0, 0), (1, 1)]
        assert self.total(cost, result) == 2.0

    def test_matches_brute_force_100_trials(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n_q = int(rng.integers(1, 7))
            m = int(rng.integers(1, n_q + 1))
            cost = rng.normal(size=(n_q, m))
            result = hungarian_match(torch.tensor(cost))
            assert len(result.pairs) == m
            queries = [q for q, _ in result.pairs]
            targets = [t for _, t in result.pairs]
            assert len(set(queries)) == m and sorted(targets) == list(range(m))
            assert set(result.unmatched_queries) == set(range(n_q)) - set(queries)
            np.testing.assert_allclose(
                self.total(cost, result), brute_force_assignment_cost(cost), atol=1e-9
            )

    def test_more_targets_than_queries(self):
        with pytest.raises(ValueError, match="more targets"):
            hungarian_match(torch.zeros(2, 3))

    def test_non_finite_rejected(self):
        cost = torch.tensor([[0.0, float("inf")], [1.0, 0.0]])
        with pytest.raises(ValueError, match="non-finite"):
            hungarian_match(cost)


class TestDiceLoss:
    def test_identical_binary_masks_near_zero(self):
        mask = torch.zeros(40, 40)
        mask[5:35, 5:35] = 1.0  # 900 pixels
        loss = dice_loss(mask, mask)
        assert 0.0 <= float(loss) < 1e-3

    def test_half_overlap_hand_case(self):
        # pred covers gt plus an equal-area extra region: dice = 2g/(3g) = 2/3
        g = 800
        gt = torch.zeros(40, 40)
        gt[:20] = 1.0  # 800 px
        pred = torch.ones(40, 40)  # 1600 px, overlap 800
        loss = dice_loss(pred, gt)
        assert abs(float(loss) - (1.0 - 2.0 * g / (800.0 + 1600.0))) < 1e-3

    def test_all_zero_prediction_approaches_one(self):
        gt = torch.ones(100, 100)
        assert float(dice_loss(torch.zeros(100, 100), gt)) > 0.999

    def test_bounds_and_shape_error(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pred = torch.tensor(rng.uniform(size=(8, 8)))
            gt = torch.tensor((rng.uniform(size=(8, 8)) > 0.5).astype(float))
            val = float(dice_loss(pred, gt))
            assert 0.0 <= val <= 1.0
        with pytest.raises(ValueError, match="shape mismatch"):
            dice_loss(torch.zeros(2, 2), torch.zeros(3, 3))

    def test_binary_symmetry(self):
        rng = np.random.default_rng(2)
        a = torch.tensor((rng.uniform(size=(10, 10)) > 0.5).astype(float))
        b = torch.tensor((rng.uniform(size=(10, 10)) > 0.5).astype(float))
        assert abs(float(dice_loss(a, b)) - float(dice_loss(b, a))) < 1e-12

    def test_monotone_in_overlap(self):
        # fixed areas, growing overlap -> dice loss decreases
        losses = []
        for overlap in (0, 5, 10, 15, 20):
            pred = torch.zeros(1, 100)
            gt = torch.zeros(1, 100)
            pred[0, :20] = 1.0
            gt[0, 20 - overlap : 40 - overlap] = 1.0
            losses.append(float(dice_loss(pred, gt)))
        assert all(a > b for a, b in zip(losses, losses[1:]))


class TestMatchCost:
    def test_recomposition_from_parts(self):
        rng = np.random.default_rng(3)
        logits = torch.tensor(rng.normal(size=(3, 8, 8)))
        ref = torch.tensor(rng.normal(size=3))
        gt = torch.tensor((rng.uniform(size=(3, 8, 8)) > 0.5).astype(float))
        real = torch.tensor([True, True, False])
        for is_ref, sign in ((True, -1.0), (False, 1.0)):
            cost = match_cost(logits, ref, gt, is_ref, lambda_dice=5.0, lambda_ref=2.0, real_frames=real)
            expected = 5.0 * float(sequence_dice_loss(logits, gt, real)) + 2.0 * sign * float(
                ref[:2].mean()
            )
            assert abs(float(cost) - expected) < 1e-9

    def test_perfect_referred_match_is_minimal(self):
        gt = torch.zeros(2, 8, 8)
        gt[:, 2:6, 2:6] = 1.0
        logits = (gt * 2 - 1) * 20.0  # saturated sigmoid toward gt
        real = torch.ones(2, dtype=torch.bool)
        good = match_cost(logits, torch.tensor([9.0, 9.0]), gt, True, 5.0, 2.0, real)
        bad = match_cost(-logits, torch.tensor([-9.0, -9.0]), gt, True, 5.0, 2.0, real)
        assert float(good) < float(bad)
        assert float(good) == pytest.approx(-2.0 * 9.0, abs=0.1)

    def test_disjoint_masks_dice_term_saturates(self):
        gt = torch.zeros(1, 16, 16)
        gt[:, :8] = 1.0
        pred_logits = torch.full((1, 16, 16), -30.0)
        pred_logits[:, 8:] = 30.0  # confident, fully disjoint
        real = torch.ones(1, dtype=torch.bool)
        cost = match_cost(pred_logits, torch.zeros(1), gt, False, 1.0, 0.0, real)
        assert float(cost) == pytest.approx(1.0, abs=1e-2)

    def test_frame_count_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            sequence_dice_loss(torch.zeros(2, 4, 4), torch.zeros(3, 4, 4), torch.ones(2, dtype=torch.bool))


class TestReferenceLoss:
    def test_saturated_logits_approach_zero(self):
        logits = torch.full((4, 3), -50.0)
        logits[2] = 50.0
        loss = reference_loss(logits, referred_query=2, real_frames=torch.ones(3, dtype=torch.bool))
        assert float(loss) < 1e-6

    def test_uniform_zero_logits_ln2(self):
        loss = reference_loss(
            torch.zeros(5, 3), referred_query=1, real_frames=torch.ones(3, dtype=torch.bool)
        )
        assert abs(float(loss) - math.log(2.0)) < 1e-6

    def test_matches_bce_oracle(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(6, 3))
        real = torch.tensor([True, True, False])
        loss = reference_loss(torch.tensor(logits), referred_query=4, real_frames=real)

        # independent oracle: plain python BCE over real frames
        def bce(logit, target):
            p = 1.0 / (1.0 + math.exp(-logit))
            p = min(max(p, 1e-12), 1 - 1e-12)
            return -(target * math.log(p) + (1 - target) * math.log(1 - p))

        vals = []
        for q in range(6):
            for t in range(2):
                vals.append(bce(logits[q, t], 1.0 if q == 4 else 0.0))
        assert abs(float(loss) - float(np.mean(vals))) < 1e-6


class TestSchedule:
    def test_milestone_values(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == pytest.approx(1e-4)
        assert lr_at(19, cfg) == pytest.approx(1e-4)
        assert lr_at(20, cfg) == pytest.approx(6e-5)
        assert lr_at(39, cfg) == pytest.approx(6e-5)
        assert lr_at(40, cfg) == pytest.approx(3.6e-5)
        assert lr_at(99, cfg) == pytest.approx(3.6e-5)

    def test_out_of_range(self):
        cfg = TrainConfig()
        with pytest.raises(ValueError):
            lr_at(-1, cfg)
        with pytest.raises(ValueError):
            lr_at(100, cfg)

    def test_piecewise_constant_non_increasing(self):
        cfg = TrainConfig()
        values = [lr_at(e, cfg) for e in range(cfg.epochs)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert len(set(values)) == 3
