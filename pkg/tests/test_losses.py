import numpy as np
import numpy.testing as npt
import pytest

from igtrack import losses as L
from igtrack.anchors import AnchorSpec, assign_anchor_labels, generate_anchors
from igtrack.autodiff import Var
from igtrack.geometry import Box

R = 17
K = 5


def centered_labels(seed=0, **kw):
    grid = generate_anchors(AnchorSpec(), 255)
    return grid, assign_anchor_labels(grid, Box(127.5, 127.5, 64, 64), seed=seed, **kw)


class TestClsLoss:
    def test_uniform_logits_give_ln2(self):
        _, labels = centered_labels()
        cls = Var(np.zeros((2 * K, R, R)))
        out = L.cls_loss(cls, labels, R)
        assert float(out.data) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_perfect_logits_drive_loss_down(self):
        _, labels = centered_labels()
        cls = np.zeros((2 * K, R, R))
        # put a +10 margin on the correct class of every anchor
        for r in range(K):
            cls[2 * r] = 10.0  # negative class everywhere ...
        rr = R * R
        for i in labels.positive_indices:
            ratio, rem = divmod(int(i), rr)
            row, col = divmod(rem, R)
            cls[2 * ratio, row, col] = 0.0
            cls[2 * ratio + 1, row, col] = 10.0
        out = L.cls_loss(Var(cls), labels, R)
        assert float(out.data) < 1e-4

    def test_matches_manual_cross_entropy(self):
        _, labels = centered_labels()
        rng = np.random.default_rng(2)
        cls = rng.normal(size=(2 * K, R, R))
        out = float(L.cls_loss(Var(cls), labels, R).data)
        # independent oracle
        rr = R * R
        terms = []
        for i, truth in [(int(i), 1) for i in labels.positive_indices] + [
            (int(i), 0) for i in labels.negative_indices
        ]:
            ratio, rem = divmod(i, rr)
            row, col = divmod(rem, R)
            z = np.array([cls[2 * ratio, row, col], cls[2 * ratio + 1, row, col]])
            p = np.exp(z - z.max())
            p /= p.sum()
            terms.append(-np.log(p[truth]))
        npt.assert_allclose(out, np.mean(terms), atol=1e-10)

    def test_gradient_direction(self):
        _, labels = centered_labels()
        cls = Var(np.zeros((2 * K, R, R)))
        out = L.cls_loss(cls, labels, R)
        out.backward()
        rr = R * R
        for i in labels.positive_indices:
            ratio, rem = divmod(int(i), rr)
            row, col = divmod(rem, R)
            # raising the positive logit lowers the loss
            assert cls.grad[2 * ratio + 1, row, col] < 0
            assert cls.grad[2 * ratio, row, col] > 0


class TestSmoothL1:
    def test_knee_values(self):
        e = Var(np.array([0.0, 0.5, 1.0, 1.5, -2.0]))
        out = L.smooth_l1(e).data
        npt.assert_allclose(out, [0.0, 0.125, 0.5, 1.0, 1.5], atol=1e-12)

    def test_continuous_at_knee(self):
        lo = L.smooth_l1(Var(np.array([1.0 - 1e-9]))).data[0]
        hi = L.smooth_l1(Var(np.array([1.0 + 1e-9]))).data[0]
        assert abs(hi - lo) < 1e-8

    def test_gradient(self):
        e = Var(np.array([0.3, -0.3, 2.0, -2.0]))
        L.smooth_l1(e).sum().backward()
        npt.assert_allclose(e.grad, [0.3, -0.3, 1.0, -1.0], atol=1e-12)


class TestRegLoss:
    def test_exact_targets_zero_loss(self):
        _, labels = centered_labels()
        reg = np.zeros((4 * K, R, R))
        rr = R * R
        for i in labels.positive_indices:
            ratio, rem = divmod(int(i), rr)
            row, col = divmod(rem, R)
            reg[4 * ratio : 4 * ratio + 4, row, col] = labels.target[i]
        out = L.reg_loss(Var(reg), labels, R)
        assert float(out.data) == pytest.approx(0.0, abs=1e-12)

    def test_unit_error_on_every_coord(self):
        _, labels = centered_labels()
        reg = np.zeros((4 * K, R, R))
        rr = R * R
        for i in labels.positive_indices:
            ratio, rem = divmod(int(i), rr)
            row, col = divmod(rem, R)
            reg[4 * ratio : 4 * ratio + 4, row, col] = labels.target[i] + 1.0
        out = L.reg_loss(Var(reg), labels, R)
        # |e| = 1 on each of the 4 coords -> smooth_l1 = 0.5 each, sum 2.0
        assert float(out.data) == pytest.approx(2.0, abs=1e-10)

    def test_requires_positive(self):
        grid = generate_anchors(AnchorSpec(), 255)
        from igtrack.anchors import AnchorLabels, LABEL_NEG

        labels = AnchorLabels(
            label=np.full(len(grid), LABEL_NEG), target=np.zeros((len(grid), 4))
        )
        with pytest.raises(ValueError):
            L.reg_loss(Var(np.zeros((4 * K, R, R))), labels, R)


class TestTotalLoss:
    def test_sums_components(self):
        rep = L.total_loss(0.25, Var(np.float64(0.5)), 0.125)
        assert rep.total == pytest.approx(0.875)
        assert (rep.l_cls, rep.l_reg, rep.l_iou) == (0.25, 0.5, 0.125)

    def test_non_finite_rejected(self):
        with pytest.raises(FloatingPointError, match="l_reg"):
            L.total_loss(0.1, float("nan"), 0.0)
        with pytest.raises(FloatingPointError, match="l_iou"):
            L.total_loss(0.1, 0.1, float("inf"))
