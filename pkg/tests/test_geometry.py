import numpy as np
import numpy.testing as npt
import pytest

from igtrack.geometry import (
    Box,
    InvalidBoxError,
    RegressionDelta,
    clip_box,
    decode,
    encode,
    iou,
    iou_gradient,
)


def random_box(rng, span=100.0):
    return Box(
        cx=rng.uniform(0, span),
        cy=rng.uniform(0, span),
        w=rng.uniform(1, span / 2),
        h=rng.uniform(1, span / 2),
    )


def raster_iou(a, b, pitch=1e-3):
    """Independent oracle: count cells of a fine grid inside each box."""
    x_lo = min(a.x1, b.x1)
    x_hi = max(a.x2, b.x2)
    y_lo = min(a.y1, b.y1)
    y_hi = max(a.y2, b.y2)
    # pitch relative to the bounding region keeps the grid tractable
    nx = int((x_hi - x_lo) / pitch) + 1
    step = (x_hi - x_lo) / nx if nx else pitch
    ny = max(int((y_hi - y_lo) / step), 1)
    xs = x_lo + (np.arange(nx) + 0.5) * step
    ys = y_lo + (np.arange(ny) + 0.5) * (y_hi - y_lo) / ny
    cell = step * (y_hi - y_lo) / ny
    in_a = ((xs >= a.x1) & (xs <= a.x2))[None, :] & ((ys >= a.y1) & (ys <= a.y2))[:, None]
    in_b = ((xs >= b.x1) & (xs <= b.x2))[None, :] & ((ys >= b.y1) & (ys <= b.y2))[:, None]
    inter = (in_a & in_b).sum() * cell
    union = (in_a | in_b).sum() * cell
    return inter / union


class TestIou:
    def test_identity(self):
        b = Box(5, 5, 4, 3)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(Box(1, 1, 2, 2), Box(10, 10, 2, 2)) == 0.0

    def test_corner_example(self):
        a = Box.from_corners(0, 0, 2, 2)
        b = Box.from_corners(1, 1, 3, 3)
        # inter 1, union 7
        assert abs(iou(a, b) - 1 / 7) < 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            assert iou(a, b) == iou(b, a)

    def test_range_and_translation_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = random_box(rng), random_box(rng)
            v = iou(a, b)
            assert 0.0 <= v <= 1.0
            tx, ty = rng.uniform(-50, 50, size=2)
            assert abs(iou(a.shifted(tx, ty), b.shifted(tx, ty)) - v) < 1e-12

    def test_matches_raster_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            a, b = random_box(rng, span=10.0), random_box(rng, span=10.0)
            npt.assert_allclose(iou(a, b), raster_iou(a, b), atol=1e-3)

    def test_invalid_box_rejected(self):
        with pytest.raises(InvalidBoxError):
            Box(0, 0, -1, 2)
        with pytest.raises(InvalidBoxError):
            Box(0, 0, 2, 0)


class TestIouGradient:
    def fd(self, a, b, step=1e-4):
        out = []
        for k in range(4):
            args = [a.cx, a.cy, a.w, a.h]
            args[k] += step
            hi = iou(Box(*args), b)
            args[k] -= 2 * step
            lo = iou(Box(*args), b)
            out.append((hi - lo) / (2 * step))
        return np.array(out)

    def test_symmetric_maximum(self):
        b = Box(5, 5, 4, 4)
        g = iou_gradient(b, b)
        assert g[0] == 0.0 and g[1] == 0.0

    def test_disjoint_zero(self):
        assert iou_gradient(Box(1, 1, 2, 2), Box(20, 20, 2, 2)) == (0, 0, 0, 0)

    def test_corner_example_fd(self):
        a = Box.from_corners(0, 0, 2, 2)
        b = Box.from_corners(1, 1, 3, 3)
        npt.assert_allclose(iou_gradient(a, b), self.fd(a, b), atol=1e-5)

    def test_random_overlapping_pairs(self):
        rng = np.random.default_rng(3)
        checked = 0
        while checked < 100:
            a, b = random_box(rng), random_box(rng)
            if iou(a, b) < 0.05:
                continue
            # skip near-tangent configurations where the function is kinked
            edges = [a.x1 - b.x1, a.x2 - b.x2, a.y1 - b.y1, a.y2 - b.y2]
            if min(abs(e) for e in edges) < 1e-3:
                continue
            g = np.array(iou_gradient(a, b))
            f = self.fd(a, b)
            npt.assert_allclose(g, f, rtol=1e-4, atol=1e-7)
            checked += 1


class TestEncodeDecode:
    def test_identity(self):
        a = Box(10, 20, 5, 8)
        d = encode(a, a)
        assert (d.dx, d.dy, d.dw, d.dh) == (0, 0, 0, 0)
        out = decode(a, d)
        assert (out.cx, out.cy, out.w, out.h) == (a.cx, a.cy, a.w, a.h)

    def test_hand_example(self):
        anchor = Box(64, 64, 32, 32)
        target = Box(72, 64, 64, 32)
        d = encode(anchor, target)
        npt.assert_allclose([d.dx, d.dy, d.dw, d.dh], [0.25, 0, np.log(2), 0])
        out = decode(anchor, d)
        npt.assert_allclose([out.cx, out.cy, out.w, out.h], [72, 64, 64, 32])

    def test_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            anchor, target = random_box(rng), random_box(rng)
            out = decode(anchor, encode(anchor, target))
            npt.assert_allclose(
                [out.cx, out.cy, out.w, out.h],
                [target.cx, target.cy, target.w, target.h],
                atol=1e-9,
            )

    def test_round_trip_deltas(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            anchor = random_box(rng)
            d = RegressionDelta(*rng.uniform(-2, 2, size=2), *rng.uniform(-3.9, 3.9, size=2))
            e = encode(anchor, decode(anchor, d))
            npt.assert_allclose([e.dx, e.dy, e.dw, e.dh], [d.dx, d.dy, d.dw, d.dh], atol=1e-9)

    def test_decode_clamps_extreme_deltas(self):
        anchor = Box(10, 10, 4, 4)
        out = decode(anchor, RegressionDelta(0, 0, 100.0, -100.0))
        assert out.w == anchor.w * np.exp(4)
        assert out.h == anchor.h * np.exp(-4)


class TestClipBox:
    def test_inside_unchanged(self):
        b = Box(50, 50, 10, 10)
        out = clip_box(b, 100, 100)
        npt.assert_allclose([out.cx, out.cy, out.w, out.h], [50, 50, 10, 10])

    def test_partial_overlap(self):
        b = Box.from_corners(-10, -10, 20, 20)
        out = clip_box(b, 100, 100)
        npt.assert_allclose(out.corners(), [0, 0, 20, 20])

    def test_fully_outside(self):
        out = clip_box(Box(200, 50, 10, 10), 100, 100)
        assert out.w == 1.0 and out.h == 1.0
        assert out.x2 <= 100 and out.y2 <= 100

    def test_bad_image_size(self):
        with pytest.raises(ValueError):
            clip_box(Box(1, 1, 1, 1), 0, 10)
