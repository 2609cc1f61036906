import io

import numpy as np
import numpy.testing as npt
import pytest

from igtrack import data as D
from igtrack.net import ParamStore
from igtrack.train import TrainConfig, clip_gradients, pair_motion_state, train


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("train") / "data"
    D.gen_synthetic(root, n_sequences=2, n_frames=6, seed=5)
    return D.Dataset(root)


class TestConfig:
    def test_bad_mode(self):
        with pytest.raises(ValueError):
            TrainConfig(mode="fast")


class TestClipGradients:
    def test_large_norm_scaled(self):
        g = ParamStore({"a": np.array([3.0, 4.0], dtype=np.float32)})  # norm 5
        clip_gradients(g, max_norm=1.0)
        npt.assert_allclose(g["a"], [0.6, 0.8], atol=1e-6)
        assert g["a"].dtype == np.float32

    def test_small_norm_untouched(self):
        g = ParamStore({"a": np.array([0.3, 0.4])})
        clip_gradients(g, max_norm=1.0)
        npt.assert_array_equal(g["a"], [0.3, 0.4])

    def test_global_norm_across_parameters(self):
        g = ParamStore({"a": np.array([3.0]), "b": np.array([4.0])})
        clip_gradients(g, max_norm=1.0)
        total = float(g["a"][0] ** 2 + g["b"][0] ** 2)
        assert total == pytest.approx(1.0)


class TestPairMotionState:
    def test_gap_zero_has_zero_velocity(self, dataset):
        pair = D.make_pair(dataset.sequences[0], 2, 2)
        state = pair_motion_state(pair)
        assert state.velocity == (0.0, 0.0)

    def test_velocity_is_center_displacement(self, dataset):
        pair = D.make_pair(dataset.sequences[0], 1, 3)
        state = pair_motion_state(pair)
        expect = (
            pair.gt_in_search.cx - pair.prev_in_search.cx,
            pair.gt_in_search.cy - pair.prev_in_search.cy,
        )
        npt.assert_allclose(state.velocity, expect)
        assert state.prev_box is pair.prev_in_search


class TestTrain:
    def short_cfg(self, mode, seed=0):
        return TrainConfig(
            mode=mode, epochs=2, steps_per_epoch=1, batch_size=2, seed=seed
        )

    def test_bit_exact_reruns(self, dataset):
        outs = [train(dataset, self.short_cfg("ig")) for _ in range(2)]
        for name, arr in outs[0].items():
            npt.assert_array_equal(arr, outs[1][name], err_msg=name)

    def test_seed_changes_result(self, dataset):
        a = train(dataset, self.short_cfg("ig", seed=0))
        b = train(dataset, self.short_cfg("ig", seed=1))
        assert not np.array_equal(a["conv0.w"], b["conv0.w"])

    def test_base_mode_leaves_motion_block_untrained(self, dataset):
        params = train(dataset, self.short_cfg("base"))
        npt.assert_array_equal(params["motion.w"], 0.0)
        npt.assert_array_equal(params["motion.b"], 0.0)

    def test_log_format_and_parameters_move(self, dataset):
        log = io.StringIO()
        cfg = self.short_cfg("ig")
        after = train(dataset, cfg, log_file=log)
        lines = log.getvalue().strip().split("\n")
        assert len(lines) == 2  # 2 epochs x 1 step
        for line in lines:
            fields = line.split()
            assert len(fields) == 7
            epoch, step = int(fields[0]), int(fields[1])
            assert step == 0 and epoch in (0, 1)
            for v in fields[2:]:
                assert np.isfinite(float(v))
        from igtrack.net import NetConfig, init_params

        before = init_params(NetConfig(), cfg.seed)
        assert not np.array_equal(before["conv0.w"], after["conv0.w"])

    def test_base_mode_log_zero_iou_component(self, dataset):
        log = io.StringIO()
        train(dataset, self.short_cfg("base"), log_file=log)
        assert all(float(l.split()[4]) == 0.0 for l in log.getvalue().strip().split("\n"))
