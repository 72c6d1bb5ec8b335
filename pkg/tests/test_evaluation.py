import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from smartaug.dataset import synthesize
from smartaug.evaluation import (
    EvaluatorError,
    ExternalEvaluator,
    ProxyEvaluator,
    class_weights,
    confusion_matrix,
    evaluate_external,
    miou,
    pixel_features,
)
from smartaug.raster import COLOR_NAMES, IGNORE_INDEX
from smartaug.search import SearchSpace, random_search
from smartaug.strategy import StrategyConfig

STUBS = Path(__file__).parent / "stubs"


def stub(name):
    return [sys.executable, str(STUBS / name)]


class TestMiou:
    def test_perfect(self, rng):
        gt = rng.integers(0, 4, (5, 7), dtype=np.uint8)
        assert miou([gt], [gt], 4).miou == 1.0

    def test_hand_case(self):
        gt = np.array([[0, 0, 1, 1]], dtype=np.uint8)
        pred = np.array([[0, 1, 1, 1]], dtype=np.uint8)
        res = miou([pred], [gt], 2)
        assert res.per_class_iou == [0.5, pytest.approx(2 / 3, abs=1e-15)]
        assert res.miou == pytest.approx(float(Fraction(7, 12)), abs=1e-15)

    def test_all_ignore(self):
        gt = np.full((3, 3), IGNORE_INDEX, dtype=np.uint8)
        with pytest.raises(ValueError, match="no scored pixels"):
            miou([gt], [gt], 2)

    def test_ignore_excluded(self):
        gt = np.array([[0, IGNORE_INDEX]], dtype=np.uint8)
        pred = np.array([[0, 1]], dtype=np.uint8)
        res = miou([pred], [gt], 2)
        assert res.miou == 1.0 and res.pixels_scored == 1

    def test_dataset_level_aggregation(self):
        # per-image averaging would give (1 + 0.5) / 2; pooling counts does not
        a = np.array([[0, 0, 0, 0]], dtype=np.uint8)
        b_gt = np.array([[1, 1]], dtype=np.uint8)
        b_pred = np.array([[1, 0]], dtype=np.uint8)
        res = miou([a, b_pred], [a, b_gt], 2)
        assert res.per_class_iou == [pytest.approx(4 / 5), 0.5]

    def test_bad_label(self):
        gt = np.array([[0, 3]], dtype=np.uint8)
        with pytest.raises(ValueError):
            confusion_matrix([gt], [gt], 2)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32), k=st.integers(2, 5), n=st.integers(1, 3))
    def test_matches_set_oracle(self, seed, k, n):
        rng = np.random.default_rng(seed)
        gts, preds = [], []
        for _ in range(n):
            shape = tuple(rng.integers(1, 7, size=2))
            g = rng.integers(0, k, shape).astype(np.uint8)
            g[rng.random(shape) < 0.2] = IGNORE_INDEX
            g.flat[0] = 0
            gts.append(g)
            preds.append(rng.integers(0, k, shape).astype(np.uint8))
        expected = oracles.miou_sets(preds, gts, k, IGNORE_INDEX)
        assert abs(miou(preds, gts, k).miou - float(expected)) <= 1e-12


class TestClassWeights:
    def test_equal(self):
        m = np.array([[0, 1], [1, 0]], dtype=np.uint8)
        assert class_weights([m], 2).tolist() == [1.0, 1.0]

    def test_ninety_ten(self):
        m = np.zeros((10, 10), dtype=np.uint8)
        m[0] = 1
        w = class_weights([m], 2)
        assert w[0] == pytest.approx(100 / 180) and w[1] == pytest.approx(5.0)

    def test_absent_class(self):
        m = np.array([[0, 0, 2, IGNORE_INDEX]], dtype=np.uint8)
        w = class_weights([m], 3)
        assert w[1] == 0.0
        assert w[0] == pytest.approx(3 / (2 * 2)) and w[2] == pytest.approx(3 / 2)

    @settings(max_examples=40, deadline=None)
    @given(counts=st.lists(st.integers(1, 50), min_size=2, max_size=6))
    def test_balance(self, counts):
        m = np.concatenate([np.full(c, i, dtype=np.uint8) for i, c in enumerate(counts)])
        w = class_weights([m[None, :]], len(counts))
        # each present class carries the same total weight
        totals = w * np.array(counts)
        assert np.allclose(totals, totals[0])


class TestExternal:
    cfg = StrategyConfig.smart(1, 1, 5, 5, 0.25)

    def test_echo(self):
        assert evaluate_external(self.cfg, stub("echo_eval.py")) == 0.5

    def test_reads_config(self):
        assert ExternalEvaluator(stub("p_eval.py"))(self.cfg, 3) == 0.25

    def test_string_command(self):
        cmd = f"{sys.executable} {STUBS / 'echo_eval.py'}"
        assert ExternalEvaluator(cmd)(self.cfg, 0) == 0.5

    def test_nonzero_exit_has_diagnostics(self):
        with pytest.raises(EvaluatorError) as info:
            ExternalEvaluator(stub("fail_eval.py"))(self.cfg, 0)
        assert "status 1" in str(info.value) and "simulated crash" in info.value.diagnostics

    def test_timeout(self):
        with pytest.raises(EvaluatorError, match="timed out"):
            ExternalEvaluator(stub("slow_eval.py"), timeout=0.5)(self.cfg, 0)

    def test_out_of_range(self):
        with pytest.raises(EvaluatorError, match="miou"):
            ExternalEvaluator(stub("bad_eval.py"))(self.cfg, 0)

    def test_missing_program(self):
        with pytest.raises(EvaluatorError):
            ExternalEvaluator(["/nonexistent/evaluator"])(self.cfg, 0)

    def test_failures_do_not_stop_search(self):
        recs = random_search(SearchSpace.smart(), ExternalEvaluator(stub("fail_eval.py")),
                             budget=3)
        assert [r.status for r in recs] == ["failed"] * 3
        assert all("simulated crash" in r.error for r in recs)

    def test_loopback_scores(self):
        recs = random_search(SearchSpace.smart(), ExternalEvaluator(stub("p_eval.py")),
                             budget=5, seed=1)
        assert all(r.score == r.config.p for r in recs)


@pytest.fixture(scope="module")
def shapes():
    return synthesize(n_images=20, canvas=(24, 24), seed=3)


class TestProxy:
    def test_features(self, rng):
        img = rng.integers(0, 256, (4, 5, 3), dtype=np.uint8)
        f = pixel_features(img)
        assert f.shape == (20, 9)
        assert np.allclose(f[:, -1], 1.0)
        assert np.allclose(f[:, :3], img.reshape(-1, 3) / 255)

    def test_red_channel_separates(self, shapes):
        for image, mask in shapes.train:
            assert np.array_equal(mask > 0, image[..., 0] > 128)

    def test_deterministic(self, shapes):
        ev = ProxyEvaluator(shapes)
        cfg = StrategyConfig.smart(2, 2, 10, 10, 0.7)
        assert ev(cfg, 5) == ev(cfg, 5)

    @pytest.mark.parametrize("cfg", [
        StrategyConfig.smart(0, 0, 0, 0, 0.0),
        StrategyConfig.smart(1, 0, 3, 0, 0.5),
        StrategyConfig.smart(2, 0, 3, 0, 1.0),
    ])
    def test_color_light_scores_high(self, shapes, cfg):
        assert ProxyEvaluator(shapes)(cfg, 0) >= 0.9

    @pytest.mark.slow
    def test_heavy_color_hurts(self, shapes):
        ev = ProxyEvaluator(shapes, epochs=2, steps_per_epoch=25)
        heavy = StrategyConfig.smart(len(COLOR_NAMES), 0, 30, 0, 1.0)
        none = StrategyConfig.smart(0, 0, 0, 0, 0.0)
        seeds = range(20)
        assert np.mean([ev(heavy, s) for s in seeds]) < np.mean([ev(none, s) for s in seeds])

    def test_empty_val(self, shapes):
        from smartaug.dataset import SegDataset

        ds = SegDataset(shapes.train, [], k=2)
        with pytest.raises(ValueError):
            ProxyEvaluator(ds)(StrategyConfig.smart(0, 0, 0, 0, 0.0), 0)
