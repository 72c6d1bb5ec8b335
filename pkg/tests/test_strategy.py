from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

import oracles
from smartaug.raster import COLOR_NAMES, GEOMETRIC_NAMES, RAND_NAMES
from smartaug.strategy import (
    ConfigError,
    EpochClock,
    StrategyConfig,
    WeightTable,
    annealed_probability,
    default_weight_table,
    plan_rng,
    sample_default_plan,
    sample_plan,
    sample_rand_plan,
    sample_smart_plan,
    sample_smartsampling_plan,
    sample_trivial_plan,
    weighted_draw,
)

ALPHA = 0.001


class TestSmart:
    def test_p_zero_never_augments(self, rng):
        cfg = StrategyConfig.smart(3, 2, 10, 10, 0.0)
        assert not any(sample_smart_plan(cfg, rng).augment for _ in range(2000))

    def test_empty_counts_give_identity(self, rng):
        plan = sample_smart_plan(StrategyConfig.smart(0, 0, 10, 10, 1.0), rng)
        assert plan.augment and plan.steps == ()

    def test_full_lists_use_every_op_once(self, rng):
        cfg = StrategyConfig.smart(7, 5, 12, 20, 1.0)
        for _ in range(50):
            plan = sample_smart_plan(cfg, rng)
            names = [s.op for s in plan.steps]
            assert sorted(names[:7]) == sorted(COLOR_NAMES)
            assert sorted(names[7:]) == sorted(GEOMETRIC_NAMES)
            assert all(s.magnitude == 12 for s in plan.steps[:7])
            assert all(s.magnitude == 20 for s in plan.steps[7:])

    @settings(max_examples=100, deadline=None)
    @given(nc=st.integers(0, 7), ng=st.integers(0, 5), seed=st.integers(0, 2**32))
    def test_no_repeats_within_group(self, nc, ng, seed):
        plan = sample_smart_plan(StrategyConfig.smart(nc, ng, 5, 5, 1.0), plan_rng(seed))
        color = [s.op for s in plan.steps if s.op in COLOR_NAMES]
        geo = [s.op for s in plan.steps if s.op in GEOMETRIC_NAMES]
        assert len(color) == len(set(color)) == nc
        assert len(geo) == len(set(geo)) == ng
        assert [s.op for s in plan.steps] == color + geo

    @pytest.mark.parametrize("bad", [dict(n_color=8), dict(n_geometric=6), dict(p=1.5),
                                     dict(m_color=31)])
    def test_validation(self, bad):
        args = dict(n_color=1, n_geometric=1, m_color=1, m_geometric=1, p=0.5)
        args.update(bad)
        with pytest.raises(ConfigError):
            StrategyConfig("smart", **args)


class TestSmartSampling:
    def test_endpoints(self, rng):
        w = default_weight_table()
        first, last = EpochClock(0, 100), EpochClock(99, 100)
        assert annealed_probability(first) == 0 and annealed_probability(last) == 1
        assert not any(sample_smartsampling_plan(w, first, rng).augment for _ in range(1000))
        assert all(sample_smartsampling_plan(w, last, rng).augment for _ in range(1000))

    def test_single_epoch_always_augments(self):
        assert annealed_probability(EpochClock(0, 1)) == 1

    def test_two_positive_ops(self, rng):
        table = WeightTable.from_mapping({"Rotate": 1, "ShearX": 1, "Color": 0, "Equalize": 0})
        for _ in range(200):
            plan = sample_smartsampling_plan(table, EpochClock(4, 5), rng)
            assert {s.op for s in plan.steps} == {"Rotate", "ShearX"}

    def test_shared_magnitude_in_range(self, rng):
        mags = set()
        for _ in range(3000):
            plan = sample_smartsampling_plan(default_weight_table(), EpochClock(0, 1), rng)
            assert len(plan.steps) == 2 and plan.steps[0].magnitude == plan.steps[1].magnitude
            mags.add(plan.steps[0].magnitude)
        assert mags == set(range(5, 31))

    def test_too_few_positive_weights(self):
        with pytest.raises(ConfigError):
            WeightTable.from_mapping({"Rotate": 1, "ShearX": 0})

    def test_no_anneal_means_p_one(self, rng):
        cfg = StrategyConfig.smartsampling(anneal=False)
        assert all(sample_plan(cfg, rng, EpochClock(0, 50)).augment for _ in range(200))

    @pytest.mark.parametrize("total", [2, 3, 7, 50])
    def test_linear_schedule(self, total):
        ps = [annealed_probability(EpochClock(e, total)) for e in range(total)]
        assert all(b - a == Fraction(1, total - 1) for a, b in zip(ps, ps[1:]))

    def test_clock_validation(self):
        with pytest.raises(ConfigError):
            EpochClock(5, 5)
        with pytest.raises(ConfigError):
            EpochClock(0, 0)


class TestWeightTable:
    def test_default_normalizes(self):
        assert default_weight_table().probabilities().sum() == pytest.approx(1.0)

    def test_rotate_dominates(self):
        table = default_weight_table()
        assert all(table.weight("Rotate") > table.weight(n) for n in table.names if n != "Rotate")

    def test_user_table_first_draw(self, rng):
        table = WeightTable.from_mapping({"Rotate": 2, "ShearX": 1})
        exact = oracles.ordered_pair_distribution({"Rotate": 2, "ShearX": 1})
        assert exact[("Rotate", "ShearX")] == Fraction(2, 3)
        n = 20000
        first = sum(weighted_draw(table.probabilities(), 1, rng)[0] == 0 for _ in range(n))
        assert abs(first / n - 2 / 3) < 4 * np.sqrt(2 / 9 / n)

    def test_round_trip_file(self, tmp_path):
        table = default_weight_table()
        table.dump(tmp_path / "w.json")
        assert WeightTable.load(tmp_path / "w.json") == table


class TestRand:
    def test_forced_identity(self, rng):
        plan = sample_rand_plan(StrategyConfig.rand(1, 20, ops=["Identity"]), rng)
        assert [s.op for s in plan.steps] == ["Identity"]

    def test_three_steps_at_magnitude(self, rng):
        plan = sample_rand_plan(StrategyConfig.rand(3, 15), rng)
        assert plan.augment and len(plan.steps) == 3
        assert all(s.magnitude == 15 for s in plan.steps)

    def test_repeats_allowed(self, rng):
        cfg = StrategyConfig.rand(13, 5)
        assert any(len({s.op for s in sample_rand_plan(cfg, rng).steps}) < 13 for _ in range(20))

    def test_n_bounded_by_list(self):
        with pytest.raises(ConfigError):
            StrategyConfig.rand(14, 5)
        with pytest.raises(ConfigError):
            StrategyConfig.rand(0, 5)

    def test_uniform_ops(self, rng):
        counts = Counter(sample_rand_plan(StrategyConfig.rand(1, 9), rng).steps[0].op
                         for _ in range(10000))
        assert chisquare([counts[n] for n in RAND_NAMES]).pvalue > ALPHA


class TestTrivial:
    def test_identity_draw(self):
        plan = sample_trivial_plan(np.random.default_rng(0), ops=("Identity",))
        assert [s.op for s in plan.steps] == ["Identity"]

    def test_uniformity_and_magnitude_mean(self, rng):
        plans = [sample_trivial_plan(rng) for _ in range(10000)]
        counts = Counter(p.steps[0].op for p in plans)
        assert chisquare([counts[n] for n in RAND_NAMES]).pvalue > ALPHA
        mean = np.mean([p.steps[0].magnitude for p in plans])
        assert abs(mean - 15.0) < 0.5


class TestDefault:
    def test_identity_plan_draws(self, rng):
        from smartaug.raster import AugPlan, Step, apply_plan

        img = rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)
        mask = rng.integers(0, 3, (6, 6), dtype=np.uint8)
        plan = AugPlan(True, (Step("Rotate", value=0.0), Step("Scale", value=1.0)))
        out, out_mask = apply_plan(plan, img, mask)
        assert np.array_equal(out, img) and np.array_equal(out_mask, mask)

    def test_ranges_and_flip_rate(self, rng):
        plans = [sample_default_plan(rng) for _ in range(10000)]
        flips = sum(p.steps[0].op == "FlipX" for p in plans)
        assert abs(flips / 10000 - 0.5) <= 0.015
        for p in plans:
            steps = {s.op: s.value for s in p.steps}
            assert -45 <= steps["Rotate"] <= 45
            assert 0.65 <= steps["Scale"] <= 1.35


class TestConfigSerialization:
    @pytest.mark.parametrize("cfg", [
        StrategyConfig.smart(3, 2, 10, 25, 0.375, seed=7),
        StrategyConfig.rand(5, 12),
        StrategyConfig.rand(2, 3, ops=["Identity", "Rotate"], seed=2**64 - 1),
        StrategyConfig.smartsampling(),
        StrategyConfig.smartsampling(WeightTable.uniform(), anneal=False),
        StrategyConfig("default", seed=3),
        StrategyConfig("trivial"),
    ])
    def test_lossless(self, cfg):
        text = cfg.to_json()
        again = StrategyConfig.from_json(text)
        assert again == cfg and again.to_json() == text

    def test_shorthand_weights(self):
        cfg = StrategyConfig.from_dict({"kind": "smartsampling", "weights": "uniform"})
        assert cfg.weights == WeightTable.uniform()

    @pytest.mark.parametrize("doc", [
        {"kind": "nope"},
        {"kind": "smart", "N_C": 1},
        {"kind": "rand", "N": 1, "M": 1, "P": 0.5},
        {"kind": "smart", "N_C": 1, "N_G": 1, "M_C": 1, "M_G": 1, "P": "high"},
    ])
    def test_rejects(self, doc):
        with pytest.raises(ConfigError):
            StrategyConfig.from_dict(doc)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**63), epoch=st.integers(0, 9), index=st.integers(0, 1000),
       kind=st.sampled_from(["default", "trivial", "rand", "smart", "smartsampling"]))
def test_seed_determinism(seed, epoch, index, kind):
    cfg = {
        "default": StrategyConfig("default"),
        "trivial": StrategyConfig("trivial"),
        "rand": StrategyConfig.rand(4, 11),
        "smart": StrategyConfig.smart(3, 2, 9, 17, 0.6),
        "smartsampling": StrategyConfig.smartsampling(),
    }[kind]
    clock = EpochClock(epoch, 10)
    a = sample_plan(cfg, plan_rng(seed, epoch, index), clock)
    b = sample_plan(cfg, plan_rng(seed, epoch, index), clock)
    assert a == b
