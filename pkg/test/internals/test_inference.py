"""Tests for ICM, model decomposition and their combination."""

import itertools
import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

sys.path.insert(0, str(Path(__file__).parent.parent))
from helpers import bands, block_map, chain_map, exhaustive_best

from bayes_seg.bn_model import Labeling, LayeredNetwork, PredicateConfig, global_score
from bayes_seg.class_model import ClassModel, kmeans_centers
from bayes_seg.inference import (
    IcmConfig,
    InferenceTrace,
    SweepRecord,
    combined,
    decompose,
    icm,
    infer,
    init_threshold,
)
from bayes_seg.superpixel import SuperpixelMap, oversegment
from bayes_seg.utils import ParameterError

GRID = [10, 60, 110, 160, 210]
CHAIN_MODEL = ClassModel.uniform([40.0, 120.0, 200.0], 50.0)


def chain_instances():
    return [list(means) for means in itertools.product(GRID, repeat=3)]


class TestIcmConfig:
    """Tests for the ICM stopping rule."""

    def test_change_threshold_rounds_up(self):
        assert IcmConfig(stop_fraction=0.1).change_threshold(25) == 3
        assert IcmConfig(stop_fraction=0.1).change_threshold(20) == 2

    @pytest.mark.parametrize("kwargs", [{"stop_fraction": 0.0}, {"stop_fraction": 1.5}, {"max_sweeps": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            IcmConfig(**kwargs)


class TestIcm:
    """Tests for icm."""

    def test_global_score_never_decreases_per_update(self):
        for seed in range(50):
            img, _ = bands(64, [40, 120, 200], noise=10.0, seed=seed)
            sp = oversegment(img, 40)
            model = kmeans_centers(sp.means, 3, seed)
            cfg = PredicateConfig()
            network = LayeredNetwork(sp, model, cfg)
            rng = np.random.default_rng(seed)
            init = Labeling.of(rng.integers(1, 4, size=sp.n))
            scores = [network.global_log_score(init.labels)]

            def record(i, c, labels, network=network, scores=scores):
                scores.append(network.global_log_score(labels))

            icm_cfg = IcmConfig(stop_fraction=0.01, max_sweeps=10)
            _, trace = icm(sp, init, model, cfg, icm_cfg, on_update=record)
            assert all(b >= a - 1e-9 for a, b in itertools.pairwise(scores))
            assert 1 <= trace.icm_sweeps <= icm_cfg.max_sweeps

    def test_stops_on_small_change_count(self):
        sp = chain_map([40, 120, 200])
        init = init_threshold(sp, CHAIN_MODEL)
        labels, trace = icm(sp, init, CHAIN_MODEL, PredicateConfig())
        assert trace.icm_sweeps == 1
        assert trace.sweeps[0].changed == 0
        assert labels.labels.tolist() == [1, 2, 3]

    @pytest.mark.parametrize(("wrong", "sweeps"), [(25, 2), (15, 1)])
    def test_stop_threshold_at_two_hundred_superpixels(self, wrong, sweeps):
        # threshold ceil(0.10 * 200) = 20; continue only on more changes than that
        sp = chain_map([40, 200] * 100, cell=1)
        model = ClassModel.uniform([40.0, 200.0], 50.0)
        init = init_threshold(sp, model)
        init.labels[:wrong] = 3 - init.labels[:wrong]

        labels, trace = icm(sp, init, model, PredicateConfig(), IcmConfig(stop_fraction=0.10), part="data")
        assert [s.changed for s in trace.sweeps] == [wrong, 0][:sweeps]
        assert trace.icm_sweeps == sweeps
        assert labels.labels.tolist() == [1, 2] * 100

    def test_respects_max_sweeps(self):
        img, _ = bands(32, [40, 200], noise=30.0, seed=1)
        sp = oversegment(img, 60)
        model = ClassModel.uniform([40.0, 200.0], 50.0)
        init = Labeling.of(np.ones(sp.n, dtype=np.int64))
        _, trace = icm(sp, init, model, PredicateConfig(), IcmConfig(stop_fraction=1e-9, max_sweeps=2))
        assert trace.icm_sweeps <= 2

    def test_single_class_keeps_all_ones(self):
        sp = chain_map([5, 90, 250])
        model = ClassModel.uniform([100.0], 50.0)
        for algorithm in ("icm", "decomp", "combined"):
            labels, _ = infer(algorithm, sp, model, PredicateConfig())
            assert labels.labels.tolist() == [1, 1, 1]

    def test_rejects_wrong_init(self):
        sp = chain_map([5, 90])
        with pytest.raises(ParameterError):
            icm(sp, Labeling.of([1, 4]), CHAIN_MODEL, PredicateConfig())


class TestDecompose:
    """Tests for decompose."""

    def test_fixes_every_superpixel_once(self):
        sp = block_map([[10, 100, 210], [20, 120, 190], [15, 115, 200]])
        labels, trace = decompose(sp, CHAIN_MODEL, PredicateConfig())
        assert sorted(trace.fix_order) == list(range(sp.n))
        assert labels.fixed.all()
        assert len(trace.sweeps) == 1
        assert trace.sweeps[0].phase == "decomp"

    def test_first_fixed_is_most_confident(self):
        sp = chain_map([40, 118, 200])
        network = LayeredNetwork(sp, CHAIN_MODEL, PredicateConfig())
        provisional = init_threshold(sp, CHAIN_MODEL).labels.tolist()
        best = [network.best_class(i, provisional)[1] for i in range(sp.n)]
        _, trace = decompose(sp, CHAIN_MODEL, PredicateConfig())
        assert trace.fix_order[0] == int(np.argmax(best))

    def test_pair_fixes_the_more_typical_superpixel_first(self):
        sp = chain_map([40, 60])
        model = ClassModel.uniform([40.0, 200.0], 50.0)
        labels, trace = decompose(sp, model, PredicateConfig())
        assert trace.fix_order == [0, 1]
        assert labels.labels.tolist() == [1, 1]

    def test_isolated_superpixels_keep_threshold_labels(self):
        sp = SuperpixelMap(
            assignment=np.array([[0, 1]], dtype=np.int32),
            n=2,
            means=np.array([45.0, 170.0]),
            sizes=np.array([1, 1]),
            totals=np.array([45, 170]),
            adjacency=(frozenset(), frozenset()),
        )
        model = ClassModel.uniform([40.0, 200.0], 50.0)
        labels, _ = decompose(sp, model, PredicateConfig())
        assert labels.labels.tolist() == init_threshold(sp, model).labels.tolist() == [1, 2]

    def test_deterministic(self):
        sp = block_map([[10, 100, 210], [20, 120, 190]])
        a = decompose(sp, CHAIN_MODEL, PredicateConfig())[1]
        b = decompose(sp, CHAIN_MODEL, PredicateConfig())[1]
        assert a.fix_order == b.fix_order
        assert a.labels == b.labels


class TestCombined:
    """Tests for combined inference on exhaustively solvable chains."""

    def test_matches_exhaustive_on_most_chains(self):
        cfg = PredicateConfig()
        hits = 0
        instances = chain_instances()
        for means in instances:
            sp = chain_map(means)
            labels, _ = combined(sp, CHAIN_MODEL, cfg)
            score = global_score(labels, sp, CHAIN_MODEL, cfg)
            hits += score >= exhaustive_best(sp, CHAIN_MODEL, cfg) - 1e-9
        assert hits / len(instances) >= 0.9

    def test_never_worse_than_decomposition(self):
        cfg = PredicateConfig()
        for means in chain_instances():
            sp = chain_map(means)
            after = global_score(combined(sp, CHAIN_MODEL, cfg)[0], sp, CHAIN_MODEL, cfg)
            before = global_score(decompose(sp, CHAIN_MODEL, cfg)[0], sp, CHAIN_MODEL, cfg)
            assert after >= before - 1e-9

    def test_rarely_worse_than_icm_alone(self):
        cfg = PredicateConfig()
        instances = chain_instances()
        at_least = 0
        for means in instances:
            sp = chain_map(means)
            score_c = global_score(combined(sp, CHAIN_MODEL, cfg)[0], sp, CHAIN_MODEL, cfg)
            score_i = global_score(infer("icm", sp, CHAIN_MODEL, cfg)[0], sp, CHAIN_MODEL, cfg)
            at_least += score_c >= score_i - 1e-9
        # combined starts ICM from the decomposition, not from the threshold start
        assert at_least >= len(instances) - 1

    def test_trace_concatenates_phases(self):
        sp = chain_map([40, 118, 200, 45])
        _, trace = combined(sp, CHAIN_MODEL, PredicateConfig())
        assert trace.algorithm == "combined"
        assert trace.sweeps[0].phase == "decomp"
        assert all(s.phase == "icm" for s in trace.sweeps[1:])
        assert trace.icm_sweeps == len(trace.sweeps) - 1
        assert trace.final_log_score == trace.sweeps[-1].log_score


class TestTrace:
    """Tests for trace serialization."""

    def test_minus_infinity_serialized(self):
        trace = InferenceTrace(
            algorithm="icm", sweeps=[SweepRecord(phase="icm", changed=0, log_score=float("-inf"))]
        )
        assert "-Infinity" in trace.model_dump_json()

    def test_empty_trace_final_score(self):
        assert InferenceTrace(algorithm="decomp").final_log_score == float("-inf")
