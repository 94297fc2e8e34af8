import numpy as np
import pytest

from labelloop.corpus import LabelSet, compute_stats
from labelloop.errors import ValidationError
from labelloop import fsl
from labelloop.simulate import (
    Dataset,
    ExperimentPlan,
    LearningCurve,
    SynthSpec,
    aggregate,
    curve_to_rows,
    derive_seed,
    macro_f1,
    run_plan,
    run_trial,
    synth_dataset,
)


@pytest.fixture(scope="module")
def small_dataset():
    return synth_dataset(SynthSpec(clusters=4, dim=16, labels=2, size=400,
                                   test_size=150, noise=0.3, seed=7), name="small")


class TestSynthDataset:
    def test_train_test_disjoint_by_id(self):
        ds = synth_dataset(SynthSpec(size=200, test_size=100, seed=1))
        assert not {i.id for i in ds.train} & {i.id for i in ds.test}

    def test_skew_raises_uniformness(self):
        ds = synth_dataset(SynthSpec(labels=5, clusters=5, size=2000, test_size=500,
                                     skew=2.0, seed=2))
        stats = compute_stats(ds.train, ds.label_set)
        assert stats.uniformness > 0.5

    def test_lr_separable_with_low_noise(self):
        ds = synth_dataset(SynthSpec(clusters=2, dim=16, labels=2, size=500, test_size=200,
                                     noise=0.1, seed=3), name="easy")
        plan = ExperimentPlan(name="easy-lr", model_kind="lr", strategy="random",
                              budget=64, trials=1, seed=1)
        curve = run_trial(ds, plan, 0)
        assert curve.f1_values[-1] > 0.95

    def test_infeasible_spec_rejected(self):
        with pytest.raises(ValidationError):
            SynthSpec(clusters=2, labels=3)


class TestMacroF1:
    def test_perfect(self):
        ls = LabelSet.from_names(["a", "b"])
        assert macro_f1(["a", "b", "a"], ["a", "b", "a"], ls) == 1.0

    def test_mismatched_lengths_rejected(self):
        ls = LabelSet.from_names(["a", "b"])
        with pytest.raises(ValidationError):
            macro_f1(["a"], ["a", "b"], ls)

    def test_majority_baseline_one_third(self):
        ls = LabelSet.from_names(["a", "b"])
        assert macro_f1(["a", "a", "b", "b"], ["a", "a", "a", "a"], ls) == pytest.approx(1 / 3)


class TestRunTrial:
    def test_grid_advances_by_batch_k(self, small_dataset):
        plan = ExperimentPlan(name="t", strategy="random", budget=48, trials=1, seed=3)
        curve = run_trial(small_dataset, plan, 0)
        assert curve.n_train_grid == [0, 16, 32, 48]

    def test_reproducible_bitwise(self, small_dataset):
        plan = ExperimentPlan(name="t", strategy="margin", budget=48, trials=1, seed=4)
        a = run_trial(small_dataset, plan, 0)
        b = run_trial(small_dataset, plan, 0)
        assert a.f1_values == b.f1_values
        for pa, pb in zip(a.points, b.points):
            np.testing.assert_array_equal(pa.snapshot.posteriors_T, pb.snapshot.posteriors_T)
            for sig in ("cv_f1", "neg_entropy", "max_prob", "margin", "agreement", "neg_kl"):
                assert getattr(pa.snapshot, sig) == getattr(pb.snapshot, sig)

    def test_no_instance_annotated_twice_and_sizes_exact(self, small_dataset):
        plan = ExperimentPlan(name="t", strategy="entropy", budget=64, trials=1, seed=5)
        curve = run_trial(small_dataset, plan, 0, collect_traces=True)
        seen = []
        for trace in curve.selection_traces:
            seen.extend(trace.candidate_ids if trace.strategy == "random" else [])
        labeled_counts = [p.n_train for p in curve.points]
        assert labeled_counts == [0, 16, 32, 48, 64]

    def test_test_split_never_selected(self, small_dataset):
        plan = ExperimentPlan(name="t", strategy="random", budget=32, trials=1, seed=6)
        curve = run_trial(small_dataset, plan, 0, collect_traces=True)
        test_ids = {i.id for i in small_dataset.test}
        for trace in curve.selection_traces:
            assert not set(trace.candidate_ids) & test_ids

    def test_pool_exhaustion_truncates_with_flag(self):
        ds = synth_dataset(SynthSpec(clusters=2, dim=8, labels=2, size=40, test_size=40,
                                     seed=8), name="tiny")
        plan = ExperimentPlan(name="t", strategy="random", budget=64, trials=1, seed=7)
        curve = run_trial(ds, plan, 0)
        assert curve.truncated
        assert curve.points[-1].n_train == 40

    def test_random_improves_over_zero_shot_on_separable(self):
        ds = synth_dataset(SynthSpec(clusters=2, dim=16, labels=2, size=600, test_size=300,
                                     noise=0.25, anchor_noise=0.8, seed=9), name="sep")
        plan = ExperimentPlan(name="t", strategy="random", budget=128, trials=1, seed=8)
        curve = run_trial(ds, plan, 0)
        assert curve.f1_values[-1] > curve.f1_values[0]

    def test_unlabeled_pool_required(self):
        ds = synth_dataset(SynthSpec(size=100, test_size=50, seed=10))
        unlabeled = Dataset(name="x", train=[i.__class__(i.id, i.text, None) for i in ds.train],
                            test=ds.test, label_set=ds.label_set, encoder=ds.encoder)
        plan = ExperimentPlan(name="t", budget=16, trials=1)
        with pytest.raises(ValidationError):
            run_trial(unlabeled, plan, 0)


class TestAggregate:
    def make_curve(self, plan, trial, values):
        from labelloop.perfpred import IterationSnapshot
        from labelloop.simulate import CurvePoint

        points = [
            CurvePoint(n_train=16 * i, test_f1=v,
                       snapshot=IterationSnapshot(iter=i, n_train=16 * i, neg_entropy=0,
                                                  max_prob=0.5, margin=0, agreement=1,
                                                  neg_kl=0))
            for i, v in enumerate(values)
        ]
        return LearningCurve(plan=plan, dataset="d", strategy="random", model_kind="lt",
                             trial=trial, seed=trial, points=points)

    def test_identical_curves_zero_std(self):
        curves = [self.make_curve("p", t, [0.1, 0.5]) for t in range(10)]
        rows = aggregate(curves)
        assert all(r.std_f1 == pytest.approx(0.0, abs=1e-12) for r in rows)

    def test_two_curve_arithmetic(self):
        curves = [self.make_curve("p", 0, [0.4]), self.make_curve("p", 1, [0.6])]
        rows = aggregate(curves)
        assert rows[0].mean_f1 == pytest.approx(0.5)
        assert rows[0].std_f1 == pytest.approx(np.std([0.4, 0.6], ddof=1))

    def test_order_invariant(self):
        curves = [self.make_curve("p", t, [0.1 * t, 0.2 * t]) for t in range(4)]
        forward, backward = aggregate(curves), aggregate(curves[::-1])
        for a, b in zip(forward, backward):
            assert a.plan == b.plan and a.n_train == b.n_train
            assert a.mean_f1 == pytest.approx(b.mean_f1, abs=1e-12)
            assert a.std_f1 == pytest.approx(b.std_f1, abs=1e-12)

    def test_misaligned_rejected(self):
        curves = [self.make_curve("p", 0, [0.4, 0.5]), self.make_curve("p", 1, [0.6])]
        with pytest.raises(ValidationError):
            aggregate(curves)


class TestCurveRows:
    def test_rows_match_points(self, small_dataset):
        plan = ExperimentPlan(name="rows", strategy="margin", budget=32, trials=1, seed=11)
        curve = run_trial(small_dataset, plan, 0)
        rows = curve_to_rows(curve, n_labels=2)
        assert [r.n_train for r in rows] == curve.n_train_grid
        assert [r.test_f1 for r in rows] == curve.f1_values
        assert all(r.strategy == "margin" and r.dataset == "small" for r in rows)


class TestDeriveSeed:
    def test_stable_and_distinct(self):
        assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
        assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
        assert derive_seed(1, "a") != derive_seed(2, "a")
